use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dense layer stored row-major as `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Linear {
    fn uniform(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (inputs as f32).sqrt();
        Self {
            inputs,
            outputs,
            weight: (0..inputs * outputs).map(|_| rng.random_range(-bound..=bound)).collect(),
            bias: (0..outputs).map(|_| rng.random_range(-bound..=bound)).collect(),
        }
    }

    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn forward(&self, w: &[f64], x: &[f64], out: &mut [f64], relu: bool) {
        for o in 0..self.outputs {
            let row = &w[o * self.inputs..(o + 1) * self.inputs];
            let acc = self.bias[o] as f64 + dot(row, x);
            out[o] = if relu { acc.max(0.0) } else { acc };
        }
    }
}

/// Four independent partial sums so the loop vectorizes without reassociation.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ac, ar) = a.split_at(a.len() - a.len() % 4);
    let (bc, br) = b.split_at(ac.len());
    for (x, y) in ac.chunks_exact(4).zip(bc.chunks_exact(4)) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ar.iter().zip(br) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Two hidden ReLU layers mapping a positional feature to trajectory coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientNet {
    pub layers: [Linear; 3],
}

/// Gradient buffers matching [`CoefficientNet::layers`].
#[derive(Clone, Debug, PartialEq)]
pub struct NetGradients {
    pub weight: [Vec<f64>; 3],
    pub bias: [Vec<f64>; 3],
}

/// Activations retained by [`CoefficientNet::forward_retained`] for one input.
#[derive(Clone, Debug, PartialEq)]
pub struct NetActivations {
    pub input: Vec<f64>,
    pub hidden: [Vec<f64>; 2],
}

impl NetActivations {
    pub fn len(&self) -> usize {
        self.input.len() + self.hidden[0].len() + self.hidden[1].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// f64 copies of the weights, made once per batch.
pub(crate) struct NetView {
    w: [Vec<f64>; 3],
}

impl CoefficientNet {
    /// Hidden layers draw from `U(±1/√fan_in)`; the output layer starts at zero so
    /// the initial deformation is the identity.
    pub fn new(inputs: usize, hidden: usize, outputs: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            layers: [
                Linear::uniform(inputs, hidden, &mut rng),
                Linear::uniform(hidden, hidden, &mut rng),
                Linear::zeros(hidden, outputs),
            ],
        }
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn outputs(&self) -> usize {
        self.layers[2].outputs
    }

    pub fn zero_gradients(&self) -> NetGradients {
        NetGradients {
            weight: self.layers.clone().map(|l| vec![0.0; l.weight.len()]),
            bias: self.layers.clone().map(|l| vec![0.0; l.bias.len()]),
        }
    }

    pub(crate) fn view(&self) -> NetView {
        NetView {
            w: self.layers.clone().map(|l| l.weight.iter().map(|&v| v as f64).collect()),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_with(&self.view(), x, None)
    }

    pub fn forward_retained(&self, x: &[f64]) -> (Vec<f64>, NetActivations) {
        let mut acts = None;
        let out = self.forward_with(&self.view(), x, Some(&mut acts));
        (out, acts.expect("activations retained"))
    }

    pub(crate) fn forward_with(&self, view: &NetView, x: &[f64], retain: Option<&mut Option<NetActivations>>) -> Vec<f64> {
        let [l0, l1, l2] = &self.layers;
        let mut h0 = vec![0.0; l0.outputs];
        let mut h1 = vec![0.0; l1.outputs];
        let mut out = vec![0.0; l2.outputs];
        l0.forward(&view.w[0], x, &mut h0, true);
        l1.forward(&view.w[1], &h0, &mut h1, true);
        l2.forward(&view.w[2], &h1, &mut out, false);
        if let Some(slot) = retain {
            *slot = Some(NetActivations {
                input: x.to_vec(),
                hidden: [h0, h1],
            });
        }
        out
    }

    /// Accumulates parameter gradients and returns the gradient w.r.t. the input.
    pub fn backward(&self, acts: &NetActivations, grad_out: &[f64], grads: &mut NetGradients) -> Vec<f64> {
        self.backward_with(&self.view(), acts, grad_out, grads)
    }

    pub(crate) fn backward_with(
        &self,
        view: &NetView,
        acts: &NetActivations,
        grad_out: &[f64],
        grads: &mut NetGradients,
    ) -> Vec<f64> {
        let layer_inputs = [&acts.input, &acts.hidden[0], &acts.hidden[1]];
        let mut g = grad_out.to_vec();
        for l in (0..3).rev() {
            let layer = &self.layers[l];
            let x = layer_inputs[l];
            let mut gx = vec![0.0; layer.inputs];
            for o in 0..layer.outputs {
                let go = g[o];
                if go == 0.0 {
                    continue;
                }
                grads.bias[l][o] += go;
                let row = o * layer.inputs;
                let wg = &mut grads.weight[l][row..row + layer.inputs];
                let w = &view.w[l][row..row + layer.inputs];
                for i in 0..layer.inputs {
                    wg[i] += go * x[i];
                    gx[i] += go * w[i];
                }
            }
            if l > 0 {
                // ReLU: zero where the retained activation was clipped
                for (gi, &xi) in gx.iter_mut().zip(x) {
                    if xi <= 0.0 {
                        *gi = 0.0;
                    }
                }
            }
            g = gx;
        }
        g
    }
}
