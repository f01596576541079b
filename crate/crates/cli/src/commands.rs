use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

use ambient_splat::io::{load_dataset, load_gaussians, load_motion_field, save_dataset, save_gaussians, save_motion_field, save_png};
use ambient_splat::motion::MotionField;
use ambient_splat::pipeline::{evaluate, initial_field, render_frame, FrameMetrics};
use ambient_splat::scene::init_from_points;
use ambient_splat::synth::{generate, held_out_split, CameraPath, SynthSpec};
use ambient_splat::train::{train_dynamic_from, train_static_from, write_log};
use ambient_splat::{Dataset, TrainConfig};

use crate::manifest::Recorder;
use crate::{Cli, Command, DataArgs, EvalArgs, PathKind, Preset, RenderArgs, RenderMode, Split, SynthArgs, TrainDynamicArgs, TrainStaticArgs, UsageError};

const LPIPS_REASON: &str = "LPIPS needs pretrained network weights, which this build does not ship";

pub fn run(cli: &Cli) -> Result<()> {
    let config = build_config(cli)?;
    fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    match &cli.command {
        Command::Synth(a) => synth(cli, &config, a),
        Command::TrainStatic(a) => train_static(cli, &config, a),
        Command::TrainDynamic(a) => train_dynamic(cli, &config, a),
        Command::Render(a) => render(cli, &config, a),
        Command::Eval(a) => eval(cli, &config, a),
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn build_config(cli: &Cli) -> Result<TrainConfig> {
    let mut config = match cli.preset {
        Preset::Desk => TrainConfig::desk(),
        Preset::Full => TrainConfig::default(),
    };
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        config.apply_text(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate().map_err(|e| usage(e.to_string()))?;
    Ok(config)
}

fn report(cli: &Cli, summary: Value, lines: &[String]) {
    if cli.json {
        println!("{summary}");
    } else {
        for l in lines {
            println!("{l}");
        }
    }
}

fn split_name(s: Split) -> &'static str {
    match s {
        Split::Long => "long",
        Split::Desk => "desk",
        Split::All => "all",
    }
}

/// `(train, test)` for the requested split.
fn load_split(args: &DataArgs) -> Result<(Dataset, Dataset)> {
    let ds = load_dataset(&args.data)?;
    Ok(match args.split {
        Split::Long => held_out_split(&ds, 3, 30)?,
        Split::Desk => held_out_split(&ds, 3, 4)?,
        Split::All => (ds.clone(), ds),
    })
}

fn synth(cli: &Cli, config: &TrainConfig, a: &SynthArgs) -> Result<()> {
    let path = match a.path {
        PathKind::Orbit => CameraPath::Orbit {
            radius: 3.0,
            height: 0.0,
            bob: 0.9,
            span_degrees: a.span,
        },
        PathKind::Dolly => CameraPath::Dolly {
            start: 4.0,
            end: 2.5,
            height: 0.0,
            sway: 0.6,
        },
    };
    let spec = SynthSpec {
        seed: config.seed,
        foreground: a.foreground,
        background: a.background,
        clusters: a.clusters,
        frames: a.frames,
        amplitude: a.amplitude,
        width: a.width,
        height: a.height,
        noise: a.noise,
        path,
        ..SynthSpec::default()
    };
    spec.validate().map_err(|e| usage(format!("invalid synth spec: {e}")))?;
    let mut rec = Recorder::new("synth", config);
    rec.manifest.inputs = json!({ "spec": format!("{spec:?}") });
    let scene = rec.stage("generate", || generate(&spec))?;
    save_dataset(&scene.dataset, &cli.out)?;
    let gt = cli.out.join("ground_truth");
    fs::create_dir_all(&gt)?;
    let gaussians = gt.join("gaussians.ply");
    save_gaussians(&scene.set, &gaussians)?;
    let motion = gt.join("motion.json");
    let per_gaussian: Vec<[&[f64]; 3]> = (0..scene.set.len())
        .map(|i| [scene.phi(i, 0), scene.phi(i, 1), scene.phi(i, 2)])
        .collect();
    let doc = json!({
        "frames": spec.frames,
        "basis_size": scene.basis.size,
        "foreground": scene.foreground,
        "coefficients": per_gaussian,
    });
    fs::write(&motion, serde_json::to_string(&doc)?)?;
    for p in [&gaussians, &motion] {
        rec.output(p);
    }
    rec.output(&cli.out.join("cameras.json"));
    rec.finish(&cli.out)?;
    report(
        cli,
        json!({ "dataset": cli.out, "frames": spec.frames, "ground_truth": { "gaussians": gaussians, "motion": motion } }),
        &[
            format!("dataset: {} ({} frames)", cli.out.display(), spec.frames),
            format!("ground truth gaussians: {}", gaussians.display()),
            format!("ground truth motion: {}", motion.display()),
        ],
    );
    Ok(())
}

/// Resolves `--iters/--start/--stop` against the schedule length in `total`.
fn window(iters: Option<usize>, start: usize, stop: Option<usize>, total: &mut usize) -> Result<(usize, usize)> {
    if let Some(n) = iters {
        *total = n;
    }
    let stop = stop.unwrap_or(*total);
    if start > stop || stop > *total {
        return Err(usage(format!("need start ≤ stop ≤ iters, got {start}, {stop}, {total}")));
    }
    Ok((start, stop))
}

fn loss_summary(losses: &[f64]) -> (Option<f64>, Option<f64>) {
    (losses.first().copied(), losses.last().copied())
}

fn train_static(cli: &Cli, config: &TrainConfig, a: &TrainStaticArgs) -> Result<()> {
    let mut config = config.clone();
    let (start, stop) = window(a.iters, a.start, a.stop, &mut config.static_iters)?;
    let (train, _) = load_split(&a.data)?;
    let mut rec = Recorder::new("train-static", &config);
    rec.manifest.inputs = json!({ "data": a.data.data, "split": split_name(a.data.split), "init": a.init, "start": start, "stop": stop });
    let set = match &a.init {
        Some(p) => load_gaussians(p)?,
        None => init_from_points(&train.init_points, &train.init_colors, &config)?,
    };
    let result = rec.stage("static", || train_static_from(&train, set, &config, start, stop))?;
    let ckpt = cli.out.join("gaussians.ply");
    save_gaussians(&result.set, &ckpt)?;
    let log = cli.out.join("static_log.csv");
    write_log(&result.log, &log)?;
    rec.output(&ckpt);
    rec.output(&log);
    rec.finish(&cli.out)?;
    let (first, last) = loss_summary(&result.losses);
    report(
        cli,
        json!({ "checkpoint": ckpt, "gaussians": result.set.len(), "start": start, "stop": stop, "first_loss": first, "last_loss": last }),
        &[format!(
            "static {start}..{stop}: {} gaussians, loss {} -> {}; wrote {}",
            result.set.len(),
            fmt_loss(first),
            fmt_loss(last),
            ckpt.display()
        )],
    );
    Ok(())
}

fn fmt_loss(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.5}"))
}

fn train_dynamic(cli: &Cli, config: &TrainConfig, a: &TrainDynamicArgs) -> Result<()> {
    let mut config = config.clone();
    let (start, stop) = window(a.iters, a.start, a.stop, &mut config.dynamic_iters)?;
    let (train, _) = load_split(&a.data)?;
    let mut rec = Recorder::new("train-dynamic", &config);
    rec.manifest.inputs = json!({
        "data": a.data.data, "split": split_name(a.data.split), "gaussians": a.gaussians, "field": a.field, "start": start, "stop": stop,
    });
    let set = load_gaussians(&a.gaussians)?;
    let field = match &a.field {
        Some(p) => load_motion_field(p)?,
        None => initial_field(&train, &set, &config)?,
    };
    if field.frames() != train.total_frames {
        bail!("motion field spans {} frames, dataset has {}", field.frames(), train.total_frames);
    }
    let result = rec.stage("dynamic", || train_dynamic_from(&train, set, field, &config, start, stop))?;
    let ckpt = cli.out.join("gaussians.ply");
    save_gaussians(&result.set, &ckpt)?;
    let fpath = cli.out.join("motion.amsf");
    save_motion_field(&result.field, &fpath)?;
    let log = cli.out.join("dynamic_log.csv");
    write_log(&result.log, &log)?;
    for p in [&ckpt, &fpath, &log] {
        rec.output(p);
    }
    rec.finish(&cli.out)?;
    let (first, last) = loss_summary(&result.losses);
    report(
        cli,
        json!({
            "checkpoint": ckpt, "field": fpath, "start": start, "stop": stop,
            "first_loss": first, "last_loss": last, "peak_activations": result.peak_activations,
        }),
        &[format!(
            "dynamic {start}..{stop}: loss {} -> {}; wrote {} and {}",
            fmt_loss(first),
            fmt_loss(last),
            ckpt.display(),
            fpath.display()
        )],
    );
    Ok(())
}

fn load_field(path: Option<&Path>, gaussians: usize) -> Result<Option<MotionField>> {
    let Some(p) = path else { return Ok(None) };
    let f = load_motion_field(p)?;
    f.validate(gaussians)?;
    Ok(Some(f))
}

fn render(cli: &Cli, config: &TrainConfig, a: &RenderArgs) -> Result<()> {
    let ds = load_dataset(&a.data)?;
    if ds.is_empty() {
        bail!("{} has no cameras", a.data.display());
    }
    let set = load_gaussians(&a.gaussians)?;
    let field = load_field(a.field.as_deref(), set.len())?;
    let total = ds.total_frames as f64;
    let shots: Vec<(usize, f64)> = match a.mode {
        RenderMode::FixedTime => {
            let t = a.time.unwrap_or(total / 2.0);
            (0..ds.len()).map(|i| (i, t)).collect()
        }
        RenderMode::FixedView => {
            let view = a.view.unwrap_or(ds.len() / 2);
            if view >= ds.len() {
                return Err(usage(format!("--view {view} but the dataset has {} cameras", ds.len())));
            }
            let to = a.to.unwrap_or(total);
            if !(a.step > 0.0) || !a.from.is_finite() || !to.is_finite() {
                return Err(usage("--step must be positive and the range finite"));
            }
            let count = ((to - a.from) / a.step).ceil().max(0.0) as usize;
            (0..count).map(|k| (view, a.from + k as f64 * a.step)).collect()
        }
        RenderMode::Replay => ds.frames.iter().enumerate().map(|(i, f)| (i, f.time_index as f64)).collect(),
    };
    let mut rec = Recorder::new("render", config);
    rec.manifest.inputs = json!({
        "data": a.data, "gaussians": a.gaussians, "field": a.field, "mode": format!("{:?}", a.mode),
        "shots": shots,
    });
    let dir = cli.out.join("renders");
    fs::create_dir_all(&dir)?;
    rec.stage("render", || -> Result<()> {
        for (k, &(view, t)) in shots.iter().enumerate() {
            let img = render_frame(&set, field.as_ref(), &ds.cameras[view], t, config.background);
            save_png(&img, &dir.join(format!("{k:04}.png")))?;
        }
        Ok(())
    })?;
    rec.output(&dir);
    rec.finish(&cli.out)?;
    report(
        cli,
        json!({ "renders": dir, "count": shots.len() }),
        &[format!("wrote {} frames to {}", shots.len(), dir.display())],
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalReport {
    split: &'static str,
    held_out: usize,
    mean_psnr: f64,
    mean_ssim: f64,
    lpips: Option<f64>,
    lpips_reason: &'static str,
    frames: Vec<FrameMetrics>,
}

fn eval(cli: &Cli, config: &TrainConfig, a: &EvalArgs) -> Result<()> {
    let (_, test) = load_split(&a.data)?;
    if test.is_empty() {
        bail!("split {} holds out no frames", split_name(a.data.split));
    }
    let set = load_gaussians(&a.gaussians)?;
    let field = load_field(a.field.as_deref(), set.len())?;
    let mut rec = Recorder::new("eval", config);
    rec.manifest.inputs = json!({ "data": a.data.data, "split": split_name(a.data.split), "gaussians": a.gaussians, "field": a.field });
    let metrics = rec.stage("eval", || evaluate(&set, field.as_ref(), &test, config.background))?;
    let report_doc = EvalReport {
        split: split_name(a.data.split),
        held_out: test.len(),
        mean_psnr: metrics.mean_psnr,
        mean_ssim: metrics.mean_ssim,
        lpips: None,
        lpips_reason: LPIPS_REASON,
        frames: metrics.frames,
    };
    let path = cli.out.join("metrics.json");
    fs::write(&path, serde_json::to_string_pretty(&report_doc)?)?;
    rec.output(&path);
    rec.finish(&cli.out)?;
    report(
        cli,
        serde_json::to_value(&report_doc)?,
        &[format!(
            "{} held-out frames: PSNR {:.2} dB, SSIM {:.4}, LPIPS n/a ({LPIPS_REASON}); wrote {}",
            report_doc.held_out,
            report_doc.mean_psnr,
            report_doc.mean_ssim,
            path.display()
        )],
    );
    Ok(())
}
