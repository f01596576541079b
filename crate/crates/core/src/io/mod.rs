//! Files on disk: datasets, Gaussian checkpoints and motion-field checkpoints.

mod dataset;
mod field;
mod ply;

pub use dataset::{
    depth_path, frame_path, load_dataset, load_pfm, load_png, save_dataset, save_pfm, save_png, ROTATION_TOLERANCE,
};
pub use field::{load_motion_field, save_motion_field};
pub use ply::{load_gaussians, load_points, read_vertices, save_gaussians, save_points, VertexTable};
