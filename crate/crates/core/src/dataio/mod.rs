//! Point-cloud files, block splitting and synthetic scenes.

mod blocks;
mod format;
mod scene;

pub use blocks::{split_blocks, Block, BlockSpec};
pub use format::{
    format_cloud, parse_cloud, read_cloud, read_labels, sidecar_path, write_cloud, write_labels, FORMAT_VERSION,
};
pub use scene::{generate_scene, Scene, SceneSpec, CLASS_NAMES, CLUTTER, DOOR, FLOOR, NUM_CLASSES, WALL, WINDOW};
