//! Sample pairs: types, resampling, augmentation, procedural scenes and PNG datasets.

mod augment;
mod io;
mod resize;
mod synth;
mod types;

pub use augment::{
    apply_augmentation, augment, draw_augmentation, rotate_color, rotate_depth, rotation_source, AugmentParams,
    MAX_ROTATION_DEG,
};
pub use io::{
    load_sample, read_color_png, read_depth_png, write_color_png, write_dataset, write_depth_png, Dataset,
    DatasetConfig, ResizePolicy, COLOR_DIR, CONFIG_FILE, DEPTH_DIR, DEPTH_HR_DIR,
};
pub use resize::{downsample_depth, downsample_image, resize_depth};
pub use synth::{
    depth_hue, generate_synthetic_scene, scene_seed, SceneRect, SyntheticDatasetSpec, SyntheticSceneSpec,
};
pub use types::{scaled_len, ColorImage, DepthMap, SamplePair};
