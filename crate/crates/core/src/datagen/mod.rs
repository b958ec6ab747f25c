//! Deterministic synthetic motion data, rendering and file formats.

mod dataset;
mod families;
mod format;
mod noise;
mod render;

pub use dataset::{
    derive_seed, generate_items, make_dataset, manifest_root, splitmix64, DatasetConfig, DatasetItem,
    DatasetManifest, FamilyCounts, ManifestEntry, Split, MANIFEST_FILE, MANIFEST_VERSION,
};
pub use families::{gen_motion_clip, keyframe_poses, keyframe_times, MotionFamily, MotionFamilySpec, KEYFRAMES};
pub use format::{clip_from_json, clip_to_json, read_clip, write_clip, CLIP_EXTENSION, CLIP_FORMAT_VERSION};
pub use noise::add_noise;
pub use render::{render_clip, to_pixel, RenderOptions, DROPOUT_CONFIDENCE};
