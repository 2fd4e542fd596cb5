mod dataset;
mod exif;
mod profile;
mod render;
mod scene;
mod warp;

pub use dataset::{
    build_dataset, exif_for, generate_pair, generate_scene_data, scene_id, scene_seed, warp_seed, Dataset, DatasetConfig, DatasetManifest,
    SampleSource, SceneData, Split, Splits, SyntheticSource, MANIFEST_FILE, MANIFEST_VERSION,
};
pub use exif::{ExifParams, EXPOSURE_TIME_RANGE, F_NUMBERS, ISO_RANGE, K_REF};
pub use profile::{
    gamma_slot, make_camera_profile, CameraProfile, ToneCurve, BLACK_LIFT_RANGE, GAMMA_RANGE, GAMMA_SLOTS, LOCAL_CONTRAST_RANGE,
    MIN_GAMMA_SPACING, ROW_SUM_RANGE, SATURATION_RANGE, SCURVE_RANGE, SRGB_GAMMA, VIGNETTE_RANGE,
};
pub use render::{render_display_stage, render_linear_stage, render_profile, render_with_exposure, LUMA};
pub use scene::{generate_scene, MIN_SCENE_SIZE};
pub use warp::{bilinear, warp_with_bias, Warped};
