//! Labels, sequence windowing, synthetic scenes and dataset files.

mod dataset;
mod frames;
mod labels;
mod manifest;
mod ppm;
mod synth;
mod window;

pub use dataset::{load_manifest, load_sample, load_samples, thread_budget, LoadedSample};
pub use frames::{read_frames_csv, write_frames_csv, FRAMES_HEADER};
pub use labels::{label_from_lights, LightState, RightOfWayLabel, Status};
pub use manifest::{
    format_manifest, manifest_dir, manifest_stats, parse_manifest, read_manifest, resolve, split_samples,
    write_manifest, ManifestStats,
};
pub use ppm::{read_ppm, write_ppm, RgbImage};
pub use synth::{synth_scene, Cycle, LeftShape, LightBoxGeometry, Scenario, SynthConfig, SynthScene};
pub use window::{group_drives, window_count, window_sequences, FrameRecord, SequenceSample};
