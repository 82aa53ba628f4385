use std::path::Path;

use super::labels::RightOfWayLabel;
use super::manifest::{manifest_dir, read_manifest, resolve};
use super::ppm::read_ppm;
use super::window::SequenceSample;
use crate::error::Result;
use crate::model::ImageBuffer;

/// A sample with its frames decoded.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSample {
    pub buffer: ImageBuffer<f32>,
    pub label: RightOfWayLabel,
}

/// Reads the frames of `sample`, resolving relative paths against `base`.
pub fn load_sample(sample: &SequenceSample, base: &Path) -> Result<LoadedSample> {
    let frames = sample
        .paths
        .iter()
        .map(|p| Ok(read_ppm(resolve(base, p))?.to_tensor()))
        .collect::<Result<Vec<_>>>()?;
    Ok(LoadedSample {
        buffer: ImageBuffer::new(frames)?,
        label: sample.label,
    })
}

/// Loads every sample on up to `threads` workers. The result keeps manifest
/// order whatever the thread count; the first failing sample's error is
/// returned.
pub fn load_samples(samples: &[SequenceSample], base: &Path, threads: usize) -> Result<Vec<LoadedSample>> {
    let threads = threads.clamp(1, samples.len().max(1));
    let chunk = samples.len().div_ceil(threads).max(1);
    std::thread::scope(|scope| {
        let handles: Vec<_> = samples
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(|s| load_sample(s, base)).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("sample loader panicked"))
            .collect()
    })
}

pub fn load_manifest(path: impl AsRef<Path>, threads: usize) -> Result<Vec<LoadedSample>> {
    let path = path.as_ref();
    load_samples(&read_manifest(path)?, &manifest_dir(path), threads)
}

/// Worker count from `LIGHTFORMER_THREADS`, else the available parallelism.
pub fn thread_budget() -> usize {
    std::env::var("LIGHTFORMER_THREADS")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}
