use std::path::PathBuf;

use super::labels::{label_from_lights, LightState, RightOfWayLabel};
use crate::error::{Error, Result};

/// One annotated frame of a drive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameRecord {
    pub drive: String,
    /// Strictly increasing within a drive.
    pub frame: u64,
    pub path: PathBuf,
    pub straight: LightState,
    pub left: LightState,
}

/// `N` frame paths, oldest first, labelled from the last frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceSample {
    pub paths: Vec<PathBuf>,
    pub label: RightOfWayLabel,
    pub stride: usize,
}

/// Groups records by drive, keeping the order in which drives first appear,
/// and checks that frame indices increase within each drive.
pub fn group_drives(frames: &[FrameRecord]) -> Result<Vec<Vec<&FrameRecord>>> {
    let mut order: Vec<&str> = Vec::new();
    let mut drives: Vec<Vec<&FrameRecord>> = Vec::new();
    for record in frames {
        let slot = match order.iter().position(|d| *d == record.drive) {
            Some(i) => i,
            None => {
                order.push(&record.drive);
                drives.push(Vec::new());
                order.len() - 1
            }
        };
        if let Some(prev) = drives[slot].last() {
            if prev.frame >= record.frame {
                return Err(Error::contract(format!(
                    "drive `{}`: frame {} follows frame {}",
                    record.drive, record.frame, prev.frame
                )));
            }
        }
        drives[slot].push(record);
    }
    Ok(drives)
}

/// Number of windows a drive of `len` frames yields.
pub fn window_count(len: usize, n: usize, stride: usize) -> usize {
    len.saturating_sub((n - 1) * stride)
}

/// Slides a window with step 1 over every drive. Frames inside a window are
/// `stride` positions apart; the label comes from the last frame.
pub fn window_sequences(frames: &[FrameRecord], n: usize, stride: usize) -> Result<Vec<SequenceSample>> {
    if n == 0 || stride == 0 {
        return Err(Error::contract("window length and stride must be at least 1"));
    }
    let span = (n - 1) * stride;
    let mut samples = Vec::new();
    for drive in group_drives(frames)? {
        for end in span..drive.len() {
            let paths = (0..n).map(|k| drive[end - span + k * stride].path.clone()).collect();
            let last = drive[end];
            samples.push(SequenceSample {
                paths,
                label: label_from_lights(last.straight, last.left),
                stride,
            });
        }
    }
    Ok(samples)
}
