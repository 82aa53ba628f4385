//! Sequence manifests: one sample per line, tab-separated
//! `path_1 … path_N straight left stride`, `#` starts a comment line.

use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use super::labels::{RightOfWayLabel, Status};
use super::window::SequenceSample;
use crate::error::{Error, Result};
use crate::tensor::rng;

pub fn format_manifest(samples: &[SequenceSample]) -> Result<String> {
    let mut out = String::new();
    for s in samples {
        for p in &s.paths {
            let p = p
                .to_str()
                .filter(|p| !p.contains(['\t', '\n', '\r']) && !p.is_empty() && !p.starts_with('#'))
                .ok_or_else(|| Error::contract(format!("path {} cannot be stored in a manifest", p.display())))?;
            out.push_str(p);
            out.push('\t');
        }
        let _ = writeln!(out, "{}\t{}\t{}", s.label.straight, s.label.left, s.stride);
    }
    Ok(out)
}

pub fn parse_manifest(text: &str, path: &Path) -> Result<Vec<SequenceSample>> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line: line as u64,
        message,
    };
    let mut samples: Vec<SequenceSample> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 4 {
            return Err(err(line_no, format!("expected at least 4 tab-separated fields, got {}", fields.len())));
        }
        let n = fields.len() - 3;
        if let Some(first) = samples.first() {
            if first.paths.len() != n {
                return Err(err(line_no, format!("{n} frames, earlier lines have {}", first.paths.len())));
            }
        }
        let status = |f: &str| f.parse::<Status>().map_err(|e| err(line_no, e.to_string()));
        let stride = fields[n + 2]
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&s| s > 0)
            .ok_or_else(|| err(line_no, format!("bad stride `{}`", fields[n + 2])))?;
        samples.push(SequenceSample {
            paths: fields[..n].iter().map(PathBuf::from).collect(),
            label: RightOfWayLabel::new(status(fields[n])?, status(fields[n + 1])?),
            stride,
        });
    }
    Ok(samples)
}

pub fn write_manifest(samples: &[SequenceSample], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_manifest(samples)?).map_err(|e| Error::file(path, e))
}

/// Samples with paths as written; see [`resolve`] for loading.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<SequenceSample>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    parse_manifest(&text, path)
}

/// Directory that relative manifest paths are resolved against.
pub fn manifest_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Label counts of a sample set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ManifestStats {
    pub samples: usize,
    pub straight_pass: usize,
    pub straight_stop: usize,
    pub left_pass: usize,
    pub left_stop: usize,
    /// Indexed like [`RightOfWayLabel::ALL`].
    pub joint: [usize; 4],
}

impl ManifestStats {
    pub fn of(samples: &[SequenceSample]) -> Self {
        let mut s = ManifestStats::default();
        for sample in samples {
            let l = sample.label;
            s.samples += 1;
            match l.straight {
                Status::Pass => s.straight_pass += 1,
                Status::Stop => s.straight_stop += 1,
            }
            match l.left {
                Status::Pass => s.left_pass += 1,
                Status::Stop => s.left_stop += 1,
            }
            s.joint[l.joint_index()] += 1;
        }
        s
    }
}

impl fmt::Display for ManifestStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "samples={}", self.samples)?;
        writeln!(f, "straight_pass={}", self.straight_pass)?;
        writeln!(f, "straight_stop={}", self.straight_stop)?;
        writeln!(f, "left_pass={}", self.left_pass)?;
        writeln!(f, "left_stop={}", self.left_stop)?;
        for (label, count) in RightOfWayLabel::ALL.iter().zip(self.joint) {
            writeln!(f, "{}_{}={count}", label.straight, label.left)?;
        }
        Ok(())
    }
}

pub fn manifest_stats(path: impl AsRef<Path>) -> Result<ManifestStats> {
    Ok(ManifestStats::of(&read_manifest(path)?))
}

/// Seeded split into `(train, rest)`; `train` holds `round(fraction · n)`
/// samples. Both parts keep the original relative order.
pub fn split_samples(
    samples: &[SequenceSample],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<SequenceSample>, Vec<SequenceSample>)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::config("split", format!("fraction must lie in [0, 1], got {fraction}")));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng::stream(seed, "split"));
    let cut = (fraction * samples.len() as f64).round() as usize;
    let mut train = order[..cut].to_vec();
    let mut rest = order[cut..].to_vec();
    train.sort_unstable();
    rest.sort_unstable();
    let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect();
    Ok((pick(&train), pick(&rest)))
}
