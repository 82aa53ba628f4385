use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use lightformer::datakit::{
    load_samples, manifest_dir, read_frames_csv, read_manifest, resolve, split_samples, synth_scene, thread_budget,
    window_sequences, write_frames_csv, write_manifest, write_ppm, FrameRecord, LeftShape, LoadedSample, ManifestStats,
    RightOfWayLabel, Scenario, SequenceSample, SynthConfig,
};
use lightformer::gradsuite::{run_grad_suite, GRAD_TOLERANCE};
use lightformer::model::{load_checkpoint, save_checkpoint, ImageBuffer, Model, ModelConfig};
use lightformer::trainkit::{evaluate, train_with};
use lightformer::{Error, Result};

use crate::runconfig::RunConfig;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::File {
        path: path.to_path_buf(),
        source,
    }
}

/// Left-indicator shape per drive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ShapeChoice {
    Circle,
    Arrow,
    /// Even drives use circles, odd drives arrows.
    Alternate,
}

impl ShapeChoice {
    fn for_drive(self, k: usize) -> LeftShape {
        match self {
            ShapeChoice::Circle => LeftShape::Circle,
            ShapeChoice::Arrow => LeftShape::Arrow,
            ShapeChoice::Alternate if k.is_multiple_of(2) => LeftShape::Circle,
            ShapeChoice::Alternate => LeftShape::Arrow,
        }
    }
}

pub struct SynthArgs {
    pub out: PathBuf,
    pub scenario: Scenario,
    pub drives: usize,
    pub frames: usize,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub left_shape: ShapeChoice,
    pub occlusion: f64,
    pub force: bool,
}

pub const SYNTH_STATS: &str = "synth_stats.txt";
pub const SYNTH_FRAMES: &str = "frames.csv";

/// Seed of drive `k`, distinct for every `(seed, k)` with `k < 2^20`.
fn drive_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_mul(1 << 20).wrapping_add(k as u64)
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    if args.drives == 0 || args.frames == 0 {
        return Err(Error::contract("--drives and --frames must be at least 1"));
    }
    let non_empty = match fs::read_dir(&args.out) {
        Ok(mut entries) => entries.next().is_some(),
        Err(_) => false,
    };
    if non_empty && !args.force {
        return Err(Error::contract(format!(
            "{} exists and is not empty; pass --force to write into it",
            args.out.display()
        )));
    }
    fs::create_dir_all(&args.out).map_err(io_err(&args.out))?;

    let mut records = Vec::with_capacity(args.drives * args.frames);
    let (mut distractors, mut occluded) = (0usize, 0usize);
    let mut joint = [0usize; 4];
    for k in 0..args.drives {
        let cfg = SynthConfig {
            scenario: args.scenario,
            num_frames: args.frames,
            width: args.width,
            height: args.height,
            left_shape: args.left_shape.for_drive(k),
            occlusion_prob: args.occlusion,
            ..SynthConfig::default()
        };
        let scene = synth_scene(drive_seed(args.seed, k), &cfg)?;
        distractors += scene.distractors;
        occluded += scene.occluded.iter().filter(|o| **o).count();
        let drive = format!("drive{k:03}");
        let dir = args.out.join(&drive);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for (i, (image, &(straight, left))) in scene.frames.iter().zip(&scene.lights).enumerate() {
            let rel = PathBuf::from(&drive).join(format!("frame{i:05}.ppm"));
            write_ppm(args.out.join(&rel), image)?;
            joint[lightformer::datakit::label_from_lights(straight, left).joint_index()] += 1;
            records.push(FrameRecord {
                drive: drive.clone(),
                frame: i as u64,
                path: rel,
                straight,
                left,
            });
        }
    }
    write_frames_csv(args.out.join(SYNTH_FRAMES), &records)?;

    let mut stats = String::new();
    let _ = writeln!(stats, "scenario={}", args.scenario);
    let _ = writeln!(stats, "seed={}", args.seed);
    let _ = writeln!(stats, "drives={}", args.drives);
    let _ = writeln!(stats, "frames_per_drive={}", args.frames);
    let _ = writeln!(stats, "images={}", records.len());
    let _ = writeln!(stats, "width={}\nheight={}", args.width, args.height);
    let _ = writeln!(stats, "left_shape={:?}", args.left_shape);
    let _ = writeln!(stats, "distractors={distractors}");
    let _ = writeln!(stats, "occluded_frames={occluded}");
    for (label, count) in RightOfWayLabel::ALL.iter().zip(joint) {
        let _ = writeln!(stats, "frames.straight_{}.left_{}={count}", label.straight, label.left);
    }
    let stats_path = args.out.join(SYNTH_STATS);
    fs::write(&stats_path, &stats).map_err(io_err(&stats_path))?;
    print!("{stats}");
    Ok(())
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).map_err(io_err(p))
}

/// `a/b.tsv` → (`a/b.train.tsv`, `a/b.val.tsv`).
pub fn split_paths(out: &Path) -> (PathBuf, PathBuf) {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = out.extension().map(|e| format!(".{}", e.to_string_lossy())).unwrap_or_default();
    (
        out.with_file_name(format!("{stem}.train{ext}")),
        out.with_file_name(format!("{stem}.val{ext}")),
    )
}

pub fn prepare(frames: &Path, n: usize, stride: usize, out: &Path, split: Option<f64>, seed: u64) -> Result<()> {
    let records = read_frames_csv(frames)?;
    let mut samples = window_sequences(&records, n, stride)?;
    // Frame paths are relative to the CSV; manifest paths to the manifest.
    let from = absolute(&manifest_dir(frames))?;
    let to = absolute(&manifest_dir(out))?;
    fs::create_dir_all(&to).map_err(io_err(&to))?;
    for sample in &mut samples {
        for p in &mut sample.paths {
            let abs = resolve(&from, p);
            *p = pathdiff::diff_paths(&abs, &to).unwrap_or(abs);
        }
    }
    if samples.is_empty() {
        eprintln!("warning: no drive is long enough for N = {n} at stride {stride}");
    }
    let report = |path: &Path, part: &[SequenceSample]| -> Result<()> {
        write_manifest(part, path)?;
        println!("{}: {}", path.display(), ManifestStats::of(part).to_string().replace('\n', " ").trim_end());
        Ok(())
    };
    match split {
        None => report(out, &samples),
        Some(fraction) => {
            let (train, val) = split_samples(&samples, fraction, seed)?;
            let (train_path, val_path) = split_paths(out);
            report(&train_path, &train)?;
            report(&val_path, &val)
        }
    }
}

/// Rejects data the model cannot consume, naming the config key at fault.
fn check_compatible(cfg: &ModelConfig, samples: &[SequenceSample], loaded: &[LoadedSample]) -> Result<()> {
    if let Some(first) = samples.first() {
        if first.paths.len() != cfg.buffer_len {
            return Err(Error::config(
                "buffer_len",
                format!("model expects N = {} but the manifest holds N = {}", cfg.buffer_len, first.paths.len()),
            ));
        }
    }
    if let Some(sample) = loaded.first() {
        let shape = sample.buffer.current().shape();
        if shape[0] != cfg.in_channels {
            return Err(Error::config(
                "in_channels",
                format!("model expects {} channels, images have {}", cfg.in_channels, shape[0]),
            ));
        }
        if shape[1] != cfg.image_height || shape[2] != cfg.image_width {
            return Err(Error::config(
                "image_height",
                format!(
                    "model expects {}×{} images (height×width), data is {}×{}",
                    cfg.image_height, cfg.image_width, shape[1], shape[2]
                ),
            ));
        }
    }
    Ok(())
}

fn load(manifest: &Path, cfg: &ModelConfig) -> Result<Vec<LoadedSample>> {
    let samples = read_manifest(manifest)?;
    if samples.is_empty() {
        return Err(Error::contract(format!("{} holds no samples", manifest.display())));
    }
    check_compatible(cfg, &samples, &[])?;
    let loaded = load_samples(&samples, &manifest_dir(manifest), thread_budget())?;
    check_compatible(cfg, &samples, &loaded)?;
    Ok(loaded)
}

pub fn train(manifest: &Path, cfg: &RunConfig, out: &Path, log: Option<&Path>) -> Result<()> {
    cfg.validate()?;
    let data = load(manifest, &cfg.model)?;
    let mut model = Model::new(cfg.model.clone(), cfg.train.seed)?;
    let mut train_cfg = cfg.train.clone();
    train_cfg.threads = thread_budget();

    let mut log_file = match log {
        Some(p) => Some(fs::File::create(p).map_err(io_err(p))?),
        None => None,
    };
    let header = "epoch\tloss\ttrain_acc";
    println!("{header}");
    if let Some(f) = log_file.as_mut() {
        writeln!(f, "{header}")?;
    }
    let mut write_error = None;
    train_with(&mut model, &data, &train_cfg, |record, _| {
        let line = record.log_line();
        println!("{line}");
        let _ = std::io::stdout().flush();
        if let Some(f) = log_file.as_mut() {
            if let Err(e) = writeln!(f, "{line}") {
                write_error = Some(e);
                return std::ops::ControlFlow::Break(());
            }
        }
        std::ops::ControlFlow::Continue(())
    })?;
    if let Some(e) = write_error {
        return Err(io_err(log.unwrap_or(Path::new("log")))(e));
    }
    save_checkpoint(&model, out)?;
    eprintln!("wrote {}", out.display());
    Ok(())
}

pub fn eval(manifest: &Path, ckpt: &Path) -> Result<()> {
    let model = load_checkpoint(ckpt)?;
    let data = load(manifest, model.config())?;
    let report = evaluate(&model, &data, thread_budget())?;
    print!("{report}\n{}", report.to_kv());
    Ok(())
}

pub fn predict(ckpt: &Path, frames: &[PathBuf]) -> Result<()> {
    let model = load_checkpoint(ckpt)?;
    let n = model.config().buffer_len;
    if frames.len() != n {
        return Err(Error::contract(format!(
            "expected a buffer of N = {n} frames, got {}",
            frames.len()
        )));
    }
    let tensors = frames
        .iter()
        .map(|p| Ok(lightformer::datakit::read_ppm(p)?.to_tensor::<f32>()))
        .collect::<Result<Vec<_>>>()?;
    let buffer = ImageBuffer::new(tensors)?;
    check_compatible(
        model.config(),
        &[],
        &[LoadedSample {
            buffer: buffer.clone(),
            label: RightOfWayLabel::ALL[0],
        }],
    )?;
    let p = model.predict(&buffer)?;
    for (name, probs, class) in [
        ("straight", p.straight, p.straight_class()),
        ("left", p.left, p.left_class()),
    ] {
        let status = lightformer::datakit::Status::from_index(class)?;
        println!("{name}: {status} (p={:.4})", probs[class]);
    }
    Ok(())
}

pub fn gradcheck(seeds: u64) -> Result<()> {
    let start = Instant::now();
    let seeds: Vec<u64> = (0..seeds).collect();
    let rows = run_grad_suite(&seeds)?;
    println!("{:<22} {:>4} {:>8} {:>14}  result", "operation", "seed", "entries", "max_rel_error");
    for row in &rows {
        println!(
            "{:<22} {:>4} {:>8} {:>14.3e}  {}",
            row.op,
            row.seed,
            row.report.entries,
            row.report.max_rel_error,
            if row.passed() { "pass" } else { "FAIL" }
        );
    }
    let failed = rows.iter().filter(|r| !r.passed()).count();
    println!(
        "{} of {} checks passed at tolerance {GRAD_TOLERANCE:e} in {:.1}s",
        rows.len() - failed,
        rows.len(),
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        return Err(Error::Numeric(format!("{failed} gradient checks failed")));
    }
    Ok(())
}
