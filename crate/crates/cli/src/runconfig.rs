//! Flat `key = value` run configuration shared by `train` and `config`.

use std::fmt::Write as _;
use std::path::Path;

use lightformer::model::{ModelConfig, MODEL_KEYS};
use lightformer::trainkit::TrainConfig;
use lightformer::{Error, Result};

pub const TRAIN_KEYS: &[&str] = &["epochs", "lr", "batch_size", "seed", "shuffle"];

/// One line of help per accepted key.
pub const KEY_HELP: &[(&str, &str)] = &[
    ("buffer_len", "frames per image buffer; must match the manifest"),
    ("embed_dim", "width of the query, embeddings and feature map"),
    ("num_heads", "attention heads; must divide embed_dim"),
    ("num_points", "sampling points per head in spatial cross-attention"),
    ("history_mode", "`all` earlier embeddings or only the `last` one"),
    ("centres_per_class", "cluster centres per class in each decoder"),
    ("margin", "additive angular margin in radians"),
    ("scale", "logit scale of the decoders"),
    ("stage_widths", "comma-separated backbone stage widths"),
    ("stage_blocks", "comma-separated residual blocks per stage"),
    ("in_channels", "image channels"),
    ("image_height", "input height in pixels; must match the data"),
    ("image_width", "input width in pixels; must match the data"),
    ("ablate_tsa", "drop temporal self-attention (true/false)"),
    ("epochs", "passes over the training manifest"),
    ("lr", "Adam learning rate"),
    ("batch_size", "samples per optimizer step"),
    ("seed", "seed for initialization and shuffling"),
    ("shuffle", "reshuffle the samples every epoch (true/false)"),
];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn parse_value<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "epochs" => self.train.epochs = parse_value(key, value)?,
            "lr" => self.train.lr = parse_value(key, value)?,
            "batch_size" => self.train.batch_size = parse_value(key, value)?,
            "seed" => self.train.seed = parse_value(key, value)?,
            "shuffle" => self.train.shuffle = parse_value(key, value)?,
            _ if MODEL_KEYS.contains(&key) => self.model.set(key, value)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "epochs" => self.train.epochs.to_string(),
            "lr" => format!("{:?}", self.train.lr),
            "batch_size" => self.train.batch_size.to_string(),
            "seed" => self.train.seed.to_string(),
            "shuffle" => self.train.shuffle.to_string(),
            _ => return self.model.get(key),
        })
    }

    /// Applies the lines of a config file on top of `self`. Blank lines and
    /// `#` comments are skipped; a key may appear only once.
    pub fn apply_text(&mut self, text: &str, path: &Path) -> Result<()> {
        let mut seen: Vec<&str> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let at = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: i as u64 + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.contains(&key) {
                return Err(at(format!("key `{key}` given twice")));
            }
            seen.push(key);
            self.set(key, value).map_err(|e| at(e.to_string()))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::File {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text, path)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    /// A complete, commented config file holding the current values.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in MODEL_KEYS.iter().chain(TRAIN_KEYS) {
            let help = KEY_HELP.iter().find(|(k, _)| k == key).map_or("", |(_, h)| *h);
            let _ = writeln!(out, "# {help}");
            let _ = writeln!(out, "{key} = {}\n", self.get(key).unwrap_or_default());
        }
        out
    }
}
