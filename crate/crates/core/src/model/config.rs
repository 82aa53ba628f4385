use std::fmt::Write as _;

use crate::arcdecoder::ArcConfig;
use crate::attention::{EncoderConfig, HistoryMode};
use crate::error::{Error, Result};

/// Hyperparameters fixing the shape of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Frames per buffer; the last one is the current frame.
    pub buffer_len: usize,
    pub embed_dim: usize,
    pub num_heads: usize,
    /// Deformable sampling points per head.
    pub num_points: usize,
    pub history_mode: HistoryMode,
    pub centres_per_class: usize,
    pub margin: f64,
    pub scale: f64,
    /// Channel width of each residual stage; the stem uses the first.
    pub stage_widths: Vec<usize>,
    pub stage_blocks: Vec<usize>,
    pub in_channels: usize,
    pub image_height: usize,
    pub image_width: usize,
    pub ablate_tsa: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            buffer_len: 10,
            embed_dim: 256,
            num_heads: 4,
            num_points: 4,
            history_mode: HistoryMode::All,
            centres_per_class: 1,
            margin: 0.5,
            scale: 64.0,
            stage_widths: vec![8, 16, 32, 64],
            stage_blocks: vec![2, 2, 2, 2],
            in_channels: 3,
            image_height: 64,
            image_width: 128,
            ablate_tsa: false,
        }
    }
}

/// Keys accepted by [`ModelConfig::set`], in serialization order.
pub const MODEL_KEYS: &[&str] = &[
    "buffer_len",
    "embed_dim",
    "num_heads",
    "num_points",
    "history_mode",
    "centres_per_class",
    "margin",
    "scale",
    "stage_widths",
    "stage_blocks",
    "in_channels",
    "image_height",
    "image_width",
    "ablate_tsa",
];

fn parse<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| parse(key, v)).collect()
}

fn join(values: &[usize]) -> String {
    values.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl ModelConfig {
    /// Downsampling factor of the backbone: the stem and every stage halve
    /// the resolution.
    pub fn stride(&self) -> usize {
        1 << (self.stage_widths.len() + 1)
    }

    /// Spatial size `(H, W)` of the backbone output.
    pub fn feature_size(&self) -> (usize, usize) {
        let mut h = self.image_height;
        let mut w = self.image_width;
        for _ in 0..self.stage_widths.len() + 1 {
            h = (h - 1) / 2 + 1;
            w = (w - 1) / 2 + 1;
        }
        (h, w)
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            embed_dim: self.embed_dim,
            num_heads: self.num_heads,
            num_points: self.num_points,
            ablate_tsa: self.ablate_tsa,
        }
    }

    pub fn decoder(&self) -> ArcConfig {
        ArcConfig {
            num_classes: 2,
            centres_per_class: self.centres_per_class,
            margin: self.margin,
            scale: self.scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.buffer_len == 0 {
            return Err(Error::config("buffer_len", "must be at least 1"));
        }
        self.encoder().validate()?;
        self.decoder().validate()?;
        if self.stage_widths.is_empty() || self.stage_widths.contains(&0) {
            return Err(Error::config("stage_widths", "widths must be positive"));
        }
        if self.stage_blocks.len() != self.stage_widths.len() || self.stage_blocks.contains(&0) {
            return Err(Error::config(
                "stage_blocks",
                "needs one positive block count per stage width",
            ));
        }
        if self.in_channels == 0 {
            return Err(Error::config("in_channels", "must be positive"));
        }
        if self.image_height == 0 || self.image_width == 0 {
            return Err(Error::config("image_height", "image size must be positive"));
        }
        Ok(())
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "buffer_len" => self.buffer_len = parse(key, value)?,
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "num_heads" => self.num_heads = parse(key, value)?,
            "num_points" => self.num_points = parse(key, value)?,
            "history_mode" => self.history_mode = value.trim().parse()?,
            "centres_per_class" => self.centres_per_class = parse(key, value)?,
            "margin" => self.margin = parse(key, value)?,
            "scale" => self.scale = parse(key, value)?,
            "stage_widths" => self.stage_widths = parse_list(key, value)?,
            "stage_blocks" => self.stage_blocks = parse_list(key, value)?,
            "in_channels" => self.in_channels = parse(key, value)?,
            "image_height" => self.image_height = parse(key, value)?,
            "image_width" => self.image_width = parse(key, value)?,
            "ablate_tsa" => self.ablate_tsa = parse(key, value)?,
            _ => return Err(Error::config(key, "unknown model key")),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "buffer_len" => self.buffer_len.to_string(),
            "embed_dim" => self.embed_dim.to_string(),
            "num_heads" => self.num_heads.to_string(),
            "num_points" => self.num_points.to_string(),
            "history_mode" => self.history_mode.to_string(),
            "centres_per_class" => self.centres_per_class.to_string(),
            // `{:?}` prints the shortest string that parses back exactly.
            "margin" => format!("{:?}", self.margin),
            "scale" => format!("{:?}", self.scale),
            "stage_widths" => join(&self.stage_widths),
            "stage_blocks" => join(&self.stage_blocks),
            "in_channels" => self.in_channels.to_string(),
            "image_height" => self.image_height.to_string(),
            "image_width" => self.image_width.to_string(),
            "ablate_tsa" => self.ablate_tsa.to_string(),
            _ => return None,
        })
    }

    /// One `key=value` line per field.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for key in MODEL_KEYS {
            let _ = writeln!(out, "{key}={}", self.get(key).unwrap_or_default());
        }
        out
    }

    /// Parses [`to_kv`](Self::to_kv) output. Every key must be present.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        let mut seen = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(line, "expected key=value"))?;
            let key = key.trim();
            cfg.set(key, value)?;
            seen.push(key.to_owned());
        }
        if let Some(missing) = MODEL_KEYS.iter().find(|k| !seen.iter().any(|s| s == *k)) {
            return Err(Error::config(*missing, "missing from config block"));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// First field whose value differs from `other`.
    pub fn first_difference(&self, other: &ModelConfig) -> Option<&'static str> {
        MODEL_KEYS.iter().copied().find(|k| self.get(k) != other.get(k))
    }
}
