//! The full recognizer: backbone, buffer loop and the two direction heads.

mod backbone;
mod checkpoint;
mod config;

pub use backbone::backbone_forward;
pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, load_checkpoint_expecting, model_from_bytes, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use config::{ModelConfig, MODEL_KEYS};

use crate::arcdecoder::{arcface_logits, argmax, CentreBank};
use crate::attention::{encoder_layer, EncoderVars, FeatureMap, HistoryBank};
use crate::error::{Error, Result};
use crate::tensor::{rng, BoundParams, ParamStore, Real, Tape, Tensor, Var};

pub const QUERY: &str = "query";
pub const ENCODER: &str = "encoder";
pub const STRAIGHT_DECODER: &str = "decoder.straight";
pub const LEFT_DECODER: &str = "decoder.left";

/// Freshly initialized parameters for `cfg`.
pub fn init_params<T: Real>(cfg: &ModelConfig, seed: u64) -> Result<ParamStore<T>> {
    cfg.validate()?;
    let mut store = ParamStore::new();
    backbone::init_backbone(&mut store, cfg, seed)?;
    store.insert(QUERY, rng::normal(&mut rng::stream(seed, QUERY), [1, cfg.embed_dim], 1.0))?;
    cfg.encoder().init_params(&mut store, ENCODER, seed)?;
    for head in [STRAIGHT_DECODER, LEFT_DECODER] {
        cfg.decoder().init_params(&mut store, head, cfg.embed_dim, seed)?;
    }
    Ok(store)
}

/// The `N` frames of one prediction, oldest first; the last is the current
/// frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer<T> {
    frames: Vec<Tensor<T>>,
}

impl<T: Real> ImageBuffer<T> {
    /// Frames must share one `C×H×W` shape and hold values in `[0, 1]`.
    pub fn new(frames: Vec<Tensor<T>>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::contract("an image buffer needs at least one frame"))?;
        if first.rank() != 3 {
            return Err(Error::shape(format!("frames must be C×H×W, got {:?}", first.shape())));
        }
        for (i, f) in frames.iter().enumerate() {
            if f.shape() != first.shape() {
                return Err(Error::shape(format!(
                    "frame {i} has shape {:?}, frame 0 has {:?}",
                    f.shape(),
                    first.shape()
                )));
            }
            if !f.data().iter().all(|v| *v >= T::zero() && *v <= T::one()) {
                return Err(Error::contract(format!("frame {i} has values outside [0, 1]")));
            }
        }
        Ok(ImageBuffer { frames })
    }

    pub fn frames(&self) -> &[Tensor<T>] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn current(&self) -> &Tensor<T> {
        &self.frames[self.frames.len() - 1]
    }
}

/// Everything a buffer pass records on the tape.
pub struct ModelOutput<'t, T: Real> {
    pub straight: Var<'t, T>,
    pub left: Var<'t, T>,
    /// Margin-free logits, used for predictions. Equal to `straight` and
    /// `left` when no targets were given.
    pub straight_inference: Var<'t, T>,
    pub left_inference: Var<'t, T>,
    /// One embedding per buffer step; the heads read the last.
    pub embeddings: Vec<Var<'t, T>>,
    pub feature_maps: Vec<FeatureMap<'t, T>>,
}

/// Runs the buffer loop over `frames` and both heads on the final
/// embedding.
///
/// `targets` (straight, left) switch the heads to margin-applied training
/// logits; without them the logits are margin-free.
pub fn model_forward<'t, T: Real>(
    frames: &[Var<'t, T>],
    params: &BoundParams<'t, T>,
    cfg: &ModelConfig,
    targets: Option<(usize, usize)>,
) -> Result<ModelOutput<'t, T>> {
    if frames.len() != cfg.buffer_len {
        return Err(Error::contract(format!(
            "expected a buffer of N = {} frames, got {}",
            cfg.buffer_len,
            frames.len()
        )));
    }
    let feature_maps = frames
        .iter()
        .map(|&f| backbone_forward(f, params, cfg))
        .collect::<Result<Vec<_>>>()?;
    let query = params.get(QUERY)?;
    let encoder = EncoderVars::bind(params, ENCODER)?;
    let encoder_cfg = cfg.encoder();
    let mut history = HistoryBank::new(cfg.history_mode);
    let mut embeddings = Vec::with_capacity(frames.len());
    for map in &feature_maps {
        let e = encoder_layer(query, map, &history, &encoder, &encoder_cfg)?;
        history.push(e);
        embeddings.push(e);
    }
    let last = embeddings[embeddings.len() - 1];
    let straight = CentreBank::bind(params, STRAIGHT_DECODER, cfg.decoder())?;
    let left = CentreBank::bind(params, LEFT_DECODER, cfg.decoder())?;
    let straight_inference = arcface_logits(last, &straight, None)?;
    let left_inference = arcface_logits(last, &left, None)?;
    let (straight, left) = match targets {
        Some((s, l)) => (arcface_logits(last, &straight, Some(s))?, arcface_logits(last, &left, Some(l))?),
        None => (straight_inference, left_inference),
    };
    Ok(ModelOutput {
        straight,
        left,
        straight_inference,
        left_inference,
        embeddings,
        feature_maps,
    })
}

/// Margin-free class probabilities of both heads.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub straight: [f64; 2],
    pub left: [f64; 2],
}

impl Prediction {
    pub fn straight_class(&self) -> usize {
        argmax(&self.straight)
    }

    pub fn left_class(&self) -> usize {
        argmax(&self.left)
    }
}

fn probabilities<T: Real>(logits: Var<'_, T>) -> Result<[f64; 2]> {
    let p = logits.softmax(0)?.value();
    Ok([p.data()[0].as_f64(), p.data()[1].as_f64()])
}

/// A configuration with its single-precision parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore<f32>,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        Ok(Model { config, params })
    }

    /// Wraps existing parameters after checking that their names and
    /// shapes are exactly those `config` requires.
    pub fn from_params(config: ModelConfig, params: ParamStore<f32>) -> Result<Self> {
        let template = init_params::<f32>(&config, 0)?;
        for (name, t) in template.iter() {
            let got = params
                .get(name)
                .ok_or_else(|| Error::contract(format!("missing parameter `{name}`")))?;
            if got.shape() != t.shape() {
                return Err(Error::shape(format!(
                    "parameter `{name}` has shape {:?}, config requires {:?}",
                    got.shape(),
                    t.shape()
                )));
            }
        }
        if let Some(extra) = params.names().find(|n| template.get(n).is_none()) {
            return Err(Error::contract(format!("unknown parameter `{extra}`")));
        }
        Ok(Model { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.params
    }

    pub fn into_parts(self) -> (ModelConfig, ParamStore<f32>) {
        (self.config, self.params)
    }

    /// Margin-free inference on one buffer.
    pub fn predict(&self, buffer: &ImageBuffer<f32>) -> Result<Prediction> {
        let tape = Tape::new();
        let bound = self.params.bind(&tape);
        let frames: Vec<_> = buffer.frames().iter().map(|f| tape.constant(f.clone())).collect();
        let out = model_forward(&frames, &bound, &self.config, None)?;
        Ok(Prediction {
            straight: probabilities(out.straight)?,
            left: probabilities(out.left)?,
        })
    }
}
