//! Angular-margin class decoder with several cluster centres per class.
//!
//! Each class owns `w` learnable centres. The class score is the cosine
//! between the embedding and the class's nearest centre; during training an
//! additive angular margin is applied to the target class before scaling.

use crate::error::{Error, Result};
use crate::tensor::{rng, BoundParams, ParamStore, Real, Tensor, Var};

/// Cosines are kept strictly inside `(-1, 1)` so that `acos` stays finite
/// and differentiable.
pub const COSINE_LIMIT: f64 = 1.0 - 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArcConfig {
    pub num_classes: usize,
    pub centres_per_class: usize,
    /// Additive angular margin in radians.
    pub margin: f64,
    pub scale: f64,
}

impl Default for ArcConfig {
    fn default() -> Self {
        ArcConfig {
            num_classes: 2,
            centres_per_class: 1,
            margin: 0.5,
            scale: 64.0,
        }
    }
}

impl ArcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config("num_classes", "a decoder needs at least two classes"));
        }
        if self.centres_per_class == 0 {
            return Err(Error::config("centres_per_class", "must be at least 1"));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::config("scale", format!("must be positive, got {}", self.scale)));
        }
        if !(self.margin.is_finite() && self.margin >= 0.0) {
            return Err(Error::config("margin", format!("must be non-negative, got {}", self.margin)));
        }
        Ok(())
    }

    /// Registers `{prefix}.centres` (`classes × w × dim`), each centre drawn
    /// uniformly on the unit sphere.
    pub fn init_params<T: Real>(&self, store: &mut ParamStore<T>, prefix: &str, dim: usize, seed: u64) -> Result<()> {
        self.validate()?;
        let name = format!("{prefix}.centres");
        let count = self.num_classes * self.centres_per_class;
        let mut draws = rng::normal::<f64>(&mut rng::stream(seed, &name), [count, dim], 1.0).into_data();
        for centre in draws.chunks_mut(dim) {
            let norm = centre.iter().map(|v| v * v).sum::<f64>().sqrt();
            centre.iter_mut().for_each(|v| *v /= norm);
        }
        let centres = Tensor::from_f64([self.num_classes, self.centres_per_class, dim], &draws)?;
        store.insert(name, centres)
    }
}

/// A decoder's centres bound to a tape.
#[derive(Clone, Copy)]
pub struct CentreBank<'t, T: Real> {
    pub centres: Var<'t, T>,
    pub config: ArcConfig,
}

impl<'t, T: Real> CentreBank<'t, T> {
    pub fn bind(params: &BoundParams<'t, T>, prefix: &str, config: ArcConfig) -> Result<Self> {
        let centres = params.get(&format!("{prefix}.centres"))?;
        let shape = centres.shape();
        if shape.len() != 3 || shape[0] != config.num_classes || shape[1] != config.centres_per_class {
            return Err(Error::shape(format!(
                "centres of shape {shape:?} do not match {} classes × {} centres",
                config.num_classes, config.centres_per_class
            )));
        }
        Ok(CentreBank { centres, config })
    }

    pub fn dim(&self) -> usize {
        self.centres.shape()[2]
    }
}

/// Per-class maximum cosine between `embedding` (`1×D`) and the class's
/// centres, clamped to `[-COSINE_LIMIT, COSINE_LIMIT]`. Shape `[classes]`.
pub fn class_cosines<'t, T: Real>(embedding: Var<'t, T>, bank: &CentreBank<'t, T>) -> Result<Var<'t, T>> {
    let cfg = bank.config;
    let d = bank.dim();
    if embedding.shape() != [1, d] {
        return Err(Error::shape(format!("embedding {:?} for centres of width {d}", embedding.shape())));
    }
    let e = embedding.l2_normalize(1)?;
    let c = bank
        .centres
        .reshape([cfg.num_classes * cfg.centres_per_class, d])?
        .l2_normalize(1)?;
    let limit = T::lit(COSINE_LIMIT);
    Ok(c
        .matmul(e.t()?)?
        .reshape([cfg.num_classes, cfg.centres_per_class])?
        .max_axis(1)?
        .clamp(-limit, limit))
}

/// Scaled class logits. With a `target`, the target's angle is widened by
/// the margin (capped at π) before taking its cosine.
pub fn arcface_logits<'t, T: Real>(
    embedding: Var<'t, T>,
    bank: &CentreBank<'t, T>,
    target: Option<usize>,
) -> Result<Var<'t, T>> {
    let cfg = bank.config;
    let cos = class_cosines(embedding, bank)?;
    let Some(t) = target else {
        return Ok(cos.scale(T::lit(cfg.scale)));
    };
    if t >= cfg.num_classes {
        return Err(Error::contract(format!("target class {t} out of range for {} classes", cfg.num_classes)));
    }
    if cfg.margin == 0.0 {
        return Ok(cos.scale(T::lit(cfg.scale)));
    }
    let widened = cos
        .slice(0, t, 1)?
        .acos()
        .add_scalar(T::lit(cfg.margin))
        .clamp(T::zero(), T::lit(std::f64::consts::PI))
        .cos();
    let mut parts = Vec::with_capacity(3);
    if t > 0 {
        parts.push(cos.slice(0, 0, t)?);
    }
    parts.push(widened);
    if t + 1 < cfg.num_classes {
        parts.push(cos.slice(0, t + 1, cfg.num_classes - t - 1)?);
    }
    Ok(embedding.tape().concat(&parts, 0)?.scale(T::lit(cfg.scale)))
}

/// Class probabilities from the margin-free logits.
pub fn decode<'t, T: Real>(embedding: Var<'t, T>, bank: &CentreBank<'t, T>) -> Result<Var<'t, T>> {
    arcface_logits(embedding, bank, None)?.softmax(0)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: Real>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
