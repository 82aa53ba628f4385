use super::layers::{init_linear, Init, Linear};
use crate::error::{Error, Result};
use crate::tensor::{BoundParams, ParamStore, Real, Tensor, Var};

/// `C×H×W` feature map on a tape.
///
/// Normalized coordinates: `u ∈ [0, 1]` spans the width and `v ∈ [0, 1]`
/// spans the height.
#[derive(Clone, Copy)]
pub struct FeatureMap<'t, T: Real> {
    data: Var<'t, T>,
    channels: usize,
    height: usize,
    width: usize,
}

impl<'t, T: Real> FeatureMap<'t, T> {
    pub fn new(data: Var<'t, T>) -> Result<Self> {
        match data.shape()[..] {
            [channels, height, width] => Ok(FeatureMap {
                data,
                channels,
                height,
                width,
            }),
            ref other => Err(Error::shape(format!("feature map must be C×H×W, got {other:?}"))),
        }
    }

    pub fn data(&self) -> Var<'t, T> {
        self.data
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }
}

/// Feature vector `[C]` at normalized location `p = (u, v)`.
pub fn bilinear_sample<'t, T: Real>(map: &FeatureMap<'t, T>, p: Var<'t, T>) -> Result<Var<'t, T>> {
    let locs = p.reshape([1, 2])?;
    map.data.bilinear_sample(locs)?.reshape([map.channels])
}

/// A sampling location with its attention weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingPoint {
    pub u: f64,
    pub v: f64,
    pub weight: f64,
}

/// Projections of the spatial cross-attention block.
#[derive(Clone, Copy)]
pub struct DeformableVars<'t, T: Real> {
    /// `D → 2·heads`, squashed by a sigmoid into per-head reference points.
    pub reference: Linear<'t, T>,
    /// `D → 2·heads·points`, offsets in feature-map cells.
    pub offsets: Linear<'t, T>,
    /// `D → heads·points`, attention logits.
    pub logits: Linear<'t, T>,
    pub value: Linear<'t, T>,
    pub output: Linear<'t, T>,
}

impl<'t, T: Real> DeformableVars<'t, T> {
    pub fn bind(params: &BoundParams<'t, T>, prefix: &str) -> Result<Self> {
        Ok(DeformableVars {
            reference: Linear::bind(params, &format!("{prefix}.reference"))?,
            offsets: Linear::bind(params, &format!("{prefix}.offsets"))?,
            logits: Linear::bind(params, &format!("{prefix}.logits"))?,
            value: Linear::bind(params, &format!("{prefix}.value"))?,
            output: Linear::bind(params, &format!("{prefix}.output"))?,
        })
    }
}

/// Offsets and logits start at zero so every head initially attends
/// uniformly to its reference point.
pub fn init_deformable<T: Real>(
    store: &mut ParamStore<T>,
    prefix: &str,
    dim: usize,
    num_heads: usize,
    num_points: usize,
    seed: u64,
) -> Result<()> {
    let hk = num_heads * num_points;
    init_linear(store, &format!("{prefix}.reference"), dim, 2 * num_heads, Init::Xavier, seed)?;
    init_linear(store, &format!("{prefix}.offsets"), dim, 2 * hk, Init::Zeros, seed)?;
    init_linear(store, &format!("{prefix}.logits"), dim, hk, Init::Zeros, seed)?;
    init_linear(store, &format!("{prefix}.value"), dim, dim, Init::Xavier, seed)?;
    init_linear(store, &format!("{prefix}.output"), dim, dim, Init::Xavier, seed)
}

/// Deformable attention result with the sampling geometry that produced it.
pub struct Deformed<'t, T: Real> {
    pub output: Var<'t, T>,
    /// `(heads·points) × 2` clamped `(u, v)` locations, head-major.
    pub locations: Var<'t, T>,
    /// `heads × points` softmax weights.
    pub weights: Var<'t, T>,
}

impl<T: Real> Deformed<'_, T> {
    /// Sampling points grouped per head.
    pub fn sampling_points(&self) -> Vec<Vec<SamplingPoint>> {
        let locs = self.locations.value();
        let weights = self.weights.value();
        let points = weights.shape()[1];
        weights
            .data()
            .chunks(points)
            .enumerate()
            .map(|(h, ws)| {
                ws.iter()
                    .enumerate()
                    .map(|(k, w)| {
                        let i = h * points + k;
                        SamplingPoint {
                            u: locs.data()[2 * i].as_f64(),
                            v: locs.data()[2 * i + 1].as_f64(),
                            weight: w.as_f64(),
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

/// Attention of a single query `q: 1×D` over `num_points` bilinear samples
/// per head around a learned reference point in `map`.
pub fn deformable_attention<'t, T: Real>(
    q: Var<'t, T>,
    map: &FeatureMap<'t, T>,
    vars: &DeformableVars<'t, T>,
    num_heads: usize,
    num_points: usize,
) -> Result<Var<'t, T>> {
    Ok(deformable_attention_detailed(q, map, vars, num_heads, num_points)?.output)
}

pub fn deformable_attention_detailed<'t, T: Real>(
    q: Var<'t, T>,
    map: &FeatureMap<'t, T>,
    vars: &DeformableVars<'t, T>,
    num_heads: usize,
    num_points: usize,
) -> Result<Deformed<'t, T>> {
    let tape = q.tape();
    let qs = q.shape();
    if qs.len() != 2 || qs[0] != 1 {
        return Err(Error::shape(format!("deformable query must be 1×D, got {qs:?}")));
    }
    let dim = qs[1];
    if map.channels != dim {
        return Err(Error::shape(format!(
            "feature map has {} channels, query width is {dim}",
            map.channels
        )));
    }
    if num_heads == 0 || num_points == 0 || !dim.is_multiple_of(num_heads) {
        return Err(Error::shape(format!(
            "{num_heads} heads × {num_points} points for width {dim}"
        )));
    }
    let head_dim = dim / num_heads;
    let hk = num_heads * num_points;

    // Row h·K + k of `expand` selects head h's reference point.
    let mut expand = Tensor::zeros([hk, num_heads]);
    for h in 0..num_heads {
        for k in 0..num_points {
            expand.data_mut()[(h * num_points + k) * num_heads + h] = T::one();
        }
    }
    let reference = vars.reference.forward(q)?.sigmoid().reshape([num_heads, 2])?;
    let reference = tape.constant(expand).matmul(reference)?;

    let mut cell = Tensor::zeros([hk, 2]);
    for row in cell.data_mut().chunks_mut(2) {
        row[0] = T::one() / T::lit(map.width as f64);
        row[1] = T::one() / T::lit(map.height as f64);
    }
    let offsets = vars.offsets.forward(q)?.reshape([hk, 2])?.mul(tape.constant(cell))?;
    let locations = reference.add(offsets)?.clamp(T::zero(), T::one());

    let weights = vars.logits.forward(q)?.reshape([num_heads, num_points])?.softmax(1)?;
    let sampled = map.data.bilinear_sample(locations)?;
    let values = vars.value.forward(sampled)?;

    let mut heads = Vec::with_capacity(num_heads);
    for h in 0..num_heads {
        let vh = values
            .slice(0, h * num_points, num_points)?
            .slice(1, h * head_dim, head_dim)?;
        heads.push(weights.slice(0, h, 1)?.matmul(vh)?);
    }
    let joined = tape.concat(&heads, 1)?;
    Ok(Deformed {
        output: vars.output.forward(joined)?,
        locations,
        weights,
    })
}
