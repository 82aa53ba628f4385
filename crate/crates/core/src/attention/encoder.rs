use super::deformable::{deformable_attention, init_deformable, DeformableVars, FeatureMap};
use super::layers::{init_linear, init_norm, Init, Linear, Norm};
use super::multihead::{init_multihead, MultiheadVars};
use super::temporal::{temporal_self_attention, HistoryBank};
use crate::error::{Error, Result};
use crate::tensor::{BoundParams, ParamStore, Real, Var};

/// Shape of one encoder layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub embed_dim: usize,
    pub num_heads: usize,
    /// Sampling points per head in spatial cross-attention.
    pub num_points: usize,
    /// Remove the temporal self-attention sublayer entirely.
    pub ablate_tsa: bool,
}

impl EncoderConfig {
    pub fn ffn_dim(&self) -> usize {
        4 * self.embed_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.num_heads == 0 || self.num_points == 0 {
            return Err(Error::config("embed_dim", "encoder widths must be positive"));
        }
        if !self.embed_dim.is_multiple_of(self.num_heads) {
            return Err(Error::config(
                "num_heads",
                format!("{} does not divide embed_dim {}", self.num_heads, self.embed_dim),
            ));
        }
        Ok(())
    }

    /// Registers every encoder parameter under `prefix`.
    pub fn init_params<T: Real>(&self, store: &mut ParamStore<T>, prefix: &str, seed: u64) -> Result<()> {
        self.validate()?;
        let d = self.embed_dim;
        init_multihead(store, &format!("{prefix}.tsa"), d, seed)?;
        init_deformable(store, &format!("{prefix}.sca"), d, self.num_heads, self.num_points, seed)?;
        init_linear(store, &format!("{prefix}.ffn.hidden"), d, self.ffn_dim(), Init::Xavier, seed)?;
        init_linear(store, &format!("{prefix}.ffn.out"), self.ffn_dim(), d, Init::Xavier, seed)?;
        for norm in ["norm_tsa", "norm_sca", "norm_ffn"] {
            init_norm(store, &format!("{prefix}.{norm}"), d)?;
        }
        Ok(())
    }
}

/// Encoder parameters bound to a tape.
#[derive(Clone, Copy)]
pub struct EncoderVars<'t, T: Real> {
    pub tsa: MultiheadVars<'t, T>,
    pub sca: DeformableVars<'t, T>,
    pub ffn_hidden: Linear<'t, T>,
    pub ffn_out: Linear<'t, T>,
    pub norm_tsa: Norm<'t, T>,
    pub norm_sca: Norm<'t, T>,
    pub norm_ffn: Norm<'t, T>,
}

impl<'t, T: Real> EncoderVars<'t, T> {
    pub fn bind(params: &BoundParams<'t, T>, prefix: &str) -> Result<Self> {
        Ok(EncoderVars {
            tsa: MultiheadVars::bind(params, &format!("{prefix}.tsa"))?,
            sca: DeformableVars::bind(params, &format!("{prefix}.sca"))?,
            ffn_hidden: Linear::bind(params, &format!("{prefix}.ffn.hidden"))?,
            ffn_out: Linear::bind(params, &format!("{prefix}.ffn.out"))?,
            norm_tsa: Norm::bind(params, &format!("{prefix}.norm_tsa"))?,
            norm_sca: Norm::bind(params, &format!("{prefix}.norm_sca"))?,
            norm_ffn: Norm::bind(params, &format!("{prefix}.norm_ffn"))?,
        })
    }
}

/// One buffer step: temporal self-attention, spatial cross-attention and a
/// feed-forward block, each followed by residual add and layer norm.
///
/// Returns the step's history embedding (`1×D`).
pub fn encoder_layer<'t, T: Real>(
    query: Var<'t, T>,
    map: &FeatureMap<'t, T>,
    history: &HistoryBank<'t, T>,
    vars: &EncoderVars<'t, T>,
    cfg: &EncoderConfig,
) -> Result<Var<'t, T>> {
    let x1 = if cfg.ablate_tsa {
        query
    } else {
        let tsa = temporal_self_attention(query, history, &vars.tsa, cfg.num_heads)?;
        vars.norm_tsa.forward(query.add(tsa)?)?
    };
    let sca = deformable_attention(x1, map, &vars.sca, cfg.num_heads, cfg.num_points)?;
    let x2 = vars.norm_sca.forward(x1.add(sca)?)?;
    let ffn = vars.ffn_out.forward(vars.ffn_hidden.forward(x2)?.relu())?;
    vars.norm_ffn.forward(x2.add(ffn)?)
}
