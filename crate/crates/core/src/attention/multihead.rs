use super::layers::{init_linear, Init, Linear};
use crate::error::{Error, Result};
use crate::tensor::{BoundParams, ParamStore, Real, Var};

/// Query, key, value and output projections of one attention block.
#[derive(Clone, Copy)]
pub struct MultiheadVars<'t, T: Real> {
    pub query: Linear<'t, T>,
    pub key: Linear<'t, T>,
    pub value: Linear<'t, T>,
    pub output: Linear<'t, T>,
}

impl<'t, T: Real> MultiheadVars<'t, T> {
    pub fn bind(params: &BoundParams<'t, T>, prefix: &str) -> Result<Self> {
        Ok(MultiheadVars {
            query: Linear::bind(params, &format!("{prefix}.query"))?,
            key: Linear::bind(params, &format!("{prefix}.key"))?,
            value: Linear::bind(params, &format!("{prefix}.value"))?,
            output: Linear::bind(params, &format!("{prefix}.output"))?,
        })
    }
}

pub fn init_multihead<T: Real>(store: &mut ParamStore<T>, prefix: &str, dim: usize, seed: u64) -> Result<()> {
    for part in ["query", "key", "value", "output"] {
        init_linear(store, &format!("{prefix}.{part}"), dim, dim, Init::Xavier, seed)?;
    }
    Ok(())
}

/// Output of an attention block together with the per-head weight matrices
/// (`L_q × L_k`, rows summing to one).
pub struct Attended<'t, T: Real> {
    pub output: Var<'t, T>,
    pub weights: Vec<Var<'t, T>>,
}

/// Scaled dot-product attention with `num_heads` heads over `q: L_q×D`,
/// `k, v: L_k×D`.
pub fn multihead_attention<'t, T: Real>(
    q: Var<'t, T>,
    k: Var<'t, T>,
    v: Var<'t, T>,
    vars: &MultiheadVars<'t, T>,
    num_heads: usize,
) -> Result<Var<'t, T>> {
    Ok(multihead_attention_weights(q, k, v, vars, num_heads)?.output)
}

/// [`multihead_attention`] that also returns the attention weights.
pub fn multihead_attention_weights<'t, T: Real>(
    q: Var<'t, T>,
    k: Var<'t, T>,
    v: Var<'t, T>,
    vars: &MultiheadVars<'t, T>,
    num_heads: usize,
) -> Result<Attended<'t, T>> {
    let (qs, ks, vs) = (q.shape(), k.shape(), v.shape());
    if qs.len() != 2 || ks.len() != 2 || ks != vs || qs[1] != ks[1] {
        return Err(Error::shape(format!(
            "attention: q {qs:?}, k {ks:?}, v {vs:?}"
        )));
    }
    let dim = qs[1];
    if num_heads == 0 || dim % num_heads != 0 {
        return Err(Error::shape(format!(
            "embedding width {dim} not divisible by {num_heads} heads"
        )));
    }
    let head_dim = dim / num_heads;
    let scale = T::lit(1.0 / (head_dim as f64).sqrt());

    let qp = vars.query.forward(q)?;
    let kp = vars.key.forward(k)?;
    let vp = vars.value.forward(v)?;
    let mut heads = Vec::with_capacity(num_heads);
    let mut weights = Vec::with_capacity(num_heads);
    for h in 0..num_heads {
        let qh = qp.slice(1, h * head_dim, head_dim)?;
        let kh = kp.slice(1, h * head_dim, head_dim)?;
        let vh = vp.slice(1, h * head_dim, head_dim)?;
        let w = qh.matmul(kh.t()?)?.scale(scale).softmax(1)?;
        heads.push(w.matmul(vh)?);
        weights.push(w);
    }
    let joined = q.tape().concat(&heads, 1)?;
    Ok(Attended {
        output: vars.output.forward(joined)?,
        weights,
    })
}
