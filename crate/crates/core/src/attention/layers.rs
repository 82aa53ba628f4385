use crate::error::Result;
use crate::tensor::{rng, BoundParams, ParamStore, Real, Tensor, Var};

/// Affine map `x · W + b` with `W: in×out`.
#[derive(Clone, Copy)]
pub struct Linear<'t, T: Real> {
    pub weight: Var<'t, T>,
    pub bias: Var<'t, T>,
}

impl<'t, T: Real> Linear<'t, T> {
    pub fn bind(params: &BoundParams<'t, T>, prefix: &str) -> Result<Self> {
        Ok(Linear {
            weight: params.get(&format!("{prefix}.weight"))?,
            bias: params.get(&format!("{prefix}.bias"))?,
        })
    }

    pub fn forward(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.matmul(self.weight)?.add_row(self.bias)
    }
}

/// How a linear layer's weight is initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Normal with variance `2 / (fan_in + fan_out)`.
    Xavier,
    Zeros,
}

pub fn init_linear<T: Real>(
    store: &mut ParamStore<T>,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
    init: Init,
    seed: u64,
) -> Result<()> {
    let weight = match init {
        Init::Xavier => {
            let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
            rng::normal(&mut rng::stream(seed, prefix), [fan_in, fan_out], std)
        }
        Init::Zeros => Tensor::zeros([fan_in, fan_out]),
    };
    store.insert(format!("{prefix}.weight"), weight)?;
    store.insert(format!("{prefix}.bias"), Tensor::zeros([fan_out]))
}

/// Layer-norm scale and shift.
#[derive(Clone, Copy)]
pub struct Norm<'t, T: Real> {
    pub gamma: Var<'t, T>,
    pub beta: Var<'t, T>,
}

pub(crate) const NORM_EPS: f64 = 1e-5;

impl<'t, T: Real> Norm<'t, T> {
    pub fn bind(params: &BoundParams<'t, T>, prefix: &str) -> Result<Self> {
        Ok(Norm {
            gamma: params.get(&format!("{prefix}.gamma"))?,
            beta: params.get(&format!("{prefix}.beta"))?,
        })
    }

    pub fn forward(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.layer_norm(self.gamma, self.beta, T::lit(NORM_EPS))
    }
}

pub fn init_norm<T: Real>(store: &mut ParamStore<T>, prefix: &str, dim: usize) -> Result<()> {
    store.insert(format!("{prefix}.gamma"), Tensor::ones([dim]))?;
    store.insert(format!("{prefix}.beta"), Tensor::zeros([dim]))
}
