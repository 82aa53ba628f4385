use std::collections::BTreeMap;

use super::{ParamGrads, ParamStore, Real};
use crate::error::{Error, Result};

/// Adam hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment accumulators, zero until a parameter is first
/// stepped.
#[derive(Debug, Clone, Default)]
pub struct AdamState<T> {
    first_moment: BTreeMap<String, Vec<T>>,
    second_moment: BTreeMap<String, Vec<T>>,
    step_count: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new() -> Self {
        AdamState {
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self, name: &str) -> Option<&[T]> {
        self.first_moment.get(name).map(Vec::as_slice)
    }

    pub fn second_moment(&self, name: &str) -> Option<&[T]> {
        self.second_moment.get(name).map(Vec::as_slice)
    }
}

/// One bias-corrected Adam update of every parameter in `params`.
///
/// Every parameter must have a gradient in `grads`; nothing is modified if
/// one is missing.
pub fn adam_step<T: Real>(
    params: &mut ParamStore<T>,
    grads: &ParamGrads<T>,
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    for (name, p) in params.iter() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::contract(format!("no gradient for parameter `{name}`")))?;
        if g.shape() != p.shape() {
            return Err(Error::shape(format!(
                "gradient for `{name}` has shape {:?}, parameter {:?}",
                g.shape(),
                p.shape()
            )));
        }
    }

    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let one = T::one();
    let bias1 = one - b1.powi(t);
    let bias2 = one - b2.powi(t);
    let (lr, eps) = (T::lit(cfg.lr), T::lit(cfg.eps));

    let names: Vec<String> = params.names().map(str::to_owned).collect();
    for name in names {
        let g = grads[&name].data();
        let p = params.get_mut(&name).expect("name taken from store");
        let m = state
            .first_moment
            .entry(name.clone())
            .or_insert_with(|| vec![T::zero(); g.len()]);
        let v = state
            .second_moment
            .entry(name)
            .or_insert_with(|| vec![T::zero(); g.len()]);
        for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
