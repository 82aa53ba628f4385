use crate::datakit::RightOfWayLabel;
use crate::error::{Error, Result};
use crate::tensor::{Real, Var};

/// `−log softmax(logits)[target]` for a `[C]` logit vector.
pub fn cross_entropy<'t, T: Real>(logits: Var<'t, T>, target: usize) -> Result<Var<'t, T>> {
    let shape = logits.shape();
    if shape.len() != 1 {
        return Err(Error::shape(format!("cross_entropy expects a [C] vector, got {shape:?}")));
    }
    if target >= shape[0] {
        return Err(Error::contract(format!("target {target} out of range for {} classes", shape[0])));
    }
    Ok(logits.log_softmax(0)?.slice(0, target, 1)?.sum().neg())
}

/// Unweighted sum of the two heads' cross-entropies.
pub fn total_loss<'t, T: Real>(
    straight: Var<'t, T>,
    left: Var<'t, T>,
    label: RightOfWayLabel,
) -> Result<Var<'t, T>> {
    let (s, l) = label.targets();
    cross_entropy(straight, s)?.add(cross_entropy(left, l)?)
}
