use crate::error::{Error, Result};
use crate::masking::MaskPlan;
use crate::numeric::{Element, Graph, NdArray, Var};

/// Mean squared error over the masked rows of `pred` only, averaged over
/// `L_masked * W` elements. `targets` holds one row per masked id, in the
/// plan's masked order.
pub fn masked_mse_loss<T: Element>(g: &Graph<T>, pred: Var, targets: &NdArray<T>, plan: &MaskPlan) -> Result<Var> {
    if plan.masked().is_empty() {
        return Err(Error::config("masked loss with no masked tokens"));
    }
    let shape = g.shape(pred);
    if shape.len() != 2 || shape[0] != plan.len() {
        return Err(Error::dim(format!(
            "prediction {shape:?} does not cover the {} planned tokens",
            plan.len()
        )));
    }
    if targets.shape() != [plan.masked().len(), shape[1]] {
        return Err(Error::dim(format!(
            "targets {:?}, expected [{}, {}]",
            targets.shape(),
            plan.masked().len(),
            shape[1]
        )));
    }
    let picked = g.gather_rows(pred, plan.masked())?;
    mse_loss(g, picked, targets)
}

/// Plain mean squared error against a constant target.
pub fn mse_loss<T: Element>(g: &Graph<T>, pred: Var, target: &NdArray<T>) -> Result<Var> {
    let t = g.constant(target.clone());
    let diff = g.sub(pred, t)?;
    Ok(g.mean(g.mul(diff, diff)?))
}
