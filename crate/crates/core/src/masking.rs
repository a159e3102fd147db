//! Uniform random patch masking for reconstruction pretraining.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numeric::{Element, Graph, Var};

/// Which patch tokens the encoder sees.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlan {
    len: usize,
    visible: Vec<usize>,
    masked: Vec<usize>,
    ratio: f64,
    seed: Option<u64>,
}

/// `round(len * (1 - ratio))`, at least 1.
pub fn visible_count(len: usize, ratio: f64) -> usize {
    ((len as f64 * (1.0 - ratio)).round() as usize).clamp(1, len)
}

fn check(len: usize, ratio: f64) -> Result<()> {
    if len == 0 {
        return Err(Error::config("mask plan over zero tokens"));
    }
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::config(format!("masking ratio must be in [0, 1), got {ratio}")));
    }
    Ok(())
}

/// Draws a uniformly random visible subset without replacement.
pub fn sample_mask<R: Rng + ?Sized>(len: usize, ratio: f64, rng: &mut R) -> Result<MaskPlan> {
    check(len, ratio)?;
    let keep = visible_count(len, ratio);
    let mut visible = index::sample(rng, len, keep).into_vec();
    visible.sort_unstable();
    Ok(MaskPlan::from_visible_sorted(len, visible, ratio, None))
}

impl MaskPlan {
    pub fn seeded(len: usize, ratio: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut plan = sample_mask(len, ratio, &mut rng)?;
        plan.seed = Some(seed);
        Ok(plan)
    }

    /// Every token visible.
    pub fn full(len: usize) -> Self {
        MaskPlan::from_visible_sorted(len, (0..len).collect(), 0.0, None)
    }

    /// Explicit visible set; ids must be distinct and in range.
    pub fn from_visible(len: usize, mut visible: Vec<usize>) -> Result<Self> {
        visible.sort_unstable();
        visible.dedup();
        if visible.is_empty() || visible.last().is_some_and(|&v| v >= len) {
            return Err(Error::config(format!("invalid visible ids for {len} tokens")));
        }
        let ratio = 1.0 - visible.len() as f64 / len as f64;
        Ok(MaskPlan::from_visible_sorted(len, visible, ratio, None))
    }

    fn from_visible_sorted(len: usize, visible: Vec<usize>, ratio: f64, seed: Option<u64>) -> Self {
        let mut is_visible = vec![false; len];
        visible.iter().for_each(|&v| is_visible[v] = true);
        let masked = (0..len).filter(|&i| !is_visible[i]).collect();
        MaskPlan {
            len,
            visible,
            masked,
            ratio,
            seed,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn visible(&self) -> &[usize] {
        &self.visible
    }

    pub fn masked(&self) -> &[usize] {
        &self.masked
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }
}

fn check_len<T: Element>(g: &Graph<T>, tokens: Var, expected: usize, what: &str) -> Result<()> {
    let rows = g.shape(tokens).first().copied().unwrap_or(0);
    if rows != expected {
        return Err(Error::dim(format!(
            "{what}: {rows} token rows, mask plan expects {expected}"
        )));
    }
    Ok(())
}

/// Gathers visible tokens in their original order.
pub fn select_visible<T: Element>(g: &Graph<T>, tokens: Var, plan: &MaskPlan) -> Result<Var> {
    check_len(g, tokens, plan.len, "select_visible")?;
    g.gather_rows(tokens, &plan.visible)
}

/// Restores full length, putting the shared `mask_token` at masked positions.
pub fn scatter_with_mask_tokens<T: Element>(
    g: &Graph<T>,
    encoded: Var,
    plan: &MaskPlan,
    mask_token: Var,
) -> Result<Var> {
    check_len(g, encoded, plan.visible.len(), "scatter_with_mask_tokens")?;
    g.scatter_rows(encoded, mask_token, &plan.visible, plan.len)
}
