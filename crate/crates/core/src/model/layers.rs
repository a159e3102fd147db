use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::ParamStore;
use crate::embedding::EmbeddingParams;
use crate::error::{Error, Result};
use crate::numeric::{Element, Graph, NdArray, Var, LAYER_NORM_EPS};

/// One forward evaluation: binds named parameters into a graph on first use
/// and owns the dropout RNG when training.
pub struct Forward<'a, T: Element> {
    pub graph: &'a Graph<T>,
    params: &'a ParamStore<T>,
    bound: RefCell<HashMap<String, Var>>,
    trainable: bool,
    dropout: Option<(f64, RefCell<&'a mut ChaCha8Rng>)>,
}

impl<'a, T: Element> Forward<'a, T> {
    /// Inference: parameters are constants, no dropout.
    pub fn eval(graph: &'a Graph<T>, params: &'a ParamStore<T>) -> Self {
        Forward {
            graph,
            params,
            bound: RefCell::new(HashMap::new()),
            trainable: false,
            dropout: None,
        }
    }

    /// Parameters are differentiable. Dropout is active when `dropout` is
    /// given with a positive rate.
    pub fn train(graph: &'a Graph<T>, params: &'a ParamStore<T>, dropout: Option<(f64, &'a mut ChaCha8Rng)>) -> Self {
        Forward {
            graph,
            params,
            bound: RefCell::new(HashMap::new()),
            trainable: true,
            dropout: dropout.filter(|(p, _)| *p > 0.0).map(|(p, r)| (p, RefCell::new(r))),
        }
    }

    pub fn param(&self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.borrow().get(name) {
            return Ok(v);
        }
        let value = self.params.require(name)?;
        let v = self.graph.leaf(Arc::clone(value), self.trainable);
        self.bound.borrow_mut().insert(name.to_string(), v);
        Ok(v)
    }

    /// Parameters touched so far, sorted by name.
    pub fn bound(&self) -> Vec<(String, Var)> {
        let mut out: Vec<_> = self.bound.borrow().iter().map(|(k, v)| (k.clone(), *v)).collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    pub fn dropout(&self, x: Var) -> Result<Var> {
        let Some((p, rng)) = &self.dropout else {
            return Ok(x);
        };
        let shape = self.graph.shape(x);
        let n = shape.iter().product();
        let keep = T::of(1.0 / (1.0 - p));
        let mut rng = rng.borrow_mut();
        let mask: Vec<T> = (0..n)
            .map(|_| if rng.random::<f64>() < *p { T::zero() } else { keep })
            .collect();
        self.graph.mul_const(x, Arc::new(NdArray::new(shape, mask)?))
    }

    pub fn linear(&self, x: Var, prefix: &str) -> Result<Var> {
        let w = self.param(&format!("{prefix}.w"))?;
        let b = self.param(&format!("{prefix}.b"))?;
        let y = self.graph.matmul(x, w)?;
        self.graph.add_row(y, b)
    }

    pub fn layer_norm(&self, x: Var, prefix: &str) -> Result<Var> {
        let gamma = self.param(&format!("{prefix}.gamma"))?;
        let beta = self.param(&format!("{prefix}.beta"))?;
        self.graph.layer_norm(x, gamma, beta, T::of(LAYER_NORM_EPS))
    }

    pub fn embedding(&self, prefix: &str, d_model: usize, p: usize, patched: bool) -> Result<EmbeddingParams> {
        let stamp = |name: &str| self.param(&format!("{prefix}.{name}"));
        Ok(EmbeddingParams {
            sp_kernel: self.param(&format!("{prefix}.sp"))?,
            stamp_tables: [stamp("month")?, stamp("day")?, stamp("hour")?, stamp("minute")?],
            patch_kernels: if patched {
                Some([
                    self.param(&format!("{prefix}.patch1"))?,
                    self.param(&format!("{prefix}.patch2"))?,
                ])
            } else {
                None
            },
            d_model,
            p,
        })
    }
}

/// Scaled dot-product attention over `n_heads` column groups; scale is
/// `1/sqrt(d_model / n_heads)`. With `causal`, query `i` sees keys `j <= i`.
pub fn multi_head_attention<T: Element>(
    fx: &Forward<'_, T>,
    prefix: &str,
    q_src: Var,
    kv_src: Var,
    n_heads: usize,
    causal: bool,
) -> Result<Var> {
    let g = fx.graph;
    let d = g.shape(q_src)[1];
    if n_heads == 0 || !d.is_multiple_of(n_heads) {
        return Err(Error::config(format!("d_model {d} not divisible by {n_heads} heads")));
    }
    if g.shape(kv_src)[1] != d {
        return Err(Error::dim(format!(
            "attention: query width {d}, key/value width {}",
            g.shape(kv_src)[1]
        )));
    }
    let q = fx.linear(q_src, &format!("{prefix}.q"))?;
    let k = fx.linear(kv_src, &format!("{prefix}.k"))?;
    let v = fx.linear(kv_src, &format!("{prefix}.v"))?;
    let dh = d / n_heads;
    let scale = T::of(1.0 / (dh as f64).sqrt());
    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qh = g.slice_cols(q, h * dh, dh)?;
        let kh = g.slice_cols(k, h * dh, dh)?;
        let vh = g.slice_cols(v, h * dh, dh)?;
        let kt = g.transpose(kh)?;
        let scores = g.scale(g.matmul(qh, kt)?, scale);
        let weights = if causal {
            g.causal_softmax(scores)?
        } else {
            g.softmax(scores)
        };
        heads.push(g.matmul(weights, vh)?);
    }
    let joined = if heads.len() == 1 {
        heads[0]
    } else {
        g.concat_cols(&heads)?
    };
    fx.linear(joined, &format!("{prefix}.o"))
}

/// `max(0, x W1 + b1) W2 + b2`
pub fn mlp<T: Element>(fx: &Forward<'_, T>, prefix: &str, x: Var) -> Result<Var> {
    let h = fx.linear(x, &format!("{prefix}.fc1"))?;
    let h = fx.graph.relu(h);
    fx.linear(h, &format!("{prefix}.fc2"))
}

/// Post-norm block: `z' = LN(z + MSA(z))`, `out = LN(z' + MLP(z'))`.
pub fn encoder_block<T: Element>(fx: &Forward<'_, T>, prefix: &str, z: Var, n_heads: usize) -> Result<Var> {
    let g = fx.graph;
    let a = multi_head_attention(fx, &format!("{prefix}.attn"), z, z, n_heads, false)?;
    let z1 = fx.layer_norm(g.add(z, fx.dropout(a)?)?, &format!("{prefix}.ln1"))?;
    let m = mlp(fx, &format!("{prefix}.mlp"), z1)?;
    fx.layer_norm(g.add(z1, fx.dropout(m)?)?, &format!("{prefix}.ln2"))
}

/// `z' = LN(z + MMSA(z))`, `z'' = LN(z' + MSA(z', enc))`, `out = LN(z'' + MLP(z''))`.
pub fn decoder_block<T: Element>(
    fx: &Forward<'_, T>,
    prefix: &str,
    z: Var,
    enc_out: Var,
    n_heads: usize,
) -> Result<Var> {
    let g = fx.graph;
    let a = multi_head_attention(fx, &format!("{prefix}.self_attn"), z, z, n_heads, true)?;
    let z1 = fx.layer_norm(g.add(z, fx.dropout(a)?)?, &format!("{prefix}.ln1"))?;
    let c = multi_head_attention(fx, &format!("{prefix}.cross_attn"), z1, enc_out, n_heads, false)?;
    let z2 = fx.layer_norm(g.add(z1, fx.dropout(c)?)?, &format!("{prefix}.ln2"))?;
    let m = mlp(fx, &format!("{prefix}.mlp"), z2)?;
    fx.layer_norm(g.add(z2, fx.dropout(m)?)?, &format!("{prefix}.ln3"))
}
