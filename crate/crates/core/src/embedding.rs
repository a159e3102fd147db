//! Token construction from raw series.
//!
//! A time-step embedding is the sum of a scalar projection (width-3 conv),
//! a sinusoidal position code and learned calendar-stamp lookups. The patch
//! path then downsamples that sequence with two conv stages whose kernel
//! width equals their stride, so each output token covers `p²` consecutive
//! time steps.

use crate::data::TimeMarks;
use crate::error::{Error, Result};
use crate::numeric::{Element, Graph, NdArray, Var};

/// Stamp vocabularies: month, day of month, hour, minute.
pub const STAMP_VOCAB: [usize; 4] = [12, 31, 24, 60];

/// Kernel width of the scalar projection.
pub const SCALAR_KERNEL: usize = 3;

/// Graph handles for one embedding stack.
#[derive(Debug, Clone, Copy)]
pub struct EmbeddingParams {
    /// `[3, d_x, d_model]`
    pub sp_kernel: Var,
    /// `[12|31|24|60, d_model]`
    pub stamp_tables: [Var; 4],
    /// Two `[p, d_model, d_model]` kernels.
    pub patch_kernels: Option<[Var; 2]>,
    pub d_model: usize,
    pub p: usize,
}

pub fn scalar_projection<T: Element>(g: &Graph<T>, x: Var, params: &EmbeddingParams) -> Result<Var> {
    let (xs, ks) = (g.shape(x), g.shape(params.sp_kernel));
    if xs.len() != 2 || ks.len() != 3 || xs[1] != ks[1] {
        return Err(Error::dim(format!(
            "scalar projection: input {xs:?} does not match kernel {ks:?}"
        )));
    }
    g.conv1d(x, params.sp_kernel, 1, SCALAR_KERNEL / 2)
}

/// Sinusoidal code: `PE(i, 2j) = sin(i / 10000^(2j/d))`,
/// `PE(i, 2j+1) = cos(i / 10000^(2j/d))`, with zero-based `i` and `j`.
pub fn positional_encoding<T: Element>(len: usize, d_model: usize) -> Result<NdArray<T>> {
    positional_encoding_from(0, len, d_model)
}

/// As [`positional_encoding`] for positions `start .. start + len`.
pub fn positional_encoding_from<T: Element>(start: usize, len: usize, d_model: usize) -> Result<NdArray<T>> {
    if !d_model.is_multiple_of(2) {
        return Err(Error::config(format!("d_model must be even, got {d_model}")));
    }
    let mut data = Vec::with_capacity(len * d_model);
    for i in start..start + len {
        for j in 0..d_model / 2 {
            let angle = i as f64 / 10000f64.powf(2.0 * j as f64 / d_model as f64);
            data.push(T::of(angle.sin()));
            data.push(T::of(angle.cos()));
        }
    }
    NdArray::new(vec![len, d_model], data)
}

pub fn stamp_embedding<T: Element>(g: &Graph<T>, marks: &TimeMarks, params: &EmbeddingParams) -> Result<Var> {
    let columns = marks.lookup_ids();
    let mut total: Option<Var> = None;
    for (table, ids) in params.stamp_tables.iter().zip(columns.iter()) {
        let part = g.lookup(*table, ids)?;
        total = Some(match total {
            None => part,
            Some(t) => g.add(t, part)?,
        });
    }
    total.ok_or_else(|| Error::dim("no stamp tables"))
}

/// `SP + PE + SE` with positions starting at `pos_offset`.
pub fn embed_at<T: Element>(
    g: &Graph<T>,
    x: Var,
    marks: &TimeMarks,
    params: &EmbeddingParams,
    pos_offset: usize,
) -> Result<Var> {
    let len = g.shape(x)[0];
    if marks.len() != len {
        return Err(Error::dim(format!(
            "embedding: {} time marks for {} steps",
            marks.len(),
            len
        )));
    }
    let sp = scalar_projection(g, x, params)?;
    let pe = g.constant(positional_encoding_from(pos_offset, len, params.d_model)?);
    let se = stamp_embedding(g, marks, params)?;
    let sum = g.add(sp, pe)?;
    g.add(sum, se)
}

pub fn embed<T: Element>(g: &Graph<T>, x: Var, marks: &TimeMarks, params: &EmbeddingParams) -> Result<Var> {
    embed_at(g, x, marks, params, 0)
}

/// Two conv stages with kernel width = stride = `p`: `[L_x, d] -> [L_x / p², d]`.
pub fn patch_embed<T: Element>(g: &Graph<T>, tokens: Var, params: &EmbeddingParams) -> Result<Var> {
    let [first, second] = params
        .patch_kernels
        .ok_or_else(|| Error::config("embedding has no patch kernels"))?;
    let len = g.shape(tokens)[0];
    let total = params.p * params.p;
    if params.p == 0 || !len.is_multiple_of(total) {
        return Err(Error::config(format!(
            "input length {len} is not divisible by p² (p = {})",
            params.p
        )));
    }
    let h = g.conv1d(tokens, first, params.p, 0)?;
    g.conv1d(h, second, params.p, 0)
}

/// Embedding followed by patching.
pub fn patch_tokens<T: Element>(g: &Graph<T>, x: Var, marks: &TimeMarks, params: &EmbeddingParams) -> Result<Var> {
    let e = embed(g, x, marks, params)?;
    patch_embed(g, e, params)
}

/// One token per time step; identical to [`embed_at`].
pub fn nonpatch_embed<T: Element>(
    g: &Graph<T>,
    x: Var,
    marks: &TimeMarks,
    params: &EmbeddingParams,
    pos_offset: usize,
) -> Result<Var> {
    embed_at(g, x, marks, params, pos_offset)
}
