//! Patch-token transformer: encoder, reconstruction decoder, forecasting
//! decoder and their linear heads.
//!
//! Parameter names are stable and shared with checkpoints:
//!
//! | prefix                   | role                                       |
//! |--------------------------|--------------------------------------------|
//! | `enc_embed.*`            | encoder-side embedding and patch kernels   |
//! | `encoder.{n}.*`          | encoder blocks                             |
//! | `pretrain.mask_token`    | shared mask token                          |
//! | `pretrain.decoder.{n}.*` | reconstruction decoder blocks              |
//! | `pretrain.head.*`        | `d_model -> p²·d_x` reconstruction head    |
//! | `dec_embed.*`            | forecasting-decoder embedding              |
//! | `finetune.decoder.{n}.*` | forecasting decoder blocks                 |
//! | `forecast.head.*`        | `d_model -> d_y` forecast head             |

mod config;
mod layers;
mod params;

use rand::Rng;

pub use config::ModelConfig;
pub use layers::{decoder_block, encoder_block, mlp, multi_head_attention, Forward};
pub use params::{trunc_normal, ParamStore};

use crate::data::{TimeMarks, WindowSample};
use crate::embedding::{self, positional_encoding, STAMP_VOCAB};
use crate::error::{Error, Result};
use crate::masking::{scatter_with_mask_tokens, select_visible, MaskPlan};
use crate::numeric::{Element, Graph, NdArray, Var};

pub const INIT_STD: f64 = 0.02;

/// Prefixes carried over from pretraining into fine-tuning.
pub const TRANSFER_PREFIXES: [&str; 2] = ["enc_embed.", "encoder."];

/// How a tensor is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Truncated normal, std [`INIT_STD`].
    Normal,
    Zeros,
    Ones,
}

/// Name, shape and init rule of every parameter, in declaration order.
pub type Layout = Vec<(String, Vec<usize>, Init)>;

fn linear(l: &mut Layout, prefix: &str, fan_in: usize, fan_out: usize) {
    l.push((format!("{prefix}.w"), vec![fan_in, fan_out], Init::Normal));
    l.push((format!("{prefix}.b"), vec![fan_out], Init::Zeros));
}

fn layer_norm(l: &mut Layout, prefix: &str, d: usize) {
    l.push((format!("{prefix}.gamma"), vec![d], Init::Ones));
    l.push((format!("{prefix}.beta"), vec![d], Init::Zeros));
}

fn attention(l: &mut Layout, prefix: &str, d: usize) {
    for proj in ["q", "k", "v", "o"] {
        linear(l, &format!("{prefix}.{proj}"), d, d);
    }
}

fn feed_forward(l: &mut Layout, prefix: &str, d: usize, d_ff: usize) {
    linear(l, &format!("{prefix}.fc1"), d, d_ff);
    linear(l, &format!("{prefix}.fc2"), d_ff, d);
}

fn encoder_layer(l: &mut Layout, prefix: &str, cfg: &ModelConfig) {
    attention(l, &format!("{prefix}.attn"), cfg.d_model);
    layer_norm(l, &format!("{prefix}.ln1"), cfg.d_model);
    feed_forward(l, &format!("{prefix}.mlp"), cfg.d_model, cfg.d_ff);
    layer_norm(l, &format!("{prefix}.ln2"), cfg.d_model);
}

fn decoder_layer(l: &mut Layout, prefix: &str, cfg: &ModelConfig) {
    attention(l, &format!("{prefix}.self_attn"), cfg.d_model);
    layer_norm(l, &format!("{prefix}.ln1"), cfg.d_model);
    attention(l, &format!("{prefix}.cross_attn"), cfg.d_model);
    layer_norm(l, &format!("{prefix}.ln2"), cfg.d_model);
    feed_forward(l, &format!("{prefix}.mlp"), cfg.d_model, cfg.d_ff);
    layer_norm(l, &format!("{prefix}.ln3"), cfg.d_model);
}

fn embedding_stack(l: &mut Layout, prefix: &str, cfg: &ModelConfig) {
    let d = cfg.d_model;
    l.push((
        format!("{prefix}.sp"),
        vec![embedding::SCALAR_KERNEL, cfg.d_x, d],
        Init::Normal,
    ));
    for (name, vocab) in ["month", "day", "hour", "minute"].iter().zip(STAMP_VOCAB) {
        l.push((format!("{prefix}.{name}"), vec![vocab, d], Init::Normal));
    }
    for k in ["patch1", "patch2"] {
        l.push((format!("{prefix}.{k}"), vec![cfg.patch_stride, d, d], Init::Normal));
    }
}

pub fn layout(cfg: &ModelConfig) -> Layout {
    let mut l = Vec::new();
    embedding_stack(&mut l, "enc_embed", cfg);
    for n in 0..cfg.enc_layers {
        encoder_layer(&mut l, &format!("encoder.{n}"), cfg);
    }
    l.push(("pretrain.mask_token".into(), vec![cfg.d_model], Init::Normal));
    for n in 0..cfg.pretrain_dec_layers {
        encoder_layer(&mut l, &format!("pretrain.decoder.{n}"), cfg);
    }
    linear(&mut l, "pretrain.head", cfg.d_model, cfg.recon_width());
    embedding_stack(&mut l, "dec_embed", cfg);
    for n in 0..cfg.finetune_dec_layers {
        decoder_layer(&mut l, &format!("finetune.decoder.{n}"), cfg);
    }
    linear(&mut l, "forecast.head", cfg.d_model, cfg.d_y);
    l
}

/// Fresh parameters for every part of the model.
pub fn init_params<T: Element, R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<ParamStore<T>> {
    cfg.validate()?;
    let mut s = ParamStore::new();
    for (name, shape, init) in layout(cfg) {
        let value = match init {
            Init::Normal => trunc_normal(&shape, INIT_STD, rng),
            Init::Zeros => NdArray::zeros(&shape),
            Init::Ones => NdArray::full(&shape, T::one()),
        };
        s.insert(name, value);
    }
    Ok(s)
}

/// Runs `tokens` through the encoder stack.
pub fn encode<T: Element>(fx: &Forward<'_, T>, cfg: &ModelConfig, tokens: Var) -> Result<Var> {
    let mut z = tokens;
    for n in 0..cfg.enc_layers {
        z = encoder_block(fx, &format!("encoder.{n}"), z, cfg.n_heads)?;
    }
    Ok(z)
}

/// Runs decoder tokens through the forecasting decoder stack.
pub fn decode<T: Element>(fx: &Forward<'_, T>, cfg: &ModelConfig, tokens: Var, enc_out: Var) -> Result<Var> {
    let mut z = tokens;
    for n in 0..cfg.finetune_dec_layers {
        z = decoder_block(fx, &format!("finetune.decoder.{n}"), z, enc_out, cfg.n_heads)?;
    }
    Ok(z)
}

fn check_series(g_shape: &[usize], len: usize, d_x: usize, what: &str) -> Result<()> {
    if g_shape != [len, d_x] {
        return Err(Error::dim(format!("{what}: expected [{len}, {d_x}], got {g_shape:?}")));
    }
    Ok(())
}

/// Patch tokens of an encoder window, before masking.
pub fn encoder_tokens<T: Element>(
    fx: &Forward<'_, T>,
    cfg: &ModelConfig,
    x: &NdArray<T>,
    marks: &TimeMarks,
) -> Result<Var> {
    check_series(x.shape(), cfg.input_len, cfg.d_x, "encoder input")?;
    let params = fx.embedding("enc_embed", cfg.d_model, cfg.patch_stride, true)?;
    let xv = fx.graph.constant(x.clone());
    embedding::patch_tokens(fx.graph, xv, marks, &params)
}

pub struct PretrainOutput {
    /// `[L, p²·d_x]`
    pub reconstruction: Var,
    /// Encoder output for the visible tokens, `[L_vis, d_model]`.
    pub encoded: Var,
}

/// Embed, patch, keep visible tokens, encode, restore full length with mask
/// tokens plus patch-level positions, decode and project every token back
/// to `p²·d_x` values.
pub fn pretrain_forward<T: Element>(
    fx: &Forward<'_, T>,
    cfg: &ModelConfig,
    x: &NdArray<T>,
    marks: &TimeMarks,
    plan: &MaskPlan,
) -> Result<PretrainOutput> {
    let g = fx.graph;
    let tokens = encoder_tokens(fx, cfg, x, marks)?;
    if plan.len() != cfg.n_patches() {
        return Err(Error::dim(format!(
            "mask plan over {} tokens, model has {} patches",
            plan.len(),
            cfg.n_patches()
        )));
    }
    let visible = select_visible(g, tokens, plan)?;
    let encoded = encode(fx, cfg, visible)?;
    let mask_token = fx.param("pretrain.mask_token")?;
    let full = scatter_with_mask_tokens(g, encoded, plan, mask_token)?;
    let pe = g.constant(positional_encoding(plan.len(), cfg.d_model)?);
    let mut z = g.add(full, pe)?;
    for n in 0..cfg.pretrain_dec_layers {
        z = encoder_block(fx, &format!("pretrain.decoder.{n}"), z, cfg.n_heads)?;
    }
    let reconstruction = fx.linear(z, "pretrain.head")?;
    Ok(PretrainOutput {
        reconstruction,
        encoded,
    })
}

/// Raw values grouped into `p²`-step patches (time-major within a patch),
/// restricted to the masked tokens: `[L_masked, p²·d_x]`.
pub fn reconstruction_targets<T: Element>(x_raw: &NdArray<T>, plan: &MaskPlan, p: usize) -> Result<NdArray<T>> {
    let patches = patchify(x_raw, p)?;
    if patches.shape()[0] != plan.len() {
        return Err(Error::dim(format!(
            "{} patches but mask plan covers {}",
            patches.shape()[0],
            plan.len()
        )));
    }
    let w = patches.shape()[1];
    let mut data = Vec::with_capacity(plan.masked().len() * w);
    for &m in plan.masked() {
        data.extend_from_slice(patches.row(m));
    }
    NdArray::new(vec![plan.masked().len(), w], data)
}

/// `[L_x, d_x] -> [L_x / p², p²·d_x]`.
pub fn patchify<T: Element>(x_raw: &NdArray<T>, p: usize) -> Result<NdArray<T>> {
    let total = p * p;
    if x_raw.rank() != 2 || p == 0 || !x_raw.shape()[0].is_multiple_of(total) {
        return Err(Error::config(format!(
            "series of shape {:?} is not divisible into patches of p² = {} steps",
            x_raw.shape(),
            total
        )));
    }
    let (len, d) = (x_raw.shape()[0], x_raw.shape()[1]);
    x_raw.clone().reshape(vec![len / total, total * d])
}

/// Decoder input: patched label tokens followed by one non-patched token
/// per forecast step built from a zero placeholder.
pub fn decoder_tokens<T: Element>(
    fx: &Forward<'_, T>,
    cfg: &ModelConfig,
    x_label: &NdArray<T>,
    label_marks: &TimeMarks,
    y_marks: &TimeMarks,
) -> Result<Var> {
    let g = fx.graph;
    check_series(x_label.shape(), cfg.label_len, cfg.d_x, "label segment")?;
    if y_marks.len() != cfg.pred_len {
        return Err(Error::dim(format!(
            "forecast marks: {} steps, expected {}",
            y_marks.len(),
            cfg.pred_len
        )));
    }
    let params = fx.embedding("dec_embed", cfg.d_model, cfg.patch_stride, true)?;
    let placeholder = g.constant(NdArray::zeros(&[cfg.pred_len, cfg.d_x]));
    let future = embedding::nonpatch_embed(g, placeholder, y_marks, &params, cfg.label_len)?;
    if cfg.label_len == 0 {
        return Ok(future);
    }
    let xv = g.constant(x_label.clone());
    let label = embedding::patch_tokens(g, xv, label_marks, &params)?;
    g.concat_rows(&[label, future])
}

/// Full forecasting pass: `[L_y, d_y]`.
pub fn finetune_forward<T: Element>(
    fx: &Forward<'_, T>,
    cfg: &ModelConfig,
    x: &NdArray<T>,
    marks: &TimeMarks,
    x_label: &NdArray<T>,
    label_marks: &TimeMarks,
    y_marks: &TimeMarks,
) -> Result<Var> {
    let g = fx.graph;
    let tokens = encoder_tokens(fx, cfg, x, marks)?;
    let enc_out = encode(fx, cfg, tokens)?;
    let dec_in = decoder_tokens(fx, cfg, x_label, label_marks, y_marks)?;
    let dec_out = decode(fx, cfg, dec_in, enc_out)?;
    let tail = g.slice_rows(dec_out, cfg.label_tokens(), cfg.pred_len)?;
    fx.linear(tail, "forecast.head")
}

/// Model weights plus the configuration they were built for.
#[derive(Debug, Clone, PartialEq)]
pub struct Mtsmae<T> {
    config: ModelConfig,
    params: ParamStore<T>,
}

impl<T: Element> Mtsmae<T> {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        let params = init_params(&config, rng)?;
        Ok(Mtsmae { config, params })
    }

    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        for (name, shape, _) in layout(&config) {
            match params.get(&name) {
                Some(p) if p.shape() == shape.as_slice() => {}
                Some(p) => {
                    return Err(Error::Transfer(format!(
                        "{name}: expected shape {shape:?}, found {:?}",
                        p.shape()
                    )))
                }
                None => return Err(Error::Transfer(format!("missing parameter {name}"))),
            }
        }
        Ok(Mtsmae { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore<T> {
        self.params
    }

    /// Copies encoder-side tensors from `source`, requiring equal shapes.
    pub fn transfer_encoder(&mut self, source: &ParamStore<T>) -> Result<()> {
        let mut problems = Vec::new();
        let names: Vec<String> = self
            .params
            .names()
            .filter(|n| TRANSFER_PREFIXES.iter().any(|p| n.starts_with(p)))
            .cloned()
            .collect();
        for name in &names {
            match source.get(name) {
                None => problems.push(format!("{name} (missing)")),
                Some(src) => {
                    let dst = self.params.get(name).expect("listed");
                    if src.shape() != dst.shape() {
                        problems.push(format!("{name} ({:?} vs {:?})", src.shape(), dst.shape()));
                    }
                }
            }
        }
        if !problems.is_empty() {
            return Err(Error::Transfer(format!(
                "incompatible encoder tensors: {}",
                problems.join(", ")
            )));
        }
        for name in names {
            let src = source.get(&name).expect("checked").as_ref().clone();
            self.params.insert(name, src);
        }
        Ok(())
    }

    /// Inference forecast for one window.
    pub fn forecast(&self, sample: &WindowSample<T>) -> Result<NdArray<T>> {
        let g = Graph::new();
        let fx = Forward::eval(&g, &self.params);
        let y = finetune_forward(
            &fx,
            &self.config,
            &sample.x_enc,
            &sample.enc_marks,
            &sample.x_label,
            &sample.label_marks,
            &sample.y_marks,
        )?;
        Ok(g.value(y).as_ref().clone())
    }
}

/// Scalar count implied by a configuration.
pub fn param_count(cfg: &ModelConfig) -> usize {
    let d = cfg.d_model;
    let linear = |i: usize, o: usize| i * o + o;
    let ln = 2 * d;
    let attention = 4 * linear(d, d);
    let mlp = linear(d, cfg.d_ff) + linear(cfg.d_ff, d);
    let enc_block = attention + mlp + 2 * ln;
    let dec_block = 2 * attention + mlp + 3 * ln;
    let embed = 3 * cfg.d_x * d + STAMP_VOCAB.iter().sum::<usize>() * d + 2 * cfg.patch_stride * d * d;
    2 * embed
        + cfg.enc_layers * enc_block
        + d
        + cfg.pretrain_dec_layers * enc_block
        + linear(d, cfg.recon_width())
        + cfg.finetune_dec_layers * dec_block
        + linear(d, cfg.d_y)
}
