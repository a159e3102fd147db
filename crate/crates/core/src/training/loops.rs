use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::checkpoint::{Checkpoint, CheckpointConfig, RngState};
use super::config::{Phase, TrainConfig};
use super::early::{EarlyStopping, Verdict};
use super::log::TrainLog;
use super::loss::{masked_mse_loss, mse_loss};
use super::optim::{adam_step, adamw_step, clip_grad_norm, AdamParams, AdamState};
use crate::data::{WindowSample, WindowSet};
use crate::error::{Error, Result};
use crate::masking::{sample_mask, MaskPlan};
use crate::model::{
    finetune_forward, pretrain_forward, reconstruction_targets, Forward, ModelConfig, Mtsmae, ParamStore,
};
use crate::numeric::{Element, Graph, NdArray, Var};

/// Mean loss and mean gradient over a batch.
pub struct BatchGradients<T> {
    pub loss: f64,
    pub grads: BTreeMap<String, NdArray<T>>,
}

type ItemGrads<T> = (f64, Vec<(String, NdArray<T>)>);

/// Loss and parameter gradients for each item, computed independently
/// (possibly in parallel) and reduced in item order, so the result does not
/// depend on the thread count.
pub fn batch_gradients<T, I, F>(
    params: &ParamStore<T>,
    items: &[I],
    dropout: f64,
    seeds: &[u64],
    loss_fn: F,
) -> Result<BatchGradients<T>>
where
    T: Element,
    I: Sync,
    F: Fn(&Forward<'_, T>, &I) -> Result<Var> + Sync,
{
    assert_eq!(items.len(), seeds.len());
    if items.is_empty() {
        return Err(Error::Training("empty batch".into()));
    }
    let per_item: Vec<Result<ItemGrads<T>>> = items
        .par_iter()
        .zip(seeds.par_iter())
        .map(|(item, &seed)| {
            let g = Graph::new();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let fx = Forward::train(&g, params, Some((dropout, &mut rng)));
            let loss = loss_fn(&fx, item)?;
            let value = g.scalar_value(loss).as_f64();
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("loss {value}")));
            }
            let mut grads = g.backward(loss)?;
            let out = fx
                .bound()
                .into_iter()
                .filter_map(|(name, v)| grads.take(v).map(|gr| (name, gr)))
                .collect();
            Ok((value, out))
        })
        .collect();

    let n = T::of(items.len() as f64);
    let mut loss = 0.0;
    let mut grads: BTreeMap<String, NdArray<T>> = BTreeMap::new();
    for r in per_item {
        let (l, gs) = r?;
        loss += l;
        for (name, g) in gs {
            match grads.get_mut(&name) {
                Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, &b)| *a = *a + b),
                None => {
                    grads.insert(name, g);
                }
            }
        }
    }
    for g in grads.values_mut() {
        g.data_mut().iter_mut().for_each(|x| *x = *x / n);
    }
    Ok(BatchGradients {
        loss: loss / items.len() as f64,
        grads,
    })
}

/// Reconstruction loss of one window under one mask plan.
pub fn pretrain_loss<T: Element>(
    fx: &Forward<'_, T>,
    cfg: &ModelConfig,
    x: &NdArray<T>,
    marks: &crate::data::TimeMarks,
    plan: &MaskPlan,
) -> Result<Var> {
    let out = pretrain_forward(fx, cfg, x, marks, plan)?;
    let targets = reconstruction_targets(x, plan, cfg.patch_stride)?;
    masked_mse_loss(fx.graph, out.reconstruction, &targets, plan)
}

/// Forecast MSE over all `L_y * d_y` outputs.
pub fn finetune_loss<T: Element>(fx: &Forward<'_, T>, cfg: &ModelConfig, s: &WindowSample<T>) -> Result<Var> {
    let y = finetune_forward(fx, cfg, &s.x_enc, &s.enc_marks, &s.x_label, &s.label_marks, &s.y_marks)?;
    mse_loss(fx.graph, y, &s.y_true)
}

/// Per-epoch summary.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub lr: f64,
}

pub struct PretrainOutcome<T> {
    pub checkpoint: Checkpoint<T>,
    pub history: Vec<EpochStats>,
}

pub struct FinetuneOutcome<T> {
    /// Weights from the best validation epoch (the last epoch without
    /// validation data).
    pub model: Mtsmae<T>,
    pub best: Checkpoint<T>,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

fn check_data<T: Element>(cfg: &ModelConfig, data: &WindowSet<T>, what: &str) -> Result<()> {
    let got = (data.input_len(), data.label_len(), data.pred_len(), data.n_features());
    let want = (cfg.input_len, cfg.label_len, cfg.pred_len, cfg.d_x);
    if got != want {
        return Err(Error::dim(format!(
            "{what} windows (input, label, pred, features) = {got:?}, model expects {want:?}"
        )));
    }
    Ok(())
}

fn expect_phase(train: &TrainConfig, phase: Phase) -> Result<()> {
    train.validate()?;
    if train.phase != phase {
        return Err(Error::config(format!(
            "train config is for {:?}, expected {phase:?}",
            train.phase
        )));
    }
    Ok(())
}

fn with_position(e: Error, epoch: usize, step: usize) -> Error {
    match e {
        Error::NonFinite(m) => Error::NonFinite(format!("epoch {epoch}, step {step}: {m}")),
        other => other,
    }
}

struct Stepper {
    hp: AdamParams,
    decoupled: bool,
    clip: Option<f64>,
}

impl Stepper {
    fn new(train: &TrainConfig, decoupled: bool) -> Self {
        Stepper {
            hp: AdamParams {
                lr: train.effective_lr(),
                beta1: train.betas[0],
                beta2: train.betas[1],
                eps: train.eps,
                weight_decay: train.weight_decay,
            },
            decoupled,
            clip: train.grad_clip,
        }
    }

    fn apply<T: Element>(
        &self,
        params: &mut ParamStore<T>,
        mut grads: BTreeMap<String, NdArray<T>>,
        state: &mut AdamState<T>,
        lr: f64,
    ) -> Result<()> {
        if let Some(c) = self.clip {
            clip_grad_norm(&mut grads, c);
        }
        let hp = AdamParams { lr, ..self.hp };
        if self.decoupled {
            adamw_step(params, &grads, state, hp)
        } else {
            adam_step(params, &grads, state, hp)
        }
    }
}

/// Masked-reconstruction pretraining: a fresh mask per window per epoch,
/// AdamW with the configured schedule stepped per batch.
pub fn pretrain<T: Element>(
    model_cfg: &ModelConfig,
    train: &TrainConfig,
    data: &WindowSet<T>,
    log: &mut TrainLog,
) -> Result<PretrainOutcome<T>> {
    model_cfg.validate()?;
    expect_phase(train, Phase::Pretrain)?;
    check_data(model_cfg, data, "pretraining")?;
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
    let mut model = Mtsmae::<T>::new(model_cfg.clone(), &mut rng)?;
    let stepper = Stepper::new(train, true);
    let mut state = AdamState::new();
    let n = data.len();
    let batches = n.div_ceil(train.batch_size);
    let total_steps = batches * train.epochs;
    let warmup = batches * train.warmup_epochs;
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(train.epochs);
    let mut step = 0;

    for epoch in 1..=train.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut first_lr = None;
        for chunk in order.chunks(train.batch_size) {
            let mut items = Vec::with_capacity(chunk.len());
            let mut seeds = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let plan = sample_mask(model_cfg.n_patches(), train.mask_ratio, &mut rng)?;
                items.push((data.get(i), plan));
                seeds.push(rng.random::<u64>());
            }
            let lr = train.schedule.lr(stepper.hp.lr, epoch - 1, step, total_steps, warmup)?;
            first_lr.get_or_insert(lr);
            let b = batch_gradients(model.params(), &items, model_cfg.dropout, &seeds, |fx, (s, plan)| {
                pretrain_loss(fx, model_cfg, &s.x_enc, &s.enc_marks, plan)
            })
            .map_err(|e| with_position(e, epoch, step))?;
            stepper
                .apply(model.params_mut(), b.grads, &mut state, lr)
                .map_err(|e| with_position(e, epoch, step))?;
            loss_sum += b.loss * chunk.len() as f64;
            step += 1;
        }
        let train_loss = loss_sum / n as f64;
        let lr = first_lr.unwrap_or(0.0);
        log.record(epoch, "train", train_loss, lr)?;
        log::info!("pretrain epoch {epoch}: loss {train_loss:.6}, lr {lr:.3e}");
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss: None,
            lr,
        });
    }

    Ok(PretrainOutcome {
        checkpoint: Checkpoint {
            config: CheckpointConfig {
                model: model_cfg.clone(),
                train: Some(train.clone()),
            },
            epoch: train.epochs as u64,
            rng: RngState::capture(&rng),
            params: model.into_params(),
        },
        history,
    })
}

/// Mean forecast MSE over every window, in inference mode.
pub fn validation_loss<T: Element>(model: &Mtsmae<T>, data: &WindowSet<T>) -> Result<f64> {
    let losses: Vec<Result<f64>> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let s = data.get(i);
            let g = Graph::new();
            let fx = Forward::eval(&g, model.params());
            let l = finetune_loss(&fx, model.config(), &s)?;
            Ok(g.scalar_value(l).as_f64())
        })
        .collect();
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(sum / data.len() as f64)
}

/// Forecast training with Adam, an epoch-wise schedule and early stopping
/// on validation loss. With `init`, encoder-side tensors are copied from it
/// before the first step; without, this trains from scratch.
pub fn finetune<T: Element>(
    model_cfg: &ModelConfig,
    train: &TrainConfig,
    train_data: &WindowSet<T>,
    val_data: Option<&WindowSet<T>>,
    init: Option<&ParamStore<T>>,
    log: &mut TrainLog,
) -> Result<FinetuneOutcome<T>> {
    model_cfg.validate()?;
    expect_phase(train, Phase::Finetune)?;
    check_data(model_cfg, train_data, "training")?;
    if let Some(v) = val_data {
        check_data(model_cfg, v, "validation")?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
    let mut model = Mtsmae::<T>::new(model_cfg.clone(), &mut rng)?;
    if let Some(source) = init {
        model.transfer_encoder(source)?;
    }
    let stepper = Stepper::new(train, false);
    let mut state = AdamState::new();
    let n = train_data.len();
    let batches = n.div_ceil(train.batch_size);
    let total_steps = batches * train.epochs;
    let warmup = batches * train.warmup_epochs;
    let mut order: Vec<usize> = (0..n).collect();
    let mut stopper = EarlyStopping::new(if val_data.is_some() { train.patience } else { 0 });
    let mut best: Option<(usize, ParamStore<T>, RngState)> = None;
    let mut history = Vec::new();
    let mut stopped_early = false;
    let mut step = 0;

    for epoch in 1..=train.epochs {
        order.shuffle(&mut rng);
        let lr = train.schedule.lr(stepper.hp.lr, epoch - 1, step, total_steps, warmup)?;
        let mut loss_sum = 0.0;
        for chunk in order.chunks(train.batch_size) {
            let items: Vec<WindowSample<T>> = chunk.iter().map(|&i| train_data.get(i)).collect();
            let seeds: Vec<u64> = chunk.iter().map(|_| rng.random()).collect();
            let step_lr = train.schedule.lr(stepper.hp.lr, epoch - 1, step, total_steps, warmup)?;
            let b = batch_gradients(model.params(), &items, model_cfg.dropout, &seeds, |fx, s| {
                finetune_loss(fx, model_cfg, s)
            })
            .map_err(|e| with_position(e, epoch, step))?;
            stepper
                .apply(model.params_mut(), b.grads, &mut state, step_lr)
                .map_err(|e| with_position(e, epoch, step))?;
            loss_sum += b.loss * chunk.len() as f64;
            step += 1;
        }
        let train_loss = loss_sum / n as f64;
        log.record(epoch, "train", train_loss, lr)?;
        let val_loss = match val_data {
            Some(v) => {
                let l = validation_loss(&model, v)?;
                log.record(epoch, "val", l, lr)?;
                Some(l)
            }
            None => None,
        };
        log::info!("finetune epoch {epoch}: train {train_loss:.6}, val {val_loss:?}, lr {lr:.3e}");
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            lr,
        });
        let verdict = stopper.observe(epoch, val_loss.unwrap_or(train_loss));
        if verdict == Verdict::Improved || val_data.is_none() {
            best = Some((epoch, model.params().clone(), RngState::capture(&rng)));
        }
        if verdict == Verdict::Stop {
            stopped_early = true;
            break;
        }
    }

    let (best_epoch, params, rng_state) = best.expect("at least one epoch ran");
    let model = Mtsmae::from_params(model_cfg.clone(), params)?;
    Ok(FinetuneOutcome {
        best: Checkpoint {
            config: CheckpointConfig {
                model: model_cfg.clone(),
                train: Some(train.clone()),
            },
            epoch: best_epoch as u64,
            rng: rng_state,
            params: model.params().clone(),
        },
        model,
        history,
        best_epoch,
        stopped_early,
    })
}
