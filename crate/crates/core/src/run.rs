//! Run configuration files and the pipeline commands behind the CLI.
//!
//! A run configuration is TOML. Every field has a profile default, so a file
//! only lists what it changes:
//!
//! ```toml
//! profile = "desk"        # or "full"
//! dtype = "f32"           # or "f64"
//! seed = 7                # seeds model init, masking, dropout and shuffling
//!
//! [data]
//! csv = "ETTm1.csv"       # relative to the config file; or an inline [data.synth] table
//! target = "OT"
//! split = { kind = "months", train = 12, val = 4, test = 4 }
//! standardize = true
//!
//! [model]                 # architecture; d_x = 0 means "number of data columns"
//! input_len = 96
//!
//! [pretrain]              # optimizer and loop settings per phase
//! epochs = 20
//!
//! [finetune]
//! schedule = { kind = "exponential", gamma = 0.5 }
//!
//! [eval]
//! chart_dim = 0
//! ```
//!
//! Unknown keys are rejected. The fully resolved configuration is written as
//! `config.toml` into every output directory.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    load_csv, make_windows, synth_generate, CsvSchema, SplitSpec, Standardizer, SynthSpec, TimeSeriesFrame, WindowSet,
};
use crate::error::{Error, Result};
use crate::evaluation::{emit_report, fingerprint, rolling_evaluate, EvalOptions, Persistence};
use crate::model::{ModelConfig, Mtsmae};
use crate::numeric::{DType, Element};
use crate::training::{checkpoint_dtype, finetune, pretrain, Checkpoint, TrainConfig, TrainLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Small widths and short windows for CPU runs.
    Desk,
    /// 784-step input, 512-wide model.
    Full,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "full" => Ok(Profile::Full),
            other => Err(Error::config(format!(
                "unknown profile {other:?}, expected desk or full"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
    pub split: SplitSpec,
    pub standardize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Feature drawn in `chart.svg`.
    pub chart_dim: usize,
    /// Score in original units instead of standardized ones.
    pub destandardize: bool,
    pub parallel: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    pub dtype: DType,
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub eval: EvalConfig,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub profile: Option<Profile>,
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn defaults(profile: Profile) -> Self {
        let (model, split) = match profile {
            Profile::Desk => (
                ModelConfig::desk(0),
                SplitSpec::Ratios {
                    train: 0.7,
                    val: 0.1,
                    test: 0.2,
                },
            ),
            Profile::Full => (ModelConfig::full(0), SplitSpec::ett()),
        };
        RunConfig {
            profile,
            dtype: DType::F32,
            seed: 0,
            data: DataConfig {
                csv: None,
                target: None,
                synth: None,
                split,
                standardize: true,
            },
            model,
            pretrain: TrainConfig::pretrain(),
            finetune: TrainConfig::finetune(),
            eval: EvalConfig {
                chart_dim: 0,
                destandardize: false,
                parallel: true,
            },
        }
    }

    /// Profile defaults, overlaid with `text` (TOML), then `overrides`.
    /// `base_dir` anchors a relative `data.csv`.
    pub fn from_toml(text: &str, base_dir: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let user: toml::Table = toml::from_str(text).map_err(|e| Error::config(format!("config: {}", e.message())))?;
        let profile = match (overrides.profile, user.get("profile")) {
            (Some(p), _) => p,
            (None, Some(toml::Value::String(s))) => s.parse()?,
            (None, Some(other)) => return Err(Error::config(format!("profile must be a string, got {other}"))),
            (None, None) => Profile::Desk,
        };
        let mut merged = toml::Table::try_from(RunConfig::defaults(profile)).expect("defaults serialize");
        merge(&mut merged, user);
        merged.insert(
            "profile".into(),
            toml::Value::String(format!("{profile:?}").to_lowercase()),
        );
        if let Some(seed) = overrides.seed {
            merged.insert("seed".into(), toml::Value::Integer(seed as i64));
        }
        let mut cfg: RunConfig = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(format!("config: {}", e.message())))?;
        if let (Some(csv), Some(dir)) = (&cfg.data.csv, base_dir) {
            if csv.is_relative() {
                cfg.data.csv = Some(dir.join(csv));
            }
        }
        cfg.pretrain.seed = cfg.seed;
        cfg.finetune.seed = cfg.seed;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Self::from_toml(&text, p.parent(), overrides)
            }
            None => Self::from_toml("", None, overrides),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Fills `d_x`/`d_y` from the data when left at 0 and validates.
    pub fn bind_features(&mut self, n_features: usize) -> Result<()> {
        for d in [&mut self.model.d_x, &mut self.model.d_y] {
            if *d == 0 {
                *d = n_features;
            }
        }
        if self.model.d_x != n_features {
            return Err(Error::config(format!(
                "model.d_x = {} but the data has {n_features} features",
                self.model.d_x
            )));
        }
        self.model.validate()?;
        self.pretrain.validate()?;
        self.finetune.validate()
    }
}

/// Recursive table overlay. A table whose `kind` differs from the default's
/// replaces it wholesale, so variant-specific keys do not leak across.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o))
                if b.get("kind") == o.get("kind") || o.get("kind").is_none() =>
            {
                merge(b, o)
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Standardized train/val/test frames.
pub struct Prepared {
    pub train: TimeSeriesFrame,
    pub val: TimeSeriesFrame,
    pub test: TimeSeriesFrame,
    pub standardizer: Option<Standardizer>,
}

pub fn load_frame(cfg: &DataConfig) -> Result<TimeSeriesFrame> {
    match (&cfg.csv, &cfg.synth) {
        (Some(path), None) => load_csv(
            path,
            &CsvSchema {
                target: cfg.target.clone(),
            },
        ),
        (None, Some(spec)) => synth_generate(spec),
        (Some(_), Some(_)) => Err(Error::config("set only one of data.csv and data.synth")),
        (None, None) => Err(Error::config("no data source: set data.csv or data.synth")),
    }
}

/// Loads, splits and standardizes with training statistics.
pub fn prepare_data(cfg: &DataConfig) -> Result<Prepared> {
    let frame = load_frame(cfg)?;
    let splits = cfg.split.resolve(frame.len(), frame.freq())?;
    let standardizer = if cfg.standardize {
        Some(Standardizer::fit(frame.slice(splits.train.clone())?.values())?)
    } else {
        None
    };
    let frame = match &standardizer {
        Some(s) => s.apply_frame(&frame)?,
        None => frame,
    };
    Ok(Prepared {
        train: frame.slice(splits.train)?,
        val: frame.slice(splits.val)?,
        test: frame.slice(splits.test)?,
        standardizer,
    })
}

fn windows<T: Element>(frame: &TimeSeriesFrame, m: &ModelConfig, what: &str) -> Result<WindowSet<T>> {
    make_windows(frame, m.input_len, m.label_len, m.pred_len, 1).map_err(|e| match e {
        Error::Data(msg) => Error::data(format!("{what} split: {msg}")),
        other => other,
    })
}

/// Refuses a non-empty existing directory unless `force`.
pub fn prepare_out_dir(path: &Path, force: bool) -> Result<()> {
    if path.exists() {
        let non_empty = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .next()
            .is_some();
        if non_empty && !force {
            return Err(Error::io(
                path,
                std::io::Error::new(
                    std::io::ErrorKind::AlreadyExists,
                    "output directory is not empty; pass --force to overwrite",
                ),
            ));
        }
    }
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn bound_config(cfg: &RunConfig) -> Result<(RunConfig, Prepared)> {
    let data = prepare_data(&cfg.data)?;
    let mut cfg = cfg.clone();
    cfg.bind_features(data.train.n_features())?;
    Ok((cfg, data))
}

pub const CONFIG_FILE: &str = "config.toml";
pub const PRETRAIN_CKPT: &str = "pretrain.ckpt";
pub const FINETUNE_CKPT: &str = "finetune.ckpt";
pub const PRETRAIN_LOG: &str = "pretrain_log.csv";
pub const FINETUNE_LOG: &str = "finetune_log.csv";

/// Writes a synthetic series described by a TOML [`SynthSpec`] to CSV.
pub fn cmd_synth(spec_path: &Path, out_csv: &Path, force: bool) -> Result<TimeSeriesFrame> {
    let text = std::fs::read_to_string(spec_path).map_err(|e| Error::io(spec_path, e))?;
    let spec: SynthSpec =
        toml::from_str(&text).map_err(|e| Error::config(format!("{}: {}", spec_path.display(), e.message())))?;
    if out_csv.exists() && !force {
        return Err(Error::io(
            out_csv,
            std::io::Error::new(
                std::io::ErrorKind::AlreadyExists,
                "file exists; pass --force to overwrite",
            ),
        ));
    }
    if let Some(dir) = out_csv.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let frame = synth_generate(&spec)?;
    crate::data::write_csv(&frame, out_csv)?;
    Ok(frame)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainSummary {
    pub epoch_losses: Vec<f64>,
    pub checkpoint: PathBuf,
}

pub fn cmd_pretrain(cfg: &RunConfig, out: &Path, force: bool) -> Result<PretrainSummary> {
    let (cfg, data) = bound_config(cfg)?;
    prepare_out_dir(out, force)?;
    write_file(&out.join(CONFIG_FILE), &cfg.to_toml())?;
    match cfg.dtype {
        DType::F32 => pretrain_typed::<f32>(&cfg, &data, out),
        DType::F64 => pretrain_typed::<f64>(&cfg, &data, out),
    }
}

fn pretrain_typed<T: Element>(cfg: &RunConfig, data: &Prepared, out: &Path) -> Result<PretrainSummary> {
    let train = windows::<T>(&data.train, &cfg.model, "train")?;
    let mut log = TrainLog::to_file(&out.join(PRETRAIN_LOG))?;
    let outcome = pretrain(&cfg.model, &cfg.pretrain, &train, &mut log)?;
    let path = out.join(PRETRAIN_CKPT);
    outcome.checkpoint.save(&path)?;
    Ok(PretrainSummary {
        epoch_losses: outcome.history.iter().map(|h| h.train_loss).collect(),
        checkpoint: path,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneSummary {
    pub best_epoch: usize,
    pub best_val: Option<f64>,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub checkpoint: PathBuf,
}

/// Fine-tunes from the encoder of `init`, or from scratch without it.
pub fn cmd_finetune(cfg: &RunConfig, init: Option<&Path>, out: &Path, force: bool) -> Result<FinetuneSummary> {
    let (cfg, data) = bound_config(cfg)?;
    prepare_out_dir(out, force)?;
    write_file(&out.join(CONFIG_FILE), &cfg.to_toml())?;
    match cfg.dtype {
        DType::F32 => finetune_typed::<f32>(&cfg, &data, init, out),
        DType::F64 => finetune_typed::<f64>(&cfg, &data, init, out),
    }
}

fn finetune_typed<T: Element>(
    cfg: &RunConfig,
    data: &Prepared,
    init: Option<&Path>,
    out: &Path,
) -> Result<FinetuneSummary> {
    let train = windows::<T>(&data.train, &cfg.model, "train")?;
    let val = if data.val.is_empty() {
        None
    } else {
        Some(windows::<T>(&data.val, &cfg.model, "validation")?)
    };
    let init = match init {
        Some(p) => Some(Checkpoint::<T>::load(p)?.params),
        None => None,
    };
    let mut log = TrainLog::to_file(&out.join(FINETUNE_LOG))?;
    let outcome = finetune(&cfg.model, &cfg.finetune, &train, val.as_ref(), init.as_ref(), &mut log)?;
    let path = out.join(FINETUNE_CKPT);
    outcome.best.save(&path)?;
    Ok(FinetuneSummary {
        best_epoch: outcome.best_epoch,
        best_val: outcome.history[outcome.best_epoch - 1].val_loss,
        epochs_run: outcome.history.len(),
        stopped_early: outcome.stopped_early,
        checkpoint: path,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub mse: f64,
    pub mae: f64,
    pub baseline_mse: f64,
    pub baseline_mae: f64,
    pub windows: usize,
}

/// Rolling evaluation of a checkpoint on the test split. The architecture
/// comes from the checkpoint; the data settings from `cfg`.
pub fn cmd_evaluate(cfg: &RunConfig, ckpt: &Path, out: &Path, force: bool) -> Result<EvalSummary> {
    let dtype = checkpoint_dtype(ckpt)?;
    let data = prepare_data(&cfg.data)?;
    prepare_out_dir(out, force)?;
    match dtype {
        DType::F32 => evaluate_typed::<f32>(cfg, &data, ckpt, out),
        DType::F64 => evaluate_typed::<f64>(cfg, &data, ckpt, out),
    }
}

fn evaluate_typed<T: Element>(cfg: &RunConfig, data: &Prepared, ckpt: &Path, out: &Path) -> Result<EvalSummary> {
    let ck = Checkpoint::<T>::load(ckpt)?;
    let mut resolved = cfg.clone();
    resolved.model = ck.config.model.clone();
    resolved.dtype = T::DTYPE;
    resolved.bind_features(data.test.n_features())?;
    let text = resolved.to_toml();
    write_file(&out.join(CONFIG_FILE), &text)?;
    let model = Mtsmae::from_params(ck.config.model, ck.params)?;
    let test = windows::<T>(&data.test, model.config(), "test")?;
    let opts = EvalOptions {
        destandardize: data.standardizer.as_ref().filter(|_| cfg.eval.destandardize),
        parallel: cfg.eval.parallel,
        fingerprint: fingerprint(text.as_bytes()),
    };
    let mut report = rolling_evaluate(&model, &test, &opts)?;
    let base = rolling_evaluate(&Persistence, &test, &opts)?;
    report.baseline = Some((base.mse, base.mae));
    emit_report(&report, out, cfg.eval.chart_dim)?;
    Ok(EvalSummary {
        mse: report.mse,
        mae: report.mae,
        baseline_mse: base.mse,
        baseline_mae: base.mae,
        windows: report.windows.len(),
    })
}

/// Ablation axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    MaskRatio,
    /// Depth of the reconstruction decoder used in pretraining.
    DecoderDepth,
    InputLen,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mask_ratio" => Ok(SweepAxis::MaskRatio),
            "decoder_depth" | "dec_layers" => Ok(SweepAxis::DecoderDepth),
            "input_len" => Ok(SweepAxis::InputLen),
            other => Err(Error::config(format!(
                "unknown sweep axis {other:?}, expected mask_ratio, decoder_depth or input_len"
            ))),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::MaskRatio => "mask_ratio",
            SweepAxis::DecoderDepth => "decoder_depth",
            SweepAxis::InputLen => "input_len",
        })
    }
}

impl SweepAxis {
    pub fn apply(self, cfg: &RunConfig, value: f64) -> Result<RunConfig> {
        let mut c = cfg.clone();
        let whole = || {
            if value >= 0.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(Error::config(format!(
                    "{self} needs a non-negative integer, got {value}"
                )))
            }
        };
        match self {
            SweepAxis::MaskRatio => c.pretrain.mask_ratio = value,
            SweepAxis::DecoderDepth => c.model.pretrain_dec_layers = whole()?,
            SweepAxis::InputLen => c.model.input_len = whole()?,
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub pretrain_loss: f64,
    pub best_val: Option<f64>,
    pub test_mse: f64,
    pub test_mae: f64,
}

pub const SWEEP_HEADER: &str = "axis,value,pretrain_loss,best_val,test_mse,test_mae";

/// Pretrain, fine-tune and evaluate once per value, each in its own
/// sub-directory, then write `summary.csv`. Up to `jobs` values run at once.
pub fn cmd_sweep(
    cfg: &RunConfig,
    axis: SweepAxis,
    values: &[f64],
    jobs: usize,
    out: &Path,
    force: bool,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::config("sweep needs at least one value"));
    }
    let configs = values.iter().map(|&v| axis.apply(cfg, v)).collect::<Result<Vec<_>>>()?;
    prepare_out_dir(out, force)?;
    write_file(&out.join(CONFIG_FILE), &cfg.to_toml())?;
    let one = |(value, c): (&f64, &RunConfig)| -> Result<SweepRow> {
        let dir = out.join(format!("{axis}={value}"));
        let pre = cmd_pretrain(c, &dir.join("pretrain"), force)?;
        let ft = cmd_finetune(c, Some(&pre.checkpoint), &dir.join("finetune"), force)?;
        let ev = cmd_evaluate(c, &ft.checkpoint, &dir.join("eval"), force)?;
        Ok(SweepRow {
            value: *value,
            pretrain_loss: *pre.epoch_losses.last().expect("at least one epoch"),
            best_val: ft.best_val,
            test_mse: ev.mse,
            test_mae: ev.mae,
        })
    };
    let rows: Vec<Result<SweepRow>> = if jobs <= 1 {
        values.iter().zip(&configs).map(one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::config(format!("worker pool: {e}")))?;
        pool.install(|| values.par_iter().zip(configs.par_iter()).map(one).collect())
    };
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let mut csv = format!("{SWEEP_HEADER}\n");
    for r in &rows {
        csv.push_str(&format!(
            "{axis},{},{},{},{},{}\n",
            r.value,
            r.pretrain_loss,
            r.best_val.map_or(String::new(), |v| v.to_string()),
            r.test_mse,
            r.test_mae
        ));
    }
    write_file(&out.join("summary.csv"), &csv)?;
    Ok(rows)
}
