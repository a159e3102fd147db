//! Acceptance checks, run in order on one thread so the timed ones measure
//! a single core. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any failed.

use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mtsmae::data::{make_windows, synth_generate, Frequency, Standardizer, SynthSpec, TimeMark, TimeMarks, WindowSet};
use mtsmae::evaluation::{mae, mse, rolling_evaluate, EvalOptions, Persistence};
use mtsmae::masking::{sample_mask, visible_count, MaskPlan};
use mtsmae::model::{
    decode, decoder_tokens, encoder_tokens, finetune_forward, init_params, pretrain_forward, Forward, ModelConfig,
    ParamStore,
};
use mtsmae::numeric::{grad_check, Graph, NdArray, Var};
use mtsmae::training::{
    exponential_lr, finetune, finetune_loss, masked_mse_loss, pretrain, pretrain_loss, scaled_lr, strip_wall_clock,
    validation_loss, Checkpoint, CheckpointConfig, EarlyStopping, RngState, Schedule, TrainConfig, TrainLog, Verdict,
};
use mtsmae::Error;

type Outcome = std::result::Result<String, String>;
type Check = fn() -> Outcome;
type OpLoss<'a> = &'a dyn Fn(&Graph<f64>, &[Var]) -> mtsmae::Result<Var>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> NdArray<f64> {
    let n = shape.iter().product();
    NdArray::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn hourly(len: usize, offset: usize) -> TimeMarks {
    let marks = (offset..offset + len)
        .map(|i| TimeMark {
            month: ((i / 720) % 12) as u8,
            day: ((i / 24) % 31) as u8,
            hour: (i % 24) as u8,
            minute: 0,
        })
        .collect();
    TimeMarks::new(marks, Frequency::Hourly).unwrap()
}

fn tiny(d_x: usize) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_heads: 2,
        d_ff: 16,
        enc_layers: 1,
        pretrain_dec_layers: 1,
        finetune_dec_layers: 1,
        patch_stride: 2,
        dropout: 0.0,
        d_x,
        d_y: d_x,
        input_len: 16,
        label_len: 8,
        pred_len: 4,
    }
}

/// Initial weights scaled up so that gradients are well above round-off.
fn loud(cfg: &ModelConfig, seed: u64) -> ParamStore<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = init_params::<f64, _>(cfg, &mut rng).unwrap();
    let mut out = ParamStore::new();
    for (name, v) in base.iter() {
        let noisy = random(&mut rng, v.shape()).map(|x| 0.3 * x);
        let mut sum = v.as_ref().clone();
        for (a, b) in sum.data_mut().iter_mut().zip(noisy.data()) {
            *a += b;
        }
        out.insert(name.clone(), sum);
    }
    out
}

fn noiseless_windows(n_windows: usize, cfg: &ModelConfig) -> WindowSet<f32> {
    let rows = cfg.input_len + cfg.pred_len + n_windows - 1;
    let frame = synth_generate(&SynthSpec::multi_sine(rows, cfg.d_x, 0.0, 1)).unwrap();
    let st = Standardizer::fit(frame.values()).unwrap();
    let frame = st.apply_frame(&frame).unwrap();
    make_windows(&frame, cfg.input_len, cfg.label_len, cfg.pred_len, 1).unwrap()
}

/// Below this magnitude a central difference is dominated by round-off, so
/// such elements (structurally zero gradients such as attention key biases)
/// are compared on absolute error instead.
const TINY_GRAD: f64 = 1e-7;
const TINY_ABS_TOL: f64 = 1e-9;

/// Reverse-mode gradients of a model loss against central differences taken
/// by perturbing the parameter store directly. Returns the worst relative
/// error and where it occurred; panics if a near-zero element disagrees.
fn model_grad_check<L>(params: &ParamStore<f64>, loss: L) -> (f64, String)
where
    L: Fn(&Forward<'_, f64>) -> mtsmae::Result<Var>,
{
    let g = Graph::new();
    let fx = Forward::train(&g, params, None);
    let out = loss(&fx).unwrap();
    let grads = g.backward(out).unwrap();
    let analytic: Vec<(String, Vec<f64>)> = fx
        .bound()
        .into_iter()
        .map(|(name, v)| {
            let n = params.get(&name).unwrap().len();
            (
                name,
                grads.get(v).map(|a| a.to_f64_vec()).unwrap_or_else(|| vec![0.0; n]),
            )
        })
        .collect();

    let eval = |p: &ParamStore<f64>| {
        let g = Graph::new();
        let fx = Forward::eval(&g, p);
        let v = loss(&fx).unwrap();
        g.scalar_value(v)
    };
    let eps = 1e-5;
    let mut work = params.clone();
    let (mut worst, mut at) = (0.0f64, String::new());
    for (name, ga) in &analytic {
        for (e, &a) in ga.iter().enumerate() {
            let orig = work.get(name).unwrap().data()[e];
            work.get_mut(name).unwrap().data_mut()[e] = orig + eps;
            let up = eval(&work);
            work.get_mut(name).unwrap().data_mut()[e] = orig - eps;
            let down = eval(&work);
            work.get_mut(name).unwrap().data_mut()[e] = orig;
            let n = (up - down) / (2.0 * eps);
            if a.abs().max(n.abs()) < TINY_GRAD {
                assert!(
                    (a - n).abs() < TINY_ABS_TOL,
                    "{name}[{e}]: analytic {a:e}, numeric {n:e}"
                );
                continue;
            }
            let r = (a - n).abs() / (a.abs() + n.abs());
            if r > worst {
                worst = r;
                at = format!("{name}[{e}] (analytic {a:e}, numeric {n:e})");
            }
        }
    }
    (worst, at)
}

fn c01_gradients() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    let mut check = |name: &str, inputs: Vec<NdArray<f64>>, f: OpLoss<'_>| {
        let r = grad_check(f, &inputs, 1e-5).unwrap();
        assert!(r.max_rel_err < 1e-4, "{name}: {r:?}");
        worst = worst.max(r.max_rel_err);
    };
    let weights = random(&mut rng, &[64]);
    let weighted = move |g: &Graph<f64>, y: Var| -> mtsmae::Result<Var> {
        let shape = g.shape(y);
        let n: usize = shape.iter().product();
        let w = NdArray::new(shape, weights.data()[..n].to_vec())?;
        let p = g.mul_const(y, Arc::new(w))?;
        Ok(g.sum(p))
    };
    let a = random(&mut rng, &[3, 4]);
    let w = &weighted;
    check("matmul", vec![a.clone(), random(&mut rng, &[4, 5])], &|g, v| {
        w(g, g.matmul(v[0], v[1])?)
    });
    check("add", vec![a.clone(), random(&mut rng, &[3, 4])], &|g, v| {
        w(g, g.add(v[0], v[1])?)
    });
    check("sub", vec![a.clone(), random(&mut rng, &[3, 4])], &|g, v| {
        w(g, g.sub(v[0], v[1])?)
    });
    check("mul", vec![a.clone(), random(&mut rng, &[3, 4])], &|g, v| {
        w(g, g.mul(v[0], v[1])?)
    });
    check("add_row", vec![a.clone(), random(&mut rng, &[4])], &|g, v| {
        w(g, g.add_row(v[0], v[1])?)
    });
    check("scale", vec![a.clone()], &|g, v| w(g, g.scale(v[0], -1.3)));
    check("softmax", vec![a.clone()], &|g, v| w(g, g.softmax(v[0])));
    check("causal_softmax", vec![random(&mut rng, &[5, 5])], &|g, v| {
        w(g, g.causal_softmax(v[0])?)
    });
    check(
        "layer_norm",
        vec![a.clone(), random(&mut rng, &[4]), random(&mut rng, &[4])],
        &|g, v| w(g, g.layer_norm(v[0], v[1], v[2], 1e-5)?),
    );
    check(
        "conv1d",
        vec![random(&mut rng, &[7, 2]), random(&mut rng, &[3, 2, 3])],
        &|g, v| w(g, g.conv1d(v[0], v[1], 1, 1)?),
    );
    check(
        "conv1d_strided",
        vec![random(&mut rng, &[8, 3]), random(&mut rng, &[2, 3, 2])],
        &|g, v| w(g, g.conv1d(v[0], v[1], 2, 0)?),
    );
    check("transpose", vec![a.clone()], &|g, v| w(g, g.transpose(v[0])?));
    check("concat_rows", vec![a.clone(), random(&mut rng, &[2, 4])], &|g, v| {
        w(g, g.concat_rows(&[v[0], v[1]])?)
    });
    check("concat_cols", vec![a.clone(), random(&mut rng, &[3, 2])], &|g, v| {
        w(g, g.concat_cols(&[v[0], v[1]])?)
    });
    check("slice_cols", vec![a.clone()], &|g, v| w(g, g.slice_cols(v[0], 1, 2)?));
    check("slice_rows", vec![a.clone()], &|g, v| w(g, g.slice_rows(v[0], 1, 2)?));
    check("gather_rows", vec![a.clone()], &|g, v| {
        w(g, g.gather_rows(v[0], &[2, 0, 2])?)
    });
    check(
        "scatter_rows",
        vec![random(&mut rng, &[2, 4]), random(&mut rng, &[4])],
        &|g, v| w(g, g.scatter_rows(v[0], v[1], &[3, 1], 5)?),
    );
    check("lookup", vec![random(&mut rng, &[5, 3])], &|g, v| {
        w(g, g.lookup(v[0], &[4, 1, 1])?)
    });
    check("mean", vec![a.clone()], &|g, v| {
        let sq = g.mul(v[0], v[0])?;
        Ok(g.mean(sq))
    });
    let away = a.map(|x| if x.abs() < 0.1 { x + 0.3 } else { x });
    check("relu", vec![away], &|g, v| w(g, g.relu(v[0])));

    let cfg = tiny(2);
    let params = loud(&cfg, 3);
    let x = random(&mut rng, &[16, 2]);
    let marks = hourly(16, 5);
    let plan = MaskPlan::from_visible(4, vec![2]).unwrap();
    let (pre, pre_at) = model_grad_check(&params, |fx| pretrain_loss(fx, &cfg, &x, &marks, &plan));
    ensure!(pre < 1e-4, "pretrain loss: rel err {pre:.3e} at {pre_at}");

    let frame = synth_generate(&SynthSpec::multi_sine(40, 2, 0.2, 4)).unwrap();
    let sample = make_windows::<f64>(&frame, 16, 8, 4, 1).unwrap().get(3);
    let (ft, ft_at) = model_grad_check(&params, |fx| finetune_loss(fx, &cfg, &sample));
    ensure!(ft < 1e-4, "finetune loss: rel err {ft:.3e} at {ft_at}");

    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!(
        "ops max rel err {worst:.2e}, pretrain loss {pre:.2e}, finetune loss {ft:.2e}, {:.1}s",
        elapsed.as_secs_f64()
    ))
}

fn c02_masking() -> Outcome {
    ensure!(
        visible_count(196, 0.85) == 29,
        "visible_count(196, 0.85) = {}",
        visible_count(196, 0.85)
    );
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut hits = vec![0usize; 196];
    for _ in 0..10_000 {
        let plan = sample_mask(196, 0.85, &mut rng).unwrap();
        ensure!(
            plan.visible().len() == 29 && plan.masked().len() == 167,
            "plan sizes {}/{}",
            plan.visible().len(),
            plan.masked().len()
        );
        for &v in plan.visible() {
            hits[v] += 1;
        }
    }
    let rates: Vec<f64> = hits.iter().map(|&h| h as f64 / 10_000.0).collect();
    let lo = rates.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = rates.iter().cloned().fold(0.0, f64::max);
    ensure!(lo >= 0.10 && hi <= 0.20, "visible rates span [{lo}, {hi}]");
    Ok(format!("29 visible / 167 masked; visible rate in [{lo:.4}, {hi:.4}]"))
}

fn c03_loss_locality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut trials = 0;
    for t in 0..50 {
        let len = rng.random_range(2..40);
        let width = rng.random_range(1..10);
        let plan = sample_mask(len, 0.6, &mut rng).unwrap();
        let pred = random(&mut rng, &[len, width]);
        let targets = random(&mut rng, &[plan.masked().len(), width]);
        let loss = |p: &NdArray<f64>| {
            let g = Graph::new();
            let v = g.constant(p.clone());
            let l = masked_mse_loss(&g, v, &targets, &plan).unwrap();
            g.scalar_value(l)
        };
        let base = loss(&pred);
        let mut moved = pred.clone();
        for &vis in plan.visible() {
            for j in 0..width {
                moved.data_mut()[vis * width + j] += rng.random_range(-1e3..1e3);
            }
        }
        let after = loss(&moved);
        ensure!(base.to_bits() == after.to_bits(), "trial {t}: {base} became {after}");
        trials += 1;
    }
    Ok(format!("{trials} random plans, loss bitwise unchanged"))
}

fn c04_visible_invariance() -> Outcome {
    let cfg = tiny(3);
    let params = loud(&cfg, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(&mut rng, &[16, 3]);
    let marks = hourly(16, 0);
    let plan = MaskPlan::from_visible(4, vec![0, 3]).unwrap();
    let encoded = |p: &ParamStore<f64>| {
        let g = Graph::new();
        let fx = Forward::eval(&g, p);
        let out = pretrain_forward(&fx, &cfg, &x, &marks, &plan).unwrap();
        g.value(out.encoded).to_f64_vec()
    };
    let base = encoded(&params);
    let mut tokens: Vec<NdArray<f64>> = [0.0, 1e6, -1e-12, f64::NAN, f64::INFINITY]
        .iter()
        .map(|&c| NdArray::full(&[8], c))
        .collect();
    tokens.extend((0..5).map(|_| random(&mut rng, &[8]).map(|v| 50.0 * v)));
    for tok in &tokens {
        let mut p = params.clone();
        p.insert("pretrain.mask_token", tok.clone());
        let got = encoded(&p);
        let same = got.iter().zip(&base).all(|(a, b)| a.to_bits() == b.to_bits());
        ensure!(same, "encoder output changed for mask token {:?}", tok.data());
    }
    Ok(format!(
        "{} mask-token values, visible encodings bitwise equal",
        tokens.len()
    ))
}

fn c05_decoder_causality() -> Outcome {
    let cfg = ModelConfig {
        finetune_dec_layers: 2,
        ..tiny(2)
    };
    let params = loud(&cfg, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let len = cfg.decoder_len();
    let tokens = random(&mut rng, &[len, cfg.d_model]);
    let enc = random(&mut rng, &[cfg.n_patches(), cfg.d_model]);
    let run = |t: &NdArray<f64>| {
        let g = Graph::new();
        let fx = Forward::eval(&g, &params);
        let tv = g.constant(t.clone());
        let ev = g.constant(enc.clone());
        g.value(decode(&fx, &cfg, tv, ev).unwrap()).as_ref().clone()
    };
    let base = run(&tokens);
    for j in 0..len {
        let mut t = tokens.clone();
        for c in 0..cfg.d_model {
            t.data_mut()[j * cfg.d_model + c] += 2.5;
        }
        let out = run(&t);
        for i in 0..j {
            let same = out
                .row(i)
                .iter()
                .zip(base.row(i))
                .all(|(a, b)| a.to_bits() == b.to_bits());
            ensure!(same, "token {j} changed output {i}");
        }
        ensure!(out.row(j) != base.row(j), "token {j} did not reach its own output");
    }

    // end to end: changing the calendar of forecast step j moves only steps >= j
    let frame = synth_generate(&SynthSpec::multi_sine(40, 2, 0.2, 5)).unwrap();
    let s = make_windows::<f64>(&frame, cfg.input_len, cfg.label_len, cfg.pred_len, 1)
        .unwrap()
        .get(0);
    let forecast = |y_marks: &TimeMarks| {
        let g = Graph::new();
        let fx = Forward::eval(&g, &params);
        let y = finetune_forward(&fx, &cfg, &s.x_enc, &s.enc_marks, &s.x_label, &s.label_marks, y_marks).unwrap();
        g.value(y).as_ref().clone()
    };
    let base = forecast(&s.y_marks);
    for j in 0..cfg.pred_len {
        let mut marks = s.y_marks.as_slice().to_vec();
        marks[j].hour = (marks[j].hour + 7) % 24;
        let out = forecast(&TimeMarks::new(marks, Frequency::Hourly).unwrap());
        for i in 0..j {
            ensure!(out.row(i) == base.row(i), "forecast step {j} changed step {i}");
        }
        ensure!(out.row(j) != base.row(j), "forecast step {j} ignored its own calendar");
    }
    Ok(format!(
        "{len} decoder tokens and {} forecast steps, earlier outputs exact",
        cfg.pred_len
    ))
}

fn c06_shapes() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut cases = 0;
    for l_x in [64usize, 784] {
        for p in [1usize, 2] {
            for l_y in [8usize, 24] {
                let cfg = ModelConfig {
                    input_len: l_x,
                    label_len: 16,
                    pred_len: l_y,
                    patch_stride: p,
                    ..tiny(3)
                };
                let tag = format!("L_x={l_x} p={p} L_y={l_y}");
                let l = l_x / (p * p);
                ensure!(cfg.n_patches() == l, "{tag}: n_patches {}", cfg.n_patches());
                ensure!(
                    cfg.recon_width() == p * p * 3,
                    "{tag}: recon width {}",
                    cfg.recon_width()
                );
                let params = init_params::<f64, _>(&cfg, &mut rng).unwrap();
                let x = random(&mut rng, &[l_x, 3]);
                let marks = hourly(l_x + l_y, 0);
                let enc_marks = TimeMarks::new(marks.as_slice()[..l_x].to_vec(), Frequency::Hourly).unwrap();
                let label_marks = TimeMarks::new(marks.as_slice()[l_x - 16..l_x].to_vec(), Frequency::Hourly).unwrap();
                let y_marks = TimeMarks::new(marks.as_slice()[l_x..].to_vec(), Frequency::Hourly).unwrap();
                let x_label = NdArray::new(vec![16, 3], x.data()[(l_x - 16) * 3..].to_vec()).unwrap();
                let plan = MaskPlan::seeded(l, 0.85, 1).unwrap();
                let vis = visible_count(l, 0.85);

                let g = Graph::new();
                let fx = Forward::eval(&g, &params);
                let tokens = encoder_tokens(&fx, &cfg, &x, &enc_marks).unwrap();
                ensure!(g.shape(tokens) == vec![l, 8], "{tag}: tokens {:?}", g.shape(tokens));
                let out = pretrain_forward(&fx, &cfg, &x, &enc_marks, &plan).unwrap();
                ensure!(
                    g.shape(out.encoded) == vec![vis, 8],
                    "{tag}: encoded {:?}",
                    g.shape(out.encoded)
                );
                ensure!(
                    g.shape(out.reconstruction) == vec![l, p * p * 3],
                    "{tag}: reconstruction {:?}",
                    g.shape(out.reconstruction)
                );
                let dec = decoder_tokens(&fx, &cfg, &x_label, &label_marks, &y_marks).unwrap();
                let dec_len = 16 / (p * p) + l_y;
                ensure!(
                    g.shape(dec) == vec![dec_len, 8] && cfg.decoder_len() == dec_len,
                    "{tag}: decoder tokens {:?}",
                    g.shape(dec)
                );
                let y = finetune_forward(&fx, &cfg, &x, &enc_marks, &x_label, &label_marks, &y_marks).unwrap();
                ensure!(g.shape(y) == vec![l_y, 3], "{tag}: forecast {:?}", g.shape(y));
                cases += 1;
            }
        }
    }
    Ok(format!("{cases} configurations"))
}

fn c07_metrics() -> Outcome {
    fn oracle(y: &[f64], yh: &[f64], n: usize, d: usize) -> (f64, f64) {
        let (mut sq, mut ab) = (0.0, 0.0);
        for i in 0..n {
            for j in 0..d {
                let e = y[i * d + j] - yh[i * d + j];
                sq += e * e / d as f64;
                ab += e.abs() / d as f64;
            }
        }
        (sq / n as f64, ab / n as f64)
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..200 {
        let (n, d) = (rng.random_range(1..=16), rng.random_range(1..=16));
        let y = random(&mut rng, &[n, d]).map(|v| 10.0 * v);
        let yh = random(&mut rng, &[n, d]).map(|v| 10.0 * v);
        let (m, a) = oracle(y.data(), yh.data(), n, d);
        let (got_m, got_a) = (mse(&y, &yh).unwrap(), mae(&y, &yh).unwrap());
        ensure!(
            got_m.to_bits() == m.to_bits() && got_a.to_bits() == a.to_bits(),
            "case {case}: {got_m}/{got_a} vs {m}/{a}"
        );
    }
    let y = NdArray::<f64>::from_f64(&[2, 2], &[1., 2., 3., 4.]).unwrap();
    let yh = NdArray::<f64>::from_f64(&[2, 2], &[1., 3., 3., 6.]).unwrap();
    let (m, a) = (mse(&y, &yh).unwrap(), mae(&y, &yh).unwrap());
    ensure!(m == 1.25 && a == 0.75, "worked example gave {m}/{a}");
    Ok("200 random cases exact; worked example 1.25 / 0.75".into())
}

fn c08_overfit() -> Outcome {
    let start = Instant::now();
    let cfg = ModelConfig {
        enc_layers: 1,
        finetune_dec_layers: 1,
        ..ModelConfig::desk(3)
    };
    let data = noiseless_windows(200, &cfg);
    ensure!(data.len() == 200, "{} windows", data.len());
    let train = TrainConfig {
        base_lr: 1e-3,
        epochs: 50,
        batch_size: 32,
        patience: 0,
        schedule: Schedule::Constant,
        seed: 1,
        ..TrainConfig::finetune()
    };
    let out = finetune(&cfg, &train, &data, None, None, &mut TrainLog::in_memory()).map_err(|e| e.to_string())?;
    let train_mse = validation_loss(&out.model, &data).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure!(train_mse < 0.05, "train MSE {train_mse} after 50 epochs");
    ensure!(elapsed < Duration::from_secs(120), "took {elapsed:?}");
    Ok(format!(
        "train MSE {train_mse:.2e} after 50 epochs, {:.1}s",
        elapsed.as_secs_f64()
    ))
}

fn c09_pretraining_learns() -> Outcome {
    let cfg = ModelConfig::desk(3);
    let data = noiseless_windows(600, &cfg);
    let train = TrainConfig {
        base_lr: 1e-3,
        scale_lr: false,
        epochs: 20,
        batch_size: 8,
        mask_ratio: 0.85,
        seed: 1,
        ..TrainConfig::pretrain()
    };
    let out = pretrain(&cfg, &train, &data, &mut TrainLog::in_memory()).map_err(|e| e.to_string())?;
    let (first, last) = (out.history[0].train_loss, out.history[19].train_loss);
    ensure!(last <= 0.5 * first, "epoch 20 loss {last} vs epoch 1 loss {first}");
    Ok(format!(
        "epoch 1 {first:.4} -> epoch 20 {last:.4} ({:.2}x)",
        last / first
    ))
}

fn c10_pretraining_helps() -> Outcome {
    let cfg = ModelConfig::desk(3);
    let rows = 800;
    let opts = EvalOptions {
        destandardize: None,
        parallel: true,
        fingerprint: String::new(),
    };
    let (mut ours, mut scratch, mut naive) = (Vec::new(), Vec::new(), Vec::new());
    for seed in 1..=3u64 {
        let frame = synth_generate(&SynthSpec::multi_sine(rows + 400, 3, 0.3, seed)).unwrap();
        let st = Standardizer::fit(frame.slice(0..rows).unwrap().values()).unwrap();
        let frame = st.apply_frame(&frame).unwrap();
        let split = |r: std::ops::Range<usize>| make_windows::<f32>(&frame.slice(r).unwrap(), 64, 16, 8, 1).unwrap();
        let (train, val, test) = (split(0..rows), split(rows..rows + 200), split(rows + 200..rows + 400));

        let pc = TrainConfig {
            base_lr: 1e-3,
            scale_lr: false,
            epochs: 20,
            batch_size: 8,
            seed,
            ..TrainConfig::pretrain()
        };
        let pre = pretrain(&cfg, &pc, &train, &mut TrainLog::in_memory()).map_err(|e| e.to_string())?;
        let fc = TrainConfig {
            base_lr: 1e-3,
            epochs: 30,
            batch_size: 16,
            seed,
            ..TrainConfig::finetune()
        };
        let a = finetune(
            &cfg,
            &fc,
            &train,
            Some(&val),
            Some(&pre.checkpoint.params),
            &mut TrainLog::in_memory(),
        )
        .map_err(|e| e.to_string())?;
        let b = finetune(&cfg, &fc, &train, Some(&val), None, &mut TrainLog::in_memory()).map_err(|e| e.to_string())?;
        ours.push(rolling_evaluate(&a.model, &test, &opts).map_err(|e| e.to_string())?.mse);
        scratch.push(rolling_evaluate(&b.model, &test, &opts).map_err(|e| e.to_string())?.mse);
        naive.push(
            rolling_evaluate(&Persistence, &test, &opts)
                .map_err(|e| e.to_string())?
                .mse,
        );
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[1]
    };
    let (m_ours, m_scratch, m_naive) = (median(&mut ours), median(&mut scratch), median(&mut naive));
    ensure!(
        m_ours <= 1.05 * m_scratch,
        "pretrained {m_ours} vs from scratch {m_scratch}"
    );
    ensure!(
        m_ours < m_naive && m_scratch < m_naive,
        "persistence {m_naive} not beaten ({m_ours}, {m_scratch})"
    );
    Ok(format!(
        "median test MSE pretrained {m_ours:.4}, from scratch {m_scratch:.4}, persistence {m_naive:.4}"
    ))
}

fn c11_recipe() -> Outcome {
    let lr = scaled_lr(1e-3, 64);
    ensure!((lr - 2.5e-4).abs() < 1e-18, "scaled_lr(1e-3, 64) = {lr}");
    for e in 0..10 {
        let (a, b) = (exponential_lr(e, 1e-4), exponential_lr(e + 1, 1e-4));
        ensure!((b - 0.5 * a).abs() <= 1e-20, "epoch {e}: {a} -> {b}");
    }
    let third = exponential_lr(3, 1e-4);
    ensure!((third - 1.25e-5).abs() < 1e-20, "lr at epoch 3 = {third}");
    let mut stop = EarlyStopping::new(3);
    let verdicts: Vec<Verdict> = [3.0, 2.0, 2.1, 2.2, 2.3]
        .iter()
        .enumerate()
        .map(|(i, &l)| stop.observe(i + 1, l))
        .collect();
    let expect = [
        Verdict::Improved,
        Verdict::Improved,
        Verdict::Continue,
        Verdict::Continue,
        Verdict::Stop,
    ];
    ensure!(verdicts == expect, "verdicts {verdicts:?}");
    ensure!(stop.best_epoch() == Some(2), "best epoch {:?}", stop.best_epoch());
    let (pre, ft) = (TrainConfig::pretrain(), TrainConfig::finetune());
    ensure!(
        pre.mask_ratio == 0.85 && pre.batch_size == 64 && pre.weight_decay == 0.05,
        "pretrain recipe {pre:?}"
    );
    ensure!(
        pre.betas == [0.9, 0.95] && ft.betas == [0.9, 0.999],
        "betas {:?} / {:?}",
        pre.betas,
        ft.betas
    );
    ensure!(
        ft.base_lr == 1e-4 && ft.batch_size == 32 && ft.patience == 3,
        "finetune recipe {ft:?}"
    );
    Ok("scaled lr 2.5e-4, halving per epoch, stop after epoch 5 with best 2".into())
}

fn c12_reproducibility() -> Outcome {
    let cfg = ModelConfig {
        d_model: 16,
        d_ff: 32,
        enc_layers: 1,
        input_len: 16,
        label_len: 8,
        pred_len: 4,
        ..ModelConfig::desk(2)
    };
    let frame = synth_generate(&SynthSpec::multi_sine(120, 2, 0.2, 12)).unwrap();
    let train: WindowSet<f32> = make_windows(&frame.slice(0..90).unwrap(), 16, 8, 4, 1).unwrap();
    let val: WindowSet<f32> = make_windows(&frame.slice(90..120).unwrap(), 16, 8, 4, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let run = |tag: &str| -> mtsmae::Result<(Checkpoint<f32>, String, String)> {
        let pre_log = dir.path().join(format!("{tag}_pretrain.csv"));
        let ft_log = dir.path().join(format!("{tag}_finetune.csv"));
        let pc = TrainConfig {
            epochs: 3,
            batch_size: 8,
            seed: 42,
            ..TrainConfig::pretrain()
        };
        let pre = pretrain(&cfg, &pc, &train, &mut TrainLog::to_file(&pre_log)?)?;
        let fc = TrainConfig {
            epochs: 3,
            batch_size: 8,
            seed: 42,
            ..TrainConfig::finetune()
        };
        let ft = finetune(
            &cfg,
            &fc,
            &train,
            Some(&val),
            Some(&pre.checkpoint.params),
            &mut TrainLog::to_file(&ft_log)?,
        )?;
        let read = |p: &Path| std::fs::read_to_string(p).unwrap();
        Ok((ft.best, read(&pre_log), read(&ft_log)))
    };
    let (a, pa, fa) = run("a").map_err(|e| e.to_string())?;
    let (b, pb, fb) = run("b").map_err(|e| e.to_string())?;
    ensure!(
        a.params.bitwise_eq(&b.params),
        "fixed-seed reruns gave different weights"
    );
    ensure!(
        strip_wall_clock(&pa) == strip_wall_clock(&pb),
        "pretraining logs differ"
    );
    ensure!(
        strip_wall_clock(&fa) == strip_wall_clock(&fb),
        "fine-tuning logs differ"
    );
    ensure!(
        pa.lines().count() == 4 && fa.lines().count() >= 3,
        "unexpected log lengths"
    );

    let path = dir.path().join("model.ckpt");
    a.save(&path).map_err(|e| e.to_string())?;
    let back = Checkpoint::<f32>::load(&path).map_err(|e| e.to_string())?;
    ensure!(
        back.params.bitwise_eq(&a.params),
        "checkpoint weights changed on reload"
    );
    ensure!(
        back.to_bytes().unwrap() == std::fs::read(&path).unwrap(),
        "re-encoded bytes differ"
    );
    ensure!(
        back.config == a.config && back.epoch == a.epoch && back.rng == a.rng,
        "checkpoint header changed"
    );

    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let wide = Checkpoint {
        config: CheckpointConfig {
            model: cfg.clone(),
            train: None,
        },
        epoch: 9,
        rng: RngState::capture(&rng),
        params: init_params::<f64, _>(&cfg, &mut rng).unwrap(),
    };
    let bytes = wide.to_bytes().unwrap();
    let again = Checkpoint::<f64>::from_bytes(&bytes).unwrap();
    ensure!(
        again.params.bitwise_eq(&wide.params) && again.to_bytes().unwrap() == bytes,
        "f64 round trip"
    );
    ensure!(
        matches!(Checkpoint::<f32>::from_bytes(&bytes), Err(Error::Format(_))),
        "dtype tag ignored"
    );
    Ok(format!(
        "f32 and f64 round trips bitwise; {} + {} log rows identical",
        pa.lines().count() - 1,
        fa.lines().count() - 1
    ))
}

fn c13_cli() -> Outcome {
    let start = Instant::now();
    let bin = env!("CARGO_BIN_EXE_mtsmae");
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::write(
        root.join("spec.toml"),
        "n = 1500\nd = 3\nnoise_std = 0.1\nseed = 1\ndim_phase_step = 0.7\n\
         components = [{ period = 24, amp = 1.0 }, { period = 12, amp = 0.5, phase = 0.3 }]\n",
    )
    .unwrap();
    std::fs::write(
        root.join("run.toml"),
        "seed = 1\n[data]\ncsv = \"data.csv\"\n[pretrain]\nepochs = 3\n[finetune]\nepochs = 3\n",
    )
    .unwrap();
    let run = |args: &[&str]| -> std::result::Result<String, String> {
        let out = Command::new(bin)
            .current_dir(root)
            .args(args)
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()));
        }
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    };
    run(&["synth", "spec.toml", "--out", "data.csv"])?;
    run(&["--config", "run.toml", "pretrain", "--out", "pre"])?;
    run(&[
        "--config",
        "run.toml",
        "finetune",
        "--out",
        "ft",
        "--init",
        "pre/pretrain.ckpt",
    ])?;
    let summary = run(&[
        "--config",
        "run.toml",
        "evaluate",
        "--out",
        "ev",
        "--ckpt",
        "ft/finetune.ckpt",
    ])?;

    let ev = root.join("ev");
    let read = |name: &str| std::fs::read_to_string(ev.join(name)).map_err(|e| format!("{name}: {e}"));
    let metrics = read("metrics.csv")?;
    let predictions = read("predictions.csv")?;
    let chart = read("chart.svg")?;
    ensure!(
        metrics.lines().next() == Some("window_start,mse,mae"),
        "metrics header {:?}",
        metrics.lines().next()
    );
    ensure!(
        predictions.lines().next() == Some("window_start,step,dim,y_true,y_pred"),
        "predictions header {:?}",
        predictions.lines().next()
    );
    let windows = metrics.lines().count() - 1;
    ensure!(windows == 300 - 64 - 8 + 1, "{windows} evaluation windows");
    ensure!(predictions.lines().count() - 1 == windows * 8 * 3, "prediction rows");
    ensure!(chart.matches("<polyline").count() == 2, "chart polylines");
    ensure!(chart.contains("viewBox=\"0 0 1200 400\""), "chart viewport");
    for f in [
        "pre/config.toml",
        "pre/pretrain_log.csv",
        "ft/finetune_log.csv",
        "ft/finetune.ckpt",
    ] {
        ensure!(root.join(f).is_file(), "missing {f}");
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(300), "took {elapsed:?}");
    Ok(format!(
        "{windows} windows, summary {}, {:.1}s",
        summary.trim(),
        elapsed.as_secs_f64()
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, Check); 13] = [
        ("gradient correctness", c01_gradients),
        ("mask accounting", c02_masking),
        ("masked-loss locality", c03_loss_locality),
        ("visible-token invariance", c04_visible_invariance),
        ("decoder causality", c05_decoder_causality),
        ("shape contract", c06_shapes),
        ("metric oracle", c07_metrics),
        ("overfit check", c08_overfit),
        ("pretraining learns", c09_pretraining_learns),
        ("pretraining helps", c10_pretraining_helps),
        ("recipe constants", c11_recipe),
        ("checkpoint and log reproducibility", c12_reproducibility),
        ("end-to-end CLI smoke", c13_cli),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = format!("criterion {:02}", i + 1);
        if !filter.is_empty()
            && !filter
                .iter()
                .any(|f| name.contains(f.as_str()) || id.contains(f.as_str()))
        {
            continue;
        }
        let t = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("{id} PASS {name} [{secs:.1}s]: {detail}"),
            Err(why) => {
                failed += 1;
                println!("{id} FAIL {name} [{secs:.1}s]: {why}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
