//! End-to-end acceptance checks. Runs without the libtest harness so that
//! every check prints exactly one PASS/FAIL/SKIP line.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ssmrul::data::{
    aggregate_predictions, make_windows, window_count, RunToFailureCycle, SynthSpec,
};
use ssmrul::model::{build_model, Backbone, Conditioning, ModelConfig, ModelError, Norm};
use ssmrul::sqr::{empirical_quantile, masked_objective, pinball, MaskedTargets, QuantileLevel};
use ssmrul::ssm::{
    conv_forward, discretize, hippo_legs, hippo_normal_part, init_ssm, materialize_kernel,
    recurrent_forward, s5_scan, ContinuousRepr, Discretization, Variant,
};
use ssmrul::tensor::{finite_difference_check, instrument, Tensor};
use ssmrul::train::{
    evaluate, load_dataset, read_checkpoint, run_seed_sweep, train_on, write_checkpoint,
    DataSource, OptimizerConfig, QuantileEvalReport, TrainConfig,
};
use ssmrul_cli::emit_blob_data;

type Outcome = Result<String, String>;
type Check = (u32, &'static str, fn() -> Outcome);

enum Status {
    Pass,
    Fail,
    Skip,
}

fn run(id: u32, name: &str, f: impl FnOnce() -> Outcome) -> Status {
    let t0 = Instant::now();
    let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    });
    let secs = t0.elapsed().as_secs_f64();
    let (tag, status, detail) = match res {
        Ok(d) if d.starts_with("skipped") => ("SKIP", Status::Skip, d),
        Ok(d) => ("PASS", Status::Pass, d),
        Err(d) => ("FAIL", Status::Fail, d),
    };
    println!("[{id}] {name}: {tag} ({detail}; {secs:.1}s)");
    status
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

fn random_input(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn duality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut worst_conv, mut worst_scan) = (0.0f64, 0.0f64);
    let mut cases = 0;
    for variant in [Variant::S4, Variant::S4d, Variant::S5] {
        for n in [4, 16] {
            for h in [1, 8] {
                for l in [1, 7, 64, 500] {
                    let mut ssm = init_ssm(variant, n, h, rng.random()).map_err(e)?;
                    if let ContinuousRepr::Diagonal { lambda, .. }
                    | ContinuousRepr::Mimo { lambda, .. } = &mut ssm.repr
                    {
                        for v in lambda.iter_mut() {
                            *v = Complex64::new(
                                -rng.random_range(0.05..1.0),
                                rng.random_range(-20.0..20.0),
                            );
                        }
                    }
                    for v in &mut ssm.log_dt {
                        *v = rng.random_range(1e-3f64.ln()..1e-1f64.ln());
                    }
                    for v in &mut ssm.d {
                        *v = rng.random_range(-1.0..1.0);
                    }
                    let d = discretize(&ssm, Discretization::Bilinear).map_err(e)?;
                    let u = random_input(&mut rng, &[2, l, h]);
                    let k = materialize_kernel(&d, l).map_err(e)?;
                    let conv = conv_forward(&k, &u, &d.d).map_err(e)?;
                    let (rec, _) = recurrent_forward(&d, &u, None).map_err(e)?;
                    let diff = conv.max_abs_diff(&rec).map_err(e)?;
                    ensure(diff <= 1e-8, || {
                        format!("{variant:?} N={n} H={h} L={l}: conv vs recurrent {diff:e}")
                    })?;
                    worst_conv = worst_conv.max(diff);
                    if variant == Variant::S5 {
                        let scan = s5_scan(&d, &u).map_err(e)?;
                        let diff = scan.max_abs_diff(&rec).map_err(e)?;
                        ensure(diff <= 1e-10, || {
                            format!("N={n} H={h} L={l}: scan vs recurrent {diff:e}")
                        })?;
                        worst_scan = worst_scan.max(diff);
                    }
                    cases += 1;
                }
            }
        }
    }
    Ok(format!(
        "{cases} systems, conv {worst_conv:.1e}, scan {worst_scan:.1e}"
    ))
}

fn hippo() -> Outcome {
    let mut worst = 0.0f64;
    for n in 1..=64 {
        let s = hippo_normal_part(n).map_err(e)?;
        ensure((&s + s.transpose()).amax() == 0.0, || {
            format!("N={n}: normal part not skew-symmetric")
        })?;
        let (a, p) = hippo_legs(n).map_err(e)?;
        let sum = &a + &p * p.transpose();
        let shifted = &sum + DMatrix::identity(n, n) * 0.5;
        ensure((&shifted - &s).amax() <= 1e-12 * n as f64, || {
            format!("N={n}: A + PP^T + I/2 differs from the normal part")
        })?;
        for ev in sum.complex_eigenvalues().iter() {
            worst = worst.max((ev.re + 0.5).abs());
        }
        ensure(worst <= 1e-9, || {
            format!("N={n}: eigenvalue real part off by {worst:e}")
        })?;
    }
    Ok(format!("N=1..64, worst |Re + 1/2| {worst:.1e}"))
}

fn gradients() -> Outcome {
    let mut worst = 0.0f64;
    let mut checked = 0;
    for backbone in [Backbone::S4, Backbone::S4d, Backbone::S5, Backbone::Lstm] {
        for seed in 0..10u64 {
            let cfg = ModelConfig {
                backbone,
                input_features: 3,
                latent_dim: 8,
                state_dim: 4,
                window_len: 16,
                dropout: 0.0,
                seed,
                ..ModelConfig::default()
            };
            let mut model = build_model(&cfg).map_err(e)?;
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            // step sizes drawn so the dynamics matter over 16 steps; at the
            // default init the eigenvalue gradients sit below f64 resolution
            let mut values = Vec::new();
            for p in model.params().iter() {
                values.push(if p.name.ends_with("log_dt") {
                    let draws = (0..p.value.numel())
                        .map(|_| rng.random_range(0.05f64.ln()..0.5f64.ln()))
                        .collect();
                    Tensor::new(p.value.shape().to_vec(), draws).unwrap()
                } else {
                    p.value.clone()
                });
            }
            model.params_mut().set_values(values).map_err(e)?;
            let (b, l) = (2, 16);
            let x = random_input(&mut rng, &[b, l, 3]);
            let taus = Tensor::from_vec((0..b).map(|_| rng.random_range(0.05..0.95)).collect());
            // targets sit 0.2..1 away from the initial predictions so no
            // perturbation lands on a pinball kink
            let yhat0 = model.predict(&x, &taus).map_err(e)?;
            let shifted = yhat0
                .data()
                .iter()
                .map(|v| {
                    let gap = rng.random_range(0.2..1.0);
                    if rng.random_bool(0.5) {
                        v + gap
                    } else {
                        v - gap
                    }
                })
                .collect();
            let y = Tensor::new(vec![b, l], shifted).unwrap();
            // last four steps of the second row are padding
            let mask = Tensor::new(
                vec![b, l],
                (0..b * l)
                    .map(|i| if i >= 2 * l - 4 { 0.0 } else { 1.0 })
                    .collect(),
            )
            .unwrap();
            let targets = MaskedTargets::new(y, mask).map_err(e)?;
            let report = finite_difference_check(
                |g, p| {
                    let vars = model.params().bind_flat(p)?;
                    let yhat = model.forward(&vars, g.constant(x.clone()), &taus, None)?;
                    masked_objective(&targets, yhat, &taus)
                        .map_err(|err| ModelError::InvalidConfig(err.to_string()))
                },
                &model.params().flatten(),
                5e-5,
            )
            .map_err(e)?;
            ensure(report.max_rel_error < 1e-4, || {
                format!(
                    "{} seed {seed}: rel error {:e} at {} (analytic {:e}, numeric {:e})",
                    backbone.name(),
                    report.max_rel_error,
                    report.worst_index,
                    report.analytic,
                    report.numeric
                )
            })?;
            worst = worst.max(report.max_rel_error);
            checked += 1;
        }
    }
    Ok(format!(
        "{checked} models, worst relative error {worst:.1e}"
    ))
}

fn pinball_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for dist in 0..20 {
        let n = rng.random_range(1..=15);
        // small integer support so repeated values occur
        let samples: Vec<f64> = (0..n)
            .map(|_| rng.random_range(0..8) as f64 * 0.75 - 2.0)
            .collect();
        let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0;
        let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 1.0;
        let mut grid: Vec<f64> = (0..=4000)
            .map(|i| lo + (hi - lo) * i as f64 / 4000.0)
            .collect();
        grid.extend(&samples);
        for k in 1..=9 {
            let tau = k as f64 / 10.0;
            let q = QuantileLevel::new(tau).map_err(e)?;
            let risk =
                |yhat: f64| samples.iter().map(|&y| pinball(y, yhat, q)).sum::<f64>() / n as f64;
            let best = grid.iter().map(|&g| risk(g)).fold(f64::INFINITY, f64::min);
            let argmin: Vec<f64> = grid
                .iter()
                .cloned()
                .filter(|&g| risk(g) <= best + 1e-12)
                .collect();
            let (amin, amax) = argmin
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                    (a.min(v), b.max(v))
                });
            let eq = empirical_quantile(&samples, tau).map_err(e)?;
            ensure(
                risk(eq) <= best + 1e-12 && (amin..=amax).contains(&eq),
                || {
                    format!("distribution {dist}, tau {tau}: quantile {eq} outside grid minimizers [{amin}, {amax}]")
                },
            )?;
        }
    }
    let half = QuantileLevel::new(0.5).map_err(e)?;
    for _ in 0..1000 {
        let (y, yhat): (f64, f64) = (rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
        let (p, mae) = (pinball(y, yhat, half), 0.5 * (y - yhat).abs());
        ensure(p == mae, || {
            format!("pinball({y}, {yhat}, 0.5) = {p} != {mae}")
        })?;
    }
    Ok("20 distributions x 9 levels; 1000 median checks exact".into())
}

fn cycle_of(signal: &[f64]) -> RunToFailureCycle {
    RunToFailureCycle::new(
        1,
        Tensor::new(vec![signal.len(), 1], signal.to_vec()).unwrap(),
    )
    .unwrap()
}

fn windowing() -> Outcome {
    let mut runner = TestRunner::new(PropConfig {
        cases: 512,
        failure_persistence: None,
        ..PropConfig::default()
    });
    runner
        .run(&(1usize..=300, 1usize..=300), |(t, l)| {
            let expected = (t as i64 - l as i64 + 1).max(1) as usize;
            prop_assert_eq!(window_count(t, l), expected);
            let windows = make_windows(&cycle_of(&vec![0.0; t]), l);
            prop_assert_eq!(windows.len(), expected);
            Ok(())
        })
        .map_err(e)?;
    runner
        .run(
            &(1usize..=120, 1usize..=60)
                .prop_flat_map(|(t, l)| (prop::collection::vec(-1e3f64..1e3, t), Just(l))),
            |(signal, l)| {
                let t = signal.len();
                let windows = make_windows(&cycle_of(&signal), l);
                let preds: Vec<(usize, Tensor)> = windows
                    .iter()
                    .map(|w| {
                        let vals = (0..l)
                            .map(|i| signal.get(w.offset + i).copied().unwrap_or(f64::NAN))
                            .collect();
                        (w.offset, Tensor::from_vec(vals))
                    })
                    .collect();
                let back = aggregate_predictions(&preds, t).unwrap();
                let same = back
                    .data()
                    .iter()
                    .zip(&signal)
                    .all(|(a, b)| a.to_bits() == b.to_bits());
                prop_assert!(same, "aggregation changed the signal (T={}, L={})", t, l);
                Ok(())
            },
        )
        .map_err(e)?;
    Ok("count law over T, L in [1, 300]; exact aggregation round trip".into())
}

fn calibration_config() -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            backbone: Backbone::S4d,
            latent_dim: 16,
            window_len: 20,
            dropout: 0.0,
            ..ModelConfig::default()
        },
        data: DataSource::Synth(SynthSpec {
            n_train: 50,
            n_test: 20,
            ..SynthSpec::default()
        }),
        epochs: 30,
        batch_size: 32,
        seed: 0,
        optimizer: OptimizerConfig {
            learning_rate: 1e-3,
            ..OptimizerConfig::default()
        },
        ..TrainConfig::default()
    }
}

fn calibration() -> Outcome {
    let cfg = calibration_config();
    let data = load_dataset(&cfg.data).map_err(e)?;
    let (ckpt, _) = train_on(&cfg, &data).map_err(e)?;
    let report = evaluate(&ckpt, &data.test, &cfg.eval).map_err(e)?;
    let summary = report
        .rows
        .iter()
        .map(|r| format!("{}:{:.3}", r.tau, r.coverage))
        .collect::<Vec<_>>()
        .join(" ");
    for tau in [0.1, 0.5, 0.9] {
        let row = report.row(tau).ok_or_else(|| format!("no row for {tau}"))?;
        ensure((row.coverage - tau).abs() <= 0.05, || {
            format!("coverage at {tau} is {:.3}; {summary}", row.coverage)
        })?;
    }
    ensure(
        report
            .rows
            .windows(2)
            .all(|w| w[0].coverage <= w[1].coverage),
        || format!("coverage not monotone: {summary}"),
    )?;
    Ok(format!("coverage {summary}"))
}

fn fd001() -> Outcome {
    let Some(dir) = std::env::var_os("CMAPSS_DIR").map(PathBuf::from) else {
        return Ok("skipped: set CMAPSS_DIR to a directory holding train_FD001.txt, test_FD001.txt, RUL_FD001.txt".into());
    };
    let cfg = TrainConfig {
        data: DataSource::Cmapss {
            train: dir.join("train_FD001.txt"),
            test: dir.join("test_FD001.txt"),
            rul: dir.join("RUL_FD001.txt"),
        },
        ..TrainConfig::default()
    };
    let report = run_seed_sweep(&cfg, &[0, 1, 2, 3, 4]).map_err(e)?;
    let get = |tau: f64| {
        report
            .row(tau)
            .map(|r| r.rmse)
            .ok_or_else(|| format!("no row for {tau}"))
    };
    let (lo, mid, hi) = (get(0.1)?, get(0.5)?, get(0.9)?);
    let summary = format!("RMSE 0.1:{lo:.2} 0.5:{mid:.2} 0.9:{hi:.2}");
    ensure((28.0..=50.0).contains(&mid), || {
        format!("median RMSE outside [28, 50]; {summary}")
    })?;
    ensure(lo > mid && hi > mid, || {
        format!("extreme quantiles not worse than the median; {summary}")
    })?;
    Ok(summary)
}

fn efficiency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for (f, h, layers, cond, norm) in [
        (3, 8, 2, Conditioning::Concat, Norm::Layernorm),
        (24, 5, 1, Conditioning::Learned, Norm::None),
        (7, 16, 3, Conditioning::Multiplicative, Norm::Layernorm),
    ] {
        let l = 12;
        let base = ModelConfig {
            input_features: f,
            latent_dim: h,
            state_dim: 6,
            layers,
            window_len: l,
            conditioning: cond,
            norm,
            dropout: 0.0,
            ..ModelConfig::default()
        };
        let fin = f + usize::from(cond == Conditioning::Concat);
        let affine = |i: usize, o: usize| i * o + o;
        let norm_p = if norm == Norm::Layernorm { 2 * h } else { 0 };
        let cond_p = usize::from(cond == Conditioning::Learned);
        let shell = affine(fin, h) + affine(h, 1) + cond_p;

        let lstm = build_model(&ModelConfig {
            backbone: Backbone::Lstm,
            ..base.clone()
        })
        .map_err(e)?;
        let lstm_layer = 4 * h * h + 4 * h * h + 4 * h;
        let expected = shell + layers * (norm_p + lstm_layer);
        ensure(lstm.count_params() == expected, || {
            format!("lstm params {} != {expected}", lstm.count_params())
        })?;
        let hand = (fin * h * l + layers * 4 * l * (h * h + h * h) + h * l) as u64;
        let x = random_input(&mut rng, &[1, l, f]);
        let tau = Tensor::from_vec(vec![0.4]);
        let (_, counted) = instrument::count(|| lstm.predict(&x, &tau).unwrap());
        ensure(lstm.count_mult_adds(l) == hand && counted == hand, || {
            format!(
                "lstm mult-adds: analytic {} counted {counted} hand {hand}",
                lstm.count_mult_adds(l)
            )
        })?;

        // FFT-based layers: kernel generation + H (3 n log2 n + n) + mixing affine
        let m = 3usize;
        let n_fft = (2 * l - 1).next_power_of_two();
        let conv = h * (3 * n_fft * n_fft.trailing_zeros() as usize + n_fft);
        for (bb, kernel) in [(Backbone::S4d, h * m * l), (Backbone::S4, h * m * m * l)] {
            let model = build_model(&ModelConfig {
                backbone: bb,
                ..base.clone()
            })
            .map_err(e)?;
            let hand = (fin * h * l + layers * (kernel + conv + h * h * l) + h * l) as u64;
            let (_, counted) = instrument::count(|| model.predict(&x, &tau).unwrap());
            ensure(model.count_mult_adds(l) == hand && counted == hand, || {
                format!(
                    "{} mult-adds: analytic {} counted {counted} formula {hand}",
                    bb.name(),
                    model.count_mult_adds(l)
                )
            })?;
        }
        let s5 = build_model(&ModelConfig {
            backbone: Backbone::S5,
            ..base.clone()
        })
        .map_err(e)?;
        let hand = (fin * h * l + layers * l * (2 * m * h + m) + h * l) as u64;
        let (_, counted) = instrument::count(|| s5.predict(&x, &tau).unwrap());
        ensure(s5.count_mult_adds(l) == hand && counted == hand, || {
            format!(
                "s5 mult-adds: analytic {} counted {counted} formula {hand}",
                s5.count_mult_adds(l)
            )
        })?;
    }

    // blob data from a small trained set of every backbone
    let mut reports = Vec::new();
    let mut expected = Vec::new();
    for bb in [Backbone::S4, Backbone::S4d, Backbone::S5, Backbone::Lstm] {
        let cfg = small_run_config(bb, 0);
        let data = load_dataset(&cfg.data).map_err(e)?;
        let (ckpt, _) = train_on(&cfg, &data).map_err(e)?;
        let report = evaluate(&ckpt, &data.test, &cfg.eval).map_err(e)?;
        let rmse = report.row(0.5).ok_or("no median row")?.rmse;
        expected.push((
            bb.name().to_string(),
            ckpt.model.count_params(),
            ckpt.model.count_mult_adds(cfg.model.window_len),
            rmse,
        ));
        reports.push(report);
    }
    let csv = emit_blob_data(&reports);
    let mut lines = csv.lines();
    ensure(
        lines.next() == Some("name,param_count,mult_adds,rmse_median"),
        || "bad blob header".into(),
    )?;
    let rows: Vec<&str> = lines.collect();
    ensure(rows.len() == expected.len(), || {
        format!("{} blob rows for {} models", rows.len(), expected.len())
    })?;
    for (row, (name, params, macs, rmse)) in rows.iter().zip(&expected) {
        let cols: Vec<&str> = row.split(',').collect();
        ensure(cols.len() == 4, || format!("bad blob row {row:?}"))?;
        let ok = cols[0] == name
            && cols[1].parse::<usize>().ok() == Some(*params)
            && cols[2].parse::<u64>().ok() == Some(*macs)
            && cols[3].parse::<f64>().ok() == Some(*rmse);
        ensure(ok, || {
            format!("blob row {row:?} does not match {name} {params} {macs} {rmse}")
        })?;
    }
    Ok(
        "params, instrumented and analytic mult-adds agree; blob rows match 4 trained models"
            .into(),
    )
}

fn small_run_config(backbone: Backbone, seed: u64) -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            backbone,
            latent_dim: 8,
            state_dim: 4,
            window_len: 16,
            ..ModelConfig::default()
        },
        data: DataSource::Synth(SynthSpec {
            n_train: 6,
            n_test: 3,
            min_len: 20,
            max_len: 40,
            ..SynthSpec::default()
        }),
        epochs: 2,
        seed,
        ..TrainConfig::default()
    }
}

fn ssmrul(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_ssmrul"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(e)?;
    ensure(out.status.success(), || {
        format!(
            "ssmrul {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr).trim()
        )
    })
}

fn pipeline(root: &Path, cfg: &Path) -> Result<Vec<u8>, String> {
    let p = |s: &str| root.join(s).to_string_lossy().into_owned();
    let cfg = cfg.to_string_lossy().into_owned();
    ssmrul(&["synth", "-c", &cfg, "-o", &p("data")])?;
    ssmrul(&["train", "-c", &p("data/config.toml"), "-o", &p("train")])?;
    ssmrul(&[
        "eval",
        "-c",
        &p("data/config.toml"),
        "--checkpoint",
        &p("train/checkpoint.bin"),
        "-o",
        &p("eval"),
    ])?;
    std::fs::read(root.join("eval/report.json")).map_err(e)
}

fn same_predictions(a: &QuantileEvalReport, b: &QuantileEvalReport) -> bool {
    let bits = |r: &QuantileEvalReport| -> Vec<u64> {
        r.signals
            .iter()
            .flat_map(|s| s.preds.iter().flatten().map(|v| v.to_bits()))
            .collect()
    };
    bits(a) == bits(b)
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(e)?;
    let cfg = tmp.path().join("run.toml");
    std::fs::write(
        &cfg,
        "epochs = 2\n\n[model]\nbackbone = \"s4d\"\nlatent_dim = 8\nstate_dim = 4\nwindow_len = 16\n\n\
         [data]\nsource = \"synth\"\nn_train = 6\nn_test = 3\nmin_len = 20\nmax_len = 40\n",
    )
    .map_err(e)?;
    let a = pipeline(&tmp.path().join("a"), &cfg)?;
    let b = pipeline(&tmp.path().join("b"), &cfg)?;
    ensure(a == b, || "reports from two identical runs differ".into())?;
    for f in [
        "train/checkpoint.bin",
        "data/train_SYNTH.txt",
        "eval/intervals/unit_001.csv",
    ] {
        let (x, y) = (
            std::fs::read(tmp.path().join("a").join(f)),
            std::fs::read(tmp.path().join("b").join(f)),
        );
        ensure(matches!((&x, &y), (Ok(x), Ok(y)) if x == y), || {
            format!("{f} differs between runs")
        })?;
    }

    for bb in [Backbone::S4, Backbone::S5, Backbone::Lstm] {
        let cfg = small_run_config(bb, 3);
        let data = load_dataset(&cfg.data).map_err(e)?;
        let (ckpt, _) = train_on(&cfg, &data).map_err(e)?;
        let before = evaluate(&ckpt, &data.test, &cfg.eval).map_err(e)?;
        let mut buf = Vec::new();
        write_checkpoint(&ckpt, &mut buf).map_err(e)?;
        let restored = read_checkpoint(buf.as_slice()).map_err(e)?;
        let after = evaluate(&restored, &data.test, &cfg.eval).map_err(e)?;
        let json = |r: &QuantileEvalReport| serde_json::to_vec(r).unwrap();
        ensure(
            json(&before) == json(&after) && same_predictions(&before, &after),
            || {
                format!(
                    "{} evaluation changed after a checkpoint round trip",
                    bb.name()
                )
            },
        )?;
    }
    Ok(format!(
        "report.json identical ({} bytes); checkpoint round trip bit-exact",
        a.len()
    ))
}

fn main() {
    // cargo passes libtest flags such as `--nocapture`; only a name filter matters here
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let checks: Vec<Check> = vec![
        (1, "convolution/recurrence duality", duality),
        (2, "HiPPO normal-plus-low-rank structure", hippo),
        (3, "gradients of the training loss", gradients),
        (4, "pinball loss quantile oracle", pinball_oracle),
        (5, "windowing laws", windowing),
        (6, "synthetic calibration", calibration),
        (7, "FD001 reproduction", fd001),
        (8, "efficiency accounting", efficiency),
        (9, "determinism", determinism),
    ];
    let mut failed = 0;
    for (id, name, f) in checks {
        if filter
            .as_deref()
            .is_some_and(|flt| !name.contains(flt) && flt != id.to_string())
        {
            continue;
        }
        if let Status::Fail = run(id, name, f) {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance check(s) failed");
        std::process::exit(1);
    }
}
