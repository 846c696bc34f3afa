//! One test per acceptance criterion. Each prints a single
//! `criterion N: PASS|FAIL ...` line (visible with `--nocapture`) and then
//! asserts the same condition.

mod common;

use std::time::{Duration, Instant};

use ndarray::Array2;
use proxens::data::{build_frames, prepare, synthetic::SyntheticKind, FramePair, PipelineConfig, RawSeries, Scaler};
use proxens::dynamic::{dynamic_forecast, latest_frame, DynamicConfig};
use proxens::ensemble::{consensus_weights, Ensemble, EnsembleConfig, Norm, Phase, Variant};
use proxens::evaluation::{mape, rmse, wilcoxon_signed_rank};
use proxens::experiment::{Experiment, ExperimentConfig};
use proxens::hpo::{optimize, random_search, tune_ensemble, Point, SearchSpace, TpeConfig, TuneSettings};
use proxens::machines::{MachineSpec, MlpMachine, MlpParams, Registry, Shape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{instance, qualified_set, random_dims};

fn report(id: u32, pass: bool, detail: String) {
    println!("criterion {id}: {} {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {id}: {detail}");
}

fn random_config<R: Rng>(rng: &mut R) -> EnsembleConfig {
    EnsembleConfig {
        epsilon: rng.random_range(0.01..0.8),
        alpha: rng.random_range(1..=20) as f64 / 20.0,
        norm: [Norm::Euclidean, Norm::Manhattan, Norm::Chebyshev][rng.random_range(0..3)],
        ..EnsembleConfig::default()
    }
}

/// Independent distance for the oracles.
fn dist(norm: Norm, a: &[f64], b: &[f64]) -> f64 {
    let d = a.iter().zip(b).map(|(x, y)| (x - y).abs());
    match norm {
        Norm::Euclidean => d.map(|v| v * v).sum::<f64>().sqrt(),
        Norm::Manhattan => d.sum(),
        Norm::Chebyshev => d.fold(0.0, f64::max),
    }
}

#[test]
fn c01_weights_match_brute_force() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let (s, m, n) = random_dims(&mut rng);
        let (prox, q) = instance(&mut rng, s, m, n);
        let cfg = random_config(&mut rng);
        let got = consensus_weights(&prox, q.view(), &cfg).unwrap();

        let need = ((m as f64 * cfg.alpha) - 1e-9).ceil().max(1.0) as usize;
        let mut votes = vec![0usize; s];
        for (i, v) in votes.iter_mut().enumerate() {
            for k in 0..m {
                let p: Vec<f64> = (0..n).map(|j| prox.predictions()[[i, k, j]]).collect();
                let r: Vec<f64> = (0..n).map(|j| q[[k, j]]).collect();
                if dist(cfg.norm, &p, &r) <= cfg.epsilon {
                    *v += 1;
                }
            }
        }
        let count = votes.iter().filter(|&&v| v >= need).count();
        let expected: Vec<f64> = votes
            .iter()
            .map(|&v| if v >= need { 1.0 / count as f64 } else { 0.0 })
            .collect();
        if got.weights != expected || got.qualified_count != count || got.fallback != (count == 0) {
            mismatches += 1;
        }
    }
    let t = start.elapsed();
    report(1, mismatches == 0 && t < Duration::from_secs(10), format!("{mismatches} mismatches in 1000 instances, {t:.2?}"));
}

#[test]
fn c02_unanimity_equals_intersection() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    for _ in 0..100 {
        let (s, m, n) = random_dims(&mut rng);
        let (prox, q) = instance(&mut rng, s, m, n);
        let eps = rng.random_range(0.01..0.8);
        let counted = consensus_weights(&prox, q.view(), &EnsembleConfig::new(Variant::Dpe, eps, 1.0)).unwrap();
        // Product of per-machine ball indicators, normalized.
        let ind: Vec<f64> = (0..s)
            .map(|i| {
                (0..m)
                    .map(|k| {
                        let p: Vec<f64> = prox.entry(i).row(k).to_vec();
                        let r: Vec<f64> = q.row(k).to_vec();
                        f64::from(u8::from(dist(Norm::Euclidean, &p, &r) <= eps))
                    })
                    .product()
            })
            .collect();
        let total: f64 = ind.iter().sum();
        let direct: Vec<f64> = ind.iter().map(|&x| if total > 0.0 { x / total } else { 0.0 }).collect();
        let same_bits = counted.weights.iter().zip(&direct).all(|(a, b)| a.to_bits() == b.to_bits());
        if !same_bits {
            mismatches += 1;
        }
    }
    report(2, mismatches == 0, format!("{mismatches} bit mismatches in 100 instances"));
}

#[test]
fn c03_qualified_sets_are_nested() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut violations = 0;
    for _ in 0..200 {
        let (s, m, n) = random_dims(&mut rng);
        let (prox, q) = instance(&mut rng, s, m, n);
        let base = random_config(&mut rng);
        let set = |eps: f64, alpha: f64| {
            let cfg = EnsembleConfig { epsilon: eps, alpha, ..base };
            qualified_set(&consensus_weights(&prox, q.view(), &cfg).unwrap().weights)
        };
        let subset = |a: &[usize], b: &[usize]| a.iter().all(|i| b.contains(i));
        let e2 = base.epsilon + rng.random_range(0.0..0.5);
        if !subset(&set(base.epsilon, base.alpha), &set(e2, base.alpha)) {
            violations += 1;
        }
        let a2 = (base.alpha - rng.random_range(0.0..0.9)).max(0.05);
        if !subset(&set(base.epsilon, base.alpha), &set(base.epsilon, a2)) {
            violations += 1;
        }
    }
    report(3, violations == 0, format!("{violations} violations in 200 instances"));
}

#[test]
fn c04_metric_values() {
    let r = rmse(&[3.0, 4.0], &[0.0, 0.0]).unwrap();
    let m = mape(&[2.0, 4.0], &[1.0, 5.0]).unwrap();
    let zero = rmse(&[1.5, -2.0], &[1.5, -2.0]).unwrap() == 0.0 && mape(&[1.5, -2.0], &[1.5, -2.0]).unwrap() == 0.0;
    let pass = (r - 3.535533906).abs() <= 1e-9 && (m - 37.5).abs() <= 1e-9 && zero;
    report(4, pass, format!("rmse {r:.10}, mape {m:.10}, identity zero {zero}"));
}

#[test]
fn c05_wilcoxon_exact() {
    let a = [0.9, 0.8, 0.85, 0.7, 0.95, 0.6, 0.75, 0.65];
    let b = [0.5, 0.45, 0.4, 0.3, 0.35, 0.2, 0.25, 0.1];
    let anchor = wilcoxon_signed_rank(&a, &b).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mismatches = 0;
    let mut checked = 0;
    for _ in 0..300 {
        let n = rng.random_range(5..=12);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-4..=4) as f64).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-4..=4) as f64).collect();
        let Ok(r) = wilcoxon_signed_rank(&x, &y) else { continue };
        checked += 1;
        if !r.exact || (r.p_value - common::wilcoxon_enumerated(&x, &y)).abs() > 1e-12 {
            mismatches += 1;
        }
    }
    let pass = anchor.exact && anchor.p_value == 0.0078125 && mismatches == 0 && checked > 200;
    report(5, pass, format!("p = {} for 8 same-sign pairs; {mismatches}/{checked} enumeration mismatches", anchor.p_value));
}

#[test]
fn c06_tpe_convergence() {
    let start = Instant::now();
    let space = SearchSpace::new().uniform("v", 0.0, 1.0);
    let f = |p: &Point| -> Result<f64, std::convert::Infallible> { Ok((p["v"].as_f64().unwrap() - 0.3).powi(2)) };
    let best_v = |seed| {
        let o = optimize(f, &space, 50, &TpeConfig::default(), seed).unwrap();
        o.best["v"].as_f64().unwrap()
    };
    let close = (0..20).filter(|&s| (best_v(s) - 0.3).abs() < 0.05).count();
    let median = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        (v[24] + v[25]) / 2.0
    };
    let tpe = median((0..50).map(|s| optimize(f, &space, 30, &TpeConfig::default(), s).unwrap().best_value).collect());
    let rnd = median((0..50).map(|s| random_search(f, &space, 30, s).unwrap().best_value).collect());
    let t = start.elapsed();
    let pass = close >= 19 && tpe <= rnd && t < Duration::from_secs(30);
    report(6, pass, format!("{close}/20 seeds within 0.05; median best {tpe:.2e} (TPE) vs {rnd:.2e} (random); {t:.2?}"));
}

#[test]
fn c07_mlp_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for c in 0..20 {
        let (h, n, w) = (rng.random_range(1..=8), rng.random_range(1..=2), rng.random_range(1..=4));
        let rows = w + rng.random_range(3..10);
        let values = Array2::from_shape_fn((rows, n), |_| rng.random_range(-1.0..1.0));
        let names = (0..n).map(|j| format!("c{j}")).collect();
        let series = RawSeries::from_values(values, names).unwrap();
        let pairs: Vec<FramePair<f64>> = build_frames(&series, w).unwrap().pairs().to_vec();
        let params = MlpParams { hidden: h, ..Default::default() };
        let mut net = MlpMachine::<f64>::new("g", params).unwrap();
        net.initialize(Shape::of_pairs(&pairs).unwrap(), c);
        let (_, grad) = net.loss_and_gradient(&pairs).unwrap();
        let theta = net.parameters().unwrap();
        let step = 1e-5;
        for i in 0..theta.len() {
            let mut probe = |delta: f64| {
                let mut t = theta.clone();
                t[i] += delta;
                net.set_parameters(&t).unwrap();
                net.loss_and_gradient(&pairs).unwrap().0
            };
            let numeric = (probe(step) - probe(-step)) / (2.0 * step);
            // Absolute floor keeps vanishing gradients from dividing noise by noise.
            let rel = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        net.set_parameters(&theta).unwrap();
    }
    report(7, worst < 1e-4, format!("worst relative error {worst:.2e} over 20 networks"));
}

#[test]
fn c08_scaler_and_frames() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let values = Array2::from_shape_fn((25_000, 4), |_| rng.random_range(-1e3..1e3));
    let names: Vec<String> = (0..4).map(|j| format!("c{j}")).collect();
    let scaler = Scaler::fit_rows(values.view(), &names).unwrap();
    let back = scaler.inverse_scale(scaler.scale_values(values.view()).unwrap().view()).unwrap();
    let err = (&back - &values).iter().fold(0.0f64, |m, d: &f64| m.max(d.abs()));
    let mut frames_ok = true;
    for _ in 0..200 {
        let w = rng.random_range(1..30);
        let t = w + rng.random_range(1..100);
        let s = RawSeries::<f64>::from_values(Array2::zeros((t, 2)), vec!["a".into(), "b".into()]).unwrap();
        frames_ok &= build_frames(&s, w).unwrap().len() == t - w;
    }
    report(8, err < 1e-12 && frames_ok, format!("max round-trip error {err:.2e} over 1e5 values; frame counts exact {frames_ok}"));
}

/// The bundled sinusoid as shipped in `configs/example.toml`.
fn sinusoid_case(seed: u64) -> (f64, f64, f64) {
    let s = SyntheticKind::Sinusoid.generate::<f64>(1500, seed);
    let p = prepare(&s, &PipelineConfig { window: 10, cumsum_columns: Some(vec![]), ..Default::default() }).unwrap();
    let reg = Registry::default();
    let roster = [MachineSpec::new("ridge"), MachineSpec::new("knn"), MachineSpec::new("mlp")];
    let base = EnsembleConfig::new(Variant::Dpe, 0.05, 1.0);
    let tuned = tune_ensemble(&reg, &roster, &p.dataset, &base, &TuneSettings::default(), seed).unwrap();
    let ens = Ensemble::fit(&reg, &roster, &p.dataset, tuned.config, Phase::Test, seed).unwrap();
    let test = p.dataset.test();
    let actual: Vec<f64> = test.iter().flat_map(|t| t.target.to_vec()).collect();
    let (pred, diags) = ens.predict_many(test.iter().map(|t| &t.frame)).unwrap();
    let dpe = rmse(&actual, &pred.iter().copied().collect::<Vec<_>>()).unwrap();
    let best_single = ens
        .bank
        .machines()
        .iter()
        .map(|m| {
            let y: Vec<f64> = test.iter().flat_map(|t| m.predict(&t.frame).unwrap().to_vec()).collect();
            rmse(&actual, &y).unwrap()
        })
        .fold(f64::INFINITY, f64::min);
    let fallback = diags.iter().filter(|d| d.fallback).count() as f64 / diags.len() as f64;
    (dpe, best_single, fallback)
}

#[test]
fn c09_end_to_end_sinusoid() {
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in 0..5 {
        let (dpe, best, fallback) = sinusoid_case(seed);
        let ratio = dpe / best;
        pass &= ratio <= 1.1 && fallback < 0.2;
        parts.push(format!("seed {seed}: ratio {ratio:.3} fallback {:.0}%", fallback * 100.0));
    }
    let t = start.elapsed();
    pass &= t < Duration::from_secs(300);
    report(9, pass, format!("{}; {t:.1?}", parts.join(", ")));
}

#[test]
fn c10_dynamic_loop() {
    let s = SyntheticKind::RandomWalk.generate::<f64>(400, 10);
    let p = prepare(&s, &PipelineConfig { window: 8, cumsum_columns: Some(vec![]), ..Default::default() }).unwrap();
    let roster = [MachineSpec::new("ridge"), MachineSpec::new("knn")];
    let ens = Ensemble::fit(&Registry::default(), &roster, &p.dataset, EnsembleConfig::new(Variant::Dpe, 0.05, 0.5), Phase::Test, 10).unwrap();
    let sp = p.dataset.split();
    let history = p.transformed.head(sp.n_train + sp.n_val + 8);
    let k = 15;
    let (out, state) = dynamic_forecast(&history, &ens, 8, &DynamicConfig { horizon: k, ..Default::default() }, None, None).unwrap();
    let (frame, scaler) = latest_frame(history.values(), history.column_names(), 8).unwrap();
    let fixed = scaler.inverse_scale_row(ens.predict(&frame).unwrap().value.view()).unwrap();
    let bit_identical = out.row(0).iter().zip(&fixed).all(|(a, b)| a.to_bits() == b.to_bits());
    let monotone = state.log.windows(2).all(|w| {
        (0..2).all(|j| w[1].scaler_min[j] <= w[0].scaler_min[j] && w[1].scaler_max[j] >= w[0].scaler_max[j])
    });
    let pass = out.nrows() == k && state.history.nrows() == history.len() + k && bit_identical && monotone;
    report(10, pass, format!("{} rows for k={k}; step 1 bit-identical {bit_identical}; scaler monotone {monotone}", out.nrows()));
}

#[test]
fn c11_ablation_harness() {
    let toml = r#"
config_version = 1
seed = 11
[pipeline]
window = 8
cumsum_columns = []
[[datasets]]
name = "sinusoid"
synthetic = { kind = "sinusoid", length = 400 }
[[machines]]
kind = "ridge"
[[machines]]
kind = "knn"
[ablation]
tpe_budget = 20
grid = { resolution = { epsilon = 10, partition_fraction = 2 } }
"#;
    let cfg = ExperimentConfig::from_toml(toml).unwrap();
    let run = |dir: &std::path::Path| {
        let rows = Experiment::new(cfg.clone(), ".", dir).unwrap().cmd_ablate().unwrap();
        (rows, std::fs::read(dir.join("ablation.csv")).unwrap())
    };
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (rows, csv1) = run(d1.path());
    let (rows2, csv2) = run(d2.path());
    let names: Vec<&str> = rows.iter().map(|r| r.variant.as_str()).collect();
    let expected = ["GridCOBRA", "BOACOBRA", "GridDPE", "BOADPE", "BOAPaDPE", "GridPaDPE"];
    let in_range = rows
        .iter()
        .all(|r| r.rmse_normalized > 0.0 && r.rmse_normalized <= 1.0 && r.mape_normalized > 0.0 && r.mape_normalized <= 1.0);
    let deterministic = rows == rows2 && csv1 == csv2;
    let pass = names == expected && in_range && deterministic;
    report(11, pass, format!("variants {names:?}; normalized in (0,1] {in_range}; deterministic {deterministic}"));
}
