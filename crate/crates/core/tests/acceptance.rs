//! End-to-end acceptance suite. Every test prints one PASS/FAIL line to
//! stderr (uncaptured) before asserting.

use std::io::Write;
use std::time::Instant;

use bondcause_core::model::EDGE_TYPES;
use bondcause_core::nn::Mode;
use bondcause_core::sampling::{edge_samplers, gumbel_noise};
use bondcause_core::training::{batch_loss, sparsity_penalties};
use bondcause_core::*;
use bondcause_core::{data, model, pipeline, rca, sampling, synth, training};

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "[acceptance {id}] {verdict} {name}: {detail}");
}

fn random_windows(count: usize, n: usize, t: usize, d: usize, rng: &mut Rng) -> Vec<Tensor> {
    (0..count)
        .map(|_| {
            let data = (0..n * t * d).map(|_| 0.5 * rng.normal()).collect();
            Tensor::new(vec![n, t, d], data).unwrap()
        })
        .collect()
}

#[test]
fn gradient_fidelity() {
    let start = Instant::now();
    let (n, t, d) = (4, 5, 3);
    let h = 1e-5;
    let mut worst = (0.0f64, String::new());
    let mut kinks = 0usize;
    for seed in 0..3u64 {
        for mode in ["l1", "group-lasso"] {
            let mut rng = Rng::new(100 + seed);
            let mut config = TrainConfig::rca();
            config.sparsity = mode.into();
            let params = ModelParams::init(config.shape(t, d), &mut rng);
            let windows = random_windows(2, n, t, d, &mut rng);
            let samples: Vec<&Tensor> = windows.iter().collect();
            let noise = gumbel_noise(&[2 * n * (n - 1), EDGE_TYPES], &mut rng);
            let sampler = edge_samplers().get(&config.train_sampler).unwrap();
            let penalty = sparsity_penalties().get(mode).unwrap();
            let loss = |p: &ModelParams| {
                batch_loss(p, &config, &samples, &noise, sampler.as_ref(), penalty.as_ref(), Mode::Train, false)
                    .unwrap()
                    .parts
                    .total
            };

            let pass = batch_loss(&params, &config, &samples, &noise, sampler.as_ref(), penalty.as_ref(), Mode::Train, true)
                .unwrap();
            let grads = pass.graph.backward(pass.loss).unwrap();
            let analytic: Vec<Tensor> = pass.vars.vars().into_iter().map(|v| grads.get(v).unwrap().clone()).collect();
            let base = loss(&params);
            let names: Vec<String> = params.named_tensors().into_iter().map(|(s, _)| s).collect();

            for (group, name) in names.iter().enumerate() {
                let len = analytic[group].len();
                let mut budget = if len <= 12 { (0..len).collect::<Vec<_>>() } else { (0..12).map(|_| rng.below(len)).collect() };
                let (mut diff, mut a_norm, mut f_norm) = (0.0, 0.0, 0.0);
                let mut retries = 0;
                while let Some(c) = budget.pop() {
                    let mut plus = params.clone();
                    plus.tensors_mut()[group].data_mut()[c] += h;
                    let mut minus = params.clone();
                    minus.tensors_mut()[group].data_mut()[c] -= h;
                    let (lp, lm) = (loss(&plus), loss(&minus));
                    let (fwd, bwd) = ((lp - base) / h, (base - lm) / h);
                    if (fwd - bwd).abs() > 1e-2 * fwd.abs().max(bwd.abs()) + 1e-9 && retries < 24 && len > 12 {
                        // A ReLU kink lies within h of this coordinate.
                        kinks += 1;
                        retries += 1;
                        budget.push(rng.below(len));
                        continue;
                    }
                    let fd = (lp - lm) / (2.0 * h);
                    let a = analytic[group].data()[c];
                    diff += (a - fd) * (a - fd);
                    a_norm += a * a;
                    f_norm += fd * fd;
                }
                let scale = a_norm.sqrt().max(f_norm.sqrt());
                let rel = if scale < 1e-9 { diff.sqrt() } else { diff.sqrt() / scale };
                if rel > worst.0 {
                    worst = (rel, format!("{name} (seed {seed}, {mode})"));
                }
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = worst.0 < 1e-4 && elapsed < 60.0;
    report(
        1,
        "gradient fidelity",
        pass,
        &format!("worst relative error {:.2e} at {}, {kinks} kinked coordinates resampled, {elapsed:.1}s",
            worst.0, worst.1),
    );
    assert!(pass);
}

#[test]
fn gumbel_softmax_sampling() {
    let draws = 100_000;
    let probs = [0.2, 0.3, 0.5];
    let row: Vec<f64> = probs.iter().map(|p: &f64| p.ln()).collect();
    let logits = Tensor::new(vec![draws, 3], row.iter().cycle().take(3 * draws).copied().collect()).unwrap();
    let mut rng = Rng::new(7);
    let hard = sampling::categorical_hard(&logits, &mut rng).unwrap();
    let mut counts = [0.0; 3];
    for r in hard.data().chunks(3) {
        for (c, v) in counts.iter_mut().zip(r) {
            *c += v;
        }
    }
    let freq_err = counts
        .iter()
        .zip(&probs)
        .map(|(c, p)| (c / draws as f64 - p).abs())
        .fold(0.0, f64::max);
    let soft = sampling::gumbel_softmax(&logits, 0.5, &mut rng).unwrap();
    let sum_err = soft
        .data()
        .chunks(3)
        .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    let pass = freq_err <= 0.01 && sum_err <= 1e-9;
    report(
        2,
        "gumbel-softmax sampling",
        pass,
        &format!("max frequency error {freq_err:.2e}, max row-sum error {sum_err:.2e}"),
    );
    assert!(pass);
}

#[test]
fn kl_additivity() {
    let mut rng = Rng::new(11);
    let mut draw = || {
        let w: Vec<f64> = (0..3).map(|_| 0.05 + rng.uniform_open()).collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect::<Vec<f64>>()
    };
    let p: Vec<Vec<f64>> = (0..5).map(|_| draw()).collect();
    let q: Vec<Vec<f64>> = (0..5).map(|_| draw()).collect();
    let per_node: f64 = p.iter().zip(&q).map(|(a, b)| rca::categorical_kl(a, b).unwrap()).sum();
    let mut joint = 0.0;
    for code in 0..3usize.pow(5) {
        let (mut pj, mut qj, mut c) = (1.0, 1.0, code);
        for node in 0..5 {
            pj *= p[node][c % 3];
            qj *= q[node][c % 3];
            c /= 3;
        }
        joint += pj * (pj / qj).ln();
    }
    let err = (per_node - joint).abs();
    let pass = err <= 1e-9;
    report(3, "kl additivity", pass, &format!("per-node sum {per_node:.12}, joint {joint:.12}, error {err:.2e}"));
    assert!(pass);
}

fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, intervals: usize) -> f64 {
    let h = (hi - lo) / intervals as f64;
    let mut acc = f(lo) + f(hi);
    for i in 1..intervals {
        acc += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

#[test]
fn closed_form_distances() {
    use rca::DiagGaussian;
    let mut rng = Rng::new(13);
    let (mut kl_err, mut w2_err) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let (m1, m2) = (rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0));
        let (s1, s2) = (rng.uniform(0.3, 3.0), rng.uniform(0.3, 3.0));
        let a = DiagGaussian::new(vec![m1], vec![s1 * s1]).unwrap();
        let b = DiagGaussian::new(vec![m2], vec![s2 * s2]).unwrap();
        let kl_quad = simpson(
            |x| {
                let p = normal_pdf(x, m1, s1);
                let lq = -0.5 * ((x - m2) / s2).powi(2) - s2.ln();
                let lp = -0.5 * ((x - m1) / s1).powi(2) - s1.ln();
                p * (lp - lq)
            },
            m1 - 16.0 * s1,
            m1 + 16.0 * s1,
            20_000,
        );
        // Quantile coupling x ↦ μ + σ·z integrated against the standard normal.
        let w2_quad = simpson(|z| ((m1 + s1 * z) - (m2 + s2 * z)).powi(2) * normal_pdf(z, 0.0, 1.0), -16.0, 16.0, 20_000)
            .sqrt();
        kl_err = kl_err.max((rca::gaussian_kl(&a, &b).unwrap() - kl_quad).abs());
        w2_err = w2_err.max((rca::wasserstein2(&a, &b).unwrap() - w2_quad).abs());
    }
    let one = DiagGaussian::new(vec![1.0], vec![1.0]).unwrap();
    let zero = DiagGaussian::new(vec![0.0], vec![1.0]).unwrap();
    let kl_exact = (rca::gaussian_kl(&one, &zero).unwrap() - 0.5).abs();
    let w2_exact = (rca::wasserstein2(&one, &zero).unwrap() - 1.0).abs();
    let pass = kl_err <= 1e-6 && w2_err <= 1e-6 && kl_exact <= 1e-12 && w2_exact <= 1e-12;
    report(
        4,
        "closed-form distance oracles",
        pass,
        &format!(
            "quadrature error kl {kl_err:.2e}, w2 {w2_err:.2e}; unit-shift error kl {kl_exact:.1e}, w2 {w2_exact:.1e}"
        ),
    );
    assert!(pass);
}

fn permute_nodes(sample: &Tensor, perm: &[usize]) -> Tensor {
    let (n, rest) = (sample.shape()[0], sample.len() / sample.shape()[0]);
    let mut out = vec![0.0; sample.len()];
    for i in 0..n {
        out[perm[i] * rest..(perm[i] + 1) * rest].copy_from_slice(&sample.data()[i * rest..(i + 1) * rest]);
    }
    Tensor::new(sample.shape().to_vec(), out).unwrap()
}

fn permute_edges(edges: &Tensor, perm: &[usize]) -> Tensor {
    let n = edges.shape()[0];
    let mut out = Tensor::zeros(edges.shape());
    for i in 0..n {
        for j in 0..n {
            for e in 0..EDGE_TYPES {
                out.data_mut()[(perm[i] * n + perm[j]) * EDGE_TYPES + e] = edges.data()[(i * n + j) * EDGE_TYPES + e];
            }
        }
    }
    out
}

#[test]
fn invariant_suite() {
    use bondcause_core::metrics::{displacement, rmsf_over_atoms, rmsf_over_time};
    let mut rng = Rng::new(17);
    let mut failures = Vec::new();
    let (n, t, d) = (6, 9, 3);
    let traj = random_windows(1, n, t, d, &mut rng).remove(0);

    let disp0 = displacement(&traj).unwrap()[0];
    if disp0 != 0.0 {
        failures.push(format!("displacement at t=0 is {disp0}"));
    }

    let constant = Tensor::new(vec![n, t, d], (0..n * t * d).map(|i| ((i / (t * d)) as f64) - 0.3 * (i % d) as f64).collect())
        .unwrap();
    let worst_const = rmsf_over_atoms(&constant)
        .unwrap()
        .into_iter()
        .chain(rmsf_over_time(&constant).unwrap())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if worst_const != 0.0 {
        failures.push(format!("RMSF of a constant trajectory is {worst_const}"));
    }

    let per_t: f64 = rmsf_over_atoms(&traj).unwrap().iter().map(|r| n as f64 * r * r).sum();
    let per_atom: f64 = rmsf_over_time(&traj).unwrap().iter().map(|r| t as f64 * r * r).sum();
    if (per_t - per_atom).abs() > 1e-9 {
        failures.push(format!("RMSF double sums differ: {per_t} vs {per_atom}"));
    }

    let scaled: Vec<Tensor> = random_windows(3, n, t, d, &mut rng).into_iter().map(|w| w.map(|v| 37.0 * v)).collect();
    let normalized = data::normalize(&TrajectoryCorpus::from_samples(scaled).unwrap()).unwrap();
    let max_abs = normalized.samples.iter().fold(0.0f64, |m, s| m.max(s.max_abs()));
    if (max_abs - 1.0).abs() > 1e-12 {
        failures.push(format!("normalized max-abs is {max_abs}"));
    }

    let params = ModelParams::init(ModelShape::new(t, d), &mut rng);
    let mut perm: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut perm);
    let permuted = permute_nodes(&traj, &perm);
    let post = model::encode(&params, &[&traj], 1).unwrap().remove(0);
    let post_p = model::encode(&params, &[&permuted], 1).unwrap().remove(0);
    let mut enc_err = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                for e in 0..EDGE_TYPES {
                    enc_err = enc_err.max((post.prob(i, j, e) - post_p.prob(perm[i], perm[j], e)).abs());
                }
            }
        }
    }
    let edges = model::sample_edges(&post, 0.5, "concrete", &mut rng).unwrap();
    let start = model::state_at(&[&traj], 0);
    let path = model::rollout(&params, &start, &edges, t, t, None).unwrap();
    let start_p = model::state_at(&[&permuted], 0);
    let path_p = model::rollout(&params, &start_p, &permute_edges(&edges, &perm), t, t, None).unwrap();
    let dec_err = permute_nodes(&path, &perm)
        .data()
        .iter()
        .zip(path_p.data())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if enc_err > 1e-9 || dec_err > 1e-9 {
        failures.push(format!("permutation equivariance error encoder {enc_err:.2e}, decoder {dec_err:.2e}"));
    }

    let pass = failures.is_empty();
    let detail = if pass {
        format!("all hold; equivariance error encoder {enc_err:.1e}, decoder {dec_err:.1e}")
    } else {
        failures.join("; ")
    };
    report(7, "invariant suite", pass, &detail);
    assert!(pass);
}

fn small_corpus(seed: u64, change: &[usize]) -> (TrajectoryCorpus, RegimeLabels) {
    let mut rng = Rng::new(seed);
    let mut spec = ScmSpec::random(5, 2, &[1], 2, 0.3, &mut rng);
    spec.change_set = change.to_vec();
    spec.trajectories = 2;
    spec.burn_in = 20;
    spec.boundary_step = Some(40);
    let (corpus, labels) = synth::simulate(&spec, 80, seed).unwrap();
    let corpus = data::normalize(&corpus).unwrap();
    let (windows, labels) = data::window_corpus(&corpus, Some(&labels), 8).unwrap();
    (windows, labels.unwrap())
}

#[test]
fn determinism_and_persistence() {
    let (corpus, labels) = small_corpus(3, &[1]);
    let mut config = TrainConfig::rca();
    config.epochs = 3;
    config.batch_size = 4;
    config.encoder_hidden = 16;
    config.decoder_hidden = 16;
    let run = |c: &TrainConfig| pipeline::run_rca(c, &corpus, &labels, "regime-contrast", rca::DEFAULT_EPS, 2).unwrap();
    let (a, b) = (run(&config), run(&config));
    let mut failures = Vec::new();
    for (what, x, y) in [
        ("best checkpoint", a.outcome.best.to_bytes().unwrap(), b.outcome.best.to_bytes().unwrap()),
        ("last checkpoint", a.outcome.last.to_bytes().unwrap(), b.outcome.last.to_bytes().unwrap()),
        (
            "metrics csv",
            training::metrics_csv(&a.outcome.history).into_bytes(),
            training::metrics_csv(&b.outcome.history).into_bytes(),
        ),
        ("report csv", a.report.to_csv().into_bytes(), b.report.to_csv().into_bytes()),
        ("accuracy csv", a.report.accuracy_csv().into_bytes(), b.report.accuracy_csv().into_bytes()),
    ] {
        if x != y {
            failures.push(format!("{what} differs between identical runs"));
        }
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    a.outcome.last.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    let mut rng = Rng::new(5);
    let edges = model::sample_edges(&a.posteriors[0], 0.5, "categorical-hard", &mut rng).unwrap();
    let start = model::state_at(&[&corpus.samples[0]], 0);
    let before = model::rollout(&a.outcome.last.params, &start, &edges, 10, 10, None).unwrap();
    let after = model::rollout(&loaded.params, &start, &edges, 10, 10, None).unwrap();
    let bitwise = before.data().iter().zip(after.data()).all(|(x, y)| x.to_bits() == y.to_bits());
    if !bitwise || loaded != a.outcome.last {
        failures.push("checkpoint round trip changed the 10-step rollout".into());
    }

    let pass = failures.is_empty();
    let detail = if pass {
        "checkpoints, metrics and report CSVs bitwise identical; reloaded 10-step rollout bitwise identical".to_string()
    } else {
        failures.join("; ")
    };
    report(8, "determinism and persistence", pass, &detail);
    assert!(pass);
}

const RCA_SEEDS: u64 = 5;

/// Ten nodes in three dimensions, two parents per changed node, four
/// trajectories of 200 steps switching regime at step 100, windows of 10.
fn rca_corpus(seed: u64, change: &[usize]) -> (TrajectoryCorpus, RegimeLabels) {
    let mut rng = Rng::new(1000 + seed);
    let mut spec = ScmSpec::random(10, 3, &[3, 7], 2, 0.2, &mut rng);
    spec.change_set = change.to_vec();
    spec.trajectories = 4;
    spec.boundary_step = Some(100);
    let (corpus, labels) = synth::simulate(&spec, 200, seed).unwrap();
    let corpus = data::normalize(&corpus).unwrap();
    let (windows, labels) = data::window_corpus(&corpus, Some(&labels), 10).unwrap();
    (windows, labels.unwrap())
}

fn rca_run(seed: u64, change: &[usize]) -> pipeline::RcaRun {
    let (corpus, labels) = rca_corpus(seed, change);
    let mut config = TrainConfig::rca();
    config.seed = seed;
    pipeline::run_rca(&config, &corpus, &labels, "regime-contrast", rca::DEFAULT_EPS, 2).unwrap()
}

#[test]
fn synthetic_rca_recovery() {
    let start = Instant::now();
    let mut accuracies = Vec::new();
    for seed in 0..RCA_SEEDS {
        let run = rca_run(seed, &[3, 7]);
        let acc = run
            .report
            .accuracy
            .iter()
            .find(|a| a.metric == "gaussian-kl")
            .and_then(|a| a.mean)
            .unwrap_or(0.0);
        accuracies.push(acc);
    }
    let elapsed = start.elapsed().as_secs_f64();
    let mean = accuracies.iter().sum::<f64>() / accuracies.len() as f64;
    let pass = mean >= 0.8 && elapsed < 600.0;
    let detail = format!("top-2 accuracy per seed {accuracies:?}, mean {mean:.2} (need >= 0.8), runtime {elapsed:.0}s");
    report(5, "synthetic RCA recovery", pass, &detail);
    assert!(pass, "{detail}");
}

#[test]
fn prediction_trend() {
    let mut rng = Rng::new(21);
    let mut spec = ScmSpec::random(5, 2, &[], 2, 0.3, &mut rng);
    spec.trajectories = 1;
    let (corpus, _) = synth::simulate(&spec, 10_000, 21).unwrap();
    let corpus = data::normalize(&corpus).unwrap();
    let mut rows = Vec::new();
    for steps in [50, 25, 10, 5] {
        let (windows, _) = data::window_corpus(&corpus, None, steps).unwrap();
        let mut config = TrainConfig::prediction();
        config.epochs = PREDICTION_EPOCHS;
        config.seed = 21;
        let outcome = training::train(&config, &windows).unwrap();
        let test = pipeline::test_indices(&outcome.best, &windows).unwrap();
        rows.push(pipeline::evaluate(&outcome.best, &windows, &test).unwrap());
    }
    let pass = rows.windows(2).all(|w| w[1].mse <= w[0].mse);
    let detail = rows
        .iter()
        .map(|r| format!("T={} mse {:.3e}", r.steps, r.mse))
        .collect::<Vec<_>>()
        .join(", ");
    report(6, "prediction trend", pass, &format!("{detail} ({PREDICTION_EPOCHS} epochs each)"));
    assert!(pass, "{detail}");
}

/// Reduced training budget per window length.
const PREDICTION_EPOCHS: usize = 20;

#[test]
fn degenerate_mechanism_zero() {
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for seed in 0..2 {
        let run = rca_run(seed, &[]);
        let max = run.report.scores.iter().cloned().fold(0.0, f64::max);
        worst = worst.max(max);
        if max >= rca::NO_CHANGE_THRESHOLD {
            failures.push(format!("seed {seed}: max score {max:.2e}"));
        }
        if run.report.status() != rca::NO_CHANGE_MESSAGE {
            failures.push(format!("seed {seed}: status \"{}\"", run.report.status()));
        }
    }
    let pass = failures.is_empty();
    let detail = if pass {
        format!("max node score {worst:.2e}, status \"{}\"", rca::NO_CHANGE_MESSAGE)
    } else {
        failures.join("; ")
    };
    report(9, "degenerate-mechanism zero", pass, &detail);
    assert!(pass, "{detail}");
}
