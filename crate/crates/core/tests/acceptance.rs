//! Acceptance suite. Runs every criterion in order and prints one
//! PASS/FAIL line each; exits non-zero if any fails.
//!
//! `cargo test --release --test acceptance -- 1 5` runs a subset.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::OnceLock;
use std::time::Instant;

use ndarray::{array, Array1, Array2, Axis};
use paml::descriptor::{DescriptorDecoder, PixelVae};
use paml::diffcore::gradcheck::{check_inputs, check_params, DEFAULT_STEP};
use paml::diffcore::linalg::{cholesky, logdet_from_cholesky, solve_lower};
use paml::diffcore::{AdamConfig, DiffError, Tape};
use paml::envs::{rk4, rollout, Dynamics, EnvKind};
use paml::gp::{exact_posterior, GpError, kernel_tape, kl_inducing_tape, marginal_tape, RbfKernel, SvgpModel, SvgpVars};
use paml::harness::{pole_image, run_experiment, system, ExperimentConfig, ExperimentResult, Mode, Strategy};
use paml::objective::{Head, HeadKind, Minibatch, ModelConfig, ObjectiveError, TaskData, TrainState};
use paml::selection::utility;
use paml::taskspace::{kl_tape, standard_normal, TaskEmbedding};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

type Check = fn() -> Outcome;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gauss(r: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    standard_normal(r, rows, cols) * scale
}

fn to_diff(e: ObjectiveError) -> DiffError {
    match e {
        ObjectiveError::Diff(d) => d,
        other => panic!("{other}"),
    }
}

// 1 ------------------------------------------------------------------

fn random_svgp(r: &mut ChaCha8Rng, l: usize, p: usize, d: usize) -> SvgpModel {
    let mut m = SvgpModel::new(gauss(r, l, p, 1.0), d);
    m.kernel.log_signal_variance = gauss(r, 1, 1, 0.3);
    m.kernel.log_lengthscales = gauss(r, 1, p, 0.3);
    m.inducing.q_mu = gauss(r, l, d, 0.5);
    for q in m.inducing.q_sqrt.iter_mut() {
        *q = gauss(r, l, l, 0.2);
    }
    m.likelihood.log_noise = gauss(r, 1, d, 0.3) - 2.0;
    m
}

fn sine_tasks(r: &mut ChaCha8Rng, n: usize, points: usize) -> Vec<TaskData> {
    (0..n)
        .map(|_| {
            let a: f64 = r.random_range(0.5..2.0);
            let b: f64 = r.random_range(-1.0..1.0);
            let x = Array2::from_shape_fn((points, 1), |_| r.random_range(-3.0f64..3.0));
            let y = x.mapv(|v| a * v.sin() + b) + standard_normal(r, points, 1) * 0.05;
            TaskData {
                x,
                y,
                descriptor: array![a, b],
            }
        })
        .collect()
}

fn perturbed_state(data: &[TaskData], head: HeadKind, r: &mut ChaCha8Rng) -> TrainState {
    let cfg = ModelConfig {
        inducing: 6,
        decoder_hidden: 5,
        ..ModelConfig::default()
    };
    let mut s = TrainState::new(data, head, &cfg, r).unwrap();
    let (l, d) = s.gp.inducing.q_mu.dim();
    s.gp.inducing.q_mu = gauss(r, l, d, 0.5);
    for q in s.gp.inducing.q_sqrt.iter_mut() {
        *q = gauss(r, l, l, 0.1);
    }
    let (n, k) = s.embeddings.mean.dim();
    s.embeddings.mean = gauss(r, n, k, 0.7);
    s.embeddings.log_var = gauss(r, n, k, 0.3) - 1.0;
    s
}

/// Small VAE with its biases moved off zero so no leaky-ReLU unit sits
/// at its kink.
fn small_vae(r: &mut ChaCha8Rng, image_len: usize) -> PixelVae {
    let mut vae = PixelVae::with_hidden(image_len, 2, 5, r);
    vae.encoder.weights[2] = gauss(r, 5, 4, 0.5);
    for b in vae.encoder.biases.iter_mut().chain(vae.decoder.biases.iter_mut()) {
        let (n, c) = b.dim();
        *b = gauss(r, n, c, 0.5);
    }
    vae
}

fn gradient_suite() -> Outcome {
    const POINTS: u64 = 10;
    const TOL: f64 = 1e-4;
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut note = |name: &'static str, errs: &[f64]| {
        let w = worst.entry(name).or_insert(0.0);
        for e in errs {
            *w = w.max(*e);
        }
    };
    for seed in 0..POINTS {
        let mut r = rng(100 + seed);

        // kernel
        let (n, m, p) = (4, 3, 3);
        let w = gauss(&mut r, n, m, 1.0);
        let inputs = [gauss(&mut r, 1, 1, 0.3), gauss(&mut r, 1, p, 0.3), gauss(&mut r, n, p, 1.0), gauss(&mut r, m, p, 1.0)];
        let errs = check_inputs(&inputs, DEFAULT_STEP, |t, v| {
            let k = kernel_tape(t, v[0], v[1], v[2], v[3]);
            let wv = t.constant(w.clone());
            let kw = t.mul(k, wv);
            Ok(t.sum(kw))
        })
        .unwrap();
        note("kernel", &errs);

        // SVGP marginal moments, w.r.t. every model parameter and the inputs
        let model = random_svgp(&mut r, 5, 3, 2);
        let x = gauss(&mut r, 4, 3, 1.0);
        let (w1, w2) = (gauss(&mut r, 4, 2, 1.0), gauss(&mut r, 4, 2, 1.0));
        let marginal = |t: &mut Tape, vars: &SvgpVars, xv| -> Result<_, DiffError> {
            let (mean, var) = marginal_tape(t, vars, xv).map_err(|e| match e {
                GpError::Diff(d) => d,
                other => panic!("{other}"),
            })?;
            let (a, b) = (t.constant(w1.clone()), t.constant(w2.clone()));
            let ma = t.mul(mean, a);
            let vb = t.mul(var, b);
            let s = t.add(ma, vb);
            Ok(t.sum(s))
        };
        let errs = check_params(&model, DEFAULT_STEP, |t, b| {
            let vars = SvgpVars::from_bindings(b, 2)?;
            let xv = t.constant(x.clone());
            marginal(t, &vars, xv)
        })
        .unwrap();
        note("svgp marginal", &errs.iter().map(|e| e.1).collect::<Vec<_>>());
        let errs = check_inputs(std::slice::from_ref(&x), DEFAULT_STEP, |t, v| {
            let b = t.bind(&model);
            let vars = SvgpVars::from_bindings(&b, 2)?;
            marginal(t, &vars, v[0])
        })
        .unwrap();
        note("svgp marginal", &errs);

        // KL terms
        let errs = check_params(&model, DEFAULT_STEP, |t, b| {
            let vars = SvgpVars::from_bindings(b, 2)?;
            Ok(kl_inducing_tape(t, &vars))
        })
        .unwrap();
        note("kl inducing", &errs.iter().map(|e| e.1).collect::<Vec<_>>());
        let errs = check_inputs(&[gauss(&mut r, 3, 2, 1.0), gauss(&mut r, 3, 2, 0.5)], DEFAULT_STEP, |t, v| {
            let kl = kl_tape(t, v[0], v[1]);
            Ok(t.sum(kl))
        })
        .unwrap();
        note("kl latent", &errs);

        // descriptor decoder log-likelihood, w.r.t. weights, descriptor and latent
        let dec = DescriptorDecoder::new(2, 3, 6, &mut r);
        let (psi, h) = (gauss(&mut r, 4, 3, 1.0), gauss(&mut r, 4, 2, 1.0));
        let errs = check_params(&dec, DEFAULT_STEP, |t, b| {
            let (pv, hv) = (t.constant(psi.clone()), t.constant(h.clone()));
            let ll = dec.loglik_tape(t, b, pv, hv)?;
            Ok(t.sum(ll))
        })
        .unwrap();
        note("descriptor loglik", &errs.iter().map(|e| e.1).collect::<Vec<_>>());
        let errs = check_inputs(&[psi.clone(), h.clone()], DEFAULT_STEP, |t, v| {
            let b = t.bind(&dec);
            let ll = dec.loglik_tape(t, &b, v[0], v[1])?;
            Ok(t.sum(ll))
        })
        .unwrap();
        note("descriptor loglik", &errs);

        // VAE objective with training images and candidates
        let vae = small_vae(&mut r, 6);
        let imgs = gauss(&mut r, 3, 6, 0.2).mapv(|v| 0.5 + v);
        let cands = gauss(&mut r, 4, 6, 0.2).mapv(|v| 0.5 + v);
        let eps = gauss(&mut r, 3, 2, 1.0);
        let errs = check_params(&vae, DEFAULT_STEP, |t, b| {
            let iv = t.constant(imgs.clone());
            let cv = t.constant(cands.clone());
            vae.objective_tape(t, b, Some((iv, eps.clone())), cv, 0.5)
        })
        .unwrap();
        note("vae objective", &errs.iter().map(|e| e.1).collect::<Vec<_>>());

        // full ELBO with frozen samples, both heads
        let data = sine_tasks(&mut r, 3, 4);
        let s = perturbed_state(&data, HeadKind::Decoder, &mut r);
        let mb = Minibatch {
            tasks: vec![0, 2],
            points: vec![vec![0, 1, 3], vec![1, 2]],
            eps: gauss(&mut r, 2, 2, 1.0),
            candidates: vec![],
        };
        let errs = check_params(&s, DEFAULT_STEP, |t, b| {
            s.elbo_on_tape(t, b, &data, None, &mb, 0.7).map_err(to_diff)
        })
        .unwrap();
        note("elbo (decoder head)", &errs.iter().map(|e| e.1).collect::<Vec<_>>());

        let mut data = sine_tasks(&mut r, 2, 4);
        for d in data.iter_mut() {
            d.descriptor = gauss(&mut r, 1, 6, 0.2).row(0).mapv(|v| 0.5 + v);
        }
        let mut s = perturbed_state(&data, HeadKind::Pixel, &mut r);
        s.head = Head::Pixel(small_vae(&mut r, 6));
        let mb = Minibatch {
            tasks: vec![0, 1],
            points: vec![vec![0, 1], vec![2, 3]],
            eps: gauss(&mut r, 2, 2, 1.0),
            candidates: vec![0, 2],
        };
        let errs = check_params(&s, DEFAULT_STEP, |t, b| {
            s.elbo_on_tape(t, b, &data, Some(cands.view()), &mb, 1.0).map_err(to_diff)
        })
        .unwrap();
        note("elbo (pixel head)", &errs.iter().map(|e| e.1).collect::<Vec<_>>());
    }
    let max = worst.values().copied().fold(0.0, f64::max);
    let detail = worst
        .iter()
        .map(|(k, v)| format!("{k} {v:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(max < TOL, format!("worst relative error per op over {POINTS} points: {detail}"))
}

// 2 ------------------------------------------------------------------

const MC_SAMPLES: usize = 1_000_000;

fn mean_se(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut n, mut s, mut s2) = (0.0, 0.0, 0.0);
    for x in v {
        n += 1.0;
        s += x;
        s2 += x * x;
    }
    let mean = s / n;
    let var = (s2 / n - mean * mean) * n / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// log N(u | m, L Lᵀ) for lower-triangular `l`.
fn log_normal(u: &Array1<f64>, m: &Array1<f64>, l: &Array2<f64>) -> f64 {
    let d = (u - m).insert_axis(Axis(1));
    let a = solve_lower(l.view(), d.view());
    -0.5 * a.mapv(|v| v * v).sum() - 0.5 * logdet_from_cholesky(l.view()) - 0.5 * u.len() as f64 * (2.0 * PI).ln()
}

fn kl_monte_carlo() -> Outcome {
    const INSTANCES: u64 = 20;
    let mut worst: f64 = 0.0;
    let mut fails = Vec::new();
    for k in 0..INSTANCES {
        let mut r = rng(200 + k);

        // latent: q = N(m, diag v) against N(0, I)
        let q = 2 + (k as usize % 3);
        let e = TaskEmbedding::new(gauss(&mut r, 1, q, 1.0).row(0).to_owned(), gauss(&mut r, 1, q, 0.5).row(0).mapv(f64::exp));
        let closed = e.kl_latent();
        let sd = e.std();
        let (est, se) = mean_se((0..MC_SAMPLES).map(|_| {
            let z = standard_normal(&mut r, 1, q).row(0).to_owned();
            let h = &e.mean + &(&sd * &z);
            let log_q: f64 = (0..q).map(|i| -0.5 * (z[i] * z[i] + e.log_var[i] + (2.0 * PI).ln())).sum();
            let log_p: f64 = h.iter().map(|x| -0.5 * (x * x + (2.0 * PI).ln())).sum();
            log_q - log_p
        }));
        let z = (est - closed).abs() / se;
        worst = worst.max(z);
        if z > 3.0 {
            fails.push(format!("latent #{k}"));
        }

        // inducing: q(u) = N(m, S) against p(u) = N(0, K_ZZ), summed over outputs
        let l = 4;
        let mut model = random_svgp(&mut r, l, 2, 2);
        model.inducing.z = Array2::from_shape_fn((l, 2), |(i, j)| i as f64 * 0.9 + 0.3 * j as f64 + 0.1 * r.random::<f64>());
        let closed = model.kl_inducing();
        let (means, covs) = model.unwhitened().unwrap();
        let kzz = model.kernel.gram(model.inducing.z.view(), model.inducing.z.view()).unwrap();
        let lk = cholesky(kzz.view()).unwrap();
        let zero = Array1::zeros(l);
        let factors: Vec<Array2<f64>> = covs.iter().map(|s| cholesky(s.view()).unwrap()).collect();
        let (est, se) = mean_se((0..MC_SAMPLES).map(|_| {
            let mut acc = 0.0;
            for (d, ls) in factors.iter().enumerate() {
                let m = means.column(d).to_owned();
                let u = &m + &ls.dot(&standard_normal(&mut r, l, 1).column(0));
                acc += log_normal(&u, &m, ls) - log_normal(&u, &zero, &lk);
            }
            acc
        }));
        let z = (est - closed).abs() / se;
        worst = worst.max(z);
        if z > 3.0 {
            fails.push(format!("inducing #{k}"));
        }
    }
    outcome(
        fails.is_empty(),
        format!(
            "{} instances each, {MC_SAMPLES} samples; largest deviation {worst:.2} standard errors{}",
            INSTANCES,
            if fails.is_empty() { String::new() } else { format!("; beyond 3 SE: {}", fails.join(" ")) }
        ),
    )
}

// 3 ------------------------------------------------------------------

fn svgp_exactness() -> Outcome {
    let mut r = rng(300);
    let n = 20;
    let x = Array2::from_shape_fn((n, 1), |_| r.random_range(-3.0f64..3.0));
    let y = x.mapv(|v| v.sin() + 0.5 * (1.7 * v).cos()) + gauss(&mut r, n, 1, 0.1);
    let mut model = SvgpModel::new(x.clone(), 1);
    model.kernel = RbfKernel::new(1.3, &[0.8]);
    model.likelihood.log_noise.fill(0.01f64.ln());
    let trainable = |name: &str| name == "gp.q_mu" || name.starts_with("gp.q_sqrt");
    model.fit(x.view(), y.view(), 4000, AdamConfig::with_alpha(0.01), trainable).unwrap();
    let xs = Array2::from_shape_fn((50, 1), |(i, _)| -3.5 + 7.0 * i as f64 / 49.0);
    let (m, _) = model.marginal(xs.view()).unwrap();
    let (em, _) = exact_posterior(&model.kernel, 0.01, x.view(), y.column(0), xs.view()).unwrap();
    let rms = ((&m.column(0) - &em).mapv(|v| v * v).mean().unwrap()).sqrt();
    outcome(rms < 1e-3, format!("RMS mean difference {rms:.2e} at 50 test inputs (L = M = {n})"))
}

// 4 ------------------------------------------------------------------

fn physics() -> Outcome {
    // ẏ = A y with A a damped oscillator; exact solution via the
    // eigen-decomposition of the 2×2 system
    let (w, c) = (2.0f64, 0.3f64);
    let f = |y: &[f64]| Ok(vec![y[1], -w * w * y[0] - c * y[1]]);
    let exact = |t: f64| {
        let wd = (w * w - 0.25 * c * c).sqrt();
        let e = (-0.5 * c * t).exp();
        // y(0) = (1, 0)
        let a = 0.5 * c / wd;
        let y0 = e * ((wd * t).cos() + a * (wd * t).sin());
        let y1 = e * (-(w * w) / wd) * (wd * t).sin();
        [y0, y1]
    };
    let err = |steps: usize| {
        let h = 2.0 / steps as f64;
        let mut y = vec![1.0, 0.0];
        for _ in 0..steps {
            y = rk4(f, &y, h).unwrap();
        }
        let e = exact(2.0);
        ((y[0] - e[0]).powi(2) + (y[1] - e[1]).powi(2)).sqrt()
    };
    let errs: Vec<f64> = [20, 40, 80, 160].iter().map(|&s| err(s)).collect();
    let ratios: Vec<f64> = errs.windows(2).map(|p| p[0] / p[1]).collect();
    let order_ok = ratios.iter().all(|q| (q - 16.0).abs() <= 2.0);

    let mut drift = Vec::new();
    for (env, params) in [
        (EnvKind::CartPole, [1.0, 1.0]),
        (EnvKind::Pendubot, [1.0, 1.5]),
        (EnvKind::CartDoublePole, [1.0, 0.8]),
    ] {
        let sys = system(env, params);
        let mut x0 = vec![0.0; env.state_dim()];
        for (k, &i) in env.angle_indices().iter().enumerate() {
            x0[i] = 1.0 - 0.3 * k as f64;
        }
        let traj = rollout(&sys, &x0, &[0.0; 100], env.dt(), env.substeps()).unwrap();
        let e0 = sys.energy(&x0);
        let e1 = sys.energy(traj.states.row(100).as_slice().unwrap());
        drift.push((env, ((e1 - e0) / e0).abs()));
    }
    let drift_ok = drift.iter().all(|(_, d)| *d < 1e-3);
    let shown: Vec<String> = drift.iter().map(|(e, d)| format!("{} {:.1e}", e.name(), d)).collect();
    outcome(
        order_ok && drift_ok,
        format!(
            "error ratios per halving {:.2?}; relative energy drift over 100 steps: {}",
            ratios,
            shown.join(", ")
        ),
    )
}

// 5 ------------------------------------------------------------------

fn utility_analytics() -> Outcome {
    let std_normal = TaskEmbedding::prior(2);
    let u0 = utility(array![0.0, 0.0].view(), std::slice::from_ref(&std_normal)).unwrap();
    let exact_ok = (u0 - (2.0 * PI).ln()).abs() < 1e-10;

    let mut r = rng(500);
    let mut perm_worst: f64 = 0.0;
    for _ in 0..20 {
        let embs: Vec<TaskEmbedding> = (0..5)
            .map(|_| TaskEmbedding::new(gauss(&mut r, 1, 2, 1.0).row(0).to_owned(), gauss(&mut r, 1, 2, 0.5).row(0).mapv(f64::exp)))
            .collect();
        let h = gauss(&mut r, 1, 2, 1.5).row(0).to_owned();
        let base = utility(h.view(), &embs).unwrap();
        let mut shuffled = embs.clone();
        shuffled.reverse();
        shuffled.swap(0, 2);
        perm_worst = perm_worst.max((utility(h.view(), &shuffled).unwrap() - base).abs());
    }
    let perm_ok = perm_worst < 1e-12;

    let q = TaskEmbedding::new(array![0.3, -0.2], array![0.5, 2.0]);
    let mut monotone = true;
    for _ in 0..20 {
        let dir = gauss(&mut r, 1, 2, 1.0).row(0).to_owned();
        let mut last = f64::NEG_INFINITY;
        for s in 0..30 {
            let h = &q.mean + &(&dir * (0.2 * s as f64));
            let u = utility(h.view(), std::slice::from_ref(&q)).unwrap();
            monotone &= u > last;
            last = u;
        }
    }
    outcome(
        exact_ok && perm_ok && monotone,
        format!(
            "u(0) - log 2π = {:.1e}; permutation difference {perm_worst:.1e}; strictly increasing along rays: {monotone}",
            u0 - (2.0 * PI).ln()
        ),
    )
}

// 6 and 7 ------------------------------------------------------------

const SEEDS: usize = 10;

fn desk(mode: Mode, budget: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk(EnvKind::CartPole, mode);
    cfg.budget = budget;
    cfg.trials = SEEDS;
    cfg
}

static CARTPOLE: OnceLock<(ExperimentResult, f64)> = OnceLock::new();

fn cartpole_runs() -> &'static (ExperimentResult, f64) {
    CARTPOLE.get_or_init(|| {
        let start = Instant::now();
        let res = run_experiment(&desk(Mode::Full, 8), &[Strategy::Paml, Strategy::Uni, Strategy::Lhs], true).unwrap();
        (res, start.elapsed().as_secs_f64())
    })
}

/// NLL of `strategy` at `round` per trial.
fn nll_at(res: &ExperimentResult, strategy: &str, round: usize) -> BTreeMap<usize, f64> {
    res.records()
        .into_iter()
        .filter(|r| r.strategy == strategy && r.round == round)
        .map(|r| (r.trial, r.nll))
        .collect()
}

/// Trials where `a` is at most `b`; a missing value counts as a loss for `a`.
fn paired_wins(a: &BTreeMap<usize, f64>, b: &BTreeMap<usize, f64>) -> usize {
    (0..SEEDS)
        .filter(|t| match (a.get(t), b.get(t)) {
            (Some(x), Some(y)) => x <= y,
            (None, _) => false,
            (Some(_), None) => true,
        })
        .count()
}

fn mean(v: &BTreeMap<usize, f64>) -> f64 {
    v.values().sum::<f64>() / v.len().max(1) as f64
}

fn cartpole_ordering() -> Outcome {
    let (res, secs) = cartpole_runs();
    let (paml, uni, lhs) = (nll_at(res, "paml", 5), nll_at(res, "uni", 5), nll_at(res, "lhs", 5));
    let (wu, wl) = (paired_wins(&paml, &uni), paired_wins(&paml, &lhs));
    outcome(
        wu >= 7 && wl >= 7,
        format!(
            "after 5 tasks PAML <= UNI in {wu}/{SEEDS}, PAML <= LHS in {wl}/{SEEDS}; mean NLL paml {:.3} uni {:.3} lhs {:.3}; {:.1} min",
            mean(&paml),
            mean(&uni),
            mean(&lhs),
            secs / 60.0
        ),
    )
}

fn oracle_ordering() -> Outcome {
    let (res, _) = cartpole_runs();
    let oracle: BTreeMap<usize, f64> = res.oracle.iter().map(|r| (r.trial, r.nll)).collect();
    let best_final: BTreeMap<usize, f64> = (0..SEEDS)
        .map(|t| {
            let v = res
                .trials
                .iter()
                .filter(|tr| tr.trial == t)
                .filter_map(|tr| tr.records.last().filter(|r| r.round == 8).map(|r| r.nll))
                .fold(f64::INFINITY, f64::min);
            (t, v)
        })
        .collect();
    let wins = paired_wins(&oracle, &best_final);
    outcome(
        wins >= 8,
        format!(
            "oracle <= every strategy's final NLL in {wins}/{SEEDS}; mean oracle {:.3}, mean best final {:.3}",
            mean(&oracle),
            mean(&best_final)
        ),
    )
}

// 8 and 9 ------------------------------------------------------------

/// Selected descriptors of PAML per trial.
fn paml_selections(cfg: &ExperimentConfig) -> BTreeMap<usize, Vec<Vec<f64>>> {
    let res = run_experiment(cfg, &[Strategy::Paml], false).unwrap();
    let mut out: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
    for r in res.records().into_iter().filter(|r| r.round > 0) {
        out.entry(r.trial).or_default().push(r.descriptor);
    }
    out
}

fn variance(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
}

fn noisy_descriptor() -> Outcome {
    let cfg = desk(Mode::Noisy, 8);
    let [llo, lhi] = cfg.param_ranges[1];
    let [elo, ehi] = cfg.noise_range;
    let sel = paml_selections(&cfg);
    let mut wins = 0;
    let mut shown = Vec::new();
    for picks in sel.values() {
        let len: Vec<f64> = picks.iter().map(|d| (d[1] - llo) / (lhi - llo)).collect();
        let eps: Vec<f64> = picks.iter().map(|d| (d[2] - elo) / (ehi - elo)).collect();
        let (vl, ve) = (variance(&len), variance(&eps));
        wins += usize::from(ve < vl);
        shown.push(format!("{ve:.3}/{vl:.3}"));
    }
    outcome(
        wins >= 7,
        format!("var(eps) < var(length) in {wins}/{SEEDS} seeds (eps/length: {})", shown.join(" ")),
    )
}

fn partial_repetition() -> Outcome {
    let cfg = desk(Mode::Partial, 8);
    let [lo, hi] = cfg.param_ranges[1];
    let sel = paml_selections(&cfg);
    let mut hits = 0;
    let mut shown = Vec::new();
    for picks in sel.values() {
        let v: Vec<f64> = picks.iter().take(8).map(|d| (d[0] - lo) / (hi - lo)).collect();
        let mut closest = f64::INFINITY;
        for i in 0..v.len() {
            for j in i + 1..v.len() {
                closest = closest.min((v[i] - v[j]).abs());
            }
        }
        hits += usize::from(closest <= 0.1);
        shown.push(format!("{closest:.3}"));
    }
    outcome(
        hits >= 6,
        format!(
            "a pair within 10% of the range in {hits}/{SEEDS} seeds (closest pairs: {})",
            shown.join(" ")
        ),
    )
}

// 10 -----------------------------------------------------------------

fn encoder_separation(seed: u64, size: usize) -> bool {
    let mut r = rng(1000 + seed);
    let lengths: Vec<f64> = (0..100).map(|i| 0.5 + 4.0 * i as f64 / 99.0).collect();
    let img = |l: f64| pole_image([1.0, l], size).unwrap();
    let mut corpus = Array2::zeros((100, size * size));
    for (i, &l) in lengths.iter().enumerate() {
        corpus.row_mut(i).assign(&img(l));
    }
    let train_rows: Vec<usize> = (0..5).map(|_| r.random_range(0..100)).collect();
    let train = corpus.select(Axis(0), &train_rows);
    let mut vae = PixelVae::new(size * size, 2, &mut r);
    vae.train(train.view(), corpus.view(), 1000, AdamConfig::with_alpha(0.002), &mut r).unwrap();
    let probe = ndarray::stack(Axis(0), &[img(0.5).view(), img(0.6).view(), img(4.5).view()]).unwrap();
    let codes = vae.encode(probe.view()).unwrap();
    let dist = |a: &TaskEmbedding, b: &TaskEmbedding| (&a.mean - &b.mean).mapv(|v| v * v).sum().sqrt();
    dist(&codes[0], &codes[2]) > dist(&codes[0], &codes[1])
}

fn pixel_pipeline() -> Outcome {
    let cfg = desk(Mode::Pixel, 5);
    let separated = (0..SEEDS as u64).filter(|&s| encoder_separation(s, cfg.image_size)).count();
    let res = run_experiment(&cfg, &[Strategy::Paml, Strategy::Uni], false).unwrap();
    let (paml, uni) = (nll_at(&res, "paml", 5), nll_at(&res, "uni", 5));
    let wins = paired_wins(&paml, &uni);
    outcome(
        separated >= 8 && wins >= 6 && cfg.test_tasks == 25,
        format!(
            "encoder separates 0.5 m from 4.5 m further than from 0.6 m in {separated}/{SEEDS}; \
             after 5 tasks PAML <= UNI in {wins}/{SEEDS} (mean NLL paml {:.3} uni {:.3}, {} test tasks)",
            mean(&paml),
            mean(&uni),
            cfg.test_tasks
        ),
    )
}

fn main() {
    let criteria: [(&str, Check); 10] = [
        ("gradients match finite differences", gradient_suite),
        ("closed-form KL agrees with Monte Carlo", kl_monte_carlo),
        ("SVGP with inducing points at the data is exact", svgp_exactness),
        ("RK4 order and energy conservation", physics),
        ("utility analytics", utility_analytics),
        ("cart-pole: PAML beats UNI and LHS after 5 tasks", cartpole_ordering),
        ("oracle bounds every strategy", oracle_ordering),
        ("noisy descriptor: superfluous dimension is ignored", noisy_descriptor),
        ("partial descriptor: similar lengths are repeated", partial_repetition),
        ("pixel descriptors: VAE separates lengths, PAML beats UNI", pixel_pipeline),
    ];
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let id = k + 1;
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let o = check();
        failed += usize::from(!o.pass);
        println!(
            "{} criterion {id:>2}: {name} [{:.1}s] {}",
            if o.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            o.detail
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
