use ndarray::{array, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::diffcore::gradcheck::{check_inputs, DEFAULT_STEP};
use crate::diffcore::param_checksum;
use crate::gp::{GpLikelihood, RbfKernel, SvgpModel};

#[test]
fn sampling_examples() {
    let q = TaskEmbedding::new(array![0.3, -1.2], array![0.5, 2.0]);
    assert_eq!(q.sample_latent(array![0.0, 0.0].view()), q.mean);

    let tight = TaskEmbedding::new(array![0.3, -1.2], array![1e-12, 1e-12]);
    let h = tight.sample_latent(array![2.5, -3.0].view());
    assert!((&h - &tight.mean).iter().all(|d| d.abs() < 1e-5));

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 100_000;
    let mut sum = Array1::<f64>::zeros(2);
    for _ in 0..n {
        sum += &q.draw(&mut rng);
    }
    let mean = sum / n as f64;
    for k in 0..2 {
        let tol = 3.0 * q.std()[k] / (n as f64).sqrt();
        assert!((mean[k] - q.mean[k]).abs() < tol);
    }
}

#[test]
fn kl_examples() {
    assert_eq!(TaskEmbedding::prior(2).kl_latent(), 0.0);
    let q = TaskEmbedding::new(array![1.0, 0.0], array![1.0, 1.0]);
    assert!((q.kl_latent() - 0.5).abs() < 1e-15);
    assert!(kl_between(&q, &q).abs() < 1e-15);
    assert!((kl_between(&q, &TaskEmbedding::prior(2)) - 0.5).abs() < 1e-15);
}

#[test]
fn kl_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..3 {
        let q = TaskEmbedding {
            mean: (0..2).map(|_| rng.random_range(-1.5..1.5)).collect(),
            log_var: (0..2).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let prior = TaskEmbedding::prior(2);
        let n = 200_000;
        let mut s = 0.0;
        let mut s2 = 0.0;
        for _ in 0..n {
            let h = q.draw(&mut rng);
            let r = q.log_density(h.view()) - prior.log_density(h.view());
            s += r;
            s2 += r * r;
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - q.kl_latent()).abs() < 3.0 * se, "{mean} vs {}", q.kl_latent());
    }
}

#[test]
fn tape_kl_and_sampling_gradients() {
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = standard_normal(&mut rng, 3, 2);
        let lv = standard_normal(&mut rng, 3, 2) * 0.5;
        let eps = standard_normal(&mut rng, 3, 2);
        let errs = check_inputs(&[m.clone(), lv.clone()], DEFAULT_STEP, |t, v| {
            let kl = kl_tape(t, v[0], v[1]);
            let h = sample_tape(t, v[0], v[1], eps.clone());
            let h2 = t.square(h);
            let a = t.sum(kl);
            let b = t.sum(h2);
            Ok(t.add(a, b))
        })
        .unwrap();
        assert!(errs.iter().all(|&e| e < 1e-4), "{errs:?}");

        let mut t = Tape::new();
        let (mv, lvv) = (t.constant(m.clone()), t.constant(lv.clone()));
        let kl = kl_tape(&mut t, mv, lvv);
        let emb = TaskEmbeddings { mean: m, log_var: lv };
        for i in 0..3 {
            assert!((t.value(kl)[[i, 0]] - emb.get(i).kl_latent()).abs() < 1e-12);
        }
    }
}

/// A model whose output depends on the latent input, and data simulated
/// from its own predictive mean at a known latent.
fn synthetic(seed: u64, points: usize) -> (SvgpModel, Array2<f64>, Array2<f64>, Array1<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = 25;
    let z = Array2::from_shape_fn((l, 3), |_| rng.random_range(-2.0..2.0));
    let mut model = SvgpModel::new(z, 2);
    model.kernel = RbfKernel::new(1.0, &[1.0, 1.5, 1.5]);
    model.inducing.q_mu = standard_normal(&mut rng, l, 2);
    for q in model.inducing.q_sqrt.iter_mut() {
        q.diag_mut().fill(-3.0);
    }
    model.likelihood = GpLikelihood::new(&[0.01, 0.01]);
    let h_true = array![0.6, -0.4];
    let x = Array2::from_shape_fn((points, 1), |(j, _)| -2.0 + 4.0 * j as f64 / points as f64);
    let (mean, _) = model.marginal(augment(x.view(), h_true.view()).view()).unwrap();
    let y = mean + standard_normal(&mut rng, points, 2) * 0.1;
    (model, x, y, h_true)
}

#[test]
fn inference_leaves_globals_untouched_and_finds_latent() {
    let (model, x, y, h_true) = synthetic(1, 100);
    let before = param_checksum(&model, |_| true);
    let cache = PredictCache::new(&model).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = InferenceConfig { steps: 300, ..Default::default() };
    let q = infer_embedding(&cache, 2, x.view(), y.view(), &cfg, &mut rng).unwrap();
    assert_eq!(param_checksum(&model, |_| true), before);
    let sd = q.std();
    for k in 0..2 {
        assert!(
            (q.mean[k] - h_true[k]).abs() < 2.0 * sd[k] + 0.05,
            "dim {k}: {} ± {} vs {}",
            q.mean[k],
            sd[k],
            h_true[k]
        );
    }
    assert!(sd.iter().all(|&s| s < 0.3));
}

#[test]
fn inference_edge_cases() {
    let (model, x, y, _) = synthetic(3, 10);
    let cache = PredictCache::new(&model).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cfg = InferenceConfig { steps: 0, ..Default::default() };
    let q = infer_embedding(&cache, 2, x.view(), y.view(), &cfg, &mut rng).unwrap();
    assert_eq!(q, TaskEmbedding::prior(2));

    let empty_x = Array2::<f64>::zeros((0, 1));
    let empty_y = Array2::<f64>::zeros((0, 2));
    let err = infer_embedding(&cache, 2, empty_x.view(), empty_y.view(), &InferenceConfig::default(), &mut rng);
    assert!(matches!(err, Err(TaskspaceError::EmptyDataset(0))));
}

#[test]
fn more_shots_move_posterior_towards_full_data_posterior() {
    let (model, x, y, _) = synthetic(4, 100);
    let cache = PredictCache::new(&model).unwrap();
    let cfg = InferenceConfig { steps: 400, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let full = infer_embedding(&cache, 2, x.view(), y.view(), &cfg, &mut rng).unwrap();
    let mut kls = Vec::new();
    for shots in [5usize, 10, 50] {
        // evenly spread subsets
        let idx: Vec<usize> = (0..shots).map(|k| k * 100 / shots).collect();
        let xs = x.select(ndarray::Axis(0), &idx);
        let ys = y.select(ndarray::Axis(0), &idx);
        let q = infer_embedding(&cache, 2, xs.view(), ys.view(), &cfg, &mut rng).unwrap();
        kls.push(kl_between(&full, &q));
    }
    let again = infer_embedding(&cache, 2, x.view(), y.view(), &cfg, &mut rng).unwrap();
    kls.push(kl_between(&full, &again));
    for w in kls.windows(2) {
        assert!(w[1] < w[0], "{kls:?}");
    }
}

#[test]
fn mixture_predictive_properties() {
    let (model, x, _, _) = synthetic(6, 20);
    let cache = PredictCache::new(&model).unwrap();
    let q = TaskEmbedding::new(array![0.2, 0.1], array![0.5, 0.8]);

    let mut r1 = ChaCha8Rng::seed_from_u64(77);
    let mut r2 = r1.clone();
    let (m1, v1) = mixture_marginal(&cache, x.view(), &q, 1, &mut r1).unwrap();
    let h = q.draw(&mut r2);
    let (m2, v2) = cache.marginal(augment(x.view(), h.view()).view()).unwrap();
    assert!((&m1 - &m2).iter().all(|d| d.abs() < 1e-12));
    assert!((&v1 - &v2).iter().all(|d| d.abs() < 1e-10));

    let mut r1 = ChaCha8Rng::seed_from_u64(78);
    let mut r2 = r1.clone();
    let (_, mix_var) = mixture_marginal(&cache, x.view(), &q, 32, &mut r1).unwrap();
    let within = mean_component_variance(&cache, x.view(), &q, 32, &mut r2).unwrap();
    assert!(mix_var.iter().zip(within.iter()).all(|(a, b)| *a >= b - 1e-12));

    let mut r = ChaCha8Rng::seed_from_u64(1);
    let (zm, zv) = zero_shot_predictive(&cache, 2, x.view(), 8, &mut r).unwrap();
    assert_eq!(zm.dim(), (20, 2));
    assert!(zv.iter().all(|&v| v > 0.0));
}

#[test]
fn identical_tasks_get_overlapping_embeddings() {
    let (model, x, y, _) = synthetic(10, 60);
    let cache = PredictCache::new(&model).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = InferenceConfig { steps: 300, ..Default::default() };
    let qs = infer_embeddings(&cache, 2, &[(x.view(), y.view()), (x.view(), y.view())], &cfg, &mut rng).unwrap();
    for k in 0..2 {
        let d = (qs[0].mean[k] - qs[1].mean[k]).abs();
        assert!(d < 3.0 * qs[0].std()[k] && d < 3.0 * qs[1].std()[k]);
    }
}
