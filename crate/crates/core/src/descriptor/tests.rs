use ndarray::{array, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::diffcore::gradcheck::{check_inputs, check_params, DEFAULT_STEP};
use crate::diffcore::param_checksum;

fn decoder(seed: u64) -> DescriptorDecoder {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DescriptorDecoder::new(2, 2, 8, &mut rng)
}

#[test]
fn loglik_at_mode_and_one_sigma_away() {
    let mut dec = decoder(0);
    dec.log_noise.fill(0.0);
    let h = array![0.4, -0.7];
    let mean = dec.predict(h.view().insert_axis(ndarray::Axis(0))).row(0).to_owned();
    let at_mode = dec.descriptor_loglik(mean.view(), h.view()).unwrap();
    assert!((at_mode + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
    let mut off = mean.clone();
    off[1] += 1.0;
    let drop = at_mode - dec.descriptor_loglik(off.view(), h.view()).unwrap();
    assert!((drop - 0.5).abs() < 1e-12);

    assert_eq!(
        dec.descriptor_loglik(array![1.0].view(), h.view()),
        Err(DescriptorError::DimensionMismatch { expected: 2, got: 1 })
    );
}

#[test]
fn loglik_is_stationary_in_psi_at_the_mean() {
    let dec = decoder(3);
    let h = array![[0.1, 0.9]];
    let mean = dec.predict(h.view());
    let mut t = Tape::new();
    let b = t.bind(&dec);
    let psi = t.leaf(mean);
    let hv = t.constant(h);
    let ll = dec.loglik_tape(&mut t, &b, psi, hv).unwrap();
    let ll = t.sum(ll);
    t.evaluate(ll).unwrap();
    let g = t.gradient(ll).unwrap().wrt(psi);
    assert!(g.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-8);
}

#[test]
fn decoder_gradients_match_finite_differences() {
    for seed in 0..10u64 {
        let dec = decoder(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let h = standard_normal(&mut rng, 3, 2);
        let psi = standard_normal(&mut rng, 3, 2);
        let errs = check_inputs(std::slice::from_ref(&h), DEFAULT_STEP, |t, v| {
            let b = t.bind_with(&dec, |_| false);
            let p = t.constant(psi.clone());
            let ll = dec.loglik_tape(t, &b, p, v[0])?;
            Ok(t.sum(ll))
        })
        .unwrap();
        assert!(errs.iter().all(|&e| e < 1e-4), "{errs:?}");
        let errs = check_params(&dec, DEFAULT_STEP, |t, b| {
            let p = t.constant(psi.clone());
            let hv = t.constant(h.clone());
            let ll = dec.loglik_tape(t, b, p, hv)?;
            Ok(t.sum(ll))
        })
        .unwrap();
        for (name, e) in errs {
            assert!(e < 1e-4, "{name}: {e}");
        }
    }
}

fn small_vae(seed: u64) -> PixelVae {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vae = PixelVae::with_hidden(6, 2, 5, &mut rng);
    // move off the prior-matching init and keep pre-activations away from
    // the leaky-ReLU kink at zero
    vae.encoder.weights[2] = standard_normal(&mut rng, 5, 4) * 0.5;
    for b in vae.encoder.biases.iter_mut().chain(vae.decoder.biases.iter_mut()) {
        let (r, c) = b.dim();
        *b = standard_normal(&mut rng, r, c) * 0.5;
    }
    vae
}

#[test]
fn vae_gradients_match_finite_differences() {
    for seed in 0..10u64 {
        let vae = small_vae(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let train = standard_normal(&mut rng, 2, 6).mapv(|v| 0.5 + 0.2 * v);
        let cand = standard_normal(&mut rng, 3, 6).mapv(|v| 0.5 + 0.2 * v);
        let eps = standard_normal(&mut rng, 2, 2);
        let errs = check_params(&vae, DEFAULT_STEP, |t, b| {
            let tr = t.constant(train.clone());
            let c = t.constant(cand.clone());
            vae.objective_tape(t, b, Some((tr, eps.clone())), c, 1.0)
        })
        .unwrap();
        for (name, e) in errs {
            assert!(e < 1e-4, "seed {seed} {name}: {e}");
        }
    }
}

#[test]
fn fresh_encoder_matches_prior_and_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let vae = PixelVae::new(32 * 32, 2, &mut rng);
    let img: Vec<f64> = (0..1024).map(|i| (i % 7) as f64 / 7.0).collect();
    let q = vae.encode_image(&img).unwrap();
    assert_eq!(q, TaskEmbedding::prior(2));
    assert_eq!(vae.encode_image(&img).unwrap(), q);
    assert!(vae.encode_image(&img[..100]).is_err());

    let other = PixelVae::new(32 * 32, 2, &mut rng);
    assert_ne!(param_checksum(&vae, |_| true), param_checksum(&other, |_| true));
}

#[test]
fn objective_without_training_images_is_candidate_reconstruction() {
    let vae = small_vae(4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cand = standard_normal(&mut rng, 3, 6).mapv(|v| 0.5 + 0.2 * v);
    let empty = Array2::<f64>::zeros((0, 6));
    let eps = Array2::<f64>::zeros((0, 2));
    let obj = vae.vae_objective(empty.view(), cand.view(), eps.view()).unwrap();
    let means = Array2::from_shape_fn((3, 2), |(i, k)| vae.encode(cand.view()).unwrap()[i].mean[k]);
    let mut t = Tape::new();
    let b = t.bind(&vae);
    let c = t.constant(cand.clone());
    let h = t.constant(means);
    let rec = vae.loglik_tape(&mut t, &b, c, h).unwrap();
    assert!((obj - t.value(rec).sum()).abs() < 1e-10);
}

#[test]
fn reconstruction_peaks_when_decoder_reproduces_input() {
    // a decoder whose output is constant: zero weights, bias = logit(0.3)
    let mut vae = small_vae(6);
    for w in vae.decoder.weights.iter_mut() {
        w.fill(0.0);
    }
    let logit = (0.3f64 / 0.7).ln();
    vae.decoder.biases.last_mut().unwrap().fill(logit);
    let img = Array2::from_elem((1, 6), 0.3);
    let empty = Array2::<f64>::zeros((0, 6));
    let eps = Array2::<f64>::zeros((0, 2));
    let mut last = f64::NEG_INFINITY;
    for noise in [1e-1, 1e-2, 1e-3] {
        vae.log_noise.fill(f64::ln(noise));
        let v = vae.vae_objective(empty.view(), img.view(), eps.view()).unwrap();
        let at_mode = -0.5 * 6.0 * (2.0 * std::f64::consts::PI * noise).ln();
        assert!((v - at_mode).abs() < 1e-9);
        assert!(v > last);
        last = v;
    }
}

#[test]
fn vae_training_improves_objective() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut vae = PixelVae::with_hidden(16, 2, 20, &mut rng);
    let imgs = Array2::from_shape_fn((10, 16), |(i, j)| if j < i + 3 { 0.9 } else { 0.1 });
    let trace = vae
        .train(imgs.slice(ndarray::s![..3, ..]), imgs.view(), 400, AdamConfig::with_alpha(0.002), &mut rng)
        .unwrap();
    let first: f64 = trace[..100].iter().sum::<f64>() / 100.0;
    let last: f64 = trace[300..].iter().sum::<f64>() / 100.0;
    assert!(last > first, "{first} -> {last}");
}

