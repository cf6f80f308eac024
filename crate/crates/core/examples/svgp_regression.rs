//! Sparse variational GP on a noisy 1-D function, compared with the exact
//! GP posterior under the learned hyperparameters.

use ndarray::{Array1, Array2, Axis};
use paml::diffcore::AdamConfig;
use paml::gp::{exact_log_marginal, exact_posterior, init_inducing, SvgpModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 120;
    let noise = Normal::new(0.0, 0.1)?;
    let x = Array2::from_shape_fn((n, 1), |(i, _)| -3.0 + 6.0 * i as f64 / (n - 1) as f64);
    let y = x.mapv(|v| v.sin() + 0.3 * (2.0 * v).cos()) + Array2::from_shape_fn((n, 1), |_| noise.sample(&mut rng));

    let z = init_inducing(x.view(), 15, &mut rng);
    let mut model = SvgpModel::new(z, 1);
    let trace = model.fit(x.view(), y.view(), 1500, AdamConfig::with_alpha(0.02), |_| true)?;
    println!("ELBO: {:.2} -> {:.2}", trace[0], trace[trace.len() - 1]);

    let ls = model.kernel.lengthscales()[0];
    let sf2 = model.kernel.signal_variance();
    let sn2 = model.likelihood.noise_variances()[0];
    println!("learned lengthscale {ls:.3}, signal variance {sf2:.3}, noise variance {sn2:.4}");
    let exact_lml = exact_log_marginal(&model.kernel, sn2, x.view(), y.column(0))?;
    println!("exact log marginal {exact_lml:.2} (the ELBO is a lower bound)");

    let xs = Array2::from_shape_fn((9, 1), |(i, _)| -3.0 + 0.75 * i as f64);
    let (m, v) = model.marginal(xs.view())?;
    let (em, ev) = exact_posterior(&model.kernel, sn2, x.view(), y.column(0), xs.view())?;
    println!("{:>6} {:>9} {:>9} {:>9} {:>9}", "x", "svgp", "exact", "sd svgp", "sd exact");
    for i in 0..xs.nrows() {
        println!(
            "{:>6.2} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
            xs[[i, 0]],
            m[[i, 0]],
            em[i],
            v[[i, 0]].sqrt(),
            ev[i].sqrt()
        );
    }
    let gap: Array1<f64> = (&m.index_axis(Axis(1), 0) - &em).mapv(f64::abs);
    println!("largest mean gap {:.4}", gap.fold(0.0f64, |a, &b| a.max(b)));
    Ok(())
}
