//! Trains the image encoder/decoder on rendered cart-poles and shows that
//! pole length traces a smooth curve through the latent means.

use ndarray::{Array2, Axis};
use paml::descriptor::PixelVae;
use paml::diffcore::AdamConfig;
use paml::envs::{render_cartpole, CartPoleParams, RenderConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = RenderConfig {
        width: 16,
        height: 16,
        max_pole_pixels: 12.0,
        cart_width: 4,
        cart_height: 2,
        ..RenderConfig::default()
    };
    let lengths: Vec<f64> = (0..24).map(|i| 0.5 + 4.0 * i as f64 / 23.0).collect();
    let mut images = Array2::zeros((lengths.len(), cfg.width * cfg.height));
    for (i, &l) in lengths.iter().enumerate() {
        let img = render_cartpole(&CartPoleParams::new(1.0, l), &[0.0, std::f64::consts::PI], &cfg)?;
        for (j, v) in images.row_mut(i).iter_mut().enumerate() {
            *v = img.get(j / cfg.width, j % cfg.width);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut vae = PixelVae::new(images.ncols(), 2, &mut rng);
    // every fourth image plays an acquired task and gets the full ELBO;
    // all of them act as unlabelled candidates
    let train = images.select(Axis(0), &(0..lengths.len()).step_by(4).collect::<Vec<_>>());
    let trace = vae.train(train.view(), images.view(), 2000, AdamConfig::with_alpha(0.002), &mut rng)?;
    println!("VAE objective: {:.1} -> {:.1}", trace[0], trace[trace.len() - 1]);

    let codes = vae.encode(images.view())?;
    for (l, q) in lengths.iter().zip(&codes).step_by(3) {
        println!("length {l:.2}: mean [{:+.3}, {:+.3}]  sd [{:.3}, {:.3}]", q.mean[0], q.mean[1], q.std()[0], q.std()[1]);
    }
    Ok(())
}
