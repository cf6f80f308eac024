//! Renders the upright cart-pole for a few pole lengths, the image
//! descriptors of the pixel experiment, and saves them as PGM files.

use paml::envs::{render_cartpole, CartPoleParams, RenderConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = RenderConfig::default();
    let dir = std::env::temp_dir();
    for length in [0.5, 1.5, 2.5, 3.5, 4.5] {
        let p = CartPoleParams::new(1.0, length);
        let img = render_cartpole(&p, &[0.0, std::f64::consts::PI], &cfg)?;
        let path = dir.join(format!("pole_{length:.1}.pgm"));
        img.write_pgm(std::fs::File::create(&path)?)?;
        println!(
            "length {length:.1}: {:>4} lit pixels, total intensity {:7.1} -> {}",
            img.lit_pixels(0.1),
            img.total_intensity(),
            path.display()
        );
    }
    Ok(())
}
