//! Scores a latent grid against a few task posteriors and compares the
//! information-based pick with uniform and Latin hypercube draws.

use ndarray::array;
use paml::selection::{generate_grid_candidates, lhs_sample, select_next, uniform_sample, utility, LatentGrid};
use paml::taskspace::TaskEmbedding;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let known = vec![
        TaskEmbedding::new(array![-1.0, 0.0], array![0.04, 0.04]),
        TaskEmbedding::new(array![-0.5, 0.5], array![0.04, 0.09]),
        TaskEmbedding::new(array![0.2, -0.3], array![0.16, 0.04]),
    ];
    let grid = LatentGrid::around(&known, 15)?;
    let candidates = generate_grid_candidates(&known, &grid)?;
    let best = select_next(&candidates)?;
    println!("{} grid candidates", candidates.len());
    println!("most informative: h = {:.3} (utility {:.2})", best.latent, best.utility);
    for q in &known {
        println!("  at a known task {:.2}: utility {:.2}", q.mean, utility(q.mean.view(), &known)?);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let bounds = [(0.5, 5.0), (0.5, 5.0)];
    println!("uniform draw: {:.3}", uniform_sample(&mut rng, &bounds)?);
    println!("latin hypercube, 5 points:");
    for p in lhs_sample(&mut rng, &bounds, 5)? {
        println!("  {p:.3}");
    }
    Ok(())
}
