//! Meta-learns a family of sinusoids y = a·sin(x + b) with latent task
//! embeddings, then adapts to unseen tasks from a handful of points.

use ndarray::{Array1, Array2};
use paml::objective::{EvalConfig, HeadKind, ModelConfig, TaskData, TrainConfig, TrainState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sine_task<R: Rng>(rng: &mut R, a: f64, b: f64, n: usize) -> TaskData {
    let x = Array2::from_shape_fn((n, 1), |_| rng.random_range(-4.0..4.0));
    let y = x.mapv(|v| a * (v + b).sin() + 0.05 * (rng.random::<f64>() - 0.5));
    TaskData {
        x,
        y,
        descriptor: Array1::from(vec![a, b]),
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let train: Vec<TaskData> = (0..12)
        .map(|_| {
            let (a, b) = (rng.random_range(0.5..2.0), rng.random_range(0.0..3.0));
            sine_task(&mut rng, a, b, 40)
        })
        .collect();
    let test: Vec<TaskData> = (0..4)
        .map(|_| {
            let (a, b) = (rng.random_range(0.5..2.0), rng.random_range(0.0..3.0));
            sine_task(&mut rng, a, b, 40)
        })
        .collect();

    let model_cfg = ModelConfig {
        inducing: 40,
        ..ModelConfig::default()
    };
    let mut state = TrainState::new(&train, HeadKind::Decoder, &model_cfg, &mut rng)?;
    let train_cfg = TrainConfig {
        steps: 1500,
        batch_tasks: 0,
        batch_points: 0,
        ..TrainConfig::default()
    };
    let trace = state.train(&train, None, &train_cfg, &mut rng)?;
    println!("ELBO after training: {:.2}", trace.last().unwrap().terms.total);

    for (task, q) in train.iter().zip(state.training_embeddings()).take(4) {
        println!(
            "a {:.2} b {:.2} -> h = [{:+.2}, {:+.2}]",
            task.descriptor[0], task.descriptor[1], q.mean[0], q.mean[1]
        );
    }
    for shots in [1, 3, 10, 40] {
        let cfg = EvalConfig {
            shots: Some(shots),
            ..EvalConfig::default()
        };
        let m = state.predictive_nll_rmse(&test, &cfg, &mut rng)?;
        println!("{shots:>2} shots: test nll {:+.3}  rmse {:.3}", m.nll, m.rmse);
    }
    Ok(())
}
