//! A small active learning run on the cart-pole: PAML against uniform
//! sampling with test metrics after every acquired task.

use paml::envs::EnvKind;
use paml::harness::{aggregate, run_experiment, ExperimentConfig, Mode, Strategy};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let mut cfg = ExperimentConfig::desk(EnvKind::CartPole, Mode::Full);
    cfg.budget = 3;
    cfg.trials = 1;
    cfg.training_steps = 300;
    cfg.inducing = 32;
    cfg.test_tasks = 9;

    let res = run_experiment(&cfg, &[Strategy::Paml, Strategy::Uni], false)?;
    for t in &res.trials {
        for r in &t.records {
            println!(
                "{:<5} round {}: {} tasks, nll {:+.3}, rmse {:.3}, params {:.2?}",
                r.strategy, r.round, r.tasks, r.nll, r.rmse, r.params
            );
        }
    }
    for c in aggregate(&res.records()).iter().filter(|c| c.round == cfg.budget) {
        println!("{} after {} tasks: nll {:+.3}", c.strategy, cfg.budget, c.nll_mean);
    }
    Ok(())
}
