//! End-to-end experiments: the active learning loop for PAML and the
//! baselines, the oracle, aggregation and export of results.

mod config;
mod export;
mod plot;
mod run;
mod tasks;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use config::{ExperimentConfig, Mode, ORACLE_STEP_FACTOR};
pub use export::{
    aggregate, read_latents, read_records, write_curves, write_elbo_trace, write_latents, write_records,
    write_selections, CurvePoint, LatentRow,
};
pub use plot::{plot_curves, plot_latents, CurvePanel, Metric};
pub use run::{
    eval_config, model_config, oracle_record, run_active_loop, run_oracle, setup_trial, train_config, trial_seed,
    RoundRecord, Strategy, TrialResult, TrialSetup,
};
pub use tasks::{descriptor_matrix, pole_image, render_config, system, Domain, TaskSpec};

use crate::descriptor::DescriptorError;
use crate::envs::EnvError;
use crate::objective::ObjectiveError;
use crate::selection::SelectionError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("malformed results file: {0}")]
    Parse(String),
    #[error("plot: {0}")]
    Plot(String),
}

/// Independent random streams derived from one trial seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    /// Test grid, initial tasks and pixel pool.
    Setup,
    /// Model initialization, minibatches and evaluation.
    Model,
    /// Hidden parameters of acquired tasks.
    Tasks,
    /// Baseline sampling.
    Strategy,
    Oracle,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

/// All trials of one experiment.
#[derive(Debug, Default)]
pub struct ExperimentResult {
    pub trials: Vec<TrialResult>,
    /// One record per trial when the oracle was run.
    pub oracle: Vec<RoundRecord>,
}

impl ExperimentResult {
    /// Strategy records followed by oracle records.
    pub fn records(&self) -> Vec<RoundRecord> {
        self.trials
            .iter()
            .flat_map(|t| t.records.iter().cloned())
            .chain(self.oracle.iter().cloned())
            .collect()
    }
}

/// Runs every strategy (and optionally the oracle) on every trial.
/// Strategies within a trial share the test grid and initial tasks.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    strategies: &[Strategy],
    oracle: bool,
) -> Result<ExperimentResult, HarnessError> {
    cfg.validate()?;
    let mut out = ExperimentResult::default();
    for trial in 0..cfg.trials {
        let setup = setup_trial(cfg, trial)?;
        for &s in strategies {
            out.trials.push(run_active_loop(cfg, &setup, s, trial)?);
        }
        if oracle {
            let m = run_oracle(cfg, &setup)?;
            log::info!("oracle trial {trial}: nll {:.4} rmse {:.4}", m.nll, m.rmse);
            out.oracle.push(oracle_record(&setup, trial, m));
        }
    }
    Ok(out)
}
