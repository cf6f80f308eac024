use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::{ExperimentConfig, Mode};
use super::tasks::{descriptor_matrix, Domain, TaskSpec};
use super::{stream, HarnessError, Stream};
use crate::diffcore::{param_checksum, AdamConfig};
use crate::objective::{
    ElboRecord, EvalConfig, Head, HeadKind, Metrics, ModelConfig, ObjectiveError, Standardizer, TaskData, TrainConfig,
    TrainState,
};
use crate::selection::{
    discrete_candidates, filter_candidates, generate_candidates, lhs_sample, select_next, uniform_sample, LatentGrid,
};
use crate::taskspace::{InferenceConfig, TaskEmbedding};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    Paml,
    Uni,
    Lhs,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Paml, Strategy::Uni, Strategy::Lhs];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Paml => "paml",
            Strategy::Uni => "uni",
            Strategy::Lhs => "lhs",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "paml" => Ok(Strategy::Paml),
            "uni" => Ok(Strategy::Uni),
            "lhs" => Ok(Strategy::Lhs),
            other => Err(format!("unknown strategy `{other}`")),
        }
    }
}

/// Metrics after one round. Round 0 is the initial model; round k follows
/// the k-th acquisition.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord {
    pub strategy: String,
    pub trial: usize,
    pub seed: u64,
    pub round: usize,
    pub tasks: usize,
    pub nll: f64,
    pub rmse: f64,
    pub wall_time: f64,
    pub utility: Option<f64>,
    pub latent: Vec<f64>,
    /// Descriptor of the acquired task (empty for round 0 and for pixel
    /// descriptors).
    pub descriptor: Vec<f64>,
    /// True parameters of the acquired task.
    pub params: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct TrialResult {
    pub strategy: Strategy,
    pub trial: usize,
    pub seed: u64,
    pub records: Vec<RoundRecord>,
    /// ELBO trace per round.
    pub elbo: Vec<(usize, ElboRecord)>,
    /// Training-task embeddings after each round, in acquisition order.
    pub embeddings: Vec<Vec<TaskEmbedding>>,
    pub final_state: Option<TrainState>,
    /// Set when training diverged; records up to that round are kept.
    pub aborted: Option<String>,
    /// Checksum of the descriptor head parameters as each round's training
    /// starts.
    pub head_checksums: Vec<u64>,
}

/// Everything shared by the strategies of one trial.
pub struct TrialSetup {
    pub seed: u64,
    pub test_specs: Vec<TaskSpec>,
    pub test: Vec<TaskData>,
    pub init_specs: Vec<TaskSpec>,
    /// Remaining pixel candidates.
    pub pool: Vec<TaskSpec>,
    /// Target units in which every model of the trial is scored.
    pub units: Standardizer,
}

pub fn trial_seed(cfg: &ExperimentConfig, trial: usize) -> u64 {
    cfg.seed.wrapping_add(trial as u64)
}

/// Test grid, initial tasks (LHS over the descriptor bounds, or a random
/// subset of the pixel pool) and the pixel pool.
pub fn setup_trial(cfg: &ExperimentConfig, trial: usize) -> Result<TrialSetup, HarnessError> {
    cfg.validate()?;
    let seed = trial_seed(cfg, trial);
    let domain = Domain::new(cfg);
    let mut rng = stream(seed, Stream::Setup);
    let test_specs = domain.test_grid()?;
    let test = test_specs.iter().map(|s| domain.simulate(s)).collect::<Result<Vec<_>, _>>()?;
    let (init_specs, pool) = if cfg.mode == Mode::Pixel {
        let mut pool = domain.pixel_pool(&mut rng)?;
        let mut idx = sample(&mut rng, pool.len(), cfg.n_init).into_vec();
        idx.sort_unstable_by(|a, b| b.cmp(a));
        let mut init: Vec<TaskSpec> = idx.into_iter().map(|i| pool.remove(i)).collect();
        init.reverse();
        (init, pool)
    } else {
        let design = lhs_sample(&mut rng, &domain.descriptor_bounds(), cfg.n_init)?;
        let init = design
            .iter()
            .map(|psi| domain.task_from_descriptor(psi, &mut rng))
            .collect::<Result<Vec<_>, _>>()?;
        (init, Vec::new())
    };
    let targets: Vec<_> = test.iter().map(|d| d.y.view()).collect();
    let units = Standardizer::fit(ndarray::concatenate(ndarray::Axis(0), &targets).expect("equal widths").view());
    Ok(TrialSetup {
        seed,
        test_specs,
        test,
        init_specs,
        pool,
        units,
    })
}

pub fn model_config(cfg: &ExperimentConfig) -> ModelConfig {
    ModelConfig {
        latent_dim: cfg.latent_dim,
        inducing: cfg.inducing,
        decoder_hidden: cfg.decoder_hidden,
        init_latent_var: cfg.init_latent_var,
        ..Default::default()
    }
}

pub fn train_config(cfg: &ExperimentConfig, steps: usize) -> TrainConfig {
    TrainConfig {
        steps,
        batch_tasks: cfg.batch_tasks,
        batch_points: cfg.batch_points,
        candidate_batch: cfg.candidate_batch,
        adam: AdamConfig::with_alpha(cfg.learning_rate),
        pixel_adam: AdamConfig::with_alpha(cfg.pixel_learning_rate),
        descriptor_weight: cfg.descriptor_weight,
        ..Default::default()
    }
}

pub fn eval_config(cfg: &ExperimentConfig, units: &Standardizer) -> EvalConfig {
    EvalConfig {
        shots: None,
        inference: InferenceConfig {
            steps: cfg.inference_steps,
            adam: AdamConfig::with_alpha(cfg.inference_learning_rate),
        },
        samples: cfg.predictive_samples,
        units: Some(units.clone()),
    }
}

fn head_kind(cfg: &ExperimentConfig) -> HeadKind {
    if cfg.mode == Mode::Pixel {
        HeadKind::Pixel
    } else {
        HeadKind::Decoder
    }
}

struct Choice {
    spec: TaskSpec,
    latent: Vec<f64>,
    utility: Option<f64>,
}

fn clamp_into(psi: &Array1<f64>, bounds: &[(f64, f64)]) -> Array1<f64> {
    psi.iter().zip(bounds).map(|(&v, &(lo, hi))| v.clamp(lo, hi)).collect()
}

fn choose<R: Rng + ?Sized>(
    cfg: &ExperimentConfig,
    strategy: Strategy,
    state: &TrainState,
    pool: &mut Vec<TaskSpec>,
    plan: &[Array1<f64>],
    round: usize,
    rng_strategy: &mut R,
    rng_tasks: &mut R,
) -> Result<Choice, HarnessError> {
    let domain = Domain::new(cfg);
    let bounds = domain.descriptor_bounds();
    if cfg.mode == Mode::Pixel {
        let idx = match strategy {
            Strategy::Paml => {
                let Head::Pixel(vae) = &state.head else {
                    unreachable!("pixel mode uses the pixel head")
                };
                let encoded = vae.encode(descriptor_matrix(pool).view())?;
                let descs: Vec<Array1<f64>> = pool.iter().map(|s| s.descriptor.clone()).collect();
                let cands = discrete_candidates(&state.training_embeddings(), &encoded, &descs)?;
                let best = select_next(&cands)?;
                let crate::selection::Provenance::DiscreteSet(i) = best.provenance else {
                    unreachable!()
                };
                return Ok(Choice {
                    spec: pool.remove(i),
                    latent: best.latent.to_vec(),
                    utility: Some(best.utility),
                });
            }
            Strategy::Uni => rng_strategy.random_range(0..pool.len()),
            Strategy::Lhs => return Err(HarnessError::Config("LHS is not defined over a discrete image set".into())),
        };
        return Ok(Choice {
            spec: pool.remove(idx),
            latent: vec![],
            utility: None,
        });
    }
    let (psi, latent, utility) = match strategy {
        Strategy::Paml => {
            let embs = state.training_embeddings();
            let grid = LatentGrid::around(&embs, cfg.grid_points)?;
            let cands = generate_candidates(cfg.candidate_source, &embs, &grid)?;
            let cands = filter_candidates(
                cands,
                |h| state.decode_descriptors(h).expect("descriptor decoder"),
                &bounds,
            )?;
            let best = select_next(&cands)?;
            let psi = best.descriptor.clone().expect("filtered candidates carry descriptors");
            (clamp_into(&psi, &bounds), best.latent.to_vec(), Some(best.utility))
        }
        Strategy::Uni => (uniform_sample(rng_strategy, &bounds)?, vec![], None),
        Strategy::Lhs => (plan[round - 1].clone(), vec![], None),
    };
    Ok(Choice {
        spec: domain.task_from_descriptor(&psi, rng_tasks)?,
        latent,
        utility,
    })
}

fn head_checksum(head: &Head) -> u64 {
    match head {
        Head::None => 0,
        Head::Decoder(d) => param_checksum(d, |_| true),
        Head::Pixel(v) => param_checksum(v, |_| true),
    }
}

fn pool_images(pool: &[TaskSpec]) -> Option<Array2<f64>> {
    (!pool.is_empty()).then(|| descriptor_matrix(pool))
}

/// Algorithm 1 for one strategy: train, evaluate, acquire, repeat for
/// `budget` rounds.
pub fn run_active_loop(
    cfg: &ExperimentConfig,
    setup: &TrialSetup,
    strategy: Strategy,
    trial: usize,
) -> Result<TrialResult, HarnessError> {
    let seed = setup.seed;
    let domain = Domain::new(cfg);
    let mut rng_model: ChaCha8Rng = stream(seed, Stream::Model);
    let mut rng_tasks: ChaCha8Rng = stream(seed, Stream::Tasks);
    let mut rng_strategy: ChaCha8Rng = stream(seed, Stream::Strategy);
    let plan = if strategy == Strategy::Lhs && cfg.mode != Mode::Pixel && cfg.budget > 0 {
        lhs_sample(&mut rng_strategy, &domain.descriptor_bounds(), cfg.budget)?
    } else {
        Vec::new()
    };
    if strategy == Strategy::Lhs && cfg.mode == Mode::Pixel {
        return Err(HarnessError::Config("LHS is not defined over a discrete image set".into()));
    }

    let mut data = setup
        .init_specs
        .iter()
        .map(|s| domain.simulate(s))
        .collect::<Result<Vec<_>, _>>()?;
    let mut pool = setup.pool.clone();
    let mcfg = model_config(cfg);
    let tcfg = train_config(cfg, cfg.training_steps);
    let ecfg = eval_config(cfg, &setup.units);
    let mut state = TrainState::new(&data, head_kind(cfg), &mcfg, &mut rng_model)?;

    let mut result = TrialResult {
        strategy,
        trial,
        seed,
        records: Vec::with_capacity(cfg.budget + 1),
        elbo: Vec::new(),
        embeddings: Vec::new(),
        final_state: None,
        aborted: None,
        head_checksums: Vec::new(),
    };
    for round in 0..=cfg.budget {
        let start = Instant::now();
        let mut record = RoundRecord {
            strategy: strategy.name().into(),
            trial,
            seed,
            round,
            tasks: data.len(),
            nll: f64::NAN,
            rmse: f64::NAN,
            wall_time: 0.0,
            utility: None,
            latent: vec![],
            descriptor: vec![],
            params: vec![],
        };
        if round > 0 {
            let choice = choose(
                cfg,
                strategy,
                &state,
                &mut pool,
                &plan,
                round,
                &mut rng_strategy,
                &mut rng_tasks,
            )?;
            data.push(domain.simulate(&choice.spec)?);
            if cfg.cold_start {
                state = TrainState::new(&data, head_kind(cfg), &mcfg, &mut rng_model)?;
            } else {
                state.add_task(&data);
                state.reinitialize_pixel_head(&mut rng_model);
            }
            record.tasks = data.len();
            record.utility = choice.utility;
            record.latent = choice.latent;
            if cfg.mode != Mode::Pixel {
                record.descriptor = choice.spec.descriptor.to_vec();
            }
            record.params = choice.spec.params.to_vec();
        }
        result.head_checksums.push(head_checksum(&state.head));
        let cands = pool_images(&pool).filter(|_| cfg.mode == Mode::Pixel);
        match state.train(&data, cands.as_ref().map(|c| c.view()), &tcfg, &mut rng_model) {
            Ok(trace) => result.elbo.extend(trace.into_iter().map(|r| (round, r))),
            Err(ObjectiveError::Diverged { step, trace }) => {
                result.elbo.extend(trace.into_iter().map(|r| (round, r)));
                let msg = format!("training diverged in round {round} at step {step}");
                log::error!("{} trial {trial}: {msg}", strategy.name());
                result.aborted = Some(msg);
                break;
            }
            Err(e) => return Err(e.into()),
        }
        let m = state.predictive_nll_rmse(&setup.test, &ecfg, &mut rng_model)?;
        record.nll = m.nll;
        record.rmse = m.rmse;
        record.wall_time = start.elapsed().as_secs_f64();
        log::info!(
            "{} trial {trial} round {round}: nll {:.4} rmse {:.4} ({:.1}s)",
            strategy.name(),
            m.nll,
            m.rmse,
            record.wall_time
        );
        result.records.push(record);
        result.embeddings.push(state.training_embeddings());
    }
    result.final_state = Some(state);
    Ok(result)
}

/// The meta-model trained directly on the test tasks.
pub fn run_oracle(cfg: &ExperimentConfig, setup: &TrialSetup) -> Result<Metrics, HarnessError> {
    let mut rng: ChaCha8Rng = stream(setup.seed, Stream::Oracle);
    let mut state = TrainState::new(&setup.test, head_kind(cfg), &model_config(cfg), &mut rng)?;
    state.train(
        &setup.test,
        None,
        &train_config(cfg, cfg.effective_oracle_steps()),
        &mut rng,
    )?;
    Ok(state.predictive_nll_rmse(&setup.test, &eval_config(cfg, &setup.units), &mut rng)?)
}

pub fn oracle_record(setup: &TrialSetup, trial: usize, m: Metrics) -> RoundRecord {
    RoundRecord {
        strategy: "oracle".into(),
        trial,
        seed: setup.seed,
        round: 0,
        tasks: setup.test.len(),
        nll: m.nll,
        rmse: m.rmse,
        wall_time: 0.0,
        utility: None,
        latent: vec![],
        descriptor: vec![],
        params: vec![],
    }
}
