use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::envs::EnvKind;
use crate::selection::CandidateSource;

pub const ORACLE_STEP_FACTOR: usize = 10;

/// What the learner observes about a task.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Both physical parameters.
    Full,
    /// The second parameter only; the first is redrawn for every new task.
    Partial,
    /// Both parameters plus one dimension with no effect on the dynamics.
    Noisy,
    /// A rendered image from a fixed candidate set.
    Pixel,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::Partial => "partial",
            Mode::Noisy => "noisy",
            Mode::Pixel => "pixel",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Mode::Full),
            "partial" => Ok(Mode::Partial),
            "noisy" => Ok(Mode::Noisy),
            "pixel" => Ok(Mode::Pixel),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

/// Flat experiment configuration. `param_ranges` holds the two physical
/// parameters of the environment: (pole mass, pole length) for the
/// cart-pole and the two link lengths otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvKind,
    pub mode: Mode,
    pub param_ranges: Vec<[f64; 2]>,
    /// Range of the superfluous descriptor dimension in noisy mode.
    pub noise_range: [f64; 2],
    pub n_init: usize,
    pub budget: usize,
    pub trials: usize,
    pub seed: u64,
    pub trajectory_steps: usize,
    pub training_steps: usize,
    /// Oracle training steps; 0 means `ORACLE_STEP_FACTOR` × `training_steps`.
    pub oracle_steps: usize,
    pub test_tasks: usize,
    pub inference_steps: usize,
    pub inference_learning_rate: f64,
    pub learning_rate: f64,
    pub pixel_learning_rate: f64,
    pub inducing: usize,
    pub latent_dim: usize,
    pub batch_tasks: usize,
    pub batch_points: usize,
    pub candidate_batch: usize,
    pub descriptor_weight: f64,
    pub decoder_hidden: usize,
    pub init_latent_var: f64,
    pub predictive_samples: usize,
    pub grid_points: usize,
    pub candidate_source: CandidateSource,
    pub candidate_images: usize,
    pub image_size: usize,
    /// Retrain every round from a fresh model instead of warm-starting.
    pub cold_start: bool,
}

impl ExperimentConfig {
    /// Published settings for an environment and descriptor mode.
    pub fn published(env: EnvKind, mode: Mode) -> Self {
        let param_ranges = match (env, mode) {
            (EnvKind::CartPole, Mode::Partial) => vec![[0.4, 3.0], [0.4, 3.0]],
            (EnvKind::CartPole, Mode::Pixel) => vec![[1.0, 1.0], [0.5, 4.5]],
            (EnvKind::CartPole, _) => vec![[0.5, 5.0], [0.5, 2.0]],
            (EnvKind::Pendubot, _) => vec![[0.6, 3.0], [0.6, 3.0]],
            (EnvKind::CartDoublePole, _) => vec![[0.5, 3.0], [0.5, 3.0]],
        };
        let n_init = match (env, mode) {
            (_, Mode::Pixel) => 1,
            (_, Mode::Noisy) | (EnvKind::Pendubot, _) => 4,
            _ => 3,
        };
        let training_steps = match (env, mode) {
            (_, Mode::Pixel) => 10_000,
            (EnvKind::CartDoublePole, _) => 7000,
            _ => 5000,
        };
        ExperimentConfig {
            env,
            mode,
            param_ranges,
            noise_range: [0.5, 5.0],
            n_init,
            budget: 15,
            trials: 10,
            seed: 0,
            trajectory_steps: 100,
            training_steps,
            oracle_steps: 0,
            test_tasks: if mode == Mode::Pixel { 25 } else { 100 },
            inference_steps: 100,
            inference_learning_rate: 0.05,
            learning_rate: 0.01,
            pixel_learning_rate: 0.002,
            inducing: 300,
            latent_dim: 2,
            batch_tasks: 8,
            batch_points: 25,
            candidate_batch: 16,
            descriptor_weight: 1.0,
            decoder_hidden: 64,
            init_latent_var: 0.1,
            predictive_samples: 8,
            grid_points: 100,
            candidate_source: CandidateSource::Grid,
            candidate_images: 100,
            image_size: 32,
            cold_start: false,
        }
    }

    /// Laptop-sized variant: shorter training and trajectories, fewer
    /// inducing points and smaller images.
    pub fn desk(env: EnvKind, mode: Mode) -> Self {
        ExperimentConfig {
            training_steps: 1000,
            trajectory_steps: 50,
            inducing: 64,
            image_size: 16,
            ..Self::published(env, mode)
        }
    }

    /// Reads a TOML file. `env`, `mode` and `desk_scale` select the
    /// defaults that the remaining keys override.
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let user: toml::Table = text.parse().map_err(|e| HarnessError::Config(format!("{e}")))?;
        let env = match user.get("env") {
            Some(v) => v
                .as_str()
                .ok_or_else(|| HarnessError::Config("`env` must be a string".into()))?
                .parse::<EnvKind>()
                .map_err(HarnessError::Config)?,
            None => EnvKind::CartPole,
        };
        let mode = match user.get("mode") {
            Some(v) => v
                .as_str()
                .ok_or_else(|| HarnessError::Config("`mode` must be a string".into()))?
                .parse::<Mode>()
                .map_err(HarnessError::Config)?,
            None => Mode::Full,
        };
        let desk = match user.get("desk_scale") {
            Some(v) => v
                .as_bool()
                .ok_or_else(|| HarnessError::Config("`desk_scale` must be a boolean".into()))?,
            None => false,
        };
        let base = if desk { Self::desk(env, mode) } else { Self::published(env, mode) };
        let mut table = toml::Table::try_from(&base).map_err(|e| HarnessError::Config(format!("{e}")))?;
        for (k, v) in user {
            if k != "desk_scale" {
                table.insert(k, v);
            }
        }
        let cfg: Self = table.try_into().map_err(|e| HarnessError::Config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.param_ranges.len() != 2 {
            return bad(format!("param_ranges needs 2 entries, got {}", self.param_ranges.len()));
        }
        for r in self.param_ranges.iter().chain(std::iter::once(&self.noise_range)) {
            if !(r[0] > 0.0 && r[0] <= r[1] && r[1].is_finite()) {
                return bad(format!("range {r:?} must be positive and ordered"));
            }
        }
        if self.n_init == 0 {
            return bad("n_init must be at least 1".into());
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.trajectory_steps == 0 || !self.trajectory_steps.is_multiple_of(self.env.alternations()) {
            return bad(format!(
                "trajectory_steps {} must be a positive multiple of {} alternations",
                self.trajectory_steps,
                self.env.alternations()
            ));
        }
        if self.test_tasks == 0 {
            return bad("test_tasks must be at least 1".into());
        }
        let varying = self.param_ranges.iter().filter(|r| r[0] < r[1]).count();
        if varying == 2 {
            let side = (self.test_tasks as f64).sqrt().round() as usize;
            if side * side != self.test_tasks {
                return bad(format!("test_tasks {} must be a square for a 2-D grid", self.test_tasks));
            }
        }
        if self.latent_dim == 0 || self.inducing == 0 || self.predictive_samples == 0 {
            return bad("latent_dim, inducing and predictive_samples must be positive".into());
        }
        if self.mode == Mode::Pixel {
            if self.env != EnvKind::CartPole {
                return bad("pixel descriptors are rendered for the cart-pole only".into());
            }
            if self.candidate_images < self.n_init + self.budget {
                return bad(format!(
                    "{} candidate images cannot cover {} initial and {} acquired tasks",
                    self.candidate_images, self.n_init, self.budget
                ));
            }
            if self.image_size < 8 {
                return bad("image_size must be at least 8".into());
            }
        }
        Ok(())
    }

    /// Total steps for the oracle. Deliberately independent of the budget.
    pub fn effective_oracle_steps(&self) -> usize {
        if self.oracle_steps > 0 {
            self.oracle_steps
        } else {
            self.training_steps * ORACLE_STEP_FACTOR
        }
    }
}
