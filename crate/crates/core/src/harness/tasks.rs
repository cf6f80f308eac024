use ndarray::{Array1, Array2};
use rand::Rng;

use super::config::{ExperimentConfig, Mode};
use super::HarnessError;
use crate::envs::{
    observation_pairs, render_cartpole, simulate_task, CartDoublePoleParams, CartPoleParams, EnvKind, PendubotParams,
    RenderConfig, SystemParams,
};
use crate::objective::TaskData;

/// A task's true physical parameters together with what the learner sees.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub params: [f64; 2],
    pub descriptor: Array1<f64>,
}

pub fn system(env: EnvKind, params: [f64; 2]) -> SystemParams {
    match env {
        EnvKind::CartPole => SystemParams::CartPole(CartPoleParams::new(params[0], params[1])),
        EnvKind::Pendubot => SystemParams::Pendubot(PendubotParams::new(params[0], params[1])),
        EnvKind::CartDoublePole => SystemParams::CartDoublePole(CartDoublePoleParams::new(params[0], params[1])),
    }
}

/// Rendering scaled to `size`×`size` pixels.
pub fn render_config(size: usize) -> RenderConfig {
    let d = RenderConfig::default();
    let s = size as f64 / d.width as f64;
    RenderConfig {
        width: size,
        height: size,
        max_pole_pixels: d.max_pole_pixels * s,
        cart_width: ((d.cart_width as f64 * s).round() as usize).max(1),
        cart_height: ((d.cart_height as f64 * s).round() as usize).max(1),
        ..d
    }
}

/// Image of the cart-pole at rest with the pole upright, flattened
/// row-major.
pub fn pole_image(params: [f64; 2], size: usize) -> Result<Array1<f64>, HarnessError> {
    let p = CartPoleParams::new(params[0], params[1]);
    let img = render_cartpole(&p, &[0.0, std::f64::consts::PI], &render_config(size))?;
    Ok(Array1::from(img.pixels))
}

/// Descriptor semantics and task construction for one experiment.
pub struct Domain<'a> {
    pub cfg: &'a ExperimentConfig,
}

impl<'a> Domain<'a> {
    pub fn new(cfg: &'a ExperimentConfig) -> Self {
        Domain { cfg }
    }

    fn range(&self, k: usize) -> (f64, f64) {
        let r = self.cfg.param_ranges[k];
        (r[0], r[1])
    }

    /// Bounds of the continuous descriptor space; empty for pixels.
    pub fn descriptor_bounds(&self) -> Vec<(f64, f64)> {
        match self.cfg.mode {
            Mode::Full => vec![self.range(0), self.range(1)],
            Mode::Partial => vec![self.range(1)],
            Mode::Noisy => vec![self.range(0), self.range(1), (self.cfg.noise_range[0], self.cfg.noise_range[1])],
            Mode::Pixel => vec![],
        }
    }

    /// Resolves a continuous descriptor to a task; in partial mode the
    /// hidden first parameter is drawn from `rng`.
    pub fn task_from_descriptor<R: Rng + ?Sized>(
        &self,
        psi: &Array1<f64>,
        rng: &mut R,
    ) -> Result<TaskSpec, HarnessError> {
        let params = match self.cfg.mode {
            Mode::Full | Mode::Noisy => [psi[0], psi[1]],
            Mode::Partial => {
                let (lo, hi) = self.range(0);
                let hidden = if lo == hi { lo } else { rng.random_range(lo..hi) };
                [hidden, psi[0]]
            }
            Mode::Pixel => return Err(HarnessError::Config("pixel tasks come from the candidate set".into())),
        };
        Ok(TaskSpec {
            params,
            descriptor: psi.clone(),
        })
    }

    /// Task with known parameters, its descriptor built the way the learner
    /// would see it. `extra` fills the superfluous noisy dimension.
    pub fn task_from_params(&self, params: [f64; 2], extra: f64) -> Result<TaskSpec, HarnessError> {
        let descriptor = match self.cfg.mode {
            Mode::Full => Array1::from(vec![params[0], params[1]]),
            Mode::Partial => Array1::from(vec![params[1]]),
            Mode::Noisy => Array1::from(vec![params[0], params[1], extra]),
            Mode::Pixel => pole_image(params, self.cfg.image_size)?,
        };
        Ok(TaskSpec { params, descriptor })
    }

    pub fn simulate(&self, spec: &TaskSpec) -> Result<TaskData, HarnessError> {
        let sys = system(self.cfg.env, spec.params);
        let traj = simulate_task(&sys, self.cfg.trajectory_steps)?;
        let (x, y) = observation_pairs(self.cfg.env, &traj);
        Ok(TaskData {
            x,
            y,
            descriptor: spec.descriptor.clone(),
        })
    }

    /// Evenly spaced grid over the varying parameters: a square grid when
    /// both vary, a line when one is fixed. Noisy descriptors take the
    /// middle of the superfluous range.
    pub fn test_grid(&self) -> Result<Vec<TaskSpec>, HarnessError> {
        let n = self.cfg.test_tasks;
        let axis = |k: usize, count: usize| -> Vec<f64> {
            let (lo, hi) = self.range(k);
            if lo == hi || count == 1 {
                vec![if lo == hi { lo } else { 0.5 * (lo + hi) }; 1]
            } else {
                (0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect()
            }
        };
        let varying: Vec<bool> = (0..2).map(|k| self.range(k).0 < self.range(k).1).collect();
        let (a, b) = match (varying[0], varying[1]) {
            (true, true) => {
                let side = (n as f64).sqrt().round() as usize;
                (axis(0, side), axis(1, side))
            }
            (true, false) => (axis(0, n), axis(1, 1)),
            (false, true) => (axis(0, 1), axis(1, n)),
            (false, false) => (axis(0, 1), axis(1, 1)),
        };
        let extra = 0.5 * (self.cfg.noise_range[0] + self.cfg.noise_range[1]);
        let mut out = Vec::with_capacity(a.len() * b.len());
        for &p0 in &a {
            for &p1 in &b {
                out.push(self.task_from_params([p0, p1], extra)?);
            }
        }
        Ok(out)
    }

    /// Pixel candidate pool: parameters drawn uniformly over the ranges.
    pub fn pixel_pool<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<TaskSpec>, HarnessError> {
        (0..self.cfg.candidate_images)
            .map(|_| {
                let mut p = [0.0; 2];
                for (k, v) in p.iter_mut().enumerate() {
                    let (lo, hi) = self.range(k);
                    *v = if lo == hi { lo } else { rng.random_range(lo..hi) };
                }
                self.task_from_params(p, 0.0)
            })
            .collect()
    }
}

/// Stacks descriptors as rows.
pub fn descriptor_matrix(specs: &[TaskSpec]) -> Array2<f64> {
    let d = specs.first().map_or(0, |s| s.descriptor.len());
    let mut out = Array2::zeros((specs.len(), d));
    for (i, s) in specs.iter().enumerate() {
        out.row_mut(i).assign(&s.descriptor);
    }
    out
}
