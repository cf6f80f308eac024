//! Analytic simulators for the three task families, control signals,
//! rollouts and finite-difference regression targets.
//!
//! All systems are frictionless point-mass Lagrangian models. Angles are
//! measured from the hanging-down configuration, so the all-zero state is
//! the stable equilibrium.

mod cart_double_pole;
mod cartpole;
mod pendubot;
pub mod render;

use std::io::Write;

use ndarray::{s, Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cart_double_pole::CartDoublePoleParams;
pub use cartpole::CartPoleParams;
pub use pendubot::PendubotParams;
pub use render::{render_cartpole, GrayImage, RenderConfig};

pub const GRAVITY: f64 = 9.81;

/// Largest admissible |state| entry before a rollout counts as divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("non-finite state or derivative")]
    NonFinite,
    #[error("simulation diverged at step {step}")]
    Diverged { step: usize },
    #[error("time step must be positive, got {0}")]
    BadTimeStep(f64),
    #[error("{alternations} alternations do not divide {steps} steps")]
    AlternationsDoNotDivide { steps: usize, alternations: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("state has length {got}, expected {expected}")]
    StateDim { expected: usize, got: usize },
}

/// Equations of motion of a controlled mechanical system.
pub trait Dynamics {
    fn state_dim(&self) -> usize;
    /// Time derivative `(velocities, accelerations)` of `state` under `control`.
    fn derivative(&self, state: &[f64], control: f64) -> Result<Vec<f64>, EnvError>;
    /// Total mechanical energy (kinetic plus potential).
    fn energy(&self, state: &[f64]) -> f64;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvKind {
    CartPole,
    Pendubot,
    CartDoublePole,
}

impl EnvKind {
    pub fn state_dim(self) -> usize {
        match self {
            EnvKind::CartPole | EnvKind::Pendubot => 4,
            EnvKind::CartDoublePole => 6,
        }
    }

    /// State indices holding angles.
    pub fn angle_indices(self) -> &'static [usize] {
        match self {
            EnvKind::CartPole => &[1],
            EnvKind::Pendubot => &[0, 1],
            EnvKind::CartDoublePole => &[1, 2],
        }
    }

    /// Observation size: the state with every angle replaced by its sine
    /// and cosine.
    pub fn obs_dim(self) -> usize {
        self.state_dim() + self.angle_indices().len()
    }

    /// Observation interval Δt in seconds.
    pub fn dt(self) -> f64 {
        match self {
            EnvKind::CartPole => 0.125,
            EnvKind::Pendubot | EnvKind::CartDoublePole => 0.05,
        }
    }

    /// Actuator bound C: force in N for the carts, torque in Nm for the pendubot.
    pub fn control_bound(self) -> f64 {
        match self {
            EnvKind::CartPole | EnvKind::CartDoublePole => 25.0,
            EnvKind::Pendubot => 10.0,
        }
    }

    pub fn alternations(self) -> usize {
        match self {
            EnvKind::CartPole | EnvKind::CartDoublePole => 10,
            EnvKind::Pendubot => 5,
        }
    }

    /// RK4 sub-steps per observation interval (internal step 5 ms).
    pub fn substeps(self) -> usize {
        (self.dt() / 0.005).round() as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::CartPole => "cart-pole",
            EnvKind::Pendubot => "pendubot",
            EnvKind::CartDoublePole => "cart-double-pole",
        }
    }
}

impl std::str::FromStr for EnvKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cart-pole" | "cartpole" => Ok(EnvKind::CartPole),
            "pendubot" => Ok(EnvKind::Pendubot),
            "cart-double-pole" | "cartdoublepole" => Ok(EnvKind::CartDoublePole),
            other => Err(format!("unknown environment `{other}`")),
        }
    }
}

/// Physical parameters of one task.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SystemParams {
    CartPole(CartPoleParams),
    Pendubot(PendubotParams),
    CartDoublePole(CartDoublePoleParams),
}

impl SystemParams {
    pub fn kind(&self) -> EnvKind {
        match self {
            SystemParams::CartPole(_) => EnvKind::CartPole,
            SystemParams::Pendubot(_) => EnvKind::Pendubot,
            SystemParams::CartDoublePole(_) => EnvKind::CartDoublePole,
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        match self {
            SystemParams::CartPole(p) => p.validate(),
            SystemParams::Pendubot(p) => p.validate(),
            SystemParams::CartDoublePole(p) => p.validate(),
        }
    }
}

impl Dynamics for SystemParams {
    fn state_dim(&self) -> usize {
        self.kind().state_dim()
    }

    fn derivative(&self, state: &[f64], control: f64) -> Result<Vec<f64>, EnvError> {
        match self {
            SystemParams::CartPole(p) => p.derivative(state, control),
            SystemParams::Pendubot(p) => p.derivative(state, control),
            SystemParams::CartDoublePole(p) => p.derivative(state, control),
        }
    }

    fn energy(&self, state: &[f64]) -> f64 {
        match self {
            SystemParams::CartPole(p) => p.energy(state),
            SystemParams::Pendubot(p) => p.energy(state),
            SystemParams::CartDoublePole(p) => p.energy(state),
        }
    }
}

pub(crate) fn check_state(state: &[f64], expected: usize) -> Result<(), EnvError> {
    if state.len() != expected {
        return Err(EnvError::StateDim { expected, got: state.len() });
    }
    if state.iter().any(|x| !x.is_finite()) {
        return Err(EnvError::NonFinite);
    }
    Ok(())
}

/// Solves a small dense system by Gaussian elimination with partial pivoting.
pub(crate) fn solve_small<const N: usize>(mut a: [[f64; N]; N], mut b: [f64; N]) -> [f64; N] {
    for col in 0..N {
        let piv = (col..N)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in (col + 1)..N {
            let f = a[row][col] / a[col][col];
            for k in col..N {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; N];
    for i in (0..N).rev() {
        let mut s = b[i];
        for k in (i + 1)..N {
            s -= a[i][k] * x[k];
        }
        x[i] = s / a[i][i];
    }
    x
}

/// One classical fourth-order Runge-Kutta step of `dy/dt = f(y)`.
pub fn rk4<F>(f: F, y: &[f64], dt: f64) -> Result<Vec<f64>, EnvError>
where
    F: Fn(&[f64]) -> Result<Vec<f64>, EnvError>,
{
    if !(dt > 0.0) {
        return Err(EnvError::BadTimeStep(dt));
    }
    let axpy = |a: f64, x: &[f64], y: &[f64]| -> Vec<f64> {
        y.iter().zip(x).map(|(yi, xi)| yi + a * xi).collect()
    };
    let k1 = f(y)?;
    let k2 = f(&axpy(0.5 * dt, &k1, y))?;
    let k3 = f(&axpy(0.5 * dt, &k2, y))?;
    let k4 = f(&axpy(dt, &k3, y))?;
    let next: Vec<f64> = (0..y.len())
        .map(|i| y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    if next.iter().any(|v| !v.is_finite()) {
        return Err(EnvError::NonFinite);
    }
    Ok(next)
}

/// RK4 step of a system with the control held constant over the step.
pub fn rk4_step<D: Dynamics + ?Sized>(
    sys: &D,
    state: &[f64],
    control: f64,
    dt: f64,
) -> Result<Vec<f64>, EnvError> {
    rk4(|s| sys.derivative(s, control), state, dt)
}

/// Alternating ramps: `A` blocks of `T/A` steps, block `k` ramping linearly
/// from `C/2` to `C` in magnitude with sign `(−1)^k`.
pub fn control_signal(bound: f64, steps: usize, alternations: usize) -> Result<Vec<f64>, EnvError> {
    if alternations == 0 || steps == 0 || !steps.is_multiple_of(alternations) {
        return Err(EnvError::AlternationsDoNotDivide { steps, alternations });
    }
    let block = steps / alternations;
    Ok((0..steps)
        .map(|t| {
            let (k, j) = (t / block, t % block);
            let frac = if block == 1 { 1.0 } else { j as f64 / (block - 1) as f64 };
            let mag = 0.5 * bound + 0.5 * bound * frac;
            if k % 2 == 0 {
                mag
            } else {
                -mag
            }
        })
        .collect())
}

/// States `T+1 × S` and the `T` controls applied between them.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Array2<f64>,
    pub controls: Array1<f64>,
    pub dt: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.controls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.controls.is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let sd = self.states.ncols();
        let mut header = vec!["t".to_string()];
        header.extend((0..sd).map(|i| format!("x{i}")));
        header.push("u".into());
        w.write_record(&header)?;
        for t in 0..self.states.nrows() {
            let mut rec = vec![format!("{}", t as f64 * self.dt)];
            rec.extend(self.states.row(t).iter().map(|v| v.to_string()));
            rec.push(self.controls.get(t).map(|u| u.to_string()).unwrap_or_default());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Simulates `controls.len()` observation steps of length `dt`, each
/// integrated with `substeps` RK4 steps.
pub fn rollout<D: Dynamics + ?Sized>(
    sys: &D,
    initial: &[f64],
    controls: &[f64],
    dt: f64,
    substeps: usize,
) -> Result<Trajectory, EnvError> {
    let sd = sys.state_dim();
    check_state(initial, sd)?;
    let substeps = substeps.max(1);
    let h = dt / substeps as f64;
    let mut states = Array2::zeros((controls.len() + 1, sd));
    states.row_mut(0).assign(&Array1::from(initial.to_vec()));
    let mut x = initial.to_vec();
    for (t, &u) in controls.iter().enumerate() {
        for _ in 0..substeps {
            x = rk4_step(sys, &x, u, h)?;
        }
        if x.iter().any(|v| v.abs() > DIVERGENCE_LIMIT) {
            return Err(EnvError::Diverged { step: t + 1 });
        }
        states.row_mut(t + 1).assign(&Array1::from(x.clone()));
    }
    Ok(Trajectory {
        states,
        controls: Array1::from(controls.to_vec()),
        dt,
    })
}

/// Regression pairs: inputs `(x_t, u_t)` and targets `x_{t+1} − x_t`.
pub fn fd_targets(traj: &Trajectory) -> (Array2<f64>, Array2<f64>) {
    let t = traj.len();
    let sd = traj.states.ncols();
    let mut inputs = Array2::zeros((t, sd + 1));
    inputs.slice_mut(s![.., ..sd]).assign(&traj.states.slice(s![..t, ..]));
    inputs.column_mut(sd).assign(&traj.controls);
    let targets = &traj.states.slice(s![1.., ..]) - &traj.states.slice(s![..t, ..]);
    (inputs, targets)
}

/// Observation of one state: angles are replaced by `(sin, cos)` in place.
pub fn observe(kind: EnvKind, state: ArrayView1<f64>) -> Array1<f64> {
    let angles = kind.angle_indices();
    let mut out = Vec::with_capacity(kind.obs_dim());
    for (i, &v) in state.iter().enumerate() {
        if angles.contains(&i) {
            out.push(v.sin());
            out.push(v.cos());
        } else {
            out.push(v);
        }
    }
    Array1::from(out)
}

/// Regression pairs on observations: inputs `(o_t, u_t)` and targets
/// `o_{t+1} − o_t`.
pub fn observation_pairs(kind: EnvKind, traj: &Trajectory) -> (Array2<f64>, Array2<f64>) {
    let t = traj.len();
    let od = kind.obs_dim();
    let mut obs = Array2::zeros((t + 1, od));
    for (k, row) in traj.states.rows().into_iter().enumerate() {
        obs.row_mut(k).assign(&observe(kind, row));
    }
    let mut inputs = Array2::zeros((t, od + 1));
    inputs.slice_mut(s![.., ..od]).assign(&obs.slice(s![..t, ..]));
    inputs.column_mut(od).assign(&traj.controls);
    let targets = &obs.slice(s![1.., ..]) - &obs.slice(s![..t, ..]);
    (inputs, targets)
}

/// Rollout from rest in the hanging configuration under the standard
/// alternating control signal of `kind`.
pub fn simulate_task(params: &SystemParams, steps: usize) -> Result<Trajectory, EnvError> {
    params.validate()?;
    let kind = params.kind();
    let controls = control_signal(kind.control_bound(), steps, kind.alternations())?;
    let initial = vec![0.0; kind.state_dim()];
    rollout(params, &initial, &controls, kind.dt(), kind.substeps())
}
