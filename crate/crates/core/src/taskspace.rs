//! Per-task latent variables: diagonal Gaussian posteriors over a standard
//! normal prior, reparameterized sampling, and inference of embeddings for
//! new tasks against a frozen model.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::diffcore::{AdamConfig, AdamState, DiffError, Parameterized, Tape, Var};
use crate::gp::{GpError, PredictCache};

/// Default number of latent dimensions.
pub const DEFAULT_LATENT_DIM: usize = 2;

#[derive(Debug, Error)]
pub enum TaskspaceError {
    #[error("task {0} has no observations; use the zero-shot predictive instead")]
    EmptyDataset(usize),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

/// `q(h) = N(mean, diag(exp(log_var)))`.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskEmbedding {
    pub mean: Array1<f64>,
    pub log_var: Array1<f64>,
}

impl TaskEmbedding {
    /// The prior `N(0, I)`.
    pub fn prior(dim: usize) -> Self {
        TaskEmbedding {
            mean: Array1::zeros(dim),
            log_var: Array1::zeros(dim),
        }
    }

    pub fn new(mean: Array1<f64>, variance: Array1<f64>) -> Self {
        assert_eq!(mean.len(), variance.len());
        TaskEmbedding {
            mean,
            log_var: variance.mapv(f64::ln),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn variance(&self) -> Array1<f64> {
        self.log_var.mapv(f64::exp)
    }

    pub fn std(&self) -> Array1<f64> {
        self.log_var.mapv(|v| (0.5 * v).exp())
    }

    /// `mean + sqrt(var) ⊙ noise`.
    pub fn sample_latent(&self, noise: ArrayView1<f64>) -> Array1<f64> {
        assert_eq!(noise.len(), self.dim(), "noise dimension");
        &self.mean + &(&self.std() * &noise)
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Array1<f64> {
        let noise: Array1<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        self.sample_latent(noise.view())
    }

    /// `KL[q ‖ N(0, I)] = ½ Σ (T + n² − 1 − log T)`.
    pub fn kl_latent(&self) -> f64 {
        0.5 * self
            .mean
            .iter()
            .zip(self.log_var.iter())
            .map(|(m, lv)| lv.exp() + m * m - 1.0 - lv)
            .sum::<f64>()
    }

    pub fn log_density(&self, h: ArrayView1<f64>) -> f64 {
        let mut acc = 0.0;
        for ((x, m), lv) in h.iter().zip(self.mean.iter()).zip(self.log_var.iter()) {
            acc += -0.5 * ((2.0 * std::f64::consts::PI).ln() + lv + (x - m) * (x - m) / lv.exp());
        }
        acc
    }
}

/// Variational parameters for a set of tasks, one row per task.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskEmbeddings {
    pub mean: Array2<f64>,
    pub log_var: Array2<f64>,
}

impl Parameterized for TaskEmbeddings {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Array2<f64>)) {
        f("tasks.mean", &self.mean);
        f("tasks.log_var", &self.log_var);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Array2<f64>)) {
        f("tasks.mean", &mut self.mean);
        f("tasks.log_var", &mut self.log_var);
    }
}

impl TaskEmbeddings {
    pub fn prior(tasks: usize, dim: usize) -> Self {
        TaskEmbeddings {
            mean: Array2::zeros((tasks, dim)),
            log_var: Array2::zeros((tasks, dim)),
        }
    }

    pub fn from_list(list: &[TaskEmbedding]) -> Self {
        let dim = list.first().map_or(0, TaskEmbedding::dim);
        let mut out = Self::prior(list.len(), dim);
        for (i, e) in list.iter().enumerate() {
            out.mean.row_mut(i).assign(&e.mean);
            out.log_var.row_mut(i).assign(&e.log_var);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.mean.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.nrows() == 0
    }

    pub fn latent_dim(&self) -> usize {
        self.mean.ncols()
    }

    pub fn get(&self, i: usize) -> TaskEmbedding {
        TaskEmbedding {
            mean: self.mean.row(i).to_owned(),
            log_var: self.log_var.row(i).to_owned(),
        }
    }

    pub fn to_list(&self) -> Vec<TaskEmbedding> {
        (0..self.len()).map(|i| self.get(i)).collect()
    }

    pub fn push(&mut self, e: &TaskEmbedding) {
        self.mean.push_row(e.mean.view()).expect("latent dimension");
        self.log_var.push_row(e.log_var.view()).expect("latent dimension");
    }
}

/// Reparameterized samples `mean + exp(½ log_var) ⊙ eps` on the tape.
pub fn sample_tape(t: &mut Tape, mean: Var, log_var: Var, eps: Array2<f64>) -> Var {
    let half = t.scale(log_var, 0.5);
    let sd = t.exp(half);
    let eps = t.constant(eps);
    let noise = t.mul(sd, eps);
    t.add(mean, noise)
}

/// Per-row closed-form KL to the standard normal, as an N×1 column.
pub fn kl_tape(t: &mut Tape, mean: Var, log_var: Var) -> Var {
    let var = t.exp(log_var);
    let m2 = t.square(mean);
    let a = t.add(var, m2);
    let a = t.sub(a, log_var);
    let a = t.add_const(a, -1.0);
    let per = t.sum_cols(a);
    t.scale(per, 0.5)
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

#[derive(Clone, Debug)]
pub struct InferenceConfig {
    pub steps: usize,
    pub adam: AdamConfig,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            steps: 100,
            adam: AdamConfig::with_alpha(0.05),
        }
    }
}

/// Fits `q(h_*)` for each new task against the frozen model behind `cache`,
/// maximizing the task's expected log-likelihood minus its latent KL with
/// one reparameterized sample per step. Tasks are optimized jointly on one
/// tape but their objectives are independent. Inputs exclude the latent
/// columns.
pub fn infer_embeddings<R: Rng + ?Sized>(
    cache: &PredictCache,
    latent_dim: usize,
    tasks: &[(ArrayView2<f64>, ArrayView2<f64>)],
    cfg: &InferenceConfig,
    rng: &mut R,
) -> Result<Vec<TaskEmbedding>, TaskspaceError> {
    if let Some(i) = tasks.iter().position(|(x, _)| x.nrows() == 0) {
        return Err(TaskspaceError::EmptyDataset(i));
    }
    let mut emb = TaskEmbeddings::prior(tasks.len(), latent_dim);
    if cfg.steps == 0 || tasks.is_empty() {
        return Ok(emb.to_list());
    }
    let factors = cache.task_factors(latent_dim, tasks)?;
    let mut adam = AdamState::new(cfg.adam);
    for _ in 0..cfg.steps {
        let eps = standard_normal(rng, tasks.len(), latent_dim);
        let mut t = Tape::new();
        let b = t.bind(&emb);
        let (m, lv) = (b.get("tasks.mean")?, b.get("tasks.log_var")?);
        let h = sample_tape(&mut t, m, lv, eps);
        let ell = factors.expected_loglik_tape(&mut t, h);
        let kl = kl_tape(&mut t, m, lv);
        let obj = t.sub(ell, kl);
        let obj = t.sum(obj);
        let loss = t.neg(obj);
        t.evaluate(loss)?;
        let grads = b.collect(&t.gradient(loss)?);
        adam.update(&mut emb, &grads)?;
    }
    Ok(emb.to_list())
}

/// Single-task wrapper around [`infer_embeddings`].
pub fn infer_embedding<R: Rng + ?Sized>(
    cache: &PredictCache,
    latent_dim: usize,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    cfg: &InferenceConfig,
    rng: &mut R,
) -> Result<TaskEmbedding, TaskspaceError> {
    let mut out = infer_embeddings(cache, latent_dim, &[(x, y)], cfg, rng)?;
    Ok(out.pop().expect("one task"))
}

/// Appends the latent `h` to every row of `x`.
pub fn augment(x: ArrayView2<f64>, h: ArrayView1<f64>) -> Array2<f64> {
    let (n, p) = x.dim();
    let mut out = Array2::zeros((n, p + h.len()));
    out.slice_mut(s![.., ..p]).assign(&x);
    out.slice_mut(s![.., p..]).assign(&h.broadcast((n, h.len())).expect("broadcast"));
    out
}

/// Moments of the latent-function predictive `E_{q(h)}[q(f | x, h)]`,
/// approximated with `samples` draws from `q(h)` and summarized by the
/// mixture mean and variance (law of total variance).
pub fn mixture_marginal<R: Rng + ?Sized>(
    cache: &PredictCache,
    x: ArrayView2<f64>,
    q: &TaskEmbedding,
    samples: usize,
    rng: &mut R,
) -> Result<(Array2<f64>, Array2<f64>), GpError> {
    assert!(samples > 0, "at least one sample");
    let dims = cache.out_dim();
    let mut sum_m = Array2::<f64>::zeros((x.nrows(), dims));
    let mut sum_second = Array2::<f64>::zeros((x.nrows(), dims));
    for _ in 0..samples {
        let h = q.draw(rng);
        let (m, v) = cache.marginal(augment(x, h.view()).view())?;
        sum_second = sum_second + &v + &m.mapv(|a| a * a);
        sum_m = sum_m + m;
    }
    let k = samples as f64;
    let mean = sum_m / k;
    let var = (sum_second / k - mean.mapv(|a| a * a)).mapv(|v| v.max(crate::gp::VARIANCE_FLOOR));
    Ok((mean, var))
}

/// Zero-shot predictive: [`mixture_marginal`] under the prior.
pub fn zero_shot_predictive<R: Rng + ?Sized>(
    cache: &PredictCache,
    latent_dim: usize,
    x: ArrayView2<f64>,
    samples: usize,
    rng: &mut R,
) -> Result<(Array2<f64>, Array2<f64>), GpError> {
    mixture_marginal(cache, x, &TaskEmbedding::prior(latent_dim), samples, rng)
}

/// Mean of the per-sample variances, used to check the mixture variance
/// decomposition.
pub fn mean_component_variance<R: Rng + ?Sized>(
    cache: &PredictCache,
    x: ArrayView2<f64>,
    q: &TaskEmbedding,
    samples: usize,
    rng: &mut R,
) -> Result<Array2<f64>, GpError> {
    let mut acc = Array2::<f64>::zeros((x.nrows(), cache.out_dim()));
    for _ in 0..samples {
        let h = q.draw(rng);
        acc = acc + cache.marginal(augment(x, h.view()).view())?.1;
    }
    Ok(acc / samples as f64)
}

/// Diagonal-Gaussian KL `KL[a ‖ b]`.
pub fn kl_between(a: &TaskEmbedding, b: &TaskEmbedding) -> f64 {
    let va = a.variance();
    let vb = b.variance();
    let mut acc = 0.0;
    for q in 0..a.dim() {
        let d = b.mean[q] - a.mean[q];
        acc += va[q] / vb[q] + d * d / vb[q] - 1.0 + vb[q].ln() - va[q].ln();
    }
    0.5 * acc
}

#[cfg(test)]
mod tests;
