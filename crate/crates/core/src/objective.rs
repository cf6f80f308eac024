//! The PAML training objective: standardization, the minibatch ELBO over
//! dynamics and descriptors, the Adam training loop, and predictive
//! metrics on held-out tasks.

use std::io::Write;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::Rng;
use thiserror::Error;

use crate::descriptor::{DescriptorDecoder, DescriptorError, PixelVae};
use crate::diffcore::{AdamConfig, AdamState, Bindings, DiffError, NamedGradients, Parameterized, Tape, Var};
use crate::gp::{
    expected_loglik_tape, init_inducing, kl_inducing_tape, marginal_tape, GpError, GpLikelihood, PredictCache,
    RbfKernel, SvgpModel, SvgpVars,
};
use crate::taskspace::{
    infer_embeddings, kl_tape, mixture_marginal, sample_tape, standard_normal, InferenceConfig, TaskEmbedding,
    TaskEmbeddings, TaskspaceError,
};

const LOG_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("no training tasks")]
    NoTasks,
    #[error("empty test set")]
    EmptyTestSet,
    #[error("empty minibatch")]
    EmptyMinibatch,
    #[error("training diverged at step {step}")]
    Diverged { step: usize, trace: Vec<ElboRecord> },
    #[error("inconsistent data: {0}")]
    BadData(String),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
    #[error(transparent)]
    Taskspace(#[from] TaskspaceError),
}

impl ObjectiveError {
    fn is_numerical(&self) -> bool {
        matches!(
            self,
            ObjectiveError::Diff(DiffError::NonFinite { .. } | DiffError::NonFiniteGradient(_) | DiffError::Cholesky { .. })
                | ObjectiveError::Gp(GpError::Diff(_))
        )
    }
}

/// Per-dimension affine standardization.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl Standardizer {
    /// Dimensions with (near) zero spread keep unit scale.
    pub fn fit(data: ArrayView2<f64>) -> Self {
        let n = data.nrows().max(1) as f64;
        let mean = data.sum_axis(Axis(0)) / n;
        let var = data.map_axis(Axis(0), |c| c.iter().map(|v| v * v).sum::<f64>() / n)
            - mean.mapv(|m| m * m);
        let std = var.mapv(|v| {
            let s = v.max(0.0).sqrt();
            if s > 1e-8 {
                s
            } else {
                1.0
            }
        });
        Standardizer { mean, std }
    }

    pub fn identity(dim: usize) -> Self {
        Standardizer {
            mean: Array1::zeros(dim),
            std: Array1::ones(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: ArrayView2<f64>) -> Array2<f64> {
        (&x - &self.mean) / &self.std
    }

    pub fn inverse(&self, x: ArrayView2<f64>) -> Array2<f64> {
        &x * &self.std + &self.mean
    }

    pub fn transform_row(&self, x: ArrayView1<f64>) -> Array1<f64> {
        (&x - &self.mean) / &self.std
    }

    pub fn inverse_row(&self, x: ArrayView1<f64>) -> Array1<f64> {
        &x * &self.std + &self.mean
    }
}

/// One task's regression data and descriptor, in raw units. For the pixel
/// head the descriptor is the flattened image.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskData {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub descriptor: Array1<f64>,
}

impl TaskData {
    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }
}

fn stack_rows<'a>(parts: impl Iterator<Item = ArrayView2<'a, f64>>) -> Array2<f64> {
    let parts: Vec<_> = parts.collect();
    ndarray::concatenate(Axis(0), &parts).expect("consistent columns")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scalers {
    pub x: Standardizer,
    pub y: Standardizer,
    /// Present for the low-dimensional descriptor head.
    pub psi: Option<Standardizer>,
}

impl Scalers {
    pub fn fit(data: &[TaskData], with_psi: bool) -> Self {
        let x = Standardizer::fit(stack_rows(data.iter().map(|d| d.x.view())).view());
        let y = Standardizer::fit(stack_rows(data.iter().map(|d| d.y.view())).view());
        let psi = with_psi.then(|| {
            let rows: Vec<_> = data.iter().map(|d| d.descriptor.view().insert_axis(Axis(0))).collect();
            Standardizer::fit(ndarray::concatenate(Axis(0), &rows).expect("descriptor dims").view())
        });
        Scalers { x, y, psi }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Head {
    None,
    Decoder(DescriptorDecoder),
    Pixel(PixelVae),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadKind {
    None,
    Decoder,
    Pixel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub inducing: usize,
    pub decoder_hidden: usize,
    pub init_noise: f64,
    pub init_lengthscale: f64,
    /// Initial variance of the training-task embeddings; their means start
    /// at small random values.
    pub init_latent_var: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            latent_dim: 2,
            inducing: 300,
            decoder_hidden: DescriptorDecoder::DEFAULT_HIDDEN,
            init_noise: 0.1,
            init_lengthscale: 1.0,
            init_latent_var: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    /// Tasks per minibatch; 0 uses every task.
    pub batch_tasks: usize,
    /// Points per task per minibatch; 0 uses every point.
    pub batch_points: usize,
    /// Candidate images per minibatch for the pixel head; 0 uses all.
    pub candidate_batch: usize,
    pub adam: AdamConfig,
    pub pixel_adam: AdamConfig,
    pub descriptor_weight: f64,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 5000,
            batch_tasks: 8,
            batch_points: 25,
            candidate_batch: 16,
            adam: AdamConfig::default(),
            pixel_adam: AdamConfig::with_alpha(0.002),
            descriptor_weight: 1.0,
            checkpoint_every: 100,
        }
    }
}

/// Explicit minibatch: task indices, per batch task the point indices, one
/// latent noise row per batch task, and candidate image indices.
#[derive(Clone, Debug, PartialEq)]
pub struct Minibatch {
    pub tasks: Vec<usize>,
    pub points: Vec<Vec<usize>>,
    pub eps: Array2<f64>,
    pub candidates: Vec<usize>,
}

impl Minibatch {
    /// Every task and point, with the given noise.
    pub fn full(data: &[TaskData], eps: Array2<f64>, candidates: usize) -> Self {
        Minibatch {
            tasks: (0..data.len()).collect(),
            points: data.iter().map(|d| (0..d.len()).collect()).collect(),
            eps,
            candidates: (0..candidates).collect(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(
        data: &[TaskData],
        candidates: usize,
        latent_dim: usize,
        cfg: &TrainConfig,
        rng: &mut R,
    ) -> Self {
        let n = data.len();
        let bt = if cfg.batch_tasks == 0 { n } else { cfg.batch_tasks.min(n) };
        let mut tasks = sample(rng, n, bt).into_vec();
        tasks.sort_unstable();
        let points = tasks
            .iter()
            .map(|&i| {
                let m = data[i].len();
                let bp = if cfg.batch_points == 0 { m } else { cfg.batch_points.min(m) };
                let mut p = sample(rng, m, bp).into_vec();
                p.sort_unstable();
                p
            })
            .collect();
        let bc = if cfg.candidate_batch == 0 {
            candidates
        } else {
            cfg.candidate_batch.min(candidates)
        };
        let mut cands = sample(rng, candidates, bc).into_vec();
        cands.sort_unstable();
        let eps = standard_normal(rng, bt, latent_dim);
        Minibatch {
            tasks,
            points,
            eps,
            candidates: cands,
        }
    }
}

/// Values of the four ELBO terms; `total = lik_dyn + lik_desc − kl_h − kl_u`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElboTerms {
    pub total: f64,
    pub lik_dyn: f64,
    pub lik_desc: f64,
    pub kl_h: f64,
    pub kl_u: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElboRecord {
    pub step: usize,
    pub terms: ElboTerms,
}

pub fn write_elbo_trace<W: Write>(out: W, trace: &[ElboRecord]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "elbo", "kl_h", "kl_u", "lik_dyn", "lik_desc"])?;
    for r in trace {
        let t = r.terms;
        w.write_record(&[
            r.step.to_string(),
            t.total.to_string(),
            t.kl_h.to_string(),
            t.kl_u.to_string(),
            t.lik_dyn.to_string(),
            t.lik_desc.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

struct ElboVars {
    total: Var,
    lik_dyn: Var,
    lik_desc: Option<Var>,
    kl_h: Var,
    kl_u: Var,
}

/// Training data in standardized units.
struct Prepared {
    x: Vec<Array2<f64>>,
    y: Vec<Array2<f64>>,
    /// N×Dψ descriptors (standardized for the decoder head, raw images for
    /// the pixel head).
    psi: Array2<f64>,
    candidates: Array2<f64>,
}

/// Model, variational parameters and standardization for one experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub gp: SvgpModel,
    /// Free-form `q(h_i)` per training task. With the pixel head these are
    /// refreshed from the encoder after training and are not trained.
    pub embeddings: TaskEmbeddings,
    pub head: Head,
    pub scalers: Scalers,
    pub step: usize,
}

impl Parameterized for TrainState {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Array2<f64>)) {
        self.gp.visit_params(f);
        match &self.head {
            Head::Pixel(v) => v.visit_params(f),
            Head::Decoder(d) => {
                self.embeddings.visit_params(f);
                d.visit_params(f)
            }
            Head::None => self.embeddings.visit_params(f),
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Array2<f64>)) {
        self.gp.visit_params_mut(f);
        match &mut self.head {
            Head::Pixel(v) => v.visit_params_mut(f),
            Head::Decoder(d) => {
                self.embeddings.visit_params_mut(f);
                d.visit_params_mut(f)
            }
            Head::None => self.embeddings.visit_params_mut(f),
        }
    }
}

fn is_pixel_param(name: &str) -> bool {
    name.starts_with("enc.") || name.starts_with("pix.")
}

impl TrainState {
    /// Fresh model for `data`: scalers fit on the data, inducing inputs from
    /// k-means over standardized inputs with latent coordinates drawn from
    /// the prior, embeddings at the prior.
    pub fn new<R: Rng + ?Sized>(
        data: &[TaskData],
        head: HeadKind,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self, ObjectiveError> {
        if data.is_empty() {
            return Err(ObjectiveError::NoTasks);
        }
        let scalers = Scalers::fit(data, head == HeadKind::Decoder);
        let xs = stack_rows(data.iter().map(|d| d.x.view()));
        let xs = scalers.x.transform(xs.view());
        let dx = xs.ncols();
        let q = cfg.latent_dim;
        let zx = init_inducing(xs.view(), cfg.inducing, rng);
        let mut z = Array2::zeros((cfg.inducing, dx + q));
        z.slice_mut(s![.., ..dx]).assign(&zx);
        z.slice_mut(s![.., dx..]).assign(&standard_normal(rng, cfg.inducing, q));
        let dims = data[0].y.ncols();
        let mut gp = SvgpModel::new(z, dims);
        gp.kernel = RbfKernel::new(1.0, &vec![cfg.init_lengthscale; dx + q]);
        gp.likelihood = GpLikelihood::new(&vec![cfg.init_noise; dims]);
        let mut embeddings = TaskEmbeddings::prior(data.len(), q);
        embeddings.log_var.fill(cfg.init_latent_var.ln());
        embeddings.mean = standard_normal(rng, data.len(), q) * 0.1;
        let head = match head {
            HeadKind::None => Head::None,
            HeadKind::Decoder => Head::Decoder(DescriptorDecoder::new(
                q,
                data[0].descriptor.len(),
                cfg.decoder_hidden,
                rng,
            )),
            HeadKind::Pixel => Head::Pixel(PixelVae::new(data[0].descriptor.len(), q, rng)),
        };
        Ok(TrainState {
            gp,
            embeddings,
            head,
            scalers,
            step: 0,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.embeddings.latent_dim()
    }

    pub fn num_tasks(&self) -> usize {
        self.embeddings.len()
    }

    fn head_kind(&self) -> HeadKind {
        match self.head {
            Head::None => HeadKind::None,
            Head::Decoder(_) => HeadKind::Decoder,
            Head::Pixel(_) => HeadKind::Pixel,
        }
    }

    /// Registers a newly acquired task: refits the scalers on `data` (all
    /// training tasks, the new one last), re-expresses the warm-started
    /// parameters in the new units, and appends a prior embedding.
    pub fn add_task(&mut self, data: &[TaskData]) {
        assert_eq!(data.len(), self.num_tasks() + 1, "exactly one new task");
        let new = Scalers::fit(data, self.head_kind() == HeadKind::Decoder);
        // inputs: keep inducing points at the same raw locations and the
        // kernel invariant by rescaling the input lengthscales
        let dx = new.x.dim();
        let ratio = &self.scalers.x.std / &new.x.std;
        {
            let z = &mut self.gp.inducing.z;
            for mut row in z.rows_mut() {
                let raw = self.scalers.x.inverse_row(row.slice(s![..dx]));
                row.slice_mut(s![..dx]).assign(&new.x.transform_row(raw.view()));
            }
            let mut ll = self.gp.kernel.log_lengthscales.slice_mut(s![0, ..dx]);
            ll += &ratio.mapv(f64::ln);
        }
        // descriptors: exact affine remap of the decoder's output layer
        if let (Head::Decoder(dec), Some(old), Some(newp)) = (&mut self.head, &self.scalers.psi, &new.psi) {
            let r = &old.std / &newp.std;
            let w = dec.net.weights.last_mut().unwrap();
            *w = &*w * &r;
            let b = dec.net.biases.last_mut().unwrap();
            let shifted = (&b.row(0) * &old.std + &old.mean - &newp.mean) / &newp.std;
            b.row_mut(0).assign(&shifted);
            let mut ln = dec.log_noise.row_mut(0);
            ln += &r.mapv(|v| 2.0 * v.ln());
        }
        self.scalers = new;
        self.embeddings.push(&TaskEmbedding::prior(self.latent_dim()));
    }

    fn prepare(&self, data: &[TaskData], candidates: Option<ArrayView2<f64>>) -> Result<Prepared, ObjectiveError> {
        if data.len() != self.num_tasks() {
            return Err(ObjectiveError::BadData(format!(
                "{} tasks but {} embeddings",
                data.len(),
                self.num_tasks()
            )));
        }
        let x = data.iter().map(|d| self.scalers.x.transform(d.x.view())).collect();
        let y = data.iter().map(|d| self.scalers.y.transform(d.y.view())).collect();
        let rows: Vec<_> = data.iter().map(|d| d.descriptor.view().insert_axis(Axis(0))).collect();
        let mut psi = ndarray::concatenate(Axis(0), &rows)
            .map_err(|_| ObjectiveError::BadData("descriptor dimensions differ".into()))?;
        if let Some(sc) = &self.scalers.psi {
            psi = sc.transform(psi.view());
        }
        let candidates = match candidates {
            Some(c) => c.to_owned(),
            None => Array2::zeros((0, psi.ncols())),
        };
        Ok(Prepared { x, y, psi, candidates })
    }

    fn elbo_tape(
        &self,
        t: &mut Tape,
        b: &Bindings,
        prep: &Prepared,
        mb: &Minibatch,
        descriptor_weight: f64,
    ) -> Result<ElboVars, ObjectiveError> {
        let n = prep.x.len();
        let bt = mb.tasks.len();
        if bt == 0 || mb.points.iter().any(Vec::is_empty) {
            return Err(ObjectiveError::EmptyMinibatch);
        }
        let scale_t = n as f64 / bt as f64;
        let gpv = SvgpVars::from_bindings(b, self.gp.out_dim())?;

        let (mean, log_var) = match &self.head {
            Head::Pixel(vae) => {
                let imgs = t.constant(prep.psi.select(Axis(0), &mb.tasks));
                vae.encode_tape(t, b, imgs)?
            }
            _ => {
                let m = b.get("tasks.mean")?;
                let lv = b.get("tasks.log_var")?;
                (t.gather_rows(m, &mb.tasks), t.gather_rows(lv, &mb.tasks))
            }
        };
        let h = sample_tape(t, mean, log_var, mb.eps.clone());

        let total_rows: usize = mb.points.iter().map(Vec::len).sum();
        let dx = prep.x[0].ncols();
        let dy = prep.y[0].ncols();
        let mut xb = Array2::zeros((total_rows, dx));
        let mut yb = Array2::zeros((total_rows, dy));
        let mut row_task = Vec::with_capacity(total_rows);
        let mut row_w = Array2::zeros((total_rows, 1));
        let mut r = 0;
        for (k, (&i, pts)) in mb.tasks.iter().zip(&mb.points).enumerate() {
            let w = prep.x[i].nrows() as f64 / pts.len() as f64;
            for &j in pts {
                xb.row_mut(r).assign(&prep.x[i].row(j));
                yb.row_mut(r).assign(&prep.y[i].row(j));
                row_task.push(k);
                row_w[[r, 0]] = w;
                r += 1;
            }
        }
        let xv = t.constant(xb);
        let hg = t.gather_rows(h, &row_task);
        let xa = t.concat_cols(&[xv, hg]);
        let (fm, fv) = marginal_tape(t, &gpv, xa)?;
        let yv = t.constant(yb);
        let ell = expected_loglik_tape(t, fm, fv, yv, gpv.log_noise);
        let wv = t.constant(row_w);
        let ell = t.mul(ell, wv);
        let ell = t.sum(ell);
        let lik_dyn = t.scale(ell, scale_t);

        let lik_desc = match &self.head {
            Head::None => None,
            Head::Decoder(dec) => {
                let psi = t.constant(prep.psi.select(Axis(0), &mb.tasks));
                let ll = dec.loglik_tape(t, b, psi, h)?;
                let ll = t.sum(ll);
                Some(t.scale(ll, scale_t * descriptor_weight))
            }
            Head::Pixel(vae) => {
                let imgs = t.constant(prep.psi.select(Axis(0), &mb.tasks));
                let ll = vae.loglik_tape(t, b, imgs, h)?;
                let ll = t.sum(ll);
                let mut total = t.scale(ll, scale_t * descriptor_weight);
                let nc = prep.candidates.nrows();
                if nc > 0 && !mb.candidates.is_empty() {
                    let c = t.constant(prep.candidates.select(Axis(0), &mb.candidates));
                    let (cm, _) = vae.encode_tape(t, b, c)?;
                    let rec = vae.loglik_tape(t, b, c, cm)?;
                    let rec = t.sum(rec);
                    let w = nc as f64 / mb.candidates.len() as f64 * descriptor_weight;
                    let rec = t.scale(rec, w);
                    total = t.add(total, rec);
                }
                Some(total)
            }
        };

        let kl = kl_tape(t, mean, log_var);
        let kl = t.sum(kl);
        let kl_h = t.scale(kl, scale_t);
        let kl_u = kl_inducing_tape(t, &gpv);

        let mut total = lik_dyn;
        if let Some(d) = lik_desc {
            total = t.add(total, d);
        }
        let total = t.sub(total, kl_h);
        let total = t.sub(total, kl_u);
        Ok(ElboVars {
            total,
            lik_dyn,
            lik_desc,
            kl_h,
            kl_u,
        })
    }

    fn terms(t: &Tape, v: &ElboVars) -> ElboTerms {
        ElboTerms {
            total: t.scalar(v.total),
            lik_dyn: t.scalar(v.lik_dyn),
            lik_desc: v.lik_desc.map_or(0.0, |d| t.scalar(d)),
            kl_h: t.scalar(v.kl_h),
            kl_u: t.scalar(v.kl_u),
        }
    }

    /// Minibatch ELBO estimate for explicit `mb`.
    pub fn paml_elbo(
        &self,
        data: &[TaskData],
        candidates: Option<ArrayView2<f64>>,
        mb: &Minibatch,
        descriptor_weight: f64,
    ) -> Result<ElboTerms, ObjectiveError> {
        let prep = self.prepare(data, candidates)?;
        let mut t = Tape::new();
        let b = t.bind(self);
        let v = self.elbo_tape(&mut t, &b, &prep, mb, descriptor_weight)?;
        t.evaluate(v.total)?;
        Ok(Self::terms(&t, &v))
    }

    /// Records the ELBO for `mb` on `t` with every parameter bound, for
    /// gradient checks.
    pub fn elbo_on_tape(
        &self,
        t: &mut Tape,
        b: &Bindings,
        data: &[TaskData],
        candidates: Option<ArrayView2<f64>>,
        mb: &Minibatch,
        descriptor_weight: f64,
    ) -> Result<Var, ObjectiveError> {
        let prep = self.prepare(data, candidates)?;
        Ok(self.elbo_tape(t, b, &prep, mb, descriptor_weight)?.total)
    }

    fn step_once<R: Rng + ?Sized>(
        &mut self,
        prep: &Prepared,
        cfg: &TrainConfig,
        adam: &mut AdamState,
        adam_pix: &mut AdamState,
        rng: &mut R,
        data: &[TaskData],
    ) -> Result<ElboTerms, ObjectiveError> {
        let mb = Minibatch::sample(data, prep.candidates.nrows(), self.latent_dim(), cfg, rng);
        let mut t = Tape::new();
        let b = t.bind(self);
        let v = self.elbo_tape(&mut t, &b, prep, &mb, cfg.descriptor_weight)?;
        let loss = t.neg(v.total);
        t.evaluate(loss)?;
        let terms = Self::terms(&t, &v);
        let grads = b.collect(&t.gradient(loss)?);
        let (pix, main): (Vec<_>, Vec<_>) = grads.0.into_iter().partition(|(k, _)| is_pixel_param(k));
        let main = NamedGradients(main.into_iter().collect());
        let pix = NamedGradients(pix.into_iter().collect());
        // validate both before touching either
        for (name, g) in main.0.iter().chain(pix.0.iter()) {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(DiffError::NonFiniteGradient(name.clone()).into());
            }
        }
        adam.update(self, &main)?;
        if !pix.0.is_empty() {
            adam_pix.update(self, &pix)?;
        }
        self.step += 1;
        Ok(terms)
    }

    /// Maximizes the ELBO with Adam on minibatches of tasks and points.
    /// Optimizer moments start fresh on every call. On a non-finite value
    /// the state is rolled back to the last checkpoint and the learning
    /// rates are halved once; a second failure aborts.
    pub fn train<R: Rng + ?Sized>(
        &mut self,
        data: &[TaskData],
        candidates: Option<ArrayView2<f64>>,
        cfg: &TrainConfig,
        rng: &mut R,
    ) -> Result<Vec<ElboRecord>, ObjectiveError> {
        if data.is_empty() {
            return Err(ObjectiveError::NoTasks);
        }
        let prep = self.prepare(data, candidates)?;
        let mut adam = AdamState::new(cfg.adam);
        let mut adam_pix = AdamState::new(cfg.pixel_adam);
        let mut trace = Vec::with_capacity(cfg.steps);
        let every = cfg.checkpoint_every.max(1);
        let mut checkpoint = (self.clone(), adam.clone(), adam_pix.clone(), 0usize);
        let mut retried = false;
        let mut done = 0;
        while done < cfg.steps {
            if done % every == 0 {
                checkpoint = (self.clone(), adam.clone(), adam_pix.clone(), done);
            }
            match self.step_once(&prep, cfg, &mut adam, &mut adam_pix, rng, data) {
                Ok(terms) => {
                    trace.push(ElboRecord { step: self.step, terms });
                    done += 1;
                }
                Err(e) if e.is_numerical() => {
                    if retried {
                        log::warn!("training diverged again at step {}; aborting", self.step);
                        return Err(ObjectiveError::Diverged { step: self.step, trace });
                    }
                    log::warn!("non-finite ELBO at step {} ({e}); halving learning rate", self.step);
                    retried = true;
                    let (s, a, ap, at) = checkpoint.clone();
                    *self = s;
                    adam = a;
                    adam_pix = ap;
                    adam.config.alpha *= 0.5;
                    adam_pix.config.alpha *= 0.5;
                    trace.truncate(at);
                    done = at;
                }
                Err(e) => return Err(e),
            }
        }
        if let Head::Pixel(vae) = &self.head {
            let enc = vae.encode(prep.psi.view())?;
            self.embeddings = TaskEmbeddings::from_list(&enc);
        }
        Ok(trace)
    }

    /// Replaces the pixel encoder and decoder with freshly sampled ones;
    /// other heads are left alone.
    pub fn reinitialize_pixel_head<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        if let Head::Pixel(v) = &mut self.head {
            let hidden = v.encoder.weights[0].ncols();
            *v = PixelVae::with_hidden(v.image_len(), v.latent_dim(), hidden, rng);
        }
    }

    /// Descriptor posteriors of the training tasks: the free-form
    /// embeddings, or the encoder outputs for the pixel head.
    pub fn training_embeddings(&self) -> Vec<TaskEmbedding> {
        self.embeddings.to_list()
    }

    /// Decoded descriptor means in raw units for latent rows `h`.
    pub fn decode_descriptors(&self, h: ArrayView2<f64>) -> Option<Array2<f64>> {
        match (&self.head, &self.scalers.psi) {
            (Head::Decoder(dec), Some(sc)) => Some(sc.inverse(dec.predict(h).view())),
            _ => None,
        }
    }

    pub fn predict_cache(&self) -> Result<PredictCache, ObjectiveError> {
        Ok(PredictCache::new(&self.gp)?)
    }

    /// Infers embeddings for `tasks` from their data (first `shots` points
    /// each when given) with the globals frozen.
    pub fn infer_test_embeddings<R: Rng + ?Sized>(
        &self,
        tasks: &[TaskData],
        shots: Option<usize>,
        inference: &InferenceConfig,
        rng: &mut R,
    ) -> Result<Vec<TaskEmbedding>, ObjectiveError> {
        let cache = self.predict_cache()?;
        let std: Vec<(Array2<f64>, Array2<f64>)> = tasks
            .iter()
            .map(|d| {
                let m = shots.map_or(d.len(), |s| s.min(d.len()));
                (
                    self.scalers.x.transform(d.x.slice(s![..m, ..])),
                    self.scalers.y.transform(d.y.slice(s![..m, ..])),
                )
            })
            .collect();
        let views: Vec<_> = std.iter().map(|(x, y)| (x.view(), y.view())).collect();
        Ok(infer_embeddings(&cache, self.latent_dim(), &views, inference, rng)?)
    }

    /// Mean per-point Gaussian NLL and RMSE over all points of `test`, in
    /// the target units of `cfg.units` (the training standardizer when
    /// unset). Each test task's embedding is inferred from its own data
    /// first.
    pub fn predictive_nll_rmse<R: Rng + ?Sized>(
        &self,
        test: &[TaskData],
        cfg: &EvalConfig,
        rng: &mut R,
    ) -> Result<Metrics, ObjectiveError> {
        if test.is_empty() || test.iter().all(TaskData::is_empty) {
            return Err(ObjectiveError::EmptyTestSet);
        }
        let qs = self.infer_test_embeddings(test, cfg.shots, &cfg.inference, rng)?;
        let cache = self.predict_cache()?;
        let noise = cache.noise_variances();
        let mut acc = MetricAccumulator::default();
        for (d, q) in test.iter().zip(&qs) {
            let x = self.scalers.x.transform(d.x.view());
            let y = self.scalers.y.transform(d.y.view());
            let (m, v) = mixture_marginal(&cache, x.view(), q, cfg.samples.max(1), rng)?;
            let v = v + &noise;
            match &cfg.units {
                None => acc.add(y.view(), m.view(), v.view()),
                Some(u) => {
                    // training units -> raw -> reference units
                    let ratio = &self.scalers.y.std / &u.std;
                    let m = u.transform(self.scalers.y.inverse(m.view()).view());
                    let v = v * &ratio.mapv(|r| r * r);
                    acc.add(u.transform(d.y.view()).view(), m.view(), v.view());
                }
            }
        }
        Ok(acc.finish())
    }
}

#[derive(Clone, Debug)]
pub struct EvalConfig {
    /// Points per test task used for embedding inference; `None` uses the
    /// whole trajectory.
    pub shots: Option<usize>,
    pub inference: InferenceConfig,
    /// Latent samples in the predictive mixture.
    pub samples: usize,
    /// Fixed target standardizer for reporting, so that models trained on
    /// different tasks are scored in the same units.
    pub units: Option<Standardizer>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            shots: None,
            inference: InferenceConfig::default(),
            samples: 8,
            units: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub nll: f64,
    pub rmse: f64,
}

/// Running sums for per-point NLL (summed over output dimensions) and
/// entry-wise squared error.
#[derive(Default, Debug, Clone)]
pub struct MetricAccumulator {
    nll: f64,
    sq: f64,
    points: usize,
    entries: usize,
}

impl MetricAccumulator {
    pub fn add(&mut self, y: ArrayView2<f64>, mean: ArrayView2<f64>, var: ArrayView2<f64>) {
        for ((yv, m), v) in y.iter().zip(mean.iter()).zip(var.iter()) {
            let r = yv - m;
            self.nll += 0.5 * (LOG_2PI + v.ln() + r * r / v);
            self.sq += r * r;
        }
        self.points += y.nrows();
        self.entries += y.len();
    }

    pub fn finish(&self) -> Metrics {
        Metrics {
            nll: self.nll / self.points.max(1) as f64,
            rmse: (self.sq / self.entries.max(1) as f64).sqrt(),
        }
    }
}

/// NLL and RMSE of Gaussian predictions `(mean, var)` for targets `y`.
pub fn nll_rmse(y: ArrayView2<f64>, mean: ArrayView2<f64>, var: ArrayView2<f64>) -> Metrics {
    let mut acc = MetricAccumulator::default();
    acc.add(y, mean, var);
    acc.finish()
}
