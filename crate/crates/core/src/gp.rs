//! RBF kernel and the sparse variational GP shared across tasks.
//!
//! One independent GP per output dimension; all dimensions share the
//! inducing inputs `Z` and the kernel. The variational posterior over the
//! inducing values is stored whitened: `u = L v` with `L = chol(K_ZZ)` and
//! `q(v) = N(m̃, R Rᵀ)`, so `m = L m̃` and `S = (L R)(L R)ᵀ`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::Rng;
use thiserror::Error;

use crate::diffcore::{linalg, AdamConfig, AdamState, Bindings, DiffError, Parameterized, Tape, Var};

/// Floor applied to predictive variances.
pub const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Diff(#[from] DiffError),
}

/// Squared-exponential kernel `σ² exp(−½ (a−b)ᵀ Λ⁻¹ (a−b))` with
/// `Λ = diag(ℓ²)`. Both are stored as logs.
#[derive(Clone, Debug, PartialEq)]
pub struct RbfKernel {
    /// 1×1, log σ².
    pub log_signal_variance: Array2<f64>,
    /// 1×P, log ℓ.
    pub log_lengthscales: Array2<f64>,
}

impl RbfKernel {
    pub fn new(signal_variance: f64, lengthscales: &[f64]) -> Self {
        assert!(signal_variance > 0.0 && lengthscales.iter().all(|&l| l > 0.0));
        Self {
            log_signal_variance: Array2::from_elem((1, 1), signal_variance.ln()),
            log_lengthscales: Array2::from_shape_fn((1, lengthscales.len()), |(_, j)| {
                lengthscales[j].ln()
            }),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.log_lengthscales.ncols()
    }

    pub fn signal_variance(&self) -> f64 {
        self.log_signal_variance[[0, 0]].exp()
    }

    pub fn lengthscales(&self) -> Array1<f64> {
        self.log_lengthscales.row(0).mapv(f64::exp)
    }

    pub fn eval(&self, a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<f64, GpError> {
        let p = self.input_dim();
        for len in [a.len(), b.len()] {
            if len != p {
                return Err(GpError::DimensionMismatch { expected: p, got: len });
            }
        }
        let ls = self.lengthscales();
        let r2: f64 = a
            .iter()
            .zip(b.iter())
            .zip(ls.iter())
            .map(|((x, y), l)| ((x - y) / l).powi(2))
            .sum();
        Ok(self.signal_variance() * (-0.5 * r2).exp())
    }

    /// Gram matrix between the rows of `a` and `b`.
    pub fn gram(&self, a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<Array2<f64>, GpError> {
        let p = self.input_dim();
        for m in [&a, &b] {
            if m.ncols() != p {
                return Err(GpError::DimensionMismatch { expected: p, got: m.ncols() });
            }
        }
        let mut t = Tape::new();
        let lsf = t.constant(self.log_signal_variance.clone());
        let lls = t.constant(self.log_lengthscales.clone());
        let av = t.constant(a.to_owned());
        let bv = t.constant(b.to_owned());
        let k = kernel_tape(&mut t, lsf, lls, av, bv);
        Ok(t.value(k).clone())
    }
}

/// `σ² exp(−½ ‖(a − b)/ℓ‖²)` between rows of `a` and `b`, on the tape.
pub fn kernel_tape(t: &mut Tape, log_sf2: Var, log_ls: Var, a: Var, b: Var) -> Var {
    let inv_ls = {
        let n = t.neg(log_ls);
        t.exp(n)
    };
    let asc = t.mul(a, inv_ls);
    let bsc = if a == b { asc } else { t.mul(b, inv_ls) };
    scaled_kernel_tape(t, log_sf2, asc, bsc)
}

/// Kernel between inputs that are already divided by their lengthscales.
fn scaled_kernel_tape(t: &mut Tape, log_sf2: Var, asc: Var, bsc: Var) -> Var {
    let d = t.sq_dist(asc, bsc);
    let e = t.scale(d, -0.5);
    let e = t.exp(e);
    let sf2 = t.exp(log_sf2);
    t.mul(e, sf2)
}

/// Inducing inputs and whitened variational parameters, one Gaussian per
/// output dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct InducingSet {
    /// L×P inducing inputs.
    pub z: Array2<f64>,
    /// L×D whitened means.
    pub q_mu: Array2<f64>,
    /// Per output dimension, an L×L matrix whose strict lower triangle and
    /// log-diagonal give the whitened covariance factor.
    pub q_sqrt: Vec<Array2<f64>>,
}

impl InducingSet {
    /// Prior-matching variational distribution at the given inputs.
    pub fn at_prior(z: Array2<f64>, out_dim: usize) -> Self {
        let l = z.nrows();
        Self {
            q_mu: Array2::zeros((l, out_dim)),
            q_sqrt: vec![Array2::zeros((l, l)); out_dim],
            z,
        }
    }

    pub fn len(&self) -> usize {
        self.z.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.z.nrows() == 0
    }

    pub fn out_dim(&self) -> usize {
        self.q_mu.ncols()
    }

    /// Whitened covariance factor `R_d` for output dimension `d`.
    pub fn whitened_factor(&self, d: usize) -> Array2<f64> {
        let mut r = linalg::tril(self.q_sqrt[d].clone());
        for i in 0..r.nrows() {
            r[[i, i]] = r[[i, i]].exp();
        }
        r
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GpLikelihood {
    /// 1×D log noise variances.
    pub log_noise: Array2<f64>,
}

impl GpLikelihood {
    pub fn new(noise_variances: &[f64]) -> Self {
        assert!(noise_variances.iter().all(|&v| v > 0.0));
        Self {
            log_noise: Array2::from_shape_fn((1, noise_variances.len()), |(_, j)| {
                noise_variances[j].ln()
            }),
        }
    }

    pub fn noise_variances(&self) -> Array1<f64> {
        self.log_noise.row(0).mapv(f64::exp)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SvgpModel {
    pub kernel: RbfKernel,
    pub inducing: InducingSet,
    pub likelihood: GpLikelihood,
}

/// Tape handles for an [`SvgpModel`]'s parameters.
#[derive(Clone, Debug)]
pub struct SvgpVars {
    pub log_sf2: Var,
    pub log_ls: Var,
    pub z: Var,
    pub q_mu: Var,
    pub q_sqrt: Vec<Var>,
    pub log_noise: Var,
}

impl SvgpVars {
    pub fn from_bindings(b: &Bindings, out_dim: usize) -> Result<Self, DiffError> {
        Ok(Self {
            log_sf2: b.get("gp.log_sf2")?,
            log_ls: b.get("gp.log_ls")?,
            z: b.get("gp.z")?,
            q_mu: b.get("gp.q_mu")?,
            q_sqrt: (0..out_dim)
                .map(|d| b.get(&format!("gp.q_sqrt.{d}")))
                .collect::<Result<_, _>>()?,
            log_noise: b.get("gp.log_noise")?,
        })
    }
}

impl Parameterized for SvgpModel {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Array2<f64>)) {
        f("gp.log_sf2", &self.kernel.log_signal_variance);
        f("gp.log_ls", &self.kernel.log_lengthscales);
        f("gp.z", &self.inducing.z);
        f("gp.q_mu", &self.inducing.q_mu);
        for (d, q) in self.inducing.q_sqrt.iter().enumerate() {
            f(&format!("gp.q_sqrt.{d}"), q);
        }
        f("gp.log_noise", &self.likelihood.log_noise);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Array2<f64>)) {
        f("gp.log_sf2", &mut self.kernel.log_signal_variance);
        f("gp.log_ls", &mut self.kernel.log_lengthscales);
        f("gp.z", &mut self.inducing.z);
        f("gp.q_mu", &mut self.inducing.q_mu);
        for (d, q) in self.inducing.q_sqrt.iter_mut().enumerate() {
            f(&format!("gp.q_sqrt.{d}"), q);
        }
        f("gp.log_noise", &mut self.likelihood.log_noise);
    }
}

impl SvgpModel {
    /// Unit-scale defaults for standardized data: σ² = 1, ℓ = 1, noise 0.1,
    /// variational posterior at the prior.
    pub fn new(z: Array2<f64>, out_dim: usize) -> Self {
        let p = z.ncols();
        Self {
            kernel: RbfKernel::new(1.0, &vec![1.0; p]),
            inducing: InducingSet::at_prior(z, out_dim),
            likelihood: GpLikelihood::new(&vec![0.1; out_dim]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.kernel.input_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.inducing.out_dim()
    }

    /// Builds a model from unwhitened variational moments `q(u^d) = N(m^d, S^d)`.
    pub fn from_unwhitened(
        kernel: RbfKernel,
        z: Array2<f64>,
        means: &Array2<f64>,
        covs: &[Array2<f64>],
        likelihood: GpLikelihood,
    ) -> Result<Self, GpError> {
        let kzz = kernel.gram(z.view(), z.view())?;
        let (lk, _) = linalg::cholesky_jittered(kzz.view())
            .ok_or(DiffError::Cholesky { size: kzz.nrows() })?;
        let q_mu = linalg::solve_lower(lk.view(), means.view());
        let mut q_sqrt = Vec::with_capacity(covs.len());
        for s in covs {
            let ls = match linalg::cholesky(s.view()) {
                Some(l) => l,
                None => linalg::cholesky_jittered(s.view())
                    .ok_or(DiffError::Cholesky { size: s.nrows() })?
                    .0,
            };
            let mut r = linalg::solve_lower(lk.view(), ls.view());
            for i in 0..r.nrows() {
                r[[i, i]] = r[[i, i]].ln();
            }
            q_sqrt.push(r);
        }
        Ok(Self {
            kernel,
            inducing: InducingSet { z, q_mu, q_sqrt },
            likelihood,
        })
    }

    /// Unwhitened variational moments `(m, [S^d])`.
    pub fn unwhitened(&self) -> Result<(Array2<f64>, Vec<Array2<f64>>), GpError> {
        let z = &self.inducing.z;
        let kzz = self.kernel.gram(z.view(), z.view())?;
        let (lk, _) = linalg::cholesky_jittered(kzz.view())
            .ok_or(DiffError::Cholesky { size: kzz.nrows() })?;
        let m = lk.dot(&self.inducing.q_mu);
        let covs = (0..self.out_dim())
            .map(|d| {
                let f = lk.dot(&self.inducing.whitened_factor(d));
                f.dot(&f.t())
            })
            .collect();
        Ok((m, covs))
    }

    /// Marginal predictive moments of the latent function at augmented
    /// inputs (rows of `x_aug`), each `B×D`. Variances are floored.
    pub fn marginal(&self, x_aug: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>), GpError> {
        PredictCache::new(self)?.marginal(x_aug)
    }

    /// Sum over output dimensions of `KL[q(u^d) ‖ p(u^d)]`.
    pub fn kl_inducing(&self) -> f64 {
        let mut t = Tape::new();
        let b = t.bind(self);
        let vars = SvgpVars::from_bindings(&b, self.out_dim()).expect("own bindings");
        let kl = kl_inducing_tape(&mut t, &vars);
        t.scalar(kl)
    }

    /// Fits the model to a single regression dataset by maximizing the SVGP
    /// ELBO with Adam. Only parameters accepted by `trainable` change.
    pub fn fit(
        &mut self,
        x: ArrayView2<f64>,
        y: ArrayView2<f64>,
        steps: usize,
        adam: AdamConfig,
        trainable: impl Fn(&str) -> bool,
    ) -> Result<Vec<f64>, GpError> {
        let mut state = AdamState::new(adam);
        let mut trace = Vec::with_capacity(steps);
        for _ in 0..steps {
            let mut t = Tape::new();
            let b = t.bind_with(self, &trainable);
            let vars = SvgpVars::from_bindings(&b, self.out_dim())?;
            let xv = t.constant(x.to_owned());
            let (mean, var) = marginal_tape(&mut t, &vars, xv)?;
            let yv = t.constant(y.to_owned());
            let lik = expected_loglik_tape(&mut t, mean, var, yv, vars.log_noise);
            let lik = t.sum(lik);
            let kl = kl_inducing_tape(&mut t, &vars);
            let elbo = t.sub(lik, kl);
            let loss = t.neg(elbo);
            let value = t.evaluate(loss)?;
            trace.push(-value);
            let grads = b.collect(&t.gradient(loss)?);
            state.update(self, &grads)?;
        }
        Ok(trace)
    }
}

/// Whitened covariance factor on the tape.
fn factor_tape(t: &mut Tape, raw: Var) -> Var {
    t.tril_exp_diag(raw)
}

/// Marginal moments of `q(f)` at the rows of `x_aug`, both `B×D`, computed
/// through `A = L⁻¹ K_ZX`:
/// mean = Aᵀ m̃, var = k(x,x) − Σ A² + Σ (Rᵀ A)².
pub fn marginal_tape(t: &mut Tape, v: &SvgpVars, x_aug: Var) -> Result<(Var, Var), GpError> {
    let p = t.shape(v.z).1;
    if t.shape(x_aug).1 != p {
        return Err(GpError::DimensionMismatch { expected: p, got: t.shape(x_aug).1 });
    }
    let inv_ls = {
        let n = t.neg(v.log_ls);
        t.exp(n)
    };
    let zs = t.mul(v.z, inv_ls);
    let xs = t.mul(x_aug, inv_ls);
    let kzz = scaled_kernel_tape(t, v.log_sf2, zs, zs);
    let kzx = scaled_kernel_tape(t, v.log_sf2, zs, xs);
    let lk = t.cholesky(kzz)?;
    let a = t.tri_solve(lk, kzx);
    let at = t.transpose(a);
    let mean = t.matmul(at, v.q_mu);

    let a2 = t.square(a);
    let a2 = t.sum_rows(a2);
    let sf2 = t.exp(v.log_sf2);
    let base = t.sub(sf2, a2); // 1×B
    let mut cols = Vec::with_capacity(v.q_sqrt.len());
    for &raw in &v.q_sqrt {
        let r = factor_tape(t, raw);
        let rt = t.transpose(r);
        let ra = t.matmul(rt, a);
        let ra2 = t.square(ra);
        let ra2 = t.sum_rows(ra2);
        cols.push(t.add(base, ra2));
    }
    let var = t.concat_rows(&cols);
    let var = t.transpose(var);
    Ok((mean, var))
}

/// Per-row expected Gaussian log-likelihood `E_q[log N(y | f, σ²)]`
/// summed over output dimensions, as a `B×1` column.
pub fn expected_loglik_tape(t: &mut Tape, mean: Var, var: Var, y: Var, log_noise: Var) -> Var {
    let resid = t.sub(y, mean);
    let r2 = t.square(resid);
    let num = t.add(r2, var);
    let noise = t.exp(log_noise);
    let quad = t.div(num, noise);
    let quad = t.scale(quad, -0.5);
    let norm = t.add_const(log_noise, (2.0 * std::f64::consts::PI).ln());
    let norm = t.scale(norm, -0.5);
    let per = t.add(quad, norm);
    t.sum_cols(per)
}

/// `Σ_d KL[N(m̃_d, R_d R_dᵀ) ‖ N(0, I)]`, which equals the unwhitened
/// `Σ_d KL[N(m^d, S^d) ‖ N(0, K_ZZ)]`.
pub fn kl_inducing_tape(t: &mut Tape, v: &SvgpVars) -> Var {
    let l = t.shape(v.q_mu).0 as f64;
    let dims = v.q_sqrt.len() as f64;
    let m2 = t.square(v.q_mu);
    let mut total = t.sum(m2);
    for &raw in &v.q_sqrt {
        let r = factor_tape(t, raw);
        let r2 = t.square(r);
        let tr = t.sum(r2);
        let logdiag = t.diag_part(raw);
        let logdet = t.sum(logdiag);
        let logdet = t.scale(logdet, 2.0);
        let term = t.sub(tr, logdet);
        total = t.add(total, term);
    }
    let total = t.add_const(total, -l * dims);
    t.scale(total, 0.5)
}

/// Precomputed quantities for repeated prediction with frozen global
/// parameters: with `W = K_ZZ⁻¹ k_Z`,
/// mean = k_Zᵀ c with `c = L⁻ᵀ m̃`, and
/// var = σ² + k_Zᵀ M_d k_Z with `M_d = L⁻ᵀ (R_d R_dᵀ − I) L⁻¹`.
#[derive(Clone, Debug)]
pub struct PredictCache {
    log_sf2: Array2<f64>,
    inv_ls: Array2<f64>,
    z_scaled: Array2<f64>,
    c: Array2<f64>,
    m: Vec<Array2<f64>>,
    log_noise: Array2<f64>,
}

impl PredictCache {
    pub fn new(model: &SvgpModel) -> Result<Self, GpError> {
        let z = &model.inducing.z;
        let kzz = model.kernel.gram(z.view(), z.view())?;
        let (lk, _) = linalg::cholesky_jittered(kzz.view())
            .ok_or(DiffError::Cholesky { size: kzz.nrows() })?;
        let lk_inv = linalg::lower_inverse(lk.view());
        let c = lk_inv.t().dot(&model.inducing.q_mu);
        let l = z.nrows();
        let m = (0..model.out_dim())
            .map(|d| {
                let r = model.inducing.whitened_factor(d);
                let mut inner = r.dot(&r.t());
                for i in 0..l {
                    inner[[i, i]] -= 1.0;
                }
                lk_inv.t().dot(&inner).dot(&lk_inv)
            })
            .collect();
        let inv_ls = model.kernel.log_lengthscales.mapv(|x| (-x).exp());
        Ok(Self {
            log_sf2: model.kernel.log_signal_variance.clone(),
            z_scaled: z * &inv_ls,
            inv_ls,
            c,
            m,
            log_noise: model.likelihood.log_noise.clone(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.inv_ls.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.c.ncols()
    }

    pub fn noise_variances(&self) -> Array1<f64> {
        self.log_noise.row(0).mapv(f64::exp)
    }

    /// Marginal moments on the tape; only `x_aug` may carry gradients.
    pub fn marginal_tape(&self, t: &mut Tape, x_aug: Var) -> Result<(Var, Var), GpError> {
        let p = self.input_dim();
        if t.shape(x_aug).1 != p {
            return Err(GpError::DimensionMismatch { expected: p, got: t.shape(x_aug).1 });
        }
        let inv_ls = t.constant(self.inv_ls.clone());
        let xs = t.mul(x_aug, inv_ls);
        let zs = t.constant(self.z_scaled.clone());
        let log_sf2 = t.constant(self.log_sf2.clone());
        let kxz = scaled_kernel_tape(t, log_sf2, xs, zs);
        let c = t.constant(self.c.clone());
        let mean = t.matmul(kxz, c);
        let sf2 = self.log_sf2[[0, 0]].exp();
        let mut cols = Vec::with_capacity(self.m.len());
        for md in &self.m {
            let md = t.constant(md.clone());
            let km = t.matmul(kxz, md);
            let q = t.mul(km, kxz);
            let q = t.sum_cols(q);
            cols.push(t.add_const(q, sf2));
        }
        let var = t.concat_cols(&cols);
        Ok((mean, var))
    }

    /// Numeric marginal moments, variances floored at [`VARIANCE_FLOOR`].
    pub fn marginal(&self, x_aug: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>), GpError> {
        let p = self.input_dim();
        if x_aug.ncols() != p {
            return Err(GpError::DimensionMismatch { expected: p, got: x_aug.ncols() });
        }
        let xs = &x_aug * &self.inv_ls;
        let mut t = Tape::new();
        let xv = t.constant(xs);
        let zv = t.constant(self.z_scaled.clone());
        let lsf = t.constant(self.log_sf2.clone());
        let k = scaled_kernel_tape(&mut t, lsf, xv, zv);
        let kxz = t.value(k);
        let mean = kxz.dot(&self.c);
        let sf2 = self.log_sf2[[0, 0]].exp();
        let mut var = Array2::zeros((x_aug.nrows(), self.m.len()));
        for (d, md) in self.m.iter().enumerate() {
            let km = kxz.dot(md);
            let q = (&km * kxz).sum_axis(Axis(1));
            var.column_mut(d)
                .assign(&q.mapv(|v| (v + sf2).max(VARIANCE_FLOOR)));
        }
        Ok((mean, var))
    }
}

impl PredictCache {
    /// Precomputes the per-task expected log-likelihood as a function of a
    /// latent input occupying the last `latent_dim` input columns.
    ///
    /// The RBF kernel factorizes over the split input, `k([x,h],[z_x,z_h]) =
    /// k_x(x,z_x) k_h(h,z_h)`, so for frozen global parameters the summed
    /// expected log-likelihood of a task depends on its points only through
    /// L×L and L-vector statistics.
    pub fn task_factors(
        &self,
        latent_dim: usize,
        tasks: &[(ArrayView2<f64>, ArrayView2<f64>)],
    ) -> Result<TaskFactors, GpError> {
        let p = self.input_dim();
        let dx = p.checked_sub(latent_dim).ok_or(GpError::DimensionMismatch {
            expected: p,
            got: latent_dim,
        })?;
        let noise = self.noise_variances();
        let sf2 = self.log_sf2[[0, 0]].exp();
        let l = self.z_scaled.nrows();
        let dims = self.out_dim();
        let mut shared = Array2::<f64>::zeros((l, l));
        for d in 0..dims {
            let c = self.c.column(d);
            let outer = Array2::from_shape_fn((l, l), |(a, b)| c[a] * c[b]);
            shared = shared + (outer + &self.m[d]) / noise[d];
        }
        let zx = self.z_scaled.slice(ndarray::s![.., ..dx]);
        let inv_ls_x = self.inv_ls.slice(ndarray::s![.., ..dx]);
        let mut quad = Vec::with_capacity(tasks.len());
        let mut lin = Array2::zeros((tasks.len(), l));
        let mut offset = Array1::zeros(tasks.len());
        let log_norm: f64 = noise.iter().map(|s| (2.0 * std::f64::consts::PI * s).ln()).sum();
        for (i, (x, y)) in tasks.iter().enumerate() {
            if x.ncols() != dx {
                return Err(GpError::DimensionMismatch { expected: dx, got: x.ncols() });
            }
            if y.ncols() != dims || y.nrows() != x.nrows() {
                return Err(GpError::DimensionMismatch { expected: dims, got: y.ncols() });
            }
            let xs = x * &inv_ls_x;
            let mut kx = Array2::zeros((x.nrows(), l));
            for j in 0..x.nrows() {
                for k in 0..l {
                    let d2: f64 = xs
                        .row(j)
                        .iter()
                        .zip(zx.row(k).iter())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    kx[[j, k]] = sf2 * (-0.5 * d2).exp();
                }
            }
            let g = kx.t().dot(&kx);
            quad.push(g * &shared);
            let kty = kx.t().dot(y);
            let mut c0 = 0.0;
            for d in 0..dims {
                let row = &kty.column(d) * &self.c.column(d) / noise[d];
                let mut li = lin.row_mut(i);
                li += &row;
                c0 += (y.column(d).mapv(|v| v * v).sum() + x.nrows() as f64 * sf2) / noise[d];
            }
            offset[i] = -0.5 * x.nrows() as f64 * log_norm - 0.5 * c0;
        }
        Ok(TaskFactors {
            zh_scaled: self.z_scaled.slice(ndarray::s![.., dx..]).to_owned(),
            inv_ls_h: self.inv_ls.slice(ndarray::s![.., dx..]).to_owned(),
            quad: std::rc::Rc::new(quad),
            lin,
            offset,
        })
    }
}

/// Sufficient statistics from [`PredictCache::task_factors`]. For task `i`
/// with latent kernel row `k_h`, the summed expected log-likelihood is
/// `offset_i − ½ k_hᵀ A_i k_h + p_i · k_h`.
#[derive(Clone, Debug)]
pub struct TaskFactors {
    zh_scaled: Array2<f64>,
    inv_ls_h: Array2<f64>,
    quad: std::rc::Rc<Vec<Array2<f64>>>,
    lin: Array2<f64>,
    offset: Array1<f64>,
}

impl TaskFactors {
    pub fn len(&self) -> usize {
        self.offset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offset.is_empty()
    }

    /// Per-task summed expected log-likelihood (N×1) at latents `h` (N×Q).
    pub fn expected_loglik_tape(&self, t: &mut Tape, h: Var) -> Var {
        let inv = t.constant(self.inv_ls_h.clone());
        let hs = t.mul(h, inv);
        let zh = t.constant(self.zh_scaled.clone());
        let d = t.sq_dist(hs, zh);
        let e = t.scale(d, -0.5);
        let kh = t.exp(e);
        let q = t.quad_forms(kh, self.quad.clone());
        let q = t.scale(q, -0.5);
        let lin = t.constant(self.lin.clone());
        let pl = t.mul(kh, lin);
        let pl = t.sum_cols(pl);
        let off = t.constant(self.offset.clone().insert_axis(Axis(1)));
        let s = t.add(q, pl);
        t.add(s, off)
    }
}

/// Inducing inputs from a k-means style summary of `points`: start from a
/// random subset and run a few Lloyd iterations. When there are fewer
/// points than requested, the remainder are jittered copies.
pub fn init_inducing<R: Rng + ?Sized>(points: ArrayView2<f64>, count: usize, rng: &mut R) -> Array2<f64> {
    let (n, p) = points.dim();
    assert!(n > 0 && count > 0);
    let mut centers = Array2::zeros((count, p));
    if n >= count {
        let idx = sample(rng, n, count);
        for (k, i) in idx.iter().enumerate() {
            centers.row_mut(k).assign(&points.row(i));
        }
        let mut assign = vec![0usize; n];
        for _ in 0..10 {
            for i in 0..n {
                let row = points.row(i);
                let mut best = (f64::INFINITY, 0);
                for k in 0..count {
                    let d: f64 = row
                        .iter()
                        .zip(centers.row(k).iter())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    if d < best.0 {
                        best = (d, k);
                    }
                }
                assign[i] = best.1;
            }
            let mut sums = Array2::<f64>::zeros((count, p));
            let mut counts = vec![0usize; count];
            for i in 0..n {
                let mut r = sums.row_mut(assign[i]);
                r += &points.row(i);
                counts[assign[i]] += 1;
            }
            for k in 0..count {
                if counts[k] > 0 {
                    let mean = sums.row(k).mapv(|v| v / counts[k] as f64);
                    centers.row_mut(k).assign(&mean);
                }
            }
        }
    } else {
        for k in 0..count {
            let src = points.row(k % n);
            let mut row = centers.row_mut(k);
            row.assign(&src);
            if k >= n {
                for v in row.iter_mut() {
                    *v += 0.1 * rng.random_range(-1.0..1.0);
                }
            }
        }
    }
    centers
}

/// Exact GP posterior mean and variance at `xs` for data `(x, y)` with a
/// single output column and noise variance `noise`.
pub fn exact_posterior(
    kernel: &RbfKernel,
    noise: f64,
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    xs: ArrayView2<f64>,
) -> Result<(Array1<f64>, Array1<f64>), GpError> {
    let mut k = kernel.gram(x, x)?;
    for i in 0..k.nrows() {
        k[[i, i]] += noise;
    }
    let l = linalg::cholesky(k.view()).ok_or(DiffError::Cholesky { size: k.nrows() })?;
    let ks = kernel.gram(x, xs)?;
    let yc = y.to_owned().insert_axis(Axis(1));
    let alpha = linalg::solve_lower_transpose(l.view(), linalg::solve_lower(l.view(), yc.view()).view());
    let mean = ks.t().dot(&alpha).column(0).to_owned();
    let v = linalg::solve_lower(l.view(), ks.view());
    let var = Array1::from_shape_fn(xs.nrows(), |j| {
        kernel.signal_variance() - v.column(j).mapv(|a| a * a).sum()
    });
    Ok((mean, var))
}

/// Exact log marginal likelihood `log N(y | 0, K + σ² I)`.
pub fn exact_log_marginal(
    kernel: &RbfKernel,
    noise: f64,
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
) -> Result<f64, GpError> {
    let mut k = kernel.gram(x, x)?;
    for i in 0..k.nrows() {
        k[[i, i]] += noise;
    }
    let l = linalg::cholesky(k.view()).ok_or(DiffError::Cholesky { size: k.nrows() })?;
    let yc = y.to_owned().insert_axis(Axis(1));
    let a = linalg::solve_lower(l.view(), yc.view());
    let n = y.len() as f64;
    Ok(-0.5 * a.mapv(|v| v * v).sum()
        - 0.5 * linalg::logdet_from_cholesky(l.view())
        - 0.5 * n * (2.0 * std::f64::consts::PI).ln())
}
