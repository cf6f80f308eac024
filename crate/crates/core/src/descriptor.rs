//! Descriptor likelihood heads `p(ψ | h)`: a small MLP decoder with learned
//! Gaussian noise for low-dimensional descriptors, and a fully connected
//! VAE for image descriptors.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::diffcore::{AdamConfig, AdamState, Bindings, DiffError, Parameterized, Tape, Var};
use crate::taskspace::{kl_tape, sample_tape, standard_normal, TaskEmbedding};

const LOG_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DescriptorError {
    #[error("expected {expected} values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Diff(#[from] DiffError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Tanh,
    Softplus,
    LeakyRelu(f64),
}

/// Fully connected network; the activation is applied after every layer
/// except the last.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    prefix: String,
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array2<f64>>,
    pub activation: Activation,
}

impl Parameterized for Mlp {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Array2<f64>)) {
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            f(&format!("{}.w{k}", self.prefix), w);
            f(&format!("{}.b{k}", self.prefix), b);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Array2<f64>)) {
        for (k, (w, b)) in self.weights.iter_mut().zip(self.biases.iter_mut()).enumerate() {
            f(&format!("{}.w{k}", self.prefix), w);
            f(&format!("{}.b{k}", self.prefix), b);
        }
    }
}

impl Mlp {
    /// Weights drawn from `N(0, 1/fan_in)`, zero biases.
    pub fn new<R: Rng + ?Sized>(prefix: &str, sizes: &[usize], activation: Activation, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in sizes.windows(2) {
            let sd = 1.0 / (w[0] as f64).sqrt();
            weights.push(Array2::from_shape_simple_fn((w[0], w[1]), || {
                sd * rng.sample::<f64, _>(StandardNormal)
            }));
            biases.push(Array2::zeros((1, w[1])));
        }
        Mlp {
            prefix: prefix.to_string(),
            weights,
            biases,
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.last().unwrap().ncols()
    }

    pub fn zero_last_layer(&mut self) {
        self.weights.last_mut().unwrap().fill(0.0);
        self.biases.last_mut().unwrap().fill(0.0);
    }

    pub fn forward_tape(&self, t: &mut Tape, b: &Bindings, x: Var) -> Result<Var, DiffError> {
        let n = self.weights.len();
        let mut a = x;
        for k in 0..n {
            let w = b.get(&format!("{}.w{k}", self.prefix))?;
            let bias = b.get(&format!("{}.b{k}", self.prefix))?;
            a = t.matmul(a, w);
            a = t.add(a, bias);
            if k + 1 < n {
                a = match self.activation {
                    Activation::Tanh => t.tanh(a),
                    Activation::Softplus => t.softplus(a),
                    Activation::LeakyRelu(s) => t.leaky_relu(a, s),
                };
            }
        }
        Ok(a)
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let n = self.weights.len();
        let mut a = x.to_owned();
        for k in 0..n {
            a = a.dot(&self.weights[k]) + &self.biases[k];
            if k + 1 < n {
                match self.activation {
                    Activation::Tanh => a.mapv_inplace(f64::tanh),
                    Activation::Softplus => a.mapv_inplace(crate::diffcore::softplus),
                    Activation::LeakyRelu(s) => a.mapv_inplace(|v| if v > 0.0 { v } else { s * v }),
                }
            }
        }
        a
    }
}

/// Row-wise diagonal Gaussian log-density with a 1×D (or shared 1×1)
/// log-variance, as an N×1 column.
pub fn gaussian_loglik_rows(t: &mut Tape, x: Var, mean: Var, log_var: Var) -> Var {
    let r = t.sub(x, mean);
    let r2 = t.square(r);
    let var = t.exp(log_var);
    let q = t.div(r2, var);
    let lv = t.add_const(log_var, LOG_2PI);
    let per = t.add(q, lv);
    let per = t.sum_cols(per);
    t.scale(per, -0.5)
}

/// MLP decoder `h ↦ ψ` with learned homoscedastic Gaussian noise.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorDecoder {
    pub net: Mlp,
    pub log_noise: Array2<f64>,
}

impl Parameterized for DescriptorDecoder {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Array2<f64>)) {
        self.net.visit_params(f);
        f("dec.log_noise", &self.log_noise);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Array2<f64>)) {
        self.net.visit_params_mut(f);
        f("dec.log_noise", &mut self.log_noise);
    }
}

impl DescriptorDecoder {
    pub const DEFAULT_HIDDEN: usize = 64;

    pub fn new<R: Rng + ?Sized>(latent_dim: usize, descriptor_dim: usize, hidden: usize, rng: &mut R) -> Self {
        DescriptorDecoder {
            net: Mlp::new("dec", &[latent_dim, hidden, descriptor_dim], Activation::Softplus, rng),
            log_noise: Array2::from_elem((1, descriptor_dim), 0.1f64.ln()),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.net.in_dim()
    }

    pub fn descriptor_dim(&self) -> usize {
        self.net.out_dim()
    }

    pub fn noise_variances(&self) -> Array1<f64> {
        self.log_noise.row(0).mapv(f64::exp)
    }

    /// Decoded descriptor means for the rows of `h`.
    pub fn predict(&self, h: ArrayView2<f64>) -> Array2<f64> {
        self.net.forward(h)
    }

    pub fn loglik_tape(&self, t: &mut Tape, b: &Bindings, psi: Var, h: Var) -> Result<Var, DiffError> {
        let mean = self.net.forward_tape(t, b, h)?;
        let ln = b.get("dec.log_noise")?;
        Ok(gaussian_loglik_rows(t, psi, mean, ln))
    }

    /// `log N(ψ | decoder(h), diag(noise))`.
    pub fn descriptor_loglik(&self, psi: ArrayView1<f64>, h: ArrayView1<f64>) -> Result<f64, DescriptorError> {
        if psi.len() != self.descriptor_dim() {
            return Err(DescriptorError::DimensionMismatch {
                expected: self.descriptor_dim(),
                got: psi.len(),
            });
        }
        if h.len() != self.latent_dim() {
            return Err(DescriptorError::DimensionMismatch {
                expected: self.latent_dim(),
                got: h.len(),
            });
        }
        let mut t = Tape::new();
        let b = t.bind(self);
        let p = t.constant(psi.to_owned().insert_axis(ndarray::Axis(0)));
        let hv = t.constant(h.to_owned().insert_axis(ndarray::Axis(0)));
        let ll = self.loglik_tape(&mut t, &b, p, hv)?;
        Ok(t.value(ll)[[0, 0]])
    }
}

/// VAE over flattened grayscale images: the encoder gives `q(h | ψ)`, the
/// decoder a sigmoid mean image with a shared learned pixel noise.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelVae {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub log_noise: Array2<f64>,
    latent_dim: usize,
}

impl Parameterized for PixelVae {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Array2<f64>)) {
        self.encoder.visit_params(f);
        self.decoder.visit_params(f);
        f("pix.log_noise", &self.log_noise);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Array2<f64>)) {
        self.encoder.visit_params_mut(f);
        self.decoder.visit_params_mut(f);
        f("pix.log_noise", &mut self.log_noise);
    }
}

impl PixelVae {
    pub const HIDDEN: usize = 200;
    pub const LEAK: f64 = 0.01;

    /// Freshly initialized VAE. The encoder's last layer starts at zero so
    /// every image initially maps to the prior `N(0, I)`.
    pub fn new<R: Rng + ?Sized>(image_len: usize, latent_dim: usize, rng: &mut R) -> Self {
        Self::with_hidden(image_len, latent_dim, Self::HIDDEN, rng)
    }

    pub fn with_hidden<R: Rng + ?Sized>(image_len: usize, latent_dim: usize, h: usize, rng: &mut R) -> Self {
        let act = Activation::LeakyRelu(Self::LEAK);
        let mut encoder = Mlp::new("enc", &[image_len, h, h, 2 * latent_dim], act, rng);
        encoder.zero_last_layer();
        let decoder = Mlp::new("pix", &[latent_dim, h, h, image_len], act, rng);
        PixelVae {
            encoder,
            decoder,
            log_noise: Array2::from_elem((1, 1), 0.05f64.ln()),
            latent_dim,
        }
    }

    pub fn image_len(&self) -> usize {
        self.encoder.in_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    fn check(&self, images: ArrayView2<f64>) -> Result<(), DescriptorError> {
        if images.ncols() != self.image_len() {
            return Err(DescriptorError::DimensionMismatch {
                expected: self.image_len(),
                got: images.ncols(),
            });
        }
        Ok(())
    }

    /// Posterior means and log-variances (each N×Q) on the tape.
    pub fn encode_tape(&self, t: &mut Tape, b: &Bindings, images: Var) -> Result<(Var, Var), DiffError> {
        let out = self.encoder.forward_tape(t, b, images)?;
        let q = self.latent_dim;
        let n = t.shape(out).0;
        // split columns through a transpose and row gathers
        let ot = t.transpose(out);
        let mean_rows: Vec<usize> = (0..q).collect();
        let var_rows: Vec<usize> = (q..2 * q).collect();
        let m = t.gather_rows(ot, &mean_rows);
        let lv = t.gather_rows(ot, &var_rows);
        let m = t.transpose(m);
        let lv = t.transpose(lv);
        debug_assert_eq!(t.shape(m), (n, q));
        Ok((m, lv))
    }

    /// Per-image reconstruction log-likelihood `log p(ψ | h)` (N×1).
    pub fn loglik_tape(&self, t: &mut Tape, b: &Bindings, images: Var, h: Var) -> Result<Var, DiffError> {
        let logits = self.decoder.forward_tape(t, b, h)?;
        let mean = t.sigmoid(logits);
        let ln = b.get("pix.log_noise")?;
        Ok(gaussian_loglik_rows(t, images, mean, ln))
    }

    pub fn encode(&self, images: ArrayView2<f64>) -> Result<Vec<TaskEmbedding>, DescriptorError> {
        self.check(images)?;
        let out = self.encoder.forward(images);
        let q = self.latent_dim;
        Ok(out
            .rows()
            .into_iter()
            .map(|r| TaskEmbedding {
                mean: r.slice(ndarray::s![..q]).to_owned(),
                log_var: r.slice(ndarray::s![q..]).to_owned(),
            })
            .collect())
    }

    pub fn encode_image(&self, image: &[f64]) -> Result<TaskEmbedding, DescriptorError> {
        let view = ArrayView2::from_shape((1, image.len()), image).expect("row");
        Ok(self.encode(view)?.pop().expect("one image"))
    }

    /// Records the VAE objective: the ELBO of `train` images with one
    /// reparameterized sample each (`eps`, N×Q) plus the reconstruction
    /// log-likelihood of `candidates` at their encoder means, the latter
    /// multiplied by `candidate_weight`.
    pub fn objective_tape(
        &self,
        t: &mut Tape,
        b: &Bindings,
        train: Option<(Var, Array2<f64>)>,
        candidates: Var,
        candidate_weight: f64,
    ) -> Result<Var, DiffError> {
        let (cm, _) = self.encode_tape(t, b, candidates)?;
        let rec = self.loglik_tape(t, b, candidates, cm)?;
        let rec = t.sum(rec);
        let mut total = t.scale(rec, candidate_weight);
        if let Some((imgs, eps)) = train {
            let (m, lv) = self.encode_tape(t, b, imgs)?;
            let h = sample_tape(t, m, lv, eps);
            let ll = self.loglik_tape(t, b, imgs, h)?;
            let kl = kl_tape(t, m, lv);
            let e = t.sub(ll, kl);
            let e = t.sum(e);
            total = t.add(total, e);
        }
        Ok(total)
    }

    /// Numeric value of [`PixelVae::objective_tape`] with all candidates.
    pub fn vae_objective(
        &self,
        train: ArrayView2<f64>,
        candidates: ArrayView2<f64>,
        eps: ArrayView2<f64>,
    ) -> Result<f64, DescriptorError> {
        self.check(candidates)?;
        self.check(train)?;
        let mut t = Tape::new();
        let b = t.bind(self);
        let c = t.constant(candidates.to_owned());
        let tr = if train.nrows() > 0 {
            Some((t.constant(train.to_owned()), eps.to_owned()))
        } else {
            None
        };
        let obj = self.objective_tape(&mut t, &b, tr, c, 1.0)?;
        Ok(t.scalar(obj))
    }

    /// Trains on the VAE objective alone with Adam, returning the objective
    /// trace.
    pub fn train<R: Rng + ?Sized>(
        &mut self,
        train: ArrayView2<f64>,
        candidates: ArrayView2<f64>,
        steps: usize,
        adam: AdamConfig,
        rng: &mut R,
    ) -> Result<Vec<f64>, DescriptorError> {
        self.check(candidates)?;
        self.check(train)?;
        let mut state = AdamState::new(adam);
        let mut trace = Vec::with_capacity(steps);
        for _ in 0..steps {
            let mut t = Tape::new();
            let b = t.bind(self);
            let c = t.constant(candidates.to_owned());
            let tr = if train.nrows() > 0 {
                let eps = standard_normal(rng, train.nrows(), self.latent_dim);
                Some((t.constant(train.to_owned()), eps))
            } else {
                None
            };
            let obj = self.objective_tape(&mut t, &b, tr, c, 1.0)?;
            let loss = t.neg(obj);
            trace.push(-t.evaluate(loss)?);
            let grads = b.collect(&t.gradient(loss)?);
            state.update(self, &grads)?;
        }
        Ok(trace)
    }
}

#[cfg(test)]
mod tests;
