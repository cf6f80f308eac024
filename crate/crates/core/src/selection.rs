//! Choosing the next task: candidate generation in latent space, the
//! self-information utility, descriptor filtering, and the uniform and
//! Latin hypercube baselines.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::taskspace::TaskEmbedding;

/// Slack added below the smallest and above the largest embedding mean.
pub const SLACK_MIN: f64 = -10.0;
pub const SLACK_MAX: f64 = 10.0;
pub const DEFAULT_GRID_POINTS: usize = 100;
/// Largest latent dimension for which a full grid is built.
pub const MAX_GRID_DIM: usize = 3;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Error, PartialEq)]
pub enum SelectionError {
    #[error("no training embeddings")]
    NoEmbeddings,
    #[error("no candidates")]
    NoCandidates,
    #[error("latent grid over {0} dimensions is too large (at most {MAX_GRID_DIM})")]
    GridTooLarge(usize),
    #[error("bad bounds: {0}")]
    BadBounds(String),
    #[error("candidate source `{0}` is unimplemented")]
    Unimplemented(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Grid,
    /// Index into the discrete descriptor set.
    DiscreteSet(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub latent: Array1<f64>,
    /// Decoded descriptor for grid candidates (after filtering), or the
    /// original descriptor for discrete-set candidates.
    pub descriptor: Option<Array1<f64>>,
    pub utility: f64,
    pub provenance: Provenance,
}

/// Where latent candidates come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CandidateSource {
    #[default]
    Grid,
    Prior,
}

/// Log density of a diagonal Gaussian at `h`.
fn log_density(q: &TaskEmbedding, h: ArrayView1<f64>) -> f64 {
    let mut acc = -0.5 * LN_2PI * q.dim() as f64;
    for ((x, m), lv) in h.iter().zip(q.mean.iter()).zip(q.log_var.iter()) {
        let d = x - m;
        acc -= 0.5 * (lv + d * d * (-lv).exp());
    }
    acc
}

/// Self-information of `h` under the equal-weight mixture of the training
/// posteriors: `−log Σ_i q_i(h) + log N`.
pub fn utility(h: ArrayView1<f64>, embeddings: &[TaskEmbedding]) -> Result<f64, SelectionError> {
    if embeddings.is_empty() {
        return Err(SelectionError::NoEmbeddings);
    }
    let logs: Vec<f64> = embeddings.iter().map(|q| log_density(q, h)).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    Ok(-lse + (embeddings.len() as f64).ln())
}

/// Cartesian grid over per-dimension intervals.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentGrid {
    pub intervals: Vec<(f64, f64)>,
    pub points: usize,
}

impl LatentGrid {
    /// Intervals spanning the embedding means plus the fixed slack.
    pub fn around(embeddings: &[TaskEmbedding], points: usize) -> Result<Self, SelectionError> {
        let first = embeddings.first().ok_or(SelectionError::NoEmbeddings)?;
        let intervals = (0..first.dim())
            .map(|q| {
                let (lo, hi) = embeddings.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| {
                    (lo.min(e.mean[q]), hi.max(e.mean[q]))
                });
                (lo + SLACK_MIN, hi + SLACK_MAX)
            })
            .collect();
        Ok(LatentGrid { intervals, points })
    }

    pub fn dim(&self) -> usize {
        self.intervals.len()
    }

    /// All grid points, one per row, last dimension varying fastest.
    pub fn points(&self) -> Result<Array2<f64>, SelectionError> {
        let q = self.dim();
        if q > MAX_GRID_DIM {
            return Err(SelectionError::GridTooLarge(q));
        }
        let n = self.points;
        let axes: Vec<Vec<f64>> = self
            .intervals
            .iter()
            .map(|&(a, b)| {
                if n == 1 {
                    vec![0.5 * (a + b)]
                } else {
                    (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect()
                }
            })
            .collect();
        let total = n.pow(q as u32);
        let mut out = Array2::zeros((total, q));
        for r in 0..total {
            let mut rem = r;
            for d in (0..q).rev() {
                out[[r, d]] = axes[d][rem % n];
                rem /= n;
            }
        }
        Ok(out)
    }
}

/// Scores every grid point against the training posteriors.
pub fn generate_grid_candidates(
    embeddings: &[TaskEmbedding],
    grid: &LatentGrid,
) -> Result<Vec<Candidate>, SelectionError> {
    if embeddings.is_empty() {
        return Err(SelectionError::NoEmbeddings);
    }
    let pts = grid.points()?;
    pts.rows()
        .into_iter()
        .map(|h| {
            Ok(Candidate {
                utility: utility(h, embeddings)?,
                latent: h.to_owned(),
                descriptor: None,
                provenance: Provenance::Grid,
            })
        })
        .collect()
}

pub fn generate_candidates(
    source: CandidateSource,
    embeddings: &[TaskEmbedding],
    grid: &LatentGrid,
) -> Result<Vec<Candidate>, SelectionError> {
    match source {
        CandidateSource::Grid => generate_grid_candidates(embeddings, grid),
        CandidateSource::Prior => Err(SelectionError::Unimplemented("prior")),
    }
}

/// Candidates from a discrete descriptor set, placed at their encoded
/// posterior means and keeping the descriptors verbatim.
pub fn discrete_candidates(
    embeddings: &[TaskEmbedding],
    encoded: &[TaskEmbedding],
    descriptors: &[Array1<f64>],
) -> Result<Vec<Candidate>, SelectionError> {
    assert_eq!(encoded.len(), descriptors.len());
    encoded
        .iter()
        .zip(descriptors)
        .enumerate()
        .map(|(i, (e, d))| {
            Ok(Candidate {
                utility: utility(e.mean.view(), embeddings)?,
                latent: e.mean.clone(),
                descriptor: Some(d.clone()),
                provenance: Provenance::DiscreteSet(i),
            })
        })
        .collect()
}

fn check_bounds(bounds: &[(f64, f64)]) -> Result<(), SelectionError> {
    for (k, &(lo, hi)) in bounds.iter().enumerate() {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(SelectionError::BadBounds(format!("dimension {k}: [{lo}, {hi}]")));
        }
    }
    Ok(())
}

/// Squared violation of `bounds`, each dimension measured in units of its
/// width where the width is finite and positive.
fn violation(d: ArrayView1<f64>, bounds: &[(f64, f64)]) -> f64 {
    d.iter()
        .zip(bounds)
        .map(|(&v, &(lo, hi))| {
            let w = hi - lo;
            let scale = if w.is_finite() && w > 0.0 { w } else { 1.0 };
            let out = if v < lo {
                lo - v
            } else if v > hi {
                v - hi
            } else {
                0.0
            };
            (out / scale).powi(2)
        })
        .sum()
}

/// Keeps candidates whose decoded descriptor lies inside `bounds`,
/// attaching the decoded descriptor. `decode` maps latent rows to
/// descriptor rows. When nothing survives, the candidate closest to the
/// bounds is kept and a warning logged.
pub fn filter_candidates<F>(
    candidates: Vec<Candidate>,
    decode: F,
    bounds: &[(f64, f64)],
) -> Result<Vec<Candidate>, SelectionError>
where
    F: Fn(ArrayView2<f64>) -> Array2<f64>,
{
    check_bounds(bounds)?;
    if candidates.is_empty() {
        return Err(SelectionError::NoCandidates);
    }
    let q = candidates[0].latent.len();
    let mut h = Array2::zeros((candidates.len(), q));
    for (i, c) in candidates.iter().enumerate() {
        h.row_mut(i).assign(&c.latent);
    }
    let decoded = decode(h.view());
    assert_eq!(decoded.ncols(), bounds.len(), "descriptor dimension");
    let viol: Vec<f64> = decoded.rows().into_iter().map(|d| violation(d, bounds)).collect();
    let mut closest = 0;
    for (i, v) in viol.iter().enumerate() {
        if *v < viol[closest] {
            closest = i;
        }
    }
    let mut all: Vec<Candidate> = candidates
        .into_iter()
        .zip(decoded.rows())
        .map(|(mut c, d)| {
            c.descriptor = Some(d.to_owned());
            c
        })
        .collect();
    if viol[closest] > 0.0 {
        log::warn!("no candidate decodes inside the descriptor bounds; using the closest one");
        return Ok(vec![all.swap_remove(closest)]);
    }
    Ok(all.into_iter().zip(&viol).filter(|(_, v)| **v == 0.0).map(|(c, _)| c).collect())
}

/// Highest-utility candidate; ties go to the lowest index.
pub fn select_next(candidates: &[Candidate]) -> Result<&Candidate, SelectionError> {
    let mut best: Option<&Candidate> = None;
    for c in candidates {
        if best.is_none_or(|b| c.utility > b.utility) {
            best = Some(c);
        }
    }
    best.ok_or(SelectionError::NoCandidates)
}

/// One independent uniform draw per dimension.
pub fn uniform_sample<R: Rng + ?Sized>(rng: &mut R, bounds: &[(f64, f64)]) -> Result<Array1<f64>, SelectionError> {
    check_bounds(bounds)?;
    bounds
        .iter()
        .map(|&(lo, hi)| {
            if !(lo.is_finite() && hi.is_finite()) {
                return Err(SelectionError::BadBounds("uniform sampling needs finite bounds".into()));
            }
            Ok(if lo == hi { lo } else { rng.random_range(lo..hi) })
        })
        .collect()
}

/// Latin hypercube design: in every dimension each of the `n` equal
/// strata holds exactly one point.
pub fn lhs_sample<R: Rng + ?Sized>(
    rng: &mut R,
    bounds: &[(f64, f64)],
    n: usize,
) -> Result<Vec<Array1<f64>>, SelectionError> {
    check_bounds(bounds)?;
    if bounds.iter().any(|(lo, hi)| !(lo.is_finite() && hi.is_finite())) {
        return Err(SelectionError::BadBounds("LHS needs finite bounds".into()));
    }
    let mut out = vec![Array1::zeros(bounds.len()); n];
    for (d, &(lo, hi)) in bounds.iter().enumerate() {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        for (i, s) in strata.into_iter().enumerate() {
            let u: f64 = rng.random();
            out[i][d] = lo + (hi - lo) * (s as f64 + u) / n as f64;
        }
    }
    Ok(out)
}
