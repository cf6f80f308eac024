use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::run::{RoundRecord, TrialResult};
use super::HarnessError;
use crate::taskspace::TaskEmbedding;

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(";")
}

fn split(s: &str) -> Result<Vec<f64>, HarnessError> {
    if s.is_empty() {
        return Ok(vec![]);
    }
    s.split(';')
        .map(|p| p.parse().map_err(|_| HarnessError::Parse(format!("bad number `{p}`"))))
        .collect()
}

/// Flat CSV row of a RoundRecord; vectors are `;`-separated.
#[derive(Serialize, Deserialize)]
struct RecordRow {
    strategy: String,
    trial: usize,
    seed: u64,
    round: usize,
    tasks: usize,
    nll: f64,
    rmse: f64,
    wall_time: f64,
    utility: Option<f64>,
    latent: String,
    descriptor: String,
    params: String,
}

pub fn write_records<W: Write>(out: W, records: &[RoundRecord]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(RecordRow {
            strategy: r.strategy.clone(),
            trial: r.trial,
            seed: r.seed,
            round: r.round,
            tasks: r.tasks,
            nll: r.nll,
            rmse: r.rmse,
            wall_time: r.wall_time,
            utility: r.utility,
            latent: join(&r.latent),
            descriptor: join(&r.descriptor),
            params: join(&r.params),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(input: R) -> Result<Vec<RoundRecord>, HarnessError> {
    let mut rd = csv::Reader::from_reader(input);
    rd.deserialize::<RecordRow>()
        .map(|row| {
            let r = row?;
            Ok(RoundRecord {
                strategy: r.strategy,
                trial: r.trial,
                seed: r.seed,
                round: r.round,
                tasks: r.tasks,
                nll: r.nll,
                rmse: r.rmse,
                wall_time: r.wall_time,
                utility: r.utility,
                latent: split(&r.latent)?,
                descriptor: split(&r.descriptor)?,
                params: split(&r.params)?,
            })
        })
        .collect()
}

/// Across-trial summary of one strategy at one round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub strategy: String,
    pub round: usize,
    pub n: usize,
    pub nll_mean: f64,
    pub nll_se: f64,
    pub rmse_mean: f64,
    pub rmse_se: f64,
}

/// Mean and standard error (sample standard deviation over √n; zero for a
/// single value).
fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Per-strategy, per-round mean and standard error across trials, sorted
/// by strategy then round.
pub fn aggregate(records: &[RoundRecord]) -> Vec<CurvePoint> {
    let mut groups: BTreeMap<(&str, usize), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in records {
        let g = groups.entry((r.strategy.as_str(), r.round)).or_default();
        g.0.push(r.nll);
        g.1.push(r.rmse);
    }
    groups
        .into_iter()
        .map(|((strategy, round), (nll, rmse))| {
            let (nll_mean, nll_se) = mean_se(&nll);
            let (rmse_mean, rmse_se) = mean_se(&rmse);
            CurvePoint {
                strategy: strategy.to_string(),
                round,
                n: nll.len(),
                nll_mean,
                nll_se,
                rmse_mean,
                rmse_se,
            }
        })
        .collect()
}

pub fn write_curves<W: Write>(out: W, curves: &[CurvePoint]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    for c in curves {
        w.serialize(c)?;
    }
    w.flush()?;
    Ok(())
}

/// Acquired tasks only (rounds after the first).
pub fn write_selections<W: Write>(out: W, records: &[RoundRecord]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["strategy", "trial", "round", "utility", "latent", "descriptor", "params"])?;
    for r in records.iter().filter(|r| r.round > 0) {
        w.write_record([
            r.strategy.clone(),
            r.trial.to_string(),
            r.round.to_string(),
            r.utility.map_or(String::new(), |u| format!("{u:?}")),
            join(&r.latent),
            join(&r.descriptor),
            join(&r.params),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_elbo_trace<W: Write>(out: W, trials: &[TrialResult]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["strategy", "trial", "round", "step", "elbo", "kl_h", "kl_u", "lik_dyn", "lik_desc"])?;
    for t in trials {
        for (round, e) in &t.elbo {
            let x = &e.terms;
            w.write_record([
                t.strategy.name().to_string(),
                t.trial.to_string(),
                round.to_string(),
                e.step.to_string(),
                format!("{:?}", x.total),
                format!("{:?}", x.kl_h),
                format!("{:?}", x.kl_u),
                format!("{:?}", x.lik_dyn),
                format!("{:?}", x.lik_desc),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One training-task embedding after one round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentRow {
    pub strategy: String,
    pub trial: usize,
    pub round: usize,
    /// Acquisition order; the initial tasks come first.
    pub task: usize,
    pub mean: String,
    pub std: String,
}

impl LatentRow {
    pub fn embedding(&self) -> Result<TaskEmbedding, HarnessError> {
        let mean = ndarray::Array1::from(split(&self.mean)?);
        let std = ndarray::Array1::from(split(&self.std)?);
        if mean.len() != std.len() {
            return Err(HarnessError::Parse("mean and std differ in length".into()));
        }
        Ok(TaskEmbedding::new(mean, std.mapv(|s| s * s)))
    }
}

pub fn write_latents<W: Write>(out: W, trials: &[TrialResult]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    for t in trials {
        for (round, embs) in t.embeddings.iter().enumerate() {
            for (task, e) in embs.iter().enumerate() {
                w.serialize(LatentRow {
                    strategy: t.strategy.name().to_string(),
                    trial: t.trial,
                    round,
                    task,
                    mean: join(e.mean.as_slice().expect("contiguous")),
                    std: join(e.std().as_slice().expect("contiguous")),
                })?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_latents<R: Read>(input: R) -> Result<Vec<LatentRow>, HarnessError> {
    let mut rd = csv::Reader::from_reader(input);
    Ok(rd.deserialize().collect::<Result<Vec<LatentRow>, _>>()?)
}
