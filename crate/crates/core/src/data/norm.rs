use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::dataset::{DomainDataset, Trajectory};
use crate::data::history::History;
use crate::error::{Error, Result};

/// Floor applied to fitted standard deviations.
pub const STD_FLOOR: f64 = 1e-6;
/// Outcomes are clamped here before a log transform.
pub const LOG_FLOOR: f64 = 1e-12;

/// Elementwise map applied to outcomes before z-scoring.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeTransform {
    #[default]
    Identity,
    /// Natural log; for strictly positive outcomes such as tumor volume.
    Log,
}

impl OutcomeTransform {
    fn forward(self, y: f64) -> f64 {
        match self {
            OutcomeTransform::Identity => y,
            OutcomeTransform::Log => y.max(LOG_FLOOR).ln(),
        }
    }

    fn inverse(self, z: f64) -> f64 {
        match self {
            OutcomeTransform::Identity => z,
            OutcomeTransform::Log => z.exp(),
        }
    }
}

/// Per-feature z-scoring statistics for covariates and outcomes.
///
/// Treatments and statics are never rescaled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub covariate_mean: Vec<f64>,
    pub covariate_std: Vec<f64>,
    /// Mean and std of the transformed outcomes.
    pub outcome_mean: Vec<f64>,
    pub outcome_std: Vec<f64>,
    #[serde(default)]
    pub outcome_transform: OutcomeTransform,
}

fn column_stats(blocks: &[&Array2<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = blocks[0].ncols();
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut mean = vec![0.0; d];
    for b in blocks {
        for (m, col) in mean.iter_mut().zip(b.axis_iter(Axis(1))) {
            *m += col.sum();
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; d];
    for b in blocks {
        for ((v, col), m) in var.iter_mut().zip(b.axis_iter(Axis(1))).zip(&mean) {
            *v += col.iter().map(|x| (x - m).powi(2)).sum::<f64>();
        }
    }
    let std = var.iter().map(|v| (v / n as f64).sqrt().max(STD_FLOOR)).collect();
    (mean, std)
}

impl NormStats {
    /// Fit plain z-scoring on a (source train) split.
    pub fn fit(trajectories: &[Trajectory]) -> Result<NormStats> {
        Self::fit_with(trajectories, OutcomeTransform::Identity)
    }

    pub fn fit_with(trajectories: &[Trajectory], transform: OutcomeTransform) -> Result<NormStats> {
        let nonempty: Vec<&Trajectory> = trajectories.iter().filter(|t| !t.is_empty()).collect();
        if nonempty.is_empty() {
            return Err(Error::InvalidArgument("cannot fit normalization on an empty split".into()));
        }
        if transform == OutcomeTransform::Log && nonempty.iter().any(|t| t.outcomes.iter().any(|&y| !(y > 0.0))) {
            return Err(Error::Domain("log outcome transform needs strictly positive outcomes".into()));
        }
        let cov: Vec<&Array2<f64>> = nonempty.iter().map(|t| &t.covariates).collect();
        let transformed: Vec<Array2<f64>> = nonempty.iter().map(|t| t.outcomes.mapv(|y| transform.forward(y))).collect();
        let out: Vec<&Array2<f64>> = transformed.iter().collect();
        let (covariate_mean, covariate_std) = column_stats(&cov);
        let (outcome_mean, outcome_std) = column_stats(&out);
        Ok(NormStats {
            covariate_mean,
            covariate_std,
            outcome_mean,
            outcome_std,
            outcome_transform: transform,
        })
    }

    pub fn apply(&self, traj: &Trajectory) -> Trajectory {
        let mut out = traj.clone();
        zscore(&mut out.covariates, &self.covariate_mean, &self.covariate_std);
        out.outcomes.mapv_inplace(|y| self.outcome_transform.forward(y));
        zscore(&mut out.outcomes, &self.outcome_mean, &self.outcome_std);
        out
    }

    pub fn invert(&self, traj: &Trajectory) -> Trajectory {
        let mut out = traj.clone();
        unscale(&mut out.covariates, &self.covariate_mean, &self.covariate_std);
        self.denormalize_outcomes(&mut out.outcomes);
        out
    }

    /// Normalize the covariate and outcome columns of a history.
    pub fn apply_history(&self, h: &History) -> History {
        let mut out = h.clone();
        let (dx, da) = (h.d_x, h.d_a);
        for mut row in out.dynamic.rows_mut() {
            for j in 0..dx {
                row[j] = (row[j] - self.covariate_mean[j]) / self.covariate_std[j];
            }
            for j in 0..h.d_y {
                row[dx + da + j] = self.normalize_outcome(j, row[dx + da + j]);
            }
        }
        out
    }

    pub fn apply_dataset(&self, ds: &DomainDataset) -> DomainDataset {
        let mut normalized = ds.map_trajectories(|t| self.apply(t));
        normalized.meta.norm = Some(self.clone());
        normalized
    }

    pub fn normalize_outcome(&self, dim: usize, y: f64) -> f64 {
        (self.outcome_transform.forward(y) - self.outcome_mean[dim]) / self.outcome_std[dim]
    }

    pub fn denormalize_outcome(&self, dim: usize, z: f64) -> f64 {
        self.outcome_transform.inverse(z * self.outcome_std[dim] + self.outcome_mean[dim])
    }

    /// Denormalize a `n x d_Y` block of outcomes in place.
    pub fn denormalize_outcomes(&self, values: &mut Array2<f64>) {
        unscale(values, &self.outcome_mean, &self.outcome_std);
        values.mapv_inplace(|z| self.outcome_transform.inverse(z));
    }
}

fn zscore(a: &mut Array2<f64>, mean: &[f64], std: &[f64]) {
    for mut row in a.rows_mut() {
        for ((x, m), s) in row.iter_mut().zip(mean).zip(std) {
            *x = (*x - m) / s;
        }
    }
}

fn unscale(a: &mut Array2<f64>, mean: &[f64], std: &[f64]) {
    for mut row in a.rows_mut() {
        for ((x, m), s) in row.iter_mut().zip(mean).zip(std) {
            *x = *x * s + m;
        }
    }
}
