use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::History;
use crate::error::{Error, Result};
use crate::harness::config::Setting;

/// Per-horizon root mean squared error over all anchors and outcome
/// dimensions. Each element of `estimates`/`truths` is one `tau x d_Y` anchor.
pub fn rmse(estimates: &[Array2<f64>], truths: &[Array2<f64>]) -> Result<Vec<f64>> {
    if estimates.is_empty() {
        return Err(Error::InvalidArgument("rmse of an empty set".into()));
    }
    if estimates.len() != truths.len() {
        return Err(Error::Shape(format!("{} estimates for {} truths", estimates.len(), truths.len())));
    }
    let (tau, d_y) = estimates[0].dim();
    let mut sq = vec![0.0; tau];
    for (e, t) in estimates.iter().zip(truths) {
        if e.dim() != (tau, d_y) || t.dim() != (tau, d_y) {
            return Err(Error::Shape(format!("anchor shapes {:?} and {:?}, expected {:?}", e.dim(), t.dim(), (tau, d_y))));
        }
        for i in 0..tau {
            for j in 0..d_y {
                sq[i] += (e[[i, j]] - t[[i, j]]).powi(2);
            }
        }
    }
    let n = (estimates.len() * d_y) as f64;
    Ok(sq.into_iter().map(|s| (s / n).sqrt()).collect())
}

/// Repeat the last observed outcome for every horizon.
pub fn baseline_last_value(history: &History, tau: usize) -> Array2<f64> {
    let last = history.last_outcome();
    Array2::from_shape_fn((tau, last.len()), |(_, j)| last[j])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub rmse: Vec<f64>,
    /// Mean of the per-horizon values.
    pub average: f64,
    pub n_anchors: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub method: String,
    pub per_seed: Vec<SeedMetrics>,
    pub mean: Vec<f64>,
    /// Sample standard deviation across seeds; `None` with a single seed.
    pub std: Option<Vec<f64>>,
    pub mean_average: f64,
    pub std_average: Option<f64>,
}

fn mean_std(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some(var.sqrt()))
}

impl MethodMetrics {
    pub fn from_seeds(method: impl Into<String>, per_seed: Vec<SeedMetrics>) -> Result<Self> {
        let Some(first) = per_seed.first() else {
            return Err(Error::InvalidArgument("method has no runs".into()));
        };
        let tau = first.rmse.len();
        if per_seed.iter().any(|s| s.rmse.len() != tau) {
            return Err(Error::Shape("runs disagree on the number of horizons".into()));
        }
        let per_h: Vec<(f64, Option<f64>)> = (0..tau)
            .map(|i| mean_std(&per_seed.iter().map(|s| s.rmse[i]).collect::<Vec<_>>()))
            .collect();
        let (mean_average, std_average) = mean_std(&per_seed.iter().map(|s| s.average).collect::<Vec<_>>());
        Ok(MethodMetrics {
            method: method.into(),
            mean: per_h.iter().map(|p| p.0).collect(),
            std: per_h.iter().map(|p| p.1).collect(),
            mean_average,
            std_average,
            per_seed,
        })
    }

    pub fn seed(&self, seed: u64) -> Option<&SeedMetrics> {
        self.per_seed.iter().find(|s| s.seed == seed)
    }
}

impl SeedMetrics {
    pub fn new(seed: u64, rmse: Vec<f64>, n_anchors: usize) -> Self {
        let average = rmse.iter().sum::<f64>() / rmse.len().max(1) as f64;
        SeedMetrics {
            seed,
            rmse,
            average,
            n_anchors,
        }
    }
}

/// Training-side facts for one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub pretrain_best_epoch: Option<usize>,
    pub pretrain_best_val_loss: Option<f64>,
    /// `(variant, best epoch, best validation metric)` for every fitted model.
    pub finetune: Vec<(String, usize, f64)>,
    /// Reads of the evaluation split before evaluation started.
    pub eval_split_reads_before_eval: usize,
    pub wall_clock_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub setting: Setting,
    pub tau: usize,
    pub seeds: Vec<u64>,
    pub methods: Vec<MethodMetrics>,
    pub runs: Vec<RunRecord>,
    pub wall_clock_secs: f64,
    pub config_hash: String,
    pub provenance: String,
}

impl MetricsReport {
    pub fn method(&self, name: &str) -> Option<&MethodMetrics> {
        self.methods.iter().find(|m| m.method == name)
    }

    /// The report with every wall-clock field zeroed, for comparing two runs.
    pub fn without_timings(&self) -> MetricsReport {
        let mut r = self.clone();
        r.wall_clock_secs = 0.0;
        r.runs.iter_mut().for_each(|run| run.wall_clock_secs = 0.0);
        r
    }

    pub fn validate(&self) -> Result<()> {
        for m in &self.methods {
            if m.mean.len() != self.tau || m.per_seed.iter().any(|s| s.rmse.len() != self.tau) {
                return Err(Error::Shape(format!("{}: horizons 1..={} not all present", m.method, self.tau)));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identical_inputs_give_zero() {
        let a = vec![array![[1.0], [2.0]], array![[3.0], [4.0]]];
        assert_eq!(rmse(&a, &a).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn two_anchor_example() {
        let est = vec![array![[3.0]], array![[4.0]]];
        let truth = vec![array![[0.0]], array![[0.0]]];
        let r = rmse(&est, &truth).unwrap();
        assert!((r[0] - 12.5f64.sqrt()).abs() < 1e-15);
        assert!((r[0] - 3.5355).abs() < 1e-4);
    }

    #[test]
    fn order_does_not_matter() {
        let est = vec![array![[3.0], [1.0]], array![[4.0], [-2.0]], array![[0.5], [0.0]]];
        let truth = vec![array![[0.0], [0.0]], array![[1.0], [1.0]], array![[2.0], [2.0]]];
        let a = rmse(&est, &truth).unwrap();
        let b = rmse(&[est[2].clone(), est[0].clone(), est[1].clone()], &[truth[2].clone(), truth[0].clone(), truth[1].clone()]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_and_misaligned_inputs_fail() {
        assert!(rmse(&[], &[]).is_err());
        assert!(rmse(&[array![[1.0]]], &[]).is_err());
    }

    fn history(outcomes: &[f64], treatments: &[[f64; 2]]) -> History {
        let t = outcomes.len();
        let mut dynamic = Array2::zeros((t, 4));
        for i in 0..t {
            dynamic[[i, 1]] = treatments[i][0];
            dynamic[[i, 2]] = treatments[i][1];
            dynamic[[i, 3]] = outcomes[i];
        }
        History {
            dynamic,
            statics: vec![0.0],
            d_x: 1,
            d_a: 2,
            d_y: 1,
        }
    }

    #[test]
    fn last_value_repeats_final_outcome() {
        let h = history(&[1.0, 7.2], &[[0.0, 0.0], [1.0, 0.0]]);
        assert_eq!(baseline_last_value(&h, 3), array![[7.2], [7.2], [7.2]]);
        let other = history(&[1.0, 7.2], &[[1.0, 1.0], [0.0, 1.0]]);
        assert_eq!(baseline_last_value(&other, 3), baseline_last_value(&h, 3));
    }

    #[test]
    fn last_value_is_exact_on_constant_volumes() {
        let h = history(&[5.0; 4], &[[0.0, 0.0]; 4]);
        let est: Vec<_> = (0..3).map(|_| baseline_last_value(&h, 2)).collect();
        let truth: Vec<_> = (0..3).map(|_| array![[5.0], [5.0]]).collect();
        assert_eq!(rmse(&est, &truth).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn std_needs_two_seeds() {
        let one = MethodMetrics::from_seeds("m", vec![SeedMetrics::new(0, vec![1.0, 3.0], 5)]).unwrap();
        assert_eq!(one.std, None);
        assert_eq!(one.mean_average, 2.0);
        let two = MethodMetrics::from_seeds("m", vec![SeedMetrics::new(0, vec![1.0, 3.0], 5), SeedMetrics::new(1, vec![3.0, 3.0], 5)]).unwrap();
        assert_eq!(two.mean, vec![2.0, 3.0]);
        assert_eq!(two.std, Some(vec![2f64.sqrt(), 0.0]));
    }
}
