use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Outcome granularity, magnitude bound and preconditioner power.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundCheckConfig {
    pub epsilon: f64,
    pub b: f64,
    pub t_power: u32,
}

impl Default for BoundCheckConfig {
    fn default() -> Self {
        BoundCheckConfig {
            epsilon: 0.5,
            b: 1.0,
            t_power: 3,
        }
    }
}

impl BoundCheckConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 2.0 * self.b) {
            return Err(Error::InvalidArgument(format!(
                "epsilon = {} must lie in (0, 2B) with B = {}",
                self.epsilon, self.b
            )));
        }
        if self.t_power == 0 {
            return Err(Error::InvalidArgument("t_power must be at least 1".into()));
        }
        Ok(())
    }
}

/// A labeled source example `(r(h), y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledRep {
    pub rep: DVector<f64>,
    pub outcome: DVector<f64>,
}

/// Fitted preconditioned feature-averaging regressor.
#[derive(Clone, Debug, PartialEq)]
pub struct PfaModel {
    /// `Sigma = E_{P_H}[r r^T]`
    pub sigma: DMatrix<f64>,
    /// `b_i = E_{P_S}[1[||y - y_i|| <= eps] r(h)]`, one per outcome value.
    pub class_features: Vec<DVector<f64>>,
    pub outcomes: Vec<DVector<f64>>,
}

/// Fit from unlabeled representations with marginal weights `P_H` (rows of
/// `unlabeled`) and an empirical labeled source sample.
///
/// `b_i` is the expectation over the whole labeled sample, so classes with
/// more labeled mass have proportionally longer mean features.
pub fn pfa_fit(
    unlabeled: &DMatrix<f64>,
    marginal: &[f64],
    labeled: &[LabeledRep],
    outcomes: &[DVector<f64>],
    epsilon: f64,
) -> Result<PfaModel> {
    if unlabeled.nrows() != marginal.len() {
        return Err(Error::Shape(format!("{} marginal weights for {} representations", marginal.len(), unlabeled.nrows())));
    }
    if labeled.is_empty() || outcomes.is_empty() {
        return Err(Error::InvalidArgument("PFA needs labeled examples and at least one outcome value".into()));
    }
    let k = unlabeled.ncols();
    if labeled.iter().any(|l| l.rep.len() != k) {
        return Err(Error::Shape(format!("labeled representations must have dimension {k}")));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon = {epsilon} must be nonnegative")));
    }
    let sigma = super::spectral::second_moment(unlabeled, marginal);
    let n = labeled.len() as f64;
    let mut class_features = Vec::with_capacity(outcomes.len());
    for (i, y_i) in outcomes.iter().enumerate() {
        let mut b = DVector::zeros(k);
        let mut hits = 0usize;
        for l in labeled {
            if l.outcome.len() != y_i.len() {
                return Err(Error::Shape("labeled outcome and outcome value dimensions differ".into()));
            }
            if (&l.outcome - y_i).norm() <= epsilon {
                b += &l.rep;
                hits += 1;
            }
        }
        if hits == 0 {
            return Err(Error::EmptyClass {
                index: i,
                value: y_i.iter().copied().collect(),
            });
        }
        class_features.push(b / n);
    }
    Ok(PfaModel {
        sigma,
        class_features,
        outcomes: outcomes.to_vec(),
    })
}

/// Fit with the labeled sample's own representations as the unlabeled pool
/// under a uniform marginal.
pub fn pfa_fit_uniform(labeled: &[LabeledRep], outcomes: &[DVector<f64>], epsilon: f64) -> Result<PfaModel> {
    let k = labeled.first().map_or(0, |l| l.rep.len());
    let unlabeled = DMatrix::from_fn(labeled.len(), k, |i, j| labeled[i].rep[j]);
    let marginal = vec![1.0 / labeled.len().max(1) as f64; labeled.len()];
    pfa_fit(&unlabeled, &marginal, labeled, outcomes, epsilon)
}

impl PfaModel {
    /// `Sigma^(t-1) b_i` for every class.
    pub fn preconditioned(&self, t_power: u32) -> Vec<DVector<f64>> {
        let k = self.sigma.nrows();
        let mut p = DMatrix::identity(k, k);
        for _ in 1..t_power.max(1) {
            p = &p * &self.sigma;
        }
        self.class_features.iter().map(|b| &p * b).collect()
    }

    /// Index of the predicted outcome value; ties go to the lowest index.
    pub fn predict_class(&self, rep: &DVector<f64>, t_power: u32) -> usize {
        argmax_first(self.preconditioned(t_power).iter().map(|v| rep.dot(v)))
    }

    pub fn predict_many(&self, reps: &[DVector<f64>], t_power: u32) -> Vec<usize> {
        let dirs = self.preconditioned(t_power);
        reps.iter().map(|r| argmax_first(dirs.iter().map(|v| r.dot(v)))).collect()
    }
}

fn argmax_first(scores: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, s) in scores.enumerate() {
        if s > best.1 {
            best = (i, s);
        }
    }
    best.0
}

/// Outcome value `y_{i*}` predicted for `rep`.
pub fn pfa_predict(rep: &DVector<f64>, model: &PfaModel, t_power: u32) -> DVector<f64> {
    model.outcomes[model.predict_class(rep, t_power)].clone()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn onehot(k: usize, i: usize) -> DVector<f64> {
        DVector::from_fn(k, |j, _| if i == j { 1.0 } else { 0.0 })
    }

    fn scalar(y: f64) -> DVector<f64> {
        DVector::from_element(1, y)
    }

    #[test]
    fn onehot_moment_is_scaled_identity() {
        let k = 4;
        let labeled: Vec<LabeledRep> = (0..k)
            .map(|i| LabeledRep {
                rep: onehot(k, i),
                outcome: scalar(i as f64),
            })
            .collect();
        let outcomes: Vec<_> = (0..k).map(|i| scalar(i as f64)).collect();
        let model = pfa_fit_uniform(&labeled, &outcomes, 0.0).unwrap();
        assert_eq!(model.sigma, DMatrix::identity(k, k) / k as f64);
    }

    #[test]
    fn exact_labels_collect_their_class() {
        let labeled = vec![
            LabeledRep { rep: DVector::from_vec(vec![1.0, 2.0]), outcome: scalar(0.0) },
            LabeledRep { rep: DVector::from_vec(vec![3.0, 4.0]), outcome: scalar(0.0) },
            LabeledRep { rep: DVector::from_vec(vec![-1.0, 0.5]), outcome: scalar(1.0) },
            LabeledRep { rep: DVector::from_vec(vec![-3.0, 1.5]), outcome: scalar(1.0) },
        ];
        let model = pfa_fit_uniform(&labeled, &[scalar(0.0), scalar(1.0)], 0.0).unwrap();
        // Balanced classes: b_i is half the class mean.
        assert_eq!(model.class_features[0], DVector::from_vec(vec![1.0, 1.5]));
        assert_eq!(model.class_features[1], DVector::from_vec(vec![-1.0, 0.5]));
    }

    #[test]
    fn duplicating_pairs_changes_nothing() {
        let labeled = vec![
            LabeledRep { rep: DVector::from_vec(vec![1.0, 0.0]), outcome: scalar(0.0) },
            LabeledRep { rep: DVector::from_vec(vec![0.25, 1.0]), outcome: scalar(1.0) },
            LabeledRep { rep: DVector::from_vec(vec![0.0, 2.0]), outcome: scalar(1.0) },
        ];
        let doubled: Vec<_> = labeled.iter().chain(labeled.iter()).cloned().collect();
        let outcomes = [scalar(0.0), scalar(1.0)];
        let a = pfa_fit_uniform(&labeled, &outcomes, 0.1).unwrap();
        let b = pfa_fit_uniform(&doubled, &outcomes, 0.1).unwrap();
        assert!((a.sigma - b.sigma).abs().max() < 1e-15);
        for (x, y) in a.class_features.iter().zip(&b.class_features) {
            assert!((x - y).abs().max() < 1e-15);
        }
    }

    #[test]
    fn empty_class_is_named() {
        let labeled = vec![LabeledRep { rep: onehot(2, 0), outcome: scalar(0.0) }];
        let err = pfa_fit_uniform(&labeled, &[scalar(0.0), scalar(5.0)], 0.5).unwrap_err();
        assert!(matches!(err, Error::EmptyClass { index: 1, .. }));
    }

    #[test]
    fn own_mean_wins_under_identity() {
        let model = PfaModel {
            sigma: DMatrix::identity(3, 3),
            class_features: vec![onehot(3, 0), onehot(3, 1)],
            outcomes: vec![scalar(-1.0), scalar(1.0)],
        };
        assert_eq!(pfa_predict(&onehot(3, 0), &model, 3), scalar(-1.0));
        assert_eq!(pfa_predict(&onehot(3, 1), &model, 1), scalar(1.0));
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let model = PfaModel {
            sigma: DMatrix::identity(2, 2),
            class_features: vec![onehot(2, 0), onehot(2, 1)],
            outcomes: vec![scalar(0.0), scalar(1.0)],
        };
        assert_eq!(model.predict_class(&DVector::from_vec(vec![1.0, 1.0]), 2), 0);
    }

    #[test]
    fn power_one_is_plain_feature_averaging() {
        let model = PfaModel {
            sigma: DMatrix::from_row_slice(2, 2, &[5.0, 1.0, 1.0, 0.1]),
            class_features: vec![DVector::from_vec(vec![1.0, 0.0]), DVector::from_vec(vec![0.0, 1.0])],
            outcomes: vec![scalar(0.0), scalar(1.0)],
        };
        assert_eq!(model.preconditioned(1), model.class_features);
        let r = DVector::from_vec(vec![0.4, 0.6]);
        // Plain inner products pick class 1; Sigma^2 flips it to class 0.
        assert_eq!(model.predict_class(&r, 1), 1);
        assert_eq!(model.predict_class(&r, 3), 0);
    }
}
