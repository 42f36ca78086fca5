use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative rounding allowance on the bound comparison and on the magnitude
/// check. Both sides are sums of rounded squares, so an instance sitting
/// exactly on the bound can land a few ulps either way.
pub const BOUND_SLACK: f64 = 1e-12;

/// Tolerance of the risk decomposition identity.
pub const DECOMPOSITION_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct L2BoundCheck {
    /// Empirical L2 risk.
    pub lhs: f64,
    /// Empirical 0-1 risk at threshold epsilon.
    pub zero_one: f64,
    /// `eps^2 + (4 B^2 - eps^2) * zero_one`.
    pub rhs: f64,
    pub holds: bool,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Compare the empirical L2 risk of `predictions` with the bound implied by
/// their 0-1 risk under threshold `epsilon`.
pub fn verify_l2_01_bound(predictions: &[Vec<f64>], truths: &[Vec<f64>], epsilon: f64, b: f64) -> Result<L2BoundCheck> {
    if predictions.len() != truths.len() || predictions.is_empty() {
        return Err(Error::Shape(format!(
            "{} predictions for {} truths (need a nonempty aligned sample)",
            predictions.len(),
            truths.len()
        )));
    }
    if !(epsilon > 0.0 && epsilon < 2.0 * b) {
        return Err(Error::InvalidArgument(format!("epsilon = {epsilon} must lie in (0, 2B) with B = {b}")));
    }
    let n = predictions.len() as f64;
    let (mut sq, mut miss) = (0.0, 0usize);
    for (f, y) in predictions.iter().zip(truths) {
        if f.len() != y.len() {
            return Err(Error::Shape("prediction and truth dimensions differ".into()));
        }
        for (what, v) in [("f(h)", f), ("y", y)] {
            let nv = norm(v);
            if nv > b * (1.0 + BOUND_SLACK) {
                return Err(Error::Magnitude {
                    what: what.into(),
                    norm: nv,
                    bound: b,
                });
            }
        }
        let diff: Vec<f64> = f.iter().zip(y).map(|(a, c)| a - c).collect();
        let err = norm(&diff);
        sq += err * err;
        if err > epsilon {
            miss += 1;
        }
    }
    let lhs = sq / n;
    let zero_one = miss as f64 / n;
    let rhs = epsilon * epsilon * (1.0 - zero_one) + 4.0 * b * b * zero_one;
    Ok(L2BoundCheck {
        lhs,
        zero_one,
        rhs,
        holds: lhs <= rhs * (1.0 + BOUND_SLACK),
    })
}

/// Factual/counterfactual split of the risk of an estimator for one plan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskDecomposition {
    /// Empirical `P(a)`.
    pub p_plan: f64,
    /// Risk on samples whose factual plan is `a`.
    pub risk_factual: f64,
    /// Risk on samples with another factual plan; `None` when `P(a) = 1`.
    pub risk_counterfactual: Option<f64>,
    /// Risk on all samples, computed directly.
    pub risk_total: f64,
    /// `P(a) * risk_factual + (1 - P(a)) * risk_counterfactual`.
    pub recombined: f64,
    pub holds: bool,
}

/// Decompose the risk of an estimator for plan `a` over `samples`.
///
/// `loss_under(s)` is the loss of the plan-`a` estimate on sample `s`
/// against its ground-truth outcome under `a` (counterfactual where the
/// factual plan differs).
pub fn decompose_risk<S, P: PartialEq + std::fmt::Debug>(
    samples: &[S],
    plan: &P,
    factual_plan: impl Fn(&S) -> P,
    loss_under: impl Fn(&S) -> f64,
) -> Result<RiskDecomposition> {
    let mut factual = Vec::new();
    let mut other = Vec::new();
    let mut total = 0.0;
    for s in samples {
        let l = loss_under(s);
        total += l;
        if factual_plan(s) == *plan {
            factual.push(l);
        } else {
            other.push(l);
        }
    }
    if factual.is_empty() {
        return Err(Error::Positivity(format!("{plan:?}")));
    }
    let n = samples.len() as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let p_plan = factual.len() as f64 / n;
    let risk_factual = mean(&factual);
    let risk_counterfactual = (!other.is_empty()).then(|| mean(&other));
    let risk_total = total / n;
    let recombined = p_plan * risk_factual + (1.0 - p_plan) * risk_counterfactual.unwrap_or(0.0);
    Ok(RiskDecomposition {
        p_plan,
        risk_factual,
        risk_counterfactual,
        risk_total,
        recombined,
        holds: (risk_total - recombined).abs() <= DECOMPOSITION_TOL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn perfect_predictor_has_zero_risk() {
        let y = vec![vec![0.5, -0.2], vec![0.1, 0.3]];
        let c = verify_l2_01_bound(&y, &y, 0.1, 1.0).unwrap();
        assert_eq!((c.lhs, c.zero_one), (0.0, 0.0));
        assert!(c.holds && c.lhs <= 0.01);
    }

    #[test]
    fn antipodal_point_saturates() {
        let c = verify_l2_01_bound(&[vec![-1.5]], &[vec![1.5]], 0.7, 1.5).unwrap();
        assert_eq!(c.lhs, 9.0);
        assert_eq!(c.rhs, 9.0);
        assert!(c.holds);
    }

    #[test]
    fn magnitude_violation_is_reported() {
        let err = verify_l2_01_bound(&[vec![2.0]], &[vec![0.0]], 0.5, 1.0).unwrap_err();
        assert!(matches!(err, Error::Magnitude { .. }));
        assert!(verify_l2_01_bound(&[vec![0.0]], &[vec![0.0]], 2.0, 1.0).is_err());
    }

    #[test]
    fn random_bounded_instances_hold() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let b = rng.random_range(0.1..5.0);
            let eps = rng.random_range(0.01..2.0 * b);
            let n = rng.random_range(1..30);
            let point = |rng: &mut rand_chacha::ChaCha8Rng| vec![rng.random_range(-b..=b)];
            let f: Vec<_> = (0..n).map(|_| point(&mut rng)).collect();
            let y: Vec<_> = (0..n).map(|_| point(&mut rng)).collect();
            assert!(verify_l2_01_bound(&f, &y, eps, b).unwrap().holds);
        }
    }

    #[test]
    fn all_factual_collapses_to_source_risk() {
        let samples = [(0u8, 1.0), (0, 3.0)];
        let d = decompose_risk(&samples, &0u8, |s| s.0, |s| s.1).unwrap();
        assert_eq!(d.p_plan, 1.0);
        assert_eq!(d.risk_total, d.risk_factual);
        assert_eq!(d.risk_counterfactual, None);
    }

    #[test]
    fn missing_plan_violates_positivity() {
        let samples = [(1u8, 1.0)];
        assert!(matches!(decompose_risk(&samples, &0u8, |s| s.0, |s| s.1), Err(Error::Positivity(_))));
    }

    #[test]
    fn toy_two_plan_decomposition() {
        // Noise-free toy outcome y = x + 2*a, estimator for plan a = 1 is x + 1.5.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let samples: Vec<(f64, u8)> = (0..20).map(|i| (rng.random_range(-1.0..1.0), (i % 3 == 0) as u8)).collect();
        let loss = |s: &(f64, u8)| (s.0 + 1.5 - (s.0 + 2.0)).powi(2);
        let d = decompose_risk(&samples, &1u8, |s| s.1, loss).unwrap();
        assert_eq!(d.p_plan, 7.0 / 20.0);
        assert!((d.risk_total - 0.25).abs() < 1e-15);
        assert!((d.recombined - 0.25).abs() < 1e-15);
        assert!(d.holds);
    }
}
