use ndarray::{s, Array2};

use crate::data::dataset::Trajectory;

/// Observed history up to step `t`: rows `[x_i | a_{i-1} | y_i]` for
/// `i = 1..=t`, with `a_0` the zero vector, plus static features.
#[derive(Clone, Debug, PartialEq)]
pub struct History {
    /// `t x d_S`, `d_S = d_X + d_A + d_Y`
    pub dynamic: Array2<f64>,
    pub statics: Vec<f64>,
    pub d_x: usize,
    pub d_a: usize,
    pub d_y: usize,
}

impl History {
    /// History of the first `t` steps of `traj` (`1 <= t <= T`).
    pub fn from_trajectory(traj: &Trajectory, t: usize) -> History {
        assert!(t >= 1 && t <= traj.len(), "history length {t} outside 1..={}", traj.len());
        let (d_x, d_a, d_y) = (traj.d_x(), traj.d_a(), traj.d_y());
        let mut dynamic = Array2::zeros((t, d_x + d_a + d_y));
        dynamic.slice_mut(s![.., ..d_x]).assign(&traj.covariates.slice(s![..t, ..]));
        if t > 1 {
            dynamic
                .slice_mut(s![1.., d_x..d_x + d_a])
                .assign(&traj.treatments.slice(s![..t - 1, ..]));
        }
        dynamic.slice_mut(s![.., d_x + d_a..]).assign(&traj.outcomes.slice(s![..t, ..]));
        History {
            dynamic,
            statics: traj.statics.clone(),
            d_x,
            d_a,
            d_y,
        }
    }

    pub fn len(&self) -> usize {
        self.dynamic.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.dynamic.nrows() == 0
    }

    pub fn d_s(&self) -> usize {
        self.d_x + self.d_a + self.d_y
    }

    /// Split the dynamic block back into `(X, A_lagged, Y)`.
    pub fn split_columns(&self) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let (dx, da) = (self.d_x, self.d_a);
        (
            self.dynamic.slice(s![.., ..dx]).to_owned(),
            self.dynamic.slice(s![.., dx..dx + da]).to_owned(),
            self.dynamic.slice(s![.., dx + da..]).to_owned(),
        )
    }

    pub fn last_outcome(&self) -> Vec<f64> {
        let t = self.len();
        self.dynamic.slice(s![t - 1, self.d_x + self.d_a..]).to_vec()
    }
}

/// A history together with the `tau` treatments applied after it and the
/// outcomes they produced.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryItem {
    pub trajectory_id: u64,
    /// History length `t`.
    pub anchor: usize,
    pub history: History,
    /// `tau x d_A`: `a_t .. a_{t+tau-1}`
    pub future_treatments: Array2<f64>,
    /// `tau x d_Y`: `y_{t+1} .. y_{t+tau}`
    pub future_outcomes: Array2<f64>,
}

/// Every anchor `t` in `1..=T-tau` of every trajectory.
pub fn build_histories(trajectories: &[Trajectory], tau: usize) -> Vec<HistoryItem> {
    let mut items = Vec::new();
    for traj in trajectories {
        let len = traj.len();
        if tau == 0 || tau >= len {
            tracing::warn!(trajectory = traj.id, tau, len, "projection horizon leaves no anchors");
            continue;
        }
        for t in 1..=len - tau {
            items.push(HistoryItem {
                trajectory_id: traj.id,
                anchor: t,
                history: History::from_trajectory(traj, t),
                future_treatments: traj.treatments.slice(s![t - 1..t - 1 + tau, ..]).to_owned(),
                future_outcomes: traj.outcomes.slice(s![t..t + tau, ..]).to_owned(),
            });
        }
    }
    items
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{sample_patient_params, simulate_trajectory, subject_rng, PolicyParams, PriorConfig};
    use proptest::prelude::*;

    fn simulated(len: usize, seed: u64) -> Trajectory {
        let mut rng = subject_rng(seed, 0);
        let p = sample_patient_params(&PriorConfig::default(), &mut rng);
        simulate_trajectory(&p, &PolicyParams::with_gamma(0.0), len, 0, &mut rng).unwrap()
    }

    #[test]
    fn anchor_counts() {
        let traj = simulated(60, 1);
        let items = build_histories(std::slice::from_ref(&traj), 6);
        assert_eq!(items.len(), 54);
        assert_eq!(items[0].anchor, 1);
        assert_eq!(items.last().unwrap().anchor, 54);
        assert!(items.iter().all(|i| i.future_treatments.nrows() == 6 && i.future_outcomes.nrows() == 6));
    }

    #[test]
    fn horizon_too_long_gives_nothing() {
        let traj = simulated(10, 2);
        assert!(build_histories(std::slice::from_ref(&traj), 10).is_empty());
        assert!(build_histories(std::slice::from_ref(&traj), 11).is_empty());
    }

    #[test]
    fn first_anchor_has_zero_lagged_treatment() {
        let traj = simulated(20, 3);
        let items = build_histories(std::slice::from_ref(&traj), 1);
        let h = &items[0].history;
        assert_eq!(h.len(), 1);
        assert_eq!(h.dynamic.row(0).to_vec(), vec![traj.covariates[[0, 0]], 0.0, 0.0, traj.outcomes[[0, 0]]]);
        // the plan starts with the treatment applied at the anchor step
        assert_eq!(items[0].future_treatments.row(0), traj.treatments.row(0));
        assert_eq!(items[0].future_outcomes[[0, 0]], traj.outcomes[[1, 0]]);
    }

    proptest! {
        #[test]
        fn column_layout_round_trips(seed in 0u64..500, t in 1usize..30) {
            let traj = simulated(30, seed);
            let h = History::from_trajectory(&traj, t);
            let (x, a, y) = h.split_columns();
            prop_assert_eq!(x, traj.covariates.slice(s![..t, ..]).to_owned());
            prop_assert_eq!(y, traj.outcomes.slice(s![..t, ..]).to_owned());
            prop_assert!(a.row(0).iter().all(|&v| v == 0.0));
            prop_assert_eq!(a.slice(s![1.., ..]).to_owned(), traj.treatments.slice(s![..t - 1, ..]).to_owned());
        }
    }
}
