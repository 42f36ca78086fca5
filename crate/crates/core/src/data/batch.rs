use ndarray::{s, Array2, Array3};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::dataset::Trajectory;
use crate::data::history::{History, HistoryItem};

/// Padded batch of histories with their projection targets.
///
/// Positions past a sample's length are zero and masked out.
#[derive(Clone, Debug)]
pub struct Batch {
    /// `B x T_max x d_S`
    pub dynamic: Array3<f64>,
    /// `B x d_V`
    pub statics: Array2<f64>,
    /// `B x T_max`, 1.0 on active steps.
    pub mask: Array2<f64>,
    pub lengths: Vec<usize>,
    /// `B x tau x d_A`
    pub future_treatments: Array3<f64>,
    /// `B x tau x d_Y`
    pub future_outcomes: Array3<f64>,
    pub d_x: usize,
    pub d_a: usize,
    pub d_y: usize,
}

impl Batch {
    pub fn from_items(items: &[&HistoryItem]) -> Batch {
        assert!(!items.is_empty(), "empty batch");
        let histories: Vec<&History> = items.iter().map(|i| &i.history).collect();
        let (dynamic, statics, mask, lengths) = pad_histories(&histories);
        let first = items[0];
        let tau = first.future_treatments.nrows();
        let b = items.len();
        let mut future_treatments = Array3::zeros((b, tau, first.future_treatments.ncols()));
        let mut future_outcomes = Array3::zeros((b, tau, first.future_outcomes.ncols()));
        for (k, item) in items.iter().enumerate() {
            future_treatments.slice_mut(s![k, .., ..]).assign(&item.future_treatments);
            future_outcomes.slice_mut(s![k, .., ..]).assign(&item.future_outcomes);
        }
        Batch {
            dynamic,
            statics,
            mask,
            lengths,
            future_treatments,
            future_outcomes,
            d_x: first.history.d_x,
            d_a: first.history.d_a,
            d_y: first.history.d_y,
        }
    }

    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }
}

/// Pad histories to a common length. Returns `(dynamic, statics, mask, lengths)`.
pub fn pad_histories(histories: &[&History]) -> (Array3<f64>, Array2<f64>, Array2<f64>, Vec<usize>) {
    let b = histories.len();
    let t_max = histories.iter().map(|h| h.len()).max().unwrap_or(0);
    let d_s = histories.first().map_or(0, |h| h.d_s());
    let d_v = histories.first().map_or(0, |h| h.statics.len());
    let mut dynamic = Array3::zeros((b, t_max, d_s));
    let mut statics = Array2::zeros((b, d_v));
    let mut mask = Array2::zeros((b, t_max));
    let mut lengths = Vec::with_capacity(b);
    for (k, h) in histories.iter().enumerate() {
        let t = h.len();
        dynamic.slice_mut(s![k, ..t, ..]).assign(&h.dynamic);
        for (j, v) in h.statics.iter().enumerate() {
            statics[[k, j]] = *v;
        }
        mask.slice_mut(s![k, ..t]).fill(1.0);
        lengths.push(t);
    }
    (dynamic, statics, mask, lengths)
}

/// Shuffle `items` under `rng` and cut them into batches; the last partial
/// batch is kept.
pub fn make_batches<R: Rng + ?Sized>(items: &[HistoryItem], batch_size: usize, rng: &mut R) -> Vec<Batch> {
    assert!(batch_size >= 1, "batch size must be at least 1");
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size)
        .map(|chunk| {
            let refs: Vec<&HistoryItem> = chunk.iter().map(|&i| &items[i]).collect();
            Batch::from_items(&refs)
        })
        .collect()
}

/// Whole trajectories, padded, for dense training where every anchor of a
/// sequence is scored from one encoder pass.
#[derive(Clone, Debug)]
pub struct SequenceBatch {
    /// `B x T_max x d_S` history rows (lagged treatments).
    pub dynamic: Array3<f64>,
    pub statics: Array2<f64>,
    pub mask: Array2<f64>,
    pub lengths: Vec<usize>,
    /// `B x T_max x d_A`, unlagged.
    pub treatments: Array3<f64>,
    /// `B x T_max x d_Y`
    pub outcomes: Array3<f64>,
    pub ids: Vec<u64>,
    pub d_x: usize,
    pub d_a: usize,
    pub d_y: usize,
}

impl SequenceBatch {
    pub fn from_trajectories(trajs: &[&Trajectory]) -> SequenceBatch {
        assert!(!trajs.is_empty(), "empty batch");
        let histories: Vec<History> = trajs.iter().map(|t| History::from_trajectory(t, t.len())).collect();
        let refs: Vec<&History> = histories.iter().collect();
        let (dynamic, statics, mask, lengths) = pad_histories(&refs);
        let t_max = dynamic.shape()[1];
        let (d_a, d_y) = (trajs[0].d_a(), trajs[0].d_y());
        let mut treatments = Array3::zeros((trajs.len(), t_max, d_a));
        let mut outcomes = Array3::zeros((trajs.len(), t_max, d_y));
        for (k, t) in trajs.iter().enumerate() {
            treatments.slice_mut(s![k, ..t.len(), ..]).assign(&t.treatments);
            outcomes.slice_mut(s![k, ..t.len(), ..]).assign(&t.outcomes);
        }
        SequenceBatch {
            dynamic,
            statics,
            mask,
            lengths,
            treatments,
            outcomes,
            ids: trajs.iter().map(|t| t.id).collect(),
            d_x: trajs[0].d_x(),
            d_a,
            d_y,
        }
    }

    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }
}

/// Batches of whole trajectories; shuffled when `rng` is given.
pub fn sequence_batches<R: Rng + ?Sized>(trajs: &[Trajectory], batch_size: usize, rng: Option<&mut R>) -> Vec<SequenceBatch> {
    assert!(batch_size >= 1, "batch size must be at least 1");
    let mut order: Vec<usize> = (0..trajs.len()).collect();
    if let Some(rng) = rng {
        order.shuffle(rng);
    }
    order
        .chunks(batch_size)
        .map(|chunk| {
            let refs: Vec<&Trajectory> = chunk.iter().map(|&i| &trajs[i]).collect();
            SequenceBatch::from_trajectories(&refs)
        })
        .collect()
}
