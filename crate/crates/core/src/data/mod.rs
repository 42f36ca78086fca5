//! Canonical dataset representation: trajectories, histories, normalization
//! and padded batches.

pub mod batch;
pub mod dataset;
pub mod history;
pub mod norm;

pub use batch::{make_batches, sequence_batches, Batch, SequenceBatch};
pub use dataset::{DatasetMeta, Domain, DomainDataset, SimState, Split, Trajectory, TrajectoryRecord};
pub use history::{build_histories, History, HistoryItem};
pub use norm::{NormStats, OutcomeTransform};
