//! Trajectories, domain datasets and their on-disk record format.
//!
//! A dataset is stored as a line-delimited JSON file with one trajectory per
//! line, plus a sidecar `<file>.meta.json` carrying the generating spec, the
//! prior constants and (optionally) normalization statistics.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::data::norm::NormStats;
use crate::error::{Error, Result};
use crate::sim::{DomainSpec, PkpdParams, PriorConfig};

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    fn index(self) -> usize {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }
}

/// Hidden simulator state kept alongside a trajectory so counterfactuals can
/// be rolled out from any prefix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub params: PkpdParams,
    /// Noise draw `e_t` used for the transition out of step `t`.
    pub noise: Vec<f64>,
}

/// One subject: aligned per-step covariates, treatments and outcomes.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub id: u64,
    /// `T x d_X`
    pub covariates: Array2<f64>,
    /// `T x d_A`, entries in {0, 1}; row `t` is the treatment applied at step `t`.
    pub treatments: Array2<f64>,
    /// `T x d_Y`
    pub outcomes: Array2<f64>,
    pub statics: Vec<f64>,
    pub sim: Option<SimState>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.outcomes.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn d_x(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn d_a(&self) -> usize {
        self.treatments.ncols()
    }

    pub fn d_y(&self) -> usize {
        self.outcomes.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.len();
        if self.covariates.nrows() != t || self.treatments.nrows() != t {
            return Err(Error::Shape(format!(
                "trajectory {}: covariates/treatments/outcomes have {}/{}/{} rows",
                self.id,
                self.covariates.nrows(),
                self.treatments.nrows(),
                t
            )));
        }
        if self.treatments.iter().any(|&a| a != 0.0 && a != 1.0) {
            return Err(Error::Domain(format!("trajectory {}: non-binary treatment", self.id)));
        }
        Ok(())
    }

    /// The first `t` steps. Hidden simulator state is kept whole.
    pub fn truncated(&self, t: usize) -> Trajectory {
        let t = t.min(self.len());
        Trajectory {
            id: self.id,
            covariates: self.covariates.slice(s![..t, ..]).to_owned(),
            treatments: self.treatments.slice(s![..t, ..]).to_owned(),
            outcomes: self.outcomes.slice(s![..t, ..]).to_owned(),
            statics: self.statics.clone(),
            sim: self.sim.clone(),
        }
    }
}

/// Reads per split, used to prove that evaluation data never feeds training.
#[derive(Debug, Default)]
pub struct AccessLog {
    counts: [AtomicUsize; 3],
}

impl AccessLog {
    pub fn record(&self, split: Split) {
        self.counts[split.index()].fetch_add(1, Ordering::Relaxed);
    }

    pub fn count(&self, split: Split) -> usize {
        self.counts[split.index()].load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        for c in &self.counts {
            c.store(0, Ordering::Relaxed);
        }
    }
}

impl Clone for AccessLog {
    fn clone(&self) -> Self {
        AccessLog::default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub domain: Domain,
    pub spec: DomainSpec,
    pub priors: PriorConfig,
    pub d_x: usize,
    pub d_a: usize,
    pub d_y: usize,
    pub d_v: usize,
    #[serde(default)]
    pub norm: Option<NormStats>,
}

/// A set of trajectories from one domain with fixed train/val/test splits.
#[derive(Clone, Debug)]
pub struct DomainDataset {
    pub meta: DatasetMeta,
    splits: [Vec<Trajectory>; 3],
    access: AccessLog,
}

impl DomainDataset {
    pub fn new(meta: DatasetMeta, train: Vec<Trajectory>, val: Vec<Trajectory>, test: Vec<Trajectory>) -> Self {
        DomainDataset {
            meta,
            splits: [train, val, test],
            access: AccessLog::default(),
        }
    }

    pub fn domain(&self) -> Domain {
        self.meta.domain
    }

    /// Borrow a split. Every call is counted.
    pub fn split(&self, split: Split) -> &[Trajectory] {
        self.access.record(split);
        &self.splits[split.index()]
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.splits[split.index()].len()
    }

    pub fn access(&self) -> &AccessLog {
        &self.access
    }

    /// Apply `f` to every trajectory in every split. Not counted as access.
    pub fn map_trajectories(&self, mut f: impl FnMut(&Trajectory) -> Trajectory) -> DomainDataset {
        let splits = [0, 1, 2].map(|i| self.splits[i].iter().map(&mut f).collect::<Vec<_>>());
        DomainDataset {
            meta: self.meta.clone(),
            splits,
            access: AccessLog::default(),
        }
    }

    pub fn sidecar_path(path: &Path) -> PathBuf {
        let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".meta.json");
        path.with_file_name(name)
    }

    /// Write the record file and its metadata sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        for split in Split::ALL {
            for traj in &self.splits[split.index()] {
                let rec = TrajectoryRecord::from_trajectory(traj, self.meta.domain, split);
                serde_json::to_writer(&mut out, &rec)?;
                out.write_all(b"\n")?;
            }
        }
        out.flush()?;
        let meta = File::create(Self::sidecar_path(path))?;
        serde_json::to_writer_pretty(BufWriter::new(meta), &self.meta)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<DomainDataset> {
        let meta: DatasetMeta = serde_json::from_reader(BufReader::new(File::open(Self::sidecar_path(path))?))?;
        if meta.format_version != DATASET_FORMAT_VERSION {
            return Err(Error::InvalidArgument(format!(
                "dataset format version {} is not supported",
                meta.format_version
            )));
        }
        let mut splits: [Vec<Trajectory>; 3] = Default::default();
        for (lineno, line) in BufReader::new(File::open(path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: TrajectoryRecord = serde_json::from_str(&line)?;
            let split = rec.split;
            let traj = rec
                .into_trajectory()
                .map_err(|e| Error::InvalidArgument(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
            splits[split.index()].push(traj);
        }
        let [train, val, test] = splits;
        Ok(DomainDataset::new(meta, train, val, test))
    }
}

/// Serialized form of one trajectory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub id: u64,
    pub domain: Domain,
    pub split: Split,
    pub statics: Vec<f64>,
    pub covariates: Vec<Vec<f64>>,
    pub treatments: Vec<Vec<u8>>,
    pub outcomes: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimState>,
}

impl TrajectoryRecord {
    pub fn from_trajectory(traj: &Trajectory, domain: Domain, split: Split) -> Self {
        let rows = |a: &Array2<f64>| a.rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>();
        TrajectoryRecord {
            id: traj.id,
            domain,
            split,
            statics: traj.statics.clone(),
            covariates: rows(&traj.covariates),
            treatments: traj
                .treatments
                .rows()
                .into_iter()
                .map(|r| r.iter().map(|&a| a as u8).collect())
                .collect(),
            outcomes: rows(&traj.outcomes),
            sim: traj.sim.clone(),
        }
    }

    pub fn into_trajectory(self) -> Result<Trajectory> {
        fn matrix(rows: Vec<Vec<f64>>, what: &str) -> Result<Array2<f64>> {
            let n = rows.len();
            let d = rows.first().map_or(0, Vec::len);
            if rows.iter().any(|r| r.len() != d) {
                return Err(Error::Shape(format!("ragged {what} rows")));
            }
            Array2::from_shape_vec((n, d), rows.into_iter().flatten().collect())
                .map_err(|e| Error::Shape(e.to_string()))
        }
        let treatments = self
            .treatments
            .into_iter()
            .map(|r| r.into_iter().map(f64::from).collect())
            .collect();
        let traj = Trajectory {
            id: self.id,
            covariates: matrix(self.covariates, "covariate")?,
            treatments: matrix(treatments, "treatment")?,
            outcomes: matrix(self.outcomes, "outcome")?,
            statics: self.statics,
            sim: self.sim,
        };
        traj.validate()?;
        Ok(traj)
    }
}
