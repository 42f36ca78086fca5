use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::theory::graph::PositivePairGraph;

fn check_reps(reps: &DMatrix<f64>, g: &PositivePairGraph) -> Result<()> {
    if reps.nrows() != g.n_vertices() {
        return Err(Error::Shape(format!("{} representations for {} vertices", reps.nrows(), g.n_vertices())));
    }
    Ok(())
}

/// `E_{P_H}[r r^T]` with `P_H` the vertex marginal; `reps` is `n x k`.
pub fn second_moment(reps: &DMatrix<f64>, marginal: &[f64]) -> DMatrix<f64> {
    let k = reps.ncols();
    let mut m = DMatrix::zeros(k, k);
    for (h, &p) in marginal.iter().enumerate() {
        let r = reps.row(h);
        m += p * r.transpose() * r;
    }
    m
}

/// `E_{(h,h+)}||r(h) - r(h+)||^2 + sigma * ||E[r r^T] - I||_F^2` with row `h`
/// of `reps` as `r(h)`.
pub fn spectral_contrastive_loss(reps: &DMatrix<f64>, g: &PositivePairGraph, sigma: f64) -> Result<f64> {
    check_reps(reps, g)?;
    let n = g.n_vertices();
    let mut pull = 0.0;
    for h in 0..n {
        for h2 in 0..n {
            let w = g.weight(h, h2);
            if w != 0.0 {
                pull += w * (reps.row(h) - reps.row(h2)).norm_squared();
            }
        }
    }
    let k = reps.ncols();
    let reg = (second_moment(reps, g.degrees()) - DMatrix::identity(k, k)).norm_squared();
    Ok(pull + sigma * reg)
}

/// Gradient with respect to every row of `reps`:
/// `4 (D - W) R + 4 sigma D R (E[r r^T] - I)`.
pub fn spectral_loss_gradient(reps: &DMatrix<f64>, g: &PositivePairGraph, sigma: f64) -> Result<DMatrix<f64>> {
    check_reps(reps, g)?;
    let k = reps.ncols();
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(g.degrees()));
    let laplacian = &d - g.weights();
    let moment = second_moment(reps, g.degrees()) - DMatrix::identity(k, k);
    Ok((laplacian * reps + sigma * (d * reps * moment)) * 4.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectralFitConfig {
    pub k: usize,
    pub sigma: f64,
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SpectralFitConfig {
    fn default() -> Self {
        SpectralFitConfig {
            k: 4,
            sigma: 1.0,
            steps: 2000,
            learning_rate: 0.05,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SpectralFit {
    pub reps: DMatrix<f64>,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Minimize the spectral loss over a free table of vertex representations.
///
/// Each row's step is divided by its vertex weight `w(h)`: raw gradients
/// scale with `w(h)`, so rare vertices would otherwise barely move.
pub fn fit_spectral_representations(g: &PositivePairGraph, cfg: &SpectralFitConfig) -> Result<SpectralFit> {
    if cfg.k == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::InvalidArgument("spectral fit needs k >= 1 and a positive learning rate".into()));
    }
    let n = g.n_vertices();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, 1.0).map_err(|e| Error::Domain(e.to_string()))?;
    let mut reps = DMatrix::from_fn(n, cfg.k, |_, _| normal.sample(&mut rng));
    let initial_loss = spectral_contrastive_loss(&reps, g, cfg.sigma)?;
    for _ in 0..cfg.steps {
        let grad = spectral_loss_gradient(&reps, g, cfg.sigma)?;
        for h in 0..n {
            let scale = cfg.learning_rate / g.degree(h);
            let step = grad.row(h) * scale;
            reps.row_mut(h).iter_mut().zip(step.iter()).for_each(|(r, s)| *r -= s);
        }
    }
    let final_loss = spectral_contrastive_loss(&reps, g, cfg.sigma)?;
    if !final_loss.is_finite() {
        return Err(Error::Divergence {
            step: cfg.steps,
            loss: final_loss,
        });
    }
    Ok(SpectralFit {
        reps,
        initial_loss,
        final_loss,
    })
}
