//! Pharmacokinetic-pharmacodynamic tumor growth simulator with
//! history-dependent (confounded) chemo- and radiotherapy assignment.
//!
//! Tumor volume follows
//!
//! ```text
//! V(t+1) = (1 + rho * ln(K / V(t)) - beta_c * C(t) - (alpha_r * d(t) + beta_r * d(t)^2) + e_t) * V(t)
//! ```
//!
//! and each therapy is assigned with probability
//! `sigmoid(gamma / D_max * (D_bar(t) - delta))`, where `D_bar(t)` is the
//! mean tumor diameter over the trailing window.
//!
//! Per-step ordering at step `t`: observe `y_t = V(t)` and the residual
//! drug concentration `x_t`, draw `a_t` from the policy, dose, then draw
//! `e_t` and transition. `x_t` is the concentration carried into step `t`
//! before dosing, so the observed history never contains `a_t`.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::data::dataset::{DatasetMeta, Domain, DomainDataset, SimState, Trajectory, DATASET_FORMAT_VERSION};
use crate::error::{Error, Result};

/// Treatment columns.
pub const CHEMO: usize = 0;
pub const RADIO: usize = 1;

pub const D_X: usize = 1;
pub const D_A: usize = 2;
pub const D_Y: usize = 1;
pub const D_V: usize = 1;

pub const MIN_VOLUME: f64 = 0.01;

/// Per-patient dynamics parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PkpdParams {
    /// Carrying capacity, cm^3.
    pub k: f64,
    /// Growth rate, 1/day.
    pub rho: f64,
    pub beta_c: f64,
    /// Radiotherapy linear coefficient, 1/Gy.
    pub alpha_r: f64,
    /// Radiotherapy quadratic coefficient, 1/Gy^2.
    pub beta_r: f64,
    pub noise_std: f64,
    pub chemo_dose: f64,
    /// Gy per radiotherapy application.
    pub radio_dose: f64,
    pub chemo_half_life_steps: f64,
    /// Volume at the first observed step, cm^3.
    pub initial_volume: f64,
    /// 0 or 1; the faster-growing type is 1. Exposed as the static feature.
    pub patient_type: u8,
}

impl PkpdParams {
    pub fn validate(&self) -> Result<()> {
        let coeffs = [self.rho, self.beta_c, self.alpha_r, self.beta_r];
        if !(self.k > 0.0) || !(self.noise_std >= 0.0) || coeffs.iter().any(|c| !(*c >= 0.0)) {
            return Err(Error::Domain(format!("invalid PK-PD parameters: {self:?}")));
        }
        if !(self.chemo_half_life_steps > 0.0) || !(self.initial_volume > 0.0) {
            return Err(Error::Domain(format!("invalid PK-PD parameters: {self:?}")));
        }
        Ok(())
    }

    /// Multiplicative per-step decay of the drug concentration.
    pub fn chemo_decay(&self) -> f64 {
        (-1.0 / self.chemo_half_life_steps).exp2()
    }
}

/// Log-normal prior with parameters on the log scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogNormalPrior {
    pub median: f64,
    pub log_sd: f64,
}

impl LogNormalPrior {
    pub const fn new(median: f64, log_sd: f64) -> Self {
        LogNormalPrior { median, log_sd }
    }

    pub fn mean(&self) -> f64 {
        self.median * (0.5 * self.log_sd * self.log_sd).exp()
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        LogNormal::new(self.median.ln(), self.log_sd)
            .expect("valid log-normal prior")
            .sample(rng)
    }
}

/// Every prior constant of the simulator.
///
/// Calibrated so an untreated tumor starting near 1 cm^3 approaches a
/// carrying capacity in roughly [25, 40] cm^3 within 60 steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub k: LogNormalPrior,
    /// Growth rate prior, one per patient type.
    pub rho: [LogNormalPrior; 2],
    pub beta_c: LogNormalPrior,
    pub alpha_r: LogNormalPrior,
    /// `beta_r = alpha_r / alpha_beta_ratio`.
    pub alpha_beta_ratio: f64,
    pub initial_volume: LogNormalPrior,
    pub type_one_probability: f64,
    pub noise_std: f64,
    pub chemo_dose: f64,
    pub radio_dose: f64,
    pub chemo_half_life_steps: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            k: LogNormalPrior::new(32.0, 0.1),
            rho: [LogNormalPrior::new(0.06, 0.2), LogNormalPrior::new(0.09, 0.2)],
            beta_c: LogNormalPrior::new(0.028, 0.1),
            alpha_r: LogNormalPrior::new(0.0398, 0.15),
            alpha_beta_ratio: 10.0,
            initial_volume: LogNormalPrior::new(1.0, 0.3),
            type_one_probability: 0.5,
            noise_std: 0.01,
            chemo_dose: 5.0,
            radio_dose: 2.0,
            chemo_half_life_steps: 1.0,
        }
    }
}

/// Draw one patient's parameters.
pub fn sample_patient_params<R: Rng + ?Sized>(priors: &PriorConfig, rng: &mut R) -> PkpdParams {
    let patient_type = u8::from(
        Bernoulli::new(priors.type_one_probability)
            .expect("probability in [0, 1]")
            .sample(rng),
    );
    let k = priors.k.sample(rng);
    let rho = priors.rho[patient_type as usize].sample(rng);
    let beta_c = priors.beta_c.sample(rng);
    let alpha_r = priors.alpha_r.sample(rng);
    let initial_volume = priors.initial_volume.sample(rng);
    PkpdParams {
        k,
        rho,
        beta_c,
        alpha_r,
        beta_r: alpha_r / priors.alpha_beta_ratio,
        noise_std: priors.noise_std,
        chemo_dose: priors.chemo_dose,
        radio_dose: priors.radio_dose,
        chemo_half_life_steps: priors.chemo_half_life_steps,
        initial_volume,
        patient_type,
    }
}

/// Treatment assignment policy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub gamma_c: f64,
    pub gamma_r: f64,
    /// Maximum tumor diameter, cm.
    pub d_max: f64,
    pub delta_c: f64,
    pub delta_r: f64,
    /// Trailing window (steps) for the mean diameter.
    pub window: usize,
}

impl PolicyParams {
    pub fn with_gamma(gamma: f64) -> Self {
        let d_max = 13.0;
        PolicyParams {
            gamma_c: gamma,
            gamma_r: gamma,
            d_max,
            delta_c: d_max / 2.0,
            delta_r: d_max / 2.0,
            window: 15,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d_max > 0.0) || self.window == 0 || !self.gamma_c.is_finite() || !self.gamma_r.is_finite() {
            return Err(Error::InvalidArgument(format!("invalid policy parameters: {self:?}")));
        }
        Ok(())
    }

    /// Volume of a sphere with diameter `d_max`; the upper clip for volumes.
    pub fn volume_cap(&self) -> f64 {
        diameter_to_volume(self.d_max)
    }
}

pub fn volume_to_diameter(v: f64) -> f64 {
    2.0 * (3.0 * v / (4.0 * PI)).cbrt()
}

pub fn diameter_to_volume(d: f64) -> f64 {
    4.0 / 3.0 * PI * (d / 2.0).powi(3)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `sigmoid(gamma / d_max * (d_bar - threshold))`.
pub fn assignment_probability(d_bar: f64, gamma: f64, threshold: f64, d_max: f64) -> f64 {
    sigmoid(gamma / d_max * (d_bar - threshold))
}

/// One transition of the volume equation, clipped to `[MIN_VOLUME, v_cap]`.
pub fn tumor_volume_step(v: f64, concentration: f64, dose_gy: f64, p: &PkpdParams, noise: f64, v_cap: f64) -> Result<f64> {
    if !(v > 0.0) {
        return Err(Error::Domain(format!("tumor volume must be positive, got {v}")));
    }
    let growth = p.rho * (p.k / v).ln();
    let chemo = p.beta_c * concentration;
    let radio = p.alpha_r * dose_gy + p.beta_r * dose_gy * dose_gy;
    let next = (1.0 + growth - chemo - radio + noise) * v;
    Ok(next.clamp(MIN_VOLUME, v_cap))
}

/// Source of transition noise for a rollout.
pub trait NoiseSource {
    /// Noise for the transition out of absolute step `step`.
    fn draw(&mut self, step: usize, std: f64) -> Result<f64>;
}

/// Fresh Gaussian draws.
pub struct ResampledNoise<'a, R: Rng>(pub &'a mut R);

impl<R: Rng> NoiseSource for ResampledNoise<'_, R> {
    fn draw(&mut self, _step: usize, std: f64) -> Result<f64> {
        if std == 0.0 {
            return Ok(0.0);
        }
        Ok(Normal::new(0.0, std).map_err(|e| Error::Domain(e.to_string()))?.sample(self.0))
    }
}

/// Replays a recorded noise sequence, indexed by absolute step.
pub struct RecordedNoise<'a>(pub &'a [f64]);

impl NoiseSource for RecordedNoise<'_> {
    fn draw(&mut self, step: usize, _std: f64) -> Result<f64> {
        self.0
            .get(step)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("recorded noise has no entry for step {step}")))
    }
}

/// Deterministic given the rng state.
pub fn simulate_trajectory<R: Rng + ?Sized>(p: &PkpdParams, pp: &PolicyParams, horizon: usize, id: u64, rng: &mut R) -> Result<Trajectory> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    p.validate()?;
    pp.validate()?;
    let v_cap = pp.volume_cap();
    let decay = p.chemo_decay();
    let noise = Normal::new(0.0, p.noise_std).map_err(|e| Error::Domain(e.to_string()))?;

    let mut covariates = Array2::zeros((horizon, D_X));
    let mut treatments = Array2::zeros((horizon, D_A));
    let mut outcomes = Array2::zeros((horizon, D_Y));
    let mut noise_draws = Vec::with_capacity(horizon);
    let mut diameters = Vec::with_capacity(horizon);

    let mut v = p.initial_volume.clamp(MIN_VOLUME, v_cap);
    let mut residual = 0.0;
    for t in 0..horizon {
        covariates[[t, 0]] = residual;
        outcomes[[t, 0]] = v;
        diameters.push(volume_to_diameter(v));
        let from = diameters.len().saturating_sub(pp.window);
        let d_bar = diameters[from..].iter().sum::<f64>() / (diameters.len() - from) as f64;

        let p_c = assignment_probability(d_bar, pp.gamma_c, pp.delta_c, pp.d_max);
        let p_r = assignment_probability(d_bar, pp.gamma_r, pp.delta_r, pp.d_max);
        let chemo = rng.random::<f64>() < p_c;
        let radio = rng.random::<f64>() < p_r;
        treatments[[t, CHEMO]] = f64::from(u8::from(chemo));
        treatments[[t, RADIO]] = f64::from(u8::from(radio));

        let concentration = residual + p.chemo_dose * treatments[[t, CHEMO]];
        let dose = p.radio_dose * treatments[[t, RADIO]];
        let e = if p.noise_std > 0.0 { noise.sample(rng) } else { 0.0 };
        noise_draws.push(e);
        v = tumor_volume_step(v, concentration, dose, p, e, v_cap)?;
        residual = concentration * decay;
    }

    Ok(Trajectory {
        id,
        covariates,
        treatments,
        outcomes,
        statics: vec![f64::from(p.patient_type)],
        sim: Some(SimState {
            params: *p,
            noise: noise_draws,
        }),
    })
}

/// Roll the dynamics forward from the last step of `prefix` under a forced
/// `plan` (`tau x d_A`), drawing only transition noise.
///
/// Returns one `tau x d_Y` array per sample: row `i` is the outcome after
/// applying plan rows `0..=i`.
pub fn counterfactual_rollout<N: NoiseSource>(
    prefix: &Trajectory,
    plan: &Array2<f64>,
    p: &PkpdParams,
    pp: &PolicyParams,
    n_samples: usize,
    noise: &mut N,
) -> Result<Vec<Array2<f64>>> {
    let t = prefix.len();
    if t < 1 {
        return Err(Error::InvalidArgument("rollout prefix must contain at least one step".into()));
    }
    if plan.ncols() != D_A {
        return Err(Error::Shape(format!("plan has {} treatment columns, expected {D_A}", plan.ncols())));
    }
    if plan.iter().any(|&a| a != 0.0 && a != 1.0) {
        return Err(Error::Domain("treatment plan must be binary".into()));
    }
    let v_cap = pp.volume_cap();
    let decay = p.chemo_decay();
    let tau = plan.nrows();
    let mut samples = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let mut out = Array2::zeros((tau, D_Y));
        let mut v = prefix.outcomes[[t - 1, 0]];
        let mut residual = prefix.covariates[[t - 1, 0]];
        for (i, step) in plan.rows().into_iter().enumerate() {
            let concentration = residual + p.chemo_dose * step[CHEMO];
            let dose = p.radio_dose * step[RADIO];
            let e = noise.draw(t - 1 + i, p.noise_std)?;
            v = tumor_volume_step(v, concentration, dose, p, e, v_cap)?;
            residual = concentration * decay;
            out[[i, 0]] = v;
        }
        samples.push(out);
    }
    Ok(samples)
}

/// Size and seed of one generated domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub domain: Domain,
    pub gamma: f64,
    pub horizon: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl DomainSpec {
    /// Source domain at full scale: gamma = 10, 10000/1000/1000 sequences of length 60.
    pub fn full_source(seed: u64) -> Self {
        DomainSpec {
            domain: Domain::Source,
            gamma: 10.0,
            horizon: 60,
            n_train: 10_000,
            n_val: 1_000,
            n_test: 1_000,
            seed,
        }
    }

    /// Target domain at full scale: gamma = 0, 100/1000/1000 sequences of length 60.
    pub fn full_target(seed: u64) -> Self {
        DomainSpec {
            domain: Domain::Target,
            gamma: 0.0,
            horizon: 60,
            n_train: 100,
            n_val: 1_000,
            n_test: 1_000,
            seed,
        }
    }

    /// Workstation-sized source domain: 1000/200/200.
    pub fn desk_source(seed: u64) -> Self {
        DomainSpec {
            n_train: 1_000,
            n_val: 200,
            n_test: 200,
            ..Self::full_source(seed)
        }
    }

    /// Workstation-sized target domain: 100/200/500.
    pub fn desk_target(seed: u64) -> Self {
        DomainSpec {
            n_train: 100,
            n_val: 200,
            n_test: 500,
            ..Self::full_target(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        if !self.gamma.is_finite() {
            return Err(Error::InvalidArgument("gamma must be finite".into()));
        }
        Ok(())
    }

    pub fn policy(&self) -> PolicyParams {
        PolicyParams::with_gamma(self.gamma)
    }
}

/// Independent rng stream for trajectory `index` of a dataset seeded with `seed`.
pub fn subject_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Generate train/val/test splits with fresh patient parameters per subject.
pub fn generate_domain_dataset(spec: &DomainSpec, priors: &PriorConfig) -> Result<DomainDataset> {
    spec.validate()?;
    let pp = spec.policy();
    let mut next_id = 0u64;
    let mut make = |n: usize| -> Result<Vec<Trajectory>> {
        (0..n)
            .map(|_| {
                let id = next_id;
                next_id += 1;
                let mut rng = subject_rng(spec.seed, id);
                let params = sample_patient_params(priors, &mut rng);
                simulate_trajectory(&params, &pp, spec.horizon, id, &mut rng)
            })
            .collect()
    };
    let train = make(spec.n_train)?;
    let val = make(spec.n_val)?;
    let test = make(spec.n_test)?;
    let meta = DatasetMeta {
        format_version: DATASET_FORMAT_VERSION,
        domain: spec.domain,
        spec: spec.clone(),
        priors: priors.clone(),
        d_x: D_X,
        d_a: D_A,
        d_y: D_Y,
        d_v: D_V,
        norm: None,
    };
    Ok(DomainDataset::new(meta, train, val, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::dataset::Split;
    use approx::assert_relative_eq;
    use ndarray::s;

    fn fixed_params() -> PkpdParams {
        PkpdParams {
            k: 30.0,
            rho: 0.1,
            beta_c: 0.028,
            alpha_r: 0.04,
            beta_r: 0.004,
            noise_std: 0.0,
            chemo_dose: 5.0,
            radio_dose: 2.0,
            chemo_half_life_steps: 1.0,
            initial_volume: 1.0,
            patient_type: 0,
        }
    }

    #[test]
    fn sampling_is_deterministic_and_noise_fixed() {
        let priors = PriorConfig::default();
        let a = sample_patient_params(&priors, &mut subject_rng(7, 3));
        let b = sample_patient_params(&priors, &mut subject_rng(7, 3));
        assert_eq!(a, b);
        assert_eq!(a.noise_std, 0.01);
        a.validate().unwrap();
    }

    #[test]
    fn prior_means_match_monte_carlo() {
        let priors = PriorConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let draws: Vec<PkpdParams> = (0..n).map(|_| sample_patient_params(&priors, &mut rng)).collect();
        let q = priors.type_one_probability;
        let expected = [
            ("k", priors.k.mean()),
            ("rho", (1.0 - q) * priors.rho[0].mean() + q * priors.rho[1].mean()),
            ("beta_c", priors.beta_c.mean()),
            ("alpha_r", priors.alpha_r.mean()),
            ("beta_r", priors.alpha_r.mean() / priors.alpha_beta_ratio),
            ("initial_volume", priors.initial_volume.mean()),
            ("patient_type", q),
        ];
        for (name, mean) in expected {
            let xs: Vec<f64> = draws
                .iter()
                .map(|p| match name {
                    "k" => p.k,
                    "rho" => p.rho,
                    "beta_c" => p.beta_c,
                    "alpha_r" => p.alpha_r,
                    "beta_r" => p.beta_r,
                    "initial_volume" => p.initial_volume,
                    _ => f64::from(p.patient_type),
                })
                .collect();
            let m = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (var / n as f64).sqrt();
            assert!((m - mean).abs() <= 3.0 * se, "{name}: empirical {m} vs prior {mean} (se {se})");
        }
    }

    #[test]
    fn volume_step_hand_values() {
        let p = fixed_params();
        let cap = PolicyParams::with_gamma(0.0).volume_cap();
        // fixed point at the carrying capacity
        assert_eq!(tumor_volume_step(30.0, 0.0, 0.0, &p, 0.0, cap).unwrap(), 30.0);
        let v = tumor_volume_step(15.0, 0.0, 0.0, &p, 0.0, cap).unwrap();
        assert_relative_eq!(v, 15.0 * (1.0 + 0.1 * 2f64.ln()), epsilon = 1e-12);
        assert_relative_eq!(v, 16.0397, epsilon = 1e-4);
        let chemo_only = PkpdParams { rho: 0.0, ..p };
        let v = tumor_volume_step(10.0, 5.0, 0.0, &chemo_only, 0.0, cap).unwrap();
        assert_relative_eq!(v, 8.6, epsilon = 1e-12);
    }

    #[test]
    fn volume_step_rejects_nonpositive() {
        let p = fixed_params();
        assert!(matches!(tumor_volume_step(0.0, 0.0, 0.0, &p, 0.0, 100.0), Err(Error::Domain(_))));
        assert!(tumor_volume_step(-1.0, 0.0, 0.0, &p, 0.0, 100.0).is_err());
    }

    #[test]
    fn fixed_point_holds_for_prior_draws() {
        let priors = PriorConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let p = sample_patient_params(&priors, &mut rng);
            assert_eq!(tumor_volume_step(p.k, 0.0, 0.0, &p, 0.0, 1e9).unwrap(), p.k);
        }
    }

    #[test]
    fn assignment_probability_values() {
        let pp = PolicyParams::with_gamma(10.0);
        assert_eq!(assignment_probability(6.5, 10.0, pp.delta_c, pp.d_max), 0.5);
        assert_eq!(assignment_probability(11.0, 0.0, pp.delta_c, pp.d_max), 0.5);
        let p = assignment_probability(13.0, 10.0, pp.delta_c, pp.d_max);
        assert_relative_eq!(p, 1.0 / (1.0 + (-5f64).exp()), epsilon = 1e-15);
        assert_relative_eq!(p, 0.993307, epsilon = 1e-6);
        let mut last = 0.0;
        for i in 0..=130 {
            let p = assignment_probability(i as f64 * 0.1, 10.0, pp.delta_c, pp.d_max);
            assert!(p > last && p < 1.0);
            last = p;
        }
    }

    #[test]
    fn unconfounded_policy_is_a_fair_coin() {
        let priors = PriorConfig::default();
        let pp = PolicyParams::with_gamma(0.0);
        let mut chemo = 0.0;
        let mut steps = 0.0;
        for i in 0..200u64 {
            let mut rng = subject_rng(99, i);
            let p = sample_patient_params(&priors, &mut rng);
            let traj = simulate_trajectory(&p, &pp, 50, i, &mut rng).unwrap();
            chemo += traj.treatments.column(CHEMO).sum();
            steps += 50.0;
        }
        let freq = chemo / steps;
        assert!((0.48..=0.52).contains(&freq), "chemo frequency {freq}");
    }

    #[test]
    fn trajectories_are_deterministic() {
        let priors = PriorConfig::default();
        let pp = PolicyParams::with_gamma(10.0);
        let run = || {
            let mut rng = subject_rng(3, 0);
            let p = sample_patient_params(&priors, &mut rng);
            simulate_trajectory(&p, &pp, 60, 0, &mut rng).unwrap()
        };
        let a = run();
        assert_eq!(a.len(), 60);
        assert_eq!(a, run());
        assert!(a.outcomes.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn rollout_under_factual_plan_replays_trajectory() {
        let priors = PriorConfig::default();
        let pp = PolicyParams::with_gamma(10.0);
        let mut rng = subject_rng(1, 2);
        let p = sample_patient_params(&priors, &mut rng);
        let traj = simulate_trajectory(&p, &pp, 60, 2, &mut rng).unwrap();
        let noise = &traj.sim.as_ref().unwrap().noise;
        for t in [1usize, 10, 40, 54] {
            let plan = traj.treatments.slice(s![t - 1..t + 5, ..]).to_owned();
            let out = counterfactual_rollout(&traj.truncated(t), &plan, &p, &pp, 2, &mut RecordedNoise(noise)).unwrap();
            assert_eq!(out[0], traj.outcomes.slice(s![t..t + 6, ..]));
            assert_eq!(out[0], out[1]);
        }
    }

    #[test]
    fn noise_free_rollouts_agree() {
        let p = fixed_params();
        let pp = PolicyParams::with_gamma(10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let traj = simulate_trajectory(&p, &pp, 20, 0, &mut rng).unwrap();
        let plan = Array2::from_shape_vec((3, 2), vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let out = counterfactual_rollout(&traj.truncated(10), &plan, &p, &pp, 3, &mut ResampledNoise(&mut rng)).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out[0], out[1]);
        assert_eq!(out[1], out[2]);
        let ten = counterfactual_rollout(&traj.truncated(10), &plan, &p, &pp, 10, &mut ResampledNoise(&mut rng)).unwrap();
        assert_eq!(ten.len(), 10);
    }

    #[test]
    fn rollout_rejects_bad_input() {
        let p = fixed_params();
        let pp = PolicyParams::with_gamma(10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let traj = simulate_trajectory(&p, &pp, 5, 0, &mut rng).unwrap();
        let plan = Array2::zeros((2, 2));
        assert!(counterfactual_rollout(&traj.truncated(0), &plan, &p, &pp, 1, &mut ResampledNoise(&mut rng)).is_err());
        let bad = Array2::from_elem((2, 2), 0.5);
        assert!(counterfactual_rollout(&traj, &bad, &p, &pp, 1, &mut ResampledNoise(&mut rng)).is_err());
    }

    #[test]
    fn domain_split_sizes() {
        let priors = PriorConfig::default();
        let src = DomainSpec::full_source(0);
        assert_eq!((src.gamma, src.n_train, src.n_val, src.n_test, src.horizon), (10.0, 10_000, 1_000, 1_000, 60));
        let tgt = DomainSpec::full_target(0);
        assert_eq!((tgt.gamma, tgt.n_train, tgt.n_val, tgt.n_test), (0.0, 100, 1_000, 1_000));

        let small = DomainSpec {
            n_train: 0,
            n_val: 3,
            n_test: 4,
            horizon: 12,
            ..DomainSpec::desk_target(1)
        };
        let ds = generate_domain_dataset(&small, &priors).unwrap();
        assert_eq!(ds.split(Split::Train).len(), 0);
        assert_eq!(ds.split(Split::Val).len(), 3);
        assert_eq!(ds.split(Split::Test).len(), 4);
        let mut ids: Vec<u64> = Split::ALL.iter().flat_map(|&s| ds.split(s).iter().map(|t| t.id)).collect();
        ids.dedup();
        assert_eq!(ids.len(), 7);
        // fresh parameters per subject
        let val = ds.split(Split::Val);
        assert_ne!(val[0].sim.as_ref().unwrap().params, val[1].sim.as_ref().unwrap().params);
    }
}
