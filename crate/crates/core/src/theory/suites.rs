use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{counterfactual_rollout, sample_patient_params, simulate_trajectory, subject_rng, PolicyParams, PriorConfig, RecordedNoise};
use crate::theory::bounds::{decompose_risk, verify_l2_01_bound};
use crate::theory::graph::{check_assumptions, expansions, PositivePairGraph};
use crate::theory::pfa::{pfa_fit, pfa_fit_uniform, LabeledRep};
use crate::theory::spectral::{fit_spectral_representations, SpectralFitConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TheorySuite {
    Expansion,
    Pfa,
    Lemma,
    Decomposition,
}

impl TheorySuite {
    pub const ALL: [TheorySuite; 4] = [TheorySuite::Expansion, TheorySuite::Pfa, TheorySuite::Lemma, TheorySuite::Decomposition];
}

impl fmt::Display for TheorySuite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TheorySuite::Expansion => "expansion",
            TheorySuite::Pfa => "pfa",
            TheorySuite::Lemma => "lemma",
            TheorySuite::Decomposition => "decomposition",
        })
    }
}

impl FromStr for TheorySuite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TheorySuite::ALL
            .into_iter()
            .find(|t| t.to_string() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown suite `{s}` (expected expansion, pfa, lemma or decomposition)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub expansion_instances: usize,
    pub max_vertices: usize,
    pub lemma_instances: usize,
    pub pfa_seeds: usize,
    pub pfa_points: usize,
    pub decomposition_instances: usize,
    pub decomposition_samples: usize,
    /// Universal constant of the relative-expansion condition (reported only).
    pub c: f64,
    pub t_power: u32,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            expansion_instances: 300,
            max_vertices: 12,
            lemma_instances: 10_000,
            pfa_seeds: 5,
            pfa_points: 100,
            decomposition_instances: 20,
            decomposition_samples: 100,
            c: 4.0,
            t_power: 3,
        }
    }
}

/// One checked instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: usize,
    pub kind: String,
    pub values: BTreeMap<String, f64>,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: TheorySuite,
    pub seed: u64,
    pub config: SuiteConfig,
    pub n_passed: usize,
    pub n_failed: usize,
    pub instances: Vec<InstanceRecord>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.n_failed == 0 && self.n_passed > 0
    }

    pub fn of_kind(&self, kind: &str) -> impl Iterator<Item = &InstanceRecord> {
        let kind = kind.to_string();
        self.instances.iter().filter(move |r| r.kind == kind)
    }
}

fn record(id: usize, kind: &str, values: &[(&str, f64)], passed: bool) -> InstanceRecord {
    InstanceRecord {
        id,
        kind: kind.into(),
        // Undefined quantities are left out rather than stored as NaN.
        values: values.iter().filter(|(_, v)| v.is_finite()).map(|(k, v)| (k.to_string(), *v)).collect(),
        passed,
    }
}

pub fn run_suite(suite: TheorySuite, seed: u64, cfg: &SuiteConfig) -> Result<SuiteReport> {
    let instances = match suite {
        TheorySuite::Expansion => expansion_suite(seed, cfg)?,
        TheorySuite::Pfa => pfa_suite(seed, cfg)?,
        TheorySuite::Lemma => lemma_suite(seed, cfg)?,
        TheorySuite::Decomposition => decomposition_suite(seed, cfg)?,
    };
    let n_passed = instances.iter().filter(|r| r.passed).count();
    Ok(SuiteReport {
        suite,
        seed,
        config: cfg.clone(),
        n_passed,
        n_failed: instances.len() - n_passed,
        instances,
    })
}

/// Random clustered graph: dense within clusters, sparse and light across.
pub fn random_clustered_graph<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Result<PositivePairGraph> {
    let m = m.clamp(1, n);
    let clusters: Vec<usize> = (0..n).map(|h| if h < m { h } else { rng.random_range(0..m) }).collect();
    let density = rng.random_range(0.3..1.0);
    let cross = rng.random_range(0.0..0.3);
    let mut raw = DMatrix::zeros(n, n);
    for i in 0..n {
        raw[(i, i)] = rng.random_range(0.01..0.2);
        for j in 0..i {
            let same = clusters[i] == clusters[j];
            if rng.random::<f64>() < if same { density } else { density * 0.5 } {
                let w = rng.random::<f64>() * if same { 1.0 } else { cross };
                raw[(i, j)] = w;
                raw[(j, i)] = w;
            }
        }
    }
    PositivePairGraph::from_unnormalized(raw, clusters)
}

/// Quantities of the cluster conditions by direct enumeration, without any
/// incremental bookkeeping: (alpha, gamma, rho, cross).
fn enumerate_assumptions(g: &PositivePairGraph) -> (f64, Option<f64>, Option<f64>, Option<f64>) {
    let n = g.n_vertices();
    let w = |a: usize, b: usize| g.weights()[(a, b)];
    let deg = |a: usize| (0..n).map(|b| w(a, b)).sum::<f64>();
    let mut alpha: f64 = 0.0;
    let mut gamma: Option<f64> = None;
    for c in 0..g.n_clusters() {
        let members: Vec<usize> = (0..n).filter(|&h| g.cluster_of(h) == c).collect();
        for &h in &members {
            let out: f64 = (0..n).filter(|&h2| g.cluster_of(h2) != c).map(|h2| w(h, h2)).sum();
            alpha = alpha.max(out / deg(h));
        }
        let w_c: f64 = members.iter().map(|&h| deg(h)).sum();
        for mask in 1u64..(1u64 << members.len()) {
            let inside = |i: usize| mask >> i & 1 == 1;
            let w_a: f64 = (0..members.len()).filter(|&i| inside(i)).map(|i| deg(members[i])).sum();
            if w_a > w_c / 2.0 * (1.0 + 1e-12) {
                continue;
            }
            let mut cut = 0.0;
            for i in (0..members.len()).filter(|&i| inside(i)) {
                for j in (0..members.len()).filter(|&j| !inside(j)) {
                    cut += w(members[i], members[j]);
                }
            }
            let phi = cut / w_a;
            gamma = Some(gamma.map_or(phi, |g: f64| g.min(phi)));
        }
    }
    let ratio = |h: usize, target: usize| (0..n).filter(|&h2| g.cluster_of(h2) == target).map(|h2| w(h, h2)).sum::<f64>() / deg(h);
    let mut rho: Option<f64> = None;
    let mut cross: Option<f64> = None;
    for (i, &(_, t_i)) in g.pairs().iter().enumerate() {
        for (j, &(s_j, _)) in g.pairs().iter().enumerate() {
            for h in (0..n).filter(|&h| g.cluster_of(h) == t_i) {
                let r = ratio(h, s_j);
                if i == j {
                    rho = Some(rho.map_or(r, |v: f64| v.min(r)));
                } else {
                    cross = Some(cross.map_or(r, |v: f64| v.max(r)));
                }
            }
        }
    }
    (alpha, gamma, rho, cross)
}

/// Agreement required between incremental and direct enumeration.
pub const ENUMERATION_TOL: f64 = 1e-10;

fn close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() <= ENUMERATION_TOL,
        (None, None) => true,
        _ => false,
    }
}

fn expansion_suite(seed: u64, cfg: &SuiteConfig) -> Result<Vec<InstanceRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(cfg.expansion_instances);
    for id in 0..cfg.expansion_instances {
        let n = rng.random_range(2..=cfg.max_vertices.max(2));
        let m = rng.random_range(1..=n.min(4));
        let mut g = random_clustered_graph(n, m, &mut rng)?;
        let m = g.n_clusters();
        if m >= 2 {
            let pairs: Vec<(usize, usize)> = (0..m / 2).map(|i| (2 * i, 2 * i + 1)).collect();
            g = g.with_pairs(pairs)?;
        }
        let report = check_assumptions(&g, cfg.c)?;
        let (alpha, gamma, rho, cross) = enumerate_assumptions(&g);
        let agrees = (report.params.alpha - alpha).abs() <= ENUMERATION_TOL
            && close(report.params.gamma, gamma)
            && close(report.params.rho, rho)
            && close(report.max_cross_pair_expansion, cross);

        // A random disjoint split for the ordering property.
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let k = rng.random_range(1..n);
        let e = expansions(&g, &order[..k], &order[k..])?;
        let ordered = 0.0 <= e.phi_min && e.phi_min <= e.phi * (1.0 + 1e-12) && e.phi <= e.phi_max * (1.0 + 1e-12) && e.phi_max <= 1.0 + 1e-12;

        out.push(record(
            id,
            "graph",
            &[
                ("vertices", n as f64),
                ("clusters", m as f64),
                ("alpha", report.params.alpha),
                ("alpha_enumerated", alpha),
                ("gamma", report.params.gamma.unwrap_or(f64::NAN)),
                ("gamma_enumerated", gamma.unwrap_or(f64::NAN)),
                ("rho", report.params.rho.unwrap_or(f64::NAN)),
                ("rho_enumerated", rho.unwrap_or(f64::NAN)),
                ("phi", e.phi),
                ("phi_max", e.phi_max),
                ("phi_min", e.phi_min),
                ("ordered", f64::from(u8::from(ordered))),
            ],
            agrees && ordered,
        ));
    }
    Ok(out)
}

/// Two clusters of 2-D points around orthogonal centres, truncated at three
/// standard deviations so the instance is separable by construction.
pub fn separable_clusters<R: Rng + ?Sized>(per_cluster: usize, rng: &mut R) -> Result<Vec<(DVector<f64>, usize)>> {
    let centres = [[4.0, 0.0], [0.0, 4.0]];
    let sd = 0.5;
    let normal = Normal::new(0.0, sd).map_err(|e| Error::Domain(e.to_string()))?;
    let mut points = Vec::with_capacity(2 * per_cluster);
    for (label, c) in centres.iter().enumerate() {
        let mut drawn = 0;
        while drawn < per_cluster {
            let (dx, dy): (f64, f64) = (normal.sample(rng), normal.sample(rng));
            if (dx * dx + dy * dy).sqrt() <= 3.0 * sd {
                points.push((DVector::from_vec(vec![c[0] + dx, c[1] + dy]), label));
                drawn += 1;
            }
        }
    }
    Ok(points)
}

fn pfa_suite(seed: u64, cfg: &SuiteConfig) -> Result<Vec<InstanceRecord>> {
    let mut out = Vec::new();
    let outcomes = [DVector::from_element(1, 0.0), DVector::from_element(1, 1.0)];
    for s in 0..cfg.pfa_seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(s as u64));
        let per = (cfg.pfa_points / 2).max(1);
        let train = separable_clusters(per, &mut rng)?;
        let test = separable_clusters(per, &mut rng)?;
        let labeled: Vec<LabeledRep> = train
            .iter()
            .map(|(r, c)| LabeledRep {
                rep: r.clone(),
                outcome: outcomes[*c].clone(),
            })
            .collect();
        let model = pfa_fit_uniform(&labeled, &outcomes, 0.0)?;
        let reps: Vec<DVector<f64>> = test.iter().map(|(r, _)| r.clone()).collect();
        let predicted = model.predict_many(&reps, cfg.t_power);
        let errors = predicted.iter().zip(&test).filter(|(p, (_, c))| *p != c).count();
        out.push(record(
            s,
            "gaussian",
            &[("train_points", train.len() as f64), ("test_points", test.len() as f64), ("errors", errors as f64)],
            errors == 0,
        ));
    }

    // Graph pipeline: spectral representations of a two-source/two-target
    // cluster graph, PFA fitted on source clusters, scored on target ones.
    for s in 0..cfg.pfa_seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1000 + s as u64));
        let g = source_target_graph(8, &mut rng)?;
        let report = check_assumptions(&g, cfg.c)?;
        let fit = fit_spectral_representations(
            &g,
            &SpectralFitConfig {
                k: 2 * g.n_clusters(),
                seed: seed.wrapping_add(s as u64),
                ..Default::default()
            },
        )?;
        let rep = |h: usize| DVector::from_iterator(fit.reps.ncols(), fit.reps.row(h).iter().copied());
        // Clusters 0,1 are sources with outcomes 0,1; clusters 2,3 their targets.
        let label = |h: usize| g.cluster_of(h) % 2;
        let labeled: Vec<LabeledRep> = (0..g.n_vertices())
            .filter(|&h| g.cluster_of(h) < 2)
            .map(|h| LabeledRep {
                rep: rep(h),
                outcome: outcomes[label(h)].clone(),
            })
            .collect();
        let model = pfa_fit(&fit.reps, g.degrees(), &labeled, &outcomes, 0.0)?;
        let targets: Vec<usize> = (0..g.n_vertices()).filter(|&h| g.cluster_of(h) >= 2).collect();
        let predicted = model.predict_many(&targets.iter().map(|&h| rep(h)).collect::<Vec<_>>(), cfg.t_power);
        let errors = predicted.iter().zip(&targets).filter(|(p, &h)| **p != label(h)).count();
        out.push(record(
            cfg.pfa_seeds + s,
            "graph",
            &[
                ("vertices", g.n_vertices() as f64),
                ("alpha", report.params.alpha),
                ("gamma", report.params.gamma.unwrap_or(f64::NAN)),
                ("rho", report.params.rho.unwrap_or(f64::NAN)),
                ("spectral_loss", fit.final_loss),
                ("target_errors", errors as f64),
            ],
            errors == 0,
        ));
    }
    Ok(out)
}

/// Four clusters of `size` vertices: sources 0 and 1, targets 2 and 3, with
/// each target linked more strongly to its own source than to the other.
pub fn source_target_graph<R: Rng + ?Sized>(size: usize, rng: &mut R) -> Result<PositivePairGraph> {
    let n = 4 * size;
    let clusters: Vec<usize> = (0..n).map(|h| h / size).collect();
    let mut raw = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let (ci, cj) = (clusters[i], clusters[j]);
            let scale = if ci == cj {
                1.0
            } else if ci % 2 == cj % 2 {
                0.3
            } else {
                0.002
            };
            let w = scale * rng.random_range(0.5..1.0);
            raw[(i, j)] = w;
            raw[(j, i)] = w;
        }
    }
    PositivePairGraph::from_unnormalized(raw, clusters)?.with_pairs(vec![(0, 2), (1, 3)])
}

fn ball_point<R: Rng + ?Sized>(dim: usize, b: f64, rng: &mut R) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 1.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    let radius = b * rng.random::<f64>().powf(0.25);
    v.iter_mut().for_each(|x| *x *= radius);
    v
}

fn lemma_suite(seed: u64, cfg: &SuiteConfig) -> Result<Vec<InstanceRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(cfg.lemma_instances);
    for id in 0..cfg.lemma_instances {
        let b = rng.random_range(0.05..10.0);
        let eps = rng.random_range(1e-3..2.0 * b);
        let dim = rng.random_range(1..=3);
        let n = rng.random_range(1..=40);
        let truths: Vec<Vec<f64>> = (0..n).map(|_| ball_point(dim, b, &mut rng)).collect();
        // Every fourth instance uses antipodal predictions, the saturating case.
        let preds: Vec<Vec<f64>> = if id % 4 == 0 {
            truths
                .iter()
                .map(|y| {
                    let norm = y.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if norm > 0.0 {
                        y.iter().map(|x| -x * b / norm).collect()
                    } else {
                        y.clone()
                    }
                })
                .collect()
        } else {
            (0..n).map(|_| ball_point(dim, b, &mut rng)).collect()
        };
        let c = verify_l2_01_bound(&preds, &truths, eps, b)?;
        out.push(record(
            id,
            "bounded",
            &[("b", b), ("epsilon", eps), ("n", n as f64), ("lhs", c.lhs), ("zero_one", c.zero_one), ("rhs", c.rhs)],
            c.holds,
        ));
    }
    Ok(out)
}

/// One simulated sample for the decomposition: a truncated history, its
/// factual next-step plan and the ground truth under the evaluated plan.
struct PlanSample {
    factual_plan: [u8; 2],
    last_outcome: f64,
    truth_under_plan: f64,
    factual_next: f64,
}

fn decomposition_suite(seed: u64, cfg: &SuiteConfig) -> Result<Vec<InstanceRecord>> {
    let priors = PriorConfig::default();
    let policy = PolicyParams::with_gamma(0.0);
    let anchor = 6;
    let mut out = Vec::with_capacity(cfg.decomposition_instances);
    for id in 0..cfg.decomposition_instances {
        let mut pick = subject_rng(seed, u64::MAX - id as u64);
        let plan = [pick.random_range(0..2u8), pick.random_range(0..2u8)];
        let plan_arr = Array2::from_shape_vec((1, 2), vec![f64::from(plan[0]), f64::from(plan[1])]).expect("1x2 plan");
        let mut samples = Vec::with_capacity(cfg.decomposition_samples);
        for i in 0..cfg.decomposition_samples {
            let mut rng = subject_rng(seed.wrapping_add(id as u64 * 1_000_003), i as u64);
            let p = sample_patient_params(&priors, &mut rng);
            let traj = simulate_trajectory(&p, &policy, anchor + 1, i as u64, &mut rng)?;
            let sim = traj.sim.as_ref().expect("simulated trajectory");
            let prefix = traj.truncated(anchor);
            let truth = counterfactual_rollout(&prefix, &plan_arr, &p, &policy, 1, &mut RecordedNoise(&sim.noise))?;
            samples.push(PlanSample {
                factual_plan: [traj.treatments[[anchor - 1, 0]] as u8, traj.treatments[[anchor - 1, 1]] as u8],
                last_outcome: traj.outcomes[[anchor - 1, 0]],
                truth_under_plan: truth[0][[0, 0]],
                factual_next: traj.outcomes[[anchor, 0]],
            });
        }
        // Under the factual plan the rollout must replay the recorded outcome.
        let consistent = samples
            .iter()
            .filter(|s| s.factual_plan == plan)
            .all(|s| s.truth_under_plan == s.factual_next);
        let loss = |s: &PlanSample| (s.last_outcome - s.truth_under_plan).powi(2);
        let d = decompose_risk(&samples, &plan, |s| s.factual_plan, loss)?;
        out.push(record(
            id,
            "simulated",
            &[
                ("p_plan", d.p_plan),
                ("risk_factual", d.risk_factual),
                ("risk_counterfactual", d.risk_counterfactual.unwrap_or(f64::NAN)),
                ("risk_total", d.risk_total),
                ("recombined", d.recombined),
                ("gap", (d.risk_total - d.recombined).abs()),
            ],
            d.holds && consistent,
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SuiteConfig {
        SuiteConfig {
            expansion_instances: 40,
            lemma_instances: 200,
            decomposition_instances: 3,
            decomposition_samples: 60,
            ..Default::default()
        }
    }

    #[test]
    fn every_suite_passes_small() {
        for suite in TheorySuite::ALL {
            let report = run_suite(suite, 7, &small()).unwrap();
            let failed: Vec<_> = report.instances.iter().filter(|r| !r.passed).collect();
            assert!(report.passed(), "{suite}: {failed:?}");
        }
    }

    #[test]
    fn suite_names_round_trip() {
        for suite in TheorySuite::ALL {
            assert_eq!(suite.to_string().parse::<TheorySuite>().unwrap(), suite);
        }
        assert!("spectral".parse::<TheorySuite>().is_err());
    }

    #[test]
    fn reports_are_deterministic() {
        let a = run_suite(TheorySuite::Expansion, 3, &small()).unwrap();
        let b = run_suite(TheorySuite::Expansion, 3, &small()).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}
