use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{DomainDataset, History, NormStats, Split, Trajectory};
use crate::encoder::EncoderState;
use crate::error::{Error, Result};
use crate::harness::config::{EvalConfig, ExperimentConfig, Setting};
use crate::harness::metrics::{baseline_last_value, rmse, MethodMetrics, MetricsReport, RunRecord, SeedMetrics};
use crate::predictor::{finetune, CostarModel, FinetuneConfig};
use crate::sim::{counterfactual_rollout, generate_domain_dataset, PolicyParams, RecordedNoise};
use crate::ssl::{pretrain, untrained_encoder, SSLConfig};

pub const METHOD_COSTAR: &str = "COSTAR";
pub const METHOD_NO_SSL: &str = "COSTAR (SSL: none)";
pub const METHOD_LAST_VALUE: &str = "Last value";

/// Counterfactual queries on one raw test trajectory: for each anchor `t`,
/// a sampled plan and the simulator's outcomes under it.
#[derive(Clone, Debug)]
pub struct EvalCase {
    pub trajectory: usize,
    pub anchors: Vec<usize>,
    pub plans: Vec<Array2<f64>>,
    pub truths: Vec<Array2<f64>>,
}

/// Draw one uniform random plan per anchor and roll the simulator forward
/// under it with the trajectory's recorded noise.
pub fn build_eval_cases(trajs: &[Trajectory], policy: &PolicyParams, tau: usize, cfg: &EvalConfig, seed: u64) -> Result<Vec<EvalCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(7);
    let n = cfg.max_trajectories.map_or(trajs.len(), |m| m.min(trajs.len()));
    let mut cases = Vec::with_capacity(n);
    for (index, traj) in trajs[..n].iter().enumerate() {
        let sim = traj
            .sim
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("trajectory {} carries no simulator state for ground truth", traj.id)))?;
        if traj.len() <= tau {
            continue;
        }
        let d_a = traj.d_a();
        let mut case = EvalCase {
            trajectory: index,
            anchors: Vec::new(),
            plans: Vec::new(),
            truths: Vec::new(),
        };
        for t in (1..=traj.len() - tau).step_by(cfg.anchor_stride) {
            let plan = Array2::from_shape_fn((tau, d_a), |_| f64::from(u8::from(rng.random::<f64>() < cfg.plan_probability)));
            let truth = counterfactual_rollout(&traj.truncated(t), &plan, &sim.params, policy, 1, &mut RecordedNoise(&sim.noise))?
                .pop()
                .expect("one rollout sample");
            case.anchors.push(t);
            case.plans.push(plan);
            case.truths.push(truth);
        }
        cases.push(case);
    }
    Ok(cases)
}

/// Per-horizon RMSE of `model` on the cases, in the original outcome scale.
pub fn evaluate_model(model: &CostarModel, trajs: &[Trajectory], cases: &[EvalCase]) -> Result<(Vec<f64>, usize)> {
    let mut est = Vec::new();
    let mut truth = Vec::new();
    for case in cases {
        est.extend(model.estimate_anchors(&trajs[case.trajectory], &case.anchors, &case.plans)?);
        truth.extend(case.truths.iter().cloned());
    }
    Ok((rmse(&est, &truth)?, est.len()))
}

pub fn evaluate_last_value(trajs: &[Trajectory], cases: &[EvalCase], tau: usize) -> Result<(Vec<f64>, usize)> {
    let mut est = Vec::new();
    let mut truth = Vec::new();
    for case in cases {
        let traj = &trajs[case.trajectory];
        for (&t, y) in case.anchors.iter().zip(&case.truths) {
            est.push(baseline_last_value(&History::from_trajectory(traj, t), tau));
            truth.push(y.clone());
        }
    }
    Ok((rmse(&est, &truth)?, est.len()))
}

fn provenance() -> String {
    let rev = std::process::Command::new("git")
        .args(["rev-parse", "--short", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into());
    format!("costar-core {} (rev {rev})", env!("CARGO_PKG_VERSION"))
}

struct SeedOutcome {
    methods: Vec<(String, SeedMetrics)>,
    record: RunRecord,
}

fn normalized(norm: &NormStats, trajs: &[Trajectory]) -> Vec<Trajectory> {
    trajs.iter().map(|t| norm.apply(t)).collect()
}

fn seed_dir(out: Option<&Path>, seed: u64) -> Result<Option<std::path::PathBuf>> {
    match out {
        Some(dir) => {
            let d = dir.join(format!("seed-{seed}"));
            fs::create_dir_all(&d)?;
            Ok(Some(d))
        }
        None => Ok(None),
    }
}

fn save_json<T: serde::Serialize>(dir: Option<&Path>, name: &str, value: &T) -> Result<()> {
    if let Some(dir) = dir {
        serde_json::to_writer(BufWriter::new(File::create(dir.join(name))?), value)?;
    }
    Ok(())
}

/// Source training (and target fine-tuning in the data-efficient setting)
/// from a given initial encoder.
fn fit_variant(
    cfg: &ExperimentConfig,
    seed: u64,
    encoder: EncoderState,
    norm: &NormStats,
    src: (&[Trajectory], &[Trajectory]),
    tgt: Option<(&[Trajectory], &[Trajectory])>,
) -> Result<(CostarModel, usize, f64)> {
    let mut ft = FinetuneConfig {
        scheme: cfg.scheme,
        seed,
        ..cfg.finetune.clone()
    };
    ft.predictor.tau = cfg.tau;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(6);
    let model = CostarModel::new(encoder, ft.predictor.clone(), norm.clone(), cfg.scheme, &mut rng)?;
    let mut outcome = finetune(model, src.0, src.1, &ft)?;
    if let Some((train, val)) = tgt {
        let target_ft = FinetuneConfig {
            epochs: cfg.target_epochs,
            seed: seed.wrapping_add(1),
            ..ft
        };
        outcome = finetune(outcome.model, train, val, &target_ft)?;
    }
    Ok((outcome.model, outcome.best_epoch, outcome.best_val_metric))
}

fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedOutcome> {
    let start = Instant::now();
    let dir = seed_dir(cfg.out.as_deref(), seed)?;
    let source = generate_domain_dataset(&ExperimentConfig::domain_for_run(&cfg.source, seed), &cfg.priors)?;
    let target = match cfg.setting {
        Setting::Supervised => None,
        _ => Some(generate_domain_dataset(&ExperimentConfig::domain_for_run(&cfg.target, seed), &cfg.priors)?),
    };
    // The split scored at the end; its access count must stay at zero until then.
    let eval_data: &DomainDataset = target.as_ref().unwrap_or(&source);
    let eval_reads_at_start = eval_data.access().count(Split::Test);

    let norm = NormStats::fit_with(source.split(Split::Train), cfg.outcome_transform)?;
    let src_train = normalized(&norm, source.split(Split::Train));
    let src_val = normalized(&norm, source.split(Split::Val));
    let tgt_fit = match (&target, cfg.setting) {
        (Some(t), Setting::DataEfficient) => {
            let train = t.split(Split::Train);
            let budget = cfg.finetune_budget.min(train.len());
            if budget < cfg.finetune_budget {
                tracing::warn!(budget = cfg.finetune_budget, available = train.len(), "fine-tune budget exceeds target training split");
            }
            Some((normalized(&norm, &train[..budget]), normalized(&norm, t.split(Split::Val))))
        }
        _ => None,
    };
    let tgt_ref = tgt_fit.as_ref().map(|(a, b)| (a.as_slice(), b.as_slice()));

    let mut variants: Vec<(&str, EncoderState)> = Vec::new();
    let mut pretrain_best = (None, None);
    if cfg.pretrain {
        let ssl = SSLConfig { seed, ..cfg.ssl.clone() };
        let mut log = match &dir {
            Some(d) => Some(BufWriter::new(File::create(d.join("pretrain_log.jsonl"))?)),
            None => None,
        };
        let outcome = pretrain(&src_train, &src_val, cfg.encoder.clone(), &ssl, log.as_mut().map(|w| w as &mut dyn Write))?;
        if let Some(w) = log.as_mut() {
            w.flush()?;
        }
        save_json(dir.as_deref(), "pretrain.json", &outcome.checkpoint)?;
        pretrain_best = (Some(outcome.checkpoint.best_epoch), Some(outcome.checkpoint.best_val_loss));
        variants.push((METHOD_COSTAR, EncoderState::from_checkpoint(&outcome.checkpoint.encoder)?));
    }
    if !cfg.pretrain || cfg.ssl_ablation {
        // Same initialization the pretraining run started from.
        variants.push((METHOD_NO_SSL, untrained_encoder(cfg.encoder.clone(), seed)?));
    }

    let mut models = Vec::new();
    let mut finetune_records = Vec::new();
    for (name, encoder) in variants {
        let (model, best_epoch, best_val) = fit_variant(cfg, seed, encoder, &norm, (&src_train, &src_val), tgt_ref)?;
        let file = if name == METHOD_COSTAR { "model.json" } else { "model_no_ssl.json" };
        save_json(dir.as_deref(), file, &model.checkpoint(best_epoch, best_val)?)?;
        finetune_records.push((name.to_string(), best_epoch, best_val));
        models.push((name, model));
    }

    let eval_reads_before_eval = eval_data.access().count(Split::Test) - eval_reads_at_start;
    if eval_reads_before_eval != 0 {
        return Err(Error::InvalidArgument(format!(
            "evaluation split was read {eval_reads_before_eval} times during training"
        )));
    }
    let test = eval_data.split(Split::Test);
    let policy = eval_data.meta.spec.policy();
    let cases = build_eval_cases(test, &policy, cfg.tau, &cfg.eval, seed)?;
    let mut methods = Vec::new();
    for (name, model) in &models {
        let (r, n) = evaluate_model(model, test, &cases)?;
        tracing::info!(seed, method = *name, rmse = ?r, "evaluated");
        methods.push((name.to_string(), SeedMetrics::new(seed, r, n)));
    }
    let (r, n) = evaluate_last_value(test, &cases, cfg.tau)?;
    methods.push((METHOD_LAST_VALUE.to_string(), SeedMetrics::new(seed, r, n)));

    Ok(SeedOutcome {
        methods,
        record: RunRecord {
            seed,
            pretrain_best_epoch: pretrain_best.0,
            pretrain_best_val_loss: pretrain_best.1,
            finetune: finetune_records,
            eval_split_reads_before_eval: eval_reads_before_eval,
            wall_clock_secs: start.elapsed().as_secs_f64(),
        },
    })
}

/// Run every seed of `cfg` and assemble the report.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    let start = Instant::now();
    let mut outcomes = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        tracing::info!(seed, setting = %cfg.setting, "starting run");
        outcomes.push(run_seed(cfg, seed)?);
    }
    let names: Vec<String> = outcomes[0].methods.iter().map(|(n, _)| n.clone()).collect();
    let methods = names
        .iter()
        .map(|name| {
            let per_seed = outcomes
                .iter()
                .map(|o| o.methods.iter().find(|(n, _)| n == name).map(|(_, m)| m.clone()).expect("same methods per seed"))
                .collect();
            MethodMetrics::from_seeds(name.clone(), per_seed)
        })
        .collect::<Result<Vec<_>>>()?;
    let report = MetricsReport {
        setting: cfg.setting,
        tau: cfg.tau,
        seeds: cfg.seeds.clone(),
        methods,
        runs: outcomes.into_iter().map(|o| o.record).collect(),
        wall_clock_secs: start.elapsed().as_secs_f64(),
        config_hash: cfg.hash()?,
        provenance: provenance(),
    };
    report.validate()?;
    Ok(report)
}
