use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use costar_core::data::{Domain, DomainDataset, NormStats, Split, Trajectory};
use costar_core::encoder::EncoderState;
use costar_core::harness::{
    build_eval_cases, emit_report, evaluate_last_value, evaluate_model, load_report, run_experiment, summary_table, ExperimentConfig,
    MethodMetrics, MetricsReport, RunRecord, SeedMetrics, Setting, METHOD_COSTAR, METHOD_LAST_VALUE,
};
use costar_core::predictor::{finetune, CostarModel, FinetuneConfig, ModelCheckpoint, WeightScheme};
use costar_core::sim::{generate_domain_dataset, DomainSpec};
use costar_core::ssl::{pretrain, untrained_encoder, PretrainCheckpoint, SSLConfig};
use costar_core::theory::{run_suite, SuiteConfig, TheorySuite};
use rand::SeedableRng;
use serde::{de::DeserializeOwned, Serialize};

#[derive(Parser, Debug)]
#[command(name = "costar", version, about = "Counterfactual outcome estimation over time")]
struct Cli {
    /// Experiment configuration (TOML); missing keys take desk-scale defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for data generation and training (overrides the config's seed list).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Pin the tensor backend to one thread so every reduction runs in a fixed order.
    #[arg(long, global = true)]
    deterministic: bool,

    /// Output file or directory, depending on the subcommand.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DomainArg {
    Source,
    Target,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SchemeArg {
    Uniform,
    Inv,
    #[value(name = "sq_inv", alias = "sq.inv")]
    SqInv,
}

impl From<SchemeArg> for WeightScheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Uniform => WeightScheme::Uniform,
            SchemeArg::Inv => WeightScheme::Inv,
            SchemeArg::SqInv => WeightScheme::SqInv,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SuiteArg {
    Expansion,
    Pfa,
    Lemma,
    Decomposition,
}

impl From<SuiteArg> for TheorySuite {
    fn from(s: SuiteArg) -> Self {
        match s {
            SuiteArg::Expansion => TheorySuite::Expansion,
            SuiteArg::Pfa => TheorySuite::Pfa,
            SuiteArg::Lemma => TheorySuite::Lemma,
            SuiteArg::Decomposition => TheorySuite::Decomposition,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SettingArg {
    ZeroShot,
    DataEfficient,
    Supervised,
}

impl From<SettingArg> for Setting {
    fn from(s: SettingArg) -> Self {
        match s {
            SettingArg::ZeroShot => Setting::ZeroShot,
            SettingArg::DataEfficient => Setting::DataEfficient,
            SettingArg::Supervised => Setting::Supervised,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a domain dataset (record file plus metadata sidecar).
    Simulate {
        /// Which domain spec of the config to start from.
        #[arg(long, value_enum, default_value = "source")]
        domain: DomainArg,
        /// Treatment-assignment confounding strength.
        #[arg(long)]
        gamma: Option<f64>,
        /// Steps per trajectory.
        #[arg(long)]
        horizon: Option<usize>,
        /// Train, validation and test sizes, e.g. `1000,200,200`.
        #[arg(long, value_delimiter = ',')]
        splits: Option<Vec<usize>>,
    },
    /// Contrastive pretraining of the encoder on a dataset's train split.
    Pretrain {
        /// Dataset record file (default: $COSTAR_DATA_DIR/source.jsonl).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Fit encoder and decoder on factual outcomes.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Pretraining checkpoint; omitted means a randomly initialized encoder.
        #[arg(long)]
        encoder: Option<PathBuf>,
        #[arg(long, value_enum)]
        scheme: Option<SchemeArg>,
        #[arg(long)]
        tau: Option<usize>,
    },
    /// Counterfactual RMSE of a trained model and the last-value baseline on a test split.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        /// Dataset whose test split is scored (default: $COSTAR_DATA_DIR/target.jsonl).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        no_plots: bool,
    },
    /// Brute-force checks of the graph, classifier and bound statements.
    TheoryCheck {
        #[arg(long, value_enum)]
        suite: SuiteArg,
        /// Where to write the structured record of every instance.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Override the number of randomized instances.
        #[arg(long)]
        instances: Option<usize>,
    },
    /// Run the full evaluation protocol for every seed and write the report,
    /// or re-render an existing report.
    Report {
        #[arg(long, value_enum)]
        setting: Option<SettingArg>,
        /// Seeds to run, e.g. `0,1,2`.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Re-render this report.json instead of running experiments.
        #[arg(long)]
        from: Option<PathBuf>,
        #[arg(long)]
        no_plots: bool,
    },
}

fn data_dir() -> PathBuf {
    std::env::var_os("COSTAR_DATA_DIR").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("data"))
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            Ok(ExperimentConfig::from_toml(&text)?)
        }
        None => Ok(ExperimentConfig::default()),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(file)).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer(&mut w, value)?;
    w.flush()?;
    Ok(())
}

fn load_dataset(path: Option<PathBuf>, default_name: &str) -> Result<(PathBuf, DomainDataset)> {
    let path = path.unwrap_or_else(|| data_dir().join(default_name));
    let ds = DomainDataset::load(&path).with_context(|| format!("loading dataset {}", path.display()))?;
    Ok((path, ds))
}

fn normalized(norm: &NormStats, trajs: &[Trajectory]) -> Vec<Trajectory> {
    trajs.iter().map(|t| norm.apply(t)).collect()
}

fn simulate(cli: &Cli, cfg: &ExperimentConfig, domain: DomainArg, gamma: Option<f64>, horizon: Option<usize>, splits: Option<&[usize]>) -> Result<()> {
    let base = match domain {
        DomainArg::Source => &cfg.source,
        DomainArg::Target => &cfg.target,
    };
    let mut spec = DomainSpec {
        gamma: gamma.unwrap_or(base.gamma),
        horizon: horizon.unwrap_or(base.horizon),
        seed: cli.seed.unwrap_or(base.seed),
        ..base.clone()
    };
    if let Some(s) = splits {
        if s.len() != 3 {
            bail!("--splits takes three sizes (train,val,test), got {}", s.len());
        }
        (spec.n_train, spec.n_val, spec.n_test) = (s[0], s[1], s[2]);
    }
    let name = match spec.domain {
        Domain::Source => "source.jsonl",
        Domain::Target => "target.jsonl",
    };
    let out = cli.out.clone().unwrap_or_else(|| data_dir().join(name));
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let ds = generate_domain_dataset(&spec, &cfg.priors)?;
    ds.save(&out)?;
    println!(
        "wrote {} ({} / {} / {} trajectories of length {}, gamma = {})",
        out.display(),
        spec.n_train,
        spec.n_val,
        spec.n_test,
        spec.horizon,
        spec.gamma
    );
    Ok(())
}

fn run_pretrain(cli: &Cli, cfg: &ExperimentConfig, data: Option<PathBuf>) -> Result<()> {
    let (_, ds) = load_dataset(data, "source.jsonl")?;
    let norm = NormStats::fit_with(ds.split(Split::Train), cfg.outcome_transform)?;
    let train = normalized(&norm, ds.split(Split::Train));
    let val = normalized(&norm, ds.split(Split::Val));
    let ssl = SSLConfig {
        seed: cli.seed.unwrap_or(cfg.ssl.seed),
        ..cfg.ssl.clone()
    };
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("pretrain.json"));
    let log_path = out.with_extension("log.jsonl");
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut log = BufWriter::new(File::create(&log_path)?);
    let start = Instant::now();
    let outcome = pretrain(&train, &val, cfg.encoder.clone(), &ssl, Some(&mut log))?;
    log.flush()?;
    write_json(&out, &outcome.checkpoint)?;
    println!(
        "pretrained {} epochs in {:.1} s; best epoch {} (validation loss {:.4}); wrote {} and {}",
        ssl.epochs,
        start.elapsed().as_secs_f64(),
        outcome.checkpoint.best_epoch,
        outcome.checkpoint.best_val_loss,
        out.display(),
        log_path.display()
    );
    Ok(())
}

fn run_train(cli: &Cli, cfg: &ExperimentConfig, data: Option<PathBuf>, encoder: Option<PathBuf>, scheme: Option<SchemeArg>, tau: Option<usize>) -> Result<()> {
    let (_, ds) = load_dataset(data, "source.jsonl")?;
    let seed = cli.seed.unwrap_or(cfg.finetune.seed);
    let enc = match &encoder {
        Some(path) => {
            let ckpt: PretrainCheckpoint = read_json(path)?;
            EncoderState::from_checkpoint(&ckpt.encoder)?
        }
        None => untrained_encoder(cfg.encoder.clone(), seed)?,
    };
    let scheme: WeightScheme = scheme.map(Into::into).unwrap_or(cfg.scheme);
    let mut ft = FinetuneConfig {
        scheme,
        seed,
        ..cfg.finetune.clone()
    };
    ft.predictor.tau = tau.unwrap_or(cfg.tau);
    let norm = NormStats::fit_with(ds.split(Split::Train), cfg.outcome_transform)?;
    let train = normalized(&norm, ds.split(Split::Train));
    let val = normalized(&norm, ds.split(Split::Val));
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(6);
    let model = CostarModel::new(enc, ft.predictor.clone(), norm, scheme, &mut rng)?;
    let start = Instant::now();
    let outcome = finetune(model, &train, &val, &ft)?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("model.json"));
    write_json(&out, &outcome.model.checkpoint(outcome.best_epoch, outcome.best_val_metric)?)?;
    println!(
        "trained {} epochs in {:.1} s; best epoch {} (validation metric {:.4}); wrote {}",
        ft.epochs,
        start.elapsed().as_secs_f64(),
        outcome.best_epoch,
        outcome.best_val_metric,
        out.display()
    );
    Ok(())
}

fn run_evaluate(cli: &Cli, cfg: &ExperimentConfig, model: &Path, data: Option<PathBuf>, no_plots: bool) -> Result<()> {
    let ckpt: ModelCheckpoint = read_json(model)?;
    let model = CostarModel::from_checkpoint(&ckpt)?;
    let (_, ds) = load_dataset(data, "target.jsonl")?;
    let tau = model.tau();
    let seed = cli.seed.unwrap_or(cfg.seeds[0]);
    let start = Instant::now();
    let test = ds.split(Split::Test);
    let cases = build_eval_cases(test, &ds.meta.spec.policy(), tau, &cfg.eval, seed)?;
    let (r, n) = evaluate_model(&model, test, &cases)?;
    let (rb, nb) = evaluate_last_value(test, &cases, tau)?;
    let eval_cfg = ExperimentConfig {
        tau,
        scheme: model.scheme,
        seeds: vec![seed],
        ..cfg.clone()
    };
    let report = MetricsReport {
        setting: cfg.setting,
        tau,
        seeds: vec![seed],
        methods: vec![
            MethodMetrics::from_seeds(METHOD_COSTAR, vec![SeedMetrics::new(seed, r, n)])?,
            MethodMetrics::from_seeds(METHOD_LAST_VALUE, vec![SeedMetrics::new(seed, rb, nb)])?,
        ],
        runs: vec![RunRecord {
            seed,
            pretrain_best_epoch: None,
            pretrain_best_val_loss: None,
            finetune: vec![(METHOD_COSTAR.into(), ckpt.best_epoch, ckpt.best_val_metric)],
            eval_split_reads_before_eval: 0,
            wall_clock_secs: start.elapsed().as_secs_f64(),
        }],
        wall_clock_secs: start.elapsed().as_secs_f64(),
        config_hash: eval_cfg.hash()?,
        provenance: format!("costar {} evaluate", env!("CARGO_PKG_VERSION")),
    };
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("eval"));
    emit_report(&report, &out, !no_plots)?;
    print!("{}", summary_table(&report));
    Ok(())
}

fn run_theory(cli: &Cli, suite: SuiteArg, report: Option<PathBuf>, instances: Option<usize>) -> Result<bool> {
    let suite: TheorySuite = suite.into();
    let mut cfg = SuiteConfig::default();
    if let Some(n) = instances {
        match suite {
            TheorySuite::Expansion => cfg.expansion_instances = n,
            TheorySuite::Pfa => cfg.pfa_seeds = n,
            TheorySuite::Lemma => cfg.lemma_instances = n,
            TheorySuite::Decomposition => cfg.decomposition_instances = n,
        }
    }
    let seed = cli.seed.unwrap_or(0);
    let result = run_suite(suite, seed, &cfg)?;
    let path = report
        .or_else(|| cli.out.clone())
        .unwrap_or_else(|| PathBuf::from(format!("theory-{suite}.json")));
    write_json(&path, &result)?;
    println!(
        "{suite}: {} passed, {} failed ({} instances, seed {seed}); wrote {}",
        result.n_passed,
        result.n_failed,
        result.instances.len(),
        path.display()
    );
    Ok(result.passed())
}

fn run_report(cli: &Cli, mut cfg: ExperimentConfig, setting: Option<SettingArg>, seeds: Option<Vec<u64>>, from: Option<PathBuf>, no_plots: bool) -> Result<()> {
    let out = cli.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("report"));
    let plots = cfg.plots && !no_plots;
    let report = match from {
        Some(path) => load_report(&path)?,
        None => {
            if let Some(s) = setting {
                cfg.setting = s.into();
            }
            if let Some(s) = seeds {
                cfg.seeds = s;
            } else if let Some(s) = cli.seed {
                cfg.seeds = vec![s];
            }
            cfg.out = Some(out.clone());
            fs::create_dir_all(&out)?;
            fs::write(out.join("config.toml"), cfg.to_toml()?)?;
            run_experiment(&cfg)?
        }
    };
    let files = emit_report(&report, &out, plots)?;
    print!("{}", summary_table(&report));
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if cli.deterministic {
        // Must happen before the backend's thread pool starts.
        std::env::set_var("RAYON_NUM_THREADS", "1");
    }
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_env("COSTAR_LOG").unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let cfg = load_config(cli.config.as_deref())?;
    cfg.validate()?;
    match &cli.command {
        Command::Simulate {
            domain,
            gamma,
            horizon,
            splits,
        } => simulate(&cli, &cfg, *domain, *gamma, *horizon, splits.as_deref())?,
        Command::Pretrain { data } => run_pretrain(&cli, &cfg, data.clone())?,
        Command::Train {
            data,
            encoder,
            scheme,
            tau,
        } => run_train(&cli, &cfg, data.clone(), encoder.clone(), *scheme, *tau)?,
        Command::Evaluate { model, data, no_plots } => run_evaluate(&cli, &cfg, model, data.clone(), *no_plots)?,
        Command::TheoryCheck { suite, report, instances } => {
            if !run_theory(&cli, *suite, report.clone(), *instances)? {
                bail!("theory suite reported failures");
            }
        }
        Command::Report {
            setting,
            seeds,
            from,
            no_plots,
        } => run_report(&cli, cfg.clone(), *setting, seeds.clone(), from.clone(), *no_plots)?,
    }
    Ok(())
}
