//! Non-autoregressive multi-horizon outcome predictor and joint fine-tuning.
//!
//! For an anchor `t` with representation `z_t` and a plan `a_t .. a_{t+tau-1}`,
//! horizon `i` (estimating `y_{t+i}`) sees
//!
//! * the immediate treatment `a_{t+i-1}` through a 1x1 convolution,
//! * the earlier plan steps `a_t .. a_{t+i-2}` through a causal 1-D
//!   convolution with kernel length `tau - 1` whose receptive field is cut at
//!   the start of the plan,
//!
//! and an MLP maps `[z_t | plan summary | immediate embedding]` to the
//! outcome. All horizons are produced in one pass.

use std::fmt;
use std::str::FromStr;

use candle_core::{Tensor, Var, D};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use ndarray::{s, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::batch::{sequence_batches, SequenceBatch};
use crate::data::dataset::Trajectory;
use crate::data::history::History;
use crate::data::norm::NormStats;
use crate::encoder::{EncoderCheckpoint, EncoderState};
use crate::error::{Error, Result};
use crate::nn::{self, device, Init, Linear, Mlp, Mode, NamedTensor, ParamStore};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    Uniform,
    Inv,
    SqInv,
}

impl WeightScheme {
    pub const ALL: [WeightScheme; 3] = [WeightScheme::Uniform, WeightScheme::Inv, WeightScheme::SqInv];

    pub fn name(self) -> &'static str {
        match self {
            WeightScheme::Uniform => "uniform",
            WeightScheme::Inv => "inv",
            WeightScheme::SqInv => "sq_inv",
        }
    }
}

impl fmt::Display for WeightScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WeightScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(WeightScheme::Uniform),
            "inv" => Ok(WeightScheme::Inv),
            "sq_inv" | "sq.inv" => Ok(WeightScheme::SqInv),
            other => Err(Error::UnknownScheme(other.to_string())),
        }
    }
}

/// Per-horizon loss weights; they sum to exactly 1 under left-to-right
/// floating-point summation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub scheme: WeightScheme,
    pub weights: Vec<f64>,
}

/// `uniform: 1/tau`, `inv: ∝ 1/i`, `sq_inv: ∝ 1/i²`.
pub fn make_weights(scheme: WeightScheme, tau: usize) -> Result<LossWeights> {
    if tau == 0 {
        return Err(Error::InvalidArgument("tau must be at least 1".into()));
    }
    let raw: Vec<f64> = (1..=tau)
        .map(|i| match scheme {
            WeightScheme::Uniform => 1.0,
            WeightScheme::Inv => 1.0 / i as f64,
            WeightScheme::SqInv => 1.0 / (i * i) as f64,
        })
        .collect();
    let total = neumaier_sum(&raw);
    let mut weights: Vec<f64> = raw.iter().map(|r| r / total).collect();
    // The last weight absorbs the rounding residue: with `p` the running sum
    // of the others (p >= 1/2), `1 - p` is exact and so is `p + (1 - p)`.
    let head: f64 = weights[..tau - 1].iter().sum();
    weights[tau - 1] = 1.0 - head;
    if weights.iter().sum::<f64>() != 1.0 || weights.iter().any(|&w| w <= 0.0) {
        return Err(Error::Domain(format!("could not normalize {scheme} weights for tau {tau}")));
    }
    Ok(LossWeights { scheme, weights })
}

pub fn make_weights_named(scheme: &str, tau: usize) -> Result<LossWeights> {
    make_weights(scheme.parse()?, tau)
}

fn neumaier_sum(xs: &[f64]) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for &x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// `mean over anchors of sum_i w_i ||yhat_i - y_i||²` for `M x tau x d_Y` inputs.
pub fn factual_loss(estimates: &Tensor, targets: &Tensor, weights: &LossWeights) -> Result<Tensor> {
    let (m, tau, _) = estimates.dims3()?;
    if targets.dims() != estimates.dims() || weights.weights.len() != tau {
        return Err(Error::Shape(format!(
            "estimates {:?}, targets {:?}, {} weights",
            estimates.dims(),
            targets.dims(),
            weights.weights.len()
        )));
    }
    let w = Tensor::from_slice(&weights.weights, (1, tau), &device())?;
    let per_step = (estimates - targets)?.sqr()?.sum(D::Minus1)?;
    Ok((per_step.broadcast_mul(&w)?.sum_all()? / m as f64)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorConfig {
    pub tau: usize,
    pub hidden: usize,
    pub dropout: f64,
    /// Decode every horizon as an offset from the last observed outcome.
    pub residual: bool,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            tau: 6,
            hidden: 128,
            dropout: 0.1,
            residual: true,
        }
    }
}

/// Decoder parameters.
#[derive(Clone, Debug)]
pub struct PredictorState {
    pub config: PredictorConfig,
    pub d_model: usize,
    pub d_a: usize,
    pub d_y: usize,
    store: ParamStore,
    immediate: Linear,
    /// Kernel over the `tau - 1` earlier plan steps; absent when `tau = 1`.
    plan_kernel: Option<Var>,
    plan_bias: Var,
    mlp: Mlp,
}

impl PredictorState {
    pub fn new<R: Rng + ?Sized>(config: PredictorConfig, d_model: usize, d_a: usize, d_y: usize, rng: &mut R) -> Result<Self> {
        if config.tau == 0 {
            return Err(Error::InvalidArgument("tau must be at least 1".into()));
        }
        let tau = config.tau;
        let mut store = ParamStore::new();
        let immediate = Linear::new(&mut store, "immediate", d_a, d_model, rng)?;
        let width = (tau - 1) * d_a;
        let bound = 1.0 / (width.max(1) as f64).sqrt();
        let plan_kernel = if width > 0 {
            Some(store.create("plan.kernel", &[width, d_model], Init::Uniform(bound), rng)?)
        } else {
            None
        };
        let plan_bias = store.create("plan.bias", &[d_model], Init::Uniform(bound), rng)?;
        let mlp = Mlp::new(&mut store, "mlp", 3 * d_model, config.hidden, tau * d_y, rng)?;
        Ok(PredictorState {
            config,
            d_model,
            d_a,
            d_y,
            store,
            immediate,
            plan_kernel,
            plan_bias,
            mlp,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn tau(&self) -> usize {
        self.config.tau
    }

    /// `(tau * d_A) x (tau * (tau - 1) * d_A)` 0/1 matrix mapping a flattened
    /// plan to, for each horizon `i` and lag `l = 1..tau-1`, plan step `i - l`
    /// (zero when `i - l` precedes the plan).
    fn lag_selection(&self) -> Result<Tensor> {
        let (tau, da) = (self.config.tau, self.d_a);
        let cols = tau * (tau - 1) * da;
        let mut sel = vec![0.0; tau * da * cols];
        for i in 0..tau {
            for l in 1..tau {
                if l > i {
                    continue;
                }
                for c in 0..da {
                    let row = (i - l) * da + c;
                    let col = i * (tau - 1) * da + (l - 1) * da + c;
                    sel[row * cols + col] = 1.0;
                }
            }
        }
        Ok(Tensor::from_vec(sel, (tau * da, cols), &device())?)
    }

    /// Estimates for `M` anchors: `z: M x d_model`, `plans: M x tau x d_A`
    /// → `M x tau x d_Y`.
    pub fn predict(&self, z: &Tensor, plans: &Tensor, mode: &mut Mode) -> Result<Tensor> {
        let (tau, da, d) = (self.config.tau, self.d_a, self.d_model);
        let (m, plan_len, plan_da) = plans.dims3()?;
        if plan_len < tau || plan_da != da {
            return Err(Error::Shape(format!("plan is {plan_len} x {plan_da}, predictor needs {tau} x {da}")));
        }
        if z.dims2()? != (m, d) {
            return Err(Error::Shape(format!("representation {:?} does not match {m} plans", z.dims())));
        }
        let plans = plans.narrow(1, 0, tau)?.contiguous()?;
        let immediate = self.immediate.forward(&plans)?;
        let summary = match &self.plan_kernel {
            Some(kernel) => {
                let lagged = plans
                    .reshape((m, tau * da))?
                    .matmul(&self.lag_selection()?)?
                    .reshape((m * tau, (tau - 1) * da))?;
                lagged
                    .matmul(kernel.as_tensor())?
                    .broadcast_add(self.plan_bias.as_tensor())?
                    .reshape((m, tau, d))?
            }
            None => self.plan_bias.as_tensor().reshape((1, 1, d))?.broadcast_as((m, tau, d))?,
        };
        let z_rep = z.unsqueeze(1)?.broadcast_as((m, tau, d))?;
        let features = Tensor::cat(&[&z_rep, &summary, &immediate], 2)?;
        let features = mode.dropout(&features)?;
        let out = self
            .mlp
            .forward(&features, mode)?
            .reshape((m, tau, tau, self.d_y))?;
        // Horizon i reads slot i of its own output row.
        let eye = Tensor::eye(tau, nn::DTYPE, &device())?.reshape((1, tau, tau, 1))?;
        Ok(out.broadcast_mul(&eye)?.sum(2)?)
    }
}

/// Encoder plus decoder plus the normalization they were trained under.
pub struct CostarModel {
    pub encoder: EncoderState,
    pub predictor: PredictorState,
    pub norm: NormStats,
    pub scheme: WeightScheme,
}

/// Dense anchors of a batch of whole sequences: one row per valid
/// `(sequence, t)` with `t + tau <= len`.
pub struct AnchorSet {
    /// Row of `z` (flattened `B x T`) used by each anchor.
    pub rows: Vec<u32>,
    /// `M x tau x d_A`
    pub plans: Array3<f64>,
    /// `M x tau x d_Y`
    pub targets: Array3<f64>,
}

impl AnchorSet {
    pub fn from_batch(batch: &SequenceBatch, tau: usize) -> AnchorSet {
        let t_max = batch.dynamic.shape()[1];
        let mut rows = Vec::new();
        let mut keys = Vec::new();
        for (k, &len) in batch.lengths.iter().enumerate() {
            if len <= tau {
                continue;
            }
            for t in 1..=len - tau {
                rows.push((k * t_max + t - 1) as u32);
                keys.push((k, t));
            }
        }
        let m = rows.len();
        let mut plans = Array3::zeros((m, tau, batch.d_a));
        let mut targets = Array3::zeros((m, tau, batch.d_y));
        for (r, &(k, t)) in keys.iter().enumerate() {
            plans
                .slice_mut(s![r, .., ..])
                .assign(&batch.treatments.slice(s![k, t - 1..t - 1 + tau, ..]));
            targets
                .slice_mut(s![r, .., ..])
                .assign(&batch.outcomes.slice(s![k, t..t + tau, ..]));
        }
        AnchorSet { rows, plans, targets }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

impl CostarModel {
    pub fn new<R: Rng + ?Sized>(encoder: EncoderState, config: PredictorConfig, norm: NormStats, scheme: WeightScheme, rng: &mut R) -> Result<Self> {
        let c = &encoder.config;
        let predictor = PredictorState::new(config, c.d_model, c.d_a, c.d_y, rng)?;
        Ok(CostarModel {
            encoder,
            predictor,
            norm,
            scheme,
        })
    }

    pub fn tau(&self) -> usize {
        self.predictor.tau()
    }

    pub fn trainable_vars(&self) -> Vec<Var> {
        let mut vars = self.encoder.params().vars();
        vars.extend(self.predictor.params().vars());
        vars
    }

    /// Estimates (normalized space) for every dense anchor of a batch of
    /// normalized sequences, from one encoder pass.
    pub fn forward_anchors(&self, batch: &SequenceBatch, anchors: &AnchorSet, mode: &mut Mode) -> Result<Tensor> {
        let enc = self.encoder.encode_sequences(batch, mode)?;
        let (b, t, d) = enc.bundle.z.dims3()?;
        let rows = Tensor::from_slice(&anchors.rows, anchors.len(), &device())?;
        let z = enc.bundle.z.reshape((b * t, d))?.index_select(&rows, 0)?;
        let out = self.predictor.predict(&z, &nn::tensor_from_array3(&anchors.plans)?, mode)?;
        let last = nn::tensor_from_array3(&batch.outcomes)?
            .reshape((b * t, batch.d_y))?
            .index_select(&rows, 0)?;
        self.add_last_outcome(out, &last)
    }

    /// `out + y_t` per anchor when the decoder is residual; `last` is `M x d_Y`.
    fn add_last_outcome(&self, out: Tensor, last: &Tensor) -> Result<Tensor> {
        if !self.predictor.config.residual {
            return Ok(out);
        }
        Ok(out.broadcast_add(&last.unsqueeze(1)?)?)
    }

    /// Single-history estimate in the original outcome scale: one encoder
    /// pass over the raw history and one predictor pass over the plan.
    pub fn rollout_estimate(&self, history: &History, plan: &Array2<f64>) -> Result<Array2<f64>> {
        let tau = self.tau();
        if plan.nrows() < tau || plan.ncols() != self.predictor.d_a {
            return Err(Error::Shape(format!("plan is {:?}, model needs {tau} x {}", plan.dim(), self.predictor.d_a)));
        }
        let mut mode = Mode::eval();
        let h = self.norm.apply_history(history);
        let enc = self.encoder.encode_history(&h, &mut mode)?;
        let last = enc.bundle.at_steps(&[h.len() - 1])?.z;
        let plan3 = plan.slice(s![..tau, ..]).to_owned().insert_axis(ndarray::Axis(0));
        let out = self.predictor.predict(&last, &nn::tensor_from_array3(&plan3)?, &mut mode)?;
        let y_t = Tensor::from_vec(h.last_outcome(), (1, self.predictor.d_y), &device())?;
        let out = self
            .add_last_outcome(out, &y_t)?
            .squeeze(0)?
            .to_vec2::<f64>()?;
        let mut est = Array2::from_shape_vec((tau, self.predictor.d_y), out.into_iter().flatten().collect())
            .map_err(|e| Error::Shape(e.to_string()))?;
        self.norm.denormalize_outcomes(&mut est);
        Ok(est)
    }

    /// Estimates in the original scale for chosen anchors of one raw
    /// trajectory, scored from a single encoder pass over the trajectory.
    /// `anchors[k]` is a history length `t`; only steps `< t` influence the
    /// estimate for anchor `k`.
    pub fn estimate_anchors(&self, raw: &Trajectory, anchors: &[usize], plans: &[Array2<f64>]) -> Result<Vec<Array2<f64>>> {
        let tau = self.tau();
        if anchors.len() != plans.len() {
            return Err(Error::Shape("one plan per anchor required".into()));
        }
        if anchors.is_empty() {
            return Ok(Vec::new());
        }
        if anchors.iter().any(|&t| t == 0 || t > raw.len()) {
            return Err(Error::InvalidArgument(format!("anchors must lie in 1..={}", raw.len())));
        }
        let mut mode = Mode::eval();
        let traj = self.norm.apply(raw);
        let batch = SequenceBatch::from_trajectories(&[&traj]);
        let enc = self.encoder.encode_sequences(&batch, &mut mode)?;
        let steps: Vec<u32> = anchors.iter().map(|&t| (t - 1) as u32).collect();
        let (_, t_len, d) = enc.bundle.z.dims3()?;
        let z = enc
            .bundle
            .z
            .reshape((t_len, d))?
            .index_select(&Tensor::from_slice(&steps, steps.len(), &device())?, 0)?;
        let mut plan3 = Array3::zeros((anchors.len(), tau, self.predictor.d_a));
        for (k, p) in plans.iter().enumerate() {
            if p.nrows() < tau || p.ncols() != self.predictor.d_a {
                return Err(Error::Shape(format!("plan {k} is {:?}", p.dim())));
            }
            plan3.slice_mut(s![k, .., ..]).assign(&p.slice(s![..tau, ..]));
        }
        let out = self.predictor.predict(&z, &nn::tensor_from_array3(&plan3)?, &mut mode)?;
        let d_y = self.predictor.d_y;
        let y_t: Vec<f64> = anchors.iter().flat_map(|&t| traj.outcomes.row(t - 1).to_vec()).collect();
        let out = self.add_last_outcome(out, &Tensor::from_vec(y_t, (anchors.len(), d_y), &device())?)?;
        let flat = out.flatten_all()?.to_vec1::<f64>()?;
        flat.chunks(tau * d_y)
            .map(|c| {
                let mut est = Array2::from_shape_vec((tau, d_y), c.to_vec()).map_err(|e| Error::Shape(e.to_string()))?;
                self.norm.denormalize_outcomes(&mut est);
                Ok(est)
            })
            .collect()
    }

    pub fn checkpoint(&self, best_epoch: usize, best_val_metric: f64) -> Result<ModelCheckpoint> {
        Ok(ModelCheckpoint {
            format_version: MODEL_FORMAT_VERSION,
            encoder: self.encoder.checkpoint()?,
            predictor: self.predictor.config.clone(),
            predictor_params: self.predictor.params().snapshot()?,
            norm: self.norm.clone(),
            scheme: self.scheme,
            best_epoch,
            best_val_metric,
        })
    }

    pub fn from_checkpoint(ckpt: &ModelCheckpoint) -> Result<CostarModel> {
        if ckpt.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported model format version {}", ckpt.format_version)));
        }
        let encoder = EncoderState::from_checkpoint(&ckpt.encoder)?;
        let model = CostarModel::new(
            encoder,
            ckpt.predictor.clone(),
            ckpt.norm.clone(),
            ckpt.scheme,
            &mut ChaCha8Rng::seed_from_u64(0),
        )?;
        model.predictor.params().restore(&ckpt.predictor_params)?;
        Ok(model)
    }
}

/// Full-model checkpoint: embedded encoder, decoder and normalization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub format_version: u32,
    pub encoder: EncoderCheckpoint,
    pub predictor: PredictorConfig,
    pub predictor_params: Vec<NamedTensor>,
    pub norm: NormStats,
    pub scheme: WeightScheme,
    pub best_epoch: usize,
    pub best_val_metric: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub predictor: PredictorConfig,
    pub scheme: WeightScheme,
    /// Sequences per batch; every anchor of a sequence is scored.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            predictor: PredictorConfig::default(),
            scheme: WeightScheme::Inv,
            batch_size: 32,
            learning_rate: 1e-3,
            epochs: 20,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
}

pub struct FinetuneOutcome {
    pub model: CostarModel,
    pub history: Vec<FinetuneEpoch>,
    pub best_epoch: usize,
    pub best_val_metric: f64,
}

/// Weighted factual RMSE over horizons, `sum_i w_i RMSE_i`, on normalized
/// sequences in eval mode.
pub fn validation_metric(model: &CostarModel, val: &[Trajectory], batch_size: usize) -> Result<f64> {
    let tau = model.tau();
    let weights = make_weights(model.scheme, tau)?;
    let mut sq = vec![0.0; tau];
    let mut count = 0usize;
    for batch in sequence_batches::<ChaCha8Rng>(val, batch_size, None) {
        let anchors = AnchorSet::from_batch(&batch, tau);
        if anchors.is_empty() {
            continue;
        }
        let est = model.forward_anchors(&batch, &anchors, &mut Mode::eval())?;
        let diff = (est - nn::tensor_from_array3(&anchors.targets)?)?.sqr()?.sum(D::Minus1)?.sum(0)?;
        for (acc, v) in sq.iter_mut().zip(diff.to_vec1::<f64>()?) {
            *acc += v;
        }
        count += anchors.len();
    }
    if count == 0 {
        return Err(Error::InvalidArgument("validation split has no anchors".into()));
    }
    Ok(sq
        .iter()
        .zip(&weights.weights)
        .map(|(s, w)| w * (s / count as f64).sqrt())
        .sum())
}

/// Jointly train the decoder and fine-tune `model.encoder` on normalized
/// trajectories, keeping the epoch with the best validation metric.
pub fn finetune(mut model: CostarModel, train: &[Trajectory], val: &[Trajectory], cfg: &FinetuneConfig) -> Result<FinetuneOutcome> {
    if train.is_empty() || cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("finetuning needs training data and a positive batch size".into()));
    }
    let tau = model.tau();
    let weights = make_weights(cfg.scheme, tau)?;
    model.scheme = cfg.scheme;
    let mut opt = AdamW::new(
        model.trainable_vars(),
        ParamsAdamW {
            lr: cfg.learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        },
    )?;
    let mut data_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    data_rng.set_stream(4);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(5);
    let mut mode = Mode::train(model.encoder.config.dropout.max(cfg.predictor.dropout), dropout_rng);

    let mut best: Option<(usize, f64, Vec<NamedTensor>, Vec<NamedTensor>)> = None;
    let mut history = Vec::new();
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let mut sum = 0.0;
        let mut n = 0usize;
        for batch in sequence_batches(train, cfg.batch_size, Some(&mut data_rng)) {
            let anchors = AnchorSet::from_batch(&batch, tau);
            if anchors.is_empty() {
                continue;
            }
            let est = model.forward_anchors(&batch, &anchors, &mut mode)?;
            let loss = factual_loss(&est, &nn::tensor_from_array3(&anchors.targets)?, &weights)?;
            let value = nn::scalar(&loss)?;
            if !value.is_finite() {
                return Err(Error::Divergence { step, loss: value });
            }
            opt.backward_step(&loss)?;
            sum += value;
            n += 1;
            step += 1;
        }
        let train_loss = if n == 0 { f64::NAN } else { sum / n as f64 };
        let val_metric = if val.is_empty() {
            train_loss
        } else {
            validation_metric(&model, val, cfg.batch_size)?
        };
        tracing::info!(epoch, train_loss, val_metric, "finetune epoch");
        history.push(FinetuneEpoch {
            epoch,
            train_loss,
            val_metric,
        });
        if best.as_ref().is_none_or(|b| val_metric < b.1) {
            best = Some((
                epoch,
                val_metric,
                model.encoder.params().snapshot()?,
                model.predictor.params().snapshot()?,
            ));
        }
    }
    let (best_epoch, best_val_metric) = match best {
        Some((epoch, metric, enc, pred)) => {
            model.encoder.params().restore(&enc)?;
            model.predictor.params().restore(&pred)?;
            (epoch, metric)
        }
        None => (0, f64::NAN),
    };
    Ok(FinetuneOutcome {
        model,
        history,
        best_epoch,
        best_val_metric,
    })
}
