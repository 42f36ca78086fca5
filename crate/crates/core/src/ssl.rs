//! Self-supervised contrastive pretraining of the history encoder.
//!
//! Two augmented views of each history are encoded by the online encoder
//! (followed by a shared prediction head) and by a momentum copy that never
//! receives gradients. Whole-history and per-component representations at
//! the final step of each (randomly truncated) history are contrasted with a
//! symmetric InfoNCE loss using in-batch negatives.

use std::io::Write;

use candle_core::{Tensor, D};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use ndarray::s;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::batch::{sequence_batches, SequenceBatch};
use crate::data::dataset::Trajectory;
use crate::encoder::{EncoderCheckpoint, EncoderConfig, EncoderState, RepresentationBundle};
use crate::error::{Error, Result};
use crate::nn::{self, device, Mlp, Mode, NamedTensor, ParamStore};

pub const PRETRAIN_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub scale_std: f64,
    pub shift_std: f64,
    pub jitter_std: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            scale_std: 0.3,
            shift_std: 0.5,
            jitter_std: 0.3,
        }
    }
}

impl AugmentConfig {
    pub fn identity() -> Self {
        AugmentConfig {
            scale_std: 0.0,
            shift_std: 0.0,
            jitter_std: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SSLConfig {
    pub momentum: f64,
    pub temperature: f64,
    /// Hidden width of the prediction head; `None` uses `d_model`.
    pub head_hidden: Option<usize>,
    pub augment: AugmentConfig,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SSLConfig {
    fn default() -> Self {
        SSLConfig {
            momentum: 0.99,
            temperature: 1.0,
            head_hidden: None,
            augment: AugmentConfig::default(),
            batch_size: 64,
            learning_rate: 1e-3,
            epochs: 20,
            seed: 0,
        }
    }
}

impl SSLConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!("momentum {} outside [0, 1]", self.momentum)));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidArgument(format!("temperature {} must be positive", self.temperature)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        let a = &self.augment;
        if a.scale_std < 0.0 || a.shift_std < 0.0 || a.jitter_std < 0.0 {
            return Err(Error::InvalidArgument("augmentation stds must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Scale, shift and jitter the covariate and outcome channels of active
/// steps: `x -> s * x + b + e`, with `s`, `b` drawn per sample and feature and
/// `e` per element. Lagged treatments, statics and masks are untouched.
pub fn augment<R: Rng + ?Sized>(batch: &SequenceBatch, rng: &mut R, cfg: &AugmentConfig) -> Result<SequenceBatch> {
    let normal = |mean: f64, std: f64| Normal::new(mean, std).map_err(|e| Error::InvalidArgument(e.to_string()));
    let scale = normal(1.0, cfg.scale_std)?;
    let shift = normal(0.0, cfg.shift_std)?;
    let jitter = normal(0.0, cfg.jitter_std)?;
    let (dx, da) = (batch.d_x, batch.d_a);
    let d_s = batch.dynamic.shape()[2];
    let columns: Vec<usize> = (0..dx).chain(dx + da..d_s).collect();
    let mut out = batch.clone();
    for (k, &len) in batch.lengths.iter().enumerate() {
        for &j in &columns {
            let s_kj = scale.sample(rng);
            let b_kj = shift.sample(rng);
            let mut col = out.dynamic.slice_mut(s![k, ..len, j]);
            for v in col.iter_mut() {
                *v = s_kj * *v + b_kj + jitter.sample(rng);
            }
        }
    }
    Ok(out)
}

/// `-(1/B) sum_i log softmax_j(cos(q_i, k_j) / temp)_i` over `B x d` inputs.
pub fn infonce(queries: &Tensor, keys: &Tensor, temperature: f64) -> Result<Tensor> {
    let (b, d) = queries.dims2()?;
    if keys.dims2()? != (b, d) || b == 0 {
        return Err(Error::Shape(format!("infonce needs matching nonempty B x d inputs, got {:?} and {:?}", queries.dims(), keys.dims())));
    }
    let q = unit_rows(queries, "query")?;
    let k = unit_rows(keys, "key")?;
    let logits = (q.matmul(&k.t()?)? / temperature)?;
    let log_probs = candle_nn::ops::log_softmax(&logits, D::Minus1)?;
    let eye = Tensor::eye(b, nn::DTYPE, &device())?;
    Ok((log_probs.mul(&eye)?.sum_all()? / -(b as f64))?)
}

fn unit_rows(x: &Tensor, what: &str) -> Result<Tensor> {
    let norms = x.sqr()?.sum_keepdim(D::Minus1)?.sqrt()?;
    if let Some(row) = norms.flatten_all()?.to_vec1::<f64>()?.iter().position(|&n| n == 0.0) {
        return Err(Error::Domain(format!("{what} row {row} has zero norm, cosine similarity undefined")));
    }
    Ok(x.broadcast_div(&norms)?)
}

/// Loss values of one step, as logged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SslLossRecord {
    pub step: usize,
    pub epoch: usize,
    pub l_h: f64,
    pub l_x: f64,
    pub l_a: f64,
    pub l_y: f64,
    pub l_total: f64,
}

/// Differentiable component losses.
pub struct SslLosses {
    pub l_h: Tensor,
    pub l_x: Tensor,
    pub l_a: Tensor,
    pub l_y: Tensor,
    pub l_total: Tensor,
}

impl SslLosses {
    pub fn values(&self) -> Result<[f64; 5]> {
        Ok([
            nn::scalar(&self.l_h)?,
            nn::scalar(&self.l_x)?,
            nn::scalar(&self.l_a)?,
            nn::scalar(&self.l_y)?,
            nn::scalar(&self.l_total)?,
        ])
    }
}

/// `L = L^H + (L^X + L^A + L^Y) / 3`
pub fn combine_losses(l_h: &Tensor, l_x: &Tensor, l_a: &Tensor, l_y: &Tensor) -> Result<Tensor> {
    Ok((l_h + ((l_x + l_a)? + l_y)? / 3.0)?)
}

/// Online encoder, momentum encoder and prediction head.
pub struct SSLState {
    pub online: EncoderState,
    pub momentum: EncoderState,
    head_store: ParamStore,
    head: Mlp,
}

/// Two views of a batch plus the step contrasted in each sample.
pub struct Views {
    pub first: SequenceBatch,
    pub second: SequenceBatch,
    pub steps: Vec<usize>,
}

impl SSLState {
    /// Fresh online encoder; the momentum encoder starts as an exact copy.
    pub fn new<R: Rng + ?Sized>(encoder: EncoderConfig, head_hidden: Option<usize>, rng: &mut R) -> Result<Self> {
        let online = EncoderState::new(encoder, rng)?;
        Self::from_encoder(online, head_hidden, rng)
    }

    pub fn from_encoder<R: Rng + ?Sized>(online: EncoderState, head_hidden: Option<usize>, rng: &mut R) -> Result<Self> {
        let d = online.config.d_model;
        let momentum = online.deep_copy()?;
        let mut head_store = ParamStore::new();
        let head = Mlp::new(&mut head_store, "head", d, head_hidden.unwrap_or(d), d, rng)?;
        Ok(SSLState {
            online,
            momentum,
            head_store,
            head,
        })
    }

    pub fn head_params(&self) -> &ParamStore {
        &self.head_store
    }

    /// Parameters updated by the optimizer (online encoder and head).
    pub fn trainable_vars(&self) -> Vec<candle_core::Var> {
        let mut vars = self.online.params().vars();
        vars.extend(self.head_store.vars());
        vars
    }

    /// `theta_mo <- m * theta_mo + (1 - m) * theta_online`, elementwise.
    pub fn momentum_update(&self, m: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&m) {
            return Err(Error::InvalidArgument(format!("momentum {m} outside [0, 1]")));
        }
        for ((_, mo), (_, on)) in self.momentum.params().iter().zip(self.online.params().iter()) {
            let updated = (mo.as_tensor().affine(m, 0.0)? + on.as_tensor().affine(1.0 - m, 0.0)?)?;
            mo.set(&updated)?;
        }
        Ok(())
    }

    /// Component losses for a pair of views. The online pass runs under
    /// `mode`; the momentum pass runs without dropout and is detached.
    pub fn ssl_losses(&self, views: &Views, temperature: f64, mode: &mut Mode) -> Result<SslLosses> {
        let online = |batch: &SequenceBatch, mode: &mut Mode| -> Result<RepresentationBundle> {
            self.online.encode_sequences(batch, mode)?.bundle.at_steps(&views.steps)
        };
        let target = |batch: &SequenceBatch| -> Result<RepresentationBundle> {
            self.momentum
                .encode_sequences(batch, &mut Mode::eval())?
                .bundle
                .at_steps(&views.steps)
        };
        let q1 = online(&views.first, mode)?;
        let q2 = online(&views.second, mode)?;
        let k1 = target(&views.first)?;
        let k2 = target(&views.second)?;

        let mut parts = Vec::with_capacity(4);
        for c in 0..4 {
            let p1 = self.head.forward(q1.components()[c], mode)?;
            let p2 = self.head.forward(q2.components()[c], mode)?;
            let l = (infonce(&p1, &k2.components()[c].detach(), temperature)?
                + infonce(&p2, &k1.components()[c].detach(), temperature)?)?;
            parts.push(l);
        }
        let l_total = combine_losses(&parts[0], &parts[1], &parts[2], &parts[3])?;
        let mut it = parts.into_iter();
        Ok(SslLosses {
            l_h: it.next().expect("four parts"),
            l_x: it.next().expect("four parts"),
            l_a: it.next().expect("four parts"),
            l_y: it.next().expect("four parts"),
            l_total,
        })
    }

    pub fn checkpoint(&self, ssl: &SSLConfig, best_epoch: usize, best_val_loss: f64) -> Result<PretrainCheckpoint> {
        Ok(PretrainCheckpoint {
            format_version: PRETRAIN_FORMAT_VERSION,
            encoder: self.online.checkpoint()?,
            momentum: self.momentum.checkpoint()?,
            head: self.head_store.snapshot()?,
            ssl: ssl.clone(),
            best_epoch,
            best_val_loss,
        })
    }

    pub fn from_checkpoint(ckpt: &PretrainCheckpoint) -> Result<SSLState> {
        if ckpt.format_version != PRETRAIN_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported pretrain format version {}", ckpt.format_version)));
        }
        let online = EncoderState::from_checkpoint(&ckpt.encoder)?;
        let state = SSLState::from_encoder(online, ckpt.ssl.head_hidden, &mut ChaCha8Rng::seed_from_u64(0))?;
        state.momentum.params().restore(&ckpt.momentum.params)?;
        state.head_store.restore(&ckpt.head)?;
        Ok(state)
    }
}

/// Build two views of `batch` and pick one contrast step per sample,
/// uniformly among its active steps.
pub fn make_views<R: Rng + ?Sized>(batch: &SequenceBatch, cfg: &AugmentConfig, rng: &mut R) -> Result<Views> {
    let steps = batch.lengths.iter().map(|&len| rng.random_range(0..len)).collect();
    Ok(Views {
        first: augment(batch, rng, cfg)?,
        second: augment(batch, rng, cfg)?,
        steps,
    })
}

/// Saved pretraining state. `encoder` is the online encoder used downstream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainCheckpoint {
    pub format_version: u32,
    pub encoder: EncoderCheckpoint,
    pub momentum: EncoderCheckpoint,
    pub head: Vec<NamedTensor>,
    pub ssl: SSLConfig,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    /// Best-by-validation state.
    pub checkpoint: PretrainCheckpoint,
    pub log: Vec<SslLossRecord>,
    /// Mean training `L_total` per epoch.
    pub epoch_train_loss: Vec<f64>,
    pub epoch_val_loss: Vec<f64>,
}

/// Mean `L_total` over `val` with fixed views and no dropout.
pub fn validation_loss(state: &SSLState, val: &[Trajectory], cfg: &SSLConfig) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut total = 0.0;
    let mut count = 0usize;
    for batch in sequence_batches::<ChaCha8Rng>(val, cfg.batch_size, None) {
        let views = make_views(&batch, &cfg.augment, &mut rng)?;
        let losses = state.ssl_losses(&views, cfg.temperature, &mut Mode::eval())?;
        total += nn::scalar(&losses.l_total)? * batch.len() as f64;
        count += batch.len();
    }
    if count == 0 {
        return Err(Error::InvalidArgument("empty validation split".into()));
    }
    Ok(total / count as f64)
}

/// Contrastive pretraining on normalized trajectories.
///
/// Every optimizer step is followed by a momentum update; one record per
/// step is written to `log_sink` as a JSON line. The state with the lowest
/// validation loss is returned.
pub fn pretrain(
    train: &[Trajectory],
    val: &[Trajectory],
    encoder: EncoderConfig,
    cfg: &SSLConfig,
    mut log_sink: Option<&mut dyn Write>,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("empty training split".into()));
    }
    let dropout = encoder.dropout;
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let state = SSLState::new(encoder, cfg.head_hidden, &mut init_rng)?;
    let mut opt = AdamW::new(
        state.trainable_vars(),
        ParamsAdamW {
            lr: cfg.learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        },
    )?;
    let mut data_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    data_rng.set_stream(2);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(3);
    let mut mode = Mode::train(dropout, dropout_rng);

    let mut log = Vec::new();
    let mut epoch_train_loss = Vec::new();
    let mut epoch_val_loss = Vec::new();
    let mut best: Option<PretrainCheckpoint> = None;
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let mut sum = 0.0;
        let mut n = 0usize;
        for batch in sequence_batches(train, cfg.batch_size, Some(&mut data_rng)) {
            let views = make_views(&batch, &cfg.augment, &mut data_rng)?;
            let losses = state.ssl_losses(&views, cfg.temperature, &mut mode)?;
            let [l_h, l_x, l_a, l_y, l_total] = losses.values()?;
            if !l_total.is_finite() {
                return Err(Error::Divergence { step, loss: l_total });
            }
            opt.backward_step(&losses.l_total)?;
            state.momentum_update(cfg.momentum)?;
            let rec = SslLossRecord {
                step,
                epoch,
                l_h,
                l_x,
                l_a,
                l_y,
                l_total,
            };
            if let Some(sink) = log_sink.as_deref_mut() {
                serde_json::to_writer(&mut *sink, &rec)?;
                sink.write_all(b"\n")?;
            }
            log.push(rec);
            sum += l_total;
            n += 1;
            step += 1;
        }
        epoch_train_loss.push(sum / n as f64);
        let val_loss = if val.is_empty() {
            sum / n as f64
        } else {
            validation_loss(&state, val, cfg)?
        };
        epoch_val_loss.push(val_loss);
        tracing::info!(epoch, train = sum / n as f64, val = val_loss, "pretrain epoch");
        if best.as_ref().is_none_or(|b| val_loss < b.best_val_loss) {
            best = Some(state.checkpoint(cfg, epoch, val_loss)?);
        }
    }
    let checkpoint = match best {
        Some(b) => b,
        None => state.checkpoint(cfg, 0, f64::NAN)?,
    };
    Ok(PretrainOutcome {
        checkpoint,
        log,
        epoch_train_loss,
        epoch_val_loss,
    })
}

/// Pretraining with zero epochs: the initial encoder, for ablations.
pub fn untrained_encoder(encoder: EncoderConfig, seed: u64) -> Result<EncoderState> {
    EncoderState::new(encoder, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_domain_dataset, DomainSpec, PriorConfig};
    use crate::data::{NormStats, Split};

    fn tiny_encoder() -> EncoderConfig {
        EncoderConfig {
            d_model: 8,
            ..EncoderConfig::tumor()
        }
    }

    fn trajectories(n: usize, len: usize) -> Vec<Trajectory> {
        let spec = DomainSpec {
            n_train: n,
            n_val: 0,
            n_test: 0,
            horizon: len,
            ..DomainSpec::desk_source(3)
        };
        let ds = generate_domain_dataset(&spec, &PriorConfig::default()).unwrap();
        let train = ds.split(Split::Train).to_vec();
        let norm = NormStats::fit(&train).unwrap();
        train.iter().map(|t| norm.apply(t)).collect()
    }

    fn matrix(rows: &[[f64; 2]]) -> Tensor {
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        Tensor::from_vec(data, (rows.len(), 2), &device()).unwrap()
    }

    #[test]
    fn infonce_hand_value() {
        let q = matrix(&[[1.0, 0.0], [0.0, 1.0]]);
        let l = nn::scalar(&infonce(&q, &q, 1.0).unwrap()).unwrap();
        let expect = (1.0 + (-1.0f64).exp()).ln();
        assert!((l - expect).abs() < 1e-12, "{l} vs {expect}");
        assert!((l - 0.3133).abs() < 1e-4);
    }

    #[test]
    fn infonce_single_pair_is_zero() {
        let q = matrix(&[[0.3, -2.0]]);
        let k = matrix(&[[5.0, 1.0]]);
        assert_eq!(nn::scalar(&infonce(&q, &k, 0.7).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn infonce_rejects_zero_rows() {
        let q = matrix(&[[0.0, 0.0], [1.0, 0.0]]);
        let k = matrix(&[[1.0, 1.0], [1.0, 0.0]]);
        assert!(infonce(&q, &k, 1.0).is_err());
        assert!(infonce(&k, &q, 1.0).is_err());
    }

    #[test]
    fn infonce_is_permutation_invariant() {
        let q = matrix(&[[1.0, 0.2], [-0.5, 1.0], [0.3, 0.3]]);
        let k = matrix(&[[0.9, 0.1], [0.1, 1.0], [-1.0, 0.4]]);
        let perm = Tensor::from_vec(vec![2u32, 0, 1], 3, &device()).unwrap();
        let a = nn::scalar(&infonce(&q, &k, 0.5).unwrap()).unwrap();
        let b = nn::scalar(&infonce(&q.index_select(&perm, 0).unwrap(), &k.index_select(&perm, 0).unwrap(), 0.5).unwrap()).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn combine_losses_weights() {
        let l = Tensor::new(1.5f64, &device()).unwrap();
        assert_eq!(nn::scalar(&combine_losses(&l, &l, &l, &l).unwrap()).unwrap(), 3.0);
    }

    #[test]
    fn momentum_update_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let state = SSLState::new(tiny_encoder(), None, &mut rng).unwrap();
        state.momentum.params().set_scalar(0, 0, 2.0).unwrap();
        state.online.params().set_scalar(0, 0, 4.0).unwrap();
        state.momentum_update(0.99).unwrap();
        assert!((state.momentum.params().get_scalar(0, 0).unwrap() - 2.02).abs() < 1e-15);

        let before = state.momentum.params().snapshot().unwrap();
        state.momentum_update(1.0).unwrap();
        assert_eq!(state.momentum.params().snapshot().unwrap(), before);
        state.momentum_update(0.0).unwrap();
        assert_eq!(state.momentum.params().snapshot().unwrap(), state.online.params().snapshot().unwrap());
        assert!(state.momentum_update(1.5).is_err());
    }

    #[test]
    fn momentum_starts_as_copy() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let state = SSLState::new(tiny_encoder(), None, &mut rng).unwrap();
        assert_eq!(state.momentum.params().snapshot().unwrap(), state.online.params().snapshot().unwrap());
    }

    #[test]
    fn augment_identity_and_treatment_invariance() {
        let trajs = trajectories(4, 12);
        let refs: Vec<&Trajectory> = trajs.iter().collect();
        let batch = SequenceBatch::from_trajectories(&refs);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let same = augment(&batch, &mut rng, &AugmentConfig::identity()).unwrap();
        assert_eq!(same.dynamic, batch.dynamic);

        let v1 = augment(&batch, &mut rng, &AugmentConfig::default()).unwrap();
        let v2 = augment(&batch, &mut rng, &AugmentConfig::default()).unwrap();
        assert_ne!(v1.dynamic, v2.dynamic);
        for v in [&v1, &v2] {
            assert_eq!(v.dynamic.slice(s![.., .., 1..3]), batch.dynamic.slice(s![.., .., 1..3]));
            assert_eq!(v.statics, batch.statics);
            assert_eq!(v.mask, batch.mask);
        }
    }

    #[test]
    fn identical_views_single_sample_give_zero_losses() {
        let trajs = trajectories(1, 10);
        let refs: Vec<&Trajectory> = trajs.iter().collect();
        let batch = SequenceBatch::from_trajectories(&refs);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let state = SSLState::new(tiny_encoder(), None, &mut rng).unwrap();
        let views = Views {
            first: batch.clone(),
            second: batch,
            steps: vec![9],
        };
        let l = state.ssl_losses(&views, 1.0, &mut Mode::eval()).unwrap().values().unwrap();
        assert_eq!(l, [0.0; 5]);
    }

    #[test]
    fn momentum_encoder_gets_no_gradient() {
        let trajs = trajectories(4, 10);
        let refs: Vec<&Trajectory> = trajs.iter().collect();
        let batch = SequenceBatch::from_trajectories(&refs);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let state = SSLState::new(tiny_encoder(), None, &mut rng).unwrap();
        let views = make_views(&batch, &AugmentConfig::default(), &mut rng).unwrap();
        let losses = state.ssl_losses(&views, 1.0, &mut Mode::eval()).unwrap();
        let grads = losses.l_total.backward().unwrap();
        for (_, var) in state.momentum.params().iter() {
            if let Some(g) = grads.get(var.as_tensor()) {
                assert!(g.flatten_all().unwrap().to_vec1::<f64>().unwrap().iter().all(|&x| x == 0.0));
            }
        }
        let online_grad = state.online.params().vars().iter().filter(|v| grads.get(v.as_tensor()).is_some()).count();
        assert!(online_grad > 0);
    }

    #[test]
    fn pretrain_logs_and_reloads() {
        let trajs = trajectories(12, 10);
        let (train, val) = trajs.split_at(8);
        let cfg = SSLConfig {
            batch_size: 4,
            epochs: 2,
            ..SSLConfig::default()
        };
        let mut sink = Vec::new();
        let out = pretrain(train, val, tiny_encoder(), &cfg, Some(&mut sink)).unwrap();
        assert_eq!(out.log.len(), 4);
        let lines: Vec<SslLossRecord> = String::from_utf8(sink)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines, out.log);
        for r in &out.log {
            assert!((r.l_total - (r.l_h + (r.l_x + r.l_a + r.l_y) / 3.0)).abs() < 1e-9);
        }
        let ckpt = &out.checkpoint;
        let json = serde_json::to_string(ckpt).unwrap();
        let back: PretrainCheckpoint = serde_json::from_str(&json).unwrap();
        let state = SSLState::from_checkpoint(&back).unwrap();
        assert_eq!(validation_loss(&state, val, &cfg).unwrap(), ckpt.best_val_loss);

        let again = pretrain(train, val, tiny_encoder(), &cfg, None).unwrap();
        assert_eq!(again.log, out.log);
    }
}
