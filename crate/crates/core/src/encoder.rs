//! Dual-attention history encoder.
//!
//! Every scalar of the observed history becomes a token: a shared affine
//! map lifts it to `d_model`, and a two-level (group, index) feature
//! positional encoding tells features apart. Each layer then alternates
//!
//! * a temporal block: causal multi-head self-attention with clipped
//!   relative-position keys, run independently along time for every
//!   feature; static tokens only go through the point-wise feed-forward;
//! * a feature-wise block: full self-attention across the `d_S + d_V`
//!   feature tokens of each time step; static tokens are updated by
//!   attending among themselves only, so they stay time-invariant.
//!
//! Blocks are pre-norm with residual connections. Outputs at step `t` depend
//! on inputs at steps `<= t` only.

use candle_core::{IndexOp, Tensor, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::batch::{pad_histories, SequenceBatch};
use crate::data::history::History;
use crate::error::{Error, Result};
use crate::nn::{self, device, Init, LayerNorm, Linear, Mode, NamedTensor, ParamStore};

pub const ENCODER_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub dropout: f64,
    pub max_relative_position: usize,
    /// Feed-forward width as a multiple of `d_model`.
    pub ff_multiplier: usize,
    pub d_x: usize,
    pub d_a: usize,
    pub d_y: usize,
    pub d_v: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig::tumor()
    }
}

impl EncoderConfig {
    /// Tumor-growth defaults: width 24, one layer, two heads, dropout 0.1.
    pub fn tumor() -> Self {
        EncoderConfig {
            d_model: 24,
            n_layers: 1,
            n_heads: 2,
            dropout: 0.1,
            max_relative_position: 15,
            ff_multiplier: 4,
            d_x: crate::sim::D_X,
            d_a: crate::sim::D_A,
            d_y: crate::sim::D_Y,
            d_v: crate::sim::D_V,
        }
    }

    pub fn d_s(&self) -> usize {
        self.d_x + self.d_a + self.d_y
    }

    pub fn max_group_size(&self) -> usize {
        self.d_x.max(self.d_a).max(self.d_y).max(self.d_v)
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.d_model == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.n_layers == 0 {
            return Err(Error::InvalidArgument("n_layers must be at least 1".into()));
        }
        if self.d_x == 0 || self.d_a == 0 || self.d_y == 0 {
            return Err(Error::InvalidArgument("covariate, treatment and outcome groups must be nonempty".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureGroup {
    Covariate,
    Treatment,
    Outcome,
    Static,
}

impl FeatureGroup {
    pub fn index(self) -> usize {
        match self {
            FeatureGroup::Covariate => 0,
            FeatureGroup::Treatment => 1,
            FeatureGroup::Outcome => 2,
            FeatureGroup::Static => 3,
        }
    }
}

/// Pre-norm transformer block: attention and point-wise feed-forward.
#[derive(Clone, Debug)]
struct Block {
    norm_attn: LayerNorm,
    qkv: Linear,
    proj: Linear,
    norm_ff: LayerNorm,
    ff_in: Linear,
    ff_out: Linear,
}

/// Relative-position key table for the temporal attention.
#[derive(Clone, Debug)]
struct RelativeKeys {
    table: candle_core::Var,
    max_distance: usize,
}

impl Block {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, cfg: &EncoderConfig, rng: &mut R) -> Result<Self> {
        let d = cfg.d_model;
        let ff = d * cfg.ff_multiplier;
        Ok(Block {
            norm_attn: LayerNorm::new(store, &format!("{name}.norm_attn"), d, rng)?,
            qkv: Linear::new(store, &format!("{name}.qkv"), d, 3 * d, rng)?,
            proj: Linear::new(store, &format!("{name}.proj"), d, d, rng)?,
            norm_ff: LayerNorm::new(store, &format!("{name}.norm_ff"), d, rng)?,
            ff_in: Linear::new(store, &format!("{name}.ff_in"), d, ff, rng)?,
            ff_out: Linear::new(store, &format!("{name}.ff_out"), ff, d, rng)?,
        })
    }

    /// Multi-head self-attention over `x: N x L x d`; returns the output and
    /// the `N x H x L x L` attention weights (before dropout).
    fn attention(
        &self,
        x: &Tensor,
        n_heads: usize,
        causal: bool,
        rel: Option<&RelativeKeys>,
        mode: &mut Mode,
    ) -> Result<(Tensor, Tensor)> {
        let (n, l, d) = x.dims3()?;
        let dh = d / n_heads;
        let qkv = self
            .qkv
            .forward(x)?
            .reshape((n, l, 3, n_heads, dh))?
            .permute((2, 0, 3, 1, 4))?;
        let q = qkv.i(0)?.contiguous()?;
        let k = qkv.i(1)?.contiguous()?;
        let v = qkv.i(2)?.contiguous()?;

        let q = (q / (dh as f64).sqrt())?;
        let mut scores = q.matmul(&k.t()?.contiguous()?)?;
        if let Some(rel) = rel {
            let width = 2 * rel.max_distance + 1;
            let q_rel = q
                .reshape((n * n_heads * l, dh))?
                .matmul(&rel.table.as_tensor().t()?)?
                .reshape((n, n_heads, l, width))?;
            let index = relative_index(l, rel.max_distance)?
                .broadcast_as((n, n_heads, l, l))?
                .contiguous()?;
            scores = (scores + q_rel.gather(&index, 3)?)?;
        }
        if causal {
            scores = scores.broadcast_add(&causal_bias(l)?)?;
        }
        let weights = nn::softmax_last_dim(&scores)?;
        let attended = mode.dropout(&weights)?.matmul(&v)?;
        let merged = attended.permute((0, 2, 1, 3))?.contiguous()?.reshape((n, l, d))?;
        Ok((self.proj.forward(&merged)?, weights))
    }

    /// `x + dropout(attention(norm(x)))`
    fn attend(&self, x: &Tensor, n_heads: usize, causal: bool, rel: Option<&RelativeKeys>, mode: &mut Mode) -> Result<(Tensor, Tensor)> {
        let (out, weights) = self.attention(&self.norm_attn.forward(x)?, n_heads, causal, rel, mode)?;
        Ok(((x + mode.dropout(&out)?)?, weights))
    }

    /// `x + dropout(ff(norm(x)))`
    fn feed_forward(&self, x: &Tensor, mode: &mut Mode) -> Result<Tensor> {
        let h = self.ff_in.forward(&self.norm_ff.forward(x)?)?.gelu_erf()?;
        let h = self.ff_out.forward(&h)?;
        Ok((x + mode.dropout(&h)?)?)
    }
}

/// `0` on and below the diagonal, `-inf` above it.
fn causal_bias(l: usize) -> Result<Tensor> {
    let data: Vec<f64> = (0..l * l)
        .map(|k| if k % l <= k / l { 0.0 } else { f64::NEG_INFINITY })
        .collect();
    Ok(Tensor::from_vec(data, (l, l), &device())?)
}

/// `index[i][j] = clip(j - i, -K, K) + K`.
fn relative_index(l: usize, max_distance: usize) -> Result<Tensor> {
    let k = max_distance as i64;
    let data: Vec<u32> = (0..l * l)
        .map(|idx| {
            let (i, j) = ((idx / l) as i64, (idx % l) as i64);
            ((j - i).clamp(-k, k) + k) as u32
        })
        .collect();
    Ok(Tensor::from_vec(data, (l, l), &device())?)
}

#[derive(Clone, Debug)]
struct Layer {
    temporal: Block,
    relative_keys: RelativeKeys,
    featurewise: Block,
}

/// Learnable state of the encoder.
#[derive(Clone, Debug)]
pub struct EncoderState {
    pub config: EncoderConfig,
    store: ParamStore,
    input_weight: candle_core::Var,
    input_bias: candle_core::Var,
    /// `d_model x (4 + max group size)`
    feature_table: candle_core::Var,
    layers: Vec<Layer>,
    final_norm: LayerNorm,
}

/// Aggregated per-step representations, each `B x T x d_model`.
#[derive(Clone, Debug)]
pub struct RepresentationBundle {
    pub z_x: Tensor,
    pub z_a: Tensor,
    pub z_y: Tensor,
    pub z: Tensor,
}

impl RepresentationBundle {
    /// Pick one step per sample (`steps[b]`, 0-based) from every aggregate;
    /// each result is `B x d_model`.
    pub fn at_steps(&self, steps: &[usize]) -> Result<RepresentationBundle> {
        let (b, t, d) = self.z.dims3()?;
        if steps.len() != b || steps.iter().any(|&s| s >= t) {
            return Err(Error::Shape(format!("step selection {steps:?} does not fit a {b} x {t} batch")));
        }
        let rows: Vec<u32> = steps.iter().enumerate().map(|(k, &s)| (k * t + s) as u32).collect();
        let rows = Tensor::from_vec(rows, b, &device())?;
        let pick = |z: &Tensor| -> Result<Tensor> { Ok(z.reshape((b * t, d))?.index_select(&rows, 0)?) };
        Ok(RepresentationBundle {
            z_x: pick(&self.z_x)?,
            z_a: pick(&self.z_a)?,
            z_y: pick(&self.z_y)?,
            z: pick(&self.z)?,
        })
    }

    /// The four aggregates in the fixed order `[H, X, A, Y]`.
    pub fn components(&self) -> [&Tensor; 4] {
        [&self.z, &self.z_x, &self.z_a, &self.z_y]
    }
}

/// Encoder output for a batch.
#[derive(Clone, Debug)]
pub struct Encoded {
    /// `B x T x d_S x d_model`
    pub per_feature: Tensor,
    /// `B x d_V x d_model`, absent when there are no static features.
    pub statics: Option<Tensor>,
    pub bundle: RepresentationBundle,
}

impl EncoderState {
    pub fn new<R: Rng + ?Sized>(config: EncoderConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let mut store = ParamStore::new();
        let input_weight = store.create("input.weight", &[d], Init::Uniform(1.0), rng)?;
        let input_bias = store.create("input.bias", &[d], Init::Uniform(1.0), rng)?;
        let feature_table = store.create(
            "feature_table",
            &[d, 4 + config.max_group_size()],
            Init::Normal(1.0 / (d as f64).sqrt()),
            rng,
        )?;
        let mut layers = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let temporal = Block::new(&mut store, &format!("layer{l}.temporal"), &config, rng)?;
            let table = store.create(
                format!("layer{l}.temporal.relative_keys"),
                &[2 * config.max_relative_position + 1, config.head_dim()],
                Init::Normal(1.0 / (config.head_dim() as f64).sqrt()),
                rng,
            )?;
            let featurewise = Block::new(&mut store, &format!("layer{l}.featurewise"), &config, rng)?;
            layers.push(Layer {
                temporal,
                relative_keys: RelativeKeys {
                    table,
                    max_distance: config.max_relative_position,
                },
                featurewise,
            });
        }
        let final_norm = LayerNorm::new(&mut store, "final_norm", d, rng)?;
        Ok(EncoderState {
            config,
            store,
            input_weight,
            input_bias,
            feature_table,
            layers,
            final_norm,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    /// Independent copy with identical parameter values.
    pub fn deep_copy(&self) -> Result<EncoderState> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let copy = EncoderState::new(self.config.clone(), &mut rng)?;
        copy.store.copy_from(&self.store)?;
        Ok(copy)
    }

    /// Shared scalar-to-vector affine map applied to every cell:
    /// `dynamic: B x T x d_S -> B x T x d_S x d_model`, `statics: B x d_V -> B x d_V x d_model`.
    pub fn project_inputs(&self, dynamic: &Tensor, statics: Option<&Tensor>) -> Result<(Tensor, Option<Tensor>)> {
        let lift = |x: &Tensor| -> Result<Tensor> {
            Ok(x
                .unsqueeze(D::Minus1)?
                .broadcast_mul(self.input_weight.as_tensor())?
                .broadcast_add(self.input_bias.as_tensor())?)
        };
        let e_s = lift(dynamic)?;
        let e_v = statics.map(lift).transpose()?;
        Ok((e_s, e_v))
    }

    /// Feature positional encoding `E_fea * concat(e_group, e_index)`.
    pub fn feature_positional_encoding(&self, group: FeatureGroup, index: usize) -> Result<Tensor> {
        let size = match group {
            FeatureGroup::Covariate => self.config.d_x,
            FeatureGroup::Treatment => self.config.d_a,
            FeatureGroup::Outcome => self.config.d_y,
            FeatureGroup::Static => self.config.d_v,
        };
        if index >= size {
            return Err(Error::InvalidArgument(format!("feature index {index} out of range for {group:?} ({size} features)")));
        }
        let onehots = self.group_onehots(&[(group, index)])?;
        Ok(self.feature_table.as_tensor().matmul(&onehots)?.squeeze(1)?)
    }

    /// `(4 + m) x F` matrix whose columns are the concatenated one-hots.
    fn group_onehots(&self, features: &[(FeatureGroup, usize)]) -> Result<Tensor> {
        let rows = 4 + self.config.max_group_size();
        let f = features.len();
        let mut data = vec![0.0; rows * f];
        for (col, (group, index)) in features.iter().enumerate() {
            data[group.index() * f + col] = 1.0;
            data[(4 + index) * f + col] = 1.0;
        }
        Ok(Tensor::from_vec(data, (rows, f), &device())?)
    }

    fn dynamic_features(&self) -> Vec<(FeatureGroup, usize)> {
        let c = &self.config;
        (0..c.d_x)
            .map(|i| (FeatureGroup::Covariate, i))
            .chain((0..c.d_a).map(|i| (FeatureGroup::Treatment, i)))
            .chain((0..c.d_y).map(|i| (FeatureGroup::Outcome, i)))
            .collect()
    }

    /// `Z^{S,(0)}` and `Z^{V,(0)}`: projected inputs plus feature positions.
    pub fn embed(&self, dynamic: &Tensor, statics: Option<&Tensor>) -> Result<(Tensor, Option<Tensor>)> {
        let (e_s, e_v) = self.project_inputs(dynamic, statics)?;
        let table = self.feature_table.as_tensor();
        let pos_s = table.matmul(&self.group_onehots(&self.dynamic_features())?)?.t()?;
        let z_s = e_s.broadcast_add(&pos_s)?;
        let z_v = match e_v {
            Some(e_v) => {
                let feats: Vec<_> = (0..self.config.d_v).map(|i| (FeatureGroup::Static, i)).collect();
                let pos_v = table.matmul(&self.group_onehots(&feats)?)?.t()?;
                Some(e_v.broadcast_add(&pos_v)?)
            }
            None => None,
        };
        Ok((z_s, z_v))
    }

    /// Temporal block of layer `layer`.
    ///
    /// `z_s: B x T x d_S x d`, `z_v: B x d_V x d`. Returns the updated
    /// tensors and the causal attention weights `(B * d_S) x H x T x T`.
    pub fn temporal_attention_block(
        &self,
        z_s: &Tensor,
        z_v: Option<&Tensor>,
        layer: usize,
        mode: &mut Mode,
    ) -> Result<(Tensor, Option<Tensor>, Tensor)> {
        let l = &self.layers[layer];
        let (b, t, f, d) = z_s.dims4()?;
        let seqs = z_s.permute((0, 2, 1, 3))?.contiguous()?.reshape((b * f, t, d))?;
        let (seqs, weights) = l
            .temporal
            .attend(&seqs, self.config.n_heads, true, Some(&l.relative_keys), mode)?;
        let seqs = l.temporal.feed_forward(&seqs, mode)?;
        let z_s = seqs.reshape((b, f, t, d))?.permute((0, 2, 1, 3))?.contiguous()?;
        let z_v = z_v.map(|v| l.temporal.feed_forward(v, mode)).transpose()?;
        Ok((z_s, z_v, weights))
    }

    /// Feature-wise block of layer `layer`.
    ///
    /// Returns the updated tensors and the per-step attention weights
    /// `(B * T) x H x (d_S + d_V) x (d_S + d_V)`.
    pub fn featurewise_attention_block(
        &self,
        z_s: &Tensor,
        z_v: Option<&Tensor>,
        layer: usize,
        mode: &mut Mode,
    ) -> Result<(Tensor, Option<Tensor>, Tensor)> {
        let block = &self.layers[layer].featurewise;
        let heads = self.config.n_heads;
        let (b, t, f, d) = z_s.dims4()?;
        let tokens = match z_v {
            Some(v) => {
                let nv = v.dim(1)?;
                let v_t = v.unsqueeze(1)?.broadcast_as((b, t, nv, d))?;
                Tensor::cat(&[z_s, &v_t], 2)?
            }
            None => z_s.clone(),
        };
        let n_tok = tokens.dim(2)?;
        let tokens = tokens.reshape((b * t, n_tok, d))?;
        let (tokens, weights) = block.attend(&tokens, heads, false, None, mode)?;
        let tokens = block.feed_forward(&tokens, mode)?;
        let z_s = tokens.narrow(1, 0, f)?.reshape((b, t, f, d))?;
        let z_v = match z_v {
            Some(v) => {
                let (v, _) = block.attend(v, heads, false, None, mode)?;
                Some(block.feed_forward(&v, mode)?)
            }
            None => None,
        };
        Ok((z_s, z_v, weights))
    }

    /// Full forward pass over a padded batch.
    ///
    /// `dynamic: B x T x d_S`, `statics: B x d_V`. Every step of every
    /// sequence is encoded in one pass; padding after a sequence's end
    /// cannot influence its active steps.
    pub fn encode(&self, dynamic: &Tensor, statics: Option<&Tensor>, mode: &mut Mode) -> Result<Encoded> {
        let c = &self.config;
        let (_, _, f) = dynamic.dims3()?;
        if f != c.d_s() {
            return Err(Error::Shape(format!("history has {f} dynamic features, encoder expects {}", c.d_s())));
        }
        let statics = if c.d_v == 0 { None } else { statics };
        if c.d_v > 0 && statics.is_none() {
            return Err(Error::Shape("encoder expects static features".into()));
        }
        let (mut z_s, mut z_v) = self.embed(dynamic, statics)?;
        for layer in 0..self.layers.len() {
            let (s, v, _) = self.temporal_attention_block(&z_s, z_v.as_ref(), layer, mode)?;
            let (s, v, _) = self.featurewise_attention_block(&s, v.as_ref(), layer, mode)?;
            z_s = s;
            z_v = v;
        }
        let per_feature = self.final_norm.forward(&z_s)?;
        let statics = z_v.map(|v| self.final_norm.forward(&v)).transpose()?;
        let bundle = aggregate(&per_feature, c)?;
        Ok(Encoded {
            per_feature,
            statics,
            bundle,
        })
    }

    pub fn encode_history(&self, history: &History, mode: &mut Mode) -> Result<Encoded> {
        let (dynamic, statics, _, _) = pad_histories(&[history]);
        self.encode(
            &nn::tensor_from_array3(&dynamic)?,
            Some(&nn::tensor_from_array2(&statics)?),
            mode,
        )
    }

    pub fn encode_sequences(&self, batch: &SequenceBatch, mode: &mut Mode) -> Result<Encoded> {
        self.encode(
            &nn::tensor_from_array3(&batch.dynamic)?,
            Some(&nn::tensor_from_array2(&batch.statics)?),
            mode,
        )
    }

    pub fn checkpoint(&self) -> Result<EncoderCheckpoint> {
        Ok(EncoderCheckpoint {
            format_version: ENCODER_FORMAT_VERSION,
            config: self.config.clone(),
            params: self.store.snapshot()?,
        })
    }

    pub fn from_checkpoint(ckpt: &EncoderCheckpoint) -> Result<EncoderState> {
        if ckpt.format_version != ENCODER_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported encoder format version {}", ckpt.format_version)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let state = EncoderState::new(ckpt.config.clone(), &mut rng)?;
        state.store.restore(&ckpt.params)?;
        Ok(state)
    }
}

/// Group means over the feature axis: `z^X`, `z^A`, `z^Y` and `z` over all
/// dynamic features.
pub fn aggregate(per_feature: &Tensor, c: &EncoderConfig) -> Result<RepresentationBundle> {
    let group = |start: usize, len: usize| -> Result<Tensor> { Ok(per_feature.narrow(2, start, len)?.mean(2)?) };
    Ok(RepresentationBundle {
        z_x: group(0, c.d_x)?,
        z_a: group(c.d_x, c.d_a)?,
        z_y: group(c.d_x + c.d_a, c.d_y)?,
        z: per_feature.mean(2)?,
    })
}

/// Serialized encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderCheckpoint {
    pub format_version: u32,
    pub config: EncoderConfig,
    pub params: Vec<NamedTensor>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Var;

    fn small_config() -> EncoderConfig {
        EncoderConfig {
            d_model: 8,
            n_heads: 2,
            max_relative_position: 3,
            ..EncoderConfig::tumor()
        }
    }

    fn state(seed: u64) -> EncoderState {
        EncoderState::new(small_config(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn random_input(b: usize, t: usize, seed: u64) -> (Tensor, Tensor) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dyn_data: Vec<f64> = (0..b * t * 4).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let st: Vec<f64> = (0..b).map(|_| f64::from(u8::from(rng.random::<bool>()))).collect();
        (
            Tensor::from_vec(dyn_data, (b, t, 4), &device()).unwrap(),
            Tensor::from_vec(st, (b, 1), &device()).unwrap(),
        )
    }

    fn values(t: &Tensor) -> Vec<f64> {
        t.flatten_all().unwrap().to_vec1::<f64>().unwrap()
    }

    #[test]
    fn config_validation() {
        let mut c = EncoderConfig::tumor();
        c.validate().unwrap();
        c.n_heads = 5;
        assert!(c.validate().is_err());
        let c = EncoderConfig { n_layers: 0, ..EncoderConfig::tumor() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_input_projects_to_bias() {
        let s = state(1);
        let dynamic = Tensor::zeros((1, 3, 4), nn::DTYPE, &device()).unwrap();
        let (e_s, _) = s.project_inputs(&dynamic, None).unwrap();
        let bias = values(s.input_bias.as_tensor());
        for row in e_s.reshape((12, 8)).unwrap().to_vec2::<f64>().unwrap() {
            assert_eq!(row, bias);
        }
    }

    #[test]
    fn projection_shapes_and_sharing() {
        let s = EncoderState::new(EncoderConfig::tumor(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut data = vec![0.0; 60 * 4];
        data[5] = 0.7;
        data[200] = 0.7;
        let dynamic = Tensor::from_vec(data, (1, 60, 4), &device()).unwrap();
        let (e_s, _) = s.project_inputs(&dynamic, None).unwrap();
        assert_eq!(e_s.dims(), &[1, 60, 4, 24]);
        let flat = e_s.reshape((240, 24)).unwrap();
        assert_eq!(values(&flat.get(5).unwrap()), values(&flat.get(200).unwrap()));
    }

    #[test]
    fn feature_positions_select_table_columns() {
        let s = state(2);
        let table = s.feature_table.as_tensor().to_vec2::<f64>().unwrap();
        let col = |j: usize| table.iter().map(|r| r[j]).collect::<Vec<f64>>();
        let x0 = values(&s.feature_positional_encoding(FeatureGroup::Covariate, 0).unwrap());
        let expect: Vec<f64> = col(0).iter().zip(col(4)).map(|(a, b)| a + b).collect();
        assert_eq!(x0, expect);

        let a0 = values(&s.feature_positional_encoding(FeatureGroup::Treatment, 0).unwrap());
        let y0 = values(&s.feature_positional_encoding(FeatureGroup::Outcome, 0).unwrap());
        let v0 = values(&s.feature_positional_encoding(FeatureGroup::Static, 0).unwrap());
        for (g, enc) in [(1usize, &a0), (2, &y0), (3, &v0)] {
            for r in 0..8 {
                let diff = enc[r] - x0[r];
                assert!((diff - (table[r][g] - table[r][0])).abs() < 1e-12);
            }
        }
        assert!(s.feature_positional_encoding(FeatureGroup::Treatment, 2).is_err());
        assert!(s.feature_positional_encoding(FeatureGroup::Covariate, 1).is_err());
    }

    #[test]
    fn temporal_weights_are_causal_and_normalized() {
        let s = state(3);
        let (dynamic, statics) = random_input(2, 7, 0);
        let (z_s, z_v) = s.embed(&dynamic, Some(&statics)).unwrap();
        let (_, _, w) = s.temporal_attention_block(&z_s, z_v.as_ref(), 0, &mut Mode::eval()).unwrap();
        let (n, h, l, _) = w.dims4().unwrap();
        let w = w.reshape((n * h * l, l)).unwrap().to_vec2::<f64>().unwrap();
        for (r, row) in w.iter().enumerate() {
            let i = r % l;
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row[i + 1..].iter().all(|&p| p == 0.0));
        }
    }

    #[test]
    fn single_step_attends_to_itself() {
        let s = state(4);
        let (dynamic, statics) = random_input(1, 1, 1);
        let (z_s, z_v) = s.embed(&dynamic, Some(&statics)).unwrap();
        let (out, _, w) = s.temporal_attention_block(&z_s, z_v.as_ref(), 0, &mut Mode::eval()).unwrap();
        assert!(values(&w).iter().all(|&p| p == 1.0));
        // attention of one element returns its own value projection
        let l = &s.layers[0].temporal;
        let seq = z_s.reshape((4, 1, 8)).unwrap();
        let normed = l.norm_attn.forward(&seq).unwrap();
        let v = l.qkv.forward(&normed).unwrap().narrow(2, 16, 8).unwrap();
        let attn = l.proj.forward(&v).unwrap();
        let expect = l.feed_forward(&(seq + attn).unwrap(), &mut Mode::eval()).unwrap();
        let got = out.reshape((4, 1, 8)).unwrap();
        for (a, b) in values(&got).iter().zip(values(&expect)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn featurewise_block_properties() {
        let s = state(5);
        let (dynamic, statics) = random_input(2, 6, 2);
        let (z_s, z_v) = s.embed(&dynamic, Some(&statics)).unwrap();
        let (out_s, out_v, w) = s.featurewise_attention_block(&z_s, z_v.as_ref(), 0, &mut Mode::eval()).unwrap();
        assert_eq!(out_v.unwrap().dims(), &[2, 1, 8]);
        for row in w.reshape(((2 * 6 * 2 * 5), 5)).unwrap().to_vec2::<f64>().unwrap() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        // reversing time reverses the outputs: no mixing across steps
        let rev = Tensor::from_vec((0..6u32).rev().collect::<Vec<_>>(), 6, &device()).unwrap();
        let z_rev = z_s.index_select(&rev, 1).unwrap();
        let (out_rev, _, _) = s.featurewise_attention_block(&z_rev, z_v.as_ref(), 0, &mut Mode::eval()).unwrap();
        assert_eq!(values(&out_rev), values(&out_s.index_select(&rev, 1).unwrap()));
    }

    #[test]
    fn static_outputs_are_time_invariant() {
        let s = state(6);
        let (dynamic, statics) = random_input(3, 5, 3);
        let long = s.encode(&dynamic, Some(&statics), &mut Mode::eval()).unwrap();
        let short = s.encode(&dynamic.narrow(1, 0, 2).unwrap(), Some(&statics), &mut Mode::eval()).unwrap();
        assert_eq!(values(long.statics.as_ref().unwrap()), values(short.statics.as_ref().unwrap()));
    }

    #[test]
    fn aggregates_are_group_means() {
        let s = state(7);
        let (dynamic, statics) = random_input(2, 4, 4);
        let enc = s.encode(&dynamic, Some(&statics), &mut Mode::eval()).unwrap();
        assert_eq!(enc.per_feature.dims(), &[2, 4, 4, 8]);
        let pf = enc.per_feature.reshape((8, 4, 8)).unwrap().to_vec3::<f64>().unwrap();
        let z = enc.bundle.z.reshape((8, 8)).unwrap().to_vec2::<f64>().unwrap();
        let z_x = enc.bundle.z_x.reshape((8, 8)).unwrap().to_vec2::<f64>().unwrap();
        let z_a = enc.bundle.z_a.reshape((8, 8)).unwrap().to_vec2::<f64>().unwrap();
        let z_y = enc.bundle.z_y.reshape((8, 8)).unwrap().to_vec2::<f64>().unwrap();
        for step in 0..8 {
            for k in 0..8 {
                let f = |j: usize| pf[step][j][k];
                let mut total = 0.0;
                for j in 0..4 {
                    total += f(j);
                }
                assert!((z[step][k] - total / 4.0).abs() < 1e-12);
                assert_eq!(z_x[step][k], f(0));
                assert!((z_a[step][k] - (f(1) + f(2)) / 2.0).abs() < 1e-12);
                assert_eq!(z_y[step][k], f(3));
            }
        }
    }

    #[test]
    fn truncation_matches_full_pass() {
        let s = state(8);
        let (dynamic, statics) = random_input(2, 12, 5);
        let full = s.encode(&dynamic, Some(&statics), &mut Mode::eval()).unwrap();
        for t in [1usize, 5, 11] {
            let part = s.encode(&dynamic.narrow(1, 0, t).unwrap(), Some(&statics), &mut Mode::eval()).unwrap();
            let a = values(&full.per_feature.narrow(1, 0, t).unwrap());
            let b = values(&part.per_feature);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn checkpoint_round_trip_and_deep_copy() {
        let s = state(9);
        let ckpt = s.checkpoint().unwrap();
        let json = serde_json::to_string(&ckpt).unwrap();
        let back: EncoderCheckpoint = serde_json::from_str(&json).unwrap();
        let r = EncoderState::from_checkpoint(&back).unwrap();
        assert_eq!(r.checkpoint().unwrap(), ckpt);
        let copy = s.deep_copy().unwrap();
        // mutating the copy leaves the original alone
        let first: &Var = &copy.params().vars()[0];
        first.set(&first.as_tensor().affine(2.0, 1.0).unwrap()).unwrap();
        assert_eq!(s.checkpoint().unwrap(), ckpt);
    }

    #[test]
    fn history_shape_contract() {
        let s = state(10);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = crate::sim::sample_patient_params(&crate::sim::PriorConfig::default(), &mut rng);
        let traj = crate::sim::simulate_trajectory(&p, &crate::sim::PolicyParams::with_gamma(10.0), 9, 0, &mut rng).unwrap();
        let h = History::from_trajectory(&traj, 9);
        let enc = s.encode_history(&h, &mut Mode::eval()).unwrap();
        assert_eq!(enc.per_feature.dims(), &[1, 9, 4, 8]);
        assert_eq!(enc.statics.unwrap().dims(), &[1, 1, 8]);
        assert_eq!(enc.bundle.z.dims(), &[1, 9, 8]);
    }
}
