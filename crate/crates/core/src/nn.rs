//! Small neural-network toolkit on top of `candle`: a named, seeded
//! parameter store, the handful of layers the models need, seeded dropout
//! and parameter snapshots for checkpoints.

use candle_core::{CpuStorage, CustomOp1, DType, Device, Layout, Shape, Tensor, Var, D};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DTYPE: DType = DType::F64;

pub fn device() -> Device {
    Device::Cpu
}

/// How parameters are initialised.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    Uniform(f64),
    Normal(f64),
    Const(f64),
}

/// Ordered collection of named trainable variables.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<(String, Var)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn create<R: Rng + ?Sized>(&mut self, name: impl Into<String>, shape: &[usize], init: Init, rng: &mut R) -> Result<Var> {
        let name = name.into();
        if self.entries.iter().any(|(n, _)| *n == name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter {name}")));
        }
        let n: usize = shape.iter().product();
        let data: Vec<f64> = match init {
            Init::Uniform(a) => {
                let dist = Uniform::new_inclusive(-a, a).map_err(|e| Error::InvalidArgument(e.to_string()))?;
                (0..n).map(|_| dist.sample(rng)).collect()
            }
            Init::Normal(std) => {
                let dist = Normal::new(0.0, std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
                (0..n).map(|_| dist.sample(rng)).collect()
            }
            Init::Const(c) => vec![c; n],
        };
        let var = Var::from_tensor(&Tensor::from_vec(data, shape, &device())?)?;
        self.entries.push((name, var.clone()));
        Ok(var)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.entries.iter().map(|(_, v)| v.clone()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.entries.iter().map(|(n, v)| (n.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, v)| v.elem_count()).sum()
    }

    pub fn snapshot(&self) -> Result<Vec<NamedTensor>> {
        self.entries
            .iter()
            .map(|(name, var)| {
                Ok(NamedTensor {
                    name: name.clone(),
                    shape: var.dims().to_vec(),
                    data: var.as_tensor().flatten_all()?.to_vec1::<f64>()?,
                })
            })
            .collect()
    }

    /// Overwrite every parameter from a snapshot with identical names and shapes.
    pub fn restore(&self, snapshot: &[NamedTensor]) -> Result<()> {
        if snapshot.len() != self.entries.len() {
            return Err(Error::Checkpoint(format!(
                "snapshot holds {} tensors, model expects {}",
                snapshot.len(),
                self.entries.len()
            )));
        }
        for ((name, var), saved) in self.entries.iter().zip(snapshot) {
            if *name != saved.name || var.dims() != saved.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter mismatch: model has {name} {:?}, snapshot has {} {:?}",
                    var.dims(),
                    saved.name,
                    saved.shape
                )));
            }
            var.set(&Tensor::from_slice(&saved.data, saved.shape.as_slice(), &device())?)?;
        }
        Ok(())
    }

    /// Copy values from another store with the same layout.
    pub fn copy_from(&self, other: &ParamStore) -> Result<()> {
        for ((_, dst), (_, src)) in self.entries.iter().zip(&other.entries) {
            dst.set(&src.as_tensor().copy()?)?;
        }
        Ok(())
    }

    /// Flat value of one scalar inside parameter `index`.
    pub fn get_scalar(&self, index: usize, offset: usize) -> Result<f64> {
        let var = &self.entries[index].1;
        Ok(var.as_tensor().flatten_all()?.to_vec1::<f64>()?[offset])
    }

    pub fn set_scalar(&self, index: usize, offset: usize, value: f64) -> Result<()> {
        let var = &self.entries[index].1;
        let mut data = var.as_tensor().flatten_all()?.to_vec1::<f64>()?;
        data[offset] = value;
        var.set(&Tensor::from_vec(data, var.dims(), &device())?)?;
        Ok(())
    }
}

/// Serialized parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Forward-pass mode. Dropout is active only when a seeded rng is present.
pub struct Mode {
    pub dropout: f64,
    rng: Option<ChaCha8Rng>,
}

impl Mode {
    pub fn eval() -> Self {
        Mode { dropout: 0.0, rng: None }
    }

    pub fn train(dropout: f64, rng: ChaCha8Rng) -> Self {
        Mode { dropout, rng: Some(rng) }
    }

    pub fn is_train(&self) -> bool {
        self.rng.is_some()
    }

    /// Inverted dropout with a mask drawn from the mode's own rng.
    pub fn dropout(&mut self, x: &Tensor) -> Result<Tensor> {
        let p = self.dropout;
        match self.rng.as_mut() {
            Some(rng) if p > 0.0 => {
                let keep = 1.0 / (1.0 - p);
                let mask: Vec<f64> = (0..x.elem_count())
                    .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                    .collect();
                let mask = Tensor::from_vec(mask, x.shape(), x.device())?;
                Ok(x.mul(&mask)?)
            }
            _ => Ok(x.clone()),
        }
    }
}

/// Affine map over the last dimension: `x W + b`, `W` stored `in x out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Var,
    pub bias: Var,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut R) -> Result<Self> {
        let bound = 1.0 / (d_in.max(1) as f64).sqrt();
        Ok(Linear {
            weight: store.create(format!("{name}.weight"), &[d_in, d_out], Init::Uniform(bound), rng)?,
            bias: store.create(format!("{name}.bias"), &[d_out], Init::Uniform(bound), rng)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let d_in = *dims.last().expect("rank >= 1");
        let rows = x.elem_count() / d_in.max(1);
        let y = x
            .reshape((rows, d_in))?
            .matmul(self.weight.as_tensor())?
            .broadcast_add(self.bias.as_tensor())?;
        let mut out_dims = dims;
        *out_dims.last_mut().expect("rank >= 1") = self.weight.dims()[1];
        Ok(y.reshape(out_dims)?)
    }
}

/// Layer normalization over the last dimension.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: Var,
    pub shift: Var,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d: usize, rng: &mut R) -> Result<Self> {
        Ok(LayerNorm {
            gain: store.create(format!("{name}.gain"), &[d], Init::Const(1.0), rng)?,
            shift: store.create(format!("{name}.shift"), &[d], Init::Const(0.0), rng)?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed
            .broadcast_mul(self.gain.as_tensor())?
            .broadcast_add(self.shift.as_tensor())?)
    }
}

/// Two-layer perceptron with a GELU between the layers.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub hidden: Linear,
    pub output: Linear,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d_in: usize, d_hidden: usize, d_out: usize, rng: &mut R) -> Result<Self> {
        Ok(Mlp {
            hidden: Linear::new(store, &format!("{name}.hidden"), d_in, d_hidden, rng)?,
            output: Linear::new(store, &format!("{name}.output"), d_hidden, d_out, rng)?,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: &mut Mode) -> Result<Tensor> {
        let h = self.hidden.forward(x)?.gelu_erf()?;
        let h = mode.dropout(&h)?;
        self.output.forward(&h)
    }
}

/// Row-wise softmax over the last dimension in a single pass, with a
/// backward rule `ds = s * (g - sum(g * s))`.
struct SoftmaxLastDim;

impl CustomOp1 for SoftmaxLastDim {
    fn name(&self) -> &'static str {
        "softmax-last-dim-f64"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let CpuStorage::F64(data) = storage else {
            candle_core::bail!("softmax expects f64 storage");
        };
        let Some((start, end)) = layout.contiguous_offsets() else {
            candle_core::bail!("softmax expects a contiguous layout");
        };
        let dim = layout.dims().last().copied().unwrap_or(1).max(1);
        let mut out = data[start..end].to_vec();
        for row in out.chunks_mut(dim) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        Ok((CpuStorage::F64(out), layout.shape().clone()))
    }

    fn bwd(&self, _arg: &Tensor, res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let dot = (grad_res * res)?.sum_keepdim(D::Minus1)?;
        Ok(Some(res.mul(&grad_res.broadcast_sub(&dot)?)?))
    }
}

pub fn softmax_last_dim(x: &Tensor) -> Result<Tensor> {
    Ok(x.contiguous()?.apply_op1(SoftmaxLastDim)?)
}

pub fn tensor_from_array3(a: &ndarray::Array3<f64>) -> Result<Tensor> {
    let shape = a.shape().to_vec();
    let data: Vec<f64> = a.iter().copied().collect();
    Ok(Tensor::from_vec(data, shape, &device())?)
}

pub fn tensor_from_array2(a: &ndarray::Array2<f64>) -> Result<Tensor> {
    let shape = a.shape().to_vec();
    let data: Vec<f64> = a.iter().copied().collect();
    Ok(Tensor::from_vec(data, shape, &device())?)
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DTYPE)?.to_scalar::<f64>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn seeded_init_is_reproducible() {
        let build = || {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let mut store = ParamStore::new();
            Linear::new(&mut store, "l", 4, 3, &mut rng).unwrap();
            store.snapshot().unwrap()
        };
        assert_eq!(build(), build());
    }

    #[test]
    fn snapshot_restore_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut a = ParamStore::new();
        Linear::new(&mut a, "l", 4, 3, &mut rng).unwrap();
        let mut b = ParamStore::new();
        Linear::new(&mut b, "l", 4, 3, &mut rng).unwrap();
        assert_ne!(a.snapshot().unwrap(), b.snapshot().unwrap());
        b.restore(&a.snapshot().unwrap()).unwrap();
        assert_eq!(a.snapshot().unwrap(), b.snapshot().unwrap());
        let mut c = ParamStore::new();
        Linear::new(&mut c, "other", 4, 3, &mut rng).unwrap();
        assert!(c.restore(&a.snapshot().unwrap()).is_err());
    }

    #[test]
    fn layer_norm_normalizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let ln = LayerNorm::new(&mut store, "ln", 4, &mut rng).unwrap();
        let x = Tensor::new(&[[1.0f64, 2.0, 3.0, 6.0]], &device()).unwrap();
        let y = ln.forward(&x).unwrap().to_vec2::<f64>().unwrap();
        let mean: f64 = y[0].iter().sum::<f64>() / 4.0;
        let var: f64 = y[0].iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4);
    }

    #[test]
    fn fused_softmax_matches_composite() {
        let x = Var::from_tensor(
            &Tensor::new(&[[1.0f64, -2.0, 0.5, f64::NEG_INFINITY], [3.0, 3.0, -1.0, 0.0]], &device()).unwrap(),
        )
        .unwrap();
        let w = Tensor::new(&[[0.3f64, -1.0, 2.0, 0.7], [1.5, 0.2, -0.4, 1.1]], &device()).unwrap();
        let fused = softmax_last_dim(x.as_tensor()).unwrap();
        let plain = candle_nn::ops::softmax(x.as_tensor(), D::Minus1).unwrap();
        let (a, b) = (fused.to_vec2::<f64>().unwrap(), plain.to_vec2::<f64>().unwrap());
        assert_eq!(a[0][3], 0.0);
        for (ra, rb) in a.iter().zip(&b) {
            for (va, vb) in ra.iter().zip(rb) {
                assert!((va - vb).abs() < 1e-15);
            }
        }
        let ga = fused.mul(&w).unwrap().sum_all().unwrap().backward().unwrap();
        let gb = plain.mul(&w).unwrap().sum_all().unwrap().backward().unwrap();
        let ga = ga.get(x.as_tensor()).unwrap().to_vec2::<f64>().unwrap();
        let gb = gb.get(x.as_tensor()).unwrap().to_vec2::<f64>().unwrap();
        assert_eq!(ga[0][3], 0.0);
        for (ra, rb) in ga.iter().zip(&gb) {
            for (va, vb) in ra.iter().zip(rb) {
                assert!((va - vb).abs() < 1e-14, "{va} vs {vb}");
            }
        }
    }

    #[test]
    fn eval_mode_dropout_is_identity() {
        let x = Tensor::new(&[1.0f64, 2.0, 3.0], &device()).unwrap();
        let mut mode = Mode::eval();
        assert_eq!(mode.dropout(&x).unwrap().to_vec1::<f64>().unwrap(), vec![1.0, 2.0, 3.0]);
        let mut train = Mode::train(0.5, ChaCha8Rng::seed_from_u64(1));
        let y = train.dropout(&Tensor::ones(1000, DTYPE, &device()).unwrap()).unwrap();
        let v = y.to_vec1::<f64>().unwrap();
        assert!(v.iter().all(|&e| e == 0.0 || e == 2.0));
        let kept = v.iter().filter(|&&e| e > 0.0).count();
        assert!((400..600).contains(&kept));
    }
}
