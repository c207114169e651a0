use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{LayerKind, NetSpec};
use crate::error::{RanpError, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitScheme {
    Glorot,
    Orthogonal,
}

impl std::str::FromStr for InitScheme {
    type Err = RanpError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "glorot" => Ok(InitScheme::Glorot),
            "orthogonal" => Ok(InitScheme::Orthogonal),
            _ => Err(RanpError::Config(format!("unknown init scheme `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    /// Index of the owning layer in the spec.
    pub layer: usize,
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

/// Parameters of every conv/linear layer, in declared order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    pub layers: Vec<LayerParams>,
}

impl ParamSet {
    pub fn get(&self, layer: usize) -> Option<&LayerParams> {
        self.layers.iter().find(|p| p.layer == layer)
    }

    pub fn count(&self) -> usize {
        self.layers.iter().map(|p| p.weight.len() + p.bias.as_ref().map_or(0, Tensor::len)).sum()
    }

    /// Checks every tensor against the shapes the spec implies.
    pub fn validate(&self, spec: &NetSpec) -> Result<()> {
        let compute = spec.compute_layers();
        if compute.len() != self.layers.len() {
            return Err(RanpError::Config(format!(
                "{} parameter groups for {} compute layers",
                self.layers.len(),
                compute.len()
            )));
        }
        for (&li, p) in compute.iter().zip(&self.layers) {
            let l = &spec.layers[li];
            if p.layer != li || p.weight.shape() != l.weight_shape() {
                return Err(RanpError::Layer {
                    layer: l.id.clone(),
                    detail: format!("weight shape {:?}, expected {:?}", p.weight.shape(), l.weight_shape()),
                });
            }
            if p.bias.as_ref().map(|b| b.shape().to_vec()) != l.bias.then(|| vec![l.out_channels]) {
                return Err(RanpError::Layer { layer: l.id.clone(), detail: "bias mismatch".into() });
            }
        }
        Ok(())
    }

    /// Flat little-endian blob: magic, value count, then each layer's weight
    /// (row-major) followed by its bias, in declared layer order.
    pub fn to_blob(&self) -> Vec<u8> {
        let values: Vec<f64> = self
            .layers
            .iter()
            .flat_map(|p| {
                p.weight.data().iter().chain(p.bias.iter().flat_map(|b| b.data().iter())).copied()
            })
            .collect();
        let mut out = Vec::with_capacity(16 + 8 * values.len());
        out.extend_from_slice(BLOB_MAGIC);
        out.extend_from_slice(&(values.len() as u64).to_le_bytes());
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_blob(spec: &NetSpec, bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != BLOB_MAGIC {
            return Err(RanpError::Config("not a parameter blob (bad magic)".into()));
        }
        let count = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let expected = spec.param_count();
        if count != expected || bytes.len() != 16 + 8 * count {
            return Err(RanpError::Config(format!(
                "blob holds {count} values ({} bytes), spec needs {expected}",
                bytes.len()
            )));
        }
        let mut values = bytes[16..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let mut take = |shape: Vec<usize>| -> Result<Tensor> {
            let n = shape.iter().product();
            Tensor::new(shape, values.by_ref().take(n).collect())
        };
        let mut layers = Vec::new();
        for li in spec.compute_layers() {
            let l = &spec.layers[li];
            let weight = take(l.weight_shape())?;
            let bias = if l.bias { Some(take(vec![l.out_channels])?) } else { None };
            layers.push(LayerParams { layer: li, weight, bias });
        }
        Ok(ParamSet { layers })
    }
}

const BLOB_MAGIC: &[u8; 8] = b"RANPPRM1";

pub fn init_params(spec: &NetSpec, scheme: InitScheme, seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = spec
        .compute_layers()
        .into_iter()
        .map(|li| {
            let l = &spec.layers[li];
            let kvol = match l.kind {
                LayerKind::Linear => 1,
                _ => l.kernel_volume(),
            };
            let fan_in = l.in_channels * kvol;
            let fan_out = l.out_channels * kvol;
            let data = match scheme {
                InitScheme::Glorot => {
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    (0..l.out_channels * fan_in).map(|_| rng.random_range(-limit..limit)).collect()
                }
                InitScheme::Orthogonal => orthogonal(l.out_channels, fan_in, &mut rng),
            };
            let weight = Tensor::new(l.weight_shape(), data).expect("weight shape");
            let bias = l.bias.then(|| Tensor::zeros(&[l.out_channels]));
            LayerParams { layer: li, weight, bias }
        })
        .collect();
    ParamSet { layers }
}

/// Row-major `rows x cols` matrix with orthonormal rows (rows <= cols) or
/// orthonormal columns (rows > cols).
fn orthogonal(rows: usize, cols: usize, rng: &mut impl Rng) -> Vec<f64> {
    let (n, len) = if rows <= cols { (rows, cols) } else { (cols, rows) };
    let mut vecs: Vec<Vec<f64>> =
        (0..n).map(|_| (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).collect();
    // Modified Gram-Schmidt, two passes.
    for _ in 0..2 {
        for i in 0..n {
            for j in 0..i {
                let dot: f64 = vecs[i].iter().zip(&vecs[j]).map(|(a, b)| a * b).sum();
                let (head, tail) = vecs.split_at_mut(i);
                tail[0].iter_mut().zip(&head[j]).for_each(|(a, b)| *a -= dot * b);
            }
            let norm = vecs[i].iter().map(|a| a * a).sum::<f64>().sqrt();
            vecs[i].iter_mut().for_each(|a| *a /= norm);
        }
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = if rows <= cols { vecs[r][c] } else { vecs[c][r] };
        }
    }
    out
}
