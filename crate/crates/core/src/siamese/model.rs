//! Trained model: network weights, loss margin and input normalization.
//!
//! `EFPM` layout (little-endian): magic, version u32, layer count + 1 as u32
//! followed by that many u32 dims, margin f64, `dims[0]` f32 means,
//! `dims[0]` f32 standard deviations, then per layer the row-major f32
//! weights followed by the f32 biases.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::forward::{forward, Mode};
use super::loss::LossConfig;
use super::params::{Dense, MlpParams};
use crate::audio::FeatureSource;
use crate::binio::*;
use crate::error::{Error, Result};

pub const MODEL_MAGIC: [u8; 4] = *b"EFPM";
pub const MODEL_VERSION: u32 = 1;

/// Standard deviations below this are replaced by 1 so constant features pass through centred.
const MIN_STD: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub clip_id: String,
    pub values: Vec<f32>,
}

/// Per-feature standardization fitted on the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f32]>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut n = 0usize;
        for row in rows {
            if n == 0 {
                sum = vec![0.0; row.len()];
                sq = vec![0.0; row.len()];
            } else if row.len() != sum.len() {
                return Err(Error::Dimension {
                    expected: sum.len(),
                    actual: row.len(),
                });
            }
            for (i, &v) in row.iter().enumerate() {
                sum[i] += v as f64;
                sq[i] += v as f64 * v as f64;
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::InvalidInput("cannot fit normalization on zero clips".into()));
        }
        let n = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let s = (q / n - m * m).max(0.0).sqrt();
                (if s < MIN_STD { 1.0 } else { s }) as f32
            })
            .collect();
        Ok(Self {
            mean: mean.into_iter().map(|m| m as f32).collect(),
            std,
        })
    }

    pub fn fit_source(source: &dyn FeatureSource, clip_ids: &[&str]) -> Result<Self> {
        let rows = clip_ids
            .iter()
            .map(|id| source.feature(id).ok_or_else(|| Error::MissingFeature(id.to_string())))
            .collect::<Result<Vec<_>>>()?;
        Self::fit(rows)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f32]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        Ok(x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&v, (&m, &s))| (v as f64 - m as f64) / s as f64)
            .collect())
    }
}

/// `G_W` plus everything needed to embed raw features the same way at query time.
#[derive(Debug, Clone, PartialEq)]
pub struct SiameseModel {
    params: MlpParams,
    loss: LossConfig,
    normalizer: Normalizer,
}

impl SiameseModel {
    /// Rounds the weights to f32, the stored precision, so a saved and
    /// reloaded model is identical to this one.
    pub fn new(mut params: MlpParams, loss: LossConfig, normalizer: Normalizer) -> Result<Self> {
        if normalizer.dim() != params.input_dim() {
            return Err(Error::Dimension {
                expected: params.input_dim(),
                actual: normalizer.dim(),
            });
        }
        loss.validate()?;
        params.quantize_f32();
        if !params.is_finite() {
            return Err(Error::InvalidInput("model parameters are not finite".into()));
        }
        Ok(Self {
            params,
            loss,
            normalizer,
        })
    }

    pub fn params(&self) -> &MlpParams {
        &self.params
    }

    pub fn loss_config(&self) -> &LossConfig {
        &self.loss
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    pub fn input_dim(&self) -> usize {
        self.params.input_dim()
    }

    pub fn embedding_dim(&self) -> usize {
        self.params.output_dim()
    }

    /// Eval-mode embedding of one raw feature vector.
    pub fn embed(&self, clip_id: &str, features: &[f32]) -> Result<Embedding> {
        let x = self.normalizer.apply(features)?;
        let out = forward(&self.params, &x, Mode::Eval)?.output;
        Ok(Embedding {
            clip_id: clip_id.to_owned(),
            values: out.into_iter().map(|v| v as f32).collect(),
        })
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(&MODEL_MAGIC)?;
        write_u32(w, MODEL_VERSION)?;
        let dims = self.params.layer_dims();
        write_u32(w, dims.len() as u32)?;
        for d in dims {
            write_u32(w, d as u32)?;
        }
        write_f64(w, self.loss.margin)?;
        write_f32s(w, &self.normalizer.mean)?;
        write_f32s(w, &self.normalizer.std)?;
        for layer in &self.params.layers {
            let weights: Vec<f32> = layer.weights.iter().map(|&v| v as f32).collect();
            let bias: Vec<f32> = layer.bias.iter().map(|&v| v as f32).collect();
            write_f32s(w, &weights)?;
            write_f32s(w, &bias)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    /// SHA-256 of the serialized model.
    pub fn fingerprint(&self) -> [u8; 32] {
        Sha256::digest(self.to_bytes()).into()
    }

    pub fn read_from<R: Read>(r: &mut R, path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::format(path, "model", reason);
        let io = |e: std::io::Error| bad(e.to_string());
        let magic = read_magic(r).map_err(io)?;
        if magic != MODEL_MAGIC {
            return Err(bad(format!("magic {magic:?}, expected EFPM")));
        }
        let version = read_u32(r).map_err(io)?;
        if version != MODEL_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let n = read_u32(r).map_err(io)? as usize;
        if n != 4 {
            return Err(bad(format!("expected 4 layer dims, got {n}")));
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = read_u32(r).map_err(io)? as usize;
        }
        let margin = read_f64(r).map_err(io)?;
        let mean = read_f32s(r, dims[0]).map_err(io)?;
        let std = read_f32s(r, dims[0]).map_err(io)?;
        let mut layers = Vec::with_capacity(3);
        for w in dims.windows(2) {
            let (in_dim, out_dim) = (w[0], w[1]);
            let weights = read_f32s(r, in_dim * out_dim).map_err(io)?;
            let bias = read_f32s(r, out_dim).map_err(io)?;
            layers.push(Dense {
                in_dim,
                out_dim,
                weights: weights.into_iter().map(f64::from).collect(),
                bias: bias.into_iter().map(f64::from).collect(),
            });
        }
        expect_eof(r).map_err(io)?;
        let params = MlpParams::from_layers(layers).map_err(|e| bad(e.to_string()))?;
        SiameseModel::new(params, LossConfig { margin }, Normalizer { mean, std }).map_err(|e| bad(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(f), path)
    }
}
