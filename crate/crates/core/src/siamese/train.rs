//! Minibatch training with validation-loss model selection.
//!
//! A batch is evaluated as matrix products. The 13509-wide first layer is
//! computed once per distinct clip in the batch; every pair branch then gets
//! its own dropout masks for the hidden layers, and the first-layer deltas of
//! branches sharing a clip are summed before the weight gradient product.
//! The result equals the sum of per-pair gradients from [`super::grad`].

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forward::{forward, DropoutMasks, Mode};
use super::loss::{contrastive_grad, contrastive_loss, euclidean, LossConfig};
use super::model::{Normalizer, SiameseModel};
use super::optim::{AdamConfig, Optimizer, OptimizerKind};
use super::params::{init_params, MlpParams, DEFAULT_LAYER_DIMS};
use crate::audio::FeatureSource;
use crate::error::{Error, Result};
use crate::pairs::{epoch_permutation, PairExample};

const SHUFFLE_SALT: u64 = 0x5eed_0001;
const DROPOUT_SALT: u64 = 0x5eed_0002;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub adam: AdamConfig,
    pub dropout_rate: f64,
    pub seed: u64,
    pub layer_dims: [usize; 4],
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            adam: AdamConfig::default(),
            dropout_rate: 0.3,
            seed: 0,
            layer_dims: DEFAULT_LAYER_DIMS,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout rate {} not in [0, 1)", self.dropout_rate)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.layer_dims.contains(&0) {
            return Err(Error::Config("layer dims must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Checkpoint with the lowest validation loss.
    pub model: SiameseModel,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
}

/// Normalized features of every clip referenced by a pair list, row-major.
#[derive(Debug, Clone)]
pub(crate) struct ClipMatrix {
    pub dim: usize,
    pub data: Vec<f64>,
    pub index: HashMap<String, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct IndexedPair {
    pub a: usize,
    pub b: usize,
    pub label: u8,
}

impl ClipMatrix {
    pub fn build(
        pairs: &[PairExample],
        source: &dyn FeatureSource,
        normalizer: &Normalizer,
    ) -> Result<(Self, Vec<IndexedPair>)> {
        let dim = normalizer.dim();
        let mut m = ClipMatrix {
            dim,
            data: Vec::new(),
            index: HashMap::new(),
        };
        let mut indexed = Vec::with_capacity(pairs.len());
        for p in pairs {
            let a = m.intern(&p.clip_a, source, normalizer)?;
            let b = m.intern(&p.clip_b, source, normalizer)?;
            indexed.push(IndexedPair { a, b, label: p.label });
        }
        Ok((m, indexed))
    }

    fn intern(&mut self, id: &str, source: &dyn FeatureSource, normalizer: &Normalizer) -> Result<usize> {
        if let Some(&i) = self.index.get(id) {
            return Ok(i);
        }
        let raw = source.feature(id).ok_or_else(|| Error::MissingFeature(id.to_owned()))?;
        self.data.extend(normalizer.apply(raw)?);
        let i = self.index.len();
        self.index.insert(id.to_owned(), i);
        Ok(i)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// `C = A B + beta C` with arbitrary strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    (m, k, n): (usize, usize, usize),
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    if k > 0 {
        assert!((m - 1) * rsa + (k - 1) * csa < a.len());
        assert!((k - 1) * rsb + (n - 1) * csb < b.len());
    }
    assert!((m - 1) * rsc + (n - 1) * csc < c.len());
    // SAFETY: the extents asserted above keep every access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

fn add_bias(z: &mut [f64], bias: &[f64]) {
    for row in z.chunks_exact_mut(bias.len()) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

fn column_sums(m: &[f64], cols: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for row in m.chunks_exact(cols) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

/// Mean contrastive loss of `batch` and its gradient, written into `grads`.
/// `masks[2p]` and `masks[2p + 1]` are the dropout masks of pair `p`'s branches.
pub(crate) fn batch_gradients(
    params: &MlpParams,
    clips: &ClipMatrix,
    batch: &[IndexedPair],
    masks: &[DropoutMasks],
    cfg: &LossConfig,
    grads: &mut MlpParams,
) -> f64 {
    let [d0, h1, h2, h3] = params.layer_dims();
    let (l1, l2, l3) = (&params.layers[0], &params.layers[1], &params.layers[2]);
    let r = 2 * batch.len();
    let scale = 1.0 / batch.len() as f64;

    let mut slot: HashMap<usize, usize> = HashMap::new();
    let mut uniq = Vec::new();
    let branch_u: Vec<usize> = batch
        .iter()
        .flat_map(|p| [p.a, p.b])
        .map(|row| {
            *slot.entry(row).or_insert_with(|| {
                uniq.push(row);
                uniq.len() - 1
            })
        })
        .collect();
    let u = uniq.len();
    let mut x = Vec::with_capacity(u * d0);
    for &row in &uniq {
        x.extend_from_slice(clips.row(row));
    }

    let mut z1 = vec![0.0; u * h1];
    gemm((u, d0, h1), &x, (d0, 1), &l1.weights, (1, d0), 0.0, &mut z1, (h1, 1));
    add_bias(&mut z1, &l1.bias);

    let mut hid1 = vec![0.0; r * h1];
    for (br, &ui) in branch_u.iter().enumerate() {
        for j in 0..h1 {
            hid1[br * h1 + j] = relu(z1[ui * h1 + j]) * masks[br].scale(0, j);
        }
    }
    let mut z2 = vec![0.0; r * h2];
    gemm((r, h1, h2), &hid1, (h1, 1), &l2.weights, (1, h1), 0.0, &mut z2, (h2, 1));
    add_bias(&mut z2, &l2.bias);
    let mut hid2 = vec![0.0; r * h2];
    for br in 0..r {
        for j in 0..h2 {
            hid2[br * h2 + j] = relu(z2[br * h2 + j]) * masks[br].scale(1, j);
        }
    }
    let mut z3 = vec![0.0; r * h3];
    gemm((r, h2, h3), &hid2, (h2, 1), &l3.weights, (1, h2), 0.0, &mut z3, (h3, 1));
    add_bias(&mut z3, &l3.bias);
    let out: Vec<f64> = z3.iter().map(|&v| relu(v)).collect();

    let mut total = 0.0;
    let mut d3 = vec![0.0; r * h3];
    for (p, pair) in batch.iter().enumerate() {
        let (a, b) = (2 * p, 2 * p + 1);
        let (loss, g) = contrastive_grad(&out[a * h3..(a + 1) * h3], &out[b * h3..(b + 1) * h3], pair.label, cfg);
        total += loss;
        for j in 0..h3 {
            let step_a = if z3[a * h3 + j] > 0.0 { 1.0 } else { 0.0 };
            let step_b = if z3[b * h3 + j] > 0.0 { 1.0 } else { 0.0 };
            d3[a * h3 + j] = g[j] * scale * step_a;
            d3[b * h3 + j] = -g[j] * scale * step_b;
        }
    }

    let g3 = &mut grads.layers[2];
    gemm((h3, r, h2), &d3, (1, h3), &hid2, (h2, 1), 0.0, &mut g3.weights, (h2, 1));
    column_sums(&d3, h3, &mut g3.bias);

    let mut d2 = vec![0.0; r * h2];
    gemm((r, h3, h2), &d3, (h3, 1), &l3.weights, (h2, 1), 0.0, &mut d2, (h2, 1));
    for (br, mask) in masks.iter().enumerate().take(r) {
        for j in 0..h2 {
            let k = br * h2 + j;
            let step = if z2[k] > 0.0 { 1.0 } else { 0.0 };
            d2[k] *= mask.scale(1, j) * step;
        }
    }
    let g2 = &mut grads.layers[1];
    gemm((h2, r, h1), &d2, (1, h2), &hid1, (h1, 1), 0.0, &mut g2.weights, (h1, 1));
    column_sums(&d2, h2, &mut g2.bias);

    let mut dh1 = vec![0.0; r * h1];
    gemm((r, h2, h1), &d2, (h2, 1), &l2.weights, (h1, 1), 0.0, &mut dh1, (h1, 1));
    let mut delta1 = vec![0.0; u * h1];
    for (br, &ui) in branch_u.iter().enumerate() {
        for j in 0..h1 {
            let step = if z1[ui * h1 + j] > 0.0 { 1.0 } else { 0.0 };
            delta1[ui * h1 + j] += dh1[br * h1 + j] * masks[br].scale(0, j) * step;
        }
    }
    let g1 = &mut grads.layers[0];
    gemm((h1, u, d0), &delta1, (1, h1), &x, (d0, 1), 0.0, &mut g1.weights, (d0, 1));
    column_sums(&delta1, h1, &mut g1.bias);

    total * scale
}

/// Mean eval-mode loss over `pairs`; each clip is embedded once.
pub(crate) fn eval_loss(params: &MlpParams, clips: &ClipMatrix, pairs: &[IndexedPair], cfg: &LossConfig) -> Result<f64> {
    let mut cache: HashMap<usize, Vec<f64>> = HashMap::new();
    let mut total = 0.0;
    for p in pairs {
        for row in [p.a, p.b] {
            if let std::collections::hash_map::Entry::Vacant(slot) = cache.entry(row) {
                slot.insert(forward(params, clips.row(row), Mode::Eval)?.output);
            }
        }
        total += contrastive_loss(p.label, euclidean(&cache[&p.a], &cache[&p.b]), cfg);
    }
    Ok(total / pairs.len() as f64)
}

/// Trains `G_W` on `train_pairs` for `cfg.epochs` epochs and returns the
/// epoch whose validation loss was lowest (earliest on ties).
pub fn train(
    train_pairs: &[PairExample],
    val_pairs: &[PairExample],
    features: &dyn FeatureSource,
    normalizer: &Normalizer,
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
) -> Result<TrainOutcome> {
    train_observed(train_pairs, val_pairs, features, normalizer, cfg, loss_cfg, |_, _| {})
}

/// [`train`], calling `observe` with each epoch's stats and parameters.
#[allow(clippy::too_many_arguments)]
pub fn train_observed(
    train_pairs: &[PairExample],
    val_pairs: &[PairExample],
    features: &dyn FeatureSource,
    normalizer: &Normalizer,
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    mut observe: impl FnMut(&EpochStats, &MlpParams),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    loss_cfg.validate()?;
    if train_pairs.is_empty() || val_pairs.is_empty() {
        return Err(Error::InvalidInput("training and validation pair lists must be non-empty".into()));
    }
    if normalizer.dim() != cfg.layer_dims[0] {
        return Err(Error::Dimension {
            expected: cfg.layer_dims[0],
            actual: normalizer.dim(),
        });
    }
    let (train_clips, train_idx) = ClipMatrix::build(train_pairs, features, normalizer)?;
    let (val_clips, val_idx) = ClipMatrix::build(val_pairs, features, normalizer)?;

    let mut params = init_params(cfg.seed, &cfg.layer_dims);
    let mut grads = params.zeros_like();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, cfg.adam, &params);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ DROPOUT_SALT);

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, MlpParams)> = None;
    for epoch in 0..cfg.epochs {
        let order = epoch_permutation(train_idx.len(), cfg.seed ^ SHUFFLE_SALT, epoch as u64);
        let mut loss_sum = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<IndexedPair> = chunk.iter().map(|&i| train_idx[i]).collect();
            let masks: Vec<DropoutMasks> = (0..2 * batch.len())
                .map(|_| DropoutMasks::sample(&mut dropout_rng, &params, cfg.dropout_rate))
                .collect();
            let loss = batch_gradients(&params, &train_clips, &batch, &masks, loss_cfg, &mut grads);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch: epoch + 1, batch: bi });
            }
            loss_sum += loss * batch.len() as f64;
            opt.step(&mut params, &grads);
        }
        let train_loss = loss_sum / train_idx.len() as f64;
        let val_loss = eval_loss(&params, &val_clips, &val_idx, loss_cfg)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch: epoch + 1,
                batch: usize::MAX,
            });
        }
        log::info!("epoch {:>4}: train {train_loss:.6} val {val_loss:.6}", epoch + 1);
        let stats = EpochStats {
            epoch: epoch + 1,
            train_loss,
            val_loss,
        };
        observe(&stats, &params);
        history.push(stats);
        if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
            best = Some((val_loss, epoch + 1, params.clone()));
        }
    }
    let (_, best_epoch, best_params) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        model: SiameseModel::new(best_params, *loss_cfg, normalizer.clone())?,
        history,
        best_epoch,
    })
}

pub fn write_history_csv(path: &std::path::Path, history: &[EpochStats]) -> Result<()> {
    let mut text = String::from("epoch,train_loss,val_loss\n");
    for h in history {
        text.push_str(&format!("{},{},{}\n", h.epoch, h.train_loss, h.val_loss));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
