//! Log-spectrogram features: log-spaced pooling on both axes, then log amplitude.
//!
//! The frequency axis is pooled into `freq_bins` bands whose edges are
//! geometrically spaced from bin 1 up to Nyquist; bin 0 joins the first band.
//! The time axis is pooled the same way over frame positions `1..=frames`.
//! Whenever an output cell receives no source bins (common at the low end of
//! a log axis, and on the time axis whenever `time_bins > frames`), it copies
//! the nearest non-empty cell, preferring the lower index on ties.

use serde::{Deserialize, Serialize};

use super::stft::{Spectrogram, Stft, StftConfig};
use super::wav::PcmClip;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatConfig {
    pub freq_bins: usize,
    pub time_bins: usize,
    pub amplitude_floor: f64,
}

impl Default for FeatConfig {
    fn default() -> Self {
        Self {
            freq_bins: 79,
            time_bins: 171,
            amplitude_floor: 1e-6,
        }
    }
}

impl FeatConfig {
    /// Network input dimensionality, 79 x 171 = 13509 by default.
    pub fn dim(&self) -> usize {
        self.freq_bins * self.time_bins
    }

    /// Smallest value any feature can take.
    pub fn log_floor(&self) -> f64 {
        self.amplitude_floor.ln()
    }

    pub fn validate(&self) -> Result<()> {
        if self.freq_bins == 0 || self.time_bins == 0 {
            return Err(Error::Config("feature grid must be non-empty".into()));
        }
        if !(self.amplitude_floor > 0.0 && self.amplitude_floor.is_finite()) {
            return Err(Error::Config("amplitude_floor must be positive".into()));
        }
        Ok(())
    }
}

/// Flattened `freq_bins x time_bins` grid, frequency-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LogSpecFeature {
    pub values: Vec<f32>,
    pub clip_id: String,
    pub class_label: Option<String>,
}

/// Maps each of `n_src` source indices to one of `n_out` log-spaced cells.
///
/// Source index `k` has log position `k + offset`; cell edges are
/// `span^(j / n_out)` for `j = 0..=n_out`. Indices whose position is below 1
/// go to cell 0.
fn log_assign(n_src: usize, n_out: usize, offset: usize, span: f64) -> Vec<usize> {
    let log_span = span.ln();
    (0..n_src)
        .map(|k| {
            let pos = (k + offset) as f64;
            if pos <= 1.0 || log_span <= 0.0 {
                0
            } else {
                ((n_out as f64 * pos.ln() / log_span).floor() as usize).min(n_out - 1)
            }
        })
        .collect()
}

/// For every output cell, the cell whose pooled value it takes: itself when
/// non-empty, otherwise the nearest non-empty cell.
fn fill_map(counts: &[usize]) -> Vec<usize> {
    let filled: Vec<usize> = (0..counts.len()).filter(|&j| counts[j] > 0).collect();
    (0..counts.len())
        .map(|j| {
            if counts[j] > 0 {
                return j;
            }
            // `filled` is sorted, so the first minimum is the lower index on ties.
            *filled
                .iter()
                .min_by_key(|&&f| f.abs_diff(j))
                .expect("at least one non-empty cell")
        })
        .collect()
}

/// Precomputed pooling plan for a fixed spectrogram shape.
#[derive(Debug, Clone)]
struct PoolPlan {
    freq_of_bin: Vec<usize>,
    freq_count: Vec<usize>,
    freq_fill: Vec<usize>,
    time_of_frame: Vec<usize>,
    time_count: Vec<usize>,
    time_fill: Vec<usize>,
}

impl PoolPlan {
    fn new(frames: usize, bins: usize, cfg: &FeatConfig) -> Self {
        let nyquist = (bins - 1).max(1) as f64;
        let freq_of_bin = log_assign(bins, cfg.freq_bins, 0, nyquist);
        let time_of_frame = log_assign(frames, cfg.time_bins, 1, (frames + 1) as f64);
        let mut freq_count = vec![0; cfg.freq_bins];
        for &b in &freq_of_bin {
            freq_count[b] += 1;
        }
        let mut time_count = vec![0; cfg.time_bins];
        for &t in &time_of_frame {
            time_count[t] += 1;
        }
        Self {
            freq_fill: fill_map(&freq_count),
            time_fill: fill_map(&time_count),
            freq_of_bin,
            freq_count,
            time_of_frame,
            time_count,
        }
    }

    fn apply(&self, spec: &Spectrogram, cfg: &FeatConfig) -> Vec<f32> {
        let (nf, nt) = (cfg.freq_bins, cfg.time_bins);
        // Sum magnitudes into (band, time cell), then divide by band and frame counts.
        let mut acc = vec![0.0f64; nf * nt];
        for frame in 0..spec.frames() {
            let t = self.time_of_frame[frame];
            for (bin, c) in spec.frame(frame).iter().enumerate() {
                acc[self.freq_of_bin[bin] * nt + t] += c.norm();
            }
        }
        let mut out = vec![0.0f32; nf * nt];
        for f in 0..nf {
            let sf = self.freq_fill[f];
            for t in 0..nt {
                let st = self.time_fill[t];
                let denom = (self.freq_count[sf] * self.time_count[st]) as f64;
                let mean = acc[sf * nt + st] / denom;
                out[f * nt + t] = (mean + cfg.amplitude_floor).ln() as f32;
            }
        }
        out
    }
}

/// Pools a complex spectrogram onto the log grid and takes `ln(mag + floor)`.
pub fn log_quantize(spec: &Spectrogram, cfg: &FeatConfig) -> Result<Vec<f32>> {
    cfg.validate()?;
    if spec.frames() == 0 || spec.bins() == 0 {
        return Err(Error::InvalidInput("empty spectrogram".into()));
    }
    Ok(PoolPlan::new(spec.frames(), spec.bins(), cfg).apply(spec, cfg))
}

/// Reusable clip-to-feature pipeline for one sample rate.
#[derive(Debug)]
pub struct Featurizer {
    stft: Stft,
    feat: FeatConfig,
    plan: PoolPlan,
    clip_samples: usize,
}

impl Featurizer {
    pub fn new(stft_cfg: StftConfig, feat_cfg: FeatConfig, rate: u32) -> Result<Self> {
        feat_cfg.validate()?;
        let stft = Stft::new(stft_cfg, rate)?;
        let clip_samples = super::wav::clip_len(rate);
        let frames = stft_cfg.frame_count(clip_samples, rate);
        if frames == 0 {
            return Err(Error::Config("clip is shorter than one analysis window".into()));
        }
        let plan = PoolPlan::new(frames, stft_cfg.bins(), &feat_cfg);
        Ok(Self {
            stft,
            feat: feat_cfg,
            plan,
            clip_samples,
        })
    }

    pub fn feat_config(&self) -> &FeatConfig {
        &self.feat
    }

    pub fn featurize(&self, clip: &PcmClip) -> Result<LogSpecFeature> {
        if clip.samples().len() != self.clip_samples {
            return Err(Error::Dimension {
                expected: self.clip_samples,
                actual: clip.samples().len(),
            });
        }
        let spec = self.stft.process(clip.samples())?;
        Ok(LogSpecFeature {
            values: self.plan.apply(&spec, &self.feat),
            clip_id: clip.clip_id().to_owned(),
            class_label: None,
        })
    }
}

pub fn featurize_clip(clip: &PcmClip, stft_cfg: &StftConfig, feat_cfg: &FeatConfig) -> Result<LogSpecFeature> {
    let spec = super::stft::stft(clip, stft_cfg)?;
    Ok(LogSpecFeature {
        values: log_quantize(&spec, feat_cfg)?,
        clip_id: clip.clip_id().to_owned(),
        class_label: None,
    })
}
