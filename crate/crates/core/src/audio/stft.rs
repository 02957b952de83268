use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::wav::PcmClip;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowFn {
    /// Periodic Hann.
    Hann,
    Rectangular,
}

impl WindowFn {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            WindowFn::Rectangular => vec![1.0; len],
            WindowFn::Hann => (0..len)
                .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftConfig {
    pub fft_size: usize,
    pub window_ms: f64,
    pub hop_ms: f64,
    pub window_fn: WindowFn,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            fft_size: 1024,
            window_ms: 64.0,
            hop_ms: 32.0,
            window_fn: WindowFn::Hann,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.fft_size.is_power_of_two() || self.fft_size < 2 {
            return Err(Error::Config(format!("fft_size {} is not a power of two", self.fft_size)));
        }
        if !(self.window_ms > 0.0 && self.hop_ms > 0.0) {
            return Err(Error::Config("window and hop must be positive".into()));
        }
        if self.hop_ms > self.window_ms {
            return Err(Error::Config(format!(
                "hop {} ms exceeds window {} ms",
                self.hop_ms, self.window_ms
            )));
        }
        Ok(())
    }

    pub fn window_samples(&self, rate: u32) -> usize {
        (self.window_ms * rate as f64 / 1000.0).round() as usize
    }

    pub fn hop_samples(&self, rate: u32) -> usize {
        ((self.hop_ms * rate as f64 / 1000.0).round() as usize).max(1)
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// `floor((len - win) / hop) + 1`, or 0 when the signal is shorter than one window.
    pub fn frame_count(&self, len: usize, rate: u32) -> usize {
        let win = self.window_samples(rate);
        if len < win {
            0
        } else {
            (len - win) / self.hop_samples(rate) + 1
        }
    }
}

/// Non-negative-frequency half of a short-time Fourier transform, frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    frames: usize,
    bins: usize,
    data: Vec<Complex64>,
}

impl Spectrogram {
    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frame(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.bins..(i + 1) * self.bins]
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm()).collect()
    }
}

/// A planned transform for one configuration and sample rate.
pub struct Stft {
    cfg: StftConfig,
    rate: u32,
    window: Vec<f64>,
    hop: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft")
            .field("cfg", &self.cfg)
            .field("rate", &self.rate)
            .finish_non_exhaustive()
    }
}

impl Stft {
    pub fn new(cfg: StftConfig, rate: u32) -> Result<Self> {
        cfg.validate()?;
        let win = cfg.window_samples(rate);
        if win == 0 || win > cfg.fft_size {
            return Err(Error::Config(format!(
                "window of {win} samples does not fit a {}-point FFT",
                cfg.fft_size
            )));
        }
        let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
        Ok(Self {
            cfg,
            rate,
            window: cfg.window_fn.coefficients(win),
            hop: cfg.hop_samples(rate),
            fft,
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    pub fn process(&self, samples: &[f32]) -> Result<Spectrogram> {
        let win = self.window.len();
        let frames = self.cfg.frame_count(samples.len(), self.rate);
        if frames == 0 {
            return Err(Error::InvalidInput(format!(
                "signal of {} samples is shorter than one {win}-sample window",
                samples.len()
            )));
        }
        let n = self.cfg.fft_size;
        let bins = self.cfg.bins();
        let mut data = Vec::with_capacity(frames * bins);
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for f in 0..frames {
            let start = f * self.hop;
            for (i, slot) in buf.iter_mut().enumerate() {
                *slot = if i < win {
                    Complex64::new(samples[start + i] as f64 * self.window[i], 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                };
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            data.extend_from_slice(&buf[..bins]);
        }
        Ok(Spectrogram { frames, bins, data })
    }
}

pub fn stft(clip: &PcmClip, cfg: &StftConfig) -> Result<Spectrogram> {
    Stft::new(*cfg, clip.sample_rate_hz())?.process(clip.samples())
}
