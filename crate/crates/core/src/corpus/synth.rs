//! Synthetic corpus with controllable class separability.
//!
//! Class `k` of `n` owns a quarter-octave noise band centred at a frequency
//! log-spaced between 250 Hz and 4.5 kHz, plus a steady tone half an octave
//! above the band centre. Each clip draws its own gain (uniform in ±6 dB),
//! tone phase, band noise and a white-noise floor at 10 dB SNR.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::manifest::{ClipRecord, Manifest, Split};
use crate::audio::wav::{clip_len, write_wav_i16, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};

const LOWEST_CENTER_HZ: f64 = 250.0;
const HIGHEST_CENTER_HZ: f64 = 4500.0;
const COMPONENT_RMS: f64 = 0.05;
const SNR_DB: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassVoice {
    pub band_lo_hz: f64,
    pub band_hi_hz: f64,
    pub tone_hz: f64,
}

pub fn class_voice(k: usize, n_classes: usize) -> ClassVoice {
    let t = if n_classes > 1 {
        k as f64 / (n_classes - 1) as f64
    } else {
        0.0
    };
    let center = LOWEST_CENTER_HZ * (HIGHEST_CENTER_HZ / LOWEST_CENTER_HZ).powf(t);
    ClassVoice {
        band_lo_hz: center * 2f64.powf(-0.25),
        band_hi_hz: center * 2f64.powf(0.25),
        tone_hz: center * 2f64.sqrt(),
    }
}

pub fn class_name(k: usize) -> String {
    format!("class_{k:02}")
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

fn band_noise(rng: &mut ChaCha8Rng, n: usize, rate: f64, lo: f64, hi: f64, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let mut buf: Vec<Complex64> = (0..n)
        .map(|_| Complex64::new(rng.sample(StandardNormal), 0.0))
        .collect();
    planner.plan_fft_forward(n).process(&mut buf);
    let hz_per_bin = rate / n as f64;
    for (k, c) in buf.iter_mut().enumerate() {
        let hz = k.min(n - k) as f64 * hz_per_bin;
        if hz < lo || hz > hi {
            *c = Complex64::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.into_iter().map(|c| c.re).collect()
}

/// Samples one clip of class `k`. Pure function of its arguments.
pub fn synth_clip(k: usize, n_classes: usize, rng: &mut ChaCha8Rng, rate: u32) -> Vec<f32> {
    let n = clip_len(rate);
    let voice = class_voice(k, n_classes);
    let mut planner = FftPlanner::new();

    let mut band = band_noise(rng, n, rate as f64, voice.band_lo_hz, voice.band_hi_hz, &mut planner);
    let scale = COMPONENT_RMS / rms(&band).max(1e-12);
    band.iter_mut().for_each(|v| *v *= scale);

    let gain = 10f64.powf(rng.random_range(-6.0..=6.0) / 20.0);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let omega = std::f64::consts::TAU * voice.tone_hz / rate as f64;
    let tone_amp = COMPONENT_RMS * 2f64.sqrt();
    let signal: Vec<f64> = band
        .iter()
        .enumerate()
        .map(|(i, b)| gain * (b + tone_amp * (omega * i as f64 + phase).sin()))
        .collect();

    let noise_rms = rms(&signal) / 10f64.powf(SNR_DB / 20.0);
    signal
        .iter()
        .map(|s| {
            let w: f64 = rng.sample(StandardNormal);
            (s + noise_rms * w).clamp(-1.0, 1.0) as f32
        })
        .collect()
}

/// Writes `out_dir/class_KK/clip_NNN.wav` (2 s, 16 kHz, 16-bit) and returns
/// the manifest with source paths relative to `out_dir`.
pub fn generate_synthetic(n_classes: usize, clips_per_class: usize, seed: u64, out_dir: &Path) -> Result<Manifest> {
    if n_classes < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {n_classes}")));
    }
    if clips_per_class < 6 {
        return Err(Error::Config(format!("need at least 6 clips per class, got {clips_per_class}")));
    }
    let rate = DEFAULT_SAMPLE_RATE;
    let mut records = Vec::with_capacity(n_classes * clips_per_class);
    for k in 0..n_classes {
        let label = class_name(k);
        let dir = out_dir.join(&label);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for i in 0..clips_per_class {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((k * clips_per_class + i) as u64);
            let samples = synth_clip(k, n_classes, &mut rng, rate);
            let name = format!("clip_{i:03}.wav");
            write_wav_i16(&dir.join(&name), &samples, rate)?;
            records.push(ClipRecord {
                clip_id: format!("{label}/{name}#0"),
                source_path: PathBuf::from(&label).join(&name),
                segment_index: 0,
                class_label: label.clone(),
                split: Split::Unassigned,
            });
        }
    }
    Manifest::new(records)
}
