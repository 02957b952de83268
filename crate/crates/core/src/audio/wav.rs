//! WAV ingest: decode, downmix, resample and cut into 2-second clips.

use std::path::Path;

use crate::error::{Error, Result};

/// Every clip handled by the pipeline is exactly this long.
pub const CLIP_SECONDS: u32 = 2;

/// Ingest rate. 64 ms at this rate is exactly one 1024-point FFT frame.
pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// A fixed-length mono clip.
#[derive(Debug, Clone, PartialEq)]
pub struct PcmClip {
    samples: Vec<f32>,
    sample_rate_hz: u32,
    clip_id: String,
}

impl PcmClip {
    pub fn new(samples: Vec<f32>, sample_rate_hz: u32, clip_id: impl Into<String>) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        let expected = clip_len(sample_rate_hz);
        if samples.len() != expected {
            return Err(Error::InvalidInput(format!(
                "clip must hold exactly {expected} samples ({CLIP_SECONDS} s at {sample_rate_hz} Hz), got {}",
                samples.len()
            )));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
            clip_id: clip_id.into(),
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn clip_id(&self) -> &str {
        &self.clip_id
    }
}

/// Samples in one clip at `rate`.
pub fn clip_len(rate: u32) -> usize {
    rate as usize * CLIP_SECONDS as usize
}

/// Length of a signal of `n` samples after [`resample_linear`] from `from` to `to` Hz.
pub fn resampled_len(n: usize, from: u32, to: u32) -> usize {
    if from == to {
        return n;
    }
    ((n as u128 * to as u128) / from as u128) as usize
}

/// Linear-interpolation resampler. Output sample `i` sits at input position `i * from / to`.
pub fn resample_linear(input: &[f32], from: u32, to: u32) -> Vec<f32> {
    if from == to || input.is_empty() {
        return input.to_vec();
    }
    let out_len = resampled_len(input.len(), from, to);
    let (from, to) = (from as u64, to as u64);
    let last = input.len() - 1;
    (0..out_len as u64)
        .map(|i| {
            let num = i * from;
            let i0 = (num / to) as usize;
            let frac = (num % to) as f64 / to as f64;
            let a = input[i0.min(last)] as f64;
            let b = input[(i0 + 1).min(last)] as f64;
            (a + (b - a) * frac) as f32
        })
        .collect()
}

/// Header facts needed to count clips without decoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WavInfo {
    pub sample_rate_hz: u32,
    pub channels: u16,
    pub frames: usize,
}

impl WavInfo {
    /// Number of whole clips [`decode_wav`] yields at `target_rate_hz`.
    pub fn clip_count(&self, target_rate_hz: u32) -> usize {
        resampled_len(self.frames, self.sample_rate_hz, target_rate_hz) / clip_len(target_rate_hz)
    }
}

fn wav_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(source) => Error::io(path, source),
        other => Error::Wav {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    }
}

fn check_spec(path: &Path, spec: &hound::WavSpec) -> Result<()> {
    let ok = match spec.sample_format {
        hound::SampleFormat::Int => matches!(spec.bits_per_sample, 8 | 16 | 24 | 32),
        hound::SampleFormat::Float => spec.bits_per_sample == 32,
    };
    if !ok || spec.channels == 0 || spec.sample_rate == 0 {
        return Err(Error::Wav {
            path: path.to_path_buf(),
            reason: format!(
                "unsupported encoding: {:?} {} bit, {} channel(s), {} Hz",
                spec.sample_format, spec.bits_per_sample, spec.channels, spec.sample_rate
            ),
        });
    }
    Ok(())
}

pub fn probe_wav(path: &Path) -> Result<WavInfo> {
    let reader = hound::WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    check_spec(path, &spec)?;
    Ok(WavInfo {
        sample_rate_hz: spec.sample_rate,
        channels: spec.channels,
        frames: reader.duration() as usize,
    })
}

/// Decodes a whole file to mono at its native rate.
pub fn read_mono(path: &Path) -> Result<(Vec<f32>, u32)> {
    let mut reader = hound::WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    check_spec(path, &spec)?;
    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_err(path, e))?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| (v as f64 * scale) as f32))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| wav_err(path, e))?
        }
    };
    if interleaved.is_empty() {
        return Err(Error::Wav {
            path: path.to_path_buf(),
            reason: "zero-length audio".into(),
        });
    }
    let ch = spec.channels as usize;
    let mono = if ch == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(ch)
            .map(|frame| (frame.iter().map(|&s| s as f64).sum::<f64>() / ch as f64) as f32)
            .collect()
    };
    Ok((mono, spec.sample_rate))
}

/// Decodes `path` into consecutive non-overlapping 2-second mono clips at
/// `target_rate_hz`, ids `<filename>#<index>`. A trailing remainder shorter
/// than one clip is dropped; a file shorter than one clip yields no clips.
pub fn decode_wav(path: &Path, target_rate_hz: u32) -> Result<Vec<PcmClip>> {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_wav_with_prefix(path, target_rate_hz, &name)
}

/// Same as [`decode_wav`] with ids `<prefix>#<index>`.
pub fn decode_wav_with_prefix(path: &Path, target_rate_hz: u32, prefix: &str) -> Result<Vec<PcmClip>> {
    if target_rate_hz == 0 {
        return Err(Error::InvalidInput("target rate must be positive".into()));
    }
    let (mono, rate) = read_mono(path)?;
    let mono = resample_linear(&mono, rate, target_rate_hz);
    let len = clip_len(target_rate_hz);
    if mono.len() < len {
        log::warn!(
            "{}: shorter than {CLIP_SECONDS} s, no clips produced",
            path.display()
        );
        return Ok(Vec::new());
    }
    mono.chunks_exact(len)
        .enumerate()
        .map(|(i, chunk)| PcmClip::new(chunk.to_vec(), target_rate_hz, format!("{prefix}#{i}")))
        .collect()
}

/// Writes mono 16-bit PCM. Samples are clamped to [-1, 1].
pub fn write_wav_i16(path: &Path, samples: &[f32], sample_rate_hz: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16;
        w.write_sample(v).map_err(|e| wav_err(path, e))?;
    }
    w.finalize().map_err(|e| wav_err(path, e))
}
