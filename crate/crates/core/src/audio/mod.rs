//! Audio decoding and log-spectrogram featurization.

pub mod cache;
pub mod features;
pub mod stft;
pub mod wav;

pub use cache::{FeatureCache, FeatureSource};
pub use features::{featurize_clip, log_quantize, FeatConfig, Featurizer, LogSpecFeature};
pub use stft::{stft, Spectrogram, Stft, StftConfig, WindowFn};
pub use wav::{decode_wav, PcmClip, CLIP_SECONDS, DEFAULT_SAMPLE_RATE};
