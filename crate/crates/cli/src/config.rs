//! TOML run configuration. Every field is optional; missing ones take the
//! library defaults, and command-line flags override whatever is loaded here.

use std::path::{Path, PathBuf};

use efp_core::audio::StftConfig;
use efp_core::corpus::SplitRatios;
use efp_core::pairs::PairScheme;
use efp_core::siamese::{AdamConfig, LossConfig, OptimizerKind};
use efp_core::FeatConfig;
use serde::{Deserialize, Serialize};

use crate::errors::UsageError;

pub const DEFAULT_SEED: u64 = 0;
pub const SEED_ENV: &str = "EFP_SEED";

/// Offsets from the global seed, one per seeded stage.
pub const SPLIT_SEED_OFFSET: u64 = 1;
pub const PAIRS_SEED_OFFSET: u64 = 2;
pub const TRAIN_SEED_OFFSET: u64 = 3;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub paths: PathsConfig,
    pub stft: StftConfig,
    pub features: FeatConfig,
    pub split: SplitRatios,
    pub pairs: PairsConfig,
    pub train: TrainSection,
    pub loss: LossConfig,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub data_dir: PathBuf,
    pub manifest: PathBuf,
    pub features: PathBuf,
    pub pairs_dir: PathBuf,
    pub model: PathBuf,
    pub history: PathBuf,
    pub index: PathBuf,
    pub reports_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            data_dir: "data".into(),
            manifest: "data/manifest.csv".into(),
            features: "work/features.efpf".into(),
            pairs_dir: "work/pairs".into(),
            model: "work/model.efpm".into(),
            history: "work/history.csv".into(),
            index: "work/index.efpi".into(),
            reports_dir: "work/reports".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairsConfig {
    pub scheme: PairScheme,
    pub max_negatives_per_clip: Option<usize>,
}

impl Default for PairsConfig {
    fn default() -> Self {
        Self {
            scheme: PairScheme::Unbalanced,
            max_negatives_per_clip: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub adam: AdamConfig,
    pub dropout_rate: f64,
    pub hidden_dims: [usize; 3],
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = efp_core::TrainConfig::default();
        Self {
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            optimizer: d.optimizer,
            adam: d.adam,
            dropout_rate: d.dropout_rate,
            hidden_dims: [d.layer_dims[1], d.layer_dims[2], d.layer_dims[3]],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MeasureChoice {
    Euclidean,
    Cosine,
    Both,
}

impl MeasureChoice {
    pub fn measures(self) -> Vec<efp_core::Measure> {
        use efp_core::Measure;
        match self {
            MeasureChoice::Euclidean => vec![Measure::Euclidean],
            MeasureChoice::Cosine => vec![Measure::Cosine],
            MeasureChoice::Both => Measure::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub measure: MeasureChoice,
    pub k_max: usize,
    pub headline_k: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            measure: MeasureChoice::Both,
            k_max: 30,
            headline_k: efp_core::metrics::DEFAULT_HEADLINE_K,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| efp_core::Error::Io {
            path: path.to_owned(),
            source: e,
        })?;
        toml::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())).into())
    }

    /// Flag, then config file, then `EFP_SEED`, then [`DEFAULT_SEED`].
    pub fn resolve_seed(&self, flag: Option<u64>) -> anyhow::Result<u64> {
        if let Some(s) = flag.or(self.seed) {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| UsageError(format!("{SEED_ENV}=`{v}` is not an unsigned integer")).into()),
            Err(_) => Ok(DEFAULT_SEED),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c: RunConfig = toml::from_str("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.features.dim(), 13509);
        assert_eq!(c.train.hidden_dims, [512, 256, 128]);
        assert_eq!(c.pairs.scheme, PairScheme::Unbalanced);
    }

    #[test]
    fn partial_sections_merge_with_defaults() {
        let c: RunConfig = toml::from_str(
            "seed = 9\n[train]\nepochs = 12\n[pairs]\nscheme = \"balanced\"\n[eval]\nmeasure = \"cosine\"\n",
        )
        .unwrap();
        assert_eq!(c.seed, Some(9));
        assert_eq!(c.train.epochs, 12);
        assert_eq!(c.train.batch_size, 64);
        assert_eq!(c.pairs.scheme, PairScheme::Balanced);
        assert_eq!(c.eval.measure, MeasureChoice::Cosine);
        assert_eq!(c.eval.k_max, 30);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[train]\nepoch = 3\n").is_err());
    }

    #[test]
    fn flag_beats_file() {
        let c = RunConfig {
            seed: Some(4),
            ..Default::default()
        };
        assert_eq!(c.resolve_seed(Some(11)).unwrap(), 11);
        assert_eq!(c.resolve_seed(None).unwrap(), 4);
    }
}
