//! Exhaustive embedding index with euclidean and cosine ranking.
//!
//! `EFPI` layout (little-endian): magic, version u32, dim u32, count u64,
//! 32-byte model fingerprint, then per entry clip_id and class_label as
//! u32 length + UTF-8 followed by `dim` f32 values.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audio::FeatureSource;
use crate::binio::*;
use crate::error::{Error, Result};
use crate::siamese::SiameseModel;

pub const INDEX_MAGIC: [u8; 4] = *b"EFPI";
pub const INDEX_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    Euclidean,
    Cosine,
}

impl Measure {
    pub const ALL: [Measure; 2] = [Measure::Euclidean, Measure::Cosine];

    pub fn as_str(self) -> &'static str {
        match self {
            Measure::Euclidean => "euclidean",
            Measure::Cosine => "cosine",
        }
    }

    /// Score of `e` against query `q`, computed in f64.
    pub fn score(self, q: &[f32], e: &[f32]) -> f64 {
        match self {
            Measure::Euclidean => q
                .iter()
                .zip(e)
                .map(|(&a, &b)| {
                    let d = a as f64 - b as f64;
                    d * d
                })
                .sum::<f64>()
                .sqrt(),
            Measure::Cosine => {
                let (mut dot, mut qq, mut ee) = (0.0f64, 0.0f64, 0.0f64);
                for (&a, &b) in q.iter().zip(e) {
                    let (a, b) = (a as f64, b as f64);
                    dot += a * b;
                    qq += a * a;
                    ee += b * b;
                }
                if qq == 0.0 || ee == 0.0 {
                    0.0
                } else {
                    dot / (qq.sqrt() * ee.sqrt())
                }
            }
        }
    }

    /// Best-first ordering of scores.
    fn order(self, a: f64, b: f64) -> Ordering {
        match self {
            Measure::Euclidean => a.total_cmp(&b),
            Measure::Cosine => b.total_cmp(&a),
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Measure::Euclidean),
            "cosine" => Ok(Measure::Cosine),
            other => Err(Error::Config(format!("unknown measure `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub clip_id: String,
    pub class_label: String,
    pub embedding: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    dim: usize,
    entries: Vec<IndexEntry>,
    model_fingerprint: [u8; 32],
    lookup: HashMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub clip_id: String,
    pub class_label: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    pub measure: Measure,
    pub hits: Vec<Hit>,
}

impl EmbeddingIndex {
    pub fn new(dim: usize, entries: Vec<IndexEntry>, model_fingerprint: [u8; 32]) -> Result<Self> {
        let mut lookup = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if e.embedding.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    actual: e.embedding.len(),
                });
            }
            if !e.embedding.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidInput(format!("embedding of `{}` is not finite", e.clip_id)));
            }
            if lookup.insert(e.clip_id.clone(), i).is_some() {
                return Err(Error::InvalidInput(format!("duplicate clip id `{}` in index", e.clip_id)));
            }
        }
        Ok(Self {
            dim,
            entries,
            model_fingerprint,
            lookup,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn model_fingerprint(&self) -> &[u8; 32] {
        &self.model_fingerprint
    }

    pub fn get(&self, clip_id: &str) -> Option<&IndexEntry> {
        self.lookup.get(clip_id).map(|&i| &self.entries[i])
    }

    /// Every entry except `exclude`, best first, ties by ascending clip id.
    pub fn rank_all(&self, q: &[f32], measure: Measure, exclude: Option<&str>) -> Result<Ranking> {
        if self.entries.is_empty() {
            return Err(Error::EmptyIndex);
        }
        if q.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                actual: q.len(),
            });
        }
        if !q.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("query embedding is not finite".into()));
        }
        let mut hits: Vec<Hit> = self
            .entries
            .iter()
            .filter(|e| Some(e.clip_id.as_str()) != exclude)
            .map(|e| Hit {
                clip_id: e.clip_id.clone(),
                class_label: e.class_label.clone(),
                score: measure.score(q, &e.embedding),
            })
            .collect();
        hits.sort_by(|a, b| measure.order(a.score, b.score).then_with(|| a.clip_id.cmp(&b.clip_id)));
        Ok(Ranking { measure, hits })
    }

    /// Top `k` of [`Self::rank_all`]. `k` beyond the candidate count is clamped.
    pub fn query(&self, q: &[f32], measure: Measure, k: usize, exclude: Option<&str>) -> Result<Ranking> {
        if k == 0 {
            return Err(Error::InvalidInput("K must be at least 1".into()));
        }
        let mut ranking = self.rank_all(q, measure, exclude)?;
        if ranking.hits.is_empty() {
            return Err(Error::EmptyIndex);
        }
        if k > ranking.hits.len() {
            log::warn!("K = {k} exceeds the {} candidates; returning all of them", ranking.hits.len());
        }
        ranking.hits.truncate(k);
        Ok(ranking)
    }

    /// Every stored clip queried with itself excluded, in entry order.
    pub fn knn_all(&self, measure: Measure, k: usize) -> Result<Vec<(String, Ranking)>> {
        if self.entries.len() < 2 {
            return Err(Error::InvalidInput("knn_all needs at least 2 entries".into()));
        }
        self.entries
            .iter()
            .map(|e| Ok((e.clip_id.clone(), self.query(&e.embedding, measure, k, Some(&e.clip_id))?)))
            .collect()
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(&INDEX_MAGIC)?;
        write_u32(w, INDEX_VERSION)?;
        write_u32(w, self.dim as u32)?;
        write_u64(w, self.entries.len() as u64)?;
        w.write_all(&self.model_fingerprint)?;
        for e in &self.entries {
            write_str(w, &e.clip_id)?;
            write_str(w, &e.class_label)?;
            write_f32s(w, &e.embedding)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: Read>(r: &mut R, path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::format(path, "index", reason);
        let io = |e: std::io::Error| bad(e.to_string());
        let magic = read_magic(r).map_err(io)?;
        if magic != INDEX_MAGIC {
            return Err(bad(format!("magic {magic:?}, expected EFPI")));
        }
        let version = read_u32(r).map_err(io)?;
        if version != INDEX_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let dim = read_u32(r).map_err(io)? as usize;
        let count = read_u64(r).map_err(io)?;
        let mut fingerprint = [0u8; 32];
        r.read_exact(&mut fingerprint).map_err(io)?;
        let mut entries = Vec::new();
        for _ in 0..count {
            let clip_id = read_str(r).map_err(io)?;
            let class_label = read_str(r).map_err(io)?;
            let embedding = read_f32s(r, dim).map_err(io)?;
            entries.push(IndexEntry {
                clip_id,
                class_label,
                embedding,
            });
        }
        expect_eof(r).map_err(io)?;
        Self::new(dim, entries, fingerprint).map_err(|e| bad(e.to_string()))
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

/// Embeds `clips` (clip id, class label) in eval mode, preserving their order.
pub fn build_index(model: &SiameseModel, clips: &[(&str, &str)], features: &dyn FeatureSource) -> Result<EmbeddingIndex> {
    let entries = clips
        .iter()
        .map(|&(id, label)| {
            let x = features.feature(id).ok_or_else(|| Error::MissingFeature(id.to_owned()))?;
            Ok(IndexEntry {
                clip_id: id.to_owned(),
                class_label: label.to_owned(),
                embedding: model.embed(id, x)?.values,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EmbeddingIndex::new(model.embedding_dim(), entries, model.fingerprint())
}
