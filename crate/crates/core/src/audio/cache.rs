//! `EFPF` feature cache.
//!
//! Layout (little-endian): magic `EFPF`, version u32, freq_bins u32,
//! time_bins u32, clip count u64, then per clip: clip_id and class label as
//! u32 length + UTF-8 (label may be empty), followed by
//! `freq_bins * time_bins` f32 values.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::features::LogSpecFeature;
use crate::binio::*;
use crate::error::{Error, Result};

pub const CACHE_MAGIC: [u8; 4] = *b"EFPF";
pub const CACHE_VERSION: u32 = 1;

/// Anything that can hand out a feature vector by clip id.
pub trait FeatureSource {
    fn dim(&self) -> usize;
    fn feature(&self, clip_id: &str) -> Option<&[f32]>;
}

impl FeatureSource for HashMap<String, Vec<f32>> {
    fn dim(&self) -> usize {
        self.values().next().map_or(0, Vec::len)
    }

    fn feature(&self, clip_id: &str) -> Option<&[f32]> {
        self.get(clip_id).map(Vec::as_slice)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCache {
    freq_bins: u32,
    time_bins: u32,
    entries: Vec<LogSpecFeature>,
    lookup: HashMap<String, usize>,
}

impl FeatureCache {
    pub fn new(freq_bins: usize, time_bins: usize) -> Self {
        Self {
            freq_bins: freq_bins as u32,
            time_bins: time_bins as u32,
            entries: Vec::new(),
            lookup: HashMap::new(),
        }
    }

    pub fn push(&mut self, feature: LogSpecFeature) -> Result<()> {
        if feature.values.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                actual: feature.values.len(),
            });
        }
        if self.lookup.contains_key(&feature.clip_id) {
            return Err(Error::InvalidInput(format!("duplicate clip id `{}`", feature.clip_id)));
        }
        self.lookup.insert(feature.clip_id.clone(), self.entries.len());
        self.entries.push(feature);
        Ok(())
    }

    pub fn freq_bins(&self) -> usize {
        self.freq_bins as usize
    }

    pub fn time_bins(&self) -> usize {
        self.time_bins as usize
    }

    pub fn entries(&self) -> &[LogSpecFeature] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, clip_id: &str) -> Option<&LogSpecFeature> {
        self.lookup.get(clip_id).map(|&i| &self.entries[i])
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(&CACHE_MAGIC)?;
        write_u32(w, CACHE_VERSION)?;
        write_u32(w, self.freq_bins)?;
        write_u32(w, self.time_bins)?;
        write_u64(w, self.entries.len() as u64)?;
        for e in &self.entries {
            write_str(w, &e.clip_id)?;
            write_str(w, e.class_label.as_deref().unwrap_or(""))?;
            write_f32s(w, &e.values)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R, path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::format(path, "feature cache", reason);
        let io = |e: std::io::Error| bad(e.to_string());
        let magic = read_magic(r).map_err(io)?;
        if magic != CACHE_MAGIC {
            return Err(bad(format!("magic {magic:?}, expected EFPF")));
        }
        let version = read_u32(r).map_err(io)?;
        if version != CACHE_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let freq_bins = read_u32(r).map_err(io)?;
        let time_bins = read_u32(r).map_err(io)?;
        let count = read_u64(r).map_err(io)?;
        let mut cache = FeatureCache::new(freq_bins as usize, time_bins as usize);
        let dim = cache.dim();
        for _ in 0..count {
            let clip_id = read_str(r).map_err(io)?;
            let label = read_str(r).map_err(io)?;
            let values = read_f32s(r, dim).map_err(io)?;
            cache
                .push(LogSpecFeature {
                    values,
                    clip_id,
                    class_label: (!label.is_empty()).then_some(label),
                })
                .map_err(|e| bad(e.to_string()))?;
        }
        expect_eof(r).map_err(io)?;
        Ok(cache)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(file), path)
    }
}

impl FeatureSource for FeatureCache {
    fn dim(&self) -> usize {
        self.freq_bins as usize * self.time_bins as usize
    }

    fn feature(&self, clip_id: &str) -> Option<&[f32]> {
        self.get(clip_id).map(|e| e.values.as_slice())
    }
}
