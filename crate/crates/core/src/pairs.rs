//! Labelled clip pairs for contrastive training.
//!
//! Pairs reference clips by id; features are looked up when batches are
//! assembled. `label == 1` marks a same-class pair.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::ClipRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PairExample {
    pub clip_a: String,
    pub clip_b: String,
    pub label: u8,
}

impl PairExample {
    pub fn is_positive(&self) -> bool {
        self.label == 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairScheme {
    /// One sampled negative per positive.
    Balanced,
    /// Every cross-class pair, optionally capped per anchor clip.
    Unbalanced,
}

impl fmt::Display for PairScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PairScheme::Balanced => "balanced",
            PairScheme::Unbalanced => "unbalanced",
        })
    }
}

impl FromStr for PairScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "balanced" => Ok(PairScheme::Balanced),
            "unbalanced" => Ok(PairScheme::Unbalanced),
            other => Err(Error::Config(format!("unknown pairing scheme `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairingConfig {
    pub scheme: PairScheme,
    pub seed: u64,
    pub max_negatives_per_clip: Option<usize>,
}

impl PairingConfig {
    pub fn new(scheme: PairScheme, seed: u64) -> Self {
        Self {
            scheme,
            seed,
            max_negatives_per_clip: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_negatives_per_clip == Some(0) {
            return Err(Error::Config("max_negatives_per_clip must be at least 1".into()));
        }
        Ok(())
    }
}

/// Clips sorted by id with their class index.
struct Pool<'a> {
    ids: Vec<&'a str>,
    class: Vec<usize>,
    n_classes: usize,
}

impl<'a> Pool<'a> {
    fn new(clips: &'a [ClipRecord]) -> Self {
        let mut sorted: Vec<&ClipRecord> = clips.iter().collect();
        sorted.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
        let mut labels: BTreeMap<&str, usize> = BTreeMap::new();
        for c in &sorted {
            let next = labels.len();
            labels.entry(&c.class_label).or_insert(next);
        }
        Self {
            ids: sorted.iter().map(|c| c.clip_id.as_str()).collect(),
            class: sorted.iter().map(|c| labels[c.class_label.as_str()]).collect(),
            n_classes: labels.len(),
        }
    }

    fn pair(&self, a: usize, b: usize, label: u8) -> PairExample {
        PairExample {
            clip_a: self.ids[a].to_owned(),
            clip_b: self.ids[b].to_owned(),
            label,
        }
    }

    fn others(&self, a: usize) -> Vec<usize> {
        (0..self.ids.len()).filter(|&b| self.class[b] != self.class[a]).collect()
    }

    fn cross_pair_count(&self) -> usize {
        let mut sizes = vec![0usize; self.n_classes];
        for &c in &self.class {
            sizes[c] += 1;
        }
        let n = self.ids.len();
        (n * n - sizes.iter().map(|s| s * s).sum::<usize>()) / 2
    }
}

fn key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

/// All same-class pairs, `clip_a < clip_b`: `n(n-1)/2` per class.
pub fn positive_pairs(clips: &[ClipRecord]) -> Vec<PairExample> {
    let pool = Pool::new(clips);
    let n = pool.ids.len();
    let mut out = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if pool.class[a] == pool.class[b] {
                out.push(pool.pair(a, b, 1));
            }
        }
    }
    out
}

/// All positives plus exactly as many distinct negatives. Anchors are visited
/// round-robin in seeded order and each draws a random clip of another class,
/// re-drawing on collision.
pub fn balanced_pairs(clips: &[ClipRecord], cfg: &PairingConfig) -> Result<Vec<PairExample>> {
    cfg.validate()?;
    let pool = Pool::new(clips);
    if pool.n_classes < 2 {
        return Err(Error::InvalidInput("balanced pairing needs at least 2 classes".into()));
    }
    let mut out = positive_pairs(clips);
    let wanted = out.len();
    if pool.cross_pair_count() < wanted {
        return Err(Error::InvalidInput(format!(
            "only {} distinct cross-class pairs for {wanted} positives",
            pool.cross_pair_count()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let others: Vec<Vec<usize>> = (0..pool.ids.len()).map(|a| pool.others(a)).collect();
    let mut used = HashSet::with_capacity(wanted);
    let mut exhausted = vec![false; pool.ids.len()];
    let mut order: Vec<usize> = (0..pool.ids.len()).collect();
    let mut negatives = 0;
    while negatives < wanted {
        order.shuffle(&mut rng);
        for &a in &order {
            if negatives == wanted {
                break;
            }
            if exhausted[a] {
                continue;
            }
            let mut pick = None;
            for _ in 0..16 {
                let &b = others[a].choose(&mut rng).expect("another class exists");
                if !used.contains(&key(a, b)) {
                    pick = Some(b);
                    break;
                }
            }
            if pick.is_none() {
                let free: Vec<usize> = others[a].iter().copied().filter(|&b| !used.contains(&key(a, b))).collect();
                pick = free.choose(&mut rng).copied();
            }
            match pick {
                Some(b) => {
                    used.insert(key(a, b));
                    out.push(pool.pair(a, b, 0));
                    negatives += 1;
                }
                None => exhausted[a] = true,
            }
        }
    }
    Ok(out)
}

/// All positives plus every cross-class pair once (`clip_a < clip_b`). With a
/// cap, each anchor in id order keeps at most `cap` seeded-random partners
/// among the cross-class pairs not yet taken, with `clip_a` as the anchor.
pub fn unbalanced_pairs(clips: &[ClipRecord], cfg: &PairingConfig) -> Result<Vec<PairExample>> {
    cfg.validate()?;
    let pool = Pool::new(clips);
    if pool.n_classes < 2 {
        return Err(Error::InvalidInput("unbalanced pairing needs at least 2 classes".into()));
    }
    let mut out = positive_pairs(clips);
    let n = pool.ids.len();
    match cfg.max_negatives_per_clip {
        None => {
            for a in 0..n {
                for b in a + 1..n {
                    if pool.class[a] != pool.class[b] {
                        out.push(pool.pair(a, b, 0));
                    }
                }
            }
        }
        Some(cap) => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut used = HashSet::new();
            for a in 0..n {
                let mut free: Vec<usize> = pool.others(a).into_iter().filter(|&b| !used.contains(&key(a, b))).collect();
                free.shuffle(&mut rng);
                for &b in free.iter().take(cap) {
                    used.insert(key(a, b));
                    out.push(pool.pair(a, b, 0));
                }
            }
        }
    }
    Ok(out)
}

pub fn make_pairs(clips: &[ClipRecord], cfg: &PairingConfig) -> Result<Vec<PairExample>> {
    match cfg.scheme {
        PairScheme::Balanced => balanced_pairs(clips, cfg),
        PairScheme::Unbalanced => unbalanced_pairs(clips, cfg),
    }
}

/// Seeded permutation of `0..n`, a pure function of `(seed, epoch)`.
pub fn epoch_permutation(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

pub fn epoch_shuffle(pairs: &[PairExample], seed: u64, epoch: u64) -> Vec<PairExample> {
    epoch_permutation(pairs.len(), seed, epoch)
        .into_iter()
        .map(|i| pairs[i].clone())
        .collect()
}

pub fn write_pairs_csv(path: &Path, pairs: &[PairExample]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    for p in pairs {
        w.serialize(p)
            .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_pairs_csv(path: &Path) -> Result<Vec<PairExample>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, "pair list", e.to_string()))?;
    r.deserialize()
        .map(|row| {
            let p: PairExample = row.map_err(|e| Error::format(path, "pair list", e.to_string()))?;
            if p.label > 1 || p.clip_a == p.clip_b {
                return Err(Error::format(path, "pair list", format!("invalid pair {p:?}")));
            }
            Ok(p)
        })
        .collect()
}
