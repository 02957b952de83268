//! Retrieval metrics: average precision, first-hit precision and precision at K.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::index::{EmbeddingIndex, Measure, Ranking};

pub const DEFAULT_HEADLINE_K: usize = 25;

pub fn default_k_sweep() -> Vec<usize> {
    (1..=30).collect()
}

/// Relevance of a ranked list plus the number of positives in the database.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelevanceList {
    pub bits: Vec<bool>,
    pub m_j: usize,
}

impl RelevanceList {
    pub fn new(bits: Vec<bool>, m_j: usize) -> Result<Self> {
        let hits = bits.iter().filter(|&&b| b).count();
        if hits > m_j {
            return Err(Error::InvalidInput(format!("{hits} relevant results but m_j = {m_j}")));
        }
        Ok(Self { bits, m_j })
    }

    /// Relevance of `ranking` to `class_label`; `m_j` is the relevant count in
    /// the ranking, which covers the whole database.
    pub fn from_ranking(ranking: &Ranking, class_label: &str) -> Self {
        let bits: Vec<bool> = ranking.hits.iter().map(|h| h.class_label == class_label).collect();
        let m_j = bits.iter().filter(|&&b| b).count();
        Self { bits, m_j }
    }
}

/// `(1/m_j) * sum over hit ranks i of hits_so_far / i`. `None` when `m_j = 0`.
pub fn average_precision(rel: &RelevanceList) -> Option<f64> {
    if rel.m_j == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &b) in rel.bits.iter().enumerate() {
        if b {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Some(sum / rel.m_j as f64)
}

/// Reciprocal of the 1-based rank of the first relevant result.
pub fn precision_at_first_hit(rel: &RelevanceList) -> Option<f64> {
    rel.bits.iter().position(|&b| b).map(|r| 1.0 / (r + 1) as f64)
}

/// Fraction of relevant results among the first `k` (`k ≥ 1`). A `k` longer
/// than the list is clamped to its length.
pub fn precision_at_k(rel: &RelevanceList, k: usize) -> f64 {
    assert!(k >= 1, "K must be at least 1");
    let k = if k > rel.bits.len() {
        log::warn!("K = {k} exceeds the ranked list length {}; clamping", rel.bits.len());
        rel.bits.len()
    } else {
        k
    };
    if k == 0 {
        return 0.0;
    }
    rel.bits[..k].iter().filter(|&&b| b).count() as f64 / k as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub measure: Measure,
    pub map: f64,
    pub mp1: f64,
    pub mpk: BTreeMap<usize, f64>,
    pub headline_k: usize,
    /// Mean precision at `headline_k` per class, highest first (ties by name).
    pub per_class_mpk: Vec<(String, f64)>,
    pub n_queries: usize,
    pub n_excluded: usize,
}

impl EvalReport {
    pub fn headline_mpk(&self) -> f64 {
        self.mpk[&self.headline_k]
    }

    pub fn to_csv(&self) -> String {
        let m = self.measure.as_str();
        let mut s = String::from("metric,measure,value\n");
        let _ = writeln!(s, "map,{m},{}", self.map);
        let _ = writeln!(s, "mp1,{m},{}", self.mp1);
        let _ = writeln!(s, "mp{},{m},{}", self.headline_k, self.headline_mpk());
        let _ = writeln!(s, "n_queries,{m},{}", self.n_queries);
        let _ = writeln!(s, "n_excluded,{m},{}", self.n_excluded);
        s.push_str("\nK,mpk\n");
        for (k, v) in &self.mpk {
            let _ = writeln!(s, "{k},{v}");
        }
        s.push_str("\nclass,mpk\n");
        for (c, v) in &self.per_class_mpk {
            let _ = writeln!(s, "{},{v}", csv_field(c));
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

/// Ranks the whole index (self excluded) for every query and averages the
/// metrics over scorable queries in `query_ids` order. `headline_k` is added
/// to `k_values` if missing.
pub fn evaluate_all(
    index: &EmbeddingIndex,
    query_ids: &[&str],
    measure: Measure,
    k_values: &[usize],
    headline_k: usize,
) -> Result<EvalReport> {
    let mut ks: Vec<usize> = k_values.to_vec();
    ks.push(headline_k);
    ks.sort_unstable();
    ks.dedup();
    if ks[0] == 0 {
        return Err(Error::InvalidInput("K values must be at least 1".into()));
    }

    let mut ap_sum = 0.0;
    let mut mp1_sum = 0.0;
    let mut pk_sum = vec![0.0; ks.len()];
    let mut class_sum: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    let mut n_queries = 0usize;
    let mut n_excluded = 0usize;
    for &id in query_ids {
        let entry = index
            .get(id)
            .ok_or_else(|| Error::InvalidInput(format!("query `{id}` is not in the index")))?;
        let ranking = index.rank_all(&entry.embedding, measure, Some(id))?;
        let rel = RelevanceList::from_ranking(&ranking, &entry.class_label);
        let (Some(ap), Some(mp1)) = (average_precision(&rel), precision_at_first_hit(&rel)) else {
            log::warn!("query `{id}` has no other clip of class `{}`; excluded", entry.class_label);
            n_excluded += 1;
            continue;
        };
        n_queries += 1;
        ap_sum += ap;
        mp1_sum += mp1;
        for (s, &k) in pk_sum.iter_mut().zip(&ks) {
            let p = precision_at_k(&rel, k);
            *s += p;
            if k == headline_k {
                let c = class_sum.entry(entry.class_label.clone()).or_default();
                c.0 += p;
                c.1 += 1;
            }
        }
    }
    if n_queries == 0 {
        return Err(Error::InvalidInput("no scorable queries".into()));
    }
    let n = n_queries as f64;
    let mut per_class: Vec<(String, f64)> = class_sum.into_iter().map(|(c, (s, cnt))| (c, s / cnt as f64)).collect();
    per_class.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(EvalReport {
        measure,
        map: ap_sum / n,
        mp1: mp1_sum / n,
        mpk: ks.iter().zip(pk_sum).map(|(&k, s)| (k, s / n)).collect(),
        headline_k,
        per_class_mpk: per_class,
        n_queries,
        n_excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::IndexEntry;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel(bits: &[u8], m_j: usize) -> RelevanceList {
        RelevanceList::new(bits.iter().map(|&b| b == 1).collect(), m_j).unwrap()
    }

    #[test]
    fn average_precision_cases() {
        assert_eq!(average_precision(&rel(&[1, 1, 1], 3)), Some(1.0));
        assert_eq!(average_precision(&rel(&[0, 1, 0, 1], 2)), Some(0.5));
        assert!((average_precision(&rel(&[1, 0, 1], 2)).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(average_precision(&rel(&[0, 0], 0)), None);
        // Positives missing from a truncated list count as zero precision.
        assert_eq!(average_precision(&rel(&[1, 0], 2)), Some(0.5));
        assert!(RelevanceList::new(vec![true, true], 1).is_err());
    }

    #[test]
    fn first_hit_cases() {
        assert_eq!(precision_at_first_hit(&rel(&[1, 0], 1)), Some(1.0));
        assert_eq!(precision_at_first_hit(&rel(&[0, 0, 1], 1)), Some(1.0 / 3.0));
        assert_eq!(precision_at_first_hit(&rel(&[0, 0, 0, 1, 1], 2)), Some(0.25));
        assert_eq!(precision_at_first_hit(&rel(&[0, 0], 0)), None);
    }

    #[test]
    fn precision_at_k_cases() {
        assert_eq!(precision_at_k(&rel(&[1, 1, 0], 2), 2), 1.0);
        assert_eq!(precision_at_k(&rel(&[1, 0, 1, 0], 2), 4), 0.5);
        assert_eq!(precision_at_k(&rel(&[0, 0, 0], 0), 3), 0.0);
        assert_eq!(precision_at_k(&rel(&[1, 0], 1), 5), 0.5);
    }

    fn index_of(points: &[(&str, &str, [f32; 2])]) -> EmbeddingIndex {
        let entries = points
            .iter()
            .map(|(id, c, v)| IndexEntry {
                clip_id: id.to_string(),
                class_label: c.to_string(),
                embedding: v.to_vec(),
            })
            .collect();
        EmbeddingIndex::new(2, entries, [0; 32]).unwrap()
    }

    #[test]
    fn perfect_separation() {
        let idx = index_of(&[("a1", "a", [1.0, 0.0]), ("a2", "a", [1.0, 0.0]), ("b1", "b", [0.0, 1.0]), ("b2", "b", [0.0, 1.0])]);
        for m in Measure::ALL {
            let r = evaluate_all(&idx, &["a1", "a2", "b1", "b2"], m, &[1, 2, 3], 1).unwrap();
            assert_eq!((r.map, r.mp1), (1.0, 1.0));
            assert_eq!(r.mpk[&1], 1.0);
            assert_eq!(r.mpk[&3], 1.0 / 3.0);
            assert_eq!(r.n_queries, 4);
        }
    }

    #[test]
    fn singleton_class_is_excluded() {
        let idx = index_of(&[("a1", "a", [1.0, 0.0]), ("a2", "a", [0.9, 0.1]), ("z", "z", [0.0, 1.0])]);
        let r = evaluate_all(&idx, &["a1", "a2", "z"], Measure::Euclidean, &[1], 1).unwrap();
        assert_eq!((r.n_queries, r.n_excluded), (2, 1));
        assert_eq!(r.per_class_mpk, vec![("a".to_string(), 1.0)]);
        assert!(evaluate_all(&idx, &["z"], Measure::Euclidean, &[1], 1).is_err());
        assert!(evaluate_all(&idx, &["nope"], Measure::Euclidean, &[1], 1).is_err());
    }

    #[test]
    fn chance_level_map_for_random_embeddings() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let entries: Vec<IndexEntry> = (0..400)
            .map(|i| IndexEntry {
                clip_id: format!("c{i:03}"),
                class_label: if i % 2 == 0 { "even" } else { "odd" }.into(),
                embedding: (0..8).map(|_| rng.random_range(0.0f32..1.0)).collect(),
            })
            .collect();
        let ids: Vec<String> = entries.iter().map(|e| e.clip_id.clone()).collect();
        let idx = EmbeddingIndex::new(8, entries, [0; 32]).unwrap();
        let q: Vec<&str> = ids.iter().map(String::as_str).collect();
        let r = evaluate_all(&idx, &q, Measure::Euclidean, &default_k_sweep(), DEFAULT_HEADLINE_K).unwrap();
        assert!((r.map - 0.5).abs() < 0.03, "MAP {}", r.map);
        assert_eq!(r.mpk.len(), 30);
    }

    #[test]
    fn report_csv_layout() {
        let idx = index_of(&[("a1", "a", [1.0, 0.0]), ("a2", "a", [1.0, 0.0]), ("b1", "b", [0.0, 1.0]), ("b2", "b", [0.1, 1.0])]);
        let r = evaluate_all(&idx, &["a1", "a2", "b1", "b2"], Measure::Cosine, &[1, 2], 2).unwrap();
        let csv = r.to_csv();
        let blocks: Vec<&str> = csv.split("\n\n").collect();
        assert_eq!(blocks.len(), 3);
        assert!(blocks[0].starts_with("metric,measure,value\nmap,cosine,1\nmp1,cosine,1\nmp2,cosine,0.5"));
        assert_eq!(blocks[1], "K,mpk\n1,1\n2,0.5");
        assert_eq!(blocks[2], "class,mpk\na,0.5\nb,0.5\n");
    }

    fn bits_strategy() -> impl Strategy<Value = (Vec<bool>, usize)> {
        prop::collection::vec(any::<bool>(), 1..50).prop_flat_map(|bits| {
            let hits = bits.iter().filter(|&&b| b).count();
            (Just(bits), hits..hits + 3)
        })
    }

    proptest! {
        #[test]
        fn metrics_are_bounded((bits, m_j) in bits_strategy(), k in 1usize..60) {
            let r = RelevanceList::new(bits, m_j).unwrap();
            if let Some(ap) = average_precision(&r) {
                prop_assert!((0.0..=1.0).contains(&ap));
            }
            if let Some(p) = precision_at_first_hit(&r) {
                prop_assert!((0.0..=1.0).contains(&p));
                prop_assert_eq!(p == 1.0, precision_at_k(&r, 1) == 1.0);
            }
            let p = precision_at_k(&r, k);
            prop_assert!((0.0..=1.0).contains(&p));
        }

        #[test]
        fn perfect_ap_iff_positives_lead((bits, m_j) in bits_strategy()) {
            let r = RelevanceList::new(bits.clone(), m_j).unwrap();
            if let Some(ap) = average_precision(&r) {
                let leading = m_j <= bits.len() && bits[..m_j].iter().all(|&b| b);
                prop_assert_eq!(ap == 1.0, leading);
            }
        }

        #[test]
        fn tail_permutation_is_irrelevant((bits, m_j) in bits_strategy(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let last = bits.iter().rposition(|&b| b).map_or(0, |p| p + 1);
            let mut shuffled = bits.clone();
            shuffled[last..].shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let (a, b) = (RelevanceList::new(bits, m_j).unwrap(), RelevanceList::new(shuffled, m_j).unwrap());
            prop_assert_eq!(average_precision(&a), average_precision(&b));
            prop_assert_eq!(precision_at_first_hit(&a), precision_at_first_hit(&b));
        }
    }
}
