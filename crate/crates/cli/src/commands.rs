use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _};
use efp_core::audio::wav::decode_wav_with_prefix;
use efp_core::audio::{FeatureCache, Featurizer, PcmClip, DEFAULT_SAMPLE_RATE};
use efp_core::corpus::{generate_synthetic, split_manifest, ClipRecord, Manifest, Split, SplitRatios};
use efp_core::pairs::{make_pairs, read_pairs_csv, write_pairs_csv, PairExample, PairScheme, PairingConfig};
use efp_core::siamese::{self, write_history_csv, Normalizer, SiameseModel, TrainConfig};
use efp_core::{build_index, evaluate_all, EmbeddingIndex, Measure};

use crate::config::{RunConfig, PAIRS_SEED_OFFSET, SPLIT_SEED_OFFSET, TRAIN_SEED_OFFSET};
use crate::errors::{PartialFailure, UsageError};
use crate::{
    EvaluateArgs, FeaturizeArgs, IndexArgs, PairingArgs, PairsArgs, QueryArgs, QueryMeasure, SplitArg, SplitArgs,
    SynthArgs, TrainArgs,
};

pub struct Context {
    pub cfg: RunConfig,
    pub seed: u64,
}

impl Context {
    fn stage_seed(&self, offset: u64) -> u64 {
        self.seed.wrapping_add(offset)
    }
}

pub const TRAIN_PAIRS_FILE: &str = "train_pairs.csv";
pub const VAL_PAIRS_FILE: &str = "val_pairs.csv";

fn ensure_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn manifest_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn load_features(path: &Path) -> anyhow::Result<FeatureCache> {
    FeatureCache::load(path).with_context(|| format!("loading feature cache {} (run `efp featurize` first)", path.display()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn synth(ctx: &Context, a: SynthArgs) -> anyhow::Result<()> {
    if a.classes < 2 {
        bail!(UsageError(format!("--classes must be at least 2, got {}", a.classes)));
    }
    if a.per_class < 6 {
        bail!(UsageError(format!("--per-class must be at least 6, got {}", a.per_class)));
    }
    let out = a.out.unwrap_or_else(|| ctx.cfg.paths.data_dir.clone());
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let manifest = generate_synthetic(a.classes, a.per_class, ctx.seed, &out)?;
    let path = out.join("manifest.csv");
    manifest.save(&path)?;
    println!(
        "wrote {} clips in {} classes to {} (manifest {})",
        manifest.len(),
        manifest.class_set().len(),
        out.display(),
        path.display()
    );
    Ok(())
}

pub fn featurize(ctx: &Context, a: FeaturizeArgs) -> anyhow::Result<()> {
    let manifest_path = a.manifest.unwrap_or_else(|| ctx.cfg.paths.manifest.clone());
    let out = a.out.unwrap_or_else(|| ctx.cfg.paths.features.clone());
    let manifest = Manifest::load(&manifest_path)?;
    let base = manifest_dir(&manifest_path);
    let feat = ctx.cfg.features;
    let featurizer = Featurizer::new(ctx.cfg.stft, feat, DEFAULT_SAMPLE_RATE)?;
    let mut cache = FeatureCache::new(feat.freq_bins, feat.time_bins);
    let mut failures: Vec<(String, String)> = Vec::new();
    // Records of one source file are adjacent, so only the last decode is kept.
    let mut decoded: Option<(PathBuf, Result<Vec<PcmClip>, String>)> = None;
    for r in manifest.records() {
        let src = base.join(&r.source_path);
        if decoded.as_ref().is_none_or(|(p, _)| *p != src) {
            let clips = decode_wav_with_prefix(&src, DEFAULT_SAMPLE_RATE, &r.clip_id).map_err(|e| format!("{:#}", anyhow::Error::from(e)));
            decoded = Some((src.clone(), clips));
        }
        let clips = match &decoded.as_ref().unwrap().1 {
            Ok(c) => c,
            Err(e) => {
                failures.push((r.clip_id.clone(), e.clone()));
                continue;
            }
        };
        let Some(clip) = clips.get(r.segment_index as usize) else {
            failures.push((r.clip_id.clone(), format!("{} has no segment {}", src.display(), r.segment_index)));
            continue;
        };
        match featurizer.featurize(clip) {
            Ok(mut f) => {
                f.clip_id = r.clip_id.clone();
                f.class_label = Some(r.class_label.clone());
                cache.push(f)?;
            }
            Err(e) => failures.push((r.clip_id.clone(), e.to_string())),
        }
    }
    ensure_parent(&out)?;
    cache.save(&out)?;
    println!("featurized {} of {} clips into {}", cache.len(), manifest.len(), out.display());
    if !failures.is_empty() {
        eprintln!("{} clips failed:", failures.len());
        for (id, e) in &failures {
            eprintln!("  {id}: {e}");
        }
        bail!(PartialFailure(format!("{} of {} clips could not be featurized", failures.len(), manifest.len())));
    }
    Ok(())
}

pub fn split(ctx: &Context, a: SplitArgs) -> anyhow::Result<()> {
    let manifest_path = a.manifest.unwrap_or_else(|| ctx.cfg.paths.manifest.clone());
    let out = a.out.unwrap_or_else(|| manifest_path.clone());
    let d = ctx.cfg.split;
    let ratios = SplitRatios {
        train: a.train.unwrap_or(d.train),
        val: a.val.unwrap_or(d.val),
        test: a.test.unwrap_or(d.test),
    };
    ratios.validate().map_err(|e| UsageError(e.to_string()))?;
    let manifest = Manifest::load(&manifest_path)?;
    let split = split_manifest(&manifest, ratios, ctx.stage_seed(SPLIT_SEED_OFFSET))?;
    if out != manifest_path && manifest_dir(&out) != manifest_dir(&manifest_path) {
        bail!(UsageError("--out must be in the same directory as the manifest (source paths are relative)".into()));
    }
    split.save(&out)?;
    let count = |s: Split| split.in_split(s).count();
    println!(
        "train {} / val {} / test {} clips -> {}",
        count(Split::Train),
        count(Split::Val),
        count(Split::Test),
        out.display()
    );
    Ok(())
}

fn pairing_config(ctx: &Context, a: &PairingArgs) -> PairingConfig {
    let scheme: PairScheme = a.scheme.map(Into::into).unwrap_or(ctx.cfg.pairs.scheme);
    PairingConfig {
        scheme,
        seed: ctx.stage_seed(PAIRS_SEED_OFFSET),
        max_negatives_per_clip: a.max_negatives.or(ctx.cfg.pairs.max_negatives_per_clip),
    }
}

fn split_records(manifest: &Manifest, split: Split) -> anyhow::Result<Vec<ClipRecord>> {
    let records: Vec<ClipRecord> = manifest.in_split(split).cloned().collect();
    if records.is_empty() {
        bail!(efp_core::Error::InvalidInput(format!("manifest has no {split} clips; run `efp split` first")));
    }
    Ok(records)
}

/// Train and val pair lists for `manifest` under `cfg`.
fn sample_pairs(manifest: &Manifest, cfg: &PairingConfig) -> anyhow::Result<(Vec<PairExample>, Vec<PairExample>)> {
    cfg.validate().map_err(|e| UsageError(e.to_string()))?;
    let train = make_pairs(&split_records(manifest, Split::Train)?, cfg).context("sampling train pairs")?;
    let val = make_pairs(&split_records(manifest, Split::Val)?, cfg).context("sampling val pairs")?;
    Ok((train, val))
}

fn describe(pairs: &[PairExample]) -> String {
    let pos = pairs.iter().filter(|p| p.is_positive()).count();
    format!("{} pairs ({pos} positive, {} negative)", pairs.len(), pairs.len() - pos)
}

pub fn pairs(ctx: &Context, a: PairsArgs) -> anyhow::Result<()> {
    let manifest_path = a.manifest.unwrap_or_else(|| ctx.cfg.paths.manifest.clone());
    let out = a.out.unwrap_or_else(|| ctx.cfg.paths.pairs_dir.clone());
    let manifest = Manifest::load(&manifest_path)?;
    let cfg = pairing_config(ctx, &a.pairing);
    let (train, val) = sample_pairs(&manifest, &cfg)?;
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    write_pairs_csv(&out.join(TRAIN_PAIRS_FILE), &train)?;
    write_pairs_csv(&out.join(VAL_PAIRS_FILE), &val)?;
    println!("{} scheme: train {}, val {}", cfg.scheme, describe(&train), describe(&val));
    Ok(())
}

pub fn train(ctx: &Context, a: TrainArgs) -> anyhow::Result<()> {
    let manifest_path = a.manifest.unwrap_or_else(|| ctx.cfg.paths.manifest.clone());
    let features_path = a.features.unwrap_or_else(|| ctx.cfg.paths.features.clone());
    let out = a.out.unwrap_or_else(|| ctx.cfg.paths.model.clone());
    let history_path = a.history.unwrap_or_else(|| ctx.cfg.paths.history.clone());
    let t = &ctx.cfg.train;
    let manifest = Manifest::load(&manifest_path)?;
    let cache = load_features(&features_path)?;

    let (train_pairs, val_pairs) = match &a.pairs {
        Some(dir) => (read_pairs_csv(&dir.join(TRAIN_PAIRS_FILE))?, read_pairs_csv(&dir.join(VAL_PAIRS_FILE))?),
        None => sample_pairs(&manifest, &pairing_config(ctx, &a.pairing))?,
    };
    let train_ids: Vec<&str> = manifest.in_split(Split::Train).map(|r| r.clip_id.as_str()).collect();
    if train_ids.is_empty() {
        bail!(efp_core::Error::InvalidInput("manifest has no train clips; run `efp split` first".into()));
    }
    let normalizer = Normalizer::fit_source(&cache, &train_ids)?;
    let dim = cache.freq_bins() * cache.time_bins();
    let cfg = TrainConfig {
        epochs: a.epochs.unwrap_or(t.epochs),
        batch_size: a.batch_size.unwrap_or(t.batch_size),
        learning_rate: a.lr.unwrap_or(t.learning_rate),
        optimizer: a.optimizer.map(Into::into).unwrap_or(t.optimizer),
        adam: t.adam,
        dropout_rate: a.dropout.unwrap_or(t.dropout_rate),
        seed: ctx.stage_seed(TRAIN_SEED_OFFSET),
        layer_dims: [dim, t.hidden_dims[0], t.hidden_dims[1], t.hidden_dims[2]],
    };
    cfg.validate().map_err(|e| UsageError(e.to_string()))?;
    let mut loss = ctx.cfg.loss;
    if let Some(m) = a.margin {
        loss.margin = m;
    }
    loss.validate().map_err(|e| UsageError(e.to_string()))?;
    log::info!(
        "training on {} ({} val), {} epochs, batch {}",
        describe(&train_pairs),
        describe(&val_pairs),
        cfg.epochs,
        cfg.batch_size
    );
    let outcome = siamese::train(&train_pairs, &val_pairs, &cache, &normalizer, &cfg, &loss)?;
    ensure_parent(&out)?;
    ensure_parent(&history_path)?;
    outcome.model.save(&out)?;
    write_history_csv(&history_path, &outcome.history)?;
    let best = &outcome.history[outcome.best_epoch - 1];
    println!(
        "best epoch {} of {} (val loss {:.6}); model {} ({}), history {}",
        outcome.best_epoch,
        cfg.epochs,
        best.val_loss,
        out.display(),
        hex(&outcome.model.fingerprint()[..8]),
        history_path.display()
    );
    Ok(())
}

pub fn index(ctx: &Context, a: IndexArgs) -> anyhow::Result<()> {
    let model_path = a.model.unwrap_or_else(|| ctx.cfg.paths.model.clone());
    let features_path = a.features.unwrap_or_else(|| ctx.cfg.paths.features.clone());
    let manifest_path = a.manifest.unwrap_or_else(|| ctx.cfg.paths.manifest.clone());
    let out = a.out.unwrap_or_else(|| ctx.cfg.paths.index.clone());
    let model = SiameseModel::load(&model_path)?;
    let cache = load_features(&features_path)?;
    let manifest = Manifest::load(&manifest_path)?;
    let clips: Vec<(&str, &str)> = manifest
        .records()
        .iter()
        .filter(|r| match a.split {
            SplitArg::Train => r.split == Split::Train,
            SplitArg::Val => r.split == Split::Val,
            SplitArg::Test => r.split == Split::Test,
            SplitArg::All => true,
        })
        .map(|r| (r.clip_id.as_str(), r.class_label.as_str()))
        .collect();
    if clips.is_empty() {
        bail!(efp_core::Error::InvalidInput(format!("no clips selected from {}", manifest_path.display())));
    }
    let idx = build_index(&model, &clips, &cache)?;
    ensure_parent(&out)?;
    idx.save(&out)?;
    println!("indexed {} clips -> {}", idx.len(), out.display());
    Ok(())
}

fn query_embedding(ctx: &Context, a: &QueryArgs, model: &SiameseModel, idx: &EmbeddingIndex) -> anyhow::Result<(String, Vec<f32>)> {
    if let Some(id) = &a.clip {
        if let Some(e) = idx.get(id) {
            return Ok((id.clone(), e.embedding.clone()));
        }
        let features_path = a.features.clone().unwrap_or_else(|| ctx.cfg.paths.features.clone());
        let cache = load_features(&features_path)?;
        let f = cache
            .get(id)
            .ok_or_else(|| efp_core::Error::MissingFeature(format!("{id} (not in the index or {})", features_path.display())))?;
        return Ok((id.clone(), model.embed(id, &f.values)?.values));
    }
    let wav = a.wav.as_ref().expect("clap requires --wav or --clip");
    let name = wav.display().to_string();
    let clips = decode_wav_with_prefix(wav, DEFAULT_SAMPLE_RATE, &name)?;
    let Some(clip) = clips.get(a.segment) else {
        bail!(efp_core::Error::InvalidInput(format!(
            "{} has {} full 2 s segments; segment {} requested",
            wav.display(),
            clips.len(),
            a.segment
        )));
    };
    let featurizer = Featurizer::new(ctx.cfg.stft, ctx.cfg.features, DEFAULT_SAMPLE_RATE)?;
    let f = featurizer.featurize(clip)?;
    Ok((clip.clip_id().to_owned(), model.embed(clip.clip_id(), &f.values)?.values))
}

pub fn query(ctx: &Context, a: QueryArgs) -> anyhow::Result<()> {
    let model_path = a.model.clone().unwrap_or_else(|| ctx.cfg.paths.model.clone());
    let index_path = a.index.clone().unwrap_or_else(|| ctx.cfg.paths.index.clone());
    if a.k == 0 {
        bail!(UsageError("-k must be at least 1".into()));
    }
    let model = SiameseModel::load(&model_path)?;
    let idx = EmbeddingIndex::load(&index_path)?;
    if idx.model_fingerprint() != &model.fingerprint() {
        bail!(efp_core::Error::InvalidInput(format!(
            "{} was built by a different model than {}",
            index_path.display(),
            model_path.display()
        )));
    }
    let (id, q) = query_embedding(ctx, &a, &model, &idx)?;
    let measure = match a.measure {
        QueryMeasure::Euclidean => Measure::Euclidean,
        QueryMeasure::Cosine => Measure::Cosine,
    };
    let exclude = a.exclude_self.then_some(id.as_str());
    let ranking = idx.query(&q, measure, a.k, exclude)?;
    let mut out = String::from("rank,clip_id,class_label,score\n");
    for (i, h) in ranking.hits.iter().enumerate() {
        let _ = writeln!(out, "{},{},{},{}", i + 1, h.clip_id, h.class_label, h.score);
    }
    print!("{out}");
    Ok(())
}

pub fn evaluate(ctx: &Context, a: EvaluateArgs) -> anyhow::Result<()> {
    let index_path = a.index.unwrap_or_else(|| ctx.cfg.paths.index.clone());
    let out = a.out.unwrap_or_else(|| ctx.cfg.paths.reports_dir.clone());
    let e = &ctx.cfg.eval;
    let measure = a.measure.unwrap_or(e.measure);
    let k_max = a.k_max.unwrap_or(e.k_max);
    let headline_k = a.headline_k.unwrap_or(e.headline_k);
    if k_max == 0 || headline_k == 0 {
        bail!(UsageError("K values must be at least 1".into()));
    }
    let idx = EmbeddingIndex::load(&index_path)?;
    let queries: Vec<&str> = idx.entries().iter().map(|e| e.clip_id.as_str()).collect();
    let ks: Vec<usize> = (1..=k_max).collect();
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut summary = String::from("metric,measure,value\n");
    for m in measure.measures() {
        let report = evaluate_all(&idx, &queries, m, &ks, headline_k)?;
        let path = out.join(format!("report_{m}.csv"));
        report.save(&path)?;
        let _ = writeln!(summary, "map,{m},{}", report.map);
        let _ = writeln!(summary, "mp1,{m},{}", report.mp1);
        let _ = writeln!(summary, "mp{headline_k},{m},{}", report.headline_mpk());
        println!(
            "{m:>9}: MAP {:.4}  MP1 {:.4}  MP{headline_k} {:.4}  ({} queries, {} excluded) -> {}",
            report.map,
            report.mp1,
            report.headline_mpk(),
            report.n_queries,
            report.n_excluded,
            path.display()
        );
    }
    let summary_path = out.join("summary.csv");
    std::fs::write(&summary_path, summary).map_err(|e| efp_core::Error::Io {
        path: summary_path.clone(),
        source: e,
    })?;
    Ok(())
}
