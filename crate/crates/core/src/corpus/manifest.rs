use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audio::wav::probe_wav;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    Unassigned,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "unassigned" => Ok(Split::Unassigned),
            other => Err(Error::InvalidInput(format!("unknown split `{other}`"))),
        }
    }
}

/// One 2-second segment of a source recording.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub clip_id: String,
    /// Relative to the directory holding the manifest file.
    pub source_path: PathBuf,
    pub segment_index: u32,
    pub class_label: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    records: Vec<ClipRecord>,
    class_set: Vec<String>,
    /// Seed of the split that produced the current assignment. Not persisted in the CSV.
    pub split_seed: Option<u64>,
}

pub const MANIFEST_HEADER: [&str; 5] = ["clip_id", "source_path", "segment_index", "class_label", "split"];

impl Manifest {
    pub fn new(records: Vec<ClipRecord>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        let mut classes = BTreeSet::new();
        for r in &records {
            if r.class_label.is_empty() {
                return Err(Error::InvalidInput(format!("clip `{}` has an empty class label", r.clip_id)));
            }
            if !seen.insert(r.clip_id.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate clip id `{}`", r.clip_id)));
            }
            classes.insert(r.class_label.clone());
        }
        Ok(Self {
            records,
            class_set: classes.into_iter().collect(),
            split_seed: None,
        })
    }

    pub fn records(&self) -> &[ClipRecord] {
        &self.records
    }

    pub fn class_set(&self) -> &[String] {
        &self.class_set
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &ClipRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub(crate) fn records_mut(&mut self) -> &mut [ClipRecord] {
        &mut self.records
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        let csv_err = |e: csv::Error| Error::InvalidInput(format!("manifest write failed: {e}"));
        wtr.write_record(MANIFEST_HEADER).map_err(csv_err)?;
        for r in &self.records {
            let path = path_to_manifest(&r.source_path);
            let seg = r.segment_index.to_string();
            wtr.write_record([r.clip_id.as_str(), &path, &seg, &r.class_label, r.split.as_str()])
                .map_err(csv_err)?;
        }
        wtr.flush().map_err(|e| Error::InvalidInput(e.to_string()))
    }

    pub fn read_csv<R: std::io::Read>(r: R, origin: &Path) -> Result<Self> {
        let bad = |reason: String| Error::format(origin, "manifest", reason);
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
        if headers.iter().ne(MANIFEST_HEADER.iter().copied()) {
            return Err(bad(format!("unexpected header {:?}", headers.iter().collect::<Vec<_>>())));
        }
        let mut records = Vec::new();
        for (line, row) in rdr.records().enumerate() {
            let row = row.map_err(|e| bad(e.to_string()))?;
            let field = |i: usize| row.get(i).unwrap_or_default();
            records.push(ClipRecord {
                clip_id: field(0).to_owned(),
                source_path: PathBuf::from(field(1)),
                segment_index: field(2)
                    .parse()
                    .map_err(|_| bad(format!("row {}: bad segment_index `{}`", line + 2, field(2))))?,
                class_label: field(3).to_owned(),
                split: field(4).parse().map_err(|e: Error| bad(format!("row {}: {e}", line + 2)))?,
            });
        }
        Manifest::new(records).map_err(|e| bad(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(file), path)
    }
}

fn path_to_manifest(p: &Path) -> String {
    p.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

fn is_wav(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        out.push(entry.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

/// Scans `root/<class>/*.wav` into one record per 2-second segment.
///
/// Clip ids are `<class>/<file>#<segment>`, so files with the same name in
/// different classes stay distinct. Unreadable files and classes with no full
/// segment are skipped with a warning.
pub fn build_manifest(root: &Path, target_rate_hz: u32) -> Result<Manifest> {
    let mut records = Vec::new();
    for class_dir in sorted_entries(root)?.into_iter().filter(|p| p.is_dir()) {
        let label = class_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let before = records.len();
        for file in sorted_entries(&class_dir)?.into_iter().filter(|p| p.is_file() && is_wav(p)) {
            let info = match probe_wav(&file) {
                Ok(info) => info,
                Err(e) => {
                    log::warn!("skipping {}: {e}", file.display());
                    continue;
                }
            };
            let name = file.file_name().unwrap().to_string_lossy().into_owned();
            let rel = PathBuf::from(&label).join(&name);
            for seg in 0..info.clip_count(target_rate_hz) {
                records.push(ClipRecord {
                    clip_id: format!("{label}/{name}#{seg}"),
                    source_path: rel.clone(),
                    segment_index: seg as u32,
                    class_label: label.clone(),
                    split: Split::Unassigned,
                });
            }
        }
        if records.len() == before {
            log::warn!("class `{label}` has no usable 2 s clips; dropped");
        }
    }
    if records.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{}: no class directories with usable clips",
            root.display()
        )));
    }
    records.sort_by(|a, b| {
        (&a.class_label, &a.source_path, a.segment_index).cmp(&(&b.class_label, &b.source_path, b.segment_index))
    });
    Manifest::new(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone_file(path: &Path, seconds: f32) {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        let n = (16_000.0 * seconds) as usize;
        let samples: Vec<f32> = (0..n).map(|i| ((i as f32) * 0.05).sin() * 0.3).collect();
        crate::audio::wav::write_wav_i16(path, &samples, 16_000).unwrap();
    }

    #[test]
    fn two_classes_six_seconds_each() {
        let dir = tempfile::tempdir().unwrap();
        tone_file(&dir.path().join("dog/a.wav"), 6.0);
        tone_file(&dir.path().join("cat/a.wav"), 6.0);
        let m = build_manifest(dir.path(), 16_000).unwrap();
        assert_eq!(m.len(), 6);
        assert_eq!(m.class_set(), ["cat", "dog"]);
        assert_eq!(m.records()[0].clip_id, "cat/a.wav#0");
        assert_eq!(m.records()[3].clip_id, "dog/a.wav#0");
        assert_eq!(m.records()[2].segment_index, 2);
    }

    #[test]
    fn empty_root_is_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(build_manifest(dir.path(), 16_000).is_err());
    }

    #[test]
    fn short_only_class_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        tone_file(&dir.path().join("short/a.wav"), 1.0);
        tone_file(&dir.path().join("long/a.wav"), 2.0);
        let m = build_manifest(dir.path(), 16_000).unwrap();
        assert_eq!(m.class_set(), ["long"]);
        assert_eq!(m.len(), 1);
    }

    #[test]
    fn csv_round_trip_and_header() {
        let m = Manifest::new(vec![ClipRecord {
            clip_id: "x/a,b.wav#0".into(),
            source_path: PathBuf::from("x").join("a,b.wav"),
            segment_index: 0,
            class_label: "x".into(),
            split: Split::Test,
        }])
        .unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("clip_id,source_path,segment_index,class_label,split\n"));
        assert!(!text.contains('\r'));
        let back = Manifest::read_csv(buf.as_slice(), Path::new("m.csv")).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn rejects_duplicates_and_empty_labels() {
        let rec = |id: &str, label: &str| ClipRecord {
            clip_id: id.into(),
            source_path: "p.wav".into(),
            segment_index: 0,
            class_label: label.into(),
            split: Split::Unassigned,
        };
        assert!(Manifest::new(vec![rec("a", "x"), rec("a", "y")]).is_err());
        assert!(Manifest::new(vec![rec("a", "")]).is_err());
    }
}
