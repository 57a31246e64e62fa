use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluator::Label;
use crate::io::write_atomic;

pub const MANIFEST_HEADER: [&str; 5] = ["path", "machine_type", "machine_id", "split", "label"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Option<Split> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Some(Split::Train),
            "test" => Some(Split::Test),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Path as written in the manifest; used as the clip id.
    pub clip_id: String,
    /// `clip_id` resolved against the manifest's directory.
    pub path: PathBuf,
    pub machine_type: String,
    pub machine_id: String,
    pub split: Split,
    pub label: Label,
}

fn label_str(l: Label) -> &'static str {
    match l {
        Label::Normal => "normal",
        Label::Anomaly => "anomaly",
        Label::Unknown => "unknown",
    }
}

/// Parses and validates a manifest CSV. Every problem is reported with its
/// line number; nothing is returned unless the whole file is valid.
pub fn ingest_manifest(csv_path: &Path) -> Result<Vec<ManifestEntry>> {
    let base = csv_path.parent().unwrap_or(Path::new("."));
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(csv_path)
        .map_err(|e| Error::Manifest(vec![format!("{}: {e}", csv_path.display())]))?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if header != MANIFEST_HEADER {
        return Err(Error::Manifest(vec![format!(
            "line 1: header must be `{}`, got `{}`",
            MANIFEST_HEADER.join(","),
            header.join(",")
        )]));
    }
    let mut problems = Vec::new();
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for rec in reader.records() {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                problems.push(format!("line {line}: {e}"));
                continue;
            }
        };
        let line = rec.position().map_or(0, |p| p.line());
        let mut bad = |m: String| problems.push(format!("line {line}: {m}"));
        let (clip_id, machine_type, machine_id) = (&rec[0], &rec[1], &rec[2]);
        let split = Split::parse(&rec[3]);
        let label = match rec[4].trim().to_ascii_lowercase().as_str() {
            "normal" => Some(Label::Normal),
            "anomaly" => Some(Label::Anomaly),
            "unknown" => Some(Label::Unknown),
            _ => None,
        };
        if clip_id.is_empty() || machine_type.is_empty() {
            bad("path and machine_type must be non-empty".into());
            continue;
        }
        let Some(split) = split else {
            bad(format!("split must be train or test, got '{}'", &rec[3]));
            continue;
        };
        let Some(label) = label else {
            bad(format!("label must be normal, anomaly or unknown, got '{}'", &rec[4]));
            continue;
        };
        if split == Split::Train && label != Label::Normal {
            bad(format!(
                "train entries must be normal, got {} for {clip_id}",
                label_str(label)
            ));
            continue;
        }
        let path = base.join(clip_id);
        if !seen.insert(path.clone()) {
            bad(format!("duplicate path {clip_id}"));
            continue;
        }
        if let Err(e) = std::fs::File::open(&path) {
            bad(format!("cannot read {}: {e}", path.display()));
            continue;
        }
        entries.push(ManifestEntry {
            clip_id: clip_id.to_owned(),
            path,
            machine_type: machine_type.to_owned(),
            machine_id: machine_id.to_owned(),
            split,
            label,
        });
    }
    if !problems.is_empty() {
        return Err(Error::Manifest(problems));
    }
    if entries.is_empty() {
        return Err(Error::Manifest(vec!["no entries".into()]));
    }
    Ok(entries)
}

/// Writes entries in manifest format with paths as given in `clip_id`.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(MANIFEST_HEADER)?;
    for e in entries {
        w.write_record([
            e.clip_id.as_str(),
            &e.machine_type,
            &e.machine_id,
            e.split.as_str(),
            label_str(e.label),
        ])?;
    }
    write_atomic(path, &w.into_inner().expect("in-memory writer"))
}

/// Builds entries from the DCASE 2020 Task 2 folder convention
/// `<root>/<machine_type>/{train,test}/{normal,anomaly}_id_XX_NNNNNNNN.wav`.
/// Clip ids are relative to `root`.
pub fn scan_dcase(root: &Path) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    let mut types: Vec<_> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .collect();
    types.sort_by_key(|e| e.file_name());
    for t in types {
        let machine_type = t.file_name().to_string_lossy().into_owned();
        for split in [Split::Train, Split::Test] {
            let dir = t.path().join(split.as_str());
            if !dir.is_dir() {
                continue;
            }
            let mut files: Vec<_> = std::fs::read_dir(&dir)?
                .filter_map(|e| e.ok())
                .map(|e| e.file_name().to_string_lossy().into_owned())
                .filter(|n| n.ends_with(".wav"))
                .collect();
            files.sort();
            for name in files {
                let label = if name.starts_with("normal") {
                    Label::Normal
                } else if name.starts_with("anomaly") {
                    Label::Anomaly
                } else {
                    Label::Unknown
                };
                if split == Split::Train && label != Label::Normal {
                    continue;
                }
                let machine_id = name
                    .split('_')
                    .collect::<Vec<_>>()
                    .windows(2)
                    .find(|w| w[0] == "id")
                    .map(|w| format!("id_{}", w[1]))
                    .unwrap_or_else(|| "unknown".into());
                let clip_id = format!("{machine_type}/{}/{name}", split.as_str());
                out.push(ManifestEntry {
                    path: root.join(&clip_id),
                    clip_id,
                    machine_type: machine_type.clone(),
                    machine_id,
                    split,
                    label,
                });
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Missing(format!(
            "no DCASE-style clips under {}",
            root.display()
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(rows: &[&str]) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        for f in ["a.wav", "b.wav", "c.wav"] {
            std::fs::write(dir.path().join(f), b"x").unwrap();
        }
        let p = dir.path().join("m.csv");
        let mut text = MANIFEST_HEADER.join(",") + "\n";
        for r in rows {
            text.push_str(r);
            text.push('\n');
        }
        std::fs::write(&p, text).unwrap();
        (dir, p)
    }

    fn problems(r: Result<Vec<ManifestEntry>>) -> Vec<String> {
        match r {
            Err(Error::Manifest(p)) => p,
            other => panic!("expected manifest error, got {other:?}"),
        }
    }

    #[test]
    fn accepts_valid_manifest() {
        let (_d, p) = setup(&[
            "a.wav,fan,id_00,train,normal",
            "b.wav,pump,id_02,test,anomaly",
            "c.wav,pump,id_02,test,unknown",
        ]);
        let e = ingest_manifest(&p).unwrap();
        assert_eq!(e.len(), 3);
        assert_eq!(e[1].label, Label::Anomaly);
        assert!(e[0].path.ends_with("a.wav"));
    }

    #[test]
    fn train_anomaly_rejected_with_line() {
        let (_d, p) = setup(&["a.wav,fan,id_00,train,normal", "b.wav,fan,id_00,train,anomaly"]);
        let pr = problems(ingest_manifest(&p));
        assert_eq!(pr.len(), 1);
        assert!(pr[0].starts_with("line 3:"), "{pr:?}");
    }

    #[test]
    fn itemizes_every_problem() {
        let (_d, p) = setup(&[
            "a.wav,fan,id_00,train,normal",
            "a.wav,fan,id_00,test,normal",
            "missing.wav,fan,id_00,test,normal",
            "b.wav,fan,id_00,validation,normal",
            "c.wav,fan,id_00,test,broken",
        ]);
        let pr = problems(ingest_manifest(&p));
        assert_eq!(pr.len(), 4, "{pr:?}");
        assert!(pr[0].contains("duplicate"));
        assert!(pr[1].contains("cannot read"));
        assert!(pr[2].contains("split"));
        assert!(pr[3].contains("label"));
    }

    #[test]
    fn empty_and_bad_header() {
        let (_d, p) = setup(&[]);
        assert_eq!(problems(ingest_manifest(&p)), vec!["no entries".to_string()]);
        std::fs::write(&p, "file,type\n").unwrap();
        assert!(problems(ingest_manifest(&p))[0].contains("header"));
    }

    #[test]
    fn write_then_ingest() {
        let (d, p) = setup(&["a.wav,fan,id_00,train,normal", "b.wav,fan,id_00,test,anomaly"]);
        let e = ingest_manifest(&p).unwrap();
        let q = d.path().join("copy.csv");
        write_manifest(&q, &e).unwrap();
        assert_eq!(ingest_manifest(&q).unwrap(), e);
    }

    #[test]
    fn dcase_layout() {
        let dir = tempfile::tempdir().unwrap();
        for (sub, name) in [
            ("fan/train", "normal_id_00_00000000.wav"),
            ("fan/test", "anomaly_id_02_00000001.wav"),
            ("fan/test", "normal_id_02_00000000.wav"),
            ("valve/train", "normal_id_04_00000003.wav"),
        ] {
            std::fs::create_dir_all(dir.path().join(sub)).unwrap();
            std::fs::write(dir.path().join(sub).join(name), b"x").unwrap();
        }
        let e = scan_dcase(dir.path()).unwrap();
        assert_eq!(e.len(), 4);
        assert_eq!(e[1].clip_id, "fan/test/anomaly_id_02_00000001.wav");
        assert_eq!(e[1].machine_id, "id_02");
        assert_eq!(e[1].label, Label::Anomaly);
        assert_eq!(e[3].machine_type, "valve");
    }
}
