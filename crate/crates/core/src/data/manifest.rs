use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::features::read_feature_file;
use super::vocab::{encode_caption, CaptionSequence, Vocabulary};
use crate::decoder::VideoInput;
use crate::error::{read_text, write_file, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}` (train|val|test)"))),
        }
    }
}

/// One line of the caption manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub video_id: String,
    pub split: Split,
    pub captions: Vec<String>,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let text = read_text(path)?;
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(line)
            .map_err(|e| Error::Format(format!("{} line {}: {e}", path.display(), lineno + 1)))?;
        if rec.captions.is_empty() {
            return Err(Error::Format(format!(
                "{}: video `{}` has no captions",
                path.display(),
                rec.video_id
            )));
        }
        records.push(rec);
    }
    Ok(records)
}

pub fn write_manifest(records: &[ManifestRecord], path: &Path) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    write_file(path, out)
}

#[derive(Debug, Clone)]
pub struct Example {
    pub video: VideoInput,
    pub split: Split,
    pub captions: Vec<CaptionSequence>,
}

/// Videos with their encoded captions, in manifest order.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub examples: Vec<Example>,
}

impl Dataset {
    /// Feature width shared by every video, `None` if empty.
    pub fn feature_width(&self) -> Option<usize> {
        self.examples.first().map(|e| e.video.width())
    }

    pub fn split(&self, split: Split) -> Vec<&Example> {
        self.examples.iter().filter(|e| e.split == split).collect()
    }

    /// Every `(video, caption)` pair of a split, as indices into `examples`
    /// and into that example's captions.
    pub fn pairs(&self, split: Split) -> Vec<(usize, usize)> {
        self.examples
            .iter()
            .enumerate()
            .filter(|(_, e)| e.split == split)
            .flat_map(|(i, e)| (0..e.captions.len()).map(move |j| (i, j)))
            .collect()
    }
}

/// Reads the manifest and `<features_dir>/<video_id>.vff` for every record.
pub fn load_dataset(manifest: &Path, features_dir: &Path, vocab: &Vocabulary) -> Result<Dataset> {
    let mut examples = Vec::new();
    let mut width = None;
    for rec in read_manifest(manifest)? {
        let path = features_dir.join(format!("{}.vff", rec.video_id));
        let file = read_feature_file(&path)?;
        if file.video_id != rec.video_id {
            return Err(Error::Format(format!(
                "{} holds video `{}`, manifest expects `{}`",
                path.display(),
                file.video_id,
                rec.video_id
            )));
        }
        match width {
            None => width = Some(file.q),
            Some(q) if q != file.q => {
                return Err(Error::Format(format!(
                    "{}: feature width {} differs from {q}",
                    path.display(),
                    file.q
                )))
            }
            _ => {}
        }
        let captions = rec
            .captions
            .iter()
            .map(|c| encode_caption(&rec.video_id, c, vocab))
            .collect();
        examples.push(Example {
            video: VideoInput::new(rec.video_id, file.to_tensor())?,
            split: rec.split,
            captions,
        });
    }
    Ok(Dataset { examples })
}

#[cfg(test)]
mod tests {
    use std::fs;

    use super::*;
    use crate::data::{build_vocab, write_feature_file, FeatureFile};

    #[test]
    fn manifest_round_trip_and_loading() {
        let dir = tempfile::tempdir().unwrap();
        let records = vec![
            ManifestRecord {
                video_id: "v1".into(),
                split: Split::Train,
                captions: vec!["a dog runs".into(), "the dog".into()],
            },
            ManifestRecord {
                video_id: "v2".into(),
                split: Split::Val,
                captions: vec!["a cat".into()],
            },
        ];
        let manifest = dir.path().join("m.jsonl");
        write_manifest(&records, &manifest).unwrap();
        assert_eq!(read_manifest(&manifest).unwrap(), records);
        let line = fs::read_to_string(&manifest).unwrap();
        assert!(line.starts_with(r#"{"video_id":"v1","split":"train","captions":["#));

        for r in &records {
            let f = FeatureFile::new(r.video_id.clone(), 2, 3, vec![0.25; 6]).unwrap();
            write_feature_file(&f, &dir.path().join(format!("{}.vff", r.video_id))).unwrap();
        }
        let vocab = build_vocab(&["a dog runs", "the dog", "a cat"], 1).unwrap();
        let ds = load_dataset(&manifest, dir.path(), &vocab).unwrap();
        assert_eq!(ds.feature_width(), Some(3));
        assert_eq!(ds.pairs(Split::Train), vec![(0, 0), (0, 1)]);
        assert_eq!(ds.pairs(Split::Val), vec![(1, 0)]);
        assert_eq!(ds.examples[0].captions[0].tokens.len(), 5);
    }

    #[test]
    fn mismatched_id_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("m.jsonl");
        fs::write(
            &manifest,
            "{\"video_id\":\"a\",\"split\":\"test\",\"captions\":[\"x\"]}\n",
        )
        .unwrap();
        let f = FeatureFile::new("b", 1, 1, vec![0.0]).unwrap();
        write_feature_file(&f, &dir.path().join("a.vff")).unwrap();
        let vocab = build_vocab(&["x"], 1).unwrap();
        assert!(load_dataset(&manifest, dir.path(), &vocab).is_err());
    }

    #[test]
    fn bad_lines_report_position() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("m.jsonl");
        fs::write(
            &manifest,
            "{\"video_id\":\"a\",\"split\":\"dev\",\"captions\":[\"x\"]}\n",
        )
        .unwrap();
        assert!(read_manifest(&manifest).unwrap_err().to_string().contains("line 1"));
    }
}
