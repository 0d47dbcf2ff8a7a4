//! JSON-lines datasets: one `{id, steps, features_path, summary}` object per line.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub steps: Vec<String>,
    /// Relative paths are resolved against the dataset file's directory.
    pub features_path: PathBuf,
    #[serde(default)]
    pub summary: String,
}

impl DatasetRecord {
    /// Step descriptions joined into one source text, separated by periods.
    pub fn source_text(&self) -> String {
        self.steps.join(" . ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetMode {
    /// Every record needs a nonempty summary.
    Training,
    /// Summaries are optional.
    Inference,
}

#[derive(Deserialize)]
struct RawRecord {
    id: Option<String>,
    steps: Option<Vec<String>>,
    features_path: Option<PathBuf>,
    summary: Option<String>,
}

fn parse_line(raw: &str, mode: DatasetMode) -> std::result::Result<DatasetRecord, String> {
    let r: RawRecord = serde_json::from_str(raw).map_err(|e| e.to_string())?;
    let id = r.id.ok_or("missing field `id`")?;
    let steps = r.steps.ok_or("missing field `steps`")?;
    if steps.is_empty() {
        return Err("`steps` must be nonempty".into());
    }
    let features_path = r.features_path.ok_or("missing field `features_path`")?;
    let summary = match (r.summary, mode) {
        (Some(s), DatasetMode::Training) if s.trim().is_empty() => {
            return Err("empty `summary` in a training split".into())
        }
        (Some(s), _) => s,
        (None, DatasetMode::Training) => return Err("missing field `summary`".into()),
        (None, DatasetMode::Inference) => String::new(),
    };
    Ok(DatasetRecord {
        id,
        steps,
        features_path,
        summary,
    })
}

/// Parses dataset text; `origin` is used for diagnostics and to resolve
/// relative feature paths.
pub fn parse_dataset(text: &str, origin: &Path, mode: DatasetMode) -> Result<Vec<DatasetRecord>> {
    let base = origin.parent().unwrap_or(Path::new(""));
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let mut rec = parse_line(raw, mode).map_err(|message| Error::DatasetLine {
            path: origin.to_path_buf(),
            line: i + 1,
            message,
        })?;
        if rec.features_path.is_relative() {
            rec.features_path = base.join(&rec.features_path);
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn load_dataset(path: &Path, mode: DatasetMode) -> Result<Vec<DatasetRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, path, mode)
}

pub fn dataset_to_string(records: &[DatasetRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).expect("records serialize"));
        s.push('\n');
    }
    s
}

pub fn save_dataset(path: &Path, records: &[DatasetRecord]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(dataset_to_string(records).as_bytes())
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"{"id":"a","steps":["chop the onion"],"features_path":"f/a.csft","summary":"chop it"}"#;

    #[test]
    fn parses_and_resolves_paths() {
        let recs = parse_dataset(&format!("{GOOD}\n\n{GOOD}\n"), Path::new("data/train.jsonl"), DatasetMode::Training).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].features_path, Path::new("data/f/a.csft"));
        assert_eq!(recs[0].source_text(), "chop the onion");
    }

    #[test]
    fn reports_line_numbers() {
        let text = format!("{GOOD}\n{{\"id\":\"b\",\"steps\":[\"x\"],\"features_path\":\"p\"}}\n");
        let err = parse_dataset(&text, Path::new("d.jsonl"), DatasetMode::Training).unwrap_err();
        match err {
            Error::DatasetLine { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("summary"));
            }
            other => panic!("unexpected {other}"),
        }
        let recs = parse_dataset(&text, Path::new("d.jsonl"), DatasetMode::Inference).unwrap();
        assert_eq!(recs[1].summary, "");

        let err = parse_dataset("not json\n", Path::new("d.jsonl"), DatasetMode::Inference).unwrap_err();
        assert!(matches!(err, Error::DatasetLine { line: 1, .. }));
        let err = parse_dataset(r#"{"id":"x","steps":[],"features_path":"p"}"#, Path::new("d"), DatasetMode::Inference).unwrap_err();
        assert!(err.to_string().contains("steps"));
    }

    #[test]
    fn text_round_trip_preserves_order() {
        let recs: Vec<DatasetRecord> = (0..5)
            .map(|i| DatasetRecord {
                id: format!("r{i}"),
                steps: vec![format!("step {i}"), "serve".into()],
                features_path: PathBuf::from(format!("/abs/{i}.csft")),
                summary: format!("summary {i}"),
            })
            .collect();
        let back = parse_dataset(&dataset_to_string(&recs), Path::new("x.jsonl"), DatasetMode::Training).unwrap();
        assert_eq!(back, recs);
    }
}
