//! Plain-text score files: one record per line,
//! `sample_id,split_tag,score` with 12 significant digits.

use crate::error::{Error, Result};
use std::fs;
use std::path::Path;

/// One labeled score.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub sample_id: u64,
    pub split: String,
    pub score: f64,
}

pub fn format_scores(records: &[ScoreRecord]) -> String {
    let mut out = String::new();
    for rec in records {
        out.push_str(&format!("{},{},{:.11e}\n", rec.sample_id, rec.split, rec.score));
    }
    out
}

pub fn save_scores(path: &Path, records: &[ScoreRecord]) -> Result<()> {
    fs::write(path, format_scores(records))?;
    Ok(())
}

pub fn parse_scores(text: &str) -> Result<Vec<ScoreRecord>> {
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.splitn(3, ',');
        let (id, split, score) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => {
                return Err(Error::Format(format!(
                    "score line {} has fewer than 3 fields",
                    lineno + 1
                )))
            }
        };
        let sample_id = id
            .trim()
            .parse::<u64>()
            .map_err(|_| Error::Format(format!("bad sample id on line {}", lineno + 1)))?;
        let score = score
            .trim()
            .parse::<f64>()
            .map_err(|_| Error::Format(format!("bad score on line {}", lineno + 1)))?;
        records.push(ScoreRecord {
            sample_id,
            split: split.trim().to_string(),
            score,
        });
    }
    Ok(records)
}

pub fn load_scores(path: &Path) -> Result<Vec<ScoreRecord>> {
    parse_scores(&fs::read_to_string(path)?)
}
