use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::ScoreEntry;
use crate::data::ProtocolEntry;
use crate::error::{Error, Result};

/// `utterance_id score` per line.
pub fn format_scores(entries: &[ScoreEntry]) -> String {
    let mut s = String::new();
    for e in entries {
        // `{:?}` on f64 round-trips exactly.
        writeln!(s, "{} {:?}", e.utterance_id, e.score).unwrap();
    }
    s
}

pub fn write_scores(path: impl AsRef<Path>, entries: &[ScoreEntry]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_scores(entries)).map_err(|e| Error::io(path, e))
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<(String, f64)>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        let perr = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        if f.len() != 2 {
            return Err(perr(format!("expected `utterance_id score`, found {} fields", f.len())));
        }
        let score: f64 = f[1].parse().map_err(|e| perr(format!("score `{}`: {e}", f[1])))?;
        if !score.is_finite() {
            return Err(perr(format!("score `{}` is not finite", f[1])));
        }
        out.push((f[0].to_owned(), score));
    }
    Ok(out)
}

/// Attaches protocol keys to raw scores; every scored id must be listed.
pub fn label_scores(scores: &[(String, f64)], protocol: &[ProtocolEntry]) -> Result<Vec<ScoreEntry>> {
    let keys: HashMap<&str, _> = protocol.iter().map(|e| (e.utterance_id.as_str(), e.key)).collect();
    scores
        .iter()
        .map(|(id, s)| {
            let label = keys
                .get(id.as_str())
                .ok_or_else(|| Error::Input(format!("scored utterance `{id}` is not in the protocol")))?;
            Ok(ScoreEntry::new(id.clone(), *s, *label))
        })
        .collect()
}
