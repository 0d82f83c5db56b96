use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::Label;
use crate::error::{Error, Result};

/// One line of an ASVspoof-style protocol:
/// `speaker utterance gender-or-dash system key`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProtocolEntry {
    pub speaker_id: String,
    pub utterance_id: String,
    pub gender: String,
    pub system_id: String,
    pub key: Label,
}

pub fn parse_protocol(path: impl AsRef<Path>) -> Result<Vec<ProtocolEntry>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_protocol_str(&text, path)
}

/// Parses protocol text; `origin` only labels error messages. Blank lines
/// are skipped, order is preserved.
pub fn parse_protocol_str(text: &str, origin: &Path) -> Result<Vec<ProtocolEntry>> {
    let err = |line: usize, message: String| Error::Parse {
        path: PathBuf::from(origin),
        line,
        message,
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 5 {
            return Err(err(line_no, format!("expected 5 fields, found {}", fields.len())));
        }
        let key = fields[4].parse::<Label>().map_err(|m| err(line_no, m))?;
        out.push(ProtocolEntry {
            speaker_id: fields[0].to_owned(),
            utterance_id: fields[1].to_owned(),
            gender: fields[2].to_owned(),
            system_id: fields[3].to_owned(),
            key,
        });
    }
    Ok(out)
}

pub fn format_protocol(entries: &[ProtocolEntry]) -> Result<String> {
    let mut s = String::new();
    for e in entries {
        if e.key == Label::Unknown {
            return Err(Error::Input(format!("entry `{}` has no key", e.utterance_id)));
        }
        for f in [&e.speaker_id, &e.utterance_id, &e.gender, &e.system_id] {
            if f.is_empty() || f.contains(char::is_whitespace) {
                return Err(Error::Input(format!("protocol field `{f}` must be a non-empty token")));
            }
        }
        writeln!(s, "{} {} {} {} {}", e.speaker_id, e.utterance_id, e.gender, e.system_id, e.key).unwrap();
    }
    Ok(s)
}

pub fn write_protocol(path: impl AsRef<Path>, entries: &[ProtocolEntry]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_protocol(entries)?).map_err(|e| Error::io(path, e))
}
