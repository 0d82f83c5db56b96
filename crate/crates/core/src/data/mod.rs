//! Audio ingestion, protocol files, chunking policies, synthetic corpora and
//! duration statistics.

mod chunk;
mod protocol;
mod stats;
mod synth;
mod wav;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use chunk::{
    chunk_size_for_batch, dcs_sample_chunk_size, fit_length, fix_length, make_batch, Batch, ChunkMode, ChunkPolicy,
    CropMode, PadMode,
};
pub use protocol::{format_protocol, parse_protocol, parse_protocol_str, write_protocol, ProtocolEntry};
pub use stats::{duration_histogram, read_histogram_csv, wav_durations, write_histogram_csv, DurationHistogram, HistogramBins};
pub use synth::{
    generate_corpus, plan_corpus, render_item, write_corpus, ArtifactConfig, DurationDist, SplitSpec, SynthItem, SynthSpec,
};
pub use wav::{load_wav, write_wav};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Bonafide,
    Spoof,
    Unknown,
}

impl Label {
    /// Class index used by the classifier heads: spoof 0, bonafide 1.
    pub fn class_index(self) -> Option<usize> {
        match self {
            Label::Spoof => Some(0),
            Label::Bonafide => Some(1),
            Label::Unknown => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Bonafide => "bonafide",
            Label::Spoof => "spoof",
            Label::Unknown => "unknown",
        }
    }
}

pub const BONAFIDE_CLASS: usize = 1;
pub const NUM_CLASSES: usize = 2;

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "bonafide" => Ok(Label::Bonafide),
            "spoof" => Ok(Label::Spoof),
            other => Err(format!("unknown key `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub label: Label,
}

impl Utterance {
    pub fn new(id: impl Into<String>, samples: Vec<f32>, label: Label) -> Result<Self> {
        let id = id.into();
        if samples.is_empty() {
            return Err(Error::Input(format!("utterance `{id}` has no samples")));
        }
        Ok(Self {
            id,
            samples,
            sample_rate: SAMPLE_RATE,
            label,
        })
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Loads every utterance listed in a protocol from `<audio_dir>/<id>.wav`,
/// labelled with the protocol key, in protocol order.
pub fn load_corpus(protocol: impl AsRef<Path>, audio_dir: impl AsRef<Path>) -> Result<Vec<Utterance>> {
    let dir = audio_dir.as_ref();
    parse_protocol(protocol)?
        .into_iter()
        .map(|e| {
            let mut u = load_wav(dir.join(format!("{}.wav", e.utterance_id)))?;
            u.id = e.utterance_id;
            u.label = e.key;
            Ok(u)
        })
        .collect()
}
