use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::SAMPLE_RATE;
use crate::error::{Error, Result};

/// Bin edges in seconds. With `open_ended`, a final bin collects every
/// duration at or past the last edge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramBins {
    pub edges: Vec<f64>,
    pub open_ended: bool,
}

impl Default for HistogramBins {
    /// One-second bins from 0 to 10 s plus a 10 s+ bin.
    fn default() -> Self {
        Self {
            edges: (0..=10).map(f64::from).collect(),
            open_ended: true,
        }
    }
}

impl HistogramBins {
    pub fn validate(&self) -> Result<()> {
        if self.edges.len() < 2 {
            return Err(Error::Config("histogram needs at least two edges".into()));
        }
        if self.edges.iter().any(|e| !e.is_finite()) || self.edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("histogram edges must be finite and strictly increasing".into()));
        }
        Ok(())
    }

    /// `(start, end)` per bin; the open-ended bin ends at infinity.
    pub fn ranges(&self) -> Vec<(f64, f64)> {
        let mut r: Vec<(f64, f64)> = self.edges.windows(2).map(|w| (w[0], w[1])).collect();
        if self.open_ended {
            r.push((*self.edges.last().unwrap(), f64::INFINITY));
        }
        r
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DurationHistogram {
    pub ranges: Vec<(f64, f64)>,
    pub counts: Vec<u64>,
    /// Durations outside every bin.
    pub dropped: u64,
}

impl DurationHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn proportions(&self) -> Vec<f64> {
        let t = self.total().max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / t).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_start,bin_end,count\n");
        for (&(a, b), c) in self.ranges.iter().zip(&self.counts) {
            writeln!(s, "{a},{b},{c}").unwrap();
        }
        s
    }
}

/// Bins are half-open `[start, end)`.
pub fn duration_histogram(durations_s: &[f64], bins: &HistogramBins) -> Result<DurationHistogram> {
    bins.validate()?;
    let ranges = bins.ranges();
    let mut counts = vec![0u64; ranges.len()];
    let mut dropped = 0;
    for &d in durations_s {
        match ranges.iter().position(|&(a, b)| d >= a && d < b) {
            Some(i) => counts[i] += 1,
            None => dropped += 1,
        }
    }
    Ok(DurationHistogram {
        ranges,
        counts,
        dropped,
    })
}

/// Durations of every `.wav` file in `dir`, read from the headers only,
/// in file-name order.
pub fn wav_durations(dir: impl AsRef<Path>) -> Result<Vec<(String, f64)>> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    paths.sort();
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        let r = hound::WavReader::open(&p).map_err(|e| Error::Format {
            path: p.clone(),
            field: "container",
            found: e.to_string(),
            expected: "RIFF/WAVE".into(),
        })?;
        let spec = r.spec();
        if spec.sample_rate != SAMPLE_RATE {
            return Err(Error::Format {
                path: p.clone(),
                field: "sample_rate",
                found: spec.sample_rate.to_string(),
                expected: SAMPLE_RATE.to_string(),
            });
        }
        let stem = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        out.push((stem, r.duration() as f64 / SAMPLE_RATE as f64));
    }
    Ok(out)
}

pub fn write_histogram_csv(path: impl AsRef<Path>, h: &DurationHistogram) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, h.to_csv()).map_err(|e| Error::io(path, e))
}

pub fn read_histogram_csv(path: impl AsRef<Path>) -> Result<DurationHistogram> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let perr = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut ranges = Vec::new();
    let mut counts = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(perr(i + 1, format!("expected 3 columns, found {}", f.len())));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|e| perr(i + 1, format!("`{s}`: {e}")));
        ranges.push((num(f[0])?, num(f[1])?));
        counts.push(f[2].trim().parse::<u64>().map_err(|e| perr(i + 1, e.to_string()))?);
    }
    Ok(DurationHistogram {
        ranges,
        counts,
        dropped: 0,
    })
}
