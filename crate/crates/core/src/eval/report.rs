use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use super::{compute_eer_fast, DurationCondition, ScoreEntry};
use crate::data::Label;
use crate::error::{Error, Result};

pub const UNDEFINED: &str = "—";

#[derive(Clone, Debug, PartialEq)]
pub struct EvalCell {
    pub dataset: String,
    pub condition: DurationCondition,
    /// `None` when one class is missing.
    pub eer: Option<f64>,
    pub threshold: Option<f64>,
    pub n_bonafide: usize,
    pub n_spoof: usize,
}

impl EvalCell {
    pub fn from_scores(dataset: &str, condition: DurationCondition, entries: &[ScoreEntry]) -> Result<Self> {
        let n_bonafide = entries.iter().filter(|e| e.label == Label::Bonafide).count();
        let n_spoof = entries.iter().filter(|e| e.label == Label::Spoof).count();
        let (eer, threshold) = match compute_eer_fast(entries) {
            Ok(e) => (Some(e.eer), Some(e.threshold)),
            Err(Error::UndefinedMetric(_)) => (None, None),
            Err(e) => return Err(e),
        };
        Ok(Self {
            dataset: dataset.to_owned(),
            condition,
            eer,
            threshold,
            n_bonafide,
            n_spoof,
        })
    }

    /// Percent with two decimals, or the undefined marker.
    pub fn eer_percent(&self) -> String {
        self.eer.map_or_else(|| UNDEFINED.to_owned(), |e| format!("{:.2}", 100.0 * e))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ReportFormat {
    #[default]
    Csv,
    Text,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "text" => Ok(ReportFormat::Text),
            other => Err(Error::Config(format!("unknown report format `{other}` (csv|text)"))),
        }
    }
}

/// Dataset × duration-condition grid of EERs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub cells: Vec<EvalCell>,
}

impl EvalReport {
    pub fn push(&mut self, cell: EvalCell) {
        self.cells.push(cell);
    }

    pub fn merge(&mut self, other: EvalReport) {
        self.cells.extend(other.cells);
    }

    pub fn get(&self, dataset: &str, condition: DurationCondition) -> Option<&EvalCell> {
        self.cells.iter().find(|c| c.dataset == dataset && c.condition == condition)
    }

    fn datasets(&self) -> Vec<&str> {
        let mut d: Vec<&str> = Vec::new();
        for c in &self.cells {
            if !d.contains(&c.dataset.as_str()) {
                d.push(&c.dataset);
            }
        }
        d
    }

    fn conditions(&self) -> Vec<DurationCondition> {
        let mut c: Vec<DurationCondition> = self.cells.iter().map(|c| c.condition).collect();
        c.sort();
        c.dedup();
        c
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("dataset,duration,eer_percent,n_bonafide,n_spoof\n");
        for c in &self.cells {
            writeln!(s, "{},{},{},{},{}", c.dataset, c.condition, c.eer_percent(), c.n_bonafide, c.n_spoof).unwrap();
        }
        s
    }

    /// Aligned table: one row per dataset, one column per condition, EER %.
    pub fn to_text(&self) -> String {
        let conds = self.conditions();
        let datasets = self.datasets();
        let mut rows: Vec<Vec<String>> = vec![std::iter::once("dataset".to_owned())
            .chain(conds.iter().map(|c| c.to_string()))
            .collect()];
        for d in &datasets {
            let mut row = vec![d.to_string()];
            for &c in &conds {
                row.push(self.get(d, c).map_or_else(|| UNDEFINED.to_owned(), EvalCell::eer_percent));
            }
            rows.push(row);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|j| rows.iter().map(|r| r[j].chars().count()).max().unwrap_or(0))
            .collect();
        let mut s = String::new();
        for row in rows {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(j, (v, &w))| {
                    let pad = w - v.chars().count();
                    if j == 0 {
                        format!("{v}{}", " ".repeat(pad))
                    } else {
                        format!("{}{v}", " ".repeat(pad))
                    }
                })
                .collect();
            writeln!(s, "{}", line.join("  ").trim_end()).unwrap();
        }
        s
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Csv => self.to_csv(),
            ReportFormat::Text => self.to_text(),
        }
    }

    pub fn write(&self, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.render(format)).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> EvalReport {
        let mut r = EvalReport::default();
        for (cond, eer) in [(DurationCondition::Fixed(1), Some(0.12345)), (DurationCondition::Variable, None)] {
            r.push(EvalCell {
                dataset: "synth".into(),
                condition: cond,
                eer,
                threshold: eer,
                n_bonafide: 3,
                n_spoof: if eer.is_some() { 4 } else { 0 },
            });
        }
        r
    }

    #[test]
    fn csv_uses_percent_and_marks_undefined() {
        assert_eq!(
            report().to_csv(),
            "dataset,duration,eer_percent,n_bonafide,n_spoof\nsynth,1s,12.35,3,4\nsynth,variable,—,3,0\n"
        );
    }

    #[test]
    fn text_is_aligned() {
        let t = report().to_text();
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("dataset"));
        assert!(lines[1].contains("12.35") && lines[1].ends_with('—'));
        assert_eq!(lines[0].chars().count(), lines[1].chars().count());
    }

    #[test]
    fn format_names() {
        assert_eq!("text".parse::<ReportFormat>().unwrap(), ReportFormat::Text);
        assert!("json".parse::<ReportFormat>().is_err());
    }
}
