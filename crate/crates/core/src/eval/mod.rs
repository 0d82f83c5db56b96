//! Equal error rate, score files and the duration-binned evaluation grid.

mod eer;
mod report;
mod scores;

use std::fmt;
use std::str::FromStr;

pub use eer::{compute_eer, compute_eer_fast, Eer, ScoreEntry};
pub use report::{EvalCell, EvalReport, ReportFormat};
pub use scores::{format_scores, label_scores, read_scores, write_scores};

use crate::data::{fix_length, Utterance, SAMPLE_RATE};
use crate::error::{Error, Result};

/// Anything that maps equal-length waveforms to bonafide scores.
pub trait Scorer {
    fn score_batch(&mut self, waves: &[&[f32]]) -> Result<Vec<f64>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DurationCondition {
    /// Every utterance cut or repeat-padded to this many seconds.
    Fixed(u32),
    /// Full utterances, unchunked.
    Variable,
}

impl DurationCondition {
    /// `1s` … `6s` and variable length.
    pub fn standard() -> Vec<Self> {
        (1..=6).map(DurationCondition::Fixed).chain([DurationCondition::Variable]).collect()
    }
}

impl fmt::Display for DurationCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DurationCondition::Fixed(s) => write!(f, "{s}s"),
            DurationCondition::Variable => f.write_str("variable"),
        }
    }
}

impl FromStr for DurationCondition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "variable" {
            return Ok(DurationCondition::Variable);
        }
        s.strip_suffix('s')
            .and_then(|n| n.parse::<u32>().ok())
            .filter(|&n| n > 0)
            .map(DurationCondition::Fixed)
            .ok_or_else(|| Error::Config(format!("duration condition `{s}` is not `<n>s` or `variable`")))
    }
}

/// Scores of one `(dataset, condition)` cell.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionScores {
    pub condition: DurationCondition,
    pub entries: Vec<ScoreEntry>,
}

/// Scores `corpus` under each condition in `batch_size` groups. Fixed
/// conditions repeat-pad or head-truncate every utterance to `d · sr`;
/// the variable condition scores each utterance alone at full length.
pub fn score_conditions<S: Scorer>(
    scorer: &mut S,
    corpus: &[Utterance],
    conditions: &[DurationCondition],
    batch_size: usize,
) -> Result<Vec<ConditionScores>> {
    if batch_size == 0 {
        return Err(Error::Config("evaluation batch size must be positive".into()));
    }
    let mut out = Vec::with_capacity(conditions.len());
    for &condition in conditions {
        let mut entries = Vec::with_capacity(corpus.len());
        match condition {
            DurationCondition::Fixed(secs) => {
                let n = secs as usize * SAMPLE_RATE as usize;
                for group in corpus.chunks(batch_size) {
                    let waves = group
                        .iter()
                        .map(|u| fix_length(&u.samples, n))
                        .collect::<Result<Vec<_>>>()?;
                    let refs: Vec<&[f32]> = waves.iter().map(Vec::as_slice).collect();
                    push_scores(&mut entries, group, scorer.score_batch(&refs)?)?;
                }
            }
            DurationCondition::Variable => {
                for u in corpus {
                    let s = scorer.score_batch(&[&u.samples])?;
                    push_scores(&mut entries, std::slice::from_ref(u), s)?;
                }
            }
        }
        out.push(ConditionScores { condition, entries });
    }
    Ok(out)
}

fn push_scores(out: &mut Vec<ScoreEntry>, group: &[Utterance], scores: Vec<f64>) -> Result<()> {
    if scores.len() != group.len() {
        return Err(Error::Contract(format!(
            "scorer returned {} scores for {} utterances",
            scores.len(),
            group.len()
        )));
    }
    for (u, s) in group.iter().zip(scores) {
        out.push(ScoreEntry::new(u.id.clone(), s, u.label));
    }
    Ok(())
}

/// Scores every condition and fills one report row per condition. Cells
/// whose EER is undefined are kept and marked, never dropped.
pub fn evaluate_at_durations<S: Scorer>(
    scorer: &mut S,
    dataset: &str,
    corpus: &[Utterance],
    conditions: &[DurationCondition],
    batch_size: usize,
) -> Result<(EvalReport, Vec<ConditionScores>)> {
    let scored = score_conditions(scorer, corpus, conditions, batch_size)?;
    let mut report = EvalReport::default();
    for cs in &scored {
        report.push(EvalCell::from_scores(dataset, cs.condition, &cs.entries)?);
    }
    Ok((report, scored))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Label;

    struct Constant;

    impl Scorer for Constant {
        fn score_batch(&mut self, waves: &[&[f32]]) -> Result<Vec<f64>> {
            Ok(vec![0.25; waves.len()])
        }
    }

    /// Scores by mean sample value, so chunking changes the outcome.
    struct Mean(Vec<usize>);

    impl Scorer for Mean {
        fn score_batch(&mut self, waves: &[&[f32]]) -> Result<Vec<f64>> {
            assert!(waves.iter().all(|w| w.len() == waves[0].len()));
            self.0.push(waves[0].len());
            Ok(waves.iter().map(|w| w.iter().map(|&v| v as f64).sum::<f64>() / w.len() as f64).collect())
        }
    }

    fn corpus() -> Vec<Utterance> {
        (0..10)
            .map(|i| {
                let label = if i % 2 == 0 { Label::Bonafide } else { Label::Spoof };
                let len = 8_000 + 3_000 * i;
                Utterance::new(format!("u{i}"), vec![i as f32 * 0.01; len], label).unwrap()
            })
            .collect()
    }

    #[test]
    fn constant_model_gives_one_half_everywhere() {
        let (report, _) =
            evaluate_at_durations(&mut Constant, "synth", &corpus(), &DurationCondition::standard(), 4).unwrap();
        assert_eq!(report.cells.len(), 7);
        for c in &report.cells {
            assert_eq!(c.eer, Some(0.5), "{}", c.condition);
            assert_eq!((c.n_bonafide, c.n_spoof), (5, 5));
        }
    }

    #[test]
    fn fixed_conditions_chunk_and_variable_does_not() {
        let mut m = Mean(Vec::new());
        let c = corpus();
        evaluate_at_durations(&mut m, "x", &c, &[DurationCondition::Fixed(2), DurationCondition::Variable], 3).unwrap();
        assert!(m.0[..4].iter().all(|&n| n == 32_000));
        let variable: Vec<usize> = m.0[4..].to_vec();
        assert_eq!(variable, c.iter().map(|u| u.samples.len()).collect::<Vec<_>>());
    }

    #[test]
    fn single_class_cells_are_undefined_not_zero() {
        let c: Vec<Utterance> = corpus().into_iter().filter(|u| u.label == Label::Spoof).collect();
        let (report, _) = evaluate_at_durations(&mut Constant, "x", &c, &[DurationCondition::Fixed(1)], 4).unwrap();
        assert_eq!(report.cells[0].eer, None);
    }

    #[test]
    fn condition_names_round_trip() {
        for c in DurationCondition::standard() {
            assert_eq!(c.to_string().parse::<DurationCondition>().unwrap(), c);
        }
        assert!("0s".parse::<DurationCondition>().is_err());
        assert!("long".parse::<DurationCondition>().is_err());
    }
}
