use crate::data::Label;
use crate::error::{Error, Result};

/// Detection score of one utterance; higher means more bonafide.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreEntry {
    pub utterance_id: String,
    pub score: f64,
    pub label: Label,
}

impl ScoreEntry {
    pub fn new(utterance_id: impl Into<String>, score: f64, label: Label) -> Self {
        Self {
            utterance_id: utterance_id.into(),
            score,
            label,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Eer {
    /// Fraction in `[0, 1]`.
    pub eer: f64,
    pub threshold: f64,
}

/// One operating point: integer counts at threshold `t`, where an
/// utterance is accepted as bonafide when `score >= t`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Point {
    t: f64,
    false_accepts: usize,
    false_rejects: usize,
}

fn split(entries: &[ScoreEntry]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut bona = Vec::new();
    let mut spoof = Vec::new();
    for e in entries {
        if !e.score.is_finite() {
            return Err(Error::Input(format!("score of `{}` is not finite", e.utterance_id)));
        }
        match e.label {
            Label::Bonafide => bona.push(e.score),
            Label::Spoof => spoof.push(e.score),
            Label::Unknown => return Err(Error::Input(format!("`{}` has no label", e.utterance_id))),
        }
    }
    if bona.is_empty() || spoof.is_empty() {
        return Err(Error::UndefinedMetric(format!(
            "EER needs both classes, got {} bonafide and {} spoof",
            bona.len(),
            spoof.len()
        )));
    }
    Ok((bona, spoof))
}

/// Walks the operating points in threshold order and intersects
/// FAR − FRR = 0. If a point hits zero exactly, its rates are the EER;
/// otherwise the two points around the sign change are joined linearly.
fn crossing(points: &[Point], n_bona: usize, n_spoof: usize) -> Eer {
    let far = |p: &Point| p.false_accepts as f64 / n_spoof as f64;
    let frr = |p: &Point| p.false_rejects as f64 / n_bona as f64;
    // The last point (t = +inf) has FAR 0 and FRR 1, so a crossing exists.
    let k = points
        .iter()
        .position(|p| far(p) - frr(p) <= 0.0)
        .expect("the +inf threshold always satisfies FAR <= FRR");
    let pk = &points[k];
    let dk = far(pk) - frr(pk);
    if dk == 0.0 || k == 0 {
        return Eer {
            eer: far(pk),
            threshold: pk.t,
        };
    }
    let pj = &points[k - 1];
    let dj = far(pj) - frr(pj);
    let alpha = dj / (dj - dk);
    let eer = far(pj) + alpha * (far(pk) - far(pj));
    let threshold = if pk.t.is_finite() {
        pj.t + alpha * (pk.t - pj.t)
    } else {
        pj.t
    };
    Eer { eer, threshold }
}

fn candidates(bona: &[f64], spoof: &[f64]) -> Vec<f64> {
    let mut t: Vec<f64> = bona.iter().chain(spoof).copied().collect();
    t.sort_by(f64::total_cmp);
    t.dedup();
    t.push(f64::INFINITY);
    t
}

/// Reference EER: counts errors from scratch at every candidate threshold
/// (each distinct score, then +inf). Quadratic; used as the oracle for
/// [`compute_eer_fast`].
pub fn compute_eer(entries: &[ScoreEntry]) -> Result<Eer> {
    let (bona, spoof) = split(entries)?;
    let points: Vec<Point> = candidates(&bona, &spoof)
        .into_iter()
        .map(|t| Point {
            t,
            false_accepts: spoof.iter().filter(|&&s| s >= t).count(),
            false_rejects: bona.iter().filter(|&&b| b < t).count(),
        })
        .collect();
    Ok(crossing(&points, bona.len(), spoof.len()))
}

/// Sort-and-sweep EER with the same operating points as [`compute_eer`].
pub fn compute_eer_fast(entries: &[ScoreEntry]) -> Result<Eer> {
    let (mut bona, mut spoof) = split(entries)?;
    bona.sort_by(f64::total_cmp);
    spoof.sort_by(f64::total_cmp);
    let (nb, ns) = (bona.len(), spoof.len());
    let mut points = Vec::with_capacity(nb + ns + 1);
    let (mut i, mut j) = (0, 0);
    // Before each distinct threshold t: i bonafide and j spoof scores lie
    // strictly below t.
    while i < nb || j < ns {
        let t = match (bona.get(i), spoof.get(j)) {
            (Some(&b), Some(&s)) => b.min(s),
            (Some(&b), None) => b,
            (None, Some(&s)) => s,
            (None, None) => unreachable!(),
        };
        points.push(Point {
            t,
            false_accepts: ns - j,
            false_rejects: i,
        });
        while i < nb && bona[i] == t {
            i += 1;
        }
        while j < ns && spoof[j] == t {
            j += 1;
        }
    }
    points.push(Point {
        t: f64::INFINITY,
        false_accepts: 0,
        false_rejects: nb,
    });
    Ok(crossing(&points, nb, ns))
}
