//! AM-Softmax with a duration-dependent margin, and the class-weighted
//! cross-entropy baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Scalar, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AMSoftmaxConfig {
    pub scale: f64,
    pub num_classes: usize,
}

impl Default for AMSoftmaxConfig {
    fn default() -> Self {
        Self {
            scale: 15.0,
            num_classes: 2,
        }
    }
}

impl AMSoftmaxConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::Config(format!("am-softmax scale must be positive, got {}", self.scale)));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("am-softmax needs at least two classes".into()));
        }
        Ok(())
    }
}

/// `margin = a · duration + b`, clamped to `[m_min, m_max]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarginSchedule {
    pub a: f64,
    pub b: f64,
    pub m_min: f64,
    pub m_max: f64,
    pub d_min: f64,
    pub d_max: f64,
    pub sample_rate: u32,
}

impl Default for MarginSchedule {
    /// 0.2 at 1 s rising to 0.5 at 6 s.
    fn default() -> Self {
        Self {
            a: 3.0 / 50.0,
            b: 7.0 / 50.0,
            m_min: 0.2,
            m_max: 0.5,
            d_min: 1.0,
            d_max: 6.0,
            sample_rate: 16_000,
        }
    }
}

impl MarginSchedule {
    pub fn validate(&self) -> Result<()> {
        let vals = [self.a, self.b, self.m_min, self.m_max, self.d_min, self.d_max];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("margin schedule values must be finite".into()));
        }
        if !(0.0 <= self.m_min && self.m_min <= self.m_max && self.m_max < 1.0) {
            return Err(Error::Config("margin range must satisfy 0 <= m_min <= m_max < 1".into()));
        }
        if !(0.0 < self.d_min && self.d_min < self.d_max) || self.sample_rate == 0 {
            return Err(Error::Config("duration range must satisfy 0 < d_min < d_max".into()));
        }
        let lo = self.a * self.d_min + self.b;
        let hi = self.a * self.d_max + self.b;
        if (lo - self.m_min).abs() > 1e-9 || (hi - self.m_max).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "margin endpoints disagree with the line: {lo} at {} s vs m_min {}, {hi} at {} s vs m_max {}",
                self.d_min, self.m_min, self.d_max, self.m_max
            )));
        }
        Ok(())
    }

    pub fn duration_of(&self, samples: usize) -> f64 {
        samples as f64 / self.sample_rate as f64
    }
}

pub fn margin_for_duration(duration_s: f64, sched: &MarginSchedule) -> f64 {
    (sched.a * duration_s + sched.b).clamp(sched.m_min, sched.m_max)
}

/// Cosine logits `[n, c]`: rows of `embeddings [n, D]` against columns of
/// `weights [D, c]`, both unit-normalized.
pub fn cosine_logits<T: Scalar>(g: &mut Graph<T>, embeddings: Var, weights: Var) -> Result<Var> {
    let f = g.l2_normalize(embeddings, 1)?;
    let w = g.l2_normalize(weights, 0)?;
    g.matmul(f, w)
}

/// Mean AM-Softmax loss: the target cosine is reduced by `margin`, every
/// logit is multiplied by `cfg.scale`, then softmax cross-entropy.
pub fn am_softmax_loss<T: Scalar>(
    g: &mut Graph<T>,
    embeddings: Var,
    labels: &[usize],
    weights: Var,
    cfg: &AMSoftmaxConfig,
    margin: f64,
) -> Result<Var> {
    cfg.validate()?;
    if !(0.0..1.0).contains(&margin) {
        return Err(Error::Config(format!("margin {margin} outside [0, 1)")));
    }
    let ws = g.shape(weights);
    if ws.len() != 2 || ws[1] != cfg.num_classes {
        return Err(Error::dim("am_softmax_loss", ws, &[cfg.num_classes]));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= cfg.num_classes) {
        return Err(Error::Input(format!("label {bad} outside [0, {})", cfg.num_classes)));
    }
    let cos = cosine_logits(g, embeddings, weights)?;
    let logits = g.additive_margin(cos, labels, T::lit(margin), T::lit(cfg.scale))?;
    g.softmax_cross_entropy(logits, labels, None)
}

/// Per-class weighted mean cross-entropy, normalized by the sum of the
/// weights of the labels present in the batch.
pub fn weighted_ce_loss<T: Scalar>(g: &mut Graph<T>, logits: Var, labels: &[usize], class_weights: &[f64]) -> Result<Var> {
    if class_weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::Config("class weights must be positive".into()));
    }
    let w: Vec<T> = class_weights.iter().map(|&v| T::lit(v)).collect();
    g.softmax_cross_entropy(logits, labels, Some(&w))
}

#[cfg(test)]
mod tests;
