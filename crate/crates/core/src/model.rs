//! Encoder plus classification head: AM-Softmax class vectors, or a
//! linear layer trained with weighted cross-entropy.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Label, BONAFIDE_CLASS, NUM_CLASSES};
use crate::encoder::{Ctx, Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::eval::Scorer;
use crate::losses::{am_softmax_loss, cosine_logits, weighted_ce_loss, AMSoftmaxConfig, MarginSchedule};
use crate::tensor::{BatchNormMode, Graph, ParamSet, Scalar, Tensor, Var};

pub const HEAD_WEIGHT: &str = "head.weight";
pub const HEAD_BIAS: &str = "head.bias";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    #[default]
    AmSoftmax,
    WeightedCe,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub kind: LossKind,
    pub am_softmax: AMSoftmaxConfig,
    /// Duration-adaptive margin; when off, `fixed_margin` is used for every
    /// batch.
    pub almft: bool,
    pub fixed_margin: f64,
    pub schedule: MarginSchedule,
    /// Per class, indexed spoof 0, bonafide 1.
    pub class_weights: [f64; 2],
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            kind: LossKind::AmSoftmax,
            am_softmax: AMSoftmaxConfig::default(),
            almft: true,
            fixed_margin: 0.2,
            schedule: MarginSchedule::default(),
            class_weights: [0.1, 0.9],
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        self.am_softmax.validate()?;
        if self.am_softmax.num_classes != NUM_CLASSES {
            return Err(Error::Config(format!(
                "detector heads are binary; num_classes must be {NUM_CLASSES}"
            )));
        }
        self.schedule.validate()?;
        if !(0.0..1.0).contains(&self.fixed_margin) {
            return Err(Error::Config("fixed_margin must lie in [0, 1)".into()));
        }
        if self.class_weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Config("class_weights must be positive".into()));
        }
        Ok(())
    }

    /// Margin applied to a batch whose rows are `chunk_len` samples long.
    pub fn margin_for_chunk(&self, chunk_len: usize) -> f64 {
        if self.almft {
            crate::losses::margin_for_duration(self.schedule.duration_of(chunk_len), &self.schedule)
        } else {
            self.fixed_margin
        }
    }
}

#[derive(Clone, Debug)]
pub struct Detector {
    pub encoder: Encoder,
    pub loss: LossConfig,
}

impl Detector {
    pub fn new(encoder: EncoderConfig, loss: LossConfig) -> Result<Self> {
        loss.validate()?;
        Ok(Self {
            encoder: Encoder::new(encoder)?,
            loss,
        })
    }

    pub fn init_params<T: Scalar>(&self, seed: u64) -> ParamSet<T> {
        let mut p = self.encoder.init_params(seed);
        let d = self.encoder.embedding_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4845_4144);
        match self.loss.kind {
            LossKind::AmSoftmax => {
                p.insert(HEAD_WEIGHT, crate::encoder::normal_tensor(vec![d, NUM_CLASSES], 1.0, &mut rng));
            }
            LossKind::WeightedCe => {
                let std = (1.0 / d as f64).sqrt();
                p.insert(HEAD_WEIGHT, crate::encoder::normal_tensor(vec![NUM_CLASSES, d], std, &mut rng));
                p.insert(HEAD_BIAS, Tensor::zeros(vec![NUM_CLASSES]));
            }
        }
        p
    }

    /// Class logits `[n, 2]`: cosines for AM-Softmax (before margin and
    /// scale), affine outputs for the cross-entropy head.
    pub fn logits<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, waves: &[&[f32]]) -> Result<Var> {
        let e = self.encoder.forward(ctx, waves)?;
        self.head(ctx, e)
    }

    fn head<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, e: Var) -> Result<Var> {
        match self.loss.kind {
            LossKind::AmSoftmax => {
                let w = ctx.p(HEAD_WEIGHT)?;
                cosine_logits(ctx.g, e, w)
            }
            LossKind::WeightedCe => ctx.linear(e, "head"),
        }
    }

    /// Training loss of one equal-length batch.
    pub fn loss<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, waves: &[&[f32]], labels: &[Label], margin: f64) -> Result<Var> {
        let classes = class_indices(labels)?;
        let e = self.encoder.forward(ctx, waves)?;
        match self.loss.kind {
            LossKind::AmSoftmax => {
                let w = ctx.p(HEAD_WEIGHT)?;
                am_softmax_loss(ctx.g, e, &classes, w, &self.loss.am_softmax, margin)
            }
            LossKind::WeightedCe => {
                let z = ctx.linear(e, "head")?;
                weighted_ce_loss(ctx.g, z, &classes, &self.loss.class_weights)
            }
        }
    }

    /// Bonafide scores in eval mode: the bonafide cosine for AM-Softmax, the
    /// bonafide-minus-spoof logit for the cross-entropy head.
    pub fn score<T: Scalar>(&self, params: &mut ParamSet<T>, waves: &[&[f32]]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g, params, BatchNormMode::Eval);
        let z = self.logits(&mut ctx, waves)?;
        let z = g.value(z).data();
        Ok(z.chunks(NUM_CLASSES)
            .map(|row| match self.loss.kind {
                LossKind::AmSoftmax => row[BONAFIDE_CLASS].to_f64_lossy(),
                LossKind::WeightedCe => (row[BONAFIDE_CLASS] - row[1 - BONAFIDE_CLASS]).to_f64_lossy(),
            })
            .collect())
    }

    pub fn scorer<'a, T: Scalar>(&'a self, params: &'a mut ParamSet<T>) -> DetectorScorer<'a, T> {
        DetectorScorer { model: self, params }
    }
}

pub fn class_indices(labels: &[Label]) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|l| l.class_index().ok_or_else(|| Error::Input("training utterance without a label".into())))
        .collect()
}

pub struct DetectorScorer<'a, T: Scalar> {
    model: &'a Detector,
    params: &'a mut ParamSet<T>,
}

impl<T: Scalar> Scorer for DetectorScorer<'_, T> {
    fn score_batch(&mut self, waves: &[&[f32]]) -> Result<Vec<f64>> {
        self.model.score(self.params, waves)
    }
}
