//! Mini-batch training with per-batch chunk lengths and margins.

use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{fix_length, make_batch, ChunkPolicy, Utterance};
use crate::error::{Error, Result};
use crate::eval::{compute_eer_fast, Scorer, ScoreEntry};
use crate::model::Detector;
use crate::tensor::{write_checkpoint, Adam, BatchNormMode, Graph, ParamSet};

pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const TRAIN_LOG: &str = "train_log.jsonl";

/// One line of the training log. Deliberately free of timings so that two
/// runs with the same seed write identical logs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: Option<f64>,
    pub dev_eer: Option<f64>,
    pub margin_min: f64,
    pub margin_mean: f64,
    pub margin_max: f64,
    pub chunk_min: usize,
    pub chunk_mean: f64,
    pub chunk_max: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Lowest dev loss, or the last epoch when there is no dev set.
    pub best: ParamSet<f32>,
    pub best_epoch: usize,
    pub last: ParamSet<f32>,
    pub history: Vec<EpochRecord>,
}

/// Chunk policy with its seed tied to the run seed.
pub fn training_policy(cfg: &RunConfig) -> ChunkPolicy {
    ChunkPolicy {
        seed: cfg.seed,
        ..cfg.chunk.clone()
    }
}

pub fn detector(cfg: &RunConfig) -> Result<Detector> {
    Detector::new(cfg.encoder.clone(), cfg.loss.clone())
}

/// Trains from scratch. `on_epoch` sees each record as soon as it exists.
pub fn train(
    cfg: &RunConfig,
    train_set: &[Utterance],
    dev_set: &[Utterance],
    mut on_epoch: impl FnMut(&EpochRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    let model = detector(cfg)?;
    let policy = training_policy(cfg);
    let mut params = model.init_params::<f32>(cfg.seed);
    let mut adam = Adam::new(cfg.optim.adam());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut shuffle = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle.set_stream(1 << 41);

    let mut history = Vec::with_capacity(cfg.optim.epochs);
    let mut best: Option<(f64, usize, ParamSet<f32>)> = None;
    let mut batch_index: u64 = 0;
    for epoch in 1..=cfg.optim.epochs {
        order.shuffle(&mut shuffle);
        let mut loss_sum = 0.0;
        let mut margins = Vec::new();
        let mut chunks = Vec::new();
        for (b, idx) in order.chunks(cfg.optim.batch_size).enumerate() {
            let utts: Vec<&Utterance> = idx.iter().map(|&i| &train_set[i]).collect();
            let batch = make_batch(&utts, &policy, batch_index)?;
            let margin = cfg.loss.margin_for_chunk(batch.chunk_len);
            let mut g = Graph::new();
            let loss = {
                let mut ctx = crate::encoder::Ctx::new(&mut g, &mut params, BatchNormMode::Train);
                model.loss(&mut ctx, &batch.rows(), &batch.labels, margin)?
            };
            let value = g.value(loss).data()[0] as f64;
            if !value.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    batch_index,
                    batch_seed: policy.seed,
                    detail: format!("loss {value} at chunk length {} and margin {margin}", batch.chunk_len),
                });
            }
            g.backward(loss)?;
            adam.step(&mut params, &g.param_grads())?;
            loss_sum += value;
            margins.push(margin);
            chunks.push(batch.chunk_len);
            batch_index += 1;
        }
        let (dev_loss, dev_eer) = if dev_set.is_empty() {
            (None, None)
        } else {
            let (l, e) = dev_metrics(&model, &mut params, dev_set, cfg)?;
            (Some(l), e)
        };
        let n = margins.len() as f64;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / n,
            dev_loss,
            dev_eer,
            margin_min: margins.iter().copied().fold(f64::INFINITY, f64::min),
            margin_mean: margins.iter().sum::<f64>() / n,
            margin_max: margins.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            chunk_min: *chunks.iter().min().unwrap(),
            chunk_mean: chunks.iter().sum::<usize>() as f64 / n,
            chunk_max: *chunks.iter().max().unwrap(),
        };
        on_epoch(&record)?;
        let key = dev_loss.unwrap_or(f64::NEG_INFINITY);
        if best.as_ref().map_or(true, |(l, _, _)| key < *l || dev_loss.is_none()) {
            best = Some((key, epoch, params.clone()));
        }
        history.push(record);
    }
    let (_, best_epoch, best) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best,
        best_epoch,
        last: params,
        history,
    })
}

/// Dev loss and EER on fixed-length chunks, eval-mode batch norm. The
/// margin is the one a training batch of that length would get.
pub fn dev_metrics(
    model: &Detector,
    params: &mut ParamSet<f32>,
    dev_set: &[Utterance],
    cfg: &RunConfig,
) -> Result<(f64, Option<f64>)> {
    let n = cfg.eval.dev_len;
    let margin = cfg.loss.margin_for_chunk(n);
    let mut loss_sum = 0.0;
    let mut entries = Vec::with_capacity(dev_set.len());
    for group in dev_set.chunks(cfg.eval.batch_size) {
        let waves = group.iter().map(|u| fix_length(&u.samples, n)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&[f32]> = waves.iter().map(Vec::as_slice).collect();
        let labels: Vec<_> = group.iter().map(|u| u.label).collect();
        let mut g = Graph::new();
        let loss = {
            let mut ctx = crate::encoder::Ctx::new(&mut g, params, BatchNormMode::Eval);
            model.loss(&mut ctx, &refs, &labels, margin)?
        };
        loss_sum += g.value(loss).data()[0] as f64 * group.len() as f64;
        let scores = model.scorer(params).score_batch(&refs)?;
        entries.extend(group.iter().zip(scores).map(|(u, s)| ScoreEntry::new(u.id.clone(), s, u.label)));
    }
    let eer = match compute_eer_fast(&entries) {
        Ok(e) => Some(e.eer),
        Err(Error::UndefinedMetric(_)) => None,
        Err(e) => return Err(e),
    };
    Ok((loss_sum / dev_set.len() as f64, eer))
}

/// Appends one JSON line per record.
pub fn append_log(path: &Path, record: &EpochRecord) -> Result<()> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let line = serde_json::to_string(record).expect("record serializes");
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

/// Writes `best.ckpt` and `last.ckpt`; both carry the run config as JSON.
pub fn save_outcome(dir: &Path, cfg: &RunConfig, outcome: &TrainOutcome) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = serde_json::to_string(cfg).expect("config serializes");
    write_checkpoint(&dir.join(BEST_CHECKPOINT), &outcome.best, &meta)?;
    write_checkpoint(&dir.join(LAST_CHECKPOINT), &outcome.last, &meta)
}

/// Reads a checkpoint written by [`save_outcome`] with its config.
pub fn load_trained(path: &Path) -> Result<(RunConfig, ParamSet<f32>)> {
    let (params, meta) = crate::tensor::read_checkpoint::<f32>(path)?;
    let cfg: RunConfig = serde_json::from_str(&meta)
        .map_err(|e| Error::Checkpoint(format!("{}: config metadata: {e}", path.display())))?;
    Ok((cfg, params))
}
