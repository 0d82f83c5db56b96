use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Label, Utterance, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Repeat-pads (cyclic concatenation) or head-truncates `samples` to
/// exactly `n`.
pub fn fix_length(samples: &[f32], n: usize) -> Result<Vec<f32>> {
    if samples.is_empty() {
        return Err(Error::Input("cannot fix the length of an empty signal".into()));
    }
    if n == 0 {
        return Err(Error::Input("target length must be positive".into()));
    }
    Ok(samples.iter().copied().cycle().take(n).collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PadMode {
    #[default]
    Repeat,
    Zero,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CropMode {
    #[default]
    Head,
    Random,
}

/// [`fix_length`] with the ablation switches: zero padding instead of
/// repetition, and a random crop offset instead of the head.
pub fn fit_length<R: Rng>(samples: &[f32], n: usize, pad: PadMode, crop: CropMode, rng: &mut R) -> Result<Vec<f32>> {
    if samples.is_empty() {
        return Err(Error::Input("cannot fix the length of an empty signal".into()));
    }
    if samples.len() > n && crop == CropMode::Random {
        let start = rng.gen_range(0..=samples.len() - n);
        return Ok(samples[start..start + n].to_vec());
    }
    match pad {
        PadMode::Repeat => fix_length(samples, n),
        PadMode::Zero => {
            let mut out: Vec<f32> = samples.iter().copied().take(n).collect();
            out.resize(n, 0.0);
            Ok(out)
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChunkMode {
    #[default]
    Fixed,
    Dcs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChunkPolicy {
    pub mode: ChunkMode,
    pub fixed_len: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub seed: u64,
    pub pad: PadMode,
    pub crop: CropMode,
}

impl Default for ChunkPolicy {
    fn default() -> Self {
        Self {
            mode: ChunkMode::Fixed,
            fixed_len: 64_600,
            n_min: 16_000,
            n_max: 96_000,
            seed: 0,
            pad: PadMode::Repeat,
            crop: CropMode::Head,
        }
    }
}

impl ChunkPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.fixed_len == 0 {
            return Err(Error::Config("chunk.fixed_len must be positive".into()));
        }
        if self.n_min == 0 || self.n_min > self.n_max {
            return Err(Error::Config(format!(
                "chunk bounds need 0 < n_min <= n_max, got [{}, {}]",
                self.n_min, self.n_max
            )));
        }
        Ok(())
    }
}

const CROP_STREAM_OFFSET: u64 = 1 << 40;

fn batch_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One uniform draw from the inclusive integer interval `[n_min, n_max]`.
pub fn dcs_sample_chunk_size<R: Rng>(policy: &ChunkPolicy, rng: &mut R) -> Result<usize> {
    if policy.mode != ChunkMode::Dcs {
        return Err(Error::Contract("chunk size draws need a dcs policy".into()));
    }
    policy.validate()?;
    Ok(rng.gen_range(policy.n_min..=policy.n_max))
}

/// Chunk length of batch `k`: `fixed_len`, or a DCS draw that depends only
/// on `(policy.seed, k)`, so worker scheduling cannot change it.
pub fn chunk_size_for_batch(policy: &ChunkPolicy, batch_index: u64) -> Result<usize> {
    match policy.mode {
        ChunkMode::Fixed => {
            policy.validate()?;
            Ok(policy.fixed_len)
        }
        ChunkMode::Dcs => dcs_sample_chunk_size(policy, &mut batch_rng(policy.seed, batch_index)),
    }
}

/// Equal-length rows cut from a group of utterances.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// `[batch, chunk_len]`.
    pub data: Tensor<f32>,
    pub labels: Vec<Label>,
    pub ids: Vec<String>,
    /// Durations in seconds before chunking.
    pub source_durations: Vec<f64>,
    pub chunk_len: usize,
    pub sample_rate: u32,
}

impl Batch {
    pub fn rows(&self) -> Vec<&[f32]> {
        self.data.data().chunks(self.chunk_len).collect()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Chunk duration `N / sr` shared by every row, in seconds.
    pub fn duration_s(&self) -> f64 {
        self.chunk_len as f64 / self.sample_rate as f64
    }
}

/// Cuts every utterance to the batch's single chunk length.
pub fn make_batch(utterances: &[&Utterance], policy: &ChunkPolicy, batch_index: u64) -> Result<Batch> {
    if utterances.is_empty() {
        return Err(Error::Input("cannot build an empty batch".into()));
    }
    let n = chunk_size_for_batch(policy, batch_index)?;
    let mut crop_rng = batch_rng(policy.seed, CROP_STREAM_OFFSET + batch_index);
    let mut data = Vec::with_capacity(n * utterances.len());
    for u in utterances {
        if u.sample_rate != SAMPLE_RATE {
            return Err(Error::Input(format!(
                "utterance `{}` has sample rate {}, expected {SAMPLE_RATE}",
                u.id, u.sample_rate
            )));
        }
        data.extend(fit_length(&u.samples, n, policy.pad, policy.crop, &mut crop_rng)?);
    }
    Ok(Batch {
        data: Tensor::new(vec![utterances.len(), n], data)?,
        labels: utterances.iter().map(|u| u.label).collect(),
        ids: utterances.iter().map(|u| u.id.clone()).collect(),
        source_durations: utterances.iter().map(|u| u.duration_s()).collect(),
        chunk_len: n,
        sample_rate: SAMPLE_RATE,
    })
}
