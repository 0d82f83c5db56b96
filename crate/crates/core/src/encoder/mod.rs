//! Spectral front-end, one plain residual block, Res2Net blocks with
//! squeeze-and-excitation, and global average+max pooling to a fixed-width
//! embedding.

mod blocks;
mod config;
mod frontend;

use std::borrow::Cow;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) use blocks::{init_block, init_se, normal_tensor};
pub use blocks::{res2net_forward, res2net_groups, residual_forward, se_forward, Ctx};
pub use config::{BlockConfig, EncoderConfig, FrontEndConfig, Res2NetBlockConfig, Res2NetShape, SELayerConfig};
pub use frontend::Spectrogram;

use crate::data::fix_length;
use crate::error::{Error, Result};
use crate::tensor::{ParamSet, Scalar, Tensor, Var};

#[derive(Clone, Debug)]
pub struct Encoder {
    cfg: EncoderConfig,
    spectrogram: Spectrogram,
}

impl Encoder {
    pub fn new(cfg: EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let spectrogram = Spectrogram::new(&cfg.front_end);
        Ok(Self { cfg, spectrogram })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn embedding_dim(&self) -> usize {
        self.cfg.embedding_dim()
    }

    pub fn spectrogram(&self) -> &Spectrogram {
        &self.spectrogram
    }

    pub fn init_params<T: Scalar>(&self, seed: u64) -> ParamSet<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let fe = &self.cfg.front_end;
        blocks::init_linear(&mut p, "frontend.proj", fe.projection_width(), fe.n_bins(), &mut rng);
        blocks::init_bn(&mut p, "frontend.bn", fe.channels);
        for (i, b) in self.cfg.blocks.iter().enumerate() {
            blocks::init_block(&mut p, &block_prefix(i), b, self.cfg.se_reduction, &mut rng);
        }
        p
    }

    /// Repeat-pads waveforms too short to survive the pooling stack.
    fn prepare<'w>(&self, wave: &'w [f32]) -> Result<Cow<'w, [f32]>> {
        let fe = &self.cfg.front_end;
        if wave.is_empty() {
            return Err(Error::Input("empty waveform".into()));
        }
        if wave.len() < fe.win_length {
            return Err(Error::Input(format!(
                "waveform of {} samples is shorter than one {}-sample frame",
                wave.len(),
                fe.win_length
            )));
        }
        let min = self.cfg.min_samples();
        if wave.len() < min {
            Ok(Cow::Owned(fix_length(wave, min)?))
        } else {
            Ok(Cow::Borrowed(wave))
        }
    }

    /// Log spectrograms of equal-length waveforms as `[N, frames, bins]`.
    pub fn spectrogram_batch<T: Scalar>(&self, waves: &[&[f32]]) -> Result<Tensor<T>> {
        let first = waves.first().ok_or_else(|| Error::Input("empty batch".into()))?;
        let len = first.len();
        if waves.iter().any(|w| w.len() != len) {
            return Err(Error::Input("waveforms in one batch must share a length".into()));
        }
        let mut data = Vec::new();
        let mut frames = 0;
        for w in waves {
            let w = self.prepare(w)?;
            let (f, spec) = self.spectrogram.compute(&w)?;
            frames = f;
            data.extend(spec.into_iter().map(|v| T::lit(v as f64)));
        }
        Tensor::new(vec![waves.len(), frames, self.spectrogram.n_bins()], data)
    }

    /// Learned projection of `[N, frames, bins]` spectrogram features to
    /// `[N, C0, frames, F]`, then batch norm, SeLU and the front-end pool.
    pub fn front_end_features<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, spec: Tensor<T>) -> Result<Var> {
        let x = ctx.g.input(spec);
        self.project(ctx, x)
    }

    /// [`front_end_features`](Self::front_end_features) on a graph node.
    pub fn project<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, spec: Var) -> Result<Var> {
        let fe = &self.cfg.front_end;
        let s = ctx.g.shape(spec).to_vec();
        if s.len() != 3 || s[2] != fe.n_bins() {
            return Err(Error::dim("front_end", &s, &[fe.n_bins()]));
        }
        let (n, frames) = (s[0], s[1]);
        let x = ctx.g.reshape(spec, &[n * frames, s[2]])?;
        let h = ctx.linear(x, "frontend.proj")?;
        let h = ctx.g.reshape(h, &[n, frames, fe.channels, fe.bands])?;
        let h = ctx.g.permute(h, &[0, 2, 1, 3])?;
        let h = ctx.bn(h, "frontend.bn")?;
        let h = ctx.g.selu(h)?;
        if fe.pool == [1, 1] {
            return Ok(h);
        }
        let w = (fe.pool[0], fe.pool[1]);
        ctx.g.max_pool2d(h, w, w)
    }

    pub fn front_end<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, waves: &[&[f32]]) -> Result<Var> {
        let spec = self.spectrogram_batch(waves)?;
        self.front_end_features(ctx, spec)
    }

    /// Block stack and pooling head on front-end output.
    pub fn forward_from_front<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, mut h: Var) -> Result<Var> {
        for (i, b) in self.cfg.blocks.iter().enumerate() {
            let prefix = block_prefix(i);
            h = match b.res2net {
                None => residual_forward(ctx, h, b, &prefix)?,
                Some(_) => res2net_forward(ctx, h, b, &prefix)?,
            };
        }
        let avg = ctx.g.global_avg_pool(h)?;
        let max = ctx.g.global_max_pool(h)?;
        ctx.g.concat(&[avg, max])
    }

    /// Embeddings `[N, D]` for a batch of equal-length waveforms.
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, waves: &[&[f32]]) -> Result<Var> {
        let h = self.front_end(ctx, waves)?;
        self.forward_from_front(ctx, h)
    }

    pub fn forward_features<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, spec: Tensor<T>) -> Result<Var> {
        let h = self.front_end_features(ctx, spec)?;
        self.forward_from_front(ctx, h)
    }
}

pub fn block_prefix(index: usize) -> String {
    format!("block{}", index + 1)
}

#[cfg(test)]
mod tests;
