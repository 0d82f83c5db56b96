use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrontEndConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub win_length: usize,
    pub hop_length: usize,
    /// Output channels `C0` of the learned projection.
    pub channels: usize,
    /// Projected frequency bands `F` per channel.
    pub bands: usize,
    /// Max-pool window (time, frequency) applied after the projection.
    pub pool: [usize; 2],
}

impl Default for FrontEndConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            n_fft: 512,
            win_length: 400,
            hop_length: 160,
            channels: 32,
            bands: 16,
            pool: [1, 1],
        }
    }
}

impl FrontEndConfig {
    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn projection_width(&self) -> usize {
        self.channels * self.bands
    }

    /// Frames produced for `samples` input samples (0 when shorter than one
    /// window).
    pub fn frames(&self, samples: usize) -> usize {
        if samples < self.win_length {
            0
        } else {
            (samples - self.win_length) / self.hop_length + 1
        }
    }
}

/// Shape of a Res2Net block's hierarchical split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Res2NetShape {
    pub scale: usize,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `None` marks a plain residual block.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub res2net: Option<Res2NetShape>,
    /// Max-pool window (time, frequency) closing the block.
    pub pool: [usize; 2],
}

impl BlockConfig {
    pub fn plain(in_channels: usize, out_channels: usize, pool: [usize; 2]) -> Self {
        Self {
            in_channels,
            out_channels,
            res2net: None,
            pool,
        }
    }

    pub fn res2net(in_channels: usize, out_channels: usize, scale: usize, width: usize, pool: [usize; 2]) -> Self {
        Self {
            in_channels,
            out_channels,
            res2net: Some(Res2NetShape { scale, width }),
            pool,
        }
    }

    pub fn has_projected_skip(&self) -> bool {
        self.in_channels != self.out_channels
    }

    /// Trainable scalars of this block with SE reduction ratio `r`.
    pub fn param_count(&self, se_reduction: usize) -> usize {
        let (ci, co) = (self.in_channels, self.out_channels);
        let skip = if self.has_projected_skip() { ci * co } else { 0 };
        match self.res2net {
            None => ci * co * 9 + 2 * co + co * co * 9 + 2 * co + skip,
            Some(Res2NetShape { scale, width }) => {
                let inner = scale * width;
                let entry = ci * inner + 2 * inner;
                let filters = (scale - 1) * (width * width * 9 + 2 * width);
                let exit = inner * co + 2 * co;
                let se = SELayerConfig::new(co, se_reduction);
                entry + filters + exit + se.param_count() + skip
            }
        }
    }
}

/// Full view of one Res2Net block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Res2NetBlockConfig {
    pub scale: usize,
    pub width: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Res2NetBlockConfig {
    pub fn inner_channels(&self) -> usize {
        self.scale * self.width
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SELayerConfig {
    pub channels: usize,
    pub reduction: usize,
}

impl SELayerConfig {
    pub fn new(channels: usize, reduction: usize) -> Self {
        Self { channels, reduction }
    }

    pub fn bottleneck(&self) -> usize {
        (self.channels / self.reduction.max(1)).max(1)
    }

    pub fn param_count(&self) -> usize {
        let b = self.bottleneck();
        self.channels * b + b + b * self.channels + self.channels
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub front_end: FrontEndConfig,
    pub blocks: Vec<BlockConfig>,
    pub se_reduction: usize,
}

impl EncoderConfig {
    /// Six blocks, block 1 plain, channels (32→32, 32→32, 32→64, 64→64,
    /// 64→112, 112→112), Res2Net scale 8 and width 14.
    pub fn full() -> Self {
        let r2 = |i, o, pool| BlockConfig::res2net(i, o, 8, 14, pool);
        Self {
            front_end: FrontEndConfig::default(),
            blocks: vec![
                BlockConfig::plain(32, 32, [2, 2]),
                r2(32, 32, [2, 2]),
                r2(32, 64, [2, 2]),
                r2(64, 64, [2, 1]),
                r2(64, 112, [2, 1]),
                r2(112, 112, [1, 1]),
            ],
            se_reduction: 8,
        }
    }

    /// Same six-block layout at a width a single CPU core trains in
    /// minutes.
    pub fn desk() -> Self {
        Self {
            front_end: FrontEndConfig {
                channels: 4,
                bands: 4,
                pool: [2, 1],
                ..FrontEndConfig::default()
            },
            blocks: vec![
                BlockConfig::plain(4, 8, [2, 1]),
                BlockConfig::res2net(8, 8, 4, 4, [2, 2]),
                BlockConfig::res2net(8, 16, 4, 4, [2, 1]),
                BlockConfig::res2net(16, 16, 4, 4, [2, 2]),
                BlockConfig::res2net(16, 16, 4, 4, [1, 1]),
                BlockConfig::res2net(16, 16, 4, 4, [1, 1]),
            ],
            se_reduction: 8,
        }
    }

    pub fn embedding_dim(&self) -> usize {
        2 * self.blocks.last().map_or(self.front_end.channels, |b| b.out_channels)
    }

    /// Structural checks: first block plain, the rest Res2Net, compatible
    /// channel plan, pools that fit the frequency axis.
    pub fn validate(&self) -> Result<()> {
        let fe = &self.front_end;
        if fe.sample_rate == 0 || fe.n_fft == 0 || fe.hop_length == 0 || fe.win_length == 0 {
            return Err(Error::Config("front_end sizes must be positive".into()));
        }
        if fe.win_length > fe.n_fft {
            return Err(Error::Config("front_end.win_length exceeds n_fft".into()));
        }
        if fe.channels == 0 || fe.bands == 0 {
            return Err(Error::Config("front_end.channels and bands must be positive".into()));
        }
        if self.se_reduction == 0 {
            return Err(Error::Config("se_reduction must be >= 1".into()));
        }
        let Some(first) = self.blocks.first() else {
            return Err(Error::Config("encoder needs at least one block".into()));
        };
        if first.res2net.is_some() {
            return Err(Error::Config("block 1 must be a plain residual block".into()));
        }
        let mut channels = fe.channels;
        let mut bands = fe.bands;
        for (i, pool) in std::iter::once(fe.pool).chain(self.blocks.iter().map(|b| b.pool)).enumerate() {
            if pool[0] == 0 || pool[1] == 0 {
                return Err(Error::Config(format!("pool window {i} has a zero extent")));
            }
        }
        bands /= fe.pool[1];
        for (i, b) in self.blocks.iter().enumerate() {
            let n = i + 1;
            if b.in_channels != channels {
                return Err(Error::Config(format!(
                    "block {n} expects {} input channels but receives {channels}",
                    b.in_channels
                )));
            }
            if b.out_channels == 0 {
                return Err(Error::Config(format!("block {n} has zero output channels")));
            }
            if i > 0 {
                match b.res2net {
                    None => return Err(Error::Config(format!("block {n} must be a Res2Net block"))),
                    Some(s) if s.scale == 0 || s.width == 0 => {
                        return Err(Error::Config(format!("block {n}: scale and width must be >= 1")))
                    }
                    _ => {}
                }
            }
            bands /= b.pool[1];
            if bands == 0 {
                return Err(Error::Config(format!("block {n} pools away the frequency axis")));
            }
            channels = b.out_channels;
        }
        Ok(())
    }

    /// [`validate`](Self::validate) plus the six-block layout.
    pub fn validate_six_block(&self) -> Result<()> {
        self.validate()?;
        if self.blocks.len() != 6 {
            return Err(Error::Config(format!("encoder needs exactly 6 blocks, got {}", self.blocks.len())));
        }
        Ok(())
    }

    /// Smallest frame count that survives every time-axis pooling stage.
    pub fn min_frames(&self) -> usize {
        let pools: Vec<usize> = std::iter::once(self.front_end.pool[0])
            .chain(self.blocks.iter().map(|b| b.pool[0]))
            .collect();
        let mut need = 1;
        for &p in pools.iter().rev() {
            need *= p;
        }
        need.max(1)
    }

    /// Waveform length below which inputs are repeat-padded before framing.
    pub fn min_samples(&self) -> usize {
        let fe = &self.front_end;
        (self.min_frames() - 1) * fe.hop_length + fe.win_length
    }
}
