use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use realfft::{RealFftPlanner, RealToComplex};

use super::config::FrontEndConfig;
use crate::error::{Error, Result};

const LOG_FLOOR: f32 = 1e-5;

/// Framed log-magnitude spectrogram: Hann window of `win_length` samples,
/// zero-padded to `n_fft`, hop `hop_length`, `ln(|X| + 1e-5)` per bin.
#[derive(Clone)]
pub struct Spectrogram {
    cfg: FrontEndConfig,
    window: Vec<f32>,
    fft: Arc<dyn RealToComplex<f32>>,
}

impl fmt::Debug for Spectrogram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Spectrogram").field("cfg", &self.cfg).finish()
    }
}

impl Spectrogram {
    pub fn new(cfg: &FrontEndConfig) -> Self {
        let window = (0..cfg.win_length)
            .map(|i| (0.5 - 0.5 * (2.0 * PI * i as f64 / cfg.win_length as f64).cos()) as f32)
            .collect();
        let fft = RealFftPlanner::<f32>::new().plan_fft_forward(cfg.n_fft);
        Self {
            cfg: cfg.clone(),
            window,
            fft,
        }
    }

    pub fn n_bins(&self) -> usize {
        self.cfg.n_bins()
    }

    /// Returns `(frames, data)` with `data` laid out `[frames, n_bins]`.
    pub fn compute(&self, samples: &[f32]) -> Result<(usize, Vec<f32>)> {
        if samples.is_empty() {
            return Err(Error::Input("empty waveform".into()));
        }
        let frames = self.cfg.frames(samples.len());
        if frames == 0 {
            return Err(Error::Input(format!(
                "waveform of {} samples is shorter than one {}-sample frame",
                samples.len(),
                self.cfg.win_length
            )));
        }
        let bins = self.n_bins();
        let mut input = self.fft.make_input_vec();
        let mut spectrum = self.fft.make_output_vec();
        let mut scratch = self.fft.make_scratch_vec();
        let mut out = Vec::with_capacity(frames * bins);
        for f in 0..frames {
            let start = f * self.cfg.hop_length;
            input.fill(0.0);
            for (dst, (s, w)) in input
                .iter_mut()
                .zip(samples[start..start + self.cfg.win_length].iter().zip(&self.window))
            {
                *dst = s * w;
            }
            self.fft
                .process_with_scratch(&mut input, &mut spectrum, &mut scratch)
                .expect("buffers sized by the planner");
            out.extend(spectrum.iter().map(|c| (c.norm() + LOG_FLOOR).ln()));
        }
        Ok((frames, out))
    }
}
