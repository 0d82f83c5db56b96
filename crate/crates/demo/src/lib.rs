//! Browser bindings for three small views of the library: the
//! duration-adaptive margin, EER over two score distributions, and how
//! utterances are cut or padded into training chunks.

use aasist2::data::{chunk_size_for_batch, fit_length, ChunkMode, ChunkPolicy, CropMode, Label, PadMode};
use aasist2::eval::{compute_eer_fast, ScoreEntry};
use aasist2::losses::{margin_for_duration, MarginSchedule};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// Plain-Rust versions of the exports, callable off the browser.
pub mod views {
    use super::*;
    use aasist2::{Error, Result};

    pub fn gaussian_scores(n: usize, separation: f64, spread: f64, seed: u64) -> Result<Vec<f64>> {
        if !(spread.is_finite() && spread > 0.0) {
            return Err(Error::Input("spread must be positive".into()));
        }
        let bad = |e: rand_distr::NormalError| Error::Input(e.to_string());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bona = Normal::new(separation / 2.0, spread).map_err(bad)?;
        let spoof = Normal::new(-separation / 2.0, spread).map_err(bad)?;
        let mut out: Vec<f64> = (0..n).map(|_| bona.sample(&mut rng)).collect();
        out.extend((0..n).map(|_| spoof.sample(&mut rng)));
        Ok(out)
    }

    pub fn eer(bonafide: &[f64], spoof: &[f64]) -> Result<Vec<f64>> {
        let entries: Vec<ScoreEntry> = bonafide
            .iter()
            .map(|&s| ScoreEntry::new("b", s, Label::Bonafide))
            .chain(spoof.iter().map(|&s| ScoreEntry::new("s", s, Label::Spoof)))
            .collect();
        let e = compute_eer_fast(&entries)?;
        Ok(vec![e.eer, e.threshold])
    }

    pub fn chunk_map(source_len: usize, target: usize, zero_pad: bool, points: usize) -> Result<Vec<f64>> {
        let src: Vec<f32> = (1..=source_len).map(|i| i as f32).collect();
        let pad = if zero_pad { PadMode::Zero } else { PadMode::Repeat };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = fit_length(&src, target, pad, CropMode::Head, &mut rng)?;
        let points = points.clamp(1, target.max(1));
        Ok((0..points)
            .map(|i| {
                let v = y[i * target / points];
                if v == 0.0 {
                    -1.0
                } else {
                    (v as f64 - 1.0) / source_len as f64
                }
            })
            .collect())
    }

    pub fn dcs_chunk_sizes(seed: u64, n_min: usize, n_max: usize, batches: u32) -> Result<Vec<f64>> {
        let policy = ChunkPolicy {
            mode: ChunkMode::Dcs,
            n_min,
            n_max,
            seed,
            ..ChunkPolicy::default()
        };
        (0..batches as u64)
            .map(|k| chunk_size_for_batch(&policy, k).map(|n| n as f64))
            .collect()
    }
}

/// `[d0, m0, d1, m1, ...]` for `points` durations evenly spaced over
/// `[0, max_s]`.
#[wasm_bindgen]
pub fn margin_curve(a: f64, b: f64, m_min: f64, m_max: f64, max_s: f64, points: usize) -> Vec<f64> {
    let sched = MarginSchedule {
        a,
        b,
        m_min,
        m_max,
        ..MarginSchedule::default()
    };
    let points = points.max(2);
    (0..points)
        .flat_map(|i| {
            let d = max_s * i as f64 / (points - 1) as f64;
            [d, margin_for_duration(d, &sched)]
        })
        .collect()
}

/// `n` bonafide scores then `n` spoof scores: Gaussians with standard
/// deviation `spread` whose means are `separation` apart.
#[wasm_bindgen]
pub fn gaussian_scores(n: usize, separation: f64, spread: f64, seed: u64) -> Result<Vec<f64>, JsError> {
    views::gaussian_scores(n, separation, spread, seed).map_err(js_err)
}

/// `[eer, threshold]`.
#[wasm_bindgen]
pub fn eer(bonafide: &[f64], spoof: &[f64]) -> Result<Vec<f64>, JsError> {
    views::eer(bonafide, spoof).map_err(js_err)
}

/// For each of `points` output positions of a `target`-sample chunk, the
/// source sample it came from as a fraction of the source length, or -1
/// for zero padding.
#[wasm_bindgen]
pub fn chunk_map(source_len: usize, target: usize, zero_pad: bool, points: usize) -> Result<Vec<f64>, JsError> {
    views::chunk_map(source_len, target, zero_pad, points).map_err(js_err)
}

/// Chunk lengths the dynamic sampler assigns to batches `0..batches`.
#[wasm_bindgen]
pub fn dcs_chunk_sizes(seed: u64, n_min: usize, n_max: usize, batches: u32) -> Result<Vec<f64>, JsError> {
    views::dcs_chunk_sizes(seed, n_min, n_max, batches).map_err(js_err)
}
