//! Seeded synthetic bonafide/spoof corpus.
//!
//! Bonafide utterances are harmonic "vowels": a pitch track with vibrato
//! and slow drift drives up to 4.5 kHz of harmonics shaped by three
//! formant resonances, a syllabic amplitude envelope, and white noise at a
//! random SNR. Spoof utterances come from the same generator with three
//! independent, individually switchable artifacts:
//!
//! - **glitch bursts**: every `burst_interval_s` (± jitter, random first
//!   offset) a Hann-windowed burst of band-passed noise in `burst_hz`
//!   lands on the signal. Sparse in time, plain in a spectrogram: short
//!   excerpts often miss every burst.
//! - **phase jumps**: same timing scheme, but the fundamental phase jumps
//!   by a random angle. Nearly invisible to magnitude features; off by
//!   default.
//! - **spectral notch**: a band-pass component at a random centre in
//!   `notch_hz` is subtracted with weight `notch_depth`. A dense,
//!   stationary cue.
//! - **quantization**: output rounded to `quant_bits` bits (0 disables).
//!
//! Every utterance is rendered from its own 64-bit seed, so any subset of a
//! corpus can be regenerated independently.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{write_protocol, write_wav, Label, ProtocolEntry, Utterance, SAMPLE_RATE};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DurationDist {
    Uniform { min_s: f64, max_s: f64 },
    /// Piecewise uniform: bin `i` spans `[edges[i], edges[i+1])` and is
    /// chosen with probability proportional to `weights[i]`.
    Piecewise { edges: Vec<f64>, weights: Vec<f64> },
}

impl Default for DurationDist {
    fn default() -> Self {
        DurationDist::Piecewise {
            edges: vec![0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0],
            weights: vec![0.08, 0.16, 0.2, 0.18, 0.14, 0.12, 0.12],
        }
    }
}

/// Shortest duration that still yields one analysis frame.
const MIN_DURATION_S: f64 = 0.025;

impl DurationDist {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("duration distribution: {m}")));
        match self {
            DurationDist::Uniform { min_s, max_s } => {
                if !(min_s.is_finite() && max_s.is_finite() && *min_s >= MIN_DURATION_S && min_s <= max_s) {
                    return bad(&format!("need {MIN_DURATION_S} <= min_s <= max_s"));
                }
            }
            DurationDist::Piecewise { edges, weights } => {
                if edges.len() < 2 || weights.len() + 1 != edges.len() {
                    return bad("need len(edges) == len(weights) + 1 >= 2");
                }
                if edges[0] < MIN_DURATION_S || edges.windows(2).any(|w| !(w[0] < w[1])) || !edges[edges.len() - 1].is_finite() {
                    return bad("edges must be finite, increasing, and start at or after 0.025 s");
                }
                if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || weights.iter().sum::<f64>() <= 0.0 {
                    return bad("weights must be non-negative with a positive sum");
                }
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            DurationDist::Uniform { min_s, max_s } => {
                if min_s == max_s {
                    *min_s
                } else {
                    rng.gen_range(*min_s..*max_s)
                }
            }
            DurationDist::Piecewise { edges, weights } => {
                let total: f64 = weights.iter().sum();
                let mut u = rng.gen::<f64>() * total;
                let mut i = 0;
                while i + 1 < weights.len() && (u >= weights[i] || weights[i] == 0.0) {
                    u -= weights[i];
                    i += 1;
                }
                rng.gen_range(edges[i]..edges[i + 1])
            }
        }
    }

    /// Probability mass on `[a, b)`.
    pub fn probability(&self, a: f64, b: f64) -> f64 {
        let overlap = |lo: f64, hi: f64| (b.min(hi) - a.max(lo)).max(0.0);
        match self {
            DurationDist::Uniform { min_s, max_s } => {
                if min_s == max_s {
                    return if *min_s >= a && *min_s < b { 1.0 } else { 0.0 };
                }
                overlap(*min_s, *max_s) / (max_s - min_s)
            }
            DurationDist::Piecewise { edges, weights } => {
                let total: f64 = weights.iter().sum();
                edges
                    .windows(2)
                    .zip(weights)
                    .map(|(e, w)| w / total * overlap(e[0], e[1]) / (e[1] - e[0]))
                    .sum()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArtifactConfig {
    /// Mean spacing of glitch bursts; 0 disables them.
    pub burst_interval_s: f64,
    pub burst_jitter_s: f64,
    pub burst_ms: f64,
    pub burst_hz: [f64; 2],
    /// Burst RMS relative to the clean signal RMS.
    pub burst_level: f64,
    /// Mean spacing of phase jumps; 0 disables them.
    pub phase_jump_interval_s: f64,
    pub phase_jump_jitter_s: f64,
    /// Jump magnitude range in radians (sign is random).
    pub phase_jump_rad: [f64; 2],
    pub notch_hz: [f64; 2],
    pub notch_q: f64,
    /// 0 disables the notch, 1 removes the band entirely.
    pub notch_depth: f64,
    pub quant_bits: u32,
}

impl Default for ArtifactConfig {
    fn default() -> Self {
        Self {
            burst_interval_s: 1.5,
            burst_jitter_s: 0.3,
            burst_ms: 30.0,
            burst_hz: [5000.0, 7000.0],
            burst_level: 0.5,
            phase_jump_interval_s: 0.0,
            phase_jump_jitter_s: 0.0,
            phase_jump_rad: [1.5, 3.0],
            notch_hz: [2200.0, 3400.0],
            notch_q: 4.0,
            notch_depth: 0.5,
            quant_bits: 0,
        }
    }
}

impl ArtifactConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("artifacts: {m}")));
        if !(self.phase_jump_interval_s >= 0.0 && self.phase_jump_jitter_s >= 0.0) {
            return bad("phase jump interval and jitter must be non-negative");
        }
        if self.phase_jump_interval_s > 0.0 && self.phase_jump_jitter_s >= self.phase_jump_interval_s {
            return bad("phase jump jitter must be below the interval");
        }
        if !(self.phase_jump_rad[0] >= 0.0 && self.phase_jump_rad[0] <= self.phase_jump_rad[1]) {
            return bad("phase_jump_rad must be an ordered non-negative range");
        }
        let nyq = SAMPLE_RATE as f64 / 2.0;
        if !(self.burst_interval_s >= 0.0 && self.burst_jitter_s >= 0.0) {
            return bad("burst interval and jitter must be non-negative");
        }
        if self.burst_interval_s > 0.0 {
            if self.burst_jitter_s >= self.burst_interval_s {
                return bad("burst jitter must be below the interval");
            }
            if !(self.burst_ms > 0.0 && self.burst_level >= 0.0) {
                return bad("need burst_ms > 0 and burst_level >= 0");
            }
            if !(self.burst_hz[0] > 0.0 && self.burst_hz[0] <= self.burst_hz[1] && self.burst_hz[1] < nyq) {
                return bad("burst_hz must be an ordered range inside (0, 8000)");
            }
        }
        if !(self.notch_hz[0] > 0.0 && self.notch_hz[0] <= self.notch_hz[1] && self.notch_hz[1] < nyq) {
            return bad("notch_hz must be an ordered range inside (0, 8000)");
        }
        if !(self.notch_q > 0.0 && (0.0..=1.0).contains(&self.notch_depth)) {
            return bad("need notch_q > 0 and notch_depth in [0, 1]");
        }
        if self.quant_bits == 1 || self.quant_bits > 16 {
            return bad("quant_bits must be 0 (off) or in 2..=16");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub name: String,
    pub bonafide: usize,
    pub spoof: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub seed: u64,
    pub speakers: usize,
    pub snr_db: [f64; 2],
    pub duration: DurationDist,
    pub artifacts: ArtifactConfig,
    pub splits: Vec<SplitSpec>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            speakers: 24,
            snr_db: [15.0, 30.0],
            duration: DurationDist::default(),
            artifacts: ArtifactConfig::default(),
            splits: vec![
                SplitSpec {
                    name: "train".into(),
                    bonafide: 1000,
                    spoof: 1000,
                },
                SplitSpec {
                    name: "dev".into(),
                    bonafide: 125,
                    spoof: 125,
                },
                SplitSpec {
                    name: "eval".into(),
                    bonafide: 250,
                    spoof: 250,
                },
            ],
        }
    }
}

impl SynthSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.duration.validate()?;
        self.artifacts.validate()?;
        if self.speakers == 0 {
            return Err(Error::Config("speakers must be positive".into()));
        }
        if !(self.snr_db[0].is_finite() && self.snr_db[0] <= self.snr_db[1] && self.snr_db[1].is_finite()) {
            return Err(Error::Config("snr_db must be an ordered finite range".into()));
        }
        if self.splits.is_empty() {
            return Err(Error::Config("at least one split is required".into()));
        }
        for (i, s) in self.splits.iter().enumerate() {
            if s.name.is_empty() || !s.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return Err(Error::Config(format!("split name `{}` must be a simple token", s.name)));
            }
            if self.splits[..i].iter().any(|o| o.name == s.name) {
                return Err(Error::Config(format!("duplicate split `{}`", s.name)));
            }
            if s.bonafide + s.spoof == 0 {
                return Err(Error::Config(format!("split `{}` is empty", s.name)));
            }
        }
        Ok(())
    }
}

/// Everything needed to render one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthItem {
    pub split: String,
    pub id: String,
    pub speaker: usize,
    pub label: Label,
    pub n_samples: usize,
    pub seed: u64,
}

impl SynthItem {
    pub fn duration_s(&self) -> f64 {
        self.n_samples as f64 / SAMPLE_RATE as f64
    }
}

const PLAN_STREAM: u64 = 1;
const SPEAKER_STREAM: u64 = 1 << 20;

/// Labels, durations, speakers and seeds for every utterance, without
/// rendering audio. Items within a split are shuffled.
pub fn plan_corpus(spec: &SynthSpec) -> Result<Vec<SynthItem>> {
    spec.validate()?;
    let mut out = Vec::new();
    for (si, split) in spec.splits.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(PLAN_STREAM + si as u64);
        let mut labels: Vec<Label> = std::iter::repeat(Label::Bonafide)
            .take(split.bonafide)
            .chain(std::iter::repeat(Label::Spoof).take(split.spoof))
            .collect();
        // Fisher–Yates with our own rng keeps the plan independent of
        // `rand`'s slice-shuffle implementation details.
        for i in (1..labels.len()).rev() {
            let j = rng.gen_range(0..=i);
            labels.swap(i, j);
        }
        for (i, label) in labels.into_iter().enumerate() {
            let d = spec.duration.sample(&mut rng);
            let n_samples = ((d * SAMPLE_RATE as f64).round() as usize).max(400);
            out.push(SynthItem {
                split: split.name.clone(),
                id: format!("{}_{:05}", split.name, i + 1),
                speaker: rng.gen_range(0..spec.speakers),
                label,
                n_samples,
                seed: rng.next_u64(),
            });
        }
    }
    Ok(out)
}

struct Voice {
    f0: f64,
    formants: [f64; 3],
}

fn speaker_voice(spec: &SynthSpec, speaker: usize) -> Voice {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(SPEAKER_STREAM + speaker as u64);
    Voice {
        f0: rng.gen_range(95.0..230.0),
        formants: [
            rng.gen_range(350.0..750.0),
            rng.gen_range(1000.0..2000.0),
            rng.gen_range(2400.0..3000.0),
        ],
    }
}

const BANDWIDTHS: [f64; 3] = [90.0, 130.0, 180.0];
const MAX_HARMONIC_HZ: f64 = 4500.0;
const BLOCK: usize = 160;

fn harmonic_gains(f0: f64, formants: &[f64; 3], gains: &mut Vec<f64>) {
    gains.clear();
    let mut k = 1;
    while k as f64 * f0 < MAX_HARMONIC_HZ {
        let f = k as f64 * f0;
        let res: f64 = formants
            .iter()
            .zip(BANDWIDTHS)
            .map(|(&fc, b)| 1.0 / (1.0 + ((f - fc) / b).powi(2)))
            .sum();
        gains.push((0.03 + res) / (k as f64).sqrt());
        k += 1;
    }
}

/// Band-pass biquad (constant 0 dB peak gain), direct form I.
struct BandPass {
    b0: f64,
    b2: f64,
    a1: f64,
    a2: f64,
    x1: f64,
    x2: f64,
    y1: f64,
    y2: f64,
}

impl BandPass {
    fn new(freq: f64, q: f64) -> Self {
        let w = 2.0 * PI * freq / SAMPLE_RATE as f64;
        let alpha = w.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        Self {
            b0: alpha / a0,
            b2: -alpha / a0,
            a1: -2.0 * w.cos() / a0,
            a2: (1.0 - alpha) / a0,
            x1: 0.0,
            x2: 0.0,
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.b0 * x + self.b2 * self.x2 - self.a1 * self.y1 - self.a2 * self.y2;
        self.x2 = self.x1;
        self.x1 = x;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Event times (in samples) spaced `interval ± jitter`, first one uniform
/// in `[0, interval)`.
fn event_times<R: Rng>(interval: f64, jitter: f64, n: usize, rng: &mut R) -> Vec<usize> {
    if interval <= 0.0 {
        return Vec::new();
    }
    let sr = SAMPLE_RATE as f64;
    let mut out = Vec::new();
    let mut t = rng.gen_range(0.0..interval);
    while t * sr < n as f64 {
        out.push((t * sr) as usize);
        t += interval + if jitter > 0.0 { rng.gen_range(-jitter..jitter) } else { 0.0 };
    }
    out
}

fn uniform<R: Rng>(r: [f64; 2], rng: &mut R) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.gen_range(r[0]..r[1])
    }
}

/// Adds the glitch bursts to `x`, scaled against the clean `rms`.
fn add_bursts<R: Rng>(a: &ArtifactConfig, x: &mut [f64], rms: f64, rng: &mut R) {
    let len = ((a.burst_ms / 1000.0 * SAMPLE_RATE as f64).round() as usize).max(2);
    for start in event_times(a.burst_interval_s, a.burst_jitter_s, x.len(), rng) {
        let mut bp = BandPass::new(uniform(a.burst_hz, rng), 2.0);
        let burst: Vec<f64> = (0..len)
            .map(|i| {
                let z: f64 = StandardNormal.sample(rng);
                let w = 0.5 - 0.5 * (2.0 * PI * i as f64 / (len - 1) as f64).cos();
                w * bp.step(z)
            })
            .collect();
        let b_rms = (burst.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt().max(1e-12);
        let g = a.burst_level * rms / b_rms;
        for (v, b) in x[start..].iter_mut().zip(&burst) {
            *v += g * b;
        }
    }
}

fn phase_jumps<R: Rng>(a: &ArtifactConfig, n: usize, rng: &mut R) -> Vec<(usize, f64)> {
    let times = event_times(a.phase_jump_interval_s, a.phase_jump_jitter_s, n, rng);
    let mut out = Vec::with_capacity(times.len());
    for at in times {
        let mag = if a.phase_jump_rad[0] == a.phase_jump_rad[1] {
            a.phase_jump_rad[0]
        } else {
            rng.gen_range(a.phase_jump_rad[0]..a.phase_jump_rad[1])
        };
        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        out.push((at, sign * mag));
    }
    out
}

/// Renders one planned utterance.
pub fn render_item(spec: &SynthSpec, item: &SynthItem) -> Result<Utterance> {
    let sr = SAMPLE_RATE as f64;
    let n = item.n_samples;
    let voice = speaker_voice(spec, item.speaker);
    let mut rng = ChaCha8Rng::seed_from_u64(item.seed);

    let f0 = voice.f0 * (1.0 + rng.gen_range(-0.08..0.08));
    let mut formants = voice.formants;
    for f in &mut formants {
        *f *= 1.0 + rng.gen_range(-0.1..0.1);
    }
    let vib_rate = rng.gen_range(4.0..7.0);
    let vib_depth = rng.gen_range(0.005..0.02);
    let drift_rate = rng.gen_range(0.1..0.5);
    let drift_depth = rng.gen_range(0.02..0.06);
    let drift_phase = rng.gen_range(0.0..2.0 * PI);
    let syl_rate = rng.gen_range(2.5..5.0);
    let syl_phase = rng.gen_range(0.0..2.0 * PI);
    let snr_db = if spec.snr_db[0] == spec.snr_db[1] {
        spec.snr_db[0]
    } else {
        rng.gen_range(spec.snr_db[0]..spec.snr_db[1])
    };
    let peak = rng.gen_range(0.3..0.8);

    let spoof = item.label == Label::Spoof;
    let art = &spec.artifacts;
    let jumps = if spoof { phase_jumps(art, n, &mut rng) } else { Vec::new() };
    let mut notch = (spoof && art.notch_depth > 0.0).then(|| {
        let fc = if art.notch_hz[0] == art.notch_hz[1] {
            art.notch_hz[0]
        } else {
            rng.gen_range(art.notch_hz[0]..art.notch_hz[1])
        };
        BandPass::new(fc, art.notch_q)
    });

    let pitch = |t: f64| {
        f0 * (1.0 + vib_depth * (2.0 * PI * vib_rate * t).sin() + drift_depth * (2.0 * PI * drift_rate * t + drift_phase).sin())
    };

    let mut x = vec![0.0f64; n];
    let mut gains = Vec::new();
    let mut phi = 0.0f64;
    let mut next_jump = 0;
    for (i, out) in x.iter_mut().enumerate() {
        let t = i as f64 / sr;
        if i % BLOCK == 0 {
            harmonic_gains(pitch(t), &formants, &mut gains);
        }
        phi += 2.0 * PI * pitch(t) / sr;
        while next_jump < jumps.len() && jumps[next_jump].0 == i {
            phi += jumps[next_jump].1;
            next_jump += 1;
        }
        phi = phi.rem_euclid(2.0 * PI);
        // sin(kφ) by the Chebyshev recurrence.
        let c = 2.0 * phi.cos();
        let (mut s_prev2, mut s_prev) = (0.0, phi.sin());
        let mut acc = 0.0;
        for (k, &g) in gains.iter().enumerate() {
            if k > 0 {
                let s = c * s_prev - s_prev2;
                s_prev2 = s_prev;
                s_prev = s;
            }
            acc += g * s_prev;
        }
        let e = 0.5 + 0.5 * (2.0 * PI * syl_rate * t + syl_phase).sin();
        *out = acc * (0.15 + 0.85 * e * e);
    }
    if let Some(bp) = notch.as_mut() {
        for v in &mut x {
            *v -= art.notch_depth * bp.step(*v);
        }
    }

    let rms = (x.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt().max(1e-9);
    if spoof {
        add_bursts(art, &mut x, rms, &mut rng);
    }
    let noise_std = rms * 10f64.powf(-snr_db / 20.0);
    for v in &mut x {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v += noise_std * z;
    }
    let max = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
    let gain = peak / max;
    let q = if spoof && art.quant_bits > 0 {
        Some((1u32 << (art.quant_bits - 1)) as f64)
    } else {
        None
    };
    let samples = x
        .into_iter()
        .map(|v| {
            let v = v * gain;
            match q {
                Some(levels) => ((v * levels).round() / levels) as f32,
                None => v as f32,
            }
        })
        .collect();
    Utterance::new(item.id.clone(), samples, item.label)
}

/// Renders every split in memory, in plan order.
pub fn generate_corpus(spec: &SynthSpec) -> Result<Vec<(String, Vec<Utterance>)>> {
    let plan = plan_corpus(spec)?;
    let mut out: Vec<(String, Vec<Utterance>)> = spec.splits.iter().map(|s| (s.name.clone(), Vec::new())).collect();
    for item in &plan {
        let slot = out.iter_mut().find(|(n, _)| *n == item.split).expect("planned split");
        slot.1.push(render_item(spec, item)?);
    }
    Ok(out)
}

fn protocol_entry(spec: &SynthSpec, item: &SynthItem) -> ProtocolEntry {
    let gender = if speaker_voice(spec, item.speaker).f0 < 160.0 { "M" } else { "F" };
    ProtocolEntry {
        speaker_id: format!("SPK{:03}", item.speaker),
        utterance_id: item.id.clone(),
        gender: gender.into(),
        system_id: match item.label {
            Label::Spoof => "S01".into(),
            _ => "-".into(),
        },
        key: item.label,
    }
}

/// Writes `<dir>/<split>/<id>.wav` and `<dir>/<split>.protocol.txt` for
/// every split; returns the protocol paths in split order.
pub fn write_corpus(spec: &SynthSpec, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let plan = plan_corpus(spec)?;
    let mut protocols = Vec::new();
    for split in &spec.splits {
        let audio = dir.join(&split.name);
        std::fs::create_dir_all(&audio).map_err(|e| Error::io(&audio, e))?;
        let mut entries = Vec::new();
        for item in plan.iter().filter(|i| i.split == split.name) {
            let u = render_item(spec, item)?;
            write_wav(audio.join(format!("{}.wav", item.id)), &u.samples)?;
            entries.push(protocol_entry(spec, item));
        }
        let p = dir.join(format!("{}.protocol.txt", split.name));
        write_protocol(&p, &entries)?;
        protocols.push(p);
    }
    Ok(protocols)
}
