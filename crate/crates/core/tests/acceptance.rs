//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! fails. The end-to-end training comparison dominates the runtime.

use std::time::Instant;

use aasist2::config::RunConfig;
use aasist2::data::{
    chunk_size_for_batch, duration_histogram, generate_corpus, plan_corpus, read_histogram_csv, write_histogram_csv,
    ChunkMode, ChunkPolicy, HistogramBins, Label, SplitSpec, SynthSpec, Utterance, SAMPLE_RATE,
};
use aasist2::encoder::{block_prefix, res2net_groups, BlockConfig, Ctx, Encoder, EncoderConfig, Res2NetBlockConfig};
use aasist2::eval::{compute_eer, compute_eer_fast, evaluate_at_durations, DurationCondition, ScoreEntry};
use aasist2::losses::{am_softmax_loss, margin_for_duration, AMSoftmaxConfig, MarginSchedule};
use aasist2::tensor::{encode_checkpoint, BatchNormMode, Graph, Tensor};
use aasist2::train::{detector, train};
use aasist2::verify::{gradcheck_suite, tiny_encoder, COMPOSITE_TOLERANCE, PRIMITIVE_TOLERANCE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn gradient_integrity() -> Verdict {
    let t = Instant::now();
    let out = gradcheck_suite().expect("suite runs");
    let secs = t.elapsed().as_secs_f64();
    let worst = |tol: f64| {
        out.iter()
            .filter(|c| c.tolerance == tol)
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
            .map(|c| format!("{} {:.1e}", c.name, c.max_rel_error))
            .unwrap_or_default()
    };
    let failed: Vec<&str> = out.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    verdict(
        failed.is_empty() && secs < 120.0,
        format!(
            "{} checks in {secs:.1}s; worst primitive ({PRIMITIVE_TOLERANCE:.0e}): {}; worst composite ({COMPOSITE_TOLERANCE:.0e}): {}; failed: {failed:?}",
            out.len(),
            worst(PRIMITIVE_TOLERANCE),
            worst(COMPOSITE_TOLERANCE)
        ),
    )
}

/// Output group `i` reacts to input group `j` exactly when `i == j` or
/// `2 <= j <= i`; unaffected groups are bit-identical.
fn res2net_dependency_pattern() -> Verdict {
    let mut violations = Vec::new();
    for scale in [2usize, 4, 8] {
        for seed in 0..5u64 {
            let width = 2;
            let c = scale * width;
            let enc_cfg = EncoderConfig {
                blocks: vec![BlockConfig::plain(2, c, [1, 1]), BlockConfig::res2net(c, c, scale, width, [1, 1])],
                ..tiny_encoder()
            };
            let enc = Encoder::new(enc_cfg).unwrap();
            let mut params = enc.init_params::<f64>(seed);
            let cfg = Res2NetBlockConfig {
                scale,
                width,
                in_channels: c,
                out_channels: c,
            };
            let mut groups = |x: Tensor<f64>| {
                let mut g = Graph::new();
                let mut ctx = Ctx::new(&mut g, &mut params, BatchNormMode::Eval);
                let xv = ctx.g.input(x);
                let ys = res2net_groups(&mut ctx, xv, &cfg, &block_prefix(1)).unwrap();
                ys.into_iter().map(|y| g.value(y).clone()).collect::<Vec<_>>()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let (h, w) = (5, 3);
            let x = randn(&[2, c, h, w], &mut rng);
            let base = groups(x.clone());
            for j in 1..=scale {
                let mut xp = x.clone();
                for n in 0..2 {
                    for ch in (j - 1) * width..j * width {
                        let off = (n * c + ch) * h * w;
                        for v in &mut xp.data_mut()[off..off + h * w] {
                            *v += rng.gen_range(0.2..0.8);
                        }
                    }
                }
                let pert = groups(xp);
                for i in 1..=scale {
                    let expected = i == j || (2..=i).contains(&j);
                    let changed = base[i - 1] != pert[i - 1];
                    if expected != changed {
                        violations.push(format!("s={scale} seed={seed} y{i}/x{j}"));
                    }
                }
            }
        }
    }
    verdict(
        violations.is_empty(),
        format!("s in {{2,4,8}} x 5 seeds, every (output, input) group pair probed; violations: {violations:?}"),
    )
}

fn reference_ce(cos: &[f64], labels: &[usize], c: usize) -> f64 {
    let rows: Vec<&[f64]> = cos.chunks(c).collect();
    rows.iter()
        .zip(labels)
        .map(|(r, &l)| {
            let lse = r.iter().map(|v| v.exp()).sum::<f64>().ln();
            lse - r[l]
        })
        .sum::<f64>()
        / labels.len() as f64
}

fn am_softmax_reduction() -> Verdict {
    let cfg = AMSoftmaxConfig {
        scale: 1.0,
        num_classes: 3,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (n, d) = (rng.gen_range(1..9), rng.gen_range(2..7));
        let e = randn(&[n, d], &mut rng);
        let w = randn(&[d, 3], &mut rng);
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        // Independent cosine computation.
        let mut cos = vec![0.0; n * 3];
        for i in 0..n {
            let ei = &e.data()[i * d..(i + 1) * d];
            let en = ei.iter().map(|v| v * v).sum::<f64>().sqrt();
            for k in 0..3 {
                let wk: Vec<f64> = (0..d).map(|r| w.data()[r * 3 + k]).collect();
                let wn = wk.iter().map(|v| v * v).sum::<f64>().sqrt();
                cos[i * 3 + k] = ei.iter().zip(&wk).map(|(a, b)| a * b).sum::<f64>() / (en * wn);
            }
        }
        let mut g = Graph::new();
        let (ev, wv) = (g.input(e), g.input(w));
        let l = am_softmax_loss(&mut g, ev, &labels, wv, &cfg, 0.0).unwrap();
        worst = worst.max((g.value(l).data()[0] - reference_ce(&cos, &labels, 3)).abs());
    }
    // Target cosine 1, other -1, s = 15, m = 0.2: logits 12 and -15.
    let mut g = Graph::new();
    let e = g.input(Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap());
    let w = g.input(Tensor::new(vec![2, 2], vec![1.0, -1.0, 0.0, 0.0]).unwrap());
    let l = am_softmax_loss(&mut g, e, &[0], w, &AMSoftmaxConfig::default(), 0.2).unwrap();
    let hand = (-27.0f64).exp().ln_1p();
    let hand_err = (g.value(l).data()[0] - hand).abs();
    verdict(
        worst < 1e-6 && hand_err <= 1e-15,
        format!("m=0, s=1 vs reference CE over 100 batches: max |diff| {worst:.1e}; single sample vs log(1+e^-27): |diff| {hand_err:.1e}"),
    )
}

fn margin_schedule() -> Verdict {
    let s = MarginSchedule::default();
    let consts = s.a == 3.0 / 50.0 && s.b == 7.0 / 50.0;
    let (m1, m6) = (margin_for_duration(1.0, &s), margin_for_duration(6.0, &s));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let (d1, d2, t) = (rng.gen_range(1.0..6.0), rng.gen_range(1.0..6.0), rng.gen_range(0.0..1.0));
        let lhs = margin_for_duration(t * d1 + (1.0 - t) * d2, &s);
        let rhs = t * margin_for_duration(d1, &s) + (1.0 - t) * margin_for_duration(d2, &s);
        worst = worst.max((lhs - rhs).abs());
    }
    verdict(
        consts && m1 == 0.2 && m6 == 0.5 && worst <= 1e-12,
        format!("A=3/50 B=7/50: {consts}; m(1s)={m1}, m(6s)={m6}; affinity max dev {worst:.1e} over 10k triples"),
    )
}

fn eer_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(2..=200);
        let levels = rng.gen_range(1..=n.max(2));
        let mut entries: Vec<ScoreEntry> = (0..n)
            .map(|i| {
                let label = if rng.gen_bool(0.5) { Label::Bonafide } else { Label::Spoof };
                ScoreEntry::new(format!("u{i}"), rng.gen_range(0..levels) as f64 / levels as f64, label)
            })
            .collect();
        entries[0].label = Label::Bonafide;
        entries[1].label = Label::Spoof;
        let (a, b) = (compute_eer(&entries).unwrap(), compute_eer_fast(&entries).unwrap());
        if a != b {
            mismatches += 1;
        }
    }
    let ex: Vec<ScoreEntry> = [(0.8, Label::Bonafide), (0.6, Label::Bonafide), (0.4, Label::Bonafide), (0.7, Label::Spoof), (0.3, Label::Spoof), (0.2, Label::Spoof)]
        .iter()
        .enumerate()
        .map(|(i, &(s, l))| ScoreEntry::new(format!("e{i}"), s, l))
        .collect();
    let e = compute_eer_fast(&ex).unwrap();
    verdict(
        mismatches == 0 && e.eer == 1.0 / 3.0,
        format!("1000 tie-heavy sets, exact mismatches: {mismatches}; 3-vs-3 example EER {} at threshold {}", e.eer, e.threshold),
    )
}

fn dcs_sampler() -> Verdict {
    let policy = ChunkPolicy {
        mode: ChunkMode::Dcs,
        seed: 2024,
        ..ChunkPolicy::default()
    };
    let (lo, hi) = (policy.n_min as f64, policy.n_max as f64);
    let draws: Vec<usize> = (0..10_000).map(|k| chunk_size_for_batch(&policy, k).unwrap()).collect();
    let in_range = draws.iter().all(|&n| n >= policy.n_min && n <= policy.n_max);
    let mut counts = [0f64; 8];
    for &n in &draws {
        let b = (((n as f64 - lo) / (hi - lo + 1.0)) * 8.0) as usize;
        counts[b.min(7)] += 1.0;
    }
    let expected = 10_000.0 / 8.0;
    let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
    let critical = ChiSquared::new(7.0).unwrap().inverse_cdf(0.99);
    let mean = draws.iter().sum::<usize>() as f64 / draws.len() as f64;
    let rel = (mean - 56_000.0).abs() / 56_000.0;
    verdict(
        in_range && chi2 < critical && rel < 0.01,
        format!("10k draws: chi2 {chi2:.2} < {critical:.2} (7 dof, alpha 0.01); mean {mean:.0} ({:.2}% from 56000)", 100.0 * rel),
    )
}

fn histogram_round_trip() -> Verdict {
    let spec = SynthSpec {
        splits: vec![SplitSpec {
            name: "h".into(),
            bonafide: 5000,
            spoof: 5000,
        }],
        ..SynthSpec::default()
    };
    let durations: Vec<f64> = plan_corpus(&spec).unwrap().iter().map(|i| i.duration_s()).collect();
    let h = duration_histogram(&durations, &HistogramBins::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("h.csv");
    write_histogram_csv(&p, &h).unwrap();
    let back = read_histogram_csv(&p).unwrap();
    let mut worst = 0.0f64;
    for ((a, b), share) in back.ranges.iter().zip(back.proportions()) {
        worst = worst.max((share - spec.duration.probability(*a, *b)).abs());
    }
    verdict(
        back == h && worst < 0.03,
        format!("10k planned durations through CSV: max |observed - analytic| bin share {worst:.4}"),
    )
}

fn determinism() -> Verdict {
    let spec = SynthSpec {
        seed: 5,
        duration: aasist2::data::DurationDist::Uniform { min_s: 0.5, max_s: 2.0 },
        splits: vec![
            SplitSpec {
                name: "train".into(),
                bonafide: 12,
                spoof: 12,
            },
            SplitSpec {
                name: "dev".into(),
                bonafide: 4,
                spoof: 4,
            },
        ],
        ..SynthSpec::default()
    };
    let corpus = generate_corpus(&spec).unwrap();
    let cfg = RunConfig::from_toml(
        "seed = 9",
        &[
            "optim.epochs=3".into(),
            "optim.batch_size=8".into(),
            "chunk.mode=\"dcs\"".into(),
            "chunk.n_min=8000".into(),
            "chunk.n_max=24000".into(),
            "eval.dev_len=16000".into(),
        ],
    )
    .unwrap();
    let run = || {
        let mut log = Vec::new();
        let out = train(&cfg, &corpus[0].1, &corpus[1].1, |r| {
            log.push(serde_json::to_string(r).unwrap());
            Ok(())
        })
        .unwrap();
        (log, encode_checkpoint(&out.last, "m"), encode_checkpoint(&out.best, "m"))
    };
    let (a, b) = (run(), run());
    verdict(
        a == b,
        format!("two runs, same config and seed: log identical {}, checkpoints identical {}", a.0 == b.0, a.1 == b.1 && a.2 == b.2),
    )
}

struct Arm {
    eer_1s: Vec<f64>,
    eer_4s: Vec<f64>,
    secs: Vec<f64>,
}

fn train_arm(base: &RunConfig, dcs_almft: bool, corpus: &[(String, Vec<Utterance>)]) -> Arm {
    let mut arm = Arm {
        eer_1s: Vec::new(),
        eer_4s: Vec::new(),
        secs: Vec::new(),
    };
    let split = |name: &str| &corpus.iter().find(|(n, _)| n == name).unwrap().1;
    for seed in 1..=3 {
        let mut cfg = base.clone();
        cfg.seed = seed;
        if dcs_almft {
            cfg.chunk.mode = ChunkMode::Dcs;
            cfg.loss.almft = true;
        } else {
            cfg.chunk.mode = ChunkMode::Fixed;
            cfg.loss.almft = false;
        }
        let t = Instant::now();
        let out = train(&cfg, split("train"), split("dev"), |_| Ok(())).unwrap();
        arm.secs.push(t.elapsed().as_secs_f64());
        let model = detector(&cfg).unwrap();
        let mut params = out.best;
        let conds = [DurationCondition::Fixed(1), DurationCondition::Fixed(4)];
        let (report, _) = evaluate_at_durations(&mut model.scorer(&mut params), "eval", split("eval"), &conds, 16).unwrap();
        arm.eer_1s.push(report.get("eval", conds[0]).unwrap().eer.unwrap());
        arm.eer_4s.push(report.get("eval", conds[1]).unwrap().eer.unwrap());
    }
    arm
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn pct(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|e| format!("{:.2}", 100.0 * e)).collect();
    format!("[{}] mean {:.2}%", parts.join(", "), 100.0 * mean(v))
}

/// Fixed-4 s baseline against DCS + ALMFT, 3 seeds each, on the default
/// synthetic corpus.
fn end_to_end() -> Vec<(&'static str, Verdict)> {
    let spec = SynthSpec::default();
    let corpus = generate_corpus(&spec).unwrap();
    let count = |name: &str| corpus.iter().find(|(n, _)| n == name).unwrap().1.len();
    let durations: Vec<f64> = corpus.iter().flat_map(|(_, u)| u.iter().map(|u| u.duration_s())).collect();
    let (dmin, dmax) = durations.iter().fold((f64::MAX, 0.0f64), |(a, b), &d| (a.min(d), b.max(d)));
    let base = RunConfig::desk(0);
    let fixed = train_arm(&base, false, &corpus);
    let dcs = train_arm(&base, true, &corpus);
    let setup = format!(
        "{} train / {} eval, durations {dmin:.2}-{dmax:.2}s, {} epochs, {SAMPLE_RATE} Hz",
        count("train"),
        count("eval"),
        base.optim.epochs
    );
    let slowest = fixed.secs.iter().copied().fold(0.0, f64::max);
    vec![
        (
            "end-to-end (a) fixed-4s model reaches <= 5% EER at 4s",
            verdict(
                mean(&fixed.eer_4s) <= 0.05 && slowest < 1800.0,
                format!("{setup}; 4s EER {}; slowest training {slowest:.0}s", pct(&fixed.eer_4s)),
            ),
        ),
        (
            "end-to-end (b) fixed-4s model is worse at 1s than at 4s",
            verdict(
                mean(&fixed.eer_1s) > mean(&fixed.eer_4s),
                format!("1s EER {} vs 4s EER {}", pct(&fixed.eer_1s), pct(&fixed.eer_4s)),
            ),
        ),
        (
            "end-to-end (c) DCS+ALMFT improves the 1s EER over fixed-4s",
            verdict(
                mean(&dcs.eer_1s) < mean(&fixed.eer_1s),
                format!(
                    "1s EER DCS+ALMFT {} vs fixed-4s {}; DCS+ALMFT 4s EER {}",
                    pct(&dcs.eer_1s),
                    pct(&fixed.eer_1s),
                    pct(&dcs.eer_4s)
                ),
            ),
        ),
    ]
}

fn main() {
    let mut results: Vec<(&str, Verdict)> = vec![
        ("gradient integrity", gradient_integrity()),
        ("res2net hierarchical dependency", res2net_dependency_pattern()),
        ("am-softmax reduction and hand value", am_softmax_reduction()),
        ("margin schedule endpoints and affinity", margin_schedule()),
        ("eer oracle equivalence", eer_oracle()),
        ("dcs sampler uniformity", dcs_sampler()),
        ("training determinism", determinism()),
        ("duration histogram round trip (secondary)", histogram_round_trip()),
    ];
    for (name, v) in &results {
        println!("{} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    if std::env::var_os("AASIST2_SKIP_END_TO_END").is_some() {
        println!("SKIP end-to-end: AASIST2_SKIP_END_TO_END is set");
    } else {
        for (name, v) in end_to_end() {
            println!("{} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
            results.push((name, v));
        }
    }
    let failed = results.iter().filter(|(_, v)| !v.pass).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
