use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::tensor::{bind_flat, finite_diff_check, flatten_params, BatchNormMode, Graph};

fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn probe(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn r2_params(cfg: &BlockConfig, seed: u64) -> ParamSet<f64> {
    let mut p = ParamSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    blocks::init_block(&mut p, "b", cfg, 8, &mut rng);
    p
}

fn groups_for(cfg: &Res2NetBlockConfig, params: &mut ParamSet<f64>, x: Tensor<f64>) -> Vec<Tensor<f64>> {
    let mut g = Graph::new();
    let mut ctx = Ctx::new(&mut g, params, BatchNormMode::Eval);
    let xv = ctx.g.input(x);
    let ys = res2net_groups(&mut ctx, xv, cfg, "b").unwrap();
    ys.into_iter().map(|y| g.value(y).clone()).collect()
}

/// Output group `i` reacts to input group `j` exactly when `i == j` or
/// `2 <= j <= i` (1-indexed).
#[test]
fn hierarchical_dependency_pattern() {
    for scale in [2usize, 4, 8] {
        for seed in 0..5u64 {
            let width = 3;
            let cfg = Res2NetBlockConfig {
                scale,
                width,
                in_channels: scale * width,
                out_channels: scale * width,
            };
            let block = BlockConfig::res2net(cfg.in_channels, cfg.out_channels, scale, width, [1, 1]);
            let mut params = r2_params(&block, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let x = randn(&[2, scale * width, 5, 4], &mut rng);
            let base = groups_for(&cfg, &mut params, x.clone());
            for j in 1..=scale {
                let mut xp = x.clone();
                let plane = 5 * 4;
                for n in 0..2 {
                    for c in (j - 1) * width..j * width {
                        let off = (n * scale * width + c) * plane;
                        for v in &mut xp.data_mut()[off..off + plane] {
                            *v += 0.5;
                        }
                    }
                }
                let pert = groups_for(&cfg, &mut params, xp);
                for i in 1..=scale {
                    let depends = i == j || (j >= 2 && j <= i);
                    let diff = base[i - 1]
                        .data()
                        .iter()
                        .zip(pert[i - 1].data())
                        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                    if depends {
                        assert!(diff > 1e-9, "s={scale} seed={seed}: y{i} should react to x{j}");
                    } else {
                        assert_eq!(diff, 0.0, "s={scale} seed={seed}: y{i} must ignore x{j}");
                    }
                }
            }
        }
    }
}

#[test]
fn scale_two_with_zero_filters() {
    let cfg = Res2NetBlockConfig {
        scale: 4,
        width: 2,
        in_channels: 8,
        out_channels: 8,
    };
    let block = BlockConfig::res2net(8, 8, 4, 2, [1, 1]);
    let mut params = r2_params(&block, 1);
    for i in 2..=4 {
        let w = params.get_mut(&format!("b.k{i}.weight")).unwrap();
        w.data_mut().fill(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = randn(&[1, 8, 3, 3], &mut rng);
    let ys = groups_for(&cfg, &mut params, x.clone());
    assert_eq!(ys[0].data(), &x.data()[..18]);
    // Zero kernels, beta 0 and eval-mode identity statistics leave SeLU(0).
    for y in &ys[1..] {
        assert!(y.data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn split_point_must_match_scale_times_width() {
    let cfg = Res2NetBlockConfig {
        scale: 4,
        width: 3,
        in_channels: 12,
        out_channels: 12,
    };
    let block = BlockConfig::res2net(12, 12, 4, 3, [1, 1]);
    let mut params = r2_params(&block, 0);
    let mut g = Graph::new();
    let mut ctx = Ctx::new(&mut g, &mut params, BatchNormMode::Eval);
    let x = ctx.g.input(Tensor::zeros(vec![1, 10, 2, 2]));
    assert!(matches!(res2net_groups(&mut ctx, x, &cfg, "b"), Err(Error::Config(_))));
}

fn se_run(params: &mut ParamSet<f64>, x: Tensor<f64>) -> (Tensor<f64>, Tensor<f64>) {
    let mut g = Graph::new();
    let mut ctx = Ctx::new(&mut g, params, BatchNormMode::Eval);
    let xv = ctx.g.input(x);
    let y = se_forward(&mut ctx, xv, "se").unwrap();
    (g.value(y).clone(), g.value(xv).clone())
}

#[test]
fn se_gates_lie_strictly_inside_unit_interval() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..1000u64 {
        let mut p = ParamSet::new();
        blocks::init_se(&mut p, "se", SELayerConfig::new(6, 2), &mut ChaCha8Rng::seed_from_u64(trial));
        let x = Tensor::new(vec![1, 6, 2, 2], (0..24).map(|_| rng.gen_range(0.5..2.0)).collect()).unwrap();
        let (y, x) = se_run(&mut p, x);
        for (a, b) in y.data().iter().zip(x.data()) {
            let gate = a / b;
            assert!(gate > 0.0 && gate < 1.0, "gate {gate}");
        }
    }
}

#[test]
fn se_zero_weights_halve_and_zero_input_stays_zero() {
    let mut p = ParamSet::new();
    blocks::init_se(&mut p, "se", SELayerConfig::new(4, 2), &mut ChaCha8Rng::seed_from_u64(0));
    for name in ["se.fc1.weight", "se.fc2.weight"] {
        p.get_mut(name).unwrap().data_mut().fill(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = randn(&[2, 4, 3, 3], &mut rng);
    let (y, _) = se_run(&mut p, x.clone());
    for (a, b) in y.data().iter().zip(x.data()) {
        assert_eq!(*a, b / 2.0);
    }

    let mut p = ParamSet::new();
    blocks::init_se(&mut p, "se", SELayerConfig::new(4, 2), &mut ChaCha8Rng::seed_from_u64(3));
    let (y, _) = se_run(&mut p, Tensor::zeros(vec![1, 4, 2, 2]));
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn residual_block_with_zero_filters_collapses_to_skip() {
    let cfg = BlockConfig::plain(3, 3, [2, 2]);
    let mut p = ParamSet::new();
    blocks::init_block(&mut p, "b", &cfg, 8, &mut ChaCha8Rng::seed_from_u64(0));
    for name in ["b.conv1.weight", "b.conv2.weight"] {
        p.get_mut(name).unwrap().data_mut().fill(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = randn(&[1, 3, 4, 4], &mut rng);

    let mut g = Graph::new();
    let mut ctx = Ctx::new(&mut g, &mut p, BatchNormMode::Eval);
    let xv = ctx.g.input(x.clone());
    let y = residual_forward(&mut ctx, xv, &cfg, "b").unwrap();

    let mut g2 = Graph::new();
    let xv2 = g2.input(x);
    let s = g2.selu(xv2).unwrap();
    let expect = g2.max_pool2d(s, (2, 2), (2, 2)).unwrap();
    assert_eq!(g.value(y), g2.value(expect));
}

#[test]
fn parameter_counts_match_hand_formulas() {
    // Res2Net 112->112, scale 8, width 14, SE reduction 8:
    // entry 112·112 + bn 224, seven 3×3 14→14 filters + bns,
    // exit 112·112 + bn 224, SE 112·14+14 + 14·112+112.
    let r2 = 112 * 112 + 224 + 7 * (14 * 14 * 9 + 28) + 112 * 112 + 224 + (112 * 14 + 14) + (14 * 112 + 112);
    let plain = 2 * (112 * 112 * 9) + 2 * 224;
    assert_eq!(r2, 41_342);
    assert_eq!(plain, 226_240);
    let r2_cfg = BlockConfig::res2net(112, 112, 8, 14, [1, 1]);
    let plain_cfg = BlockConfig::plain(112, 112, [1, 1]);
    assert_eq!(r2_cfg.param_count(8), r2);
    assert_eq!(plain_cfg.param_count(8), plain);
    assert_eq!(r2_params(&r2_cfg, 0).count(), r2);
    assert!(r2 < plain);
}

#[test]
fn full_and_desk_configs_are_six_block() {
    EncoderConfig::full().validate_six_block().unwrap();
    EncoderConfig::desk().validate_six_block().unwrap();
    let mut bad = EncoderConfig::desk();
    bad.blocks[2].in_channels = 5;
    assert!(matches!(bad.validate(), Err(Error::Config(_))));
    let mut bad = EncoderConfig::desk();
    bad.blocks[0] = BlockConfig::res2net(4, 8, 4, 4, [2, 1]);
    assert!(bad.validate().is_err());
}

fn embed(enc: &Encoder, params: &mut ParamSet<f32>, wave: &[f32]) -> Tensor<f32> {
    let mut g = Graph::new();
    let mut ctx = Ctx::new(&mut g, params, BatchNormMode::Eval);
    let e = enc.forward(&mut ctx, &[wave]).unwrap();
    g.value(e).clone()
}

fn tone(n: usize) -> Vec<f32> {
    (0..n).map(|i| (0.3 * (i as f32 * 0.07).sin()) + 0.05 * (i as f32 * 0.91).cos()).collect()
}

#[test]
fn embedding_width_is_constant_across_durations() {
    for cfg in [EncoderConfig::desk(), EncoderConfig::full()] {
        let enc = Encoder::new(cfg).unwrap();
        let mut params = enc.init_params::<f32>(0);
        let secs: &[usize] = if enc.config().front_end.channels > 8 { &[1, 6] } else { &[1, 2, 3, 4, 5, 6] };
        for &s in secs {
            let e = embed(&enc, &mut params, &tone(16_000 * s));
            assert_eq!(e.shape(), &[1, enc.embedding_dim()], "{s} s");
        }
    }
}

#[test]
fn very_short_inputs_are_padded_or_rejected() {
    let enc = Encoder::new(EncoderConfig::desk()).unwrap();
    let mut params = enc.init_params::<f32>(0);
    let e = embed(&enc, &mut params, &tone(500));
    assert_eq!(e.shape(), &[1, enc.embedding_dim()]);
    let mut g = Graph::new();
    let mut ctx = Ctx::new(&mut g, &mut params, BatchNormMode::Eval);
    assert!(matches!(enc.forward(&mut ctx, &[&tone(100)]), Err(Error::Input(_))));
    assert!(matches!(enc.forward(&mut ctx, &[&[]]), Err(Error::Input(_))));
}

#[test]
fn forward_is_deterministic() {
    let enc = Encoder::new(EncoderConfig::desk()).unwrap();
    let mut a = enc.init_params::<f32>(7);
    let mut b = enc.init_params::<f32>(7);
    let w = tone(20_000);
    assert_eq!(embed(&enc, &mut a, &w), embed(&enc, &mut b, &w));
}

fn tiny() -> EncoderConfig {
    EncoderConfig {
        front_end: FrontEndConfig {
            n_fft: 32,
            win_length: 32,
            hop_length: 16,
            channels: 2,
            bands: 2,
            pool: [1, 1],
            ..FrontEndConfig::default()
        },
        blocks: vec![BlockConfig::plain(2, 2, [2, 1]), BlockConfig::res2net(2, 4, 2, 2, [1, 1])],
        se_reduction: 2,
    }
}

fn block_gradcheck(cfg: BlockConfig, seed: u64) {
    let mut params = r2_params(&cfg, seed);
    let (flat, layout) = flatten_params(&params.cast());
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let x = randn(&[2, cfg.in_channels, 4, 4], &mut rng);
    let report = finite_diff_check(
        |g, p| {
            bind_flat(g, p, &layout)?;
            let mut ctx = Ctx::new(g, &mut params, BatchNormMode::Train);
            let xv = ctx.g.input(x.clone());
            let y = match cfg.res2net {
                Some(_) => res2net_forward(&mut ctx, xv, &cfg, "b")?,
                None => residual_forward(&mut ctx, xv, &cfg, "b")?,
            };
            let n = g.value(y).numel();
            g.dot_const(y, probe(n, seed))
        },
        &flat,
        // Composite of several ops: h² truncation through train-mode batch
        // norm on a 32-element batch reaches ~2e-4, so blocks share the
        // composed-model bound.
        1e-3,
    )
    .unwrap();
    assert!(report.pass, "{cfg:?} seed {seed}: max rel error {}", report.max_rel_error);
}

#[test]
fn plain_block_gradients() {
    for s in 11..16 { block_gradcheck(BlockConfig::plain(2, 3, [2, 2]), s); }
}

#[test]
fn res2net_block_gradients() {
    block_gradcheck(BlockConfig::res2net(3, 3, 3, 2, [1, 1]), 12);
}

#[test]
fn tiny_encoder_gradients_wrt_parameters_and_input() {
    let enc = Encoder::new(tiny()).unwrap();
    let mut params = enc.init_params::<f64>(5);
    let (flat, layout) = flatten_params(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let bins = enc.config().front_end.n_bins();
    let spec = randn(&[2, 6, bins], &mut rng);
    let d = enc.embedding_dim();

    let report = finite_diff_check(
        |g, p| {
            bind_flat(g, p, &layout)?;
            let mut ctx = Ctx::new(g, &mut params, BatchNormMode::Train);
            let e = enc.forward_features(&mut ctx, spec.clone())?;
            g.dot_const(e, probe(2 * d, 3))
        },
        &flat,
        1e-3,
    )
    .unwrap();
    assert!(report.pass, "parameters: max rel error {}", report.max_rel_error);

    let report = finite_diff_check(
        |g, x| {
            let mut ctx = Ctx::new(g, &mut params, BatchNormMode::Train);
            let h = enc.project(&mut ctx, x)?;
            let e = enc.forward_from_front(&mut ctx, h)?;
            g.dot_const(e, probe(2 * d, 4))
        },
        &spec,
        1e-3,
    )
    .unwrap();
    assert!(report.pass, "input: max rel error {}", report.max_rel_error);
}
