//! The finite-difference gradient suite, at 64-bit: every differentiable
//! primitive at a strict bound, then blocks and a tiny encoder at a looser
//! one (central differences through train-mode batch norm carry more
//! truncation error).

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoder::{res2net_forward, residual_forward, se_forward, BlockConfig, Ctx, Encoder, EncoderConfig, FrontEndConfig};
use crate::error::Result;
use crate::tensor::{bind_flat, finite_diff_check, flatten_params, BatchNormMode, Graph, ParamSet, Tensor, Var};

pub const PRIMITIVE_TOLERANCE: f64 = 1e-4;
pub const COMPOSITE_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("finite")
}

/// Values at least 0.1 away from zero and 0.02 apart from each other, so
/// kinks (ReLU, SELU, max) sit far outside the difference step.
fn spaced(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n)
        .map(|i| {
            let m = 0.1 + 0.02 * (i / 2) as f64;
            if i % 2 == 0 { m } else { -m }
        })
        .collect();
    v.shuffle(&mut rng);
    Tensor::new(shape.to_vec(), v).expect("finite")
}

fn probe(n: usize, seed: u64) -> Vec<f64> {
    randn(&[n], seed ^ 0x5eed).into_data()
}

fn scalarize(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let n = g.value(y).numel();
    g.dot_const(y, probe(n, seed))
}

struct Suite {
    out: Vec<CheckOutcome>,
}

impl Suite {
    fn check<F>(&mut self, name: &str, tolerance: f64, point: &Tensor<f64>, program: F) -> Result<()>
    where
        F: FnMut(&mut Graph<f64>, Var) -> Result<Var>,
    {
        let r = finite_diff_check(program, point, tolerance)?;
        self.out.push(CheckOutcome {
            name: name.to_owned(),
            max_rel_error: r.max_rel_error,
            tolerance,
            pass: r.pass,
        });
        Ok(())
    }
}

/// Encoder small enough for whole-model finite differences.
pub fn tiny_encoder() -> EncoderConfig {
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

/// Runs every check and returns one outcome per (op, argument).
pub fn gradcheck_suite() -> Result<Vec<CheckOutcome>> {
    let mut s = Suite { out: Vec::new() };
    let p = PRIMITIVE_TOLERANCE;

    let x4 = randn(&[2, 3, 4, 5], 1);
    let k = randn(&[4, 3, 3, 3], 2);
    {
        let k = k.clone();
        s.check("conv2d/input", p, &x4, |g, x| {
            let kv = g.input(k.clone());
            let y = g.conv2d(x, kv, (2, 1), (1, 1))?;
            scalarize(g, y, 3)
        })?;
    }
    s.check("conv2d/kernel", p, &k, |g, kv| {
        let x = g.input(x4.clone());
        let y = g.conv2d(x, kv, (1, 1), (1, 1))?;
        scalarize(g, y, 4)
    })?;

    let gamma = randn(&[3], 5);
    let beta = randn(&[3], 6);
    for (mode, tag) in [(BatchNormMode::Train, "train"), (BatchNormMode::Eval, "eval")] {
        let bn = |g: &mut Graph<f64>, x: Var, ga: Var, be: Var| {
            let (mut rm, mut rv) = (vec![0.1; 3], vec![1.5; 3]);
            let y = g.batch_norm(x, ga, be, &mut rm, &mut rv, mode)?;
            scalarize(g, y, 7)
        };
        s.check(&format!("batch_norm[{tag}]/input"), p, &x4, |g, x| {
            let ga = g.input(gamma.clone());
            let be = g.input(beta.clone());
            bn(g, x, ga, be)
        })?;
        s.check(&format!("batch_norm[{tag}]/gamma"), p, &gamma, |g, ga| {
            let x = g.input(x4.clone());
            let be = g.input(beta.clone());
            bn(g, x, ga, be)
        })?;
        s.check(&format!("batch_norm[{tag}]/beta"), p, &beta, |g, be| {
            let x = g.input(x4.clone());
            let ga = g.input(gamma.clone());
            bn(g, x, ga, be)
        })?;
    }

    let kinked = spaced(&[2, 3, 4, 4], 8);
    s.check("selu", p, &kinked, |g, x| {
        let y = g.selu(x)?;
        scalarize(g, y, 9)
    })?;
    s.check("relu", p, &kinked, |g, x| {
        let y = g.relu(x)?;
        scalarize(g, y, 10)
    })?;
    s.check("sigmoid", p, &x4, |g, x| {
        let y = g.sigmoid(x)?;
        scalarize(g, y, 11)
    })?;
    s.check("max_pool2d", p, &kinked, |g, x| {
        let y = g.max_pool2d(x, (2, 2), (2, 2))?;
        scalarize(g, y, 12)
    })?;
    s.check("global_avg_pool", p, &x4, |g, x| {
        let y = g.global_avg_pool(x)?;
        scalarize(g, y, 13)
    })?;
    s.check("global_max_pool", p, &kinked, |g, x| {
        let y = g.global_max_pool(x)?;
        scalarize(g, y, 14)
    })?;

    let a = randn(&[3, 5], 15);
    let w = randn(&[4, 5], 16);
    let b = randn(&[4], 17);
    s.check("linear/input", p, &a, |g, x| {
        let (wv, bv) = (g.input(w.clone()), g.input(b.clone()));
        let y = g.linear(x, wv, Some(bv))?;
        scalarize(g, y, 18)
    })?;
    s.check("linear/weight", p, &w, |g, wv| {
        let (x, bv) = (g.input(a.clone()), g.input(b.clone()));
        let y = g.linear(x, wv, Some(bv))?;
        scalarize(g, y, 19)
    })?;
    s.check("linear/bias", p, &b, |g, bv| {
        let (x, wv) = (g.input(a.clone()), g.input(w.clone()));
        let y = g.linear(x, wv, Some(bv))?;
        scalarize(g, y, 20)
    })?;
    let m = randn(&[5, 2], 21);
    s.check("matmul/left", p, &a, |g, x| {
        let mv = g.input(m.clone());
        let y = g.matmul(x, mv)?;
        scalarize(g, y, 22)
    })?;
    s.check("matmul/right", p, &m, |g, mv| {
        let x = g.input(a.clone());
        let y = g.matmul(x, mv)?;
        scalarize(g, y, 23)
    })?;
    for axis in [0, 1] {
        s.check(&format!("l2_normalize[axis {axis}]"), p, &a, |g, x| {
            let y = g.l2_normalize(x, axis)?;
            scalarize(g, y, 24)
        })?;
    }

    let other = randn(&[2, 3, 4, 5], 25);
    s.check("add", p, &x4, |g, x| {
        let o = g.input(other.clone());
        let y = g.add(x, o)?;
        let y = g.add(y, x)?;
        scalarize(g, y, 26)
    })?;
    s.check("concat", p, &x4, |g, x| {
        let o = g.input(other.clone());
        let y = g.concat(&[o, x, x])?;
        scalarize(g, y, 27)
    })?;
    s.check("narrow", p, &x4, |g, x| {
        let y = g.narrow(x, 1, 2)?;
        scalarize(g, y, 28)
    })?;
    s.check("reshape+permute", p, &x4, |g, x| {
        let y = g.permute(x, &[0, 3, 1, 2])?;
        let y = g.reshape(y, &[2, 60])?;
        scalarize(g, y, 29)
    })?;
    let gate = randn(&[2, 3], 30);
    s.check("scale_channels/input", p, &x4, |g, x| {
        let gv = g.input(gate.clone());
        let y = g.scale_channels(x, gv)?;
        scalarize(g, y, 31)
    })?;
    s.check("scale_channels/gate", p, &gate, |g, gv| {
        let x = g.input(x4.clone());
        let y = g.scale_channels(x, gv)?;
        scalarize(g, y, 32)
    })?;

    let logits = randn(&[4, 3], 33);
    let labels = [0, 2, 1, 2];
    s.check("additive_margin", p, &logits, |g, z| {
        let y = g.additive_margin(z, &labels, 0.35, 15.0)?;
        scalarize(g, y, 34)
    })?;
    s.check("softmax_cross_entropy", p, &logits, |g, z| g.softmax_cross_entropy(z, &labels, None))?;
    s.check("softmax_cross_entropy[weighted]", p, &logits, |g, z| {
        g.softmax_cross_entropy(z, &labels, Some(&[0.2, 0.5, 1.3]))
    })?;
    let emb = randn(&[4, 5], 35);
    let cls = randn(&[5, 2], 36);
    s.check("am_softmax_loss/embeddings", p, &emb, |g, e| {
        let wv = g.input(cls.clone());
        crate::losses::am_softmax_loss(g, e, &[0, 1, 1, 0], wv, &Default::default(), 0.3)
    })?;
    s.check("am_softmax_loss/class_vectors", p, &cls, |g, wv| {
        let e = g.input(emb.clone());
        crate::losses::am_softmax_loss(g, e, &[0, 1, 1, 0], wv, &Default::default(), 0.3)
    })?;

    let c = COMPOSITE_TOLERANCE;
    for (name, cfg, seed) in [
        ("residual_block", BlockConfig::plain(2, 3, [2, 2]), 40),
        ("res2net_block", BlockConfig::res2net(3, 3, 3, 2, [1, 1]), 41),
    ] {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        crate::encoder::init_block(&mut params, "b", &cfg, 2, &mut rng);
        let (flat, layout) = flatten_params(&params);
        let x = randn(&[2, cfg.in_channels, 4, 4], seed + 1);
        s.check(&format!("{name}/parameters"), c, &flat, |g, pv| {
            bind_flat(g, pv, &layout)?;
            let mut ctx = Ctx::new(g, &mut params, BatchNormMode::Train);
            let xv = ctx.g.input(x.clone());
            let y = match cfg.res2net {
                Some(_) => res2net_forward(&mut ctx, xv, &cfg, "b")?,
                None => residual_forward(&mut ctx, xv, &cfg, "b")?,
            };
            scalarize(g, y, seed + 2)
        })?;
    }
    {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        crate::encoder::init_se(&mut params, "se", crate::encoder::SELayerConfig::new(4, 2), &mut rng);
        s.check("se_layer/input", p, &randn(&[2, 4, 3, 3], 43), |g, x| {
            let mut ctx = Ctx::new(g, &mut params, BatchNormMode::Train);
            let y = se_forward(&mut ctx, x, "se")?;
            scalarize(g, y, 44)
        })?;
    }

    let enc = Encoder::new(tiny_encoder())?;
    let mut params = enc.init_params::<f64>(5);
    let (flat, layout) = flatten_params(&params);
    let spec = randn(&[2, 6, enc.config().front_end.n_bins()], 45);
    s.check("tiny_encoder/parameters", c, &flat, |g, pv| {
        bind_flat(g, pv, &layout)?;
        let mut ctx = Ctx::new(g, &mut params, BatchNormMode::Train);
        let e = enc.forward_features(&mut ctx, spec.clone())?;
        scalarize(g, e, 46)
    })?;
    s.check("tiny_encoder/input", c, &spec, |g, x| {
        let mut ctx = Ctx::new(g, &mut params, BatchNormMode::Train);
        let h = enc.project(&mut ctx, x)?;
        let e = enc.forward_from_front(&mut ctx, h)?;
        scalarize(g, e, 47)
    })?;
    Ok(s.out)
}
