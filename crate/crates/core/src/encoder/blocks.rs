use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::{BlockConfig, Res2NetBlockConfig, SELayerConfig};
use crate::error::{Error, Result};
use crate::tensor::{BatchNormMode, Graph, ParamSet, Scalar, Tensor, Var};

/// Forward-pass context: the tape, the parameters (batch-norm running
/// statistics are updated in place in train mode) and the mode.
pub struct Ctx<'a, T: Scalar> {
    pub g: &'a mut Graph<T>,
    pub params: &'a mut ParamSet<T>,
    pub mode: BatchNormMode,
}

impl<'a, T: Scalar> Ctx<'a, T> {
    pub fn new(g: &'a mut Graph<T>, params: &'a mut ParamSet<T>, mode: BatchNormMode) -> Self {
        Self { g, params, mode }
    }

    pub fn p(&mut self, name: &str) -> Result<Var> {
        self.g.param(self.params, name)
    }

    pub fn conv(&mut self, x: Var, name: &str, padding: usize) -> Result<Var> {
        let k = self.p(name)?;
        self.g.conv2d(x, k, (1, 1), (padding, padding))
    }

    pub fn bn(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let gamma = self.p(&format!("{prefix}.gamma"))?;
        let beta = self.p(&format!("{prefix}.beta"))?;
        let (rm, rv) = self
            .params
            .buffer_pair_mut(&format!("{prefix}.running_mean"), &format!("{prefix}.running_var"))?;
        self.g.batch_norm(x, gamma, beta, rm, rv, self.mode)
    }

    pub fn linear(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let w = self.p(&format!("{prefix}.weight"))?;
        let b = self.p(&format!("{prefix}.bias"))?;
        self.g.linear(x, w, Some(b))
    }
}

pub(crate) fn normal_tensor<T: Scalar, R: Rng>(shape: Vec<usize>, std: f64, rng: &mut R) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let dist = Normal::new(0.0, std).expect("positive std");
    let data = (0..n).map(|_| T::lit(dist.sample(rng))).collect();
    Tensor::new(shape, data).expect("finite init")
}

pub(crate) fn init_conv<T: Scalar, R: Rng>(p: &mut ParamSet<T>, name: &str, co: usize, ci: usize, k: usize, rng: &mut R) {
    let fan_in = (ci * k * k) as f64;
    p.insert(name, normal_tensor(vec![co, ci, k, k], (1.0 / fan_in).sqrt(), rng));
}

pub(crate) fn init_bn<T: Scalar>(p: &mut ParamSet<T>, prefix: &str, c: usize) {
    p.insert(format!("{prefix}.gamma"), Tensor::full(vec![c], T::one()));
    p.insert(format!("{prefix}.beta"), Tensor::zeros(vec![c]));
    p.insert_buffer(format!("{prefix}.running_mean"), Tensor::zeros(vec![c]));
    p.insert_buffer(format!("{prefix}.running_var"), Tensor::full(vec![c], T::one()));
}

pub(crate) fn init_linear<T: Scalar, R: Rng>(p: &mut ParamSet<T>, prefix: &str, dout: usize, din: usize, rng: &mut R) {
    p.insert(format!("{prefix}.weight"), normal_tensor(vec![dout, din], (1.0 / din as f64).sqrt(), rng));
    p.insert(format!("{prefix}.bias"), Tensor::zeros(vec![dout]));
}

pub(crate) fn init_se<T: Scalar, R: Rng>(p: &mut ParamSet<T>, prefix: &str, cfg: SELayerConfig, rng: &mut R) {
    let b = cfg.bottleneck();
    init_linear(p, &format!("{prefix}.fc1"), b, cfg.channels, rng);
    init_linear(p, &format!("{prefix}.fc2"), cfg.channels, b, rng);
}

/// Registers every parameter and buffer of one block under `prefix`.
pub(crate) fn init_block<T: Scalar, R: Rng>(
    p: &mut ParamSet<T>,
    prefix: &str,
    cfg: &BlockConfig,
    se_reduction: usize,
    rng: &mut R,
) {
    let (ci, co) = (cfg.in_channels, cfg.out_channels);
    match cfg.res2net {
        None => {
            init_conv(p, &format!("{prefix}.conv1.weight"), co, ci, 3, rng);
            init_bn(p, &format!("{prefix}.bn1"), co);
            init_conv(p, &format!("{prefix}.conv2.weight"), co, co, 3, rng);
            init_bn(p, &format!("{prefix}.bn2"), co);
        }
        Some(shape) => {
            let inner = shape.scale * shape.width;
            init_conv(p, &format!("{prefix}.entry.weight"), inner, ci, 1, rng);
            init_bn(p, &format!("{prefix}.entry_bn"), inner);
            for i in 2..=shape.scale {
                init_conv(p, &format!("{prefix}.k{i}.weight"), shape.width, shape.width, 3, rng);
                init_bn(p, &format!("{prefix}.k{i}_bn"), shape.width);
            }
            init_conv(p, &format!("{prefix}.exit.weight"), co, inner, 1, rng);
            init_bn(p, &format!("{prefix}.exit_bn"), co);
            init_se(p, &format!("{prefix}.se"), SELayerConfig::new(co, se_reduction), rng);
        }
    }
    if cfg.has_projected_skip() {
        init_conv(p, &format!("{prefix}.skip.weight"), co, ci, 1, rng);
    }
}

/// Squeeze-and-excitation: global average pool, bottleneck with ReLU,
/// sigmoid gate per channel, channelwise rescale of `x`.
pub fn se_forward<T: Scalar>(ctx: &mut Ctx<'_, T>, x: Var, prefix: &str) -> Result<Var> {
    let squeezed = ctx.g.global_avg_pool(x)?;
    let h = ctx.linear(squeezed, &format!("{prefix}.fc1"))?;
    let h = ctx.g.relu(h)?;
    let h = ctx.linear(h, &format!("{prefix}.fc2"))?;
    let gate = ctx.g.sigmoid(h)?;
    ctx.g.scale_channels(x, gate)
}

fn skip_path<T: Scalar>(ctx: &mut Ctx<'_, T>, x: Var, cfg: &BlockConfig, prefix: &str) -> Result<Var> {
    if cfg.has_projected_skip() {
        ctx.conv(x, &format!("{prefix}.skip.weight"), 0)
    } else {
        Ok(x)
    }
}

fn close_block<T: Scalar>(ctx: &mut Ctx<'_, T>, body: Var, skip: Var, pool: [usize; 2]) -> Result<Var> {
    let y = ctx.g.add(body, skip)?;
    let y = ctx.g.selu(y)?;
    if pool == [1, 1] {
        return Ok(y);
    }
    let window = (pool[0], pool[1]);
    ctx.g.max_pool2d(y, window, window)
}

/// Plain residual block: conv–BN–SeLU–conv–BN, identity or 1×1-projected
/// skip, SeLU, max-pool.
pub fn residual_forward<T: Scalar>(ctx: &mut Ctx<'_, T>, x: Var, cfg: &BlockConfig, prefix: &str) -> Result<Var> {
    let c = ctx.g.shape(x)[1];
    if c != cfg.in_channels {
        return Err(Error::Config(format!(
            "{prefix}: expects {} input channels, got {c}",
            cfg.in_channels
        )));
    }
    let h = ctx.conv(x, &format!("{prefix}.conv1.weight"), 1)?;
    let h = ctx.bn(h, &format!("{prefix}.bn1"))?;
    let h = ctx.g.selu(h)?;
    let h = ctx.conv(h, &format!("{prefix}.conv2.weight"), 1)?;
    let h = ctx.bn(h, &format!("{prefix}.bn2"))?;
    let s = skip_path(ctx, x, cfg, prefix)?;
    close_block(ctx, h, s, cfg.pool)
}

/// One filter `K_i`: 3×3 convolution, batch norm, SeLU.
fn group_filter<T: Scalar>(ctx: &mut Ctx<'_, T>, x: Var, prefix: &str, i: usize) -> Result<Var> {
    let h = ctx.conv(x, &format!("{prefix}.k{i}.weight"), 1)?;
    let h = ctx.bn(h, &format!("{prefix}.k{i}_bn"))?;
    ctx.g.selu(h)
}

/// The hierarchical split of a Res2Net block applied to the entry
/// activation `split_input` of `scale · width` channels. Returns the
/// pre-merge groups:
///
/// - `y_1 = x_1`
/// - `y_2 = K_2(x_2)`
/// - `y_i = K_i(x_i + y_{i-1})` for `2 < i <= s`
pub fn res2net_groups<T: Scalar>(
    ctx: &mut Ctx<'_, T>,
    split_input: Var,
    cfg: &Res2NetBlockConfig,
    prefix: &str,
) -> Result<Vec<Var>> {
    let c = ctx.g.shape(split_input)[1];
    if c != cfg.inner_channels() {
        return Err(Error::Config(format!(
            "{prefix}: {c} channels at the split point, expected scale {} x width {} = {}",
            cfg.scale,
            cfg.width,
            cfg.inner_channels()
        )));
    }
    let mut groups = Vec::with_capacity(cfg.scale);
    for i in 1..=cfg.scale {
        let xi = ctx.g.narrow(split_input, (i - 1) * cfg.width, cfg.width)?;
        let yi = match i {
            1 => xi,
            2 => group_filter(ctx, xi, prefix, i)?,
            _ => {
                let prev = *groups.last().expect("i > 2");
                let z = ctx.g.add(xi, prev)?;
                group_filter(ctx, z, prefix, i)?
            }
        };
        groups.push(yi);
    }
    Ok(groups)
}

/// Res2Net block: 1×1 entry to `s·w` channels, hierarchical group
/// filtering, concatenation, 1×1 exit, SE, skip, SeLU, max-pool.
pub fn res2net_forward<T: Scalar>(ctx: &mut Ctx<'_, T>, x: Var, cfg: &BlockConfig, prefix: &str) -> Result<Var> {
    let shape = cfg
        .res2net
        .ok_or_else(|| Error::Config(format!("{prefix} is not a Res2Net block")))?;
    let c = ctx.g.shape(x)[1];
    if c != cfg.in_channels {
        return Err(Error::Config(format!(
            "{prefix}: expects {} input channels, got {c}",
            cfg.in_channels
        )));
    }
    let r2 = Res2NetBlockConfig {
        scale: shape.scale,
        width: shape.width,
        in_channels: cfg.in_channels,
        out_channels: cfg.out_channels,
    };
    let e = ctx.conv(x, &format!("{prefix}.entry.weight"), 0)?;
    let e = ctx.bn(e, &format!("{prefix}.entry_bn"))?;
    let e = ctx.g.selu(e)?;
    let groups = res2net_groups(ctx, e, &r2, prefix)?;
    let merged = ctx.g.concat(&groups)?;
    let o = ctx.conv(merged, &format!("{prefix}.exit.weight"), 0)?;
    let o = ctx.bn(o, &format!("{prefix}.exit_bn"))?;
    let o = se_forward(ctx, o, &format!("{prefix}.se"))?;
    let s = skip_path(ctx, x, cfg, prefix)?;
    close_block(ctx, o, s, cfg.pool)
}
