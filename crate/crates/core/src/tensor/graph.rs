use std::collections::BTreeMap;

use super::kernels::{self, ConvGeom, PoolGeom};
use super::params::{Gradients, ParamSet};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_2;
const L2_EPS: f64 = 1e-12;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchNormMode {
    Train,
    Eval,
}

enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        geom: ConvGeom,
        batch: usize,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        // Normalized input; in eval mode this holds (x - running_mean) * inv_std.
        xhat: Vec<T>,
        inv_std: Vec<T>,
        mode: BatchNormMode,
    },
    Selu(Var),
    Relu(Var),
    Sigmoid(Var),
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    MatMul(Var, Var),
    L2Normalize {
        input: Var,
        axis: usize,
        norms: Vec<T>,
    },
    Add(Var, Var),
    Narrow {
        input: Var,
        start: usize,
    },
    Concat(Vec<Var>),
    ScaleChannels {
        input: Var,
        gate: Var,
    },
    GlobalAvgPool(Var),
    GlobalMaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Reshape(Var),
    Permute {
        input: Var,
        perm: Vec<usize>,
    },
    Dot {
        input: Var,
        weights: Vec<T>,
    },
    AdditiveMargin {
        input: Var,
        scale: T,
    },
    SoftmaxXent {
        logits: Var,
        // d loss / d logits, computed during the forward pass.
        dlogits: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
}

/// Tape of executed operations. Nodes are appended in execution order, so
/// replaying them back to front visits every node after all of its
/// consumers.
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    bindings: BTreeMap<String, Var>,
    backward_done: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn checked<T: Scalar>(op: &'static str, data: &[T]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

/// Splits a shape at `axis` into (outer, axis length, inner) extents.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn accumulate<T: Scalar>(slot: &mut Option<Vec<T>>, len: usize) -> &mut Vec<T> {
    slot.get_or_insert_with(|| vec![T::zero(); len])
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            bindings: BTreeMap::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated on `v` by [`Graph::backward`], if any reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Constant input; no gradient is tracked.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Binds a named parameter as a trainable leaf. Binding the same name
    /// twice returns the existing node.
    pub fn param(&mut self, params: &ParamSet<T>, name: &str) -> Result<Var> {
        if let Some(&v) = self.bindings.get(name) {
            return Ok(v);
        }
        let t = params
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))?
            .clone();
        let v = self.leaf(t, true);
        self.bindings.insert(name.to_string(), v);
        Ok(v)
    }

    /// Binds an existing node under a parameter name, so later
    /// [`Graph::param`] lookups of `name` resolve to it.
    pub fn bind(&mut self, name: &str, v: Var) -> Result<()> {
        if self.bindings.contains_key(name) {
            return Err(Error::Contract(format!("parameter `{name}` is already bound")));
        }
        self.bindings.insert(name.to_string(), v);
        Ok(())
    }

    pub fn bindings(&self) -> &BTreeMap<String, Var> {
        &self.bindings
    }

    /// Collects the gradient of every bound parameter. Parameters that the
    /// loss does not depend on get zeros.
    pub fn param_grads(&self) -> Gradients<T> {
        let mut out = Gradients::default();
        for (name, &v) in &self.bindings {
            let node = &self.nodes[v.0];
            let g = self.grads[v.0]
                .clone()
                .unwrap_or_else(|| vec![T::zero(); node.value.numel()]);
            out.insert(name.clone(), g);
        }
        out
    }

    fn push(&mut self, value: Tensor<T>, inputs: &[Var], op: Op<T>) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ks = self.shape(kernel).to_vec();
        if xs.len() != 4 || ks.len() != 4 || xs[1] != ks[1] {
            return Err(Error::dim("conv2d", &xs, &ks));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::Contract("conv2d: stride must be >= 1".into()));
        }
        let (hp, wp) = (xs[2] + 2 * padding.0, xs[3] + 2 * padding.1);
        if ks[2] > hp || ks[3] > wp {
            return Err(Error::dim("conv2d", &xs, &ks));
        }
        let geom = ConvGeom {
            c_in: xs[1],
            h: xs[2],
            w: xs[3],
            c_out: ks[0],
            kh: ks[2],
            kw: ks[3],
            sh: stride.0,
            sw: stride.1,
            ph: padding.0,
            pw: padding.1,
            ho: (hp - ks[2]) / stride.0 + 1,
            wo: (wp - ks[3]) / stride.1 + 1,
        };
        let n = xs[0];
        let mut out = vec![T::zero(); n * geom.c_out * geom.out_plane()];
        kernels::conv2d_forward(
            &geom,
            n,
            self.value(input).data(),
            self.value(kernel).data(),
            &mut out,
        );
        checked("conv2d", &out)?;
        let value = Tensor::from_parts(vec![n, geom.c_out, geom.ho, geom.wo], out);
        Ok(self.push(
            value,
            &[input, kernel],
            Op::Conv2d {
                input,
                kernel,
                geom,
                batch: n,
            },
        ))
    }

    /// Per-channel normalization over every axis except axis 1. Train mode
    /// normalizes with batch statistics and folds them into
    /// `running_mean`/`running_var`; eval mode reads the running statistics
    /// only.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running_mean: &mut [T],
        running_var: &mut [T],
        mode: BatchNormMode,
    ) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        if xs.len() < 2 {
            return Err(Error::dim("batch_norm", &xs, self.shape(gamma)));
        }
        let c = xs[1];
        for v in [gamma, beta] {
            if self.value(v).numel() != c {
                return Err(Error::dim("batch_norm", &xs, self.shape(v)));
            }
        }
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::dim("batch_norm", &xs, &[running_mean.len()]));
        }
        let n = xs[0];
        let inner: usize = xs[2..].iter().product();
        let count = n * inner;
        let eps = T::lit(BN_EPS);
        let x = self.value(input).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        let mut inv_std = vec![T::zero(); c];
        let cnt = T::lit(count as f64);
        for ch in 0..c {
            let idx = |bi: usize, i: usize| (bi * c + ch) * inner + i;
            let (mean, istd) = match mode {
                BatchNormMode::Train => {
                    let mut sum = T::zero();
                    for bi in 0..n {
                        for i in 0..inner {
                            sum += x[idx(bi, i)];
                        }
                    }
                    let mean = sum / cnt;
                    let mut ss = T::zero();
                    for bi in 0..n {
                        for i in 0..inner {
                            let d = x[idx(bi, i)] - mean;
                            ss += d * d;
                        }
                    }
                    let var = ss / cnt;
                    let unbiased = if count > 1 { ss / T::lit((count - 1) as f64) } else { var };
                    let mom = T::lit(BN_MOMENTUM);
                    running_mean[ch] = (T::one() - mom) * running_mean[ch] + mom * mean;
                    running_var[ch] = (T::one() - mom) * running_var[ch] + mom * unbiased;
                    (mean, T::one() / (var + eps).sqrt())
                }
                BatchNormMode::Eval => (running_mean[ch], T::one() / (running_var[ch] + eps).sqrt()),
            };
            inv_std[ch] = istd;
            for bi in 0..n {
                for i in 0..inner {
                    let j = idx(bi, i);
                    let h = (x[j] - mean) * istd;
                    xhat[j] = h;
                    out[j] = g[ch] * h + b[ch];
                }
            }
        }
        checked("batch_norm", &out)?;
        let value = Tensor::from_parts(xs, out);
        Ok(self.push(
            value,
            &[input, gamma, beta],
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                mode,
            },
        ))
    }

    fn unary(&mut self, input: Var, name: &'static str, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        let x = self.value(input);
        let out: Vec<T> = x.data().iter().map(|&v| f(v)).collect();
        checked(name, &out)?;
        let value = Tensor::from_parts(x.shape().to_vec(), out);
        Ok(self.push(value, &[input], op))
    }

    pub fn selu(&mut self, input: Var) -> Result<Var> {
        let (l, a) = (T::lit(SELU_LAMBDA), T::lit(SELU_ALPHA));
        self.unary(
            input,
            "selu",
            |v| if v > T::zero() { l * v } else { l * a * (v.exp() - T::one()) },
            Op::Selu(input),
        )
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        self.unary(input, "relu", |v| v.max(T::zero()), Op::Relu(input))
    }

    pub fn sigmoid(&mut self, input: Var) -> Result<Var> {
        self.unary(
            input,
            "sigmoid",
            |v| {
                if v >= T::zero() {
                    T::one() / (T::one() + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (T::one() + e)
                }
            },
            Op::Sigmoid(input),
        )
    }

    pub fn max_pool2d(&mut self, input: Var, window: (usize, usize), stride: (usize, usize)) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        if xs.len() != 4 {
            return Err(Error::dim("max_pool2d", &xs, &[window.0, window.1]));
        }
        if window.0 == 0 || window.1 == 0 || stride.0 == 0 || stride.1 == 0 {
            return Err(Error::Contract("max_pool2d: window and stride must be >= 1".into()));
        }
        if window.0 > xs[2] || window.1 > xs[3] {
            return Err(Error::dim("max_pool2d", &xs, &[window.0, window.1]));
        }
        let geom = PoolGeom {
            planes: xs[0] * xs[1],
            h: xs[2],
            w: xs[3],
            kh: window.0,
            kw: window.1,
            sh: stride.0,
            sw: stride.1,
            ho: (xs[2] - window.0) / stride.0 + 1,
            wo: (xs[3] - window.1) / stride.1 + 1,
        };
        let (out, argmax) = kernels::max_pool_forward(&geom, self.value(input).data());
        let value = Tensor::from_parts(vec![xs[0], xs[1], geom.ho, geom.wo], out);
        Ok(self.push(value, &[input], Op::MaxPool { input, argmax }))
    }

    /// `input[N, Din] · weightᵀ + bias` with `weight[Dout, Din]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(Error::dim("linear", &xs, &ws));
        }
        let (n, din, dout) = (xs[0], xs[1], ws[0]);
        let mut out = vec![T::zero(); n * dout];
        if let Some(b) = bias {
            let bv = self.value(b);
            if bv.numel() != dout {
                return Err(Error::dim("linear", &ws, bv.shape()));
            }
            for row in out.chunks_mut(dout) {
                row.copy_from_slice(bv.data());
            }
        }
        T::gemm(
            n,
            din,
            dout,
            self.value(input).data(),
            din as isize,
            1,
            self.value(weight).data(),
            1,
            din as isize,
            T::one(),
            &mut out,
            dout as isize,
        );
        checked("linear", &out)?;
        let value = Tensor::from_parts(vec![n, dout], out);
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        Ok(self.push(value, &inputs, Op::Linear { input, weight, bias }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (as_, bs) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if as_.len() != 2 || bs.len() != 2 || as_[1] != bs[0] {
            return Err(Error::dim("matmul", &as_, &bs));
        }
        let (m, k, n) = (as_[0], as_[1], bs[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            self.value(a).data(),
            k as isize,
            1,
            self.value(b).data(),
            n as isize,
            1,
            T::zero(),
            &mut out,
            n as isize,
        );
        checked("matmul", &out)?;
        Ok(self.push(Tensor::from_parts(vec![m, n], out), &[a, b], Op::MatMul(a, b)))
    }

    /// Scales every fibre along `axis` to unit Euclidean norm.
    pub fn l2_normalize(&mut self, input: Var, axis: usize) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        if axis >= xs.len() {
            return Err(Error::dim("l2_normalize", &xs, &[axis]));
        }
        let (outer, len, inner) = split_axis(&xs, axis);
        let x = self.value(input).data();
        let mut out = vec![T::zero(); x.len()];
        let mut norms = vec![T::zero(); outer * inner];
        let eps = T::lit(L2_EPS);
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * len + k) * inner + i;
                let ss: T = (0..len).map(|k| x[at(k)] * x[at(k)]).sum();
                let r = (ss + eps).sqrt();
                norms[o * inner + i] = r;
                for k in 0..len {
                    out[at(k)] = x[at(k)] / r;
                }
            }
        }
        checked("l2_normalize", &out)?;
        let value = Tensor::from_parts(xs, out);
        Ok(self.push(value, &[input], Op::L2Normalize { input, axis, norms }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim("add", self.shape(a), self.shape(b)));
        }
        let out: Vec<T> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        checked("add", &out)?;
        let value = Tensor::from_parts(self.shape(a).to_vec(), out);
        Ok(self.push(value, &[a, b], Op::Add(a, b)))
    }

    /// Slice `len` entries of axis 1 starting at `start`.
    pub fn narrow(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        if xs.len() < 2 || len == 0 || start + len > xs[1] {
            return Err(Error::dim("narrow", &xs, &[start, len]));
        }
        let (outer, c, inner) = split_axis(&xs, 1);
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&x[(o * c + start) * inner..(o * c + start + len) * inner]);
        }
        let mut shape = xs;
        shape[1] = len;
        Ok(self.push(Tensor::from_parts(shape, out), &[input], Op::Narrow { input, start }))
    }

    /// Concatenation along axis 1.
    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        if base.len() < 2 {
            return Err(Error::dim("concat", &base, &[]));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != base.len() || s[0] != base[0] || s[2..] != base[2..] {
                return Err(Error::dim("concat", &base, s));
            }
            total += s[1];
        }
        let outer = base[0];
        let inner: usize = base[2..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let c = t.shape()[1];
                out.extend_from_slice(&t.data()[o * c * inner..(o + 1) * c * inner]);
            }
        }
        let mut shape = base;
        shape[1] = total;
        Ok(self.push(Tensor::from_parts(shape, out), inputs, Op::Concat(inputs.to_vec())))
    }

    /// `input[N, C, ...] * gate[N, C]` broadcast over trailing axes.
    pub fn scale_channels(&mut self, input: Var, gate: Var) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let gs = self.shape(gate).to_vec();
        if xs.len() < 2 || gs.len() != 2 || gs[0] != xs[0] || gs[1] != xs[1] {
            return Err(Error::dim("scale_channels", &xs, &gs));
        }
        let inner: usize = xs[2..].iter().product();
        let gv = self.value(gate).data();
        let out: Vec<T> = self
            .value(input)
            .data()
            .chunks(inner)
            .zip(gv)
            .flat_map(|(plane, &s)| plane.iter().map(move |&v| v * s))
            .collect();
        checked("scale_channels", &out)?;
        Ok(self.push(Tensor::from_parts(xs, out), &[input, gate], Op::ScaleChannels { input, gate }))
    }

    /// Mean over all axes after the first two: `[N, C, ...] -> [N, C]`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        if xs.len() < 3 {
            return Err(Error::dim("global_avg_pool", &xs, &[]));
        }
        let inner: usize = xs[2..].iter().product();
        let scale = T::one() / T::lit(inner as f64);
        let out: Vec<T> = self
            .value(input)
            .data()
            .chunks(inner)
            .map(|p| p.iter().copied().sum::<T>() * scale)
            .collect();
        Ok(self.push(Tensor::from_parts(xs[..2].to_vec(), out), &[input], Op::GlobalAvgPool(input)))
    }

    /// Maximum over all axes after the first two: `[N, C, ...] -> [N, C]`.
    pub fn global_max_pool(&mut self, input: Var) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        if xs.len() < 3 {
            return Err(Error::dim("global_max_pool", &xs, &[]));
        }
        let inner: usize = xs[2..].iter().product();
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(xs[0] * xs[1]);
        let mut argmax = Vec::with_capacity(out.capacity());
        for (p, plane) in x.chunks(inner).enumerate() {
            let mut best = 0;
            for (i, &v) in plane.iter().enumerate() {
                if v > plane[best] {
                    best = i;
                }
            }
            out.push(plane[best]);
            argmax.push(p * inner + best);
        }
        Ok(self.push(
            Tensor::from_parts(xs[..2].to_vec(), out),
            &[input],
            Op::GlobalMaxPool { input, argmax },
        ))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape.to_vec())?;
        Ok(self.push(value, &[input], Op::Reshape(input)))
    }

    /// Axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, input: Var, perm: &[usize]) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let mut seen = vec![false; xs.len()];
        if perm.len() != xs.len() || perm.iter().any(|&p| p >= xs.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::dim("permute", &xs, perm));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| xs[p]).collect();
        let out = permute_data(self.value(input).data(), &xs, perm);
        Ok(self.push(
            Tensor::from_parts(out_shape, out),
            &[input],
            Op::Permute {
                input,
                perm: perm.to_vec(),
            },
        ))
    }

    /// Scalar `Σ input ⊙ weights` against fixed weights.
    pub fn dot_const(&mut self, input: Var, weights: Vec<T>) -> Result<Var> {
        let x = self.value(input);
        if x.numel() != weights.len() {
            return Err(Error::dim("dot_const", x.shape(), &[weights.len()]));
        }
        let s: T = x.data().iter().zip(&weights).map(|(&a, &b)| a * b).sum();
        checked("dot_const", &[s])?;
        Ok(self.push(Tensor::scalar(s), &[input], Op::Dot { input, weights }))
    }

    /// `scale · (cos - margin · onehot(label))` over `[n, c]` cosine logits.
    pub fn additive_margin(&mut self, input: Var, labels: &[usize], margin: T, scale: T) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        if xs.len() != 2 || xs[0] != labels.len() {
            return Err(Error::dim("additive_margin", &xs, &[labels.len()]));
        }
        let c = xs[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Input(format!("label {bad} outside [0, {c})")));
        }
        let mut out: Vec<T> = self.value(input).data().iter().map(|&v| v * scale).collect();
        for (i, &l) in labels.iter().enumerate() {
            out[i * c + l] -= scale * margin;
        }
        checked("additive_margin", &out)?;
        Ok(self.push(Tensor::from_parts(xs, out), &[input], Op::AdditiveMargin { input, scale }))
    }

    /// Class-weighted mean softmax cross-entropy over `[n, c]` logits,
    /// normalized by the sum of applied weights. `None` weights every class
    /// equally, i.e. the plain batch mean.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize], class_weights: Option<&[T]>) -> Result<Var> {
        let xs = self.shape(logits).to_vec();
        if xs.len() != 2 || xs[0] != labels.len() {
            return Err(Error::dim("softmax_cross_entropy", &xs, &[labels.len()]));
        }
        let (n, c) = (xs[0], xs[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Input(format!("label {bad} outside [0, {c})")));
        }
        if let Some(w) = class_weights {
            if w.len() != c {
                return Err(Error::dim("softmax_cross_entropy", &xs, &[w.len()]));
            }
            if w.iter().any(|&v| !(v > T::zero())) {
                return Err(Error::Config("class weights must be positive".into()));
            }
        }
        let z = self.value(logits).data();
        let weight_of = |l: usize| class_weights.map_or(T::one(), |w| w[l]);
        let total_w: T = labels.iter().map(|&l| weight_of(l)).sum();
        let mut loss = T::zero();
        let mut dlogits = vec![T::zero(); n * c];
        for (i, &l) in labels.iter().enumerate() {
            let row = &z[i * c..(i + 1) * c];
            let (am, mx) = row
                .iter()
                .copied()
                .enumerate()
                .fold((0, T::neg_infinity()), |(bi, bv), (j, v)| if v > bv { (j, v) } else { (bi, bv) });
            // ln Σ exp(v - mx) as ln1p of the non-max terms keeps tiny
            // losses accurate to the last bits.
            let rest: T = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != am)
                .map(|(_, &v)| (v - mx).exp())
                .sum();
            let log_norm = rest.ln_1p();
            let lse = mx + log_norm;
            let wi = weight_of(l) / total_w;
            loss += wi * ((mx - row[l]) + log_norm);
            for j in 0..c {
                let p = (row[j] - lse).exp();
                let target = if j == l { T::one() } else { T::zero() };
                dlogits[i * c + j] = wi * (p - target);
            }
        }
        checked("softmax_cross_entropy", &[loss])?;
        Ok(self.push(Tensor::scalar(loss), &[logits], Op::SoftmaxXent { logits, dlogits }))
    }

    /// Reverse-mode sweep from a scalar `loss`. Every node that requires
    /// gradients and is reachable from the loss receives its total
    /// derivative. A graph supports exactly one backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Contract("backward already ran on this graph".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_done = true;
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(grad) = self.grads[i].take() else {
                continue;
            };
            self.backward_node(i, &grad);
            self.grads[i] = Some(grad);
        }
        Ok(())
    }

    fn backward_node(&mut self, i: usize, dy: &[T]) {
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        let node = &nodes[i];
        let wants = |v: Var, nodes: &[Node<T>]| nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                geom,
                batch,
            } => {
                let (need_x, need_k) = (wants(*input, nodes), wants(*kernel, nodes));
                let x = nodes[input.0].value.data();
                let k = nodes[kernel.0].value.data();
                let mut dk = need_k.then(|| vec![T::zero(); k.len()]);
                let mut dx = need_x.then(|| vec![T::zero(); x.len()]);
                kernels::conv2d_backward(geom, *batch, &x, &k, dy, dk.as_deref_mut(), dx.as_deref_mut());
                if let Some(dk) = dk {
                    add_into(&mut grads[kernel.0], &dk);
                }
                if let Some(dx) = dx {
                    add_into(&mut grads[input.0], &dx);
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                mode,
            } => {
                let shape = node.value.shape();
                let c = shape[1];
                let n = shape[0];
                let inner: usize = shape[2..].iter().product();
                let count = T::lit((n * inner) as f64);
                let g = nodes[gamma.0].value.data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                let mut dx = vec![T::zero(); dy.len()];
                for ch in 0..c {
                    let idx = |bi: usize, i: usize| (bi * c + ch) * inner + i;
                    let (mut sdy, mut sdyx) = (T::zero(), T::zero());
                    for bi in 0..n {
                        for i in 0..inner {
                            let j = idx(bi, i);
                            sdy += dy[j];
                            sdyx += dy[j] * xhat[j];
                        }
                    }
                    dgamma[ch] = sdyx;
                    dbeta[ch] = sdy;
                    let scale = g[ch] * inv_std[ch];
                    for bi in 0..n {
                        for i in 0..inner {
                            let j = idx(bi, i);
                            dx[j] = match mode {
                                BatchNormMode::Train => {
                                    scale * (dy[j] - sdy / count - xhat[j] * sdyx / count)
                                }
                                BatchNormMode::Eval => scale * dy[j],
                            };
                        }
                    }
                }
                if wants(*gamma, nodes) {
                    add_into(&mut grads[gamma.0], &dgamma);
                }
                if wants(*beta, nodes) {
                    add_into(&mut grads[beta.0], &dbeta);
                }
                if wants(*input, nodes) {
                    add_into(&mut grads[input.0], &dx);
                }
            }
            Op::Selu(input) => {
                let (l, a) = (T::lit(SELU_LAMBDA), T::lit(SELU_ALPHA));
                let x = nodes[input.0].value.data();
                let d: Vec<T> = x
                    .iter()
                    .zip(dy)
                    .map(|(&v, &g)| if v > T::zero() { g * l } else { g * l * a * v.exp() })
                    .collect();
                add_into(&mut grads[input.0], &d);
            }
            Op::Relu(input) => {
                let x = nodes[input.0].value.data();
                let d: Vec<T> = x
                    .iter()
                    .zip(dy)
                    .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
                    .collect();
                add_into(&mut grads[input.0], &d);
            }
            Op::Sigmoid(input) => {
                let y = node.value.data();
                let d: Vec<T> = y.iter().zip(dy).map(|(&s, &g)| g * s * (T::one() - s)).collect();
                add_into(&mut grads[input.0], &d);
            }
            Op::MaxPool { input, argmax } | Op::GlobalMaxPool { input, argmax } => {
                let len = nodes[input.0].value.numel();
                let gx = accumulate(&mut grads[input.0], len);
                for (&a, &g) in argmax.iter().zip(dy) {
                    gx[a] += g;
                }
            }
            Op::Linear { input, weight, bias } => {
                let xs = nodes[input.0].value.shape().to_vec();
                let (n, din) = (xs[0], xs[1]);
                let dout = node.value.shape()[1];
                if wants(*input, nodes) {
                    let w = nodes[weight.0].value.data();
                    let gx = accumulate(&mut grads[input.0], n * din);
                    T::gemm(n, dout, din, dy, dout as isize, 1, &w, din as isize, 1, T::one(), gx, din as isize);
                }
                if wants(*weight, nodes) {
                    let x = nodes[input.0].value.data();
                    let gw = accumulate(&mut grads[weight.0], dout * din);
                    T::gemm(dout, n, din, dy, 1, dout as isize, &x, din as isize, 1, T::one(), gw, din as isize);
                }
                if let Some(b) = bias {
                    if wants(*b, nodes) {
                        let gb = accumulate(&mut grads[b.0], dout);
                        for row in dy.chunks(dout) {
                            for (acc, &g) in gb.iter_mut().zip(row) {
                                *acc += g;
                            }
                        }
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = (nodes[a.0].value.shape()[0], nodes[a.0].value.shape()[1]);
                let n = nodes[b.0].value.shape()[1];
                if wants(*a, nodes) {
                    let bv = nodes[b.0].value.data();
                    let ga = accumulate(&mut grads[a.0], m * k);
                    T::gemm(m, n, k, dy, n as isize, 1, &bv, 1, n as isize, T::one(), ga, k as isize);
                }
                if wants(*b, nodes) {
                    let av = nodes[a.0].value.data();
                    let gb = accumulate(&mut grads[b.0], k * n);
                    T::gemm(k, m, n, &av, 1, k as isize, dy, n as isize, 1, T::one(), gb, n as isize);
                }
            }
            Op::L2Normalize { input, axis, norms } => {
                let shape = node.value.shape();
                let (outer, len, inner) = split_axis(shape, *axis);
                let y = node.value.data();
                let gx = accumulate(&mut grads[input.0], y.len());
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| (o * len + k) * inner + i;
                        let r = norms[o * inner + i];
                        let yg: T = (0..len).map(|k| y[at(k)] * dy[at(k)]).sum();
                        for k in 0..len {
                            gx[at(k)] += (dy[at(k)] - y[at(k)] * yg) / r;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if wants(*v, nodes) {
                        add_into(&mut grads[v.0], dy);
                    }
                }
            }
            Op::Narrow { input, start } => {
                let xs = nodes[input.0].value.shape().to_vec();
                let (outer, c, inner) = split_axis(&xs, 1);
                let len = node.value.shape()[1];
                let gx = accumulate(&mut grads[input.0], outer * c * inner);
                for o in 0..outer {
                    let dst = &mut gx[(o * c + start) * inner..(o * c + start + len) * inner];
                    for (d, &g) in dst.iter_mut().zip(&dy[o * len * inner..(o + 1) * len * inner]) {
                        *d += g;
                    }
                }
            }
            Op::Concat(inputs) => {
                let shape = node.value.shape();
                let (outer, total, inner) = split_axis(shape, 1);
                let mut offset = 0;
                for v in inputs {
                    let c = nodes[v.0].value.shape()[1];
                    if wants(*v, nodes) {
                        let gx = accumulate(&mut grads[v.0], outer * c * inner);
                        for o in 0..outer {
                            let src = &dy[(o * total + offset) * inner..(o * total + offset + c) * inner];
                            for (d, &g) in gx[o * c * inner..(o + 1) * c * inner].iter_mut().zip(src) {
                                *d += g;
                            }
                        }
                    }
                    offset += c;
                }
            }
            Op::ScaleChannels { input, gate } => {
                let shape = node.value.shape();
                let inner: usize = shape[2..].iter().product();
                if wants(*gate, nodes) {
                    let x = nodes[input.0].value.data();
                    let gs = accumulate(&mut grads[gate.0], shape[0] * shape[1]);
                    for (p, acc) in gs.iter_mut().enumerate() {
                        let s: T = (0..inner).map(|i| x[p * inner + i] * dy[p * inner + i]).sum();
                        *acc += s;
                    }
                }
                if wants(*input, nodes) {
                    let gv = nodes[gate.0].value.data();
                    let gx = accumulate(&mut grads[input.0], dy.len());
                    for (p, &s) in gv.iter().enumerate() {
                        for i in 0..inner {
                            gx[p * inner + i] += dy[p * inner + i] * s;
                        }
                    }
                }
            }
            Op::GlobalAvgPool(input) => {
                let xs = nodes[input.0].value.shape().to_vec();
                let inner: usize = xs[2..].iter().product();
                let scale = T::one() / T::lit(inner as f64);
                let gx = accumulate(&mut grads[input.0], xs.iter().product());
                for (p, &g) in dy.iter().enumerate() {
                    for v in &mut gx[p * inner..(p + 1) * inner] {
                        *v += g * scale;
                    }
                }
            }
            Op::Reshape(input) => add_into(&mut grads[input.0], dy),
            Op::Permute { input, perm } => {
                let mut inverse = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inverse[p] = i;
                }
                let d = permute_data(dy, node.value.shape(), &inverse);
                add_into(&mut grads[input.0], &d);
            }
            Op::Dot { input, weights } => {
                let g = dy[0];
                let d: Vec<T> = weights.iter().map(|&w| w * g).collect();
                add_into(&mut grads[input.0], &d);
            }
            Op::AdditiveMargin { input, scale } => {
                let d: Vec<T> = dy.iter().map(|&g| g * *scale).collect();
                add_into(&mut grads[input.0], &d);
            }
            Op::SoftmaxXent { logits, dlogits } => {
                let g = dy[0];
                let d: Vec<T> = dlogits.iter().map(|&v| v * g).collect();
                add_into(&mut grads[logits.0], &d);
            }
        }
    }
}

fn add_into<T: Scalar>(slot: &mut Option<Vec<T>>, d: &[T]) {
    match slot {
        Some(g) => {
            for (a, &b) in g.iter_mut().zip(d) {
                *a += b;
            }
        }
        None => *slot = Some(d.to_vec()),
    }
}

fn permute_data<T: Scalar>(x: &[T], shape: &[usize], perm: &[usize]) -> Vec<T> {
    let rank = shape.len();
    let mut in_strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(x.len());
    let mut idx = vec![0usize; rank];
    for _ in 0..x.len() {
        let src: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        out.push(x[src]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    out
}
