// Slice-level numeric kernels shared by the forward and backward passes.

use super::Scalar;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn col_rows(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    pub fn out_plane(&self) -> usize {
        self.ho * self.wo
    }

    /// 1×1, stride 1, no padding: the input plane already is the column
    /// matrix.
    pub fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.sh == 1 && self.sw == 1 && self.ph == 0 && self.pw == 0
    }
}

pub(crate) fn im2col<T: Scalar>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let plane = g.out_plane();
    for c in 0..g.c_in {
        let xc = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oh in 0..g.ho {
                    let ih = (oh * g.sh + ki) as isize - g.ph as isize;
                    let out_row = &mut dst[oh * g.wo..(oh + 1) * g.wo];
                    if ih < 0 || ih >= g.h as isize {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &xc[ih as usize * g.w..(ih as usize + 1) * g.w];
                    for (ow, o) in out_row.iter_mut().enumerate() {
                        let iw = (ow * g.sw + kj) as isize - g.pw as isize;
                        *o = if iw < 0 || iw >= g.w as isize {
                            T::zero()
                        } else {
                            src[iw as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-add of a column matrix back onto the input plane.
pub(crate) fn col2im<T: Scalar>(g: &ConvGeom, cols: &[T], dx: &mut [T]) {
    let plane = g.out_plane();
    for c in 0..g.c_in {
        let dxc = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oh in 0..g.ho {
                    let ih = (oh * g.sh + ki) as isize - g.ph as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    let dst = &mut dxc[ih as usize * g.w..(ih as usize + 1) * g.w];
                    for ow in 0..g.wo {
                        let iw = (ow * g.sw + kj) as isize - g.pw as isize;
                        if iw >= 0 && iw < g.w as isize {
                            dst[iw as usize] += src[oh * g.wo + ow];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(g: &ConvGeom, n: usize, x: &[T], k: &[T], out: &mut [T]) {
    let in_sz = g.c_in * g.h * g.w;
    let out_sz = g.c_out * g.out_plane();
    let rows = g.col_rows();
    let plane = g.out_plane();
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); rows * plane] };
    for b in 0..n {
        let xb = &x[b * in_sz..(b + 1) * in_sz];
        let cols_ref: &[T] = if g.is_pointwise() {
            xb
        } else {
            im2col(g, xb, &mut cols);
            &cols
        };
        T::gemm(
            g.c_out,
            rows,
            plane,
            k,
            rows as isize,
            1,
            cols_ref,
            plane as isize,
            1,
            T::zero(),
            &mut out[b * out_sz..(b + 1) * out_sz],
            plane as isize,
        );
    }
}

/// Accumulates kernel and input gradients of a convolution. Either output
/// may be skipped when its source does not require gradients.
pub(crate) fn conv2d_backward<T: Scalar>(
    g: &ConvGeom,
    n: usize,
    x: &[T],
    k: &[T],
    dy: &[T],
    mut dk: Option<&mut [T]>,
    mut dx: Option<&mut [T]>,
) {
    let in_sz = g.c_in * g.h * g.w;
    let out_sz = g.c_out * g.out_plane();
    let rows = g.col_rows();
    let plane = g.out_plane();
    let pointwise = g.is_pointwise();
    let mut cols = if pointwise || dk.is_none() { Vec::new() } else { vec![T::zero(); rows * plane] };
    let mut dcols = if pointwise || dx.is_none() { Vec::new() } else { vec![T::zero(); rows * plane] };
    for b in 0..n {
        let dyb = &dy[b * out_sz..(b + 1) * out_sz];
        if let Some(dk) = dk.as_deref_mut() {
            let xb = &x[b * in_sz..(b + 1) * in_sz];
            let cols_ref: &[T] = if pointwise {
                xb
            } else {
                im2col(g, xb, &mut cols);
                &cols
            };
            // dk[co, r] += Σ_p dy[co, p] · cols[r, p]
            T::gemm(
                g.c_out,
                plane,
                rows,
                dyb,
                plane as isize,
                1,
                cols_ref,
                1,
                plane as isize,
                T::one(),
                dk,
                rows as isize,
            );
        }
        if let Some(dx) = dx.as_deref_mut() {
            let dxb = &mut dx[b * in_sz..(b + 1) * in_sz];
            if pointwise {
                T::gemm(
                    rows,
                    g.c_out,
                    plane,
                    k,
                    1,
                    rows as isize,
                    dyb,
                    plane as isize,
                    1,
                    T::one(),
                    dxb,
                    plane as isize,
                );
            } else {
                T::gemm(
                    rows,
                    g.c_out,
                    plane,
                    k,
                    1,
                    rows as isize,
                    dyb,
                    plane as isize,
                    1,
                    T::zero(),
                    &mut dcols,
                    plane as isize,
                );
                col2im(g, &dcols, dxb);
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct PoolGeom {
    pub planes: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ho: usize,
    pub wo: usize,
}

/// Returns output values and the flat input index of each window maximum;
/// ties resolve to the first index in row-major order.
pub(crate) fn max_pool_forward<T: Scalar>(g: &PoolGeom, x: &[T]) -> (Vec<T>, Vec<usize>) {
    let mut out = Vec::with_capacity(g.planes * g.ho * g.wo);
    let mut arg = Vec::with_capacity(out.capacity());
    for p in 0..g.planes {
        let base = p * g.h * g.w;
        for oh in 0..g.ho {
            for ow in 0..g.wo {
                let mut best = base + oh * g.sh * g.w + ow * g.sw;
                for i in 0..g.kh {
                    let row = base + (oh * g.sh + i) * g.w + ow * g.sw;
                    for j in 0..g.kw {
                        if x[row + j] > x[best] {
                            best = row + j;
                        }
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}
