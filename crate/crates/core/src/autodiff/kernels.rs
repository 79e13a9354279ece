//! Raw numeric kernels behind the tape primitives. None of these record
//! anything; they operate on flat row-major buffers.

use crate::error::{Error, Result};
use crate::tensor::{numel, Real};

/// Right-aligned broadcast of two shapes.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[i] = acc;
        acc *= shape[i];
    }
    strides
}

/// Strides of `shape` viewed inside `out` (zero on broadcast axes).
fn aligned_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = contiguous_strides(shape);
    let offset = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < offset || shape[i - offset] == 1 {
                0
            } else {
                own[i - offset]
            }
        })
        .collect()
}

/// Visits every element of `out` in row-major order together with the
/// matching offsets into two broadcast operands. The callback receives
/// whole innermost rows: `(out_start, a_start, a_step, b_start, b_step, len)`.
fn for_each_row(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize, usize, usize, usize),
) {
    let rank = out.len();
    if rank == 0 {
        f(0, 0, 0, 0, 0, 1);
        return;
    }
    let inner = out[rank - 1];
    let (ia, ib) = (sa[rank - 1], sb[rank - 1]);
    let rows = numel(&out[..rank - 1]);
    let mut idx = vec![0usize; rank - 1];
    let (mut oa, mut ob) = (0usize, 0usize);
    for r in 0..rows {
        f(r * inner, oa, ia, ob, ib, inner);
        // advance the outer multi-index
        for d in (0..rank - 1).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out[d] {
                break;
            }
            oa -= sa[d] * out[d];
            ob -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

pub fn binary<T: Real>(
    op: &'static str,
    a: &[T],
    sa: &[usize],
    b: &[T],
    sb: &[usize],
    f: impl Fn(T, T) -> T,
) -> Result<(Vec<usize>, Vec<T>)> {
    if sa == sb {
        return Ok((sa.to_vec(), a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()));
    }
    if b.len() == 1 && sa.len() >= sb.len() {
        let y = b[0];
        return Ok((sa.to_vec(), a.iter().map(|&x| f(x, y)).collect()));
    }
    let out = broadcast_shape(sa, sb).ok_or_else(|| Error::ShapeMismatch {
        op,
        lhs: sa.to_vec(),
        rhs: sb.to_vec(),
    })?;
    let stra = aligned_strides(sa, &out);
    let strb = aligned_strides(sb, &out);
    let mut data = vec![T::zero(); numel(&out)];
    for_each_row(&out, &stra, &strb, |o, pa, da, pb, db, len| {
        for j in 0..len {
            data[o + j] = f(a[pa + j * da], b[pb + j * db]);
        }
    });
    Ok((out, data))
}

pub fn broadcast_to<T: Real>(x: &[T], from: &[usize], to: &[usize]) -> Result<Vec<T>> {
    match broadcast_shape(from, to) {
        Some(s) if s == to => {}
        _ => {
            return Err(Error::ShapeMismatch {
                op: "broadcast_to",
                lhs: from.to_vec(),
                rhs: to.to_vec(),
            })
        }
    }
    if from == to {
        return Ok(x.to_vec());
    }
    let sx = aligned_strides(from, to);
    let zero = vec![0; to.len()];
    let mut data = vec![T::zero(); numel(to)];
    for_each_row(to, &sx, &zero, |o, px, dx, _, _, len| {
        for j in 0..len {
            data[o + j] = x[px + j * dx];
        }
    });
    Ok(data)
}

/// Sums `x` down to `to`, which must broadcast back to `from`.
pub fn sum_to<T: Real>(x: &[T], from: &[usize], to: &[usize]) -> Result<Vec<T>> {
    match broadcast_shape(to, from) {
        Some(s) if s == from => {}
        _ => {
            return Err(Error::ShapeMismatch {
                op: "sum_to",
                lhs: from.to_vec(),
                rhs: to.to_vec(),
            })
        }
    }
    if from == to {
        return Ok(x.to_vec());
    }
    let st = aligned_strides(to, from);
    let zero = vec![0; from.len()];
    let mut acc = vec![0f64; numel(to)];
    for_each_row(from, &st, &zero, |o, pt, dt, _, _, len| {
        for j in 0..len {
            acc[pt + j * dt] += x[o + j].as_f64();
        }
    });
    Ok(acc.into_iter().map(T::of_f64).collect())
}

pub fn transpose2d<T: Real>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

pub fn matmul<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    T::gemm(
        m,
        k,
        n,
        T::one(),
        a,
        k as isize,
        1,
        b,
        n as isize,
        1,
        T::zero(),
        &mut c,
        n as isize,
        1,
    );
    c
}

/// Geometry of a 2-D cross-correlation over an NCHW batch.
///
/// Input position for output `(oy, ox)` and tap `(ky, kx)` is
/// `(oy * stride - pad_top + ky, ox * stride - pad_left + kx)`; anything
/// outside the input is zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_c: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    /// "Same" padding: output extent is `ceil(in / stride)`, with the extra
    /// padding row/column (if any) placed at the bottom/right.
    pub fn same(in_c: usize, out_c: usize, k: usize, stride: usize, in_h: usize, in_w: usize) -> Result<Self> {
        if stride == 0 || k == 0 {
            return Err(Error::InvalidArgument(format!("kernel {k} / stride {stride} must be positive")));
        }
        let out_h = in_h.div_ceil(stride);
        let out_w = in_w.div_ceil(stride);
        let pad_h = ((out_h - 1) * stride + k).saturating_sub(in_h);
        let pad_w = ((out_w - 1) * stride + k).saturating_sub(in_w);
        let g = Self {
            in_c,
            out_c,
            kh: k,
            kw: k,
            stride,
            pad_top: pad_h / 2,
            pad_left: pad_w / 2,
            in_h,
            in_w,
            out_h,
            out_w,
        };
        g.validate()?;
        Ok(g)
    }

    /// No padding.
    pub fn valid(in_c: usize, out_c: usize, k: usize, stride: usize, in_h: usize, in_w: usize) -> Result<Self> {
        if stride == 0 || k == 0 {
            return Err(Error::InvalidArgument(format!("kernel {k} / stride {stride} must be positive")));
        }
        if k > in_h || k > in_w {
            return Err(Error::InvalidShape {
                op: "conv2d",
                detail: format!("kernel {k} larger than input {in_h}x{in_w}"),
            });
        }
        let g = Self {
            in_c,
            out_c,
            kh: k,
            kw: k,
            stride,
            pad_top: 0,
            pad_left: 0,
            in_h,
            in_w,
            out_h: (in_h - k) / stride + 1,
            out_w: (in_w - k) / stride + 1,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let pad_bottom = ((self.out_h.max(1) - 1) * self.stride + self.kh) as isize
            - self.in_h as isize
            - self.pad_top as isize;
        let pad_right = ((self.out_w.max(1) - 1) * self.stride + self.kw) as isize
            - self.in_w as isize
            - self.pad_left as isize;
        if self.kh > self.in_h + self.pad_top + pad_bottom.max(0) as usize
            || self.kw > self.in_w + self.pad_left + pad_right.max(0) as usize
        {
            return Err(Error::InvalidShape {
                op: "conv2d",
                detail: format!("kernel {}x{} larger than padded input", self.kh, self.kw),
            });
        }
        if self.out_h == 0 || self.out_w == 0 || self.in_c == 0 || self.out_c == 0 {
            return Err(Error::InvalidShape {
                op: "conv2d",
                detail: format!("degenerate geometry {self:?}"),
            });
        }
        Ok(())
    }

    pub fn input_shape(&self, batch: usize) -> [usize; 4] {
        [batch, self.in_c, self.in_h, self.in_w]
    }

    pub fn output_shape(&self, batch: usize) -> [usize; 4] {
        [batch, self.out_c, self.out_h, self.out_w]
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_c, self.in_c, self.kh, self.kw]
    }

    fn patch_len(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad_top == 0 && self.pad_left == 0
            && self.in_h == self.out_h && self.in_w == self.out_w
    }

    /// Unfolds one image into a `(in_c*kh*kw) x (out_h*out_w)` column matrix.
    fn im2col<T: Real>(&self, x: &[T], cols: &mut [T]) {
        let p = self.positions();
        for c in 0..self.in_c {
            let plane = &x[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ky) as isize - self.pad_top as isize;
                        let line = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                        if iy < 0 || iy >= self.in_h as isize {
                            line.iter_mut().for_each(|v| *v = T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.in_w..(iy as usize + 1) * self.in_w];
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad_left as isize;
                            *v = if ix < 0 || ix >= self.in_w as isize {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Self::im2col`]: scatters-adds columns back into an image.
    fn col2im<T: Real>(&self, cols: &[T], x: &mut [T]) {
        let p = self.positions();
        for c in 0..self.in_c {
            let plane = &mut x[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ky) as isize - self.pad_top as isize;
                        if iy < 0 || iy >= self.in_h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.in_w..(iy as usize + 1) * self.in_w];
                        let line = &src[oy * self.out_w..(oy + 1) * self.out_w];
                        for (ox, &v) in line.iter().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad_left as isize;
                            if ix >= 0 && (ix as usize) < self.in_w {
                                dst[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d<T: Real>(g: &ConvGeom, x: &[T], w: &[T], batch: usize) -> Vec<T> {
    let (k, p) = (g.patch_len(), g.positions());
    let in_size = g.in_c * g.in_h * g.in_w;
    let out_size = g.out_c * p;
    let mut y = vec![T::zero(); batch * out_size];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); k * p] };
    for b in 0..batch {
        let xb = &x[b * in_size..(b + 1) * in_size];
        let src: &[T] = if g.is_pointwise() {
            xb
        } else {
            g.im2col(xb, &mut cols);
            &cols
        };
        T::gemm(
            g.out_c,
            k,
            p,
            T::one(),
            w,
            k as isize,
            1,
            src,
            p as isize,
            1,
            T::zero(),
            &mut y[b * out_size..(b + 1) * out_size],
            p as isize,
            1,
        );
    }
    y
}

/// Gradient of [`conv2d`] with respect to its input (equivalently, a
/// transposed convolution of `gy` by `w`).
pub fn conv2d_input_grad<T: Real>(g: &ConvGeom, gy: &[T], w: &[T], batch: usize) -> Vec<T> {
    let (k, p) = (g.patch_len(), g.positions());
    let in_size = g.in_c * g.in_h * g.in_w;
    let out_size = g.out_c * p;
    let mut gx = vec![T::zero(); batch * in_size];
    let mut cols = vec![T::zero(); k * p];
    for b in 0..batch {
        let gyb = &gy[b * out_size..(b + 1) * out_size];
        let gxb = &mut gx[b * in_size..(b + 1) * in_size];
        if g.is_pointwise() {
            T::gemm(k, g.out_c, p, T::one(), w, 1, k as isize, gyb, p as isize, 1, T::zero(), gxb, p as isize, 1);
            continue;
        }
        // cols = w^T * gy
        T::gemm(
            k,
            g.out_c,
            p,
            T::one(),
            w,
            1,
            k as isize,
            gyb,
            p as isize,
            1,
            T::zero(),
            &mut cols,
            p as isize,
            1,
        );
        g.col2im(&cols, gxb);
    }
    gx
}

/// Gradient of [`conv2d`] with respect to its weight.
pub fn conv2d_weight_grad<T: Real>(g: &ConvGeom, x: &[T], gy: &[T], batch: usize) -> Vec<T> {
    let (k, p) = (g.patch_len(), g.positions());
    let in_size = g.in_c * g.in_h * g.in_w;
    let out_size = g.out_c * p;
    let mut gw = vec![T::zero(); g.out_c * k];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); k * p] };
    for b in 0..batch {
        let xb = &x[b * in_size..(b + 1) * in_size];
        let src: &[T] = if g.is_pointwise() {
            xb
        } else {
            g.im2col(xb, &mut cols);
            &cols
        };
        // gw += gy * cols^T
        T::gemm(
            g.out_c,
            p,
            k,
            T::one(),
            &gy[b * out_size..(b + 1) * out_size],
            p as isize,
            1,
            src,
            1,
            p as isize,
            T::one(),
            &mut gw,
            k as isize,
            1,
        );
    }
    gw
}

pub fn gather<T: Real>(x: &[T], index: &[usize]) -> Vec<T> {
    index.iter().map(|&i| x[i]).collect()
}

pub fn scatter_add<T: Real>(x: &[T], index: &[usize], out_len: usize) -> Vec<T> {
    let mut out = vec![T::zero(); out_len];
    for (&i, &v) in index.iter().zip(x) {
        out[i] += v;
    }
    out
}

/// `(outer, axis_len, inner)` decomposition of a shape around `axis`.
pub fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        numel(&shape[..axis]),
        shape[axis],
        numel(&shape[axis + 1..]),
    )
}

pub fn concat<T: Real>(parts: &[(&[T], &[usize])], axis: usize) -> (Vec<usize>, Vec<T>) {
    let mut shape = parts[0].1.to_vec();
    shape[axis] = parts.iter().map(|(_, s)| s[axis]).sum();
    let (outer, total, inner) = split_axis(&shape, axis);
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (data, s) in parts {
            let chunk = s[axis] * inner;
            out.extend_from_slice(&data[o * chunk..(o + 1) * chunk]);
        }
    }
    (shape, out)
}

pub fn narrow<T: Real>(x: &[T], shape: &[usize], axis: usize, start: usize, len: usize) -> Vec<T> {
    let (outer, full, inner) = split_axis(shape, axis);
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * full + start) * inner;
        out.extend_from_slice(&x[base..base + len * inner]);
    }
    out
}

/// Places `x` at `start` along `axis` inside a zero tensor of extent `full`.
pub fn embed<T: Real>(x: &[T], shape: &[usize], axis: usize, start: usize, full: usize) -> Vec<T> {
    let (outer, len, inner) = split_axis(shape, axis);
    let mut out = vec![T::zero(); outer * full * inner];
    for o in 0..outer {
        let base = (o * full + start) * inner;
        out[base..base + len * inner].copy_from_slice(&x[o * len * inner..(o + 1) * len * inner]);
    }
    out
}
