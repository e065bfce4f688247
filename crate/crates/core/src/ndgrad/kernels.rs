//! Raw array kernels behind the convolution and resize ops.

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub padding: usize,
    pub stride: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn patch(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    pub fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    pub fn in_sample(&self) -> usize {
        self.cin * self.h * self.w
    }

    pub fn out_sample(&self) -> usize {
        self.cout * self.oh * self.ow
    }

    /// 1x1, stride 1, no padding: the input sample already is the column matrix.
    pub fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.padding == 0
    }

    pub fn cols_len(&self) -> usize {
        self.patch() * self.out_plane()
    }
}

pub(crate) fn im2col<T: Scalar>(g: &ConvGeom, input: &[T], cols: &mut [T]) {
    let plane = g.out_plane();
    let (pad, stride) = (g.padding as isize, g.stride as isize);
    for c in 0..g.cin {
        let src = &input[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.oh {
                    let iy = oy as isize * stride + ki as isize - pad;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let srow = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = ox as isize * stride + kj as isize - pad;
                        *v = if ix < 0 || ix >= g.w as isize { T::zero() } else { srow[ix as usize] };
                    }
                }
            }
        }
    }
}

pub(crate) fn col2im_add<T: Scalar>(g: &ConvGeom, cols: &[T], out: &mut [T]) {
    let plane = g.out_plane();
    let (pad, stride) = (g.padding as isize, g.stride as isize);
    for c in 0..g.cin {
        let dst = &mut out[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.oh {
                    let iy = oy as isize * stride + ki as isize - pad;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let drow = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = ox as isize * stride + kj as isize - pad;
                        if ix >= 0 && ix < g.w as isize {
                            drow[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution. Returns the output and, when `keep_cols`, the column
/// matrices of every sample (empty for pointwise convs, which reuse the input).
pub(crate) fn conv_forward<T: Scalar>(
    g: &ConvGeom,
    input: &[T],
    kernel: &[T],
    bias: Option<&[T]>,
    keep_cols: bool,
) -> (Vec<T>, Vec<T>) {
    let mut out = vec![T::zero(); g.n * g.out_sample()];
    let plane = g.out_plane();
    let patch = g.patch();
    let pointwise = g.is_pointwise();
    let mut saved = if keep_cols && !pointwise { vec![T::zero(); g.n * g.cols_len()] } else { Vec::new() };
    let mut scratch = if pointwise || keep_cols { Vec::new() } else { vec![T::zero(); g.cols_len()] };
    for s in 0..g.n {
        let x = &input[s * g.in_sample()..(s + 1) * g.in_sample()];
        let cols: &[T] = if pointwise {
            x
        } else if keep_cols {
            let buf = &mut saved[s * g.cols_len()..(s + 1) * g.cols_len()];
            im2col(g, x, buf);
            buf
        } else {
            im2col(g, x, &mut scratch);
            &scratch
        };
        let y = &mut out[s * g.out_sample()..(s + 1) * g.out_sample()];
        if let Some(b) = bias {
            for (o, row) in y.chunks_mut(plane).enumerate() {
                row.fill(b[o]);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        T::gemm(g.cout, patch, plane, T::one(), (kernel, patch, 1), (cols, plane, 1), beta, (y, plane, 1));
    }
    (out, saved)
}

/// Gradient w.r.t. the kernel, accumulated into `dk`.
pub(crate) fn conv_grad_kernel<T: Scalar>(g: &ConvGeom, input: &[T], saved_cols: &[T], dy: &[T], dk: &mut [T]) {
    let plane = g.out_plane();
    let patch = g.patch();
    let mut scratch = Vec::new();
    for s in 0..g.n {
        let cols: &[T] = if g.is_pointwise() {
            &input[s * g.in_sample()..(s + 1) * g.in_sample()]
        } else if !saved_cols.is_empty() {
            &saved_cols[s * g.cols_len()..(s + 1) * g.cols_len()]
        } else {
            scratch.resize(g.cols_len(), T::zero());
            im2col(g, &input[s * g.in_sample()..(s + 1) * g.in_sample()], &mut scratch);
            &scratch
        };
        let gy = &dy[s * g.out_sample()..(s + 1) * g.out_sample()];
        // dk (cout x patch) += gy (cout x plane) * cols^T (plane x patch)
        T::gemm(g.cout, plane, patch, T::one(), (gy, plane, 1), (cols, 1, plane), T::one(), (dk, patch, 1));
    }
}

pub(crate) fn conv_grad_bias<T: Scalar>(g: &ConvGeom, dy: &[T], db: &mut [T]) {
    let plane = g.out_plane();
    for s in 0..g.n {
        let gy = &dy[s * g.out_sample()..(s + 1) * g.out_sample()];
        for (o, row) in gy.chunks(plane).enumerate() {
            db[o] += row.iter().copied().sum::<T>();
        }
    }
}

/// Gradient w.r.t. the input, accumulated into `dx`.
pub(crate) fn conv_grad_input<T: Scalar>(g: &ConvGeom, kernel: &[T], dy: &[T], dx: &mut [T]) {
    let plane = g.out_plane();
    let patch = g.patch();
    let mut dcols = vec![T::zero(); g.cols_len()];
    for s in 0..g.n {
        let gy = &dy[s * g.out_sample()..(s + 1) * g.out_sample()];
        let gx = &mut dx[s * g.in_sample()..(s + 1) * g.in_sample()];
        if g.is_pointwise() {
            T::gemm(patch, g.cout, plane, T::one(), (kernel, 1, patch), (gy, plane, 1), T::one(), (gx, plane, 1));
        } else {
            // dcols (patch x plane) = kernel^T (patch x cout) * gy (cout x plane)
            T::gemm(patch, g.cout, plane, T::one(), (kernel, 1, patch), (gy, plane, 1), T::zero(), (&mut dcols, plane, 1));
            col2im_add(g, &dcols, gx);
        }
    }
}

/// `[O, C, kh, kw]` -> `[C, O, kh, kw]` with both spatial axes reversed.
/// Applying it twice is the identity.
pub(crate) fn flip_transpose<T: Scalar>(shape: &[usize], src: &[T]) -> Vec<T> {
    let (o, c, kh, kw) = (shape[0], shape[1], shape[2], shape[3]);
    let mut out = vec![T::zero(); src.len()];
    for a in 0..o {
        for b in 0..c {
            for i in 0..kh {
                for j in 0..kw {
                    out[((b * o + a) * kh + (kh - 1 - i)) * kw + (kw - 1 - j)] = src[((a * c + b) * kh + i) * kw + j];
                }
            }
        }
    }
    out
}

/// Per-axis bilinear taps for the align-corners-false grid.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct AxisTaps<T> {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
    pub frac: Vec<T>,
}

pub(crate) fn axis_taps<T: Scalar>(input: usize, output: usize) -> AxisTaps<T> {
    let scale = input as f64 / output as f64;
    let mut taps = AxisTaps { lo: Vec::with_capacity(output), hi: Vec::with_capacity(output), frac: Vec::with_capacity(output) };
    for i in 0..output {
        let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
        let lo = src.floor() as usize;
        let hi = (lo + 1).min(input - 1);
        taps.lo.push(lo);
        taps.hi.push(hi);
        taps.frac.push(T::lit(src - lo as f64));
    }
    taps
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct ResizeGeom<T> {
    pub planes: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub rows: AxisTaps<T>,
    pub cols: AxisTaps<T>,
}

impl<T: Scalar> ResizeGeom<T> {
    pub fn new(planes: usize, in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> Self {
        Self { planes, in_h, in_w, out_h, out_w, rows: axis_taps(in_h, out_h), cols: axis_taps(in_w, out_w) }
    }

    pub fn forward(&self, src: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.planes * self.out_h * self.out_w];
        let one = T::one();
        for p in 0..self.planes {
            let s = &src[p * self.in_h * self.in_w..(p + 1) * self.in_h * self.in_w];
            let d = &mut out[p * self.out_h * self.out_w..(p + 1) * self.out_h * self.out_w];
            for y in 0..self.out_h {
                let (y0, y1, fy) = (self.rows.lo[y], self.rows.hi[y], self.rows.frac[y]);
                for x in 0..self.out_w {
                    let (x0, x1, fx) = (self.cols.lo[x], self.cols.hi[x], self.cols.frac[x]);
                    let top = s[y0 * self.in_w + x0] * (one - fx) + s[y0 * self.in_w + x1] * fx;
                    let bot = s[y1 * self.in_w + x0] * (one - fx) + s[y1 * self.in_w + x1] * fx;
                    d[y * self.out_w + x] = top * (one - fy) + bot * fy;
                }
            }
        }
        out
    }

    /// Transpose of [`forward`](Self::forward): maps output-shaped values onto the input grid.
    pub fn adjoint(&self, g: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.planes * self.in_h * self.in_w];
        let one = T::one();
        for p in 0..self.planes {
            let s = &g[p * self.out_h * self.out_w..(p + 1) * self.out_h * self.out_w];
            let d = &mut out[p * self.in_h * self.in_w..(p + 1) * self.in_h * self.in_w];
            for y in 0..self.out_h {
                let (y0, y1, fy) = (self.rows.lo[y], self.rows.hi[y], self.rows.frac[y]);
                for x in 0..self.out_w {
                    let (x0, x1, fx) = (self.cols.lo[x], self.cols.hi[x], self.cols.frac[x]);
                    let v = s[y * self.out_w + x];
                    d[y0 * self.in_w + x0] += v * (one - fy) * (one - fx);
                    d[y0 * self.in_w + x1] += v * (one - fy) * fx;
                    d[y1 * self.in_w + x0] += v * fy * (one - fx);
                    d[y1 * self.in_w + x1] += v * fy * fx;
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flip_transpose_is_involution() {
        let shape = [2, 3, 3, 3];
        let src: Vec<f64> = (0..54).map(|i| i as f64).collect();
        let once = flip_transpose(&shape, &src);
        let twice = flip_transpose(&[3, 2, 3, 3], &once);
        assert_eq!(src, twice);
    }

    #[test]
    fn taps_identity_when_sizes_match() {
        let t: AxisTaps<f64> = axis_taps(5, 5);
        assert_eq!(t.lo, vec![0, 1, 2, 3, 4]);
        assert!(t.frac.iter().all(|&f| f == 0.0));
    }
}
