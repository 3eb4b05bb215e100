//! Raw numeric kernels shared by forward and backward rules.

/// `c = a * b + beta * c` for row-major `c` of shape `[m, n]`.
///
/// `a` is addressed as `a[i * rsa + p * csa]` and `b` as `b[p * rsb + j * csb]`,
/// so transposed operands are expressed through strides without copies.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    // SAFETY: the callers pass slices whose extents cover every addressed
    // element for the given dimensions and strides; c is [m, n] row-major.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a strided, zero-padded 2-D window over an NHWC tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Window {
    pub batch: usize,
    /// Spatial grid the kernel slides over (the convolution input).
    pub in_h: usize,
    pub in_w: usize,
    pub channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad: usize,
    /// Grid of window positions (the convolution output).
    pub out_h: usize,
    pub out_w: usize,
}

impl Window {
    pub fn col_width(&self) -> usize {
        self.kernel_h * self.kernel_w * self.channels
    }

    pub fn rows(&self) -> usize {
        self.batch * self.out_h * self.out_w
    }

    #[inline]
    fn source(&self, o: usize, k: usize, limit: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - self.pad as isize;
        if pos < 0 || pos as usize >= limit {
            None
        } else {
            Some(pos as usize)
        }
    }
}

/// Unfolds windows of `x` (`[batch, in_h, in_w, channels]`) into rows of
/// width `kernel_h * kernel_w * channels`, ordered (kh, kw, c).
pub(crate) fn im2col(x: &[f64], win: &Window) -> Vec<f64> {
    let cw = win.col_width();
    let mut cols = vec![0.0; win.rows() * cw];
    let c = win.channels;
    for b in 0..win.batch {
        let x_b = &x[b * win.in_h * win.in_w * c..];
        for oh in 0..win.out_h {
            for ow in 0..win.out_w {
                let row = ((b * win.out_h + oh) * win.out_w + ow) * cw;
                for kh in 0..win.kernel_h {
                    let Some(ih) = win.source(oh, kh, win.in_h) else {
                        continue;
                    };
                    for kw in 0..win.kernel_w {
                        let Some(iw) = win.source(ow, kw, win.in_w) else {
                            continue;
                        };
                        let src = (ih * win.in_w + iw) * c;
                        let dst = row + (kh * win.kernel_w + kw) * c;
                        cols[dst..dst + c].copy_from_slice(&x_b[src..src + c]);
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters-adds rows back onto the input grid.
pub(crate) fn col2im(cols: &[f64], win: &Window) -> Vec<f64> {
    let cw = win.col_width();
    let c = win.channels;
    let mut x = vec![0.0; win.batch * win.in_h * win.in_w * c];
    for b in 0..win.batch {
        let base = b * win.in_h * win.in_w * c;
        for oh in 0..win.out_h {
            for ow in 0..win.out_w {
                let row = ((b * win.out_h + oh) * win.out_w + ow) * cw;
                for kh in 0..win.kernel_h {
                    let Some(ih) = win.source(oh, kh, win.in_h) else {
                        continue;
                    };
                    for kw in 0..win.kernel_w {
                        let Some(iw) = win.source(ow, kw, win.in_w) else {
                            continue;
                        };
                        let dst = base + (ih * win.in_w + iw) * c;
                        let src = row + (kh * win.kernel_w + kw) * c;
                        for ch in 0..c {
                            x[dst + ch] += cols[src + ch];
                        }
                    }
                }
            }
        }
    }
    x
}

#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
