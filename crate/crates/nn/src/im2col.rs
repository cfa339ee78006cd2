//! Patch unfolding for convolution as matrix multiplication.
//!
//! Column matrices are row-major `[channels * k * k, out_h * out_w]` with
//! rows ordered `(channel, ky, kx)`, matching a `[out, in, k, k]` weight
//! reshaped to `[out, in * k * k]`.

use crate::Scalar;

/// Geometry of a square-kernel convolution over a single `[C, H, W]` image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_height() * self.out_width()
    }

    pub fn valid(&self) -> bool {
        self.kernel > 0
            && self.stride > 0
            && self.height + 2 * self.padding >= self.kernel
            && self.width + 2 * self.padding >= self.kernel
    }
}

/// Output columns `[lo, hi)` whose input column `ox * stride + kx - pad`
/// falls inside `[0, width)`.
fn valid_cols(g: &ConvGeom, kx: usize, wo: usize) -> (usize, usize) {
    let off = kx as isize - g.padding as isize;
    let s = g.stride as isize;
    let lo = if off >= 0 { 0 } else { ((-off + s - 1) / s) as usize };
    let last = g.width as isize - 1 - off;
    let hi = if last < 0 { 0 } else { ((last / s) as usize + 1).min(wo) };
    (lo.min(hi), hi)
}

/// Unfolds `image` (`[C, H, W]`, contiguous) into `cols`.
pub fn im2col<T: Scalar>(image: &[T], g: &ConvGeom, cols: &mut [T]) {
    debug_assert_eq!(cols.len(), g.col_rows() * g.col_cols());
    im2col_strided(image, g, cols, g.col_cols());
}

/// [`im2col`] into a wider matrix whose rows are `ld` apart, so several
/// images can sit side by side in one column block.
pub fn im2col_strided<T: Scalar>(image: &[T], g: &ConvGeom, cols: &mut [T], ld: usize) {
    let (ho, wo) = (g.out_height(), g.out_width());
    let n_out = ho * wo;
    debug_assert_eq!(image.len(), g.channels * g.height * g.width);
    debug_assert!(ld >= n_out && cols.len() >= (g.col_rows() - 1) * ld + n_out);
    let pad = g.padding as isize;
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let (lo, hi) = valid_cols(g, kx, wo);
                let dst = &mut cols[row * ld..row * ld + n_out];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    let dst_row = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= g.height as isize || lo == hi {
                        dst_row.fill(T::zero());
                        continue;
                    }
                    dst_row[..lo].fill(T::zero());
                    dst_row[hi..].fill(T::zero());
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let first = lo * g.stride + kx - g.padding;
                    if g.stride == 1 {
                        dst_row[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                    } else {
                        for (d, &v) in dst_row[lo..hi].iter_mut().zip(src[first..].iter().step_by(g.stride)) {
                            *d = v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Folds `cols` back onto `image`, accumulating overlapping patches.
/// Adjoint of [`im2col`].
pub fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, image: &mut [T]) {
    debug_assert_eq!(cols.len(), g.col_rows() * g.col_cols());
    col2im_strided(cols, g, image, g.col_cols());
}

/// Adjoint of [`im2col_strided`].
pub fn col2im_strided<T: Scalar>(cols: &[T], g: &ConvGeom, image: &mut [T], ld: usize) {
    let (ho, wo) = (g.out_height(), g.out_width());
    let n_out = ho * wo;
    debug_assert_eq!(image.len(), g.channels * g.height * g.width);
    debug_assert!(ld >= n_out && cols.len() >= (g.col_rows() - 1) * ld + n_out);
    let pad = g.padding as isize;
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &mut image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let (lo, hi) = valid_cols(g, kx, wo);
                let src = &cols[row * ld..row * ld + n_out];
                row += 1;
                if lo == hi {
                    continue;
                }
                let first = lo * g.stride + kx - g.padding;
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let src_row = &src[oy * wo + lo..oy * wo + hi];
                    if g.stride == 1 {
                        for (d, &v) in dst[first..first + hi - lo].iter_mut().zip(src_row) {
                            *d += v;
                        }
                    } else {
                        for (d, &v) in dst[first..].iter_mut().step_by(g.stride).zip(src_row) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}
