//! Raw slice kernels shared by the forward and backward passes.

use super::Real;

/// `c += a · b` for row-major `a: m×k`, `b: k×n`, `c: m×n`.
pub(crate) fn matmul_acc<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for (p, &a_ip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if a_ip == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (c_ij, &b_pj) in c_row.iter_mut().zip(b_row) {
                *c_ij = *c_ij + a_ip * b_pj;
            }
        }
    }
}

pub(crate) fn matmul<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    matmul_acc(a, b, &mut c, m, k, n);
    c
}

/// Transpose of a row-major `rows × cols` matrix.
pub(crate) fn transpose<T: Real>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// Geometry of a single-image 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel_h) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel_w) / self.stride + 1
    }

    /// Rows of the patch matrix: `in_channels · kernel_h · kernel_w`.
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn positions(&self) -> usize {
        self.out_height() * self.out_width()
    }

    /// Input pixel read by patch row `(c, ky, kx)` at output `(oy, ox)`, if
    /// it falls inside the unpadded image.
    #[inline]
    fn source(&self, c: usize, ky: usize, kx: usize, oy: usize, ox: usize) -> Option<usize> {
        let y = (oy * self.stride + ky) as isize - self.padding as isize;
        let x = (ox * self.stride + kx) as isize - self.padding as isize;
        if y < 0 || x < 0 || y >= self.height as isize || x >= self.width as isize {
            None
        } else {
            Some((c * self.height + y as usize) * self.width + x as usize)
        }
    }
}

/// Unfolds `input: C×H×W` into a `patch_len × positions` matrix.
pub(crate) fn im2col<T: Real>(input: &[T], g: &ConvGeometry) -> Vec<T> {
    let (oh, ow) = (g.out_height(), g.out_width());
    let positions = oh * ow;
    let mut cols = vec![T::zero(); g.patch_len() * positions];
    let mut row = 0;
    for c in 0..g.in_channels {
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let dst = &mut cols[row * positions..(row + 1) * positions];
                for oy in 0..oh {
                    for ox in 0..ow {
                        if let Some(src) = g.source(c, ky, kx, oy, ox) {
                            dst[oy * ow + ox] = input[src];
                        }
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the image.
pub(crate) fn col2im_acc<T: Real>(cols: &[T], g: &ConvGeometry, out: &mut [T]) {
    let (oh, ow) = (g.out_height(), g.out_width());
    let positions = oh * ow;
    let mut row = 0;
    for c in 0..g.in_channels {
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let src_row = &cols[row * positions..(row + 1) * positions];
                for oy in 0..oh {
                    for ox in 0..ow {
                        if let Some(dst) = g.source(c, ky, kx, oy, ox) {
                            out[dst] = out[dst] + src_row[oy * ow + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transpose_round_trips() {
        let a: Vec<f64> = (0..6).map(f64::from).collect();
        let t = transpose(&a, 2, 3);
        assert_eq!(t, vec![0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
        assert_eq!(transpose(&t, 3, 2), a);
    }

    #[test]
    fn conv_output_size_follows_stride_arithmetic() {
        let g = ConvGeometry {
            in_channels: 3,
            height: 64,
            width: 128,
            kernel_h: 7,
            kernel_w: 7,
            stride: 2,
            padding: 3,
        };
        assert_eq!((g.out_height(), g.out_width()), (32, 64));
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)> for arbitrary x, y.
        let g = ConvGeometry {
            in_channels: 2,
            height: 5,
            width: 4,
            kernel_h: 3,
            kernel_w: 3,
            stride: 2,
            padding: 1,
        };
        let x: Vec<f64> = (0..40).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let y: Vec<f64> = (0..g.patch_len() * g.positions())
            .map(|i| ((i * 13) % 7) as f64 - 3.0)
            .collect();
        let lhs: f64 = im2col(&x, &g).iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; x.len()];
        col2im_acc(&y, &g, &mut back);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert_eq!(lhs, rhs);
    }
}
