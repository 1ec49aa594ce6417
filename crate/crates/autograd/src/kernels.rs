//! Raw forward kernels. These work on plain tensors and know nothing about
//! the graph; `graph.rs` wires them up with their backward rules.

use crate::tensor::{numel, Tensor};
use serde::{Deserialize, Serialize};

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0; nd];
    for i in 0..nd {
        let da = if i + a.len() >= nd { a[i + a.len() - nd] } else { 1 };
        let db = if i + b.len() >= nd { b[i + b.len() - nd] } else { 1 };
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
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// Source offset for every row-major position of `shape`, walking `strides`.
fn strided_offsets(shape: &[usize], strides: &[usize]) -> Vec<usize> {
    let mut offsets = vec![0usize];
    for (&dim, &stride) in shape.iter().zip(strides) {
        let mut next = Vec::with_capacity(offsets.len() * dim);
        for &o in &offsets {
            for i in 0..dim {
                next.push(o + i * stride);
            }
        }
        offsets = next;
    }
    offsets
}

/// Strides of `small` (numpy-aligned to the right of `big`) with zero for
/// broadcast dimensions.
fn broadcast_strides(small: &[usize], big: &[usize]) -> Vec<usize> {
    let pad = big.len() - small.len();
    let own = contiguous_strides(small);
    (0..big.len())
        .map(|i| {
            if i < pad || small[i - pad] == 1 {
                0
            } else {
                own[i - pad]
            }
        })
        .collect()
}

pub(crate) fn broadcast_to(t: &Tensor, shape: &[usize]) -> Tensor {
    if t.shape() == shape {
        return t.clone();
    }
    assert!(
        broadcast_shape(t.shape(), shape).as_deref() == Some(shape),
        "cannot broadcast {:?} to {:?}",
        t.shape(),
        shape
    );
    let offsets = strided_offsets(shape, &broadcast_strides(t.shape(), shape));
    let src = t.data();
    Tensor::new(shape.to_vec(), offsets.iter().map(|&o| src[o]).collect())
}

/// Sums `t` down to `shape`, the inverse of `broadcast_to`.
pub(crate) fn sum_to(t: &Tensor, shape: &[usize]) -> Tensor {
    if t.shape() == shape {
        return t.clone();
    }
    let offsets = strided_offsets(t.shape(), &broadcast_strides(shape, t.shape()));
    let mut out = vec![0.0; numel(shape)];
    for (&o, &v) in offsets.iter().zip(t.data()) {
        out[o] += v;
    }
    Tensor::new(shape.to_vec(), out)
}

pub(crate) fn permute(t: &Tensor, perm: &[usize]) -> Tensor {
    assert_eq!(perm.len(), t.ndim(), "permutation rank mismatch");
    let src_strides = contiguous_strides(t.shape());
    let shape: Vec<usize> = perm.iter().map(|&p| t.shape()[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
    let src = t.data();
    let data = strided_offsets(&shape, &strides)
        .into_iter()
        .map(|o| src[o])
        .collect();
    Tensor::new(shape, data)
}

pub(crate) fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    assert!(a.ndim() == 2 && b.ndim() == 2, "matmul expects 2-D operands");
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    assert_eq!(k, k2, "matmul inner dimension mismatch");
    let mut out = vec![0.0; m * n];
    if m > 0 && n > 0 && k > 0 {
        // SAFETY: the pointers cover m*k, k*n and m*n contiguous row-major
        // elements, matching the dimensions and strides passed.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.data().as_ptr(),
                k as isize,
                1,
                b.data().as_ptr(),
                n as isize,
                1,
                0.0,
                out.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
    Tensor::new(vec![m, n], out)
}

/// Shape bookkeeping for a square-kernel 2-D convolution over NCHW input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn input_shape(&self) -> Vec<usize> {
        vec![self.batch, self.channels, self.height, self.width]
    }

    pub fn cols_shape(&self) -> Vec<usize> {
        vec![
            self.channels * self.kernel * self.kernel,
            self.batch * self.out_height() * self.out_width(),
        ]
    }
}

/// Unfolds NCHW input into `[C*k*k, N*Ho*Wo]` patch columns (zero padding).
pub(crate) fn im2col(x: &Tensor, g: &ConvGeometry) -> Tensor {
    assert_eq!(x.shape(), g.input_shape().as_slice(), "im2col input shape");
    let (ho, wo) = (g.out_height(), g.out_width());
    let (k, s, p) = (g.kernel, g.stride, g.pad as isize);
    let ncol = g.batch * ho * wo;
    let mut out = vec![0.0; g.channels * k * k * ncol];
    let src = x.data();
    for ci in 0..g.channels {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let row_out = &mut out[row * ncol..(row + 1) * ncol];
                for b in 0..g.batch {
                    let plane = &src[((b * g.channels + ci) * g.height * g.width)..]
                        [..g.height * g.width];
                    for oy in 0..ho {
                        let iy = (oy * s + ky) as isize - p;
                        if iy < 0 || iy >= g.height as isize {
                            continue;
                        }
                        let src_row = &plane[iy as usize * g.width..][..g.width];
                        let dst = &mut row_out[(b * ho + oy) * wo..][..wo];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * s + kx) as isize - p;
                            if ix >= 0 && ix < g.width as isize {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(g.cols_shape(), out)
}

/// Adjoint of `im2col`: scatters patch columns back onto the input grid.
pub(crate) fn col2im(cols: &Tensor, g: &ConvGeometry) -> Tensor {
    assert_eq!(cols.shape(), g.cols_shape().as_slice(), "col2im input shape");
    let (ho, wo) = (g.out_height(), g.out_width());
    let (k, s, p) = (g.kernel, g.stride, g.pad as isize);
    let ncol = g.batch * ho * wo;
    let mut out = vec![0.0; numel(&g.input_shape())];
    let src = cols.data();
    for ci in 0..g.channels {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let row_in = &src[row * ncol..(row + 1) * ncol];
                for b in 0..g.batch {
                    let plane = &mut out[((b * g.channels + ci) * g.height * g.width)..]
                        [..g.height * g.width];
                    for oy in 0..ho {
                        let iy = (oy * s + ky) as isize - p;
                        if iy < 0 || iy >= g.height as isize {
                            continue;
                        }
                        let dst_row = &mut plane[iy as usize * g.width..][..g.width];
                        let srow = &row_in[(b * ho + oy) * wo..][..wo];
                        for (ox, &v) in srow.iter().enumerate() {
                            let ix = (ox * s + kx) as isize - p;
                            if ix >= 0 && ix < g.width as isize {
                                dst_row[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(g.input_shape(), out)
}

fn nchw(t: &Tensor) -> (usize, usize, usize, usize) {
    assert_eq!(t.ndim(), 4, "expected NCHW tensor, got {:?}", t.shape());
    let s = t.shape();
    (s[0], s[1], s[2], s[3])
}

/// Nearest-neighbour 2x upsampling of the two trailing axes.
pub(crate) fn upsample2(t: &Tensor) -> Tensor {
    let (n, c, h, w) = nchw(t);
    let mut out = vec![0.0; n * c * 4 * h * w];
    for (plane_idx, plane) in t.data().chunks(h * w).enumerate() {
        let dst = &mut out[plane_idx * 4 * h * w..][..4 * h * w];
        for y in 0..2 * h {
            for x in 0..2 * w {
                dst[y * 2 * w + x] = plane[(y / 2) * w + x / 2];
            }
        }
    }
    Tensor::new(vec![n, c, 2 * h, 2 * w], out)
}

/// Sums non-overlapping 2x2 windows of the two trailing axes.
pub(crate) fn sum_pool2(t: &Tensor) -> Tensor {
    let (n, c, h, w) = nchw(t);
    assert!(h % 2 == 0 && w % 2 == 0, "sum_pool2 needs even spatial dims");
    let (h2, w2) = (h / 2, w / 2);
    let mut out = vec![0.0; n * c * h2 * w2];
    for (plane_idx, plane) in t.data().chunks(h * w).enumerate() {
        let dst = &mut out[plane_idx * h2 * w2..][..h2 * w2];
        for y in 0..h {
            for x in 0..w {
                dst[(y / 2) * w2 + x / 2] += plane[y * w + x];
            }
        }
    }
    Tensor::new(vec![n, c, h2, w2], out)
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel(&shape[..axis]);
    let inner = numel(&shape[axis + 1..]);
    (outer, shape[axis], inner)
}

pub(crate) fn slice_axis(t: &Tensor, axis: usize, start: usize, len: usize) -> Tensor {
    let (outer, dim, inner) = axis_split(t.shape(), axis);
    assert!(start + len <= dim, "slice out of range");
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * dim + start) * inner;
        data.extend_from_slice(&t.data()[base..base + len * inner]);
    }
    let mut shape = t.shape().to_vec();
    shape[axis] = len;
    Tensor::new(shape, data)
}

pub(crate) fn pad_axis(t: &Tensor, axis: usize, before: usize, after: usize) -> Tensor {
    let (outer, dim, inner) = axis_split(t.shape(), axis);
    let new_dim = before + dim + after;
    let mut data = vec![0.0; outer * new_dim * inner];
    for o in 0..outer {
        let src = &t.data()[o * dim * inner..(o + 1) * dim * inner];
        data[(o * new_dim + before) * inner..][..dim * inner].copy_from_slice(src);
    }
    let mut shape = t.shape().to_vec();
    shape[axis] = new_dim;
    Tensor::new(shape, data)
}

pub(crate) fn concat(parts: &[&Tensor], axis: usize) -> Tensor {
    let first = parts[0].shape();
    let mut shape = first.to_vec();
    shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
    for p in parts {
        let s = p.shape();
        assert!(
            s.len() == first.len()
                && s.iter()
                    .zip(first)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b),
            "concat shape mismatch"
        );
    }
    let (outer, _, inner) = axis_split(first, axis);
    let mut data = Vec::with_capacity(numel(&shape));
    for o in 0..outer {
        for p in parts {
            let d = p.shape()[axis] * inner;
            data.extend_from_slice(&p.data()[o * d..(o + 1) * d]);
        }
    }
    Tensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_and_sum_to_are_adjoint_shapes() {
        let t = Tensor::new(vec![1, 3, 1], vec![1.0, 2.0, 3.0]);
        let b = broadcast_to(&t, &[2, 3, 2]);
        assert_eq!(
            b.data(),
            &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0]
        );
        let s = sum_to(&b, &[1, 3, 1]);
        assert_eq!(s.data(), &[4.0, 8.0, 12.0]);
        let scalar = sum_to(&b, &[]);
        assert_eq!(scalar.item(), 24.0);
    }

    #[test]
    fn incompatible_broadcast_is_rejected() {
        assert_eq!(broadcast_shape(&[2, 3], &[3, 2]), None);
        assert_eq!(broadcast_shape(&[4, 1, 3], &[5, 1]), Some(vec![4, 5, 3]));
    }

    #[test]
    fn permute_transposes() {
        let t = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let p = permute(&t, &[1, 0]);
        assert_eq!(p.shape(), &[3, 2]);
        assert_eq!(p.data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }

    #[test]
    fn matmul_small() {
        let a = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let b = Tensor::new(vec![2, 1], vec![5.0, 6.0]);
        assert_eq!(matmul(&a, &b).data(), &[17.0, 39.0]);
    }

    #[test]
    fn im2col_identity_kernel_is_copy() {
        let g = ConvGeometry {
            batch: 2,
            channels: 1,
            height: 3,
            width: 3,
            kernel: 1,
            stride: 1,
            pad: 0,
        };
        let x = Tensor::new(vec![2, 1, 3, 3], (0..18).map(f64::from).collect());
        let cols = im2col(&x, &g);
        assert_eq!(cols.shape(), &[1, 18]);
        assert_eq!(cols.data(), x.data());
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)> for arbitrary x, c.
        let g = ConvGeometry {
            batch: 2,
            channels: 2,
            height: 5,
            width: 4,
            kernel: 3,
            stride: 2,
            pad: 1,
        };
        let x = Tensor::new(
            g.input_shape(),
            (0..numel(&g.input_shape())).map(|i| (i as f64 * 0.37).sin()).collect(),
        );
        let c = Tensor::new(
            g.cols_shape(),
            (0..numel(&g.cols_shape())).map(|i| (i as f64 * 0.11).cos()).collect(),
        );
        let lhs: f64 = im2col(&x, &g).data().iter().zip(c.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(col2im(&c, &g).data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn upsample_then_pool_scales_by_four() {
        let t = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let up = upsample2(&t);
        assert_eq!(up.shape(), &[1, 1, 4, 4]);
        assert_eq!(&up.data()[..4], &[1.0, 1.0, 2.0, 2.0]);
        assert_eq!(sum_pool2(&up).data(), &[4.0, 8.0, 12.0, 16.0]);
    }

    #[test]
    fn slice_pad_concat() {
        let a = Tensor::new(vec![2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let b = Tensor::new(vec![2, 2, 2], vec![5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = concat(&[&a, &b], 1);
        assert_eq!(c.shape(), &[2, 3, 2]);
        assert_eq!(slice_axis(&c, 1, 0, 1), a);
        assert_eq!(slice_axis(&c, 1, 1, 2), b);
        let p = pad_axis(&a, 1, 1, 1);
        assert_eq!(p.data(), &[0.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 3.0, 4.0, 0.0, 0.0]);
    }
}
