//! Composite network operations built from differentiable primitives.

use crate::graph::Var;
use crate::kernels::ConvGeometry;
use crate::tensor::Tensor;
use rand::Rng;
use std::rc::Rc;

/// 2-D convolution. `x` is `[N, Cin, H, W]`, `weight` is `[Cout, Cin, k, k]`,
/// `bias` is `[Cout]`.
pub fn conv2d(x: &Var, weight: &Var, bias: Option<&Var>, stride: usize, pad: usize) -> Var {
    let xs = x.shape();
    let ws = weight.shape();
    assert_eq!(xs.len(), 4, "conv2d input must be NCHW");
    assert_eq!(ws.len(), 4, "conv2d weight must be [Cout, Cin, k, k]");
    assert_eq!(xs[1], ws[1], "conv2d channel mismatch");
    let geom = ConvGeometry {
        batch: xs[0],
        channels: xs[1],
        height: xs[2],
        width: xs[3],
        kernel: ws[2],
        stride,
        pad,
    };
    let (cout, ho, wo) = (ws[0], geom.out_height(), geom.out_width());
    let cols = x.im2col(geom);
    let w2 = weight.reshape(&[cout, ws[1] * ws[2] * ws[3]]);
    let out = w2
        .matmul(&cols)
        .reshape(&[cout, geom.batch, ho, wo])
        .permute(&[1, 0, 2, 3]);
    match bias {
        Some(b) => out.add(&b.reshape(&[1, cout, 1, 1])),
        None => out,
    }
}

/// `x @ weight^T + bias` with `x: [N, in]`, `weight: [out, in]`.
pub fn linear(x: &Var, weight: &Var, bias: Option<&Var>) -> Var {
    let out = x.matmul(&weight.t());
    match bias {
        Some(b) => out.add(b),
        None => out,
    }
}

/// Normalizes each spatial position's feature vector to unit mean square
/// across channels. Works on `[N, C]` and `[N, C, H, W]`.
pub fn pixel_norm(x: &Var, eps: f64) -> Var {
    let ms = x.square().mean_axes(&[1]);
    x.div(&ms.add_scalar(eps).sqrt())
}

/// Appends one channel holding the batch-wide mean of per-feature standard
/// deviations. Every batch member receives the same value.
pub fn minibatch_stddev(x: &Var, eps: f64) -> Var {
    let s = x.shape().to_vec();
    assert_eq!(s.len(), 4, "minibatch_stddev expects NCHW");
    let centered = x.sub(&x.mean_axes(&[0]));
    let std = centered.square().mean_axes(&[0]).add_scalar(eps).sqrt();
    let avg = std.mean();
    let channel = avg.broadcast_to(&[s[0], 1, s[2], s[3]]);
    Var::concat(&[x.clone(), channel], 1)
}

/// Linear blend `(1 - alpha) * low + alpha * high`.
pub fn fade_in(low: &Var, high: &Var, alpha: f64) -> Var {
    assert_eq!(low.shape(), high.shape(), "fade_in shape mismatch");
    if alpha == 0.0 {
        return low.clone();
    }
    if alpha == 1.0 {
        return high.clone();
    }
    low.scale(1.0 - alpha).add(&high.scale(alpha))
}

/// Max pooling over square windows. Padding uses zeros, so inputs are
/// expected to be non-negative (post-ReLU) for the result to match the
/// conventional `-inf`-padded operator.
pub fn max_pool2d(x: &Var, kernel: usize, stride: usize, pad: usize) -> Var {
    let s = x.shape().to_vec();
    let geom = ConvGeometry {
        batch: s[0],
        channels: s[1],
        height: s[2],
        width: s[3],
        kernel,
        stride,
        pad,
    };
    let (ho, wo) = (geom.out_height(), geom.out_width());
    let kk = kernel * kernel;
    let p = s[0] * ho * wo;
    let cols = x.im2col(geom).reshape(&[s[1], kk, p]);
    let mut mask = Tensor::zeros(vec![s[1], kk, p]);
    {
        let v = cols.value().data();
        let m = mask.data_mut();
        for c in 0..s[1] {
            for j in 0..p {
                let mut best = 0;
                for k in 1..kk {
                    if v[(c * kk + k) * p + j] > v[(c * kk + best) * p + j] {
                        best = k;
                    }
                }
                m[(c * kk + best) * p + j] = 1.0;
            }
        }
    }
    cols.mul_const(Rc::new(mask))
        .sum_axes(&[1])
        .reshape(&[s[1], s[0], ho, wo])
        .permute(&[1, 0, 2, 3])
}

/// `[N, C, H, W] -> [N, C]`.
pub fn global_avg_pool(x: &Var) -> Var {
    let s = x.shape().to_vec();
    x.mean_axes(&[2, 3]).reshape(&[s[0], s[1]])
}

/// Row-wise log-softmax of `[N, K]` logits.
pub fn log_softmax(logits: &Var) -> Var {
    let s = logits.shape().to_vec();
    let mut row_max = Tensor::zeros(vec![s[0], 1]);
    for (i, row) in logits.value().data().chunks(s[1]).enumerate() {
        row_max.data_mut()[i] = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    }
    let shifted = logits.sub(&Var::constant(row_max));
    let lse = shifted.exp().sum_axes(&[1]).log();
    shifted.sub(&lse)
}

pub fn softmax(logits: &Var) -> Var {
    log_softmax(logits).exp()
}

/// Mean negative log-likelihood of integer class targets.
pub fn cross_entropy(logits: &Var, targets: &[usize]) -> Var {
    let s = logits.shape().to_vec();
    assert_eq!(s[0], targets.len(), "one target per row");
    let mut onehot = Tensor::zeros(s.clone());
    for (i, &t) in targets.iter().enumerate() {
        onehot.data_mut()[i * s[1] + t] = 1.0;
    }
    log_softmax(logits)
        .mul_const(Rc::new(onehot))
        .sum()
        .scale(-1.0 / s[0] as f64)
}

/// Inverted dropout; identity when `rate == 0`.
pub fn dropout<R: Rng + ?Sized>(x: &Var, rate: f64, rng: &mut R) -> Var {
    if rate <= 0.0 {
        return x.clone();
    }
    let keep = 1.0 - rate;
    let mask = Tensor::new(
        x.shape().to_vec(),
        (0..x.value().len())
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect(),
    );
    x.mul_const(Rc::new(mask))
}

/// Batch statistics used by a training-mode batch norm.
pub struct BatchStats {
    pub mean: Tensor,
    pub var: Tensor,
}

/// Channel-wise batch normalization of NCHW input. With `running` the given
/// statistics are used (inference); otherwise batch statistics are used and
/// returned.
pub fn batch_norm(
    x: &Var,
    gamma: &Var,
    beta: &Var,
    running: Option<(&Tensor, &Tensor)>,
    eps: f64,
) -> (Var, Option<BatchStats>) {
    let c = x.shape()[1];
    let bshape = [1, c, 1, 1];
    let (normed, stats) = match running {
        Some((mean, var)) => {
            let mean = Var::constant(mean.clone().reshaped(bshape.to_vec()));
            let std = var.map(|v| (v + eps).sqrt()).reshaped(bshape.to_vec());
            (x.sub(&mean).div(&Var::constant(std)), None)
        }
        None => {
            let mean = x.mean_axes(&[0, 2, 3]);
            let centered = x.sub(&mean);
            let var = centered.square().mean_axes(&[0, 2, 3]);
            let stats = BatchStats {
                mean: mean.value().clone().reshaped(vec![c]),
                var: var.value().clone().reshaped(vec![c]),
            };
            (centered.div(&var.add_scalar(eps).sqrt()), Some(stats))
        }
    };
    let out = normed
        .mul(&gamma.reshape(&bshape))
        .add(&beta.reshape(&bshape));
    (out, stats)
}
