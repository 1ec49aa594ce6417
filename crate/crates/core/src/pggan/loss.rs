use crate::imaging::Image;
use crate::{Error, Result};
use braingan_autograd::{grad, Tensor, Var};
use rand::Rng;

/// Keeps the norm differentiable where the gradient vanishes.
const NORM_EPS: f64 = 1e-12;

/// `lambda * mean_i (||d critic / d x_hat_i|| - 1)^2` with
/// `x_hat_i = w_i * real_i + (1 - w_i) * fake_i` and `w_i ~ U[0, 1)`.
///
/// `critic` maps a batch `[N, ...]` to scores `[N]` (or any shape whose
/// sum is the sum of per-item scores). The result stays differentiable
/// with respect to whatever the critic closes over.
pub fn gradient_penalty<F, R>(
    critic: F,
    real: &Tensor,
    fake: &Tensor,
    lambda: f64,
    rng: &mut R,
) -> Result<Var>
where
    F: Fn(&Var) -> Var,
    R: Rng + ?Sized,
{
    let n = real.shape().first().copied().unwrap_or(0);
    let weights: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    gradient_penalty_with_weights(critic, real, fake, &weights, lambda)
}

pub fn gradient_penalty_with_weights<F>(
    critic: F,
    real: &Tensor,
    fake: &Tensor,
    weights: &[f64],
    lambda: f64,
) -> Result<Var>
where
    F: Fn(&Var) -> Var,
{
    if real.shape() != fake.shape() {
        return Err(Error::Dimension(format!(
            "real batch {:?} and fake batch {:?} differ",
            real.shape(),
            fake.shape()
        )));
    }
    let n = real.shape().first().copied().unwrap_or(0);
    if n == 0 || real.ndim() < 2 {
        return Err(Error::InvalidArgument("gradient penalty needs a non-empty batch".into()));
    }
    if weights.len() != n {
        return Err(Error::InvalidArgument("one interpolation weight per pair required".into()));
    }
    let per = real.len() / n;
    let mut mixed = real.data().to_vec();
    for (i, chunk) in mixed.chunks_mut(per).enumerate() {
        let w = weights[i];
        for (m, f) in chunk.iter_mut().zip(&fake.data()[i * per..(i + 1) * per]) {
            *m = w * *m + (1.0 - w) * f;
        }
    }
    let x_hat = Var::leaf(Tensor::new(real.shape().to_vec(), mixed));
    let scores = critic(&x_hat);
    let g = grad(&scores.sum(), std::slice::from_ref(&x_hat), true).remove(0);
    let axes: Vec<usize> = (1..real.ndim()).collect();
    let norms = g.square().sum_axes(&axes).reshape(&[n]).add_scalar(NORM_EPS).sqrt();
    Ok(norms.add_scalar(-1.0).square().mean().scale(lambda))
}

/// `mean(fake) - mean(real) + gp + drift * mean(real^2)`.
pub fn critic_loss(real_scores: &Var, fake_scores: &Var, gp: &Var, drift_epsilon: f64) -> Var {
    fake_scores
        .mean()
        .sub(&real_scores.mean())
        .add(gp)
        .add(&real_scores.square().mean().scale(drift_epsilon))
}

/// `-mean(fake)`.
pub fn generator_loss(fake_scores: &Var) -> Var {
    fake_scores.mean().neg()
}

/// `(1 - alpha) * low + alpha * high`; the endpoints return an input
/// unchanged.
pub fn fade_in_blend(low: &Image, high: &Image, alpha: f64) -> Result<Image> {
    if low.dims() != high.dims() || low.range() != high.range() {
        return Err(Error::Dimension(format!(
            "fade branches differ: {:?} vs {:?}",
            low.dims(),
            high.dims()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside [0, 1]")));
    }
    if alpha == 0.0 {
        return Ok(low.clone());
    }
    if alpha == 1.0 {
        return Ok(high.clone());
    }
    let pixels = low
        .pixels()
        .iter()
        .zip(high.pixels())
        .map(|(l, h)| (1.0 - alpha) * l + alpha * h)
        .collect();
    Image::clamped(low.height(), low.width(), pixels, low.range())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::ValueRange;
    use braingan_autograd::functional::conv2d;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn per_item_sum(x: &Var, c: f64) -> Var {
        let n = x.shape()[0];
        let axes: Vec<usize> = (1..x.shape().len()).collect();
        x.sum_axes(&axes).reshape(&[n]).scale(c)
    }

    fn batch(seed: u64, shape: Vec<usize>) -> Tensor {
        Tensor::randn(shape, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn linear_critic_cases() {
        let real = batch(0, vec![3, 1, 4, 4]);
        let fake = batch(1, vec![3, 1, 4, 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gp = gradient_penalty(|x| per_item_sum(x, 1.0), &real, &fake, 10.0, &mut rng).unwrap();
        assert!((gp.item() - 90.0).abs() < 1e-6, "{}", gp.item());
        let gp = gradient_penalty(|x| per_item_sum(x, 0.25), &real, &fake, 10.0, &mut rng).unwrap();
        assert!(gp.item() <= 1e-6);
        let gp = gradient_penalty(|x| per_item_sum(x, 0.75), &real, &fake, 10.0, &mut rng).unwrap();
        assert!((gp.item() - 40.0).abs() < 1e-6);
    }

    #[test]
    fn penalty_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = Var::constant(Tensor::randn(vec![2, 1, 3, 3], &mut rng).map(|v| 0.5 * v));
        let v = Var::constant(Tensor::randn(vec![1, 2, 8, 8], &mut rng).map(|v| 0.3 * v));
        let critic = |x: &Var| {
            let n = x.shape()[0];
            conv2d(x, &w, None, 1, 1).tanh().mul(&v).sum_axes(&[1, 2, 3]).reshape(&[n])
        };
        let real = batch(6, vec![2, 1, 8, 8]);
        let fake = batch(7, vec![2, 1, 8, 8]);
        let weights = [0.3, 0.8];
        let gp = gradient_penalty_with_weights(critic, &real, &fake, &weights, 10.0).unwrap();

        let h = 1e-5;
        let mut expect = 0.0;
        for (i, &wt) in weights.iter().enumerate() {
            let x: Vec<f64> = (0..64)
                .map(|p| wt * real.data()[i * 64 + p] + (1.0 - wt) * fake.data()[i * 64 + p])
                .collect();
            let eval = |x: &[f64]| critic(&Var::constant(Tensor::new(vec![1, 1, 8, 8], x.to_vec()))).item();
            let mut sq = 0.0;
            for p in 0..64 {
                let (mut up, mut down) = (x.clone(), x.clone());
                up[p] += h;
                down[p] -= h;
                let d = (eval(&up) - eval(&down)) / (2.0 * h);
                sq += d * d;
            }
            expect += (sq.sqrt() - 1.0).powi(2);
        }
        expect *= 10.0 / 2.0;
        assert!(((gp.item() - expect) / expect).abs() <= 1e-4, "{} vs {expect}", gp.item());
    }

    #[test]
    fn penalty_rejects_bad_batches() {
        let a = Tensor::zeros(vec![2, 1, 4, 4]);
        let b = Tensor::zeros(vec![3, 1, 4, 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(gradient_penalty(|x| x.sum(), &a, &b, 10.0, &mut rng).is_err());
        let e = Tensor::zeros(vec![0, 1, 4, 4]);
        assert!(gradient_penalty(|x| x.sum(), &e, &e, 10.0, &mut rng).is_err());
    }

    fn scores(v: &[f64]) -> Var {
        Var::constant(Tensor::new(vec![v.len()], v.to_vec()))
    }

    #[test]
    fn loss_examples() {
        let zero = Var::scalar(0.0);
        let s = scores(&[0.4, -1.2, 3.0]);
        assert_eq!(critic_loss(&s, &s, &zero, 0.0).item(), 0.0);
        assert_eq!(generator_loss(&scores(&[-2.5, -2.5])).item(), 2.5);
        let l = critic_loss(&scores(&[1.0, 3.0]), &scores(&[0.0, 2.0]), &Var::scalar(0.5), 0.0);
        assert!((l.item() + 0.5).abs() < 1e-12);
        let with_drift = critic_loss(&scores(&[1.0, 3.0]), &scores(&[0.0, 2.0]), &zero, 1e-3);
        assert!((with_drift.item() - (-1.0 + 1e-3 * 5.0)).abs() < 1e-12);
    }

    #[test]
    fn critic_loss_decreases_with_real_scores() {
        let fake = scores(&[0.1, 0.2]);
        let zero = Var::scalar(0.0);
        let mut last = f64::INFINITY;
        for r in [-3.0, -1.0, 0.0, 1.0, 4.0] {
            let l = critic_loss(&scores(&[r, r]), &fake, &zero, 0.0).item();
            assert!(l < last);
            last = l;
        }
    }

    #[test]
    fn blend_examples() {
        let a = Image::filled(3, 3, 0.2, ValueRange::Model).unwrap();
        let b = Image::filled(3, 3, 0.6, ValueRange::Model).unwrap();
        assert_eq!(fade_in_blend(&a, &b, 0.0).unwrap(), a);
        assert_eq!(fade_in_blend(&a, &b, 1.0).unwrap(), b);
        let mid = fade_in_blend(&a, &b, 0.5).unwrap();
        assert!(mid.pixels().iter().all(|p| (p - 0.4).abs() < 1e-12));
        let c = Image::filled(2, 3, 0.6, ValueRange::Model).unwrap();
        assert!(fade_in_blend(&a, &c, 0.5).is_err());
    }
}
