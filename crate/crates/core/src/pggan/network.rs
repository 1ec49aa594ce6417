use super::schedule::ResolutionSchedule;
use crate::{Error, Result};
use braingan_autograd::functional::{fade_in, minibatch_stddev, pixel_norm};
use braingan_autograd::nn::{Bound, EqualizedConv2d, EqualizedLinear, ParamSet};
use braingan_autograd::{no_grad, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const LRELU_SLOPE: f64 = 0.2;
const PIXEL_NORM_EPS: f64 = 1e-8;
const MBSTD_EPS: f64 = 1e-8;

/// Architecture hyperparameters shared by the generator and critic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub latent_dim: usize,
    pub schedule: ResolutionSchedule,
    pub fmap_base: usize,
    pub fmap_max: usize,
    pub fmap_min: usize,
}

impl NetworkShape {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.latent_dim == 0 || self.fmap_min == 0 || self.fmap_min > self.fmap_max {
            return Err(Error::InvalidArgument(
                "latent_dim and feature-map bounds must be positive with fmap_min <= fmap_max".into(),
            ));
        }
        Ok(())
    }

    /// Feature maps at `stage`: `fmap_base / 2^(stage+1)` within bounds.
    pub fn channels(&self, stage: usize) -> usize {
        (self.fmap_base >> (stage + 1).min(63)).clamp(self.fmap_min, self.fmap_max)
    }

    fn check_stage(&self, stage: usize, alpha: f64) -> Result<usize> {
        let res = self.schedule.resolution(stage)?;
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidArgument(format!("alpha {alpha} outside [0, 1]")));
        }
        Ok(res)
    }
}

fn act(x: &Var) -> Var {
    x.leaky_relu(LRELU_SLOPE)
}

fn act_norm(x: &Var) -> Var {
    pixel_norm(&act(x), PIXEL_NORM_EPS)
}

#[derive(Debug, Clone)]
pub struct Generator {
    shape: NetworkShape,
    pub params: ParamSet,
    project: EqualizedLinear,
    base_conv: EqualizedConv2d,
    /// `blocks[k - 1]` grows stage `k - 1` into stage `k`.
    blocks: Vec<[EqualizedConv2d; 2]>,
    to_gray: Vec<EqualizedConv2d>,
}

impl Generator {
    pub fn new<R: Rng + ?Sized>(shape: NetworkShape, rng: &mut R) -> Result<Self> {
        shape.validate()?;
        let mut params = ParamSet::new();
        let s0 = shape.schedule.start_res;
        let c0 = shape.channels(0);
        let project = EqualizedLinear::new(
            &mut params,
            "g.project",
            shape.latent_dim,
            c0 * s0 * s0,
            2f64.sqrt(),
            rng,
        );
        let base_conv = EqualizedConv2d::new(&mut params, "g.base.conv", c0, c0, 3, rng);
        let n = shape.schedule.num_stages();
        let mut blocks = Vec::new();
        for k in 1..n {
            let (cin, cout) = (shape.channels(k - 1), shape.channels(k));
            blocks.push([
                EqualizedConv2d::new(&mut params, &format!("g.block{k}.conv0"), cin, cout, 3, rng),
                EqualizedConv2d::new(&mut params, &format!("g.block{k}.conv1"), cout, cout, 3, rng),
            ]);
        }
        let to_gray = (0..n)
            .map(|k| {
                EqualizedConv2d::with_gain(
                    &mut params,
                    &format!("g.to_gray{k}"),
                    shape.channels(k),
                    1,
                    1,
                    1.0,
                    rng,
                )
            })
            .collect();
        Ok(Generator {
            shape,
            params,
            project,
            base_conv,
            blocks,
            to_gray,
        })
    }

    pub fn shape(&self) -> &NetworkShape {
        &self.shape
    }

    /// The previous-stage branch (already upsampled, `None` at stage 0) and
    /// the current-stage branch, each tanh-bounded.
    pub fn branches(&self, b: &Bound, z: &Var, stage: usize) -> Result<(Option<Var>, Var)> {
        self.shape.check_stage(stage, 1.0)?;
        if z.shape().len() != 2 || z.shape()[1] != self.shape.latent_dim {
            return Err(Error::Dimension(format!(
                "latent batch {:?} does not match latent_dim {}",
                z.shape(),
                self.shape.latent_dim
            )));
        }
        Ok(self.branches_unchecked(b, z, stage))
    }

    fn branches_unchecked(&self, b: &Bound, z: &Var, stage: usize) -> (Option<Var>, Var) {
        let n = z.shape()[0];
        let s0 = self.shape.schedule.start_res;
        let x = pixel_norm(z, PIXEL_NORM_EPS);
        let h = self.project.forward(b, &x).reshape(&[n, self.shape.channels(0), s0, s0]);
        let mut h = act_norm(&self.base_conv.forward(b, &act_norm(&h)));
        let mut prev = None;
        for k in 1..=stage {
            let [c0, c1] = &self.blocks[k - 1];
            let up = h.upsample2();
            prev = Some(h);
            h = act_norm(&c1.forward(b, &act_norm(&c0.forward(b, &up))));
        }
        let high = self.to_gray[stage].forward(b, &h).tanh();
        let low = prev.map(|p| self.to_gray[stage - 1].forward(b, &p).tanh().upsample2());
        (low, high)
    }

    /// Images `[N, 1, R, R]` in `[-1, 1]` for latents `[N, latent_dim]`.
    pub fn forward(&self, b: &Bound, z: &Var, stage: usize, alpha: f64) -> Result<Var> {
        self.shape.check_stage(stage, alpha)?;
        self.branches(b, z, stage)?;
        Ok(self.forward_unchecked(b, z, stage, alpha))
    }

    pub(crate) fn forward_unchecked(&self, b: &Bound, z: &Var, stage: usize, alpha: f64) -> Var {
        if alpha == 1.0 || stage == 0 {
            return self.branches_unchecked(b, z, stage).1;
        }
        match self.branches_unchecked(b, z, stage) {
            (Some(low), high) => fade_in(&low, &high, alpha),
            (None, high) => high,
        }
    }

    /// Inference without graph construction.
    pub fn generate(&self, z: &Tensor, stage: usize, alpha: f64) -> Result<Tensor> {
        let _guard = no_grad();
        let b = self.params.bind_frozen();
        Ok(self.forward(&b, &Var::constant(z.clone()), stage, alpha)?.value().clone())
    }
}

/// Wasserstein critic mirroring the generator; outputs one unbounded score
/// per image.
#[derive(Debug, Clone)]
pub struct Discriminator {
    shape: NetworkShape,
    pub params: ParamSet,
    from_gray: Vec<EqualizedConv2d>,
    /// `blocks[k - 1]` reduces stage `k` features to stage `k - 1`.
    blocks: Vec<[EqualizedConv2d; 2]>,
    final_conv: EqualizedConv2d,
    dense: EqualizedLinear,
    out: EqualizedLinear,
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(shape: NetworkShape, rng: &mut R) -> Result<Self> {
        shape.validate()?;
        let mut params = ParamSet::new();
        let n = shape.schedule.num_stages();
        let from_gray = (0..n)
            .map(|k| {
                EqualizedConv2d::new(&mut params, &format!("d.from_gray{k}"), 1, shape.channels(k), 1, rng)
            })
            .collect();
        let mut blocks = Vec::new();
        for k in 1..n {
            let (cin, cout) = (shape.channels(k), shape.channels(k - 1));
            blocks.push([
                EqualizedConv2d::new(&mut params, &format!("d.block{k}.conv0"), cin, cin, 3, rng),
                EqualizedConv2d::new(&mut params, &format!("d.block{k}.conv1"), cin, cout, 3, rng),
            ]);
        }
        let c0 = shape.channels(0);
        let s0 = shape.schedule.start_res;
        let final_conv = EqualizedConv2d::new(&mut params, "d.final.conv", c0 + 1, c0, 3, rng);
        let dense = EqualizedLinear::new(&mut params, "d.final.dense", c0 * s0 * s0, c0, 2f64.sqrt(), rng);
        let out = EqualizedLinear::new(&mut params, "d.final.out", c0, 1, 1.0, rng);
        Ok(Discriminator {
            shape,
            params,
            from_gray,
            blocks,
            final_conv,
            dense,
            out,
        })
    }

    pub fn shape(&self) -> &NetworkShape {
        &self.shape
    }

    /// Scores `[N]` for images `[N, 1, R, R]` at `stage`.
    pub fn forward(&self, b: &Bound, x: &Var, stage: usize, alpha: f64) -> Result<Var> {
        let res = self.shape.check_stage(stage, alpha)?;
        let s = x.shape();
        if s.len() != 4 || s[1] != 1 || s[2] != res || s[3] != res || s[0] == 0 {
            return Err(Error::Dimension(format!(
                "critic at stage {stage} expects [N, 1, {res}, {res}], got {s:?}"
            )));
        }
        Ok(self.forward_unchecked(b, x, stage, alpha))
    }

    pub(crate) fn forward_unchecked(&self, b: &Bound, x: &Var, stage: usize, alpha: f64) -> Var {
        let n = x.shape()[0];
        let block = |k: usize, h: &Var| {
            let [c0, c1] = &self.blocks[k - 1];
            act(&c1.forward(b, &act(&c0.forward(b, h)))).avg_pool2()
        };
        let mut h = act(&self.from_gray[stage].forward(b, x));
        if stage > 0 {
            h = block(stage, &h);
            if alpha < 1.0 {
                let low = act(&self.from_gray[stage - 1].forward(b, &x.avg_pool2()));
                h = fade_in(&low, &h, alpha);
            }
            for k in (1..stage).rev() {
                h = block(k, &h);
            }
        }
        let h = act(&self.final_conv.forward(b, &minibatch_stddev(&h, MBSTD_EPS)));
        let h = h.reshape(&[n, h.value().len() / n]);
        self.out.forward(b, &act(&self.dense.forward(b, &h))).reshape(&[n])
    }

    /// Scores without graph construction.
    pub fn score(&self, x: &Tensor, stage: usize, alpha: f64) -> Result<Vec<f64>> {
        let _guard = no_grad();
        let b = self.params.bind_frozen();
        Ok(self
            .forward(&b, &Var::constant(x.clone()), stage, alpha)?
            .value()
            .data()
            .to_vec())
    }
}
