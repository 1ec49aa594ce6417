use super::checkpoint::{GanCheckpoint, RngState};
use super::loss::{critic_loss, generator_loss, gradient_penalty_with_weights};
use super::network::{Discriminator, Generator, NetworkShape};
use super::schedule::{stage_schedule, ResolutionSchedule};
use crate::dataset::{Label, LabeledSlice};
use crate::imaging::{denormalize, normalize, Image, ValueRange};
use crate::seeding::rng_for;
use crate::{Error, Result};
use braingan_autograd::optim::{Adam, AdamConfig};
use braingan_autograd::{no_grad, Tensor, Var};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanTrainConfig {
    pub class: Label,
    pub seed: u64,
    pub schedule: ResolutionSchedule,
    pub latent_dim: usize,
    pub epochs_total: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub gp_lambda: f64,
    pub drift_epsilon: f64,
    pub fade_fraction: f64,
    /// Critic updates per generator update.
    pub n_critic: usize,
    pub fmap_base: usize,
    pub fmap_max: usize,
    pub fmap_min: usize,
}

impl GanTrainConfig {
    /// 256x256, 100 epochs, batch 16, Adam at 1e-3.
    pub fn paper(class: Label, seed: u64) -> Self {
        GanTrainConfig {
            class,
            seed,
            schedule: ResolutionSchedule { start_res: 4, final_res: 256 },
            latent_dim: 512,
            epochs_total: 100,
            batch_size: 16,
            learning_rate: 1e-3,
            adam_beta1: 0.0,
            adam_beta2: 0.99,
            gp_lambda: 10.0,
            drift_epsilon: 1e-3,
            fade_fraction: 0.5,
            n_critic: 1,
            fmap_base: 8192,
            fmap_max: 512,
            fmap_min: 1,
        }
    }

    /// 64x64 with narrow networks, sized for a CPU run in minutes.
    pub fn desk(class: Label, seed: u64) -> Self {
        GanTrainConfig {
            schedule: ResolutionSchedule { start_res: 4, final_res: 64 },
            latent_dim: 128,
            epochs_total: 10,
            fmap_base: 64,
            fmap_max: 32,
            fmap_min: 8,
            ..Self::paper(class, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.network_shape().validate()?;
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.epochs_total < self.schedule.num_stages() {
            return bad("epochs_total must cover every stage");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if self.n_critic == 0 {
            return bad("n_critic must be at least 1");
        }
        if !(self.gp_lambda >= 0.0 && self.drift_epsilon >= 0.0) {
            return bad("gp_lambda and drift_epsilon must be non-negative");
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("invalid optimizer settings");
        }
        if !(self.fade_fraction > 0.0 && self.fade_fraction <= 1.0) {
            return bad("fade_fraction must lie in (0, 1]");
        }
        Ok(())
    }

    pub fn network_shape(&self) -> NetworkShape {
        NetworkShape {
            latent_dim: self.latent_dim,
            schedule: self.schedule,
            fmap_base: self.fmap_base,
            fmap_max: self.fmap_max,
            fmap_min: self.fmap_min,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: 1e-8,
        }
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn config_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

/// One generator update and the critic update preceding it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub step: u64,
    #[serde(rename = "L_D")]
    pub loss_d: f64,
    #[serde(rename = "L_G")]
    pub loss_g: f64,
    pub gp: f64,
    pub alpha: f64,
    pub stage: usize,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Writes `stage{k}.ckpt` after every stage when set.
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: GanCheckpoint,
    pub history: Vec<LossRecord>,
}

/// `[N, 1, R, R]` model-range tensor from same-sized slices.
fn to_tensor(images: &[&Image]) -> Result<Tensor> {
    let (h, w) = images[0].dims();
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        if img.dims() != (h, w) {
            return Err(Error::Dimension("images differ in size".into()));
        }
        let img = match img.range() {
            ValueRange::Model => (*img).clone(),
            ValueRange::Storage => normalize(img, ValueRange::Model)?,
        };
        data.extend_from_slice(img.pixels());
    }
    Ok(Tensor::new(vec![images.len(), 1, h, w], data))
}

fn gather(t: &Tensor, idx: &[usize]) -> Tensor {
    let per = t.len() / t.shape()[0];
    let mut data = Vec::with_capacity(idx.len() * per);
    for &i in idx {
        data.extend_from_slice(&t.data()[i * per..(i + 1) * per]);
    }
    let mut shape = t.shape().to_vec();
    shape[0] = idx.len();
    Tensor::new(shape, data)
}

fn pool(t: &Tensor) -> Tensor {
    Var::constant(t.clone()).avg_pool2().value().clone()
}

fn upsample(t: &Tensor) -> Tensor {
    Var::constant(t.clone()).upsample2().value().clone()
}

fn diverged(step: u64, what: &str) -> Error {
    Error::Diverged {
        iteration: step as usize,
        what: what.to_string(),
    }
}

/// Trains one class. Each step draws a shuffled real batch, applies
/// `n_critic` critic updates and one generator update.
pub fn train(cfg: &GanTrainConfig, slices: &[LabeledSlice], options: &TrainOptions) -> Result<TrainOutcome> {
    cfg.validate()?;
    if slices.len() < 2 {
        return Err(Error::Dataset("GAN training needs at least 2 images".into()));
    }
    let res = cfg.schedule.final_res;
    if let Some(s) = slices.iter().find(|s| s.label != cfg.class) {
        return Err(Error::Dataset(format!(
            "store for {} training contains a {} slice",
            cfg.class, s.label
        )));
    }
    if let Some(s) = slices.iter().find(|s| s.image.dims() != (res, res)) {
        return Err(Error::Dimension(format!(
            "training images must be {res}x{res}, found {:?}",
            s.image.dims()
        )));
    }
    let _guard = no_grad();
    let images: Vec<&Image> = slices.iter().map(|s| &s.image).collect();
    let n_stages = cfg.schedule.num_stages();
    let mut pyramid = vec![to_tensor(&images)?];
    for _ in 1..n_stages {
        let next = pool(pyramid.last().unwrap());
        pyramid.push(next);
    }
    pyramid.reverse();
    drop(_guard);

    let plans = stage_schedule(cfg.epochs_total, &cfg.schedule, cfg.fade_fraction)?;
    let mut rng = rng_for(cfg.seed, &[0x6A4, cfg.class.class_index() as u64]);
    let shape = cfg.network_shape();
    let mut gen = Generator::new(shape, &mut rng)?;
    let mut disc = Discriminator::new(shape, &mut rng)?;
    let n = slices.len();
    let batch = cfg.batch_size.min(n);
    let steps_per_epoch = n / batch;
    let mut history = Vec::new();
    let (mut epoch, mut step) = (0usize, 0u64);
    let (mut opt_g, mut opt_d) = (Adam::new(cfg.adam()), Adam::new(cfg.adam()));
    let mut alpha = 1.0;
    let mut stage = 0;
    for plan in &plans {
        stage = plan.stage;
        // Fresh moments per stage: new layers start without stale statistics.
        opt_g = Adam::new(cfg.adam());
        opt_d = Adam::new(cfg.adam());
        for e in 0..plan.epochs {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            for s in 0..steps_per_epoch {
                alpha = plan.alpha_at(e as f64 + s as f64 / steps_per_epoch as f64);
                let idx = &order[s * batch..(s + 1) * batch];
                let mut real = gather(&pyramid[stage], idx);
                if stage > 0 && alpha < 1.0 {
                    let low = upsample(&pool(&real));
                    real = low.zip_map(&real, |l, h| (1.0 - alpha) * l + alpha * h);
                }
                let (mut loss_d, mut gp_value) = (0.0, 0.0);
                for _ in 0..cfg.n_critic {
                    let z = Tensor::randn(vec![batch, cfg.latent_dim], &mut rng);
                    let fake = gen.generate(&z, stage, alpha)?;
                    let weights: Vec<f64> = (0..batch).map(|_| rng.random::<f64>()).collect();
                    let b = disc.params.bind();
                    let critic = |x: &Var| disc.forward_unchecked(&b, x, stage, alpha);
                    let real_scores = critic(&Var::constant(real.clone()));
                    let fake_scores = critic(&Var::constant(fake.clone()));
                    let gp = gradient_penalty_with_weights(critic, &real, &fake, &weights, cfg.gp_lambda)?;
                    let loss = critic_loss(&real_scores, &fake_scores, &gp, cfg.drift_epsilon);
                    loss_d = loss.item();
                    gp_value = gp.item();
                    if !loss_d.is_finite() {
                        return Err(diverged(step, "critic loss"));
                    }
                    let grads = b.param_grads(&loss, &disc.params);
                    opt_d.step(&mut disc.params, &grads);
                }
                let z = Var::constant(Tensor::randn(vec![batch, cfg.latent_dim], &mut rng));
                let bg = gen.params.bind();
                let bd = disc.params.bind_frozen();
                let fake = gen.forward_unchecked(&bg, &z, stage, alpha);
                let loss = generator_loss(&disc.forward_unchecked(&bd, &fake, stage, alpha));
                let loss_g = loss.item();
                if !loss_g.is_finite() {
                    return Err(diverged(step, "generator loss"));
                }
                let grads = bg.param_grads(&loss, &gen.params);
                opt_g.step(&mut gen.params, &grads);
                history.push(LossRecord {
                    epoch,
                    step,
                    loss_d,
                    loss_g,
                    gp: gp_value,
                    alpha,
                    stage,
                });
                step += 1;
            }
            epoch += 1;
            // The stage ends fully faded in.
            alpha = plan.alpha_at(e as f64 + 1.0);
        }
        if let Some(dir) = &options.checkpoint_dir {
            snapshot(cfg, stage, alpha, epoch, step, &gen, &disc, &opt_g, &opt_d, &rng)
                .save(dir.join(format!("stage{stage}.ckpt")))?;
        }
        log::info!("{} GAN stage {stage} done after {step} steps", cfg.class);
    }
    let checkpoint = snapshot(cfg, stage, alpha, epoch, step, &gen, &disc, &opt_g, &opt_d, &rng);
    Ok(TrainOutcome { checkpoint, history })
}

#[allow(clippy::too_many_arguments)]
fn snapshot(
    cfg: &GanTrainConfig,
    stage: usize,
    alpha: f64,
    epoch: usize,
    steps: u64,
    gen: &Generator,
    disc: &Discriminator,
    opt_g: &Adam,
    opt_d: &Adam,
    rng: &rand_chacha::ChaCha8Rng,
) -> GanCheckpoint {
    GanCheckpoint {
        config: cfg.clone(),
        stage,
        alpha,
        epoch,
        steps,
        generator: gen.clone(),
        discriminator: disc.clone(),
        opt_g: opt_g.clone(),
        opt_d: opt_d.clone(),
        rng: RngState::capture(rng),
    }
}

pub fn write_loss_csv(path: &Path, history: &[LossRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    for r in history {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

const GEN_BATCH: usize = 32;

/// `n` storage-range images. Sample `i` uses a latent drawn from its own
/// stream of `seed`, so output does not depend on batching.
pub fn generate_samples(ckpt: &GanCheckpoint, n: usize, seed: u64) -> Result<Vec<Image>> {
    let latent = ckpt.config.latent_dim;
    let res = ckpt.resolution();
    let mut out = Vec::with_capacity(n);
    for start in (0..n).step_by(GEN_BATCH) {
        let len = GEN_BATCH.min(n - start);
        let mut z = Vec::with_capacity(len * latent);
        for i in start..start + len {
            let mut rng = rng_for(seed, &[0x5A3, i as u64]);
            z.extend(Tensor::randn(vec![latent], &mut rng).into_data());
        }
        let imgs = ckpt.generate(&Tensor::new(vec![len, latent], z))?;
        for chunk in imgs.data().chunks(res * res) {
            let img = Image::clamped(res, res, chunk.to_vec(), ValueRange::Model)?;
            out.push(denormalize(&img)?);
        }
    }
    Ok(out)
}

/// Critic batch size for scoring. Scores depend on batch composition
/// through the minibatch-stddev feature, so batching is fixed.
pub const SCORE_BATCH: usize = 32;

pub fn critic_scores(ckpt: &GanCheckpoint, images: &[Image]) -> Result<Vec<f64>> {
    let res = ckpt.resolution();
    let mut scores = Vec::with_capacity(images.len());
    for chunk in images.chunks(SCORE_BATCH) {
        let refs: Vec<&Image> = chunk.iter().collect();
        if let Some(img) = refs.iter().find(|i| i.dims() != (res, res)) {
            return Err(Error::Dimension(format!(
                "critic expects {res}x{res} images, got {:?}",
                img.dims()
            )));
        }
        scores.extend(ckpt.discriminator.score(&to_tensor(&refs)?, ckpt.stage, ckpt.alpha)?);
    }
    Ok(scores)
}

/// Indices (ascending) of the `round(keep_fraction * n)` highest scores,
/// at least one. Ties keep the earlier index.
pub fn select_top(scores: &[f64], keep_fraction: f64) -> Result<Vec<usize>> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::InvalidArgument("keep_fraction must lie in (0, 1]".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument("critic scores must be finite".into()));
    }
    if scores.is_empty() {
        return Ok(Vec::new());
    }
    let keep = ((keep_fraction * scores.len() as f64).round() as usize).clamp(1, scores.len());
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut kept = order[..keep].to_vec();
    kept.sort_unstable();
    Ok(kept)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredImage {
    pub index: usize,
    pub score: f64,
    pub image: Image,
}

/// Keeps the best-scored `keep_fraction` of `images` in their original
/// order.
pub fn curate_samples(ckpt: &GanCheckpoint, images: &[Image], keep_fraction: f64) -> Result<Vec<ScoredImage>> {
    let scores = critic_scores(ckpt, images)?;
    Ok(select_top(&scores, keep_fraction)?
        .into_iter()
        .map(|i| ScoredImage {
            index: i,
            score: scores[i],
            image: images[i].clone(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::generate_phantom;

    fn tiny_cfg() -> GanTrainConfig {
        GanTrainConfig {
            schedule: ResolutionSchedule { start_res: 4, final_res: 8 },
            latent_dim: 8,
            epochs_total: 4,
            batch_size: 4,
            fmap_base: 16,
            fmap_max: 8,
            fmap_min: 4,
            ..GanTrainConfig::desk(Label::Tumor, 11)
        }
    }

    fn tiny_data(n: usize) -> Vec<LabeledSlice> {
        (0..n as u64)
            .map(|i| {
                let vol = generate_phantom(i, false, 16, 3).unwrap();
                let img = crate::imaging::center_crop(&vol.slices[1], 8, 8).unwrap();
                LabeledSlice::synthetic(img, Label::Tumor, crate::dataset::Provenance::Real)
            })
            .collect()
    }

    #[test]
    fn presets_validate() {
        GanTrainConfig::paper(Label::Tumor, 0).validate().unwrap();
        GanTrainConfig::desk(Label::NonTumor, 0).validate().unwrap();
        let p = GanTrainConfig::paper(Label::Tumor, 0);
        assert_eq!((p.epochs_total, p.batch_size, p.learning_rate), (100, 16, 1e-3));
        assert_eq!(p.schedule.final_res, 256);
        let mut bad = tiny_cfg();
        bad.batch_size = 1;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn training_is_deterministic_and_finite() {
        let data = tiny_data(9);
        let a = train(&tiny_cfg(), &data, &TrainOptions::default()).unwrap();
        let b = train(&tiny_cfg(), &data, &TrainOptions::default()).unwrap();
        assert_eq!(a.history, b.history);
        // 9 images in batches of 4: two steps per epoch.
        assert_eq!(a.history.len(), 8);
        assert!(a.history.iter().all(|r| r.loss_d.is_finite() && r.loss_g.is_finite()));
        assert_eq!(a.checkpoint.stage, 1);
        assert_eq!(a.checkpoint.alpha, 1.0);
        let alphas: Vec<f64> = a.history.iter().map(|r| r.alpha).collect();
        assert_eq!(alphas, [1.0, 1.0, 1.0, 1.0, 0.0, 0.5, 1.0, 1.0]);
    }

    #[test]
    fn training_rejects_wrong_inputs() {
        let mut data = tiny_data(4);
        data[2].label = Label::NonTumor;
        assert!(train(&tiny_cfg(), &data, &TrainOptions::default()).is_err());
        let small = vec![LabeledSlice::synthetic(
            Image::filled(4, 4, 0.0, ValueRange::Storage).unwrap(),
            Label::Tumor,
            crate::dataset::Provenance::Real,
        ); 3];
        assert!(train(&tiny_cfg(), &small, &TrainOptions::default()).is_err());
        assert!(train(&tiny_cfg(), &[], &TrainOptions::default()).is_err());
    }

    #[test]
    fn checkpoint_reload_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let opts = TrainOptions {
            checkpoint_dir: Some(dir.path().to_path_buf()),
        };
        let out = train(&tiny_cfg(), &tiny_data(8), &opts).unwrap();
        assert!(dir.path().join("stage0.ckpt").is_file());
        let path = dir.path().join("final.ckpt");
        out.checkpoint.save(&path).unwrap();
        let back = GanCheckpoint::load(&path).unwrap();
        assert_eq!(back.generator.params, out.checkpoint.generator.params);
        assert_eq!(back.discriminator.params, out.checkpoint.discriminator.params);
        assert_eq!(back.opt_g, out.checkpoint.opt_g);
        assert_eq!(back.rng, out.checkpoint.rng);
        assert_eq!(back.rng.restore().unwrap(), out.checkpoint.rng.restore().unwrap());
        assert_eq!(
            generate_samples(&back, 5, 3).unwrap(),
            generate_samples(&out.checkpoint, 5, 3).unwrap()
        );
        let mut ar = out.checkpoint.to_archive().unwrap();
        ar.meta["config"]["seed"] = serde_json::json!(999);
        assert!(GanCheckpoint::from_archive(&ar).is_err());
    }

    #[test]
    fn samples_are_storage_range_and_seeded() {
        let out = train(&tiny_cfg(), &tiny_data(4), &TrainOptions::default()).unwrap();
        let a = generate_samples(&out.checkpoint, 40, 1).unwrap();
        assert_eq!(a.len(), 40);
        assert!(a.iter().all(|i| i.dims() == (8, 8) && i.range() == ValueRange::Storage));
        let b = generate_samples(&out.checkpoint, 35, 1).unwrap();
        assert_eq!(&a[..35], &b[..]);
        assert_ne!(a, generate_samples(&out.checkpoint, 40, 2).unwrap());
    }

    #[test]
    fn curation_keeps_top_scores() {
        let scores: Vec<f64> = (0..100).map(|i| ((i * 37) % 100) as f64).collect();
        let kept = select_top(&scores, 0.75).unwrap();
        assert_eq!(kept.len(), 75);
        let min_kept = kept.iter().map(|&i| scores[i]).fold(f64::INFINITY, f64::min);
        let max_dropped = (0..100)
            .filter(|i| !kept.contains(i))
            .map(|i| scores[i])
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(min_kept >= max_dropped);
        assert_eq!(select_top(&scores, 1.0).unwrap(), (0..100).collect::<Vec<_>>());
        assert!(select_top(&scores, 0.0).is_err());
        assert_eq!(select_top(&[1.0, 2.0], 0.1).unwrap(), [1]);

        let out = train(&tiny_cfg(), &tiny_data(4), &TrainOptions::default()).unwrap();
        let imgs = generate_samples(&out.checkpoint, 10, 0).unwrap();
        let all = curate_samples(&out.checkpoint, &imgs, 1.0).unwrap();
        assert_eq!(all.into_iter().map(|s| s.image).collect::<Vec<_>>(), imgs);
    }

    #[test]
    fn loss_csv_has_expected_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loss.csv");
        let rec = LossRecord {
            epoch: 0,
            step: 1,
            loss_d: -0.5,
            loss_g: 0.25,
            gp: 0.1,
            alpha: 1.0,
            stage: 0,
        };
        write_loss_csv(&path, &[rec]).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert_eq!(text.lines().next().unwrap(), "epoch,step,L_D,L_G,gp,alpha,stage");
        assert_eq!(text.lines().count(), 2);
    }
}
