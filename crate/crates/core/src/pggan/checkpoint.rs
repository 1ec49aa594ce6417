use super::network::{Discriminator, Generator};
use super::train::GanTrainConfig;
use crate::{Error, Result};
use braingan_autograd::optim::Adam;
use braingan_autograd::{Tensor, TensorArchive};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

const FORMAT: &str = "braingan-gan-checkpoint";

/// Exact position of a ChaCha8 stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    /// 128-bit word position, decimal.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: hex::encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let bad = |what: &str| Error::Checkpoint(format!("invalid rng {what}"));
        let seed: [u8; 32] = hex::decode(&self.seed)
            .map_err(|_| bad("seed"))?
            .try_into()
            .map_err(|_| bad("seed length"))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad("word position"))?);
        Ok(rng)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    format: String,
    config: GanTrainConfig,
    config_hash: String,
    stage: usize,
    alpha: f64,
    epoch: usize,
    steps: u64,
    opt_g_steps: u64,
    opt_d_steps: u64,
    rng: RngState,
}

/// Immutable training snapshot.
#[derive(Debug, Clone)]
pub struct GanCheckpoint {
    pub config: GanTrainConfig,
    pub stage: usize,
    pub alpha: f64,
    /// Epochs completed.
    pub epoch: usize,
    /// Generator updates completed.
    pub steps: u64,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub opt_g: Adam,
    pub opt_d: Adam,
    pub rng: RngState,
}

impl GanCheckpoint {
    pub fn config_hash(&self) -> String {
        self.config.config_hash()
    }

    pub fn resolution(&self) -> usize {
        self.config.schedule.start_res << self.stage
    }

    pub fn to_archive(&self) -> Result<TensorArchive> {
        let (g_steps, g_state) = self.opt_g.export_state();
        let (d_steps, d_state) = self.opt_d.export_state();
        let meta = Meta {
            format: FORMAT.into(),
            config: self.config.clone(),
            config_hash: self.config_hash(),
            stage: self.stage,
            alpha: self.alpha,
            epoch: self.epoch,
            steps: self.steps,
            opt_g_steps: g_steps,
            opt_d_steps: d_steps,
            rng: self.rng.clone(),
        };
        let mut ar = TensorArchive::new(serde_json::to_value(&meta)?);
        ar.extend_prefixed("gen/", self.generator.params.named_tensors());
        ar.extend_prefixed("disc/", self.discriminator.params.named_tensors());
        ar.extend_prefixed("opt_g/", g_state);
        ar.extend_prefixed("opt_d/", d_state);
        Ok(ar)
    }

    pub fn from_archive(ar: &TensorArchive) -> Result<Self> {
        let meta: Meta = serde_json::from_value(ar.meta.clone())?;
        if meta.format != FORMAT {
            return Err(Error::Checkpoint(format!("unexpected format {:?}", meta.format)));
        }
        if meta.config.config_hash() != meta.config_hash {
            return Err(Error::Checkpoint("config hash mismatch".into()));
        }
        meta.config.validate()?;
        let shape = meta.config.network_shape();
        // Initial values are overwritten below.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut generator = Generator::new(shape, &mut rng)?;
        let mut discriminator = Discriminator::new(shape, &mut rng)?;
        let load = |set: &mut braingan_autograd::nn::ParamSet, named: Vec<(String, Tensor)>| {
            set.load_named(&named).map_err(Error::Checkpoint)
        };
        load(&mut generator.params, ar.with_prefix("gen/"))?;
        load(&mut discriminator.params, ar.with_prefix("disc/"))?;
        let adam = meta.config.adam();
        Ok(GanCheckpoint {
            stage: meta.stage,
            alpha: meta.alpha,
            epoch: meta.epoch,
            steps: meta.steps,
            generator,
            discriminator,
            opt_g: Adam::import_state(adam, meta.opt_g_steps, &ar.with_prefix("opt_g/")),
            opt_d: Adam::import_state(adam, meta.opt_d_steps, &ar.with_prefix("opt_d/")),
            rng: meta.rng,
            config: meta.config,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        Ok(self.to_archive()?.save(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_archive(&TensorArchive::load(path)?)
    }

    /// Images at the checkpoint's stage and fade weight.
    pub fn generate(&self, z: &Tensor) -> Result<Tensor> {
        self.generator.generate(z, self.stage, self.alpha)
    }
}
