//! End-to-end orchestration: phantoms, dataset preparation, per-class GAN
//! training, sampling and curation, classical augmentation, the four-way
//! classifier grid and the t-SNE embedding, all under one run directory.
//!
//! Every stage that consumes a pool reads it back from its on-disk store,
//! so a run sees exactly the 8-bit images that the separate subcommands
//! would see.

use crate::augment::{augment_dataset, AugmentPolicy};
use crate::classifier::{
    run_experiment_grid, ClassifierConfig, ConditionName, ExperimentCondition, GridData, GridReport,
};
use crate::dataset::{
    build_dataset, split_patients, BuildOptions, FilterPolicy, Label, LabeledSlice, Provenance, Split,
    SplitRatios, SplitSlice,
};
use crate::imaging::{normalize, ValueRange};
use crate::phantom::{generate_phantom, Volume};
use crate::pggan::{curate_samples, generate_samples, train, write_loss_csv, GanCheckpoint, GanTrainConfig, LossRecord, TrainOptions, TrainOutcome};
use crate::seeding::{derive_seed, rng_for};
use crate::store::{self, create_dir, read_json, write_json};
use crate::tsne::{embed, plot_embedding, write_embedding_csv, Embedding, EmbeddingConfig};
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Desk,
    Paper,
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scale::Desk => "desk",
            Scale::Paper => "paper",
        })
    }
}

impl FromStr for Scale {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "paper" => Ok(Scale::Paper),
            _ => Err(Error::InvalidArgument(format!("unknown scale {s:?} (expected desk or paper)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomConfig {
    pub n_patients: usize,
    /// Patients without any tumor; the rest carry one to three blobs.
    pub n_healthy: usize,
    pub size: usize,
    pub n_slices: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub lo: usize,
    pub hi: usize,
    pub ratios: SplitRatios,
    /// `None` scales the default thresholds to the phantom size.
    pub filter: Option<FilterPolicy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    /// Raw generator draws per class before curation.
    pub n_generate_per_class: usize,
    pub keep_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub policy: AugmentPolicy,
    pub n_per_class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneStageConfig {
    pub embedding: EmbeddingConfig,
    /// Images drawn from each of the six provenance x label categories.
    pub n_per_category: usize,
}

/// Versioned settings for a whole run. `gan.class` is ignored; both
/// classes are trained from the same template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub version: u32,
    pub scale: Scale,
    pub seed: u64,
    pub phantom: PhantomConfig,
    pub dataset: DatasetConfig,
    pub gan: GanTrainConfig,
    pub sampling: SamplingConfig,
    pub augment: AugmentConfig,
    pub classifier: ClassifierConfig,
    pub tsne: TsneStageConfig,
}

impl PipelineConfig {
    /// 64x64, narrow networks, 24 phantom patients; finishes in minutes.
    pub fn desk(seed: u64) -> Self {
        PipelineConfig {
            version: CONFIG_VERSION,
            scale: Scale::Desk,
            seed,
            phantom: PhantomConfig {
                n_patients: 24,
                n_healthy: 0,
                size: 60,
                n_slices: 40,
            },
            dataset: DatasetConfig {
                lo: 8,
                hi: 33,
                ratios: SplitRatios::PAPER,
                filter: None,
            },
            gan: GanTrainConfig::desk(Label::Tumor, seed),
            sampling: SamplingConfig {
                n_generate_per_class: 267,
                keep_fraction: 0.75,
            },
            augment: AugmentConfig {
                policy: AugmentPolicy::default(),
                n_per_class: 200,
            },
            classifier: ClassifierConfig::desk(seed),
            tsne: TsneStageConfig {
                embedding: EmbeddingConfig {
                    perplexity: 30.0,
                    ..EmbeddingConfig::paper(seed)
                },
                n_per_category: 50,
            },
        }
    }

    /// 256x256 with full-width networks and paper-sized pools. Long-running.
    pub fn paper(seed: u64) -> Self {
        PipelineConfig {
            version: CONFIG_VERSION,
            scale: Scale::Paper,
            seed,
            phantom: PhantomConfig {
                n_patients: 220,
                n_healthy: 0,
                size: 240,
                n_slices: 155,
            },
            dataset: DatasetConfig {
                lo: 30,
                hi: 130,
                ratios: SplitRatios::PAPER,
                filter: None,
            },
            gan: GanTrainConfig::paper(Label::Tumor, seed),
            sampling: SamplingConfig {
                n_generate_per_class: 133_333,
                keep_fraction: 0.75,
            },
            augment: AugmentConfig {
                policy: AugmentPolicy::default(),
                n_per_class: 100_000,
            },
            classifier: ClassifierConfig::paper(seed),
            tsne: TsneStageConfig {
                embedding: EmbeddingConfig::paper(seed),
                n_per_category: 300,
            },
        }
    }

    pub fn preset(scale: Scale, seed: u64) -> Self {
        match scale {
            Scale::Desk => Self::desk(seed),
            Scale::Paper => Self::paper(seed),
        }
    }

    /// Sets the global seed and every nested one.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.gan.seed = seed;
        self.classifier.seed = seed;
        self.tsne.embedding.seed = seed;
    }

    pub fn gan_config(&self, class: Label) -> GanTrainConfig {
        GanTrainConfig {
            class,
            ..self.gan.clone()
        }
    }

    pub fn filter_policy(&self) -> FilterPolicy {
        self.dataset
            .filter
            .unwrap_or_else(|| FilterPolicy::for_resolution(self.phantom.size, self.phantom.size))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.version != CONFIG_VERSION {
            return bad(format!("config version {} unsupported (expected {CONFIG_VERSION})", self.version));
        }
        let p = &self.phantom;
        if p.n_healthy > p.n_patients {
            return bad("n_healthy exceeds n_patients".into());
        }
        if p.size > self.gan.schedule.final_res {
            return bad(format!(
                "phantom size {} exceeds GAN resolution {}",
                p.size, self.gan.schedule.final_res
            ));
        }
        if self.dataset.hi >= p.n_slices || self.dataset.lo > self.dataset.hi {
            return bad(format!(
                "slice range {}..={} invalid for {} slices",
                self.dataset.lo, self.dataset.hi, p.n_slices
            ));
        }
        if self.classifier.input_size > self.gan.schedule.final_res {
            return bad("classifier input exceeds the padded slice size".into());
        }
        if !(self.sampling.keep_fraction > 0.0 && self.sampling.keep_fraction <= 1.0) {
            return bad("keep_fraction must lie in (0, 1]".into());
        }
        if self.sampling.n_generate_per_class == 0 || self.augment.n_per_class == 0 {
            return bad("pool sizes must be positive".into());
        }
        self.filter_policy().validate()?;
        self.gan.validate()?;
        self.augment.policy.validate()?;
        self.classifier.validate()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: PipelineConfig = read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            create_dir(parent)?;
        }
        write_json(path, self)
    }

    pub fn config_hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Phantom `i` uses seed `run_seed * 1000 + i`; the first `n_healthy`
/// patients have no tumor.
pub fn phantom_seed(run_seed: u64, i: usize) -> Result<u64> {
    run_seed
        .checked_mul(1000)
        .and_then(|s| s.checked_add(i as u64))
        .ok_or_else(|| Error::InvalidArgument(format!("seed {run_seed} too large for phantom ids")))
}

pub fn generate_phantoms(cfg: &PhantomConfig, seed: u64) -> Result<Vec<Volume>> {
    if cfg.n_patients >= 1000 {
        return Err(Error::InvalidArgument("at most 999 phantom patients".into()));
    }
    (0..cfg.n_patients)
        .into_par_iter()
        .map(|i| generate_phantom(phantom_seed(seed, i)?, i >= cfg.n_healthy, cfg.size, cfg.n_slices))
        .collect()
}

/// Splits patients, builds the padded slice store and writes it to `dir`.
pub fn prepare(cfg: &PipelineConfig, volumes: &[Volume], dir: &Path) -> Result<PathBuf> {
    let ids: Vec<String> = volumes.iter().map(|v| v.patient_id.clone()).collect();
    let splits = split_patients(&ids, cfg.dataset.ratios, cfg.seed)?;
    let (manifest, store) = build_dataset(
        volumes,
        &cfg.filter_policy(),
        &splits,
        cfg.seed,
        BuildOptions {
            lo: cfg.dataset.lo,
            hi: cfg.dataset.hi,
            pad_to: Some(cfg.gan.schedule.final_res),
        },
    )?;
    store::write_dataset(dir, &manifest, &store)
}

pub fn split_of(store: &[SplitSlice], split: Split) -> Vec<LabeledSlice> {
    store
        .iter()
        .filter(|s| s.split == split)
        .map(|s| s.slice.clone())
        .collect()
}

/// Trains one class on the training split and writes `final.ckpt`, the
/// per-stage checkpoints and `losses.csv` under `dir`.
pub fn train_gan_class(cfg: &GanTrainConfig, train_split: &[LabeledSlice], dir: &Path) -> Result<TrainOutcome> {
    let slices: Vec<LabeledSlice> = train_split
        .iter()
        .filter(|s| s.label == cfg.class)
        .cloned()
        .collect();
    create_dir(dir)?;
    let outcome = train(
        cfg,
        &slices,
        &TrainOptions {
            checkpoint_dir: Some(dir.to_path_buf()),
        },
    )?;
    outcome.checkpoint.save(dir.join("final.ckpt"))?;
    write_loss_csv(&dir.join("losses.csv"), &outcome.history)?;
    Ok(outcome)
}

/// Draws `n` images, keeps the top `keep_fraction` by critic score and
/// writes them (with their scores) as a sample store.
pub fn sample_and_curate(ckpt: &GanCheckpoint, n: usize, keep_fraction: f64, seed: u64, dir: &Path) -> Result<PathBuf> {
    let class = ckpt.config.class;
    let sample_seed = derive_seed(seed, &[class.class_index() as u64]);
    let images = generate_samples(ckpt, n, sample_seed)?;
    let kept = curate_samples(ckpt, &images, keep_fraction)?;
    let scores: Vec<f64> = kept.iter().map(|k| k.score).collect();
    let images: Vec<_> = kept.into_iter().map(|k| k.image).collect();
    store::write_samples(dir, sample_seed, &ckpt.config_hash(), class, &images, Some(&scores))?;
    Ok(dir.join(store::SAMPLES_MANIFEST))
}

pub fn augment_store(cfg: &AugmentConfig, train_split: &[LabeledSlice], seed: u64, dir: &Path) -> Result<PathBuf> {
    let items = augment_dataset(train_split, &cfg.policy, cfg.n_per_class, seed)?;
    store::write_augmented(dir, seed, &cfg.policy, &items)?;
    Ok(dir.join(store::AUGMENTED_MANIFEST))
}

/// The six embedding categories in plotting order.
pub fn tsne_category(provenance: Provenance, label: Label) -> String {
    format!("{provenance} {label}")
}

/// One image entering the embedding, with its category and file.
#[derive(Debug, Clone)]
pub struct EmbeddingInput {
    pub slice: LabeledSlice,
    pub path: String,
}

/// Draws up to `n_per_category` inputs from each category (a seeded
/// subset, kept in store order) and embeds their mean-centered pixels.
pub fn run_tsne(
    inputs: &[EmbeddingInput],
    stage: &TsneStageConfig,
    dir: &Path,
) -> Result<(Embedding, Vec<String>, Vec<String>)> {
    let mut chosen: Vec<&EmbeddingInput> = Vec::new();
    for provenance in [Provenance::Real, Provenance::ClassicalAug, Provenance::GanSynthetic] {
        for label in Label::ALL {
            let pool: Vec<&EmbeddingInput> = inputs
                .iter()
                .filter(|e| e.slice.provenance == provenance && e.slice.label == label)
                .collect();
            let mut idx: Vec<usize> = (0..pool.len()).collect();
            let tag = [0x75E5, provenance as u64, label.class_index() as u64];
            idx.shuffle(&mut rng_for(stage.embedding.seed, &tag));
            idx.truncate(stage.n_per_category);
            idx.sort_unstable();
            chosen.extend(idx.into_iter().map(|i| pool[i]));
        }
    }
    let features: Vec<Vec<f64>> = chosen
        .par_iter()
        .map(|e| normalize(&e.slice.image, ValueRange::Model).map(|img| img.into_pixels()))
        .collect::<Result<_>>()?;
    let emb = embed(&features, &stage.embedding)?;
    let categories: Vec<String> = chosen
        .iter()
        .map(|e| tsne_category(e.slice.provenance, e.slice.label))
        .collect();
    let sources: Vec<String> = chosen.iter().map(|e| e.path.clone()).collect();
    create_dir(dir)?;
    write_embedding_csv(&dir.join("embedding.csv"), &emb.points, &categories, &sources)?;
    plot_embedding(&emb.points, &categories, &dir.join("tsne.png"))?;
    write_json(&dir.join("embedding.json"), &emb)?;
    Ok((emb, categories, sources))
}

/// Loads a store as embedding inputs, recording paths relative to `root`.
pub fn embedding_inputs(manifest: &Path, root: &Path) -> Result<Vec<EmbeddingInput>> {
    Ok(store::load_any(manifest)?
        .into_iter()
        .map(|s| EmbeddingInput {
            path: s
                .path
                .strip_prefix(root)
                .unwrap_or(&s.path)
                .to_string_lossy()
                .into_owned(),
            slice: s.slice,
        })
        .collect())
}

pub const RUN_MANIFEST: &str = "run_manifest.json";

/// Summary written at the end of a run. `outputs` maps run-relative paths
/// to SHA-256 digests; `seconds` holds wall-clock stage timings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub scale: Scale,
    pub seed: u64,
    pub config_hash: String,
    pub pool_counts: BTreeMap<String, usize>,
    pub gan_losses_finite: bool,
    pub outputs: BTreeMap<String, String>,
    pub seconds: BTreeMap<String, f64>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub report: GridReport,
    pub gan_histories: BTreeMap<Label, Vec<LossRecord>>,
    pub manifest: RunManifest,
}

pub fn losses_finite(history: &[LossRecord]) -> bool {
    history
        .iter()
        .all(|r| r.loss_d.is_finite() && r.loss_g.is_finite() && r.gp.is_finite())
}

/// Runs every stage into `run_dir`:
///
/// ```text
/// config.json  dataset/  gan/{tumor,non_tumor}/  samples/{tumor,non_tumor}/
/// augmented/  grid/report.{csv,json}  tsne/  run_manifest.json
/// ```
pub fn run_pipeline(cfg: &PipelineConfig, run_dir: &Path) -> Result<RunResult> {
    cfg.validate()?;
    create_dir(run_dir)?;
    cfg.save(&run_dir.join("config.json"))?;
    let mut seconds = BTreeMap::new();
    let total = Instant::now();
    let mut timed = |name: &str, t: Instant| {
        seconds.insert(name.to_string(), t.elapsed().as_secs_f64());
    };

    let t = Instant::now();
    let volumes = generate_phantoms(&cfg.phantom, cfg.seed)?;
    let dataset_manifest = prepare(cfg, &volumes, &run_dir.join("dataset"))?;
    drop(volumes);
    let (_, store) = store::read_dataset(&dataset_manifest)?;
    let (train_split, val_split, test_split) =
        (split_of(&store, Split::Train), split_of(&store, Split::Val), split_of(&store, Split::Test));
    timed("prepare", t);
    log::info!(
        "dataset: {} train / {} val / {} test slices",
        train_split.len(),
        val_split.len(),
        test_split.len()
    );

    let t = Instant::now();
    let gan_dir = |label: Label| run_dir.join("gan").join(label.to_string());
    let (tumor, non_tumor) = rayon::join(
        || train_gan_class(&cfg.gan_config(Label::Tumor), &train_split, &gan_dir(Label::Tumor)),
        || train_gan_class(&cfg.gan_config(Label::NonTumor), &train_split, &gan_dir(Label::NonTumor)),
    );
    let outcomes = [(Label::Tumor, tumor?), (Label::NonTumor, non_tumor?)];
    timed("train_gan", t);

    let t = Instant::now();
    let mut sample_manifests = Vec::new();
    for (label, outcome) in &outcomes {
        let dir = run_dir.join("samples").join(label.to_string());
        sample_manifests.push(sample_and_curate(
            &outcome.checkpoint,
            cfg.sampling.n_generate_per_class,
            cfg.sampling.keep_fraction,
            cfg.seed,
            &dir,
        )?);
    }
    let mut gan_pool = Vec::new();
    for m in &sample_manifests {
        gan_pool.extend(store::read_samples(m)?.1);
    }
    timed("sample_curate", t);

    let t = Instant::now();
    let aug_manifest = augment_store(&cfg.augment, &train_split, cfg.seed, &run_dir.join("augmented"))?;
    let classical_pool: Vec<LabeledSlice> = store::read_augmented(&aug_manifest)?
        .1
        .into_iter()
        .map(|a| a.slice)
        .collect();
    timed("augment", t);

    let t = Instant::now();
    let conditions: Vec<ExperimentCondition<'_>> = ConditionName::ALL
        .iter()
        .map(|&name| ExperimentCondition::resolve(name, Some(&classical_pool), Some(&gan_pool)))
        .collect();
    let data = GridData {
        train: &train_split,
        val: &val_split,
        test: &test_split,
    };
    let report = run_experiment_grid(&conditions, &data, &cfg.classifier)?;
    let grid_dir = run_dir.join("grid");
    create_dir(&grid_dir)?;
    report.write_csv(&grid_dir.join("report.csv"))?;
    report.write_json(&grid_dir.join("report.json"))?;
    timed("run_grid", t);

    let t = Instant::now();
    let mut inputs: Vec<EmbeddingInput> = embedding_inputs(&dataset_manifest, run_dir)?
        .into_iter()
        .filter(|e| {
            e.path.starts_with("dataset") && train_split.iter().any(|s| s.key() == e.slice.key())
        })
        .collect();
    inputs.extend(embedding_inputs(&aug_manifest, run_dir)?);
    for m in &sample_manifests {
        inputs.extend(embedding_inputs(m, run_dir)?);
    }
    run_tsne(&inputs, &cfg.tsne, &run_dir.join("tsne"))?;
    timed("tsne", t);
    seconds.insert("total".into(), total.elapsed().as_secs_f64());

    let mut pool_counts = BTreeMap::new();
    pool_counts.insert("train".into(), train_split.len());
    pool_counts.insert("val".into(), val_split.len());
    pool_counts.insert("test".into(), test_split.len());
    pool_counts.insert("classical".into(), classical_pool.len());
    pool_counts.insert("gan".into(), gan_pool.len());

    let mut outputs = BTreeMap::new();
    let mut tracked: Vec<String> = vec![
        "config.json".into(),
        format!("dataset/{}", store::DATASET_MANIFEST),
        format!("augmented/{}", store::AUGMENTED_MANIFEST),
        "grid/report.csv".into(),
        "grid/report.json".into(),
        "tsne/embedding.csv".into(),
        "tsne/tsne.png".into(),
    ];
    for (label, _) in &outcomes {
        tracked.push(format!("gan/{label}/losses.csv"));
        tracked.push(format!("gan/{label}/final.ckpt"));
        tracked.push(format!("samples/{label}/{}", store::SAMPLES_MANIFEST));
    }
    for rel in tracked {
        outputs.insert(rel.clone(), file_hash(&run_dir.join(&rel))?);
    }

    let gan_histories: BTreeMap<Label, Vec<LossRecord>> =
        outcomes.into_iter().map(|(l, o)| (l, o.history)).collect();
    let manifest = RunManifest {
        version: CONFIG_VERSION,
        scale: cfg.scale,
        seed: cfg.seed,
        config_hash: cfg.config_hash(),
        pool_counts,
        gan_losses_finite: gan_histories.values().all(|h| losses_finite(h)),
        outputs,
        seconds,
    };
    write_json(&run_dir.join(RUN_MANIFEST), &manifest)?;
    Ok(RunResult {
        report,
        gan_histories,
        manifest,
    })
}
