//! Command-line front end. Every subcommand prints a JSON summary on
//! success; failures are reported as `{"error": {kind, message}}` on
//! stderr with a nonzero exit code.

use anyhow::{bail, Context, Result};
use braingan_core::augment::AugmentPolicy;
use braingan_core::classifier::{
    evaluate, run_experiment_grid, train_classifier, ConditionName, ExperimentCondition, GridData, GridReport,
    TrainedClassifier,
};
use braingan_core::dataset::{Label, LabeledSlice, Split, SplitSlice};
use braingan_core::phantom::Volume;
use braingan_core::pggan::{curate_samples, generate_samples, GanCheckpoint};
use braingan_core::pipeline::{
    self, augment_store, embedding_inputs, generate_phantoms, prepare, run_pipeline, run_tsne, split_of,
    train_gan_class, PipelineConfig, RunManifest, Scale,
};
use braingan_core::seeding::derive_seed;
use braingan_core::store;
use braingan_turing::{PoolPaths, SessionStore};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Debug, Parser)]
#[command(name = "braingan", version, about = "GAN-based augmentation experiments for brain tumor detection")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Pipeline config JSON; the scale preset is used when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Preset to start from when no config file is given.
    #[arg(long, global = true)]
    pub scale: Option<Scale>,
    /// Overrides the global seed and every nested one.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate phantom volumes as per-slice PNG directories.
    PhantomGen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n_patients: Option<usize>,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        n_slices: Option<usize>,
    },
    /// Split patients, filter and pad slices, write the dataset store.
    Prepare {
        /// Directory of volume directories; phantoms are generated when absent.
        #[arg(long)]
        phantoms: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the progressive GAN for one class on the training split.
    TrainGan {
        #[arg(long)]
        class: Label,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Draw raw samples from a GAN checkpoint.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Keep the highest-scoring fraction of a sample store by critic score.
    Curate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        keep: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Classical affine augmentation of the training split.
    Augment {
        #[arg(long)]
        dataset: PathBuf,
        /// `default`, `none`, or a policy JSON file.
        #[arg(long, default_value = "default")]
        policy: String,
        #[arg(long)]
        per_class: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one classifier on the training split plus optional pools.
    TrainClassifier {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        classical: Option<PathBuf>,
        /// GAN sample stores; repeat for each class.
        #[arg(long)]
        gan: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a trained classifier on one split.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the four-condition grid. Without `--dataset` the whole pipeline
    /// runs from phantoms into `--out`.
    RunGrid {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        classical: Option<PathBuf>,
        #[arg(long)]
        gan: Vec<PathBuf>,
        /// Subset of conditions (comma separated); all four by default.
        #[arg(long, value_delimiter = ',')]
        conditions: Option<Vec<ConditionName>>,
    },
    /// Embed stores with t-SNE; writes embedding.csv and tsne.png.
    Tsne {
        /// Store manifests or directories; repeat for each.
        #[arg(long, required = true)]
        manifest: Vec<PathBuf>,
        /// Split taken from real dataset stores.
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
        #[arg(long)]
        perplexity: Option<f64>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        per_category: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the Visual Turing Test HTTP API.
    TuringServe {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        /// Real dataset store backing both real pools.
        #[arg(long)]
        real: Option<PathBuf>,
        #[arg(long)]
        synthetic_tumor: Option<PathBuf>,
        #[arg(long)]
        synthetic_non_tumor: Option<PathBuf>,
        #[arg(long)]
        log_dir: Option<PathBuf>,
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
    /// Summarize a run directory or a grid report.
    Report {
        /// Run directory or a report.json file.
        #[arg(long)]
        run: PathBuf,
        /// Print the plain-text table instead of JSON.
        #[arg(long)]
        table: bool,
    },
}

/// Resolves the config from file or preset, then applies `--seed`.
pub fn resolve_config(g: &GlobalArgs) -> Result<PipelineConfig> {
    let mut cfg = match &g.config {
        Some(path) => {
            let cfg = PipelineConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
            if let Some(scale) = g.scale.filter(|s| *s != cfg.scale) {
                bail!("--scale {scale} conflicts with {} config {}", cfg.scale, path.display());
            }
            cfg
        }
        None => PipelineConfig::preset(g.scale.unwrap_or(Scale::Desk), 1),
    };
    if let Some(seed) = g.seed {
        cfg.set_seed(seed);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_split(dataset: &Path, split: Split) -> Result<Vec<LabeledSlice>> {
    let (_, store) = store::read_dataset(dataset)?;
    Ok(split_of(&store, split))
}

fn read_dataset_splits(dataset: &Path) -> Result<Vec<SplitSlice>> {
    Ok(store::read_dataset(dataset)?.1)
}

fn non_empty(pool: &[LabeledSlice]) -> Option<&[LabeledSlice]> {
    (!pool.is_empty()).then_some(pool)
}

fn read_pools(classical: Option<&Path>, gan: &[PathBuf]) -> Result<(Vec<LabeledSlice>, Vec<LabeledSlice>)> {
    let classical = match classical {
        Some(p) => store::read_augmented(p)?.1.into_iter().map(|a| a.slice).collect(),
        None => Vec::new(),
    };
    let mut gan_pool = Vec::new();
    for p in gan {
        gan_pool.extend(store::read_samples(p)?.1);
    }
    Ok((classical, gan_pool))
}

fn load_volumes(dir: &Path) -> Result<Vec<Volume>> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        bail!("no volume directories under {}", dir.display());
    }
    dirs.iter().map(|d| Ok(Volume::load(d)?)).collect()
}

fn sample_seed(cfg: &PipelineConfig, class: Label) -> u64 {
    derive_seed(cfg.seed, &[class.class_index() as u64])
}

pub fn run(cli: Cli) -> Result<Value> {
    let mut cfg = resolve_config(&cli.global)?;
    match cli.command {
        Command::PhantomGen {
            out,
            n_patients,
            size,
            n_slices,
        } => {
            let p = &mut cfg.phantom;
            p.n_patients = n_patients.unwrap_or(p.n_patients);
            p.size = size.unwrap_or(p.size);
            p.n_slices = n_slices.unwrap_or(p.n_slices);
            let volumes = generate_phantoms(&cfg.phantom, cfg.seed)?;
            for v in &volumes {
                v.save(out.join(&v.patient_id))?;
            }
            Ok(json!({"command": "phantom-gen", "out": out, "patients": volumes.len()}))
        }
        Command::Prepare { phantoms, out } => {
            let volumes = match &phantoms {
                Some(dir) => load_volumes(dir)?,
                None => generate_phantoms(&cfg.phantom, cfg.seed)?,
            };
            let manifest_path = prepare(&cfg, &volumes, &out)?;
            let (manifest, _) = store::read_dataset(&manifest_path)?;
            Ok(json!({
                "command": "prepare",
                "manifest": manifest_path,
                "patients": manifest.splits.len(),
                "counts": manifest.counts,
            }))
        }
        Command::TrainGan {
            class,
            dataset,
            out,
            epochs,
        } => {
            let mut gan = cfg.gan_config(class);
            gan.epochs_total = epochs.unwrap_or(gan.epochs_total);
            let train = read_split(&dataset, Split::Train)?;
            let outcome = train_gan_class(&gan, &train, &out)?;
            let last = outcome.history.last();
            Ok(json!({
                "command": "train-gan",
                "class": class,
                "checkpoint": out.join("final.ckpt"),
                "losses": out.join("losses.csv"),
                "steps": outcome.checkpoint.steps,
                "losses_finite": pipeline::losses_finite(&outcome.history),
                "final_loss_d": last.map(|r| r.loss_d),
                "final_loss_g": last.map(|r| r.loss_g),
            }))
        }
        Command::Sample { checkpoint, n, out } => {
            let ckpt = GanCheckpoint::load(&checkpoint)?;
            let class = ckpt.config.class;
            let n = n.unwrap_or(cfg.sampling.n_generate_per_class);
            let seed = sample_seed(&cfg, class);
            let images = generate_samples(&ckpt, n, seed)?;
            store::write_samples(&out, seed, &ckpt.config_hash(), class, &images, None)?;
            Ok(json!({"command": "sample", "class": class, "count": images.len(), "out": out}))
        }
        Command::Curate {
            checkpoint,
            samples,
            keep,
            out,
        } => {
            let ckpt = GanCheckpoint::load(&checkpoint)?;
            let (manifest, slices) = store::read_samples(&samples)?;
            if slices.iter().any(|s| s.label != ckpt.config.class) {
                bail!("sample store label differs from checkpoint class {}", ckpt.config.class);
            }
            let keep = keep.unwrap_or(cfg.sampling.keep_fraction);
            let images: Vec<_> = slices.into_iter().map(|s| s.image).collect();
            let kept = curate_samples(&ckpt, &images, keep)?;
            let scores: Vec<f64> = kept.iter().map(|k| k.score).collect();
            let kept_images: Vec<_> = kept.into_iter().map(|k| k.image).collect();
            store::write_samples(
                &out,
                manifest.seed,
                &ckpt.config_hash(),
                ckpt.config.class,
                &kept_images,
                Some(&scores),
            )?;
            Ok(json!({
                "command": "curate",
                "class": ckpt.config.class,
                "input": images.len(),
                "kept": kept_images.len(),
                "out": out,
            }))
        }
        Command::Augment {
            dataset,
            policy,
            per_class,
            out,
        } => {
            cfg.augment.policy = match policy.as_str() {
                "default" => AugmentPolicy::default(),
                "none" => AugmentPolicy::identity(),
                path => serde_json::from_str(
                    &std::fs::read_to_string(path).with_context(|| format!("reading policy {path}"))?,
                )?,
            };
            cfg.augment.n_per_class = per_class.unwrap_or(cfg.augment.n_per_class);
            let train = read_split(&dataset, Split::Train)?;
            let manifest = augment_store(&cfg.augment, &train, cfg.seed, &out)?;
            Ok(json!({
                "command": "augment",
                "manifest": manifest,
                "per_class": cfg.augment.n_per_class,
                "total": 2 * cfg.augment.n_per_class,
            }))
        }
        Command::TrainClassifier {
            dataset,
            classical,
            gan,
            out,
        } => {
            let store = read_dataset_splits(&dataset)?;
            let (classical, gan_pool) = read_pools(classical.as_deref(), &gan)?;
            let mut train = split_of(&store, Split::Train);
            let real = train.len();
            train.extend(classical.iter().cloned());
            train.extend(gan_pool.iter().cloned());
            let model = train_classifier(&cfg.classifier, &train, &split_of(&store, Split::Val))?;
            model.save(&out)?;
            Ok(json!({
                "command": "train-classifier",
                "model": out,
                "real_count": real,
                "classical_count": classical.len(),
                "gan_count": gan_pool.len(),
                "best_epoch": model.best_epoch,
                "best_val_accuracy": model.best_val_accuracy,
                "epochs_run": model.log.len(),
            }))
        }
        Command::Evaluate {
            model,
            dataset,
            split,
            out,
        } => {
            let model = TrainedClassifier::load(&model)?;
            let metrics = evaluate(&model, &read_split(&dataset, split.into())?)?;
            if let Some(out) = &out {
                std::fs::write(out, serde_json::to_string_pretty(&metrics)? + "\n")
                    .with_context(|| format!("writing {}", out.display()))?;
            }
            let (a, se, sp) = metrics.percentages();
            Ok(json!({
                "command": "evaluate",
                "metrics": metrics,
                "percent": {"accuracy": a, "sensitivity": se, "specificity": sp},
            }))
        }
        Command::RunGrid {
            out,
            dataset,
            classical,
            gan,
            conditions,
        } => {
            let names = conditions.unwrap_or_else(|| ConditionName::ALL.to_vec());
            let Some(dataset) = dataset else {
                if names != ConditionName::ALL {
                    bail!("--conditions requires --dataset (the full pipeline runs all four)");
                }
                let result = run_pipeline(&cfg, &out)?;
                return Ok(json!({
                    "command": "run-grid",
                    "run_dir": out,
                    "report": out.join("grid/report.csv"),
                    "rows": result.report.rows.len(),
                    "gan_losses_finite": result.manifest.gan_losses_finite,
                    "seconds": result.manifest.seconds,
                }));
            };
            let store = read_dataset_splits(&dataset)?;
            let (classical, gan_pool) = read_pools(classical.as_deref(), &gan)?;
            let (train, val, test) = (
                split_of(&store, Split::Train),
                split_of(&store, Split::Val),
                split_of(&store, Split::Test),
            );
            let conds: Vec<ExperimentCondition<'_>> = names
                .iter()
                .map(|&n| ExperimentCondition::resolve(n, non_empty(&classical), non_empty(&gan_pool)))
                .collect();
            let data = GridData {
                train: &train,
                val: &val,
                test: &test,
            };
            let report = run_experiment_grid(&conds, &data, &cfg.classifier)?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            report.write_csv(&out.join("report.csv"))?;
            report.write_json(&out.join("report.json"))?;
            Ok(json!({"command": "run-grid", "report": out.join("report.csv"), "rows": report.rows.len()}))
        }
        Command::Tsne {
            manifest,
            split,
            perplexity,
            iters,
            per_category,
            out,
        } => {
            let t = &mut cfg.tsne;
            t.embedding.perplexity = perplexity.unwrap_or(t.embedding.perplexity);
            t.embedding.n_iterations = iters.unwrap_or(t.embedding.n_iterations);
            t.n_per_category = per_category.unwrap_or(t.n_per_category);
            let split: Split = split.into();
            let mut inputs = Vec::new();
            for m in &manifest {
                let all = embedding_inputs(m, Path::new(""))?;
                if store::detect_kind(m)? == store::StoreKind::Dataset {
                    let entries = store::list_entries(m)?;
                    inputs.extend(
                        all.into_iter()
                            .zip(entries)
                            .filter(|(_, e)| e.split == Some(split))
                            .map(|(i, _)| i),
                    );
                } else {
                    inputs.extend(all);
                }
            }
            let (emb, categories, _) = run_tsne(&inputs, &cfg.tsne, &out)?;
            let mut counts = std::collections::BTreeMap::new();
            for c in &categories {
                *counts.entry(c.clone()).or_insert(0usize) += 1;
            }
            Ok(json!({
                "command": "tsne",
                "points": emb.points.len(),
                "categories": counts,
                "final_kl": emb.final_kl,
                "csv": out.join("embedding.csv"),
                "plot": out.join("tsne.png"),
            }))
        }
        Command::TuringServe {
            addr,
            real,
            synthetic_tumor,
            synthetic_non_tumor,
            log_dir,
            static_dir,
        } => {
            let pools = match (real, synthetic_tumor, synthetic_non_tumor) {
                (Some(r), Some(st), Some(sn)) => Some(PoolPaths {
                    real_tumor: r.clone(),
                    real_non_tumor: r,
                    synthetic_tumor: st,
                    synthetic_non_tumor: sn,
                }),
                (None, None, None) => None,
                _ => bail!("--real, --synthetic-tumor and --synthetic-non-tumor go together"),
            };
            let store = Arc::new(SessionStore::new(log_dir, pools)?);
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(braingan_turing::serve(&addr, store, static_dir))?;
            Ok(json!({"command": "turing-serve", "addr": addr}))
        }
        Command::Report { run, table } => {
            let (report_path, manifest_path) = if run.is_dir() {
                (run.join("grid/report.json"), Some(run.join(pipeline::RUN_MANIFEST)))
            } else {
                (run.clone(), None)
            };
            let text = std::fs::read_to_string(&report_path)
                .with_context(|| format!("reading {}", report_path.display()))?;
            let report: GridReport = serde_json::from_str(&text)?;
            let manifest: Option<RunManifest> = match manifest_path.filter(|p| p.is_file()) {
                Some(p) => Some(serde_json::from_str(&std::fs::read_to_string(&p)?)?),
                None => None,
            };
            if table {
                return Ok(Value::String(report.render()));
            }
            Ok(json!({"command": "report", "grid": report, "run": manifest}))
        }
    }
}

/// Machine-readable error record for stderr.
pub fn error_json(e: &anyhow::Error) -> Value {
    let kind = e
        .chain()
        .find_map(|c| {
            c.downcast_ref::<braingan_core::Error>()
                .map(|e| e.kind())
                .or_else(|| c.downcast_ref::<braingan_turing::TuringError>().map(|_| "turing"))
                .or_else(|| c.downcast_ref::<std::io::Error>().map(|_| "io"))
        })
        .unwrap_or("error");
    let message = e.chain().map(|c| c.to_string()).collect::<Vec<_>>().join(": ");
    json!({"error": {"kind": kind, "message": message}})
}

pub fn usage_error(message: &str) -> Value {
    json!({"error": {"kind": "usage", "message": message.trim_end()}})
}
