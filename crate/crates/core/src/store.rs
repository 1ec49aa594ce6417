//! On-disk slice stores: a directory of 8-bit PNGs plus one JSON manifest.
//!
//! Three manifest kinds share the layout. Real datasets use
//! `manifest.json` ([`SplitManifest`]); classical augmentation pools use
//! `augmented.json`; GAN sample pools use `samples.json`. Paths inside a
//! manifest are relative to its directory.

use crate::augment::{AugmentPolicy, AugmentedSlice, TransformParams};
use crate::dataset::{
    Label, LabeledSlice, ManifestSlice, Provenance, Split, SplitManifest, SplitSlice,
};
use crate::imaging::{read_raster, write_raster, Image};
use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

pub const DATASET_MANIFEST: &str = "manifest.json";
pub const AUGMENTED_MANIFEST: &str = "augmented.json";
pub const SAMPLES_MANIFEST: &str = "samples.json";
pub const STORE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedEntry {
    pub source_slice: String,
    pub params: TransformParams,
    pub label: Label,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedManifest {
    pub kind: StoreKind,
    pub version: u32,
    pub seed: u64,
    pub policy: AugmentPolicy,
    pub entries: Vec<AugmentedEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub index: usize,
    pub label: Label,
    /// Critic score, present once the pool has been scored or curated.
    pub critic_score: Option<f64>,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleManifest {
    pub kind: StoreKind,
    pub version: u32,
    pub seed: u64,
    /// SHA-256 of the generating checkpoint's configuration.
    pub config_hash: String,
    pub entries: Vec<SampleEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoreKind {
    Dataset,
    Augmented,
    GanSamples,
}

/// A slice loaded from any store, with the file it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredSlice {
    pub slice: LabeledSlice,
    pub split: Option<Split>,
    pub path: PathBuf,
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub(crate) fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_images<'a>(dir: &Path, items: impl IntoParallelIterator<Item = (&'a str, &'a Image)>) -> Result<()> {
    items
        .into_par_iter()
        .map(|(name, img)| write_raster(img, dir.join(name)))
        .collect::<Result<Vec<()>>>()
        .map(|_| ())
}

/// Resolves `path` to a manifest file: directories are searched for the
/// known manifest names in a fixed order.
pub fn manifest_path(path: &Path) -> Result<PathBuf> {
    if path.is_file() {
        return Ok(path.to_path_buf());
    }
    for name in [DATASET_MANIFEST, AUGMENTED_MANIFEST, SAMPLES_MANIFEST] {
        let candidate = path.join(name);
        if candidate.is_file() {
            return Ok(candidate);
        }
    }
    Err(Error::Dataset(format!("no store manifest found at {}", path.display())))
}

fn parent_dir(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn write_dataset(dir: &Path, manifest: &SplitManifest, store: &[SplitSlice]) -> Result<PathBuf> {
    if manifest.slices.len() != store.len() {
        return Err(Error::Dataset("manifest and store lengths differ".into()));
    }
    create_dir(dir)?;
    write_images(
        dir,
        manifest
            .slices
            .par_iter()
            .zip(store.par_iter())
            .map(|(m, s)| (m.path.as_str(), &s.slice.image)),
    )?;
    let path = dir.join(DATASET_MANIFEST);
    write_json(&path, manifest)?;
    Ok(path)
}

pub fn read_dataset(path: &Path) -> Result<(SplitManifest, Vec<SplitSlice>)> {
    let mpath = manifest_path(path)?;
    let manifest: SplitManifest = read_json(&mpath)?;
    manifest.validate()?;
    let dir = parent_dir(&mpath);
    let store = manifest
        .slices
        .par_iter()
        .map(|m: &ManifestSlice| {
            let image = read_raster(dir.join(&m.path))?;
            let split = manifest.split_of(&m.patient_id).expect("validated");
            Ok(SplitSlice {
                split,
                slice: LabeledSlice::real(&m.patient_id, m.slice_index, image, m.label),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, store))
}

pub fn write_augmented(
    dir: &Path,
    seed: u64,
    policy: &AugmentPolicy,
    items: &[AugmentedSlice],
) -> Result<AugmentedManifest> {
    create_dir(dir)?;
    let entries: Vec<AugmentedEntry> = items
        .iter()
        .enumerate()
        .map(|(i, a)| AugmentedEntry {
            source_slice: a.source_slice.clone(),
            params: a.params,
            label: a.slice.label,
            path: format!("aug_{}_{i:06}.png", a.slice.label),
        })
        .collect();
    write_images(
        dir,
        entries
            .par_iter()
            .zip(items.par_iter())
            .map(|(e, a)| (e.path.as_str(), &a.slice.image)),
    )?;
    let manifest = AugmentedManifest {
        kind: StoreKind::Augmented,
        version: STORE_VERSION,
        seed,
        policy: *policy,
        entries,
    };
    write_json(&dir.join(AUGMENTED_MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn read_augmented(path: &Path) -> Result<(AugmentedManifest, Vec<AugmentedSlice>)> {
    let mpath = manifest_path(path)?;
    let manifest: AugmentedManifest = read_json(&mpath)?;
    let dir = parent_dir(&mpath);
    let items = manifest
        .entries
        .par_iter()
        .map(|e| {
            Ok(AugmentedSlice {
                source_slice: e.source_slice.clone(),
                params: e.params,
                slice: LabeledSlice::synthetic(
                    read_raster(dir.join(&e.path))?,
                    e.label,
                    Provenance::ClassicalAug,
                ),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, items))
}

/// Writes storage-range images; `scores`, when given, must align with them.
pub fn write_samples(
    dir: &Path,
    seed: u64,
    config_hash: &str,
    label: Label,
    images: &[Image],
    scores: Option<&[f64]>,
) -> Result<SampleManifest> {
    if scores.is_some_and(|s| s.len() != images.len()) {
        return Err(Error::InvalidArgument("score count differs from image count".into()));
    }
    create_dir(dir)?;
    let entries: Vec<SampleEntry> = (0..images.len())
        .map(|i| SampleEntry {
            index: i,
            label,
            critic_score: scores.map(|s| s[i]),
            path: format!("gan_{label}_{i:06}.png"),
        })
        .collect();
    write_images(
        dir,
        entries
            .par_iter()
            .zip(images.par_iter())
            .map(|(e, img)| (e.path.as_str(), img)),
    )?;
    let manifest = SampleManifest {
        kind: StoreKind::GanSamples,
        version: STORE_VERSION,
        seed,
        config_hash: config_hash.to_string(),
        entries,
    };
    write_json(&dir.join(SAMPLES_MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn read_samples(path: &Path) -> Result<(SampleManifest, Vec<LabeledSlice>)> {
    let mpath = manifest_path(path)?;
    let manifest: SampleManifest = read_json(&mpath)?;
    let dir = parent_dir(&mpath);
    let slices = manifest
        .entries
        .par_iter()
        .map(|e| {
            Ok(LabeledSlice::synthetic(
                read_raster(dir.join(&e.path))?,
                e.label,
                Provenance::GanSynthetic,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, slices))
}

/// Detects the manifest kind from its `kind` field; manifests without one
/// are real datasets.
pub fn detect_kind(path: &Path) -> Result<StoreKind> {
    let mpath = manifest_path(path)?;
    let value: serde_json::Value = read_json(&mpath)?;
    match value.get("kind") {
        None => Ok(StoreKind::Dataset),
        Some(k) => Ok(serde_json::from_value(k.clone())?),
    }
}

/// Loads every slice of any store kind, tagging each with its file path.
pub fn load_any(path: &Path) -> Result<Vec<StoredSlice>> {
    let mpath = manifest_path(path)?;
    let dir = parent_dir(&mpath);
    Ok(match detect_kind(&mpath)? {
        StoreKind::Dataset => {
            let (m, store) = read_dataset(&mpath)?;
            m.slices
                .iter()
                .zip(store)
                .map(|(e, s)| StoredSlice {
                    split: Some(s.split),
                    slice: s.slice,
                    path: dir.join(&e.path),
                })
                .collect()
        }
        StoreKind::Augmented => {
            let (m, items) = read_augmented(&mpath)?;
            m.entries
                .iter()
                .zip(items)
                .map(|(e, a)| StoredSlice {
                    slice: a.slice,
                    split: None,
                    path: dir.join(&e.path),
                })
                .collect()
        }
        StoreKind::GanSamples => {
            let (m, slices) = read_samples(&mpath)?;
            m.entries
                .iter()
                .zip(slices)
                .map(|(e, s)| StoredSlice {
                    slice: s,
                    split: None,
                    path: dir.join(&e.path),
                })
                .collect()
        }
    })
}

/// A store entry without its pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredEntry {
    pub label: Label,
    pub split: Option<Split>,
    pub path: PathBuf,
}

/// Lists a store's files and labels from its manifest alone.
pub fn list_entries(path: &Path) -> Result<Vec<StoredEntry>> {
    let mpath = manifest_path(path)?;
    let dir = parent_dir(&mpath);
    let entry = |label, split, rel: &str| StoredEntry {
        label,
        split,
        path: dir.join(rel),
    };
    Ok(match detect_kind(&mpath)? {
        StoreKind::Dataset => {
            let m: SplitManifest = read_json(&mpath)?;
            m.slices
                .iter()
                .map(|e| entry(e.label, m.split_of(&e.patient_id), &e.path))
                .collect()
        }
        StoreKind::Augmented => {
            let m: AugmentedManifest = read_json(&mpath)?;
            m.entries.iter().map(|e| entry(e.label, None, &e.path)).collect()
        }
        StoreKind::GanSamples => {
            let m: SampleManifest = read_json(&mpath)?;
            m.entries.iter().map(|e| entry(e.label, None, &e.path)).collect()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::augment_dataset;
    use crate::dataset::{build_dataset, split_patients, BuildOptions, FilterPolicy, SplitRatios};
    use crate::imaging::ValueRange;
    use crate::phantom::generate_phantom;

    fn small_dataset() -> (SplitManifest, Vec<SplitSlice>) {
        let vols: Vec<_> = (0..8)
            .map(|i| generate_phantom(100 + i, i % 2 == 0, 32, 20).unwrap())
            .collect();
        let ids: Vec<String> = vols.iter().map(|v| v.patient_id.clone()).collect();
        let splits = split_patients(&ids, SplitRatios::PAPER, 3).unwrap();
        let mut policy = FilterPolicy::for_resolution(32, 32);
        policy.min_area = 0;
        build_dataset(
            &vols,
            &policy,
            &splits,
            3,
            BuildOptions { lo: 2, hi: 17, pad_to: None },
        )
        .unwrap_or_else(|e| panic!("{e}"))
    }

    #[test]
    fn dataset_round_trip() {
        let (manifest, store) = small_dataset();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &manifest, &store).unwrap();
        let (m2, s2) = read_dataset(dir.path()).unwrap();
        assert_eq!(m2, manifest);
        assert_eq!(s2, store);
        assert_eq!(detect_kind(dir.path()).unwrap(), StoreKind::Dataset);
        let any = load_any(dir.path()).unwrap();
        assert_eq!(any.len(), store.len());
        assert!(any.iter().all(|s| s.path.is_file()));
        let listed = list_entries(dir.path()).unwrap();
        assert_eq!(listed.len(), any.len());
        for (l, a) in listed.iter().zip(&any) {
            assert_eq!((l.label, l.split, &l.path), (a.slice.label, a.split, &a.path));
        }
    }

    #[test]
    fn augmented_and_samples_round_trip() {
        let (_, store) = small_dataset();
        let slices: Vec<LabeledSlice> = store.into_iter().map(|s| s.slice).collect();
        let policy = AugmentPolicy::default();
        let aug = augment_dataset(&slices, &policy, 4, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let m = write_augmented(dir.path(), 1, &policy, &aug).unwrap();
        let (m2, back) = read_augmented(dir.path()).unwrap();
        assert_eq!(m, m2);
        assert_eq!(back.len(), 8);
        for (a, b) in aug.iter().zip(&back) {
            assert_eq!(a.params, b.params);
            assert_eq!(a.slice.label, b.slice.label);
            // PNG quantizes to integers.
            for (x, y) in a.slice.image.pixels().iter().zip(b.slice.image.pixels()) {
                assert!((x - y).abs() <= 0.5);
            }
        }
        assert_eq!(detect_kind(dir.path()).unwrap(), StoreKind::Augmented);

        let imgs: Vec<Image> = (0..3)
            .map(|i| Image::filled(8, 8, 10.0 * i as f64, ValueRange::Storage).unwrap())
            .collect();
        let sdir = tempfile::tempdir().unwrap();
        write_samples(sdir.path(), 5, "abc", Label::Tumor, &imgs, Some(&[0.1, 0.2, 0.3])).unwrap();
        let (sm, ss) = read_samples(sdir.path()).unwrap();
        assert_eq!(sm.entries[2].critic_score, Some(0.3));
        assert_eq!(ss.iter().map(|s| s.image.clone()).collect::<Vec<_>>(), imgs);
        let any = load_any(sdir.path()).unwrap();
        assert!(any.iter().all(|s| s.slice.provenance == Provenance::GanSynthetic));
        let listed = list_entries(sdir.path()).unwrap();
        assert_eq!(listed.iter().map(|e| &e.path).collect::<Vec<_>>(), any.iter().map(|s| &s.path).collect::<Vec<_>>());
        assert_eq!(list_entries(dir.path()).unwrap().len(), 8);
    }

    #[test]
    fn missing_manifest_is_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_any(dir.path()).is_err());
    }
}
