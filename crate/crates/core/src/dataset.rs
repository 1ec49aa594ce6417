//! Turning volumes into labeled, filtered, patient-disjoint slice datasets.

use crate::imaging::{zero_pad, Image};
use crate::phantom::Volume;
use crate::seeding::rng_for;
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Tumor,
    NonTumor,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Tumor, Label::NonTumor];

    /// Class index with tumor as the positive class.
    pub fn class_index(self) -> usize {
        match self {
            Label::NonTumor => 0,
            Label::Tumor => 1,
        }
    }

    pub fn from_class_index(i: usize) -> Label {
        if i == 1 {
            Label::Tumor
        } else {
            Label::NonTumor
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Tumor => "tumor",
            Label::NonTumor => "non_tumor",
        })
    }
}

impl std::str::FromStr for Label {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tumor" => Ok(Label::Tumor),
            "non_tumor" | "non-tumor" => Ok(Label::NonTumor),
            _ => Err(Error::InvalidArgument(format!("unknown label {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Real,
    ClassicalAug,
    GanSynthetic,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Real => "real",
            Provenance::ClassicalAug => "classical_aug",
            Provenance::GanSynthetic => "gan_synthetic",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// One 2-D training/evaluation example. Synthetic slices carry no patient.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSlice {
    pub patient_id: Option<String>,
    pub slice_index: Option<usize>,
    pub image: Image,
    pub label: Label,
    pub provenance: Provenance,
}

impl LabeledSlice {
    pub fn real(patient_id: &str, slice_index: usize, image: Image, label: Label) -> Self {
        LabeledSlice {
            patient_id: Some(patient_id.to_string()),
            slice_index: Some(slice_index),
            image,
            label,
            provenance: Provenance::Real,
        }
    }

    pub fn synthetic(image: Image, label: Label, provenance: Provenance) -> Self {
        LabeledSlice {
            patient_id: None,
            slice_index: None,
            image,
            label,
            provenance,
        }
    }

    /// `{patient_id}_{slice_index:03}` for real slices.
    pub fn key(&self) -> Option<String> {
        match (&self.patient_id, self.slice_index) {
            (Some(p), Some(i)) => Some(format!("{p}_{i:03}")),
            _ => None,
        }
    }
}

/// Slice-level labeling and discard thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterPolicy {
    /// A slice counts as tumor when its mask has at least this many pixels.
    pub min_tumor_pixels: usize,
    /// Mask counts within this distance of `min_tumor_pixels` are ambiguous.
    pub boundary_ambiguity_band: usize,
    /// Brain-foreground pixel-count bounds (inclusive).
    pub min_area: usize,
    pub max_area: usize,
}

/// Foreground pixels are those brighter than this fraction of the slice max.
pub const FOREGROUND_FRACTION: f64 = 0.10;

impl FilterPolicy {
    /// Defaults scaled from 20/10 mask pixels at 64x64 (quadratically with
    /// resolution) and foreground bounds of 15%..85% of the frame.
    pub fn for_resolution(height: usize, width: usize) -> Self {
        let scale = (height * width) as f64 / (64.0 * 64.0);
        let frame = (height * width) as f64;
        FilterPolicy {
            min_tumor_pixels: ((20.0 * scale).round() as usize).max(1),
            boundary_ambiguity_band: (10.0 * scale).round() as usize,
            min_area: (0.15 * frame).round() as usize,
            max_area: (0.85 * frame).round() as usize,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_area >= self.max_area {
            return Err(Error::InvalidArgument(format!(
                "min_area {} must be below max_area {}",
                self.min_area, self.max_area
            )));
        }
        Ok(())
    }

    /// Outcome for a given tumor-mask pixel count (ignoring the area rule).
    pub fn decide_count(&self, count: usize) -> SliceDecision {
        let upper = self.min_tumor_pixels + self.boundary_ambiguity_band;
        let lower = self.min_tumor_pixels.saturating_sub(self.boundary_ambiguity_band);
        if count >= upper {
            SliceDecision::Keep(Label::Tumor)
        } else if (lower == 0 && count == 0) || (lower > 0 && count <= lower) {
            SliceDecision::Keep(Label::NonTumor)
        } else {
            SliceDecision::Discard(DiscardReason::AmbiguousMask)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscardReason {
    AmbiguousMask,
    AreaOutOfBounds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SliceDecision {
    Keep(Label),
    Discard(DiscardReason),
}

impl SliceDecision {
    pub fn label(self) -> Option<Label> {
        match self {
            SliceDecision::Keep(l) => Some(l),
            SliceDecision::Discard(_) => None,
        }
    }
}

/// Pixels brighter than [`FOREGROUND_FRACTION`] of the image maximum.
pub fn foreground_area(image: &Image) -> usize {
    let max = image.max_value();
    if max <= 0.0 {
        return 0;
    }
    let threshold = FOREGROUND_FRACTION * max;
    image.pixels().iter().filter(|&&p| p > threshold).count()
}

pub fn mask_count(mask: &Image) -> Result<usize> {
    let mut count = 0;
    for &p in mask.pixels() {
        if p == 1.0 {
            count += 1;
        } else if p != 0.0 {
            return Err(Error::InvalidImage(format!("mask is not binary (pixel {p})")));
        }
    }
    Ok(count)
}

/// Tumor / non-tumor / discard for one slice. `image` supplies the brain
/// foreground used by the area rule.
pub fn label_slice(image: &Image, mask: &Image, policy: &FilterPolicy) -> Result<SliceDecision> {
    if image.dims() != mask.dims() {
        return Err(Error::Dimension("mask and slice sizes differ".into()));
    }
    let count = mask_count(mask)?;
    let area = foreground_area(image);
    if area < policy.min_area || area > policy.max_area {
        return Ok(SliceDecision::Discard(DiscardReason::AreaOutOfBounds));
    }
    Ok(policy.decide_count(count))
}

/// Inclusive slice range `lo..=hi`.
pub fn select_slices(vol: &Volume, lo: usize, hi: usize) -> Result<Vec<(usize, &Image)>> {
    if lo > hi || hi >= vol.n_slices() {
        return Err(Error::InvalidArgument(format!(
            "slice range {lo}..={hi} invalid for {} slices",
            vol.n_slices()
        )));
    }
    Ok((lo..=hi).map(|i| (i, &vol.slices[i])).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    pub const PAPER: SplitRatios = SplitRatios {
        train: 0.7,
        val: 0.2,
        test: 0.1,
    };
}

/// Largest-remainder apportionment of `n` items over `weights` (which must
/// sum to 1). Ties in the remainder go to the earlier entry.
pub fn largest_remainder(n: usize, weights: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = weights.iter().map(|w| w * n as f64).collect();
    // Tolerance absorbs products such as 0.7 * 220 = 153.99999999999997.
    let mut counts: Vec<usize> = quotas.iter().map(|q| (q + 1e-9).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - counts[a] as f64;
        let rb = quotas[b] - counts[b] as f64;
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub patient_id: String,
    pub split: Split,
}

/// Seeded patient-level partition.
pub fn split_patients(patient_ids: &[String], ratios: SplitRatios, seed: u64) -> Result<Vec<SplitAssignment>> {
    let sum = ratios.train + ratios.val + ratios.test;
    if (sum - 1.0).abs() > 1e-9 || [ratios.train, ratios.val, ratios.test].iter().any(|r| *r < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "split ratios must be non-negative and sum to 1, got {sum}"
        )));
    }
    let unique: BTreeSet<&String> = patient_ids.iter().collect();
    if unique.len() != patient_ids.len() {
        return Err(Error::InvalidArgument("duplicate patient ids".into()));
    }
    if patient_ids.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 patients, got {}",
            patient_ids.len()
        )));
    }
    let counts = largest_remainder(patient_ids.len(), &[ratios.train, ratios.val, ratios.test]);
    if let Some(i) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Dataset(format!("split {} would be empty", Split::ALL[i])));
    }
    let mut ids: Vec<String> = unique.into_iter().cloned().collect();
    ids.shuffle(&mut rng_for(seed, &[0x5911]));
    let mut out = Vec::with_capacity(ids.len());
    let mut iter = ids.into_iter();
    for (split, count) in Split::ALL.into_iter().zip(counts) {
        for patient_id in iter.by_ref().take(count) {
            out.push(SplitAssignment { patient_id, split });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub tumor: usize,
    pub non_tumor: usize,
}

impl LabelCounts {
    pub fn add(&mut self, label: Label) {
        match label {
            Label::Tumor => self.tumor += 1,
            Label::NonTumor => self.non_tumor += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tumor + self.non_tumor
    }
}

/// Manifest entry for one stored real slice.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestSlice {
    pub patient_id: String,
    pub slice_index: usize,
    pub label: Label,
    pub path: String,
}

pub const MANIFEST_VERSION: u32 = 1;

/// Record of a built dataset: patient partition, per-split label counts,
/// enumerated slices and the thresholds that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub version: u32,
    pub seed: u64,
    pub policy: FilterPolicy,
    pub splits: Vec<SplitAssignment>,
    pub slices: Vec<ManifestSlice>,
    pub counts: BTreeMap<Split, LabelCounts>,
}

impl SplitManifest {
    pub fn split_of(&self, patient_id: &str) -> Option<Split> {
        self.splits
            .iter()
            .find(|a| a.patient_id == patient_id)
            .map(|a| a.split)
    }

    /// Checks disjointness and that counts match the enumerated slices.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for a in &self.splits {
            if !seen.insert(&a.patient_id) {
                return Err(Error::Dataset(format!(
                    "patient {} assigned to more than one split",
                    a.patient_id
                )));
            }
        }
        let mut counts: BTreeMap<Split, LabelCounts> = BTreeMap::new();
        for s in &self.slices {
            let split = self.split_of(&s.patient_id).ok_or_else(|| {
                Error::Dataset(format!("slice from unassigned patient {}", s.patient_id))
            })?;
            counts.entry(split).or_default().add(s.label);
        }
        for split in Split::ALL {
            let expected = counts.get(&split).copied().unwrap_or_default();
            let recorded = self.counts.get(&split).copied().unwrap_or_default();
            if expected != recorded {
                return Err(Error::Dataset(format!(
                    "{split} counts {recorded:?} disagree with slices {expected:?}"
                )));
            }
        }
        Ok(())
    }
}

/// A kept slice together with the split it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSlice {
    pub split: Split,
    pub slice: LabeledSlice,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildOptions {
    pub lo: usize,
    pub hi: usize,
    /// Zero-pad kept slices to this square size (the GAN resolution).
    pub pad_to: Option<usize>,
}

/// select → label → pad for every volume, grouped by split. Slice paths in
/// the manifest follow the store naming `{patient_id}_{slice_index:03}.png`.
pub fn build_dataset(
    volumes: &[Volume],
    policy: &FilterPolicy,
    splits: &[SplitAssignment],
    seed: u64,
    options: BuildOptions,
) -> Result<(SplitManifest, Vec<SplitSlice>)> {
    policy.validate()?;
    let ids: BTreeSet<&str> = volumes.iter().map(|v| v.patient_id.as_str()).collect();
    if ids.len() != volumes.len() {
        return Err(Error::Dataset("duplicate patient ids among volumes".into()));
    }
    let split_of = |pid: &str| splits.iter().find(|a| a.patient_id == pid).map(|a| a.split);
    let per_volume: Vec<Result<Vec<SplitSlice>>> = volumes
        .par_iter()
        .map(|vol| {
            let split = split_of(&vol.patient_id).ok_or_else(|| {
                Error::Dataset(format!("patient {} has no split", vol.patient_id))
            })?;
            let masks = vol.mask_slices.as_ref().ok_or_else(|| {
                Error::Dataset(format!("patient {} has no tumor masks", vol.patient_id))
            })?;
            let mut kept = Vec::new();
            for (idx, image) in select_slices(vol, options.lo, options.hi)? {
                let Some(label) = label_slice(image, &masks[idx], policy)?.label() else {
                    continue;
                };
                let image = match options.pad_to {
                    Some(size) => zero_pad(image, size, size)?,
                    None => image.clone(),
                };
                kept.push(SplitSlice {
                    split,
                    slice: LabeledSlice::real(&vol.patient_id, idx, image, label),
                });
            }
            Ok(kept)
        })
        .collect();
    let mut store = Vec::new();
    for r in per_volume {
        store.extend(r?);
    }
    store.sort_by(|a, b| {
        (a.split, &a.slice.patient_id, a.slice.slice_index)
            .cmp(&(b.split, &b.slice.patient_id, b.slice.slice_index))
    });

    let mut counts: BTreeMap<Split, LabelCounts> = Split::ALL
        .iter()
        .map(|&s| (s, LabelCounts::default()))
        .collect();
    for s in &store {
        counts.get_mut(&s.split).unwrap().add(s.slice.label);
    }
    let mut assigned: Vec<SplitAssignment> = splits
        .iter()
        .filter(|a| ids.contains(a.patient_id.as_str()))
        .cloned()
        .collect();
    assigned.sort_by(|a, b| (a.split, &a.patient_id).cmp(&(b.split, &b.patient_id)));
    let manifest = SplitManifest {
        version: MANIFEST_VERSION,
        seed,
        policy: *policy,
        splits: assigned,
        slices: store
            .iter()
            .map(|s| ManifestSlice {
                patient_id: s.slice.patient_id.clone().unwrap(),
                slice_index: s.slice.slice_index.unwrap(),
                label: s.slice.label,
                path: format!("{}.png", s.slice.key().unwrap()),
            })
            .collect(),
        counts: counts.clone(),
    };
    for (split, c) in &counts {
        if c.tumor == 0 || c.non_tumor == 0 {
            return Err(Error::Dataset(format!(
                "{split} split has {} tumor / {} non-tumor slices; both labels are required",
                c.tumor, c.non_tumor
            )));
        }
    }
    Ok((manifest, store))
}
