//! Procedural brain-like volumes standing in for licensed MR data.
//!
//! A phantom is a stack of axial slices through an ellipsoidal "brain" with
//! smooth low-frequency texture, darker central ventricles and a bright rim,
//! on a black background. Tumor phantoms add one to three hyper-intense
//! ellipsoidal blobs; their footprint on each slice is the tumor mask.

use crate::imaging::{read_raster, write_raster, Image, ValueRange};
use crate::seeding::rng_for;
use crate::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::f64::consts::PI;
use std::path::Path;

/// A patient's ordered axial slices with optional binary tumor masks
/// (mask pixels are 0 or 1).
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub patient_id: String,
    pub slices: Vec<Image>,
    pub mask_slices: Option<Vec<Image>>,
}

impl Volume {
    pub fn new(
        patient_id: impl Into<String>,
        slices: Vec<Image>,
        mask_slices: Option<Vec<Image>>,
    ) -> Result<Self> {
        let patient_id = patient_id.into();
        let Some(first) = slices.first() else {
            return Err(Error::Dataset(format!("volume {patient_id} has no slices")));
        };
        let dims = first.dims();
        if slices.iter().any(|s| s.dims() != dims) {
            return Err(Error::Dimension(format!(
                "volume {patient_id}: slices differ in size"
            )));
        }
        if let Some(masks) = &mask_slices {
            if masks.len() != slices.len() {
                return Err(Error::Dataset(format!(
                    "volume {patient_id}: {} masks for {} slices",
                    masks.len(),
                    slices.len()
                )));
            }
            if masks.iter().any(|m| m.dims() != dims) {
                return Err(Error::Dimension(format!(
                    "volume {patient_id}: mask size differs from slices"
                )));
            }
        }
        Ok(Volume {
            patient_id,
            slices,
            mask_slices,
        })
    }

    pub fn n_slices(&self) -> usize {
        self.slices.len()
    }

    /// Writes `slice_{k:03}.png` (and `mask_{k:03}.png`, 0/255) into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (k, s) in self.slices.iter().enumerate() {
            write_raster(s, dir.join(format!("slice_{k:03}.png")))?;
        }
        if let Some(masks) = &self.mask_slices {
            for (k, m) in masks.iter().enumerate() {
                let visible = Image::new(
                    m.height(),
                    m.width(),
                    m.pixels().iter().map(|&p| if p > 0.0 { 255.0 } else { 0.0 }).collect(),
                    ValueRange::Storage,
                )?;
                write_raster(&visible, dir.join(format!("mask_{k:03}.png")))?;
            }
        }
        Ok(())
    }

    /// Import hook for volumes exported as per-slice PNGs: reads
    /// `slice_*.png` and, when present, the matching `mask_*.png` (any
    /// nonzero pixel counts as tumor). The directory name is the patient id.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let patient_id = dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::InvalidArgument(format!("bad volume dir {}", dir.display())))?
            .to_string();
        let mut slices = Vec::new();
        let mut masks = Vec::new();
        for k in 0.. {
            let slice_path = dir.join(format!("slice_{k:03}.png"));
            if !slice_path.exists() {
                break;
            }
            slices.push(read_raster(&slice_path)?);
            let mask_path = dir.join(format!("mask_{k:03}.png"));
            if mask_path.exists() {
                let m = read_raster(&mask_path)?;
                masks.push(Image::new(
                    m.height(),
                    m.width(),
                    m.pixels().iter().map(|&p| if p > 0.0 { 1.0 } else { 0.0 }).collect(),
                    ValueRange::Storage,
                )?);
            }
        }
        let masks = (!masks.is_empty()).then_some(masks);
        Volume::new(patient_id, slices, masks)
    }
}

#[derive(Debug, Clone, Copy)]
struct Blob {
    cx: f64,
    cy: f64,
    cz: f64,
    rx: f64,
    ry: f64,
    rz: f64,
    intensity: f64,
}

#[derive(Debug, Clone, Copy)]
struct Wave {
    kx: f64,
    ky: f64,
    kz: f64,
    phase: f64,
    amp: f64,
}

/// Smallest allowed in-plane blob radius as a fraction of the frame. At the
/// default filter thresholds this guarantees the blob's central slice
/// registers as tumor.
const MIN_BLOB_RADIUS: f64 = 0.07;

/// Builds a deterministic phantom volume. `size` must be at least 16.
pub fn generate_phantom(seed: u64, with_tumor: bool, size: usize, n_slices: usize) -> Result<Volume> {
    if size < 16 {
        return Err(Error::InvalidArgument(format!(
            "phantom size must be >= 16, got {size}"
        )));
    }
    if n_slices == 0 {
        return Err(Error::InvalidArgument("phantom needs at least one slice".into()));
    }
    let mut rng = rng_for(seed, &[with_tumor as u64, size as u64, n_slices as u64]);
    let s = size as f64;
    let n = n_slices as f64;
    let center_x = s / 2.0 + rng.random_range(-0.03..0.03) * s;
    let center_y = s / 2.0 + rng.random_range(-0.03..0.03) * s;
    let center_z = (n - 1.0) / 2.0;
    let semi_x = s * rng.random_range(0.36..0.40);
    let semi_y = s * rng.random_range(0.42..0.46);
    let semi_z = n * 0.55;
    let base = rng.random_range(120.0..150.0);
    let waves: Vec<Wave> = (0..4)
        .map(|_| Wave {
            kx: rng.random_range(1.0..3.0) * 2.0 * PI / s,
            ky: rng.random_range(1.0..3.0) * 2.0 * PI / s,
            kz: rng.random_range(0.5..2.0) * 2.0 * PI / n,
            phase: rng.random_range(0.0..2.0 * PI),
            amp: rng.random_range(4.0..10.0),
        })
        .collect();
    let blobs: Vec<Blob> = if with_tumor {
        let count = rng.random_range(1..=3);
        (0..count)
            .map(|_| {
                let angle = rng.random_range(0.0..2.0 * PI);
                let reach = rng.random_range(0.0..0.45);
                Blob {
                    cx: center_x + angle.cos() * reach * semi_x,
                    cy: center_y + angle.sin() * reach * semi_y,
                    cz: center_z + rng.random_range(-0.25..0.25) * n,
                    rx: s * rng.random_range(MIN_BLOB_RADIUS..0.14),
                    ry: s * rng.random_range(MIN_BLOB_RADIUS..0.14),
                    rz: n * rng.random_range(0.06..0.18),
                    intensity: rng.random_range(225.0..250.0),
                }
            })
            .collect()
    } else {
        Vec::new()
    };
    let noise = Normal::new(0.0, 2.0).expect("valid normal");

    let mut slices = Vec::with_capacity(n_slices);
    let mut masks = Vec::with_capacity(n_slices);
    for z in 0..n_slices {
        let zf = z as f64;
        let tz = (zf - center_z) / semi_z;
        let profile = (1.0 - tz * tz).max(0.0).sqrt();
        let (ax, ay) = (semi_x * profile, semi_y * profile);
        let mut pixels = vec![0.0; size * size];
        let mut mask = vec![0.0; size * size];
        for r in 0..size {
            for c in 0..size {
                let (x, y) = (c as f64 + 0.5, r as f64 + 0.5);
                if profile <= 0.0 {
                    continue;
                }
                let d = ((x - center_x) / ax).powi(2) + ((y - center_y) / ay).powi(2);
                let idx = r * size + c;
                if d <= 1.0 {
                    let mut v = base;
                    for w in &waves {
                        v += w.amp * (w.kx * x + w.ky * y + w.kz * zf + w.phase).sin();
                    }
                    // Ventricles: darker central region.
                    let dv = ((x - center_x) / (0.25 * ax)).powi(2)
                        + ((y - center_y) / (0.4 * ay)).powi(2);
                    if dv < 1.0 {
                        v -= 55.0 * (1.0 - dv);
                    }
                    // Bright cortical rim.
                    if d > 0.85 {
                        v += 45.0 * (d - 0.85) / 0.15;
                    }
                    for b in &blobs {
                        let db = ((x - b.cx) / b.rx).powi(2)
                            + ((y - b.cy) / b.ry).powi(2)
                            + ((zf - b.cz) / b.rz).powi(2);
                        if db <= 1.0 {
                            v = v.max(b.intensity - 20.0 * db);
                            mask[idx] = 1.0;
                        }
                    }
                    pixels[idx] = v + noise.sample(&mut rng);
                }
            }
        }
        // 8-bit levels so the volume survives PNG storage exactly.
        let pixels = pixels.into_iter().map(|p: f64| p.round().clamp(0.0, 255.0)).collect();
        slices.push(Image::new(size, size, pixels, ValueRange::Storage)?);
        masks.push(Image::new(size, size, mask, ValueRange::Storage)?);
    }
    let patient_id = format!("{}{seed:04}", if with_tumor { "T" } else { "H" });
    Volume::new(patient_id, slices, Some(masks))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_count(m: &Image) -> usize {
        m.pixels().iter().filter(|&&p| p > 0.0).count()
    }

    #[test]
    fn healthy_phantom_has_empty_masks() {
        let v = generate_phantom(3, false, 32, 20).unwrap();
        assert_eq!(v.n_slices(), 20);
        assert!(v.mask_slices.as_ref().unwrap().iter().all(|m| mask_count(m) == 0));
    }

    #[test]
    fn phantom_is_deterministic_per_seed() {
        assert_eq!(
            generate_phantom(11, true, 24, 12).unwrap(),
            generate_phantom(11, true, 24, 12).unwrap()
        );
        assert_ne!(
            generate_phantom(11, true, 24, 12).unwrap(),
            generate_phantom(12, true, 24, 12).unwrap()
        );
    }

    #[test]
    fn tiny_size_is_rejected() {
        assert!(generate_phantom(0, false, 15, 4).is_err());
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let v = generate_phantom(5, true, 20, 6).unwrap();
        let vdir = dir.path().join(&v.patient_id);
        v.save(&vdir).unwrap();
        assert_eq!(Volume::load(&vdir).unwrap(), v);
    }
}
