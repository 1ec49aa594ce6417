//! Classical geometric augmentation: random flips, rotation, shift, shear
//! and zoom composed into one affine warp with constant fill.

use crate::dataset::{Label, LabeledSlice, Provenance};
use crate::imaging::Image;
use crate::seeding::rng_for;
use crate::{Error, Result};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Bounds for random transform sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    pub allow_hflip: bool,
    pub allow_vflip: bool,
    pub max_rotation_deg: f64,
    pub max_shift_frac: f64,
    /// Shear factor (tangent of the shear angle).
    pub max_shear_frac: f64,
    /// Scale is drawn from `[1 - max_zoom_frac, 1 + max_zoom_frac]`.
    pub max_zoom_frac: f64,
    pub fill_value: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            allow_hflip: true,
            allow_vflip: true,
            max_rotation_deg: 10.0,
            max_shift_frac: 0.08,
            max_shear_frac: 0.08,
            max_zoom_frac: 0.08,
            fill_value: 0.0,
        }
    }
}

impl AugmentPolicy {
    /// No flips and all bounds zero: every sample is the identity.
    pub fn identity() -> Self {
        AugmentPolicy {
            allow_hflip: false,
            allow_vflip: false,
            max_rotation_deg: 0.0,
            max_shift_frac: 0.0,
            max_shear_frac: 0.0,
            max_zoom_frac: 0.0,
            fill_value: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bounds = [
            self.max_rotation_deg,
            self.max_shift_frac,
            self.max_shear_frac,
            self.max_zoom_frac,
        ];
        if bounds.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return Err(Error::InvalidArgument(
                "augmentation bounds must be finite and non-negative".into(),
            ));
        }
        if self.max_zoom_frac >= 1.0 {
            return Err(Error::InvalidArgument("max_zoom_frac must be below 1".into()));
        }
        Ok(())
    }

    /// Whether `p` lies within this policy's bounds.
    pub fn admits(&self, p: &TransformParams) -> bool {
        (self.allow_hflip || !p.hflip)
            && (self.allow_vflip || !p.vflip)
            && p.rotation_deg.abs() <= self.max_rotation_deg
            && p.shift_x_frac.abs() <= self.max_shift_frac
            && p.shift_y_frac.abs() <= self.max_shift_frac
            && p.shear_frac.abs() <= self.max_shear_frac
            && p.zoom_frac.abs() <= self.max_zoom_frac
    }
}

/// One concrete transform draw.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TransformParams {
    pub hflip: bool,
    pub vflip: bool,
    pub rotation_deg: f64,
    pub shift_x_frac: f64,
    pub shift_y_frac: f64,
    pub shear_frac: f64,
    pub zoom_frac: f64,
    pub fill_value: f64,
}

impl TransformParams {
    pub fn identity() -> Self {
        TransformParams::default()
    }
}

fn symmetric<R: Rng + ?Sized>(rng: &mut R, max: f64) -> f64 {
    if max > 0.0 {
        rng.random_range(-max..=max)
    } else {
        0.0
    }
}

/// Draws all components jointly: fair-coin flips where allowed, continuous
/// parameters uniform in `[-max, +max]`.
pub fn sample_transform<R: Rng + ?Sized>(policy: &AugmentPolicy, rng: &mut R) -> TransformParams {
    TransformParams {
        hflip: policy.allow_hflip && rng.random_bool(0.5),
        vflip: policy.allow_vflip && rng.random_bool(0.5),
        rotation_deg: symmetric(rng, policy.max_rotation_deg),
        shift_x_frac: symmetric(rng, policy.max_shift_frac),
        shift_y_frac: symmetric(rng, policy.max_shift_frac),
        shear_frac: symmetric(rng, policy.max_shear_frac),
        zoom_frac: symmetric(rng, policy.max_zoom_frac),
        fill_value: policy.fill_value,
    }
}

/// [`sample_transform`] from a fresh generator seeded with `seed`.
pub fn sample_transform_seeded(policy: &AugmentPolicy, seed: u64) -> TransformParams {
    sample_transform(policy, &mut rng_for(seed, &[0xA06]))
}

/// Forward map from centered source coordinates `(x, y)` to output
/// coordinates: `out = A * src + t`, with `A = R * Sh * Z * F`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineMap {
    pub a: [[f64; 2]; 2],
    pub t: [f64; 2],
}

impl AffineMap {
    pub fn from_params(p: &TransformParams, height: usize, width: usize) -> Self {
        let mul = |m: [[f64; 2]; 2], n: [[f64; 2]; 2]| {
            [
                [
                    m[0][0] * n[0][0] + m[0][1] * n[1][0],
                    m[0][0] * n[0][1] + m[0][1] * n[1][1],
                ],
                [
                    m[1][0] * n[0][0] + m[1][1] * n[1][0],
                    m[1][0] * n[0][1] + m[1][1] * n[1][1],
                ],
            ]
        };
        let flip = [
            [if p.hflip { -1.0 } else { 1.0 }, 0.0],
            [0.0, if p.vflip { -1.0 } else { 1.0 }],
        ];
        let s = 1.0 + p.zoom_frac;
        let zoom = [[s, 0.0], [0.0, s]];
        let shear = [[1.0, p.shear_frac], [0.0, 1.0]];
        let (sin, cos) = p.rotation_deg.to_radians().sin_cos();
        let rot = [[cos, -sin], [sin, cos]];
        let a = mul(rot, mul(shear, mul(zoom, flip)));
        AffineMap {
            a,
            t: [p.shift_x_frac * width as f64, p.shift_y_frac * height as f64],
        }
    }

    pub fn is_identity(&self) -> bool {
        self.a == [[1.0, 0.0], [0.0, 1.0]] && self.t == [0.0, 0.0]
    }
}

/// Warps `img` by `p` about its center with bilinear sampling; samples
/// falling outside the source read `p.fill_value`.
pub fn apply_transform(img: &Image, p: &TransformParams) -> Result<Image> {
    let (h, w) = img.dims();
    let map = AffineMap::from_params(p, h, w);
    if map.is_identity() {
        return Ok(img.clone());
    }
    let [[a, b], [c, d]] = map.a;
    let det = a * d - b * c;
    if det.abs() < 1e-12 {
        return Err(Error::InvalidArgument("degenerate transform".into()));
    }
    let inv = [[d / det, -b / det], [-c / det, a / det]];
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let fill = p.fill_value;
    let sample = |r: isize, col: isize| -> f64 {
        if r < 0 || col < 0 || r >= h as isize || col >= w as isize {
            fill
        } else {
            img.get(r as usize, col as usize)
        }
    };
    let mut pixels = Vec::with_capacity(h * w);
    for r in 0..h {
        for col in 0..w {
            let ox = col as f64 - cx - map.t[0];
            let oy = r as f64 - cy - map.t[1];
            let sx = inv[0][0] * ox + inv[0][1] * oy + cx;
            let sy = inv[1][0] * ox + inv[1][1] * oy + cy;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            let top = sample(y0, x0) * (1.0 - fx) + sample(y0, x0 + 1) * fx;
            let bottom = sample(y0 + 1, x0) * (1.0 - fx) + sample(y0 + 1, x0 + 1) * fx;
            pixels.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    Image::clamped(h, w, pixels, img.range())
}

/// One augmented image with its provenance record.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSlice {
    /// Key of the real slice it was derived from (`{patient}_{index:03}`).
    pub source_slice: String,
    pub params: TransformParams,
    pub slice: LabeledSlice,
}

/// Produces exactly `n_per_class` transformed images per label. Output `i`
/// of a class uses its own RNG derived from `(seed, class, i)`, so results
/// do not depend on scheduling.
pub fn augment_dataset(
    slices: &[LabeledSlice],
    policy: &AugmentPolicy,
    n_per_class: usize,
    seed: u64,
) -> Result<Vec<AugmentedSlice>> {
    policy.validate()?;
    if n_per_class == 0 {
        return Ok(Vec::new());
    }
    let mut out = Vec::with_capacity(2 * n_per_class);
    for label in Label::ALL {
        let sources: Vec<&LabeledSlice> = slices.iter().filter(|s| s.label == label).collect();
        if sources.is_empty() {
            return Err(Error::Dataset(format!("no {label} slices to augment")));
        }
        let class = label.class_index() as u64;
        let batch: Result<Vec<AugmentedSlice>> = (0..n_per_class)
            .into_par_iter()
            .map(|i| {
                let mut rng = rng_for(seed, &[0xA06, class, i as u64]);
                let src = sources[rng.random_range(0..sources.len())];
                let params = sample_transform(policy, &mut rng);
                let image = apply_transform(&src.image, &params)?;
                Ok(AugmentedSlice {
                    source_slice: src.key().unwrap_or_else(|| format!("synthetic_{i}")),
                    params,
                    slice: LabeledSlice::synthetic(image, label, Provenance::ClassicalAug),
                })
            })
            .collect();
        out.extend(batch?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::ValueRange;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn columns(h: usize, w: usize) -> Image {
        Image::from_fn(h, w, ValueRange::Storage, |_, c| (c * 3 % 256) as f64 + 1.0).unwrap()
    }

    #[test]
    fn default_policy_bounds_hold() {
        let policy = AugmentPolicy::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (mut h, mut v) = (0, 0);
        for _ in 0..10_000 {
            let p = sample_transform(&policy, &mut rng);
            assert!(policy.admits(&p), "{p:?}");
            h += p.hflip as usize;
            v += p.vflip as usize;
        }
        // Fair coins: 5000 +- 5 sigma (sigma = 50).
        assert!((4750..=5250).contains(&h) && (4750..=5250).contains(&v));
    }

    #[test]
    fn zero_policy_gives_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(
                sample_transform(&AugmentPolicy::identity(), &mut rng),
                TransformParams::identity()
            );
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let policy = AugmentPolicy::default();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| sample_transform(&policy, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(42), draw(42));
        assert_ne!(draw(42), draw(43));
        assert_eq!(sample_transform_seeded(&policy, 42), sample_transform_seeded(&policy, 42));
        assert_ne!(sample_transform_seeded(&policy, 42), sample_transform_seeded(&policy, 43));
    }

    #[test]
    fn identity_is_bit_exact() {
        let img = columns(9, 7);
        assert_eq!(apply_transform(&img, &TransformParams::identity()).unwrap(), img);
    }

    #[test]
    fn hflip_reverses_columns() {
        let img = columns(5, 6);
        let p = TransformParams {
            hflip: true,
            ..Default::default()
        };
        let out = apply_transform(&img, &p).unwrap();
        for r in 0..5 {
            for c in 0..6 {
                assert!((out.get(r, c) - img.get(r, 5 - c)).abs() < 1e-9);
            }
        }
        let back = apply_transform(&out, &p).unwrap();
        for (a, b) in back.pixels().iter().zip(img.pixels()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn shift_moves_content_right_with_fill() {
        let img = Image::from_fn(8, 224, ValueRange::Storage, |_, c| 10.0 + (c % 200) as f64)
            .unwrap();
        let p = TransformParams {
            shift_x_frac: 0.08,
            fill_value: 0.0,
            ..Default::default()
        };
        let out = apply_transform(&img, &p).unwrap();
        let shift = 0.08 * 224.0; // 17.92 px
        for r in 0..8 {
            for c in 0..17 {
                assert!(out.get(r, c).abs() < 1e-9, "column {c} not filled");
            }
            // Column 17 straddles the boundary: source x = -0.92.
            let expect17 = 0.08 * img.get(r, 0);
            assert!((out.get(r, 17) - expect17).abs() < 1e-9);
            for c in 18..224 {
                let sx = c as f64 - shift;
                let x0 = sx.floor() as usize;
                let f = sx - x0 as f64;
                let right = if x0 + 1 < 224 { img.get(r, x0 + 1) } else { 0.0 };
                let expect = img.get(r, x0) * (1.0 - f) + right * f;
                assert!((out.get(r, c) - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn output_dims_match_input() {
        let img = columns(13, 17);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let p = sample_transform(&AugmentPolicy::default(), &mut rng);
            assert_eq!(apply_transform(&img, &p).unwrap().dims(), (13, 17));
        }
    }

    fn sources() -> Vec<LabeledSlice> {
        let img = columns(8, 8);
        vec![
            LabeledSlice::real("a", 1, img.clone(), Label::Tumor),
            LabeledSlice::real("b", 2, img.clone(), Label::NonTumor),
            LabeledSlice::real("b", 3, img, Label::NonTumor),
        ]
    }

    #[test]
    fn augment_counts_and_determinism() {
        let policy = AugmentPolicy::default();
        let two = augment_dataset(&sources(), &policy, 1, 9).unwrap();
        assert_eq!(two.len(), 2);
        let many = augment_dataset(&sources(), &policy, 50, 9).unwrap();
        assert_eq!(many.iter().filter(|a| a.slice.label == Label::Tumor).count(), 50);
        assert_eq!(many.iter().filter(|a| a.slice.label == Label::NonTumor).count(), 50);
        assert!(many
            .iter()
            .all(|a| a.slice.provenance == Provenance::ClassicalAug && policy.admits(&a.params)));
        assert!(many
            .iter()
            .filter(|a| a.slice.label == Label::Tumor)
            .all(|a| a.source_slice == "a_001"));
        assert_eq!(many, augment_dataset(&sources(), &policy, 50, 9).unwrap());
        assert!(augment_dataset(&sources(), &policy, 0, 9).unwrap().is_empty());
    }

    #[test]
    fn augment_requires_both_labels() {
        let only_tumor = &sources()[..1];
        assert!(augment_dataset(only_tumor, &AugmentPolicy::default(), 3, 0).is_err());
    }
}
