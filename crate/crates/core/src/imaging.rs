//! Single-channel float rasters and the pixel-level operations shared by the
//! rest of the pipeline.

use crate::{Error, Result};
use image::{DynamicImage, GrayImage, ImageReader, Luma};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::str::FromStr;

/// Declared intensity interval of an [`Image`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueRange {
    /// `[0, 255]`, the 8-bit storage range.
    Storage,
    /// `[-1, 1]`, the range networks consume and produce.
    Model,
}

impl ValueRange {
    pub fn bounds(self) -> (f64, f64) {
        match self {
            ValueRange::Storage => (0.0, 255.0),
            ValueRange::Model => (-1.0, 1.0),
        }
    }
}

impl FromStr for ValueRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "storage" | "[0,255]" | "0-255" => Ok(ValueRange::Storage),
            "model" | "[-1,1]" | "-1-1" => Ok(ValueRange::Model),
            other => Err(Error::InvalidArgument(format!(
                "unknown value range {other:?}"
            ))),
        }
    }
}

/// Row-major single-channel raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
    range: ValueRange,
}

impl Image {
    /// Validates dimensions, finiteness and the declared range.
    pub fn new(height: usize, width: usize, pixels: Vec<f64>, range: ValueRange) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidImage(format!(
                "dimensions must be positive, got {height}x{width}"
            )));
        }
        if pixels.len() != height * width {
            return Err(Error::InvalidImage(format!(
                "{height}x{width} image needs {} pixels, got {}",
                height * width,
                pixels.len()
            )));
        }
        let (lo, hi) = range.bounds();
        if let Some(bad) = pixels.iter().find(|p| !p.is_finite() || **p < lo || **p > hi) {
            return Err(Error::InvalidImage(format!(
                "pixel {bad} outside declared range [{lo}, {hi}]"
            )));
        }
        Ok(Image {
            height,
            width,
            pixels,
            range,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64, range: ValueRange) -> Result<Self> {
        Self::new(height, width, vec![value; height * width], range)
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        range: ValueRange,
        f: impl Fn(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                pixels.push(f(r, c));
            }
        }
        Self::new(height, width, pixels, range)
    }

    /// Clamps values into `range` before validating; non-finite values are
    /// still rejected.
    pub fn clamped(height: usize, width: usize, pixels: Vec<f64>, range: ValueRange) -> Result<Self> {
        let (lo, hi) = range.bounds();
        let pixels = pixels
            .into_iter()
            .map(|p| if p.is_finite() { p.clamp(lo, hi) } else { p })
            .collect();
        Self::new(height, width, pixels, range)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn range(&self) -> ValueRange {
        self.range
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn max_value(&self) -> f64 {
        self.pixels.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Places `img` centered on a zero canvas of `target_h x target_w`. When a
/// margin is odd the extra row/column goes to the bottom/right.
pub fn zero_pad(img: &Image, target_h: usize, target_w: usize) -> Result<Image> {
    if target_h < img.height || target_w < img.width {
        return Err(Error::Dimension(format!(
            "cannot pad {}x{} down to {target_h}x{target_w}",
            img.height, img.width
        )));
    }
    let top = (target_h - img.height) / 2;
    let left = (target_w - img.width) / 2;
    let mut pixels = vec![0.0; target_h * target_w];
    for r in 0..img.height {
        let dst = &mut pixels[(top + r) * target_w + left..][..img.width];
        dst.copy_from_slice(&img.pixels[r * img.width..][..img.width]);
    }
    // Pad value is 0 in the image's own units (mid-gray in model space).
    Image::new(target_h, target_w, pixels, img.range)
}

/// Cuts the centered `target_h x target_w` window at offset
/// `floor((in - target) / 2)`.
pub fn center_crop(img: &Image, target_h: usize, target_w: usize) -> Result<Image> {
    if target_h > img.height || target_w > img.width || target_h == 0 || target_w == 0 {
        return Err(Error::Dimension(format!(
            "cannot crop {}x{} to {target_h}x{target_w}",
            img.height, img.width
        )));
    }
    let top = (img.height - target_h) / 2;
    let left = (img.width - target_w) / 2;
    let mut pixels = Vec::with_capacity(target_h * target_w);
    for r in top..top + target_h {
        pixels.extend_from_slice(&img.pixels[r * img.width + left..][..target_w]);
    }
    Image::new(target_h, target_w, pixels, img.range)
}

/// Affine map between the storage and model ranges.
pub fn normalize(img: &Image, to: ValueRange) -> Result<Image> {
    let pixels: Vec<f64> = match (img.range, to) {
        (a, b) if a == b => img.pixels.clone(),
        (ValueRange::Storage, ValueRange::Model) => {
            img.pixels.iter().map(|p| p / 127.5 - 1.0).collect()
        }
        (ValueRange::Model, ValueRange::Storage) => {
            img.pixels.iter().map(|p| (p + 1.0) * 127.5).collect()
        }
        _ => unreachable!(),
    };
    Image::clamped(img.height, img.width, pixels, to)
}

/// Maps a model-space image back to storage range.
pub fn denormalize(img: &Image) -> Result<Image> {
    normalize(img, ValueRange::Storage)
}

/// Reads an 8-bit single-channel PNG into a storage-range image.
pub fn read_raster(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let raster_err = |message: String| Error::Raster {
        path: path.to_path_buf(),
        message,
    };
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let decoded = reader.decode().map_err(|e| raster_err(e.to_string()))?;
    let gray = match decoded {
        DynamicImage::ImageLuma8(g) => g,
        other => {
            return Err(raster_err(format!(
                "expected 8-bit grayscale, found {:?}",
                other.color()
            )))
        }
    };
    let (w, h) = gray.dimensions();
    let pixels = gray.into_raw().into_iter().map(f64::from).collect();
    Image::new(h as usize, w as usize, pixels, ValueRange::Storage)
}

/// Quantized 8-bit view of an image (model-space images are denormalized).
pub fn to_gray8(img: &Image) -> Result<GrayImage> {
    let storage = denormalize(img)?;
    let mut out = GrayImage::new(storage.width as u32, storage.height as u32);
    for (i, p) in storage.pixels.iter().enumerate() {
        let (r, c) = (i / storage.width, i % storage.width);
        out.put_pixel(c as u32, r as u32, Luma([p.round().clamp(0.0, 255.0) as u8]));
    }
    Ok(out)
}

/// Encodes an image as 8-bit grayscale PNG bytes.
pub fn encode_png(img: &Image) -> Result<Vec<u8>> {
    let gray = to_gray8(img)?;
    let mut bytes = Vec::new();
    gray.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(|e| Error::Raster {
            path: "<memory>".into(),
            message: e.to_string(),
        })?;
    Ok(bytes)
}

/// Writes an 8-bit grayscale PNG, rounding to the nearest level.
pub fn write_raster(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_png(img)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> Image {
        Image::from_fn(h, w, ValueRange::Storage, |r, c| ((r * w + c) % 256) as f64).unwrap()
    }

    #[test]
    fn rejects_invalid_images() {
        assert!(Image::new(0, 3, vec![], ValueRange::Storage).is_err());
        assert!(Image::new(1, 2, vec![0.0], ValueRange::Storage).is_err());
        assert!(Image::new(1, 1, vec![f64::NAN], ValueRange::Storage).is_err());
        assert!(Image::new(1, 1, vec![1.5], ValueRange::Model).is_err());
        assert!(Image::new(1, 1, vec![-0.5], ValueRange::Storage).is_err());
    }

    #[test]
    fn pad_240_to_256_leaves_eight_pixel_border() {
        let img = Image::filled(240, 240, 100.0, ValueRange::Storage).unwrap();
        let padded = zero_pad(&img, 256, 256).unwrap();
        assert_eq!(padded.dims(), (256, 256));
        for r in 0..256 {
            for c in 0..256 {
                let inside = (8..248).contains(&r) && (8..248).contains(&c);
                assert_eq!(padded.get(r, c), if inside { 100.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn pad_identity_and_odd_margin() {
        let img = ramp(256, 256);
        assert_eq!(zero_pad(&img, 256, 256).unwrap(), img);

        let ones = Image::filled(3, 3, 1.0, ValueRange::Storage).unwrap();
        let p = zero_pad(&ones, 4, 4).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                let expect = if r < 3 && c < 3 { 1.0 } else { 0.0 };
                assert_eq!(p.get(r, c), expect, "({r},{c})");
            }
        }
    }

    #[test]
    fn pad_smaller_target_is_dimension_error() {
        let img = ramp(5, 5);
        assert!(matches!(zero_pad(&img, 4, 5), Err(Error::Dimension(_))));
    }

    #[test]
    fn crop_offsets() {
        let img = ramp(240, 240);
        let crop = center_crop(&img, 224, 224).unwrap();
        assert_eq!(crop.dims(), (224, 224));
        assert_eq!(crop.get(0, 0), img.get(8, 8));
        assert_eq!(crop.get(223, 223), img.get(231, 231));

        let same = ramp(224, 224);
        assert_eq!(center_crop(&same, 224, 224).unwrap(), same);

        let five = ramp(5, 5);
        let c = center_crop(&five, 2, 2).unwrap();
        assert_eq!(c.pixels(), &[6.0, 7.0, 11.0, 12.0]);

        assert!(matches!(center_crop(&five, 6, 2), Err(Error::Dimension(_))));
    }

    #[test]
    fn normalization_endpoints() {
        let img = Image::new(1, 3, vec![0.0, 127.5, 255.0], ValueRange::Storage).unwrap();
        let m = normalize(&img, ValueRange::Model).unwrap();
        assert_eq!(m.pixels(), &[-1.0, 0.0, 1.0]);
        assert_eq!(m.range(), ValueRange::Model);
        assert_eq!(denormalize(&m).unwrap(), img);
    }

    #[test]
    fn unknown_range_name_is_rejected() {
        assert!("storage".parse::<ValueRange>().is_ok());
        assert!("[0,1]".parse::<ValueRange>().is_err());
    }

    #[test]
    fn png_roundtrip_and_color_rejection() {
        let dir = tempfile::tempdir().unwrap();
        let board = Image::from_fn(4, 4, ValueRange::Storage, |r, c| {
            if (r + c) % 2 == 0 { 0.0 } else { 255.0 }
        })
        .unwrap();
        let path = dir.path().join("board.png");
        write_raster(&board, &path).unwrap();
        assert_eq!(read_raster(&path).unwrap(), board);

        let rgb = image::RgbImage::new(4, 4);
        let rgb_path = dir.path().join("rgb.png");
        rgb.save(&rgb_path).unwrap();
        let err = read_raster(&rgb_path).unwrap_err();
        assert!(err.to_string().contains("grayscale"), "{err}");

        let junk = dir.path().join("junk.png");
        std::fs::write(&junk, b"definitely not a png").unwrap();
        assert!(read_raster(&junk).is_err());
    }
}
