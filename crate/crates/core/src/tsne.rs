//! Exact t-SNE: Gaussian input affinities calibrated to a perplexity,
//! Student-t output affinities, momentum gradient descent with early
//! exaggeration and adaptive gains.

use crate::seeding::rng_for;
use crate::{Error, Result};
use image::{Rgb, RgbImage};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub perplexity: f64,
    pub n_iterations: usize,
    pub learning_rate: f64,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    /// First iteration using `final_momentum`.
    pub momentum_switch: usize,
    pub exaggeration: f64,
    pub exaggeration_iterations: usize,
    /// KL is recorded after every `kl_every` iterations.
    pub kl_every: usize,
    /// Subtract the per-feature mean before computing distances.
    pub center_features: bool,
    pub seed: u64,
}

impl EmbeddingConfig {
    pub fn paper(seed: u64) -> Self {
        EmbeddingConfig {
            perplexity: 100.0,
            n_iterations: 1000,
            learning_rate: 200.0,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            exaggeration: 4.0,
            exaggeration_iterations: 100,
            kl_every: 50,
            center_features: true,
            seed,
        }
    }

    pub fn validate(&self, n_points: usize) -> Result<()> {
        if n_points < 3 {
            return Err(Error::InvalidArgument("t-SNE needs at least 3 points".into()));
        }
        if !(self.perplexity > 1.0 && self.perplexity < n_points as f64) {
            return Err(Error::InvalidArgument(format!(
                "perplexity {} must lie in (1, {n_points})",
                self.perplexity
            )));
        }
        if self.n_iterations == 0 || self.kl_every == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("iterations, kl_every and learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Binary-search target: realized perplexity within this of the target.
pub const PERPLEXITY_TOLERANCE: f64 = 1e-4;
pub const MAX_SEARCH_STEPS: usize = 100;

fn squared_distances(x: &[Vec<f64>]) -> Vec<f64> {
    let n = x.len();
    let mut d = vec![0.0; n * n];
    d.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for (j, v) in row.iter_mut().enumerate() {
            *v = x[i].iter().zip(&x[j]).map(|(a, b)| (a - b) * (a - b)).sum();
        }
    });
    d
}

/// Conditional distribution `p_{j|i}` for one row of squared distances and
/// the perplexity it realizes. Entry `i` is zero.
pub fn conditional_row(dist: &[f64], i: usize, perplexity: f64) -> (Vec<f64>, f64) {
    let n = dist.len();
    // Shift by the nearest distance; normalization cancels it.
    let dmin = (0..n).filter(|&j| j != i).map(|j| dist[j]).fold(f64::INFINITY, f64::min);
    let shifted: Vec<f64> = (0..n).map(|j| if j == i { 0.0 } else { dist[j] - dmin }).collect();
    let mean = (0..n).filter(|&j| j != i).map(|j| dist[j]).sum::<f64>() / (n - 1) as f64;
    let target = perplexity.ln();
    let eval = |beta: f64| {
        let mut p: Vec<f64> = (0..n)
            .map(|j| if j == i { 0.0 } else { (-beta * shifted[j]).exp() })
            .collect();
        let sum: f64 = p.iter().sum();
        let weighted: f64 = p.iter().zip(&shifted).map(|(p, d)| p * d).sum();
        let entropy = sum.ln() + beta * weighted / sum;
        p.iter_mut().for_each(|v| *v /= sum);
        (p, entropy)
    };
    let mut beta = if mean > 0.0 { 1.0 / mean } else { 1.0 };
    let (mut lo, mut hi) = (0.0, f64::INFINITY);
    let (mut p, mut h) = eval(beta);
    for _ in 0..MAX_SEARCH_STEPS {
        if (h.exp() - perplexity).abs() <= PERPLEXITY_TOLERANCE {
            break;
        }
        if h > target {
            lo = beta;
            beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = (beta + lo) / 2.0;
        }
        (p, h) = eval(beta);
    }
    (p, h.exp())
}

fn prepare(x: &[Vec<f64>], center: bool) -> Result<Vec<Vec<f64>>> {
    let dim = x.first().map(Vec::len).unwrap_or(0);
    if x.iter().any(|v| v.len() != dim) {
        return Err(Error::Dimension("input vectors differ in length".into()));
    }
    if !center {
        return Ok(x.to_vec());
    }
    let mut mean = vec![0.0; dim];
    for v in x {
        mean.iter_mut().zip(v).for_each(|(m, a)| *m += a);
    }
    mean.iter_mut().for_each(|m| *m /= x.len() as f64);
    Ok(x.iter()
        .map(|v| v.iter().zip(&mean).map(|(a, m)| a - m).collect())
        .collect())
}

/// Realized perplexity of each calibrated conditional row.
pub fn row_perplexities(x: &[Vec<f64>], perplexity: f64) -> Vec<f64> {
    let n = x.len();
    let d = squared_distances(x);
    (0..n)
        .into_par_iter()
        .map(|i| conditional_row(&d[i * n..(i + 1) * n], i, perplexity).1)
        .collect()
}

/// Symmetric joint affinities `p_ij = (p_{j|i} + p_{i|j}) / 2n`, row-major
/// `n x n`, zero diagonal, unit sum.
pub fn pairwise_affinities(x: &[Vec<f64>], perplexity: f64) -> Result<Vec<f64>> {
    let n = x.len();
    if n < 3 || !(perplexity > 1.0 && perplexity < n as f64) {
        return Err(Error::InvalidArgument(format!(
            "need n >= 3 and 1 < perplexity < n (n = {n}, perplexity = {perplexity})"
        )));
    }
    let x = prepare(x, false)?;
    let d = squared_distances(&x);
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| conditional_row(&d[i * n..(i + 1) * n], i, perplexity).0)
        .collect();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (rows[i][j] + rows[j][i]) / (2.0 * n as f64);
        }
    }
    Ok(p)
}

/// Unnormalized Student-t kernel `(1 + |y_i - y_j|^2)^-1` (zero diagonal)
/// and its total.
fn student_kernel(y: &[[f64; 2]]) -> (Vec<f64>, f64) {
    let n = y.len();
    let mut num = vec![0.0; n * n];
    num.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for (j, v) in row.iter_mut().enumerate() {
            if i != j {
                let (dx, dy) = (y[i][0] - y[j][0], y[i][1] - y[j][1]);
                *v = 1.0 / (1.0 + dx * dx + dy * dy);
            }
        }
    });
    let total = num.par_chunks(n).map(|r| r.iter().sum::<f64>()).collect::<Vec<_>>().iter().sum();
    (num, total)
}

/// Output affinities `q_ij`.
pub fn low_dim_affinities(y: &[[f64; 2]]) -> Vec<f64> {
    let (num, total) = student_kernel(y);
    num.into_iter().map(|v| v / total).collect()
}

/// `sum p_ij log(p_ij / q_ij)` over entries with `p_ij > 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, q)| p * (p / q.max(f64::MIN_POSITIVE)).ln())
        .sum()
}

fn gradient_scaled(p: &[f64], y: &[[f64; 2]], p_scale: f64) -> Vec<[f64; 2]> {
    let n = y.len();
    let (num, total) = student_kernel(y);
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut g = [0.0, 0.0];
            for j in 0..n {
                let w = num[i * n + j];
                let m = (p_scale * p[i * n + j] - w / total) * w;
                g[0] += m * (y[i][0] - y[j][0]);
                g[1] += m * (y[i][1] - y[j][1]);
            }
            [4.0 * g[0], 4.0 * g[1]]
        })
        .collect()
}

/// `dKL/dy_i = 4 sum_j (p_ij - q_ij) (1 + |y_i - y_j|^2)^-1 (y_i - y_j)`.
pub fn tsne_gradient(p: &[f64], y: &[[f64; 2]]) -> Vec<[f64; 2]> {
    gradient_scaled(p, y, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub points: Vec<[f64; 2]>,
    /// `(iteration, KL)` pairs; iterations count from 1.
    pub kl_history: Vec<(usize, f64)>,
    pub final_kl: f64,
}

/// Embeds from `N(0, 1e-4)` initial coordinates drawn from `cfg.seed`.
pub fn embed(x: &[Vec<f64>], cfg: &EmbeddingConfig) -> Result<Embedding> {
    let mut rng = rng_for(cfg.seed, &[0x75E]);
    let normal = Normal::new(0.0, 1e-2).expect("valid normal");
    let y0: Vec<[f64; 2]> = (0..x.len())
        .map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)])
        .collect();
    embed_from(x, cfg, y0)
}

const MIN_GAIN: f64 = 0.01;

/// Embeds starting from the given coordinates.
pub fn embed_from(x: &[Vec<f64>], cfg: &EmbeddingConfig, y0: Vec<[f64; 2]>) -> Result<Embedding> {
    cfg.validate(x.len())?;
    if y0.len() != x.len() {
        return Err(Error::Dimension("one initial point per input required".into()));
    }
    let x = prepare(x, cfg.center_features)?;
    let p = pairwise_affinities(&x, cfg.perplexity)?;
    let n = x.len();
    let mut y = y0;
    let mut update = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut kl_history = Vec::new();
    for it in 0..cfg.n_iterations {
        let scale = if it < cfg.exaggeration_iterations { cfg.exaggeration } else { 1.0 };
        let momentum = if it < cfg.momentum_switch { cfg.initial_momentum } else { cfg.final_momentum };
        let grad = gradient_scaled(&p, &y, scale);
        for i in 0..n {
            for d in 0..2 {
                let g = grad[i][d];
                gains[i][d] = if (g > 0.0) != (update[i][d] > 0.0) {
                    gains[i][d] + 0.2
                } else {
                    f64::max(gains[i][d] * 0.8, MIN_GAIN)
                };
                update[i][d] = momentum * update[i][d] - cfg.learning_rate * gains[i][d] * g;
                y[i][d] += update[i][d];
            }
        }
        let mean = y.iter().fold([0.0; 2], |m, v| [m[0] + v[0], m[1] + v[1]]);
        for v in &mut y {
            v[0] -= mean[0] / n as f64;
            v[1] -= mean[1] / n as f64;
        }
        if y.iter().any(|v| !v[0].is_finite() || !v[1].is_finite()) {
            return Err(Error::Diverged {
                iteration: it + 1,
                what: "t-SNE coordinates".into(),
            });
        }
        if (it + 1) % cfg.kl_every == 0 || it + 1 == cfg.n_iterations {
            kl_history.push((it + 1, kl_divergence(&p, &low_dim_affinities(&y))));
        }
    }
    let final_kl = kl_history.last().map(|&(_, kl)| kl).unwrap_or(f64::NAN);
    Ok(Embedding {
        points: y,
        kl_history,
        final_kl,
    })
}

#[derive(Serialize)]
struct CsvRow<'a> {
    x: f64,
    y: f64,
    category: &'a str,
    source_path: &'a str,
}

pub fn write_embedding_csv(path: &Path, points: &[[f64; 2]], categories: &[String], sources: &[String]) -> Result<()> {
    if points.len() != categories.len() || points.len() != sources.len() {
        return Err(Error::Dimension("points, categories and sources differ in length".into()));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    for ((p, c), s) in points.iter().zip(categories).zip(sources) {
        w.serialize(CsvRow {
            x: p[0],
            y: p[1],
            category: c,
            source_path: s,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

const PALETTE: [[u8; 3]; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
];

#[derive(Clone, Copy)]
enum Marker {
    Disc,
    Square,
    Cross,
}

const MARKERS: [Marker; 3] = [Marker::Disc, Marker::Square, Marker::Cross];

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn draw_marker(img: &mut RgbImage, cx: i64, cy: i64, marker: Marker, c: Rgb<u8>) {
    for dy in -3i64..=3 {
        for dx in -3i64..=3 {
            let on = match marker {
                Marker::Disc => dx * dx + dy * dy <= 9,
                Marker::Square => dx.abs() <= 2 && dy.abs() <= 2,
                Marker::Cross => dx == dy || dx == -dy,
            };
            if on {
                put(img, cx + dx, cy + dy, c);
            }
        }
    }
}

fn draw_text(img: &mut RgbImage, x: i64, y: i64, text: &str, c: Rgb<u8>) {
    use font8x8::UnicodeFonts;
    for (k, ch) in text.chars().enumerate() {
        let glyph = font8x8::BASIC_FONTS.get(ch).unwrap_or([0; 8]);
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..8 {
                if bits & (1 << col) != 0 {
                    put(img, x + 8 * k as i64 + col, y + row as i64, c);
                }
            }
        }
    }
}

/// Scatter plot with one color and marker per category and a legend.
/// Categories are listed in order of first appearance.
pub fn render_embedding(points: &[[f64; 2]], categories: &[String]) -> Result<RgbImage> {
    if points.len() != categories.len() {
        return Err(Error::Dimension("one category per point required".into()));
    }
    let mut legend: Vec<&str> = Vec::new();
    for c in categories {
        if !legend.contains(&c.as_str()) {
            legend.push(c);
        }
    }
    if legend.is_empty() {
        return Err(Error::InvalidArgument("no categories to plot".into()));
    }
    let (plot, margin, legend_w) = (640i64, 20i64, 240i64);
    let mut img = RgbImage::from_pixel((plot + 2 * margin + legend_w) as u32, (plot + 2 * margin) as u32, Rgb([255, 255, 255]));
    let black = Rgb([0, 0, 0]);
    for t in 0..=plot {
        for (x, y) in [(margin + t, margin), (margin + t, margin + plot), (margin, margin + t), (margin + plot, margin + t)] {
            put(&mut img, x, y, black);
        }
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in points {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    let inner = (plot - 16) as f64;
    let to_px = |v: f64, d: usize| {
        let span = (hi[d] - lo[d]).max(1e-12);
        (margin + 8) as f64 + (v - lo[d]) / span * inner
    };
    for (p, c) in points.iter().zip(categories) {
        let k = legend.iter().position(|l| *l == c).unwrap();
        let (px, py) = (to_px(p[0], 0), (2 * margin + plot) as f64 - to_px(p[1], 1));
        draw_marker(&mut img, px.round() as i64, py.round() as i64, MARKERS[k % 3], Rgb(PALETTE[k % 8]));
    }
    for (k, name) in legend.iter().enumerate() {
        let y = margin + 10 + 20 * k as i64;
        let x = 2 * margin + plot;
        draw_marker(&mut img, x + 6, y + 4, MARKERS[k % 3], Rgb(PALETTE[k % 8]));
        draw_text(&mut img, x + 16, y, name, black);
    }
    Ok(img)
}

pub fn plot_embedding(points: &[[f64; 2]], categories: &[String], path: &Path) -> Result<()> {
    let img = render_embedding(points, categories)?;
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Raster {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}
