//! Grayscale ingest, whitening with a low-pass roll-off, and patch sampling.

use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use image::DynamicImage;
use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{seeded, DetRng};

/// Luminance weights for color input (ITU-R BT.601).
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Smallest side accepted by [`whiten`].
pub const MIN_WHITEN_SIDE: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct RawImage {
    /// Indexed `[row, column]`.
    pixels: Array2<f64>,
}

impl RawImage {
    pub fn new(pixels: Array2<f64>) -> Result<Self> {
        if pixels.nrows() == 0 || pixels.ncols() == 0 {
            return Err(Error::Format("image has a zero dimension".into()));
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("image has non-finite pixels".into()));
        }
        Ok(RawImage { pixels })
    }

    pub fn width(&self) -> usize {
        self.pixels.ncols()
    }

    pub fn height(&self) -> usize {
        self.pixels.nrows()
    }

    pub fn pixels(&self) -> &Array2<f64> {
        &self.pixels
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub patch_size: usize,
    pub batch_size: usize,
    /// Roll-off frequency in cycles per image (shorter side). `None` selects
    /// 0.8 of the Nyquist frequency of each image.
    pub whitening_cutoff: Option<f64>,
    pub rng_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            patch_size: 16,
            batch_size: 100,
            whitening_cutoff: None,
            rng_seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size < 4 {
            return Err(Error::Config(format!(
                "patch_size must be at least 4, got {}",
                self.patch_size
            )));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if let Some(f0) = self.whitening_cutoff {
            if !(f0 > 0.0 && f0.is_finite()) {
                return Err(Error::Config(format!(
                    "whitening_cutoff must be positive, got {f0}"
                )));
            }
        }
        Ok(())
    }

    pub fn cutoff_for(&self, img: &RawImage) -> f64 {
        self.whitening_cutoff
            .unwrap_or_else(|| default_cutoff(img.width().min(img.height())))
    }
}

/// 0.8 × Nyquist, in cycles per image, for an image whose shorter side is `side`.
pub fn default_cutoff(side: usize) -> f64 {
    0.8 * side as f64 / 2.0
}

pub fn load_grayscale(path: impl AsRef<Path>) -> Result<RawImage> {
    let path = path.as_ref();
    let reader = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let img = reader.decode().map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    grayscale_from_dynamic(&img)
}

/// Saves `img` as a 16-bit grayscale PNG, clamping values to `[0, 1]`.
pub fn save_grayscale16(img: &RawImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let raw: Vec<u16> = img
        .pixels()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(
        img.width() as u32,
        img.height() as u32,
        raw,
    )
    .ok_or_else(|| Error::Format("pixel buffer does not match image size".into()))?;
    buf.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Luminance in `[0, 1]`: gray channels are divided by their full-scale value,
/// color channels are combined with [`LUMA_WEIGHTS`].
pub fn grayscale_from_dynamic(img: &DynamicImage) -> Result<RawImage> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::Format("image has a zero dimension".into()));
    }
    let values: Vec<f64> = match img {
        DynamicImage::ImageLuma8(g) => g.as_raw().iter().map(|&v| v as f64 / 255.0).collect(),
        DynamicImage::ImageLumaA8(_) => img
            .to_luma8()
            .as_raw()
            .iter()
            .map(|&v| v as f64 / 255.0)
            .collect(),
        DynamicImage::ImageLuma16(g) => g.as_raw().iter().map(|&v| v as f64 / 65535.0).collect(),
        DynamicImage::ImageLumaA16(_) => img
            .to_luma16()
            .as_raw()
            .iter()
            .map(|&v| v as f64 / 65535.0)
            .collect(),
        DynamicImage::ImageRgb8(_) | DynamicImage::ImageRgba8(_) => {
            luma_of(img.to_rgb8().as_raw(), 255.0)
        }
        DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_) => {
            luma_of(img.to_rgb16().as_raw(), 65535.0)
        }
        _ => img
            .to_rgb32f()
            .as_raw()
            .chunks_exact(3)
            .map(|c| {
                LUMA_WEIGHTS[0] * c[0] as f64
                    + LUMA_WEIGHTS[1] * c[1] as f64
                    + LUMA_WEIGHTS[2] * c[2] as f64
            })
            .collect(),
    };
    let pixels =
        Array2::from_shape_vec((h, w), values).map_err(|e| Error::Format(e.to_string()))?;
    RawImage::new(pixels)
}

fn luma_of<T: Copy + Into<f64>>(rgb: &[T], full_scale: f64) -> Vec<f64> {
    rgb.chunks_exact(3)
        .map(|c| {
            (LUMA_WEIGHTS[0] * c[0].into()
                + LUMA_WEIGHTS[1] * c[1].into()
                + LUMA_WEIGHTS[2] * c[2].into())
                / full_scale
        })
        .collect()
}

/// Radial whitening/low-pass gain `R(f) = f·exp(−(f/f0)⁴)`.
pub fn whitening_gain(f: f64, f0: f64) -> f64 {
    f * (-(f / f0).powi(4)).exp()
}

struct Fft2 {
    rows: Arc<dyn Fft<f64>>,
    cols: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    fn new(planner: &mut FftPlanner<f64>, w: usize, h: usize, inverse: bool) -> Self {
        if inverse {
            Fft2 {
                rows: planner.plan_fft_inverse(w),
                cols: planner.plan_fft_inverse(h),
            }
        } else {
            Fft2 {
                rows: planner.plan_fft_forward(w),
                cols: planner.plan_fft_forward(h),
            }
        }
    }

    /// In place on a row-major `h × w` buffer.
    fn run(&self, buf: &mut [Complex<f64>], w: usize, h: usize) {
        for row in buf.chunks_exact_mut(w) {
            self.rows.process(row);
        }
        let mut col = vec![Complex::new(0.0, 0.0); h];
        for x in 0..w {
            for y in 0..h {
                col[y] = buf[y * w + x];
            }
            self.cols.process(&mut col);
            for y in 0..h {
                buf[y * w + x] = col[y];
            }
        }
    }
}

fn signed_index(i: usize, n: usize) -> f64 {
    if i <= n / 2 {
        i as f64
    } else {
        i as f64 - n as f64
    }
}

/// Applies [`whitening_gain`] in the frequency domain without the final
/// variance normalization. Frequencies are in cycles per image measured
/// along the shorter side. The map is linear in the input.
pub fn whiten_unscaled(img: &RawImage, cutoff: f64) -> Result<RawImage> {
    let (w, h) = (img.width(), img.height());
    if w < MIN_WHITEN_SIDE || h < MIN_WHITEN_SIDE {
        return Err(Error::Argument(format!(
            "whitening needs at least {MIN_WHITEN_SIDE}×{MIN_WHITEN_SIDE} pixels, got {w}×{h}"
        )));
    }
    if !(cutoff > 0.0 && cutoff.is_finite()) {
        return Err(Error::Argument(format!(
            "whitening cutoff must be positive, got {cutoff}"
        )));
    }
    let mut buf: Vec<Complex<f64>> = img.pixels.iter().map(|&v| Complex::new(v, 0.0)).collect();
    let mut planner = FftPlanner::new();
    Fft2::new(&mut planner, w, h, false).run(&mut buf, w, h);

    let side = w.min(h) as f64;
    let norm = 1.0 / (w * h) as f64;
    for y in 0..h {
        let fy = signed_index(y, h) / h as f64;
        for x in 0..w {
            let fx = signed_index(x, w) / w as f64;
            let f = side * (fx * fx + fy * fy).sqrt();
            buf[y * w + x] *= whitening_gain(f, cutoff) * norm;
        }
    }
    Fft2::new(&mut planner, w, h, true).run(&mut buf, w, h);

    let out: Vec<f64> = buf.iter().map(|c| c.re).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(
            "whitening produced non-finite values".into(),
        ));
    }
    let pixels = Array2::from_shape_vec((h, w), out).expect("shape preserved");
    Ok(RawImage { pixels })
}

/// Whitens and standardizes to zero mean and unit variance. A constant
/// image whitens to all zeros and is returned unscaled.
pub fn whiten(img: &RawImage, cfg: &PipelineConfig) -> Result<RawImage> {
    let mut out = whiten_unscaled(img, cfg.cutoff_for(img))?;
    standardize(&mut out.pixels);
    Ok(out)
}

fn standardize(values: &mut Array2<f64>) {
    let n = values.len() as f64;
    let mean = values.sum() / n;
    values.mapv_inplace(|v| v - mean);
    let var = values.iter().map(|v| v * v).sum::<f64>() / n;
    // relative to the rounding floor left after removing a zero-gain DC term
    if var > 1e-24 {
        let inv = 1.0 / var.sqrt();
        values.mapv_inplace(|v| v * inv);
    } else {
        values.fill(0.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchOrigin {
    pub image: usize,
    pub x: usize,
    pub y: usize,
}

/// Vectorized `P × P` patches, one per row, row-major inside each patch.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchBatch {
    patches: Array2<f64>,
    origins: Vec<PatchOrigin>,
    patch_size: usize,
}

impl PatchBatch {
    pub fn new(patches: Array2<f64>, origins: Vec<PatchOrigin>, patch_size: usize) -> Result<Self> {
        if patches.ncols() != patch_size * patch_size {
            return Err(Error::Format(format!(
                "patch rows have {} values, expected {}",
                patches.ncols(),
                patch_size * patch_size
            )));
        }
        if origins.len() != patches.nrows() {
            return Err(Error::Format("one origin per patch required".into()));
        }
        if patches.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("patch batch has non-finite entries".into()));
        }
        Ok(PatchBatch {
            patches,
            origins,
            patch_size,
        })
    }

    pub fn len(&self) -> usize {
        self.patches.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.nrows() == 0
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn patches(&self) -> &Array2<f64> {
        &self.patches
    }

    pub fn patch(&self, i: usize) -> ArrayView1<'_, f64> {
        self.patches.row(i)
    }

    pub fn origins(&self) -> &[PatchOrigin] {
        &self.origins
    }

    pub fn select(&self, rows: &[usize]) -> PatchBatch {
        PatchBatch {
            patches: self.patches.select(ndarray::Axis(0), rows),
            origins: rows.iter().map(|&r| self.origins[r]).collect(),
            patch_size: self.patch_size,
        }
    }

    /// The first `n` rows (or all, if fewer).
    pub fn head(&self, n: usize) -> PatchBatch {
        let rows: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&rows)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["image".to_string(), "x".to_string(), "y".to_string()];
        header.extend((0..self.patches.ncols()).map(|i| format!("p{i}")));
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for (o, row) in self.origins.iter().zip(self.patches.rows()) {
            record.clear();
            record.push(o.image.to_string());
            record.push(o.x.to_string());
            record.push(o.y.to_string());
            record.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::io("<patch csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let n_values = r
            .headers()?
            .len()
            .checked_sub(3)
            .ok_or_else(|| Error::Format("patch csv needs image,x,y columns".into()))?;
        let patch_size = (n_values as f64).sqrt().round() as usize;
        if patch_size * patch_size != n_values || n_values == 0 {
            return Err(Error::Format(format!(
                "{n_values} pixel columns do not form a square patch"
            )));
        }
        let mut values = Vec::new();
        let mut origins = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let int = |i: usize| -> Result<usize> {
                rec[i]
                    .parse()
                    .map_err(|_| Error::Format(format!("bad integer '{}'", &rec[i])))
            };
            origins.push(PatchOrigin {
                image: int(0)?,
                x: int(1)?,
                y: int(2)?,
            });
            for v in rec.iter().skip(3) {
                values.push(
                    v.parse::<f64>()
                        .map_err(|_| Error::Format(format!("not a number: '{v}'")))?,
                );
            }
        }
        let patches = Array2::from_shape_vec((origins.len(), n_values), values)
            .map_err(|e| Error::Format(e.to_string()))?;
        PatchBatch::new(patches, origins, patch_size)
    }
}

/// Draws `count` patches uniformly over all valid `(image, offset)` pairs,
/// with replacement.
pub fn sample_patches_with(
    images: &[RawImage],
    patch_size: usize,
    count: usize,
    rng: &mut impl Rng,
) -> Result<PatchBatch> {
    if images.is_empty() {
        return Err(Error::Argument("no images to sample patches from".into()));
    }
    let mut cumulative = Vec::with_capacity(images.len());
    let mut total: u64 = 0;
    for (i, img) in images.iter().enumerate() {
        if img.width() < patch_size || img.height() < patch_size {
            return Err(Error::Argument(format!(
                "image {i} is {}×{}, smaller than the {patch_size}-pixel patch",
                img.width(),
                img.height()
            )));
        }
        total += ((img.width() - patch_size + 1) * (img.height() - patch_size + 1)) as u64;
        cumulative.push(total);
    }
    let n = patch_size * patch_size;
    let mut patches = Array2::zeros((count, n));
    let mut origins = Vec::with_capacity(count);
    for mut row in patches.rows_mut() {
        let pick = rng.random_range(0..total);
        let image = cumulative.partition_point(|&c| c <= pick);
        let base = if image == 0 { 0 } else { cumulative[image - 1] };
        let img = &images[image];
        let span = (img.width() - patch_size + 1) as u64;
        let local = pick - base;
        let (x, y) = ((local % span) as usize, (local / span) as usize);
        let window = img
            .pixels
            .slice(ndarray::s![y..y + patch_size, x..x + patch_size]);
        for (dst, src) in row.iter_mut().zip(window.iter()) {
            *dst = *src;
        }
        origins.push(PatchOrigin { image, x, y });
    }
    PatchBatch::new(patches, origins, patch_size)
}

/// One batch of `cfg.batch_size` patches drawn with `cfg.rng_seed`.
pub fn sample_patches(images: &[RawImage], cfg: &PipelineConfig) -> Result<PatchBatch> {
    cfg.validate()?;
    let mut rng = seeded(cfg.rng_seed);
    sample_patches_with(images, cfg.patch_size, cfg.batch_size, &mut rng)
}

/// A source of fresh training batches.
pub trait PatchStream {
    fn patch_size(&self) -> usize;
    fn next_batch(&mut self, batch_size: usize) -> Result<PatchBatch>;
}

/// Samples directly from (already whitened) images.
pub struct ImagePatches {
    images: Vec<RawImage>,
    patch_size: usize,
    rng: DetRng,
}

impl ImagePatches {
    pub fn new(images: Vec<RawImage>, patch_size: usize, seed: u64) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Argument("no images to sample patches from".into()));
        }
        Ok(ImagePatches {
            images,
            patch_size,
            rng: seeded(seed),
        })
    }
}

impl PatchStream for ImagePatches {
    fn patch_size(&self) -> usize {
        self.patch_size
    }

    fn next_batch(&mut self, batch_size: usize) -> Result<PatchBatch> {
        sample_patches_with(&self.images, self.patch_size, batch_size, &mut self.rng)
    }
}

/// Resamples rows of a precomputed patch cache with replacement.
pub struct CachedPatches {
    cache: PatchBatch,
    rng: DetRng,
}

impl CachedPatches {
    pub fn new(cache: PatchBatch, seed: u64) -> Result<Self> {
        if cache.is_empty() {
            return Err(Error::Argument("patch cache is empty".into()));
        }
        Ok(CachedPatches {
            cache,
            rng: seeded(seed),
        })
    }
}

impl PatchStream for CachedPatches {
    fn patch_size(&self) -> usize {
        self.cache.patch_size()
    }

    fn next_batch(&mut self, batch_size: usize) -> Result<PatchBatch> {
        let n = self.cache.len();
        let rows: Vec<usize> = (0..batch_size)
            .map(|_| self.rng.random_range(0..n))
            .collect();
        Ok(self.cache.select(&rows))
    }
}
