//! Synthetic grayscale corpora with natural-image-like statistics.
//!
//! The dead-leaves model stacks occluding shapes whose sizes follow a power
//! law `p(r) ∝ r⁻³`, which yields the scale-invariant `1/f²` power spectrum,
//! sharp occlusion edges and heavy-tailed filter responses typical of natural
//! scenes. Axis-aligned rectangles give a "man-made" variant dominated by
//! horizontal and vertical structure.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio::RawImage;
use crate::rng::atom_stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeafShape {
    Disc,
    /// Randomly oriented ellipses, giving long nearly straight contours.
    Ellipse,
    Rectangle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeadLeaves {
    pub width: usize,
    pub height: usize,
    pub shape: LeafShape,
    pub min_radius: f64,
    pub max_radius: f64,
    /// Largest major/minor axis ratio of elliptical leaves; ratios are
    /// log-uniform in `[1, max_aspect]`.
    pub max_aspect: f64,
    /// Gaussian blur applied after painting, in pixels.
    pub blur_sigma: f64,
    /// Standard deviation of additive pixel noise.
    pub noise: f64,
    pub max_leaves: usize,
}

impl Default for DeadLeaves {
    fn default() -> Self {
        DeadLeaves {
            width: 256,
            height: 256,
            shape: LeafShape::Ellipse,
            min_radius: 1.0,
            max_radius: 96.0,
            max_aspect: 8.0,
            blur_sigma: 0.7,
            noise: 0.01,
            max_leaves: 400_000,
        }
    }
}

impl DeadLeaves {
    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Argument(
                "dead-leaves image needs positive size".into(),
            ));
        }
        if !(self.min_radius > 0.0 && self.max_radius >= self.min_radius) {
            return Err(Error::Argument(
                "dead-leaves radii must satisfy 0 < min <= max".into(),
            ));
        }
        if !(self.max_aspect >= 1.0) {
            return Err(Error::Argument(
                "dead-leaves max_aspect must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Inverse-CDF draw from `p(r) ∝ r⁻³` on `[min_radius, max_radius]`.
    fn radius(&self, u: f64) -> f64 {
        let a = self.min_radius.powi(-2);
        let b = self.max_radius.powi(-2);
        (a - u * (a - b)).powf(-0.5)
    }

    /// Paints one image. Leaves are laid front to back, so a pixel takes the
    /// gray level of the first leaf that covers it.
    pub fn render(&self, seed: u64) -> Result<RawImage> {
        self.validate()?;
        let (w, h) = (self.width, self.height);
        let mut rng = atom_stream(seed, 0);
        let mut img = Array2::<f64>::from_elem((h, w), f64::NAN);
        let mut uncovered = w * h;
        let margin = self.max_radius;
        for _ in 0..self.max_leaves {
            if uncovered == 0 {
                break;
            }
            let cx = rng.random_range(-margin..w as f64 + margin);
            let cy = rng.random_range(-margin..h as f64 + margin);
            let gray: f64 = rng.random();
            // Semi-axes, plus the rotation used by ellipses.
            let (rx, ry, minor, cos, sin) = match self.shape {
                LeafShape::Disc => {
                    let r = self.radius(rng.random());
                    (r, r, r, 1.0, 0.0)
                }
                LeafShape::Ellipse => {
                    let r = self.radius(rng.random());
                    let aspect = self.max_aspect.powf(rng.random::<f64>());
                    let theta = rng.random_range(0.0..std::f64::consts::PI);
                    (r, r, r / aspect, theta.cos(), theta.sin())
                }
                LeafShape::Rectangle => {
                    let (a, b) = (self.radius(rng.random()), self.radius(rng.random()));
                    (a, b, b, 1.0, 0.0)
                }
            };
            let x_lo = (cx - rx).ceil().max(0.0) as usize;
            let y_lo = (cy - ry).ceil().max(0.0) as usize;
            let x_hi = ((cx + rx).floor().min(w as f64 - 1.0)).max(-1.0);
            let y_hi = ((cy + ry).floor().min(h as f64 - 1.0)).max(-1.0);
            if x_hi < 0.0 || y_hi < 0.0 {
                continue;
            }
            let (x_hi, y_hi) = (x_hi as usize, y_hi as usize);
            for y in y_lo..=y_hi {
                for x in x_lo..=x_hi {
                    let inside = match self.shape {
                        LeafShape::Disc => {
                            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                            dx * dx + dy * dy <= rx * rx
                        }
                        LeafShape::Ellipse => {
                            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                            let u = (cos * dx + sin * dy) / rx;
                            let v = (-sin * dx + cos * dy) / minor;
                            u * u + v * v <= 1.0
                        }
                        LeafShape::Rectangle => true,
                    };
                    if inside && img[[y, x]].is_nan() {
                        img[[y, x]] = gray;
                        uncovered -= 1;
                    }
                }
            }
        }
        img.mapv_inplace(|v| if v.is_nan() { 0.5 } else { v });
        if self.blur_sigma > 0.0 {
            img = gaussian_blur(&img, self.blur_sigma);
        }
        if self.noise > 0.0 {
            let normal =
                Normal::new(0.0, self.noise).map_err(|e| Error::Argument(e.to_string()))?;
            img.mapv_inplace(|v| v + normal.sample(&mut rng));
        }
        RawImage::new(img)
    }
}

fn gaussian_blur(img: &Array2<f64>, sigma: f64) -> Array2<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
    let (h, w) = img.dim();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            tmp[[y, x]] = kernel
                .iter()
                .enumerate()
                .map(|(i, k)| k * img[[y, clamp(x as isize + i as isize - radius, w)]])
                .sum::<f64>();
        }
    }
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            out[[y, x]] = kernel
                .iter()
                .enumerate()
                .map(|(i, k)| k * tmp[[clamp(y as isize + i as isize - radius, h), x]])
                .sum::<f64>();
        }
    }
    out
}

/// `count` independent images; image `i` uses stream `i` of `seed`.
pub fn dead_leaves_corpus(spec: &DeadLeaves, count: usize, seed: u64) -> Result<Vec<RawImage>> {
    (0..count)
        .map(|i| {
            spec.render(
                seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
                    .wrapping_add(i as u64),
            )
        })
        .collect()
}
