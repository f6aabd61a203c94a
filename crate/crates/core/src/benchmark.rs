//! Sparseness-versus-error curves: sweep λ over held-out patches, then read
//! off the reconstruction error at a chosen sparseness ratio.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gabor::FieldMatrix;
use crate::imageio::PatchBatch;
use crate::inference::{reconstruction_error, sparseness_ratio, Coder, InferenceConfig};

/// Sparseness levels at which bases are compared.
pub const MATCHED_LEVELS: [f64; 5] = [0.5, 0.6, 0.7, 0.8, 0.9];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub lambda: f64,
    /// Mean of `S(a)/S(I)` over the patches.
    pub mean_ratio: f64,
    /// Mean squared residual per pixel.
    pub mean_error: f64,
}

/// `count` values spaced evenly in log between `lo` and `hi`.
pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![lo],
        _ => (0..count)
            .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (count - 1) as f64).exp())
            .collect(),
    }
}

/// Default sweep, wide enough to span sparseness ratios from above one down
/// to well below the matched levels on whitened patches.
pub fn default_lambdas() -> Vec<f64> {
    log_spaced(1e-4, 5.0, 24)
}

pub fn lambda_sweep(
    basis: &FieldMatrix,
    patches: &PatchBatch,
    lambdas: &[f64],
    icfg: &InferenceConfig,
) -> Result<Vec<SweepPoint>> {
    if patches.is_empty() {
        return Err(Error::Argument("benchmark needs at least one patch".into()));
    }
    let n = patches.len() as f64;
    lambdas
        .iter()
        .map(|&lambda| {
            let coder = Coder::new(basis, &icfg.with_lambda(lambda))?;
            let codes = coder.infer_batch(patches.patches().view())?;
            let mut ratio = 0.0;
            let mut error = 0.0;
            for (i, c) in codes.iter().enumerate() {
                ratio += sparseness_ratio(c.a.view(), patches.patch(i))?;
                error += reconstruction_error(patches.patch(i), basis, c.a.view());
            }
            Ok(SweepPoint {
                lambda,
                mean_ratio: ratio / n,
                mean_error: error / n,
            })
        })
        .collect()
}

/// Error at sparseness ratio `level`, interpolated linearly between the two
/// sweep points that bracket it. `None` if no pair brackets the level.
pub fn error_at_sparseness(curve: &[SweepPoint], level: f64) -> Option<f64> {
    let mut pts: Vec<&SweepPoint> = curve.iter().collect();
    pts.sort_by(|a, b| a.mean_ratio.total_cmp(&b.mean_ratio));
    pts.windows(2).find_map(|w| {
        let (a, b) = (w[0], w[1]);
        if !(a.mean_ratio <= level && level <= b.mean_ratio) {
            return None;
        }
        if b.mean_ratio == a.mean_ratio {
            return Some(0.5 * (a.mean_error + b.mean_error));
        }
        let t = (level - a.mean_ratio) / (b.mean_ratio - a.mean_ratio);
        Some(a.mean_error + t * (b.mean_error - a.mean_error))
    })
}

/// Errors at every level, failing if any level lies outside the sweep.
pub fn matched_errors(curve: &[SweepPoint], levels: &[f64]) -> Result<Vec<f64>> {
    levels
        .iter()
        .map(|&l| {
            error_at_sparseness(curve, l).ok_or_else(|| {
                Error::Domain(format!(
                    "sparseness level {l} is not bracketed by the λ sweep"
                ))
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gabor::GaborBasis;
    use crate::imageio::PatchOrigin;
    use crate::rng::seeded;
    use ndarray::Array2;
    use rand::Rng;

    fn pt(r: f64, e: f64) -> SweepPoint {
        SweepPoint {
            lambda: 0.0,
            mean_ratio: r,
            mean_error: e,
        }
    }

    #[test]
    fn interpolation_is_linear_between_brackets() {
        let curve = [pt(1.0, 0.0), pt(0.2, 0.8), pt(0.6, 0.4)];
        assert!((error_at_sparseness(&curve, 0.4).unwrap() - 0.6).abs() < 1e-12);
        assert_eq!(error_at_sparseness(&curve, 1.0), Some(0.0));
        assert_eq!(error_at_sparseness(&curve, 0.1), None);
        assert!(matched_errors(&curve, &[0.1]).is_err());
    }

    #[test]
    fn log_spacing_hits_the_ends() {
        let v = log_spaced(0.01, 10.0, 4);
        assert_eq!(v.len(), 4);
        assert!((v[0] - 0.01).abs() < 1e-15 && (v[3] - 10.0).abs() < 1e-12);
        assert!((v[1] / v[0] - 10.0).abs() < 1e-9);
    }

    #[test]
    fn larger_lambda_gives_sparser_codes_and_larger_error() {
        let basis = GaborBasis::uniform_random(4, 1.0, 3).unwrap().render();
        let mut rng = seeded(9);
        let patches = Array2::from_shape_fn((20, 16), |_| rng.random_range(-1.5..1.5));
        let batch = PatchBatch::new(
            patches,
            vec![
                PatchOrigin {
                    image: 0,
                    x: 0,
                    y: 0
                };
                20
            ],
            4,
        )
        .unwrap();
        let curve = lambda_sweep(
            &basis,
            &batch,
            &[0.01, 0.1, 0.5, 2.0],
            &InferenceConfig::default(),
        )
        .unwrap();
        for w in curve.windows(2) {
            assert!(w[1].mean_ratio <= w[0].mean_ratio + 1e-9, "{w:?}");
            assert!(w[1].mean_error >= w[0].mean_error - 1e-9, "{w:?}");
        }
    }
}
