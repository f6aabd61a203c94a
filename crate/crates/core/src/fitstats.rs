//! Marginal fits, correlations and histograms of learned Gabor parameters.
//!
//! Statistics use the atoms with `σx ≤ 1`; larger envelopes overflow the patch
//! and are excluded. Marginals follow the analytical model: log-normal for
//! `σx`, Pareto for `σy` and for the wavelength `λ = 2π/|k|`.

use std::f64::consts::{PI, TAU};
use std::io::Write;

use log::warn;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::gabor::{shape_stats, GaborBasis, GaborParams};

/// Atoms with envelopes wider than this are left out of the statistics.
pub const SIGMA_X_LIMIT: f64 = 1.0;

pub const DEFAULT_BINS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MarginalFit {
    Uniform { lo: f64, hi: f64 },
    LogNormal { mu: f64, sigma: f64 },
    Pareto { alpha: f64, beta: f64 },
}

impl MarginalFit {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            MarginalFit::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo < hi,
            MarginalFit::LogNormal { mu, sigma } => {
                mu.is_finite() && sigma.is_finite() && sigma > 0.0
            }
            MarginalFit::Pareto { alpha, beta } => {
                alpha.is_finite() && alpha > 0.0 && beta.is_finite() && beta > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid marginal {self:?}")))
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            MarginalFit::Uniform { lo, hi } => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
            MarginalFit::LogNormal { mu, sigma } => {
                if x <= 0.0 {
                    0.0
                } else {
                    crate::genmodel::std_normal_cdf((x.ln() - mu) / sigma)
                }
            }
            MarginalFit::Pareto { alpha, beta } => {
                if x < beta {
                    0.0
                } else {
                    1.0 - (beta / x).powf(alpha)
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub fit: MarginalFit,
    pub n: usize,
    /// The data do not determine a proper distribution (zero spread).
    pub degenerate: bool,
}

fn check_positive(samples: &[f64]) -> Result<()> {
    if samples.len() < 2 {
        return Err(Error::Domain(format!(
            "need at least 2 samples, got {}",
            samples.len()
        )));
    }
    if let Some(x) = samples.iter().find(|x| !(**x > 0.0 && x.is_finite())) {
        return Err(Error::Domain(format!(
            "samples must be positive and finite, found {x}"
        )));
    }
    Ok(())
}

/// Maximum-likelihood log-normal: mean and population standard deviation of
/// `ln x`.
pub fn fit_lognormal(samples: &[f64]) -> Result<FitResult> {
    check_positive(samples)?;
    let n = samples.len() as f64;
    let mu = samples.iter().map(|x| x.ln()).sum::<f64>() / n;
    let var = samples.iter().map(|x| (x.ln() - mu).powi(2)).sum::<f64>() / n;
    let sigma = var.sqrt();
    Ok(FitResult {
        fit: MarginalFit::LogNormal { mu, sigma },
        n: samples.len(),
        degenerate: sigma == 0.0,
    })
}

/// Maximum-likelihood Pareto with the scale at the sample minimum. Identical
/// samples give `α = ∞` and the degenerate flag.
pub fn fit_pareto(samples: &[f64]) -> Result<FitResult> {
    check_positive(samples)?;
    let beta = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let log_sum: f64 = samples.iter().map(|x| (x / beta).ln()).sum();
    let alpha = if log_sum > 0.0 {
        samples.len() as f64 / log_sum
    } else {
        f64::INFINITY
    };
    Ok(FitResult {
        fit: MarginalFit::Pareto { alpha, beta },
        n: samples.len(),
        degenerate: !alpha.is_finite(),
    })
}

pub fn fit_uniform(samples: &[f64]) -> Result<FitResult> {
    if samples.len() < 2 {
        return Err(Error::Domain(format!(
            "need at least 2 samples, got {}",
            samples.len()
        )));
    }
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(FitResult {
        fit: MarginalFit::Uniform { lo, hi },
        n: samples.len(),
        degenerate: !(lo < hi),
    })
}

/// Atoms with `σx ≤ 1`.
pub fn filter_for_stats(basis: &GaborBasis) -> Vec<GaborParams> {
    let kept: Vec<GaborParams> = basis
        .atoms()
        .iter()
        .filter(|a| a.sigma_x <= SIGMA_X_LIMIT)
        .copied()
        .collect();
    if kept.is_empty() {
        warn!("no atom satisfies sigma_x <= {SIGMA_X_LIMIT}; statistics are empty");
    }
    kept
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Argument(
            "correlation needs two equal-length series of at least 2".into(),
        ));
    }
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Domain(
            "correlation undefined for a zero-variance series".into(),
        ));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Least-squares line `y = slope·x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope; zero for exact fits or two points.
    pub slope_se: f64,
}

pub fn line_fit(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Argument(
            "line fit needs two equal-length series of at least 2".into(),
        ));
    }
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Domain(
            "line fit undefined when x has zero variance".into(),
        ));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_se = if x.len() > 2 {
        let sse: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| (b - intercept - slope * a).powi(2))
            .sum();
        (sse / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(LineFit {
        slope,
        intercept,
        slope_se,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    /// `ρ(σx, σy)`.
    pub rho1: f64,
    /// `ρ(σx, λ)`.
    pub rho2: f64,
    /// `ρ(σy, λ)`.
    pub rho3: f64,
    /// `σx` against `λ`.
    pub line_sigma_x: LineFit,
    /// `σy` against `λ`.
    pub line_sigma_y: LineFit,
}

/// Whether `[[1,ρ1,ρ2],[ρ1,1,ρ3],[ρ2,ρ3,1]]` is positive semidefinite.
pub fn correlation_matrix_psd(rho1: f64, rho2: f64, rho3: f64) -> bool {
    const TOL: f64 = 1e-12;
    let minors = [rho1, rho2, rho3].iter().all(|r| r.abs() <= 1.0 + TOL);
    let det = 1.0 + 2.0 * rho1 * rho2 * rho3 - rho1 * rho1 - rho2 * rho2 - rho3 * rho3;
    minors && det >= -TOL
}

impl CorrelationReport {
    pub fn is_psd(&self) -> bool {
        correlation_matrix_psd(self.rho1, self.rho2, self.rho3)
    }
}

struct Spatial {
    sigma_x: Vec<f64>,
    sigma_y: Vec<f64>,
    lambda: Vec<f64>,
}

fn spatial(params: &[GaborParams]) -> Spatial {
    Spatial {
        sigma_x: params.iter().map(|p| p.sigma_x).collect(),
        sigma_y: params.iter().map(|p| p.sigma_y).collect(),
        lambda: params.iter().map(|p| p.wavelength()).collect(),
    }
}

pub fn correlations(params: &[GaborParams]) -> Result<CorrelationReport> {
    if params.len() < 3 {
        return Err(Error::Domain(format!(
            "correlations need at least 3 atoms, got {}",
            params.len()
        )));
    }
    let s = spatial(params);
    Ok(CorrelationReport {
        rho1: pearson(&s.sigma_x, &s.sigma_y)?,
        rho2: pearson(&s.sigma_x, &s.lambda)?,
        rho3: pearson(&s.sigma_y, &s.lambda)?,
        line_sigma_x: line_fit(&s.lambda, &s.sigma_x)?,
        line_sigma_y: line_fit(&s.lambda, &s.sigma_y)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub parameter: String,
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Equal-width bins over `[lo, hi]`; values outside are clamped into the
    /// end bins. A zero-width range puts everything in the first bin.
    pub fn new(parameter: &str, values: &[f64], bins: usize, lo: f64, hi: f64) -> Self {
        let bins = bins.max(1);
        let mut counts = vec![0; bins];
        let width = (hi - lo) / bins as f64;
        for v in values {
            let i = if width > 0.0 {
                (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1)
            } else {
                0
            };
            counts[i] += 1;
        }
        Histogram {
            parameter: parameter.to_string(),
            lo,
            hi,
            counts,
        }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.counts.len() as f64
    }

    /// Counts divided by `total × bin width`, so the bars integrate to one.
    pub fn density(&self) -> Vec<f64> {
        let norm = self.total() as f64 * self.bin_width();
        self.counts
            .iter()
            .map(|&c| if norm > 0.0 { c as f64 / norm } else { 0.0 })
            .collect()
    }
}

fn data_range(values: &[f64]) -> (f64, f64) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo.is_finite() {
        (lo, hi)
    } else {
        (0.0, 0.0)
    }
}

/// Histograms of `phi`, `phase`, `σx`, `σy`, `λ` and `σy/σx`. Angles use their
/// canonical ranges; the others span the data.
pub fn export_histograms(params: &[GaborParams], bins: usize) -> Vec<Histogram> {
    let s = spatial(params);
    let aspect: Vec<f64> = params.iter().map(|p| shape_stats(p).aspect).collect();
    let phi: Vec<f64> = params.iter().map(|p| p.phi).collect();
    let phase: Vec<f64> = params.iter().map(|p| p.phase).collect();
    let ranged = |name: &str, v: &[f64]| {
        let (lo, hi) = data_range(v);
        Histogram::new(name, v, bins, lo, hi)
    };
    vec![
        Histogram::new("phi", &phi, bins, 0.0, PI),
        Histogram::new("phase", &phase, bins, -PI, PI),
        ranged("sigma_x", &s.sigma_x),
        ranged("sigma_y", &s.sigma_y),
        ranged("lambda", &s.lambda),
        ranged("aspect", &aspect),
    ]
}

pub fn write_histograms_csv<W: Write>(hists: &[Histogram], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["parameter", "bin", "lo", "hi", "count", "density"])?;
    for h in hists {
        let width = h.bin_width();
        for (i, (c, d)) in h.counts.iter().zip(h.density()).enumerate() {
            let lo = h.lo + width * i as f64;
            w.write_record([
                h.parameter.clone(),
                i.to_string(),
                lo.to_string(),
                (lo + width).to_string(),
                c.to_string(),
                d.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<histogram csv>", e))?;
    Ok(())
}

/// One row per atom: the spatial parameters and the receptive-field shape
/// measures for comparison with physiological scatter plots.
pub fn write_scatter_csv<W: Write>(params: &[GaborParams], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sigma_x", "sigma_y", "lambda", "aspect", "n_x", "n_y"])?;
    for p in params {
        let s = shape_stats(p);
        w.write_record(
            [p.sigma_x, p.sigma_y, p.wavelength(), s.aspect, s.n_x, s.n_y]
                .iter()
                .map(|v| v.to_string()),
        )?;
    }
    w.flush().map_err(|e| Error::io("<scatter csv>", e))?;
    Ok(())
}

/// Everything `genmodel` needs to rebuild the three analytical models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub atoms_total: usize,
    pub atoms_retained: usize,
    pub sigma_x: FitResult,
    pub sigma_y: FitResult,
    pub lambda: FitResult,
    pub correlations: CorrelationReport,
    pub pareto_estimator: String,
}

pub fn fit_report(basis: &GaborBasis) -> Result<FitReport> {
    let kept = filter_for_stats(basis);
    let s = spatial(&kept);
    Ok(FitReport {
        atoms_total: basis.len(),
        atoms_retained: kept.len(),
        sigma_x: fit_lognormal(&s.sigma_x)?,
        sigma_y: fit_pareto(&s.sigma_y)?,
        lambda: fit_pareto(&s.lambda)?,
        correlations: correlations(&kept)?,
        pareto_estimator: "maximum likelihood, beta at the sample minimum".into(),
    })
}

impl FitReport {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Kolmogorov–Smirnov distance between the empirical distribution of
/// `samples` and `cdf`.
pub fn ks_distance(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter().enumerate().fold(0.0, |d, (i, &x)| {
        let f = cdf(x);
        d.max((f - i as f64 / n).abs())
            .max(((i + 1) as f64 / n - f).abs())
    })
}

/// Pearson chi-square test of equal cell probabilities; returns the statistic
/// and its upper-tail p-value.
pub fn chi_square_uniform(counts: &[usize]) -> Result<(f64, f64)> {
    if counts.len() < 2 {
        return Err(Error::Argument("chi-square needs at least 2 cells".into()));
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::Argument(
            "chi-square needs a non-empty sample".into(),
        ));
    }
    let expected = total as f64 / counts.len() as f64;
    let stat: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    let dist =
        ChiSquared::new((counts.len() - 1) as f64).map_err(|e| Error::Numeric(e.to_string()))?;
    Ok((stat, 1.0 - dist.cdf(stat)))
}

/// Wave number for a wavelength, both in patch units.
pub fn wave_number(lambda: f64) -> f64 {
    TAU / lambda
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn pearson_is_affine_invariant(
            xs in proptest::collection::vec(-10.0f64..10.0, 5..40),
            noise in proptest::collection::vec(-1.0f64..1.0, 40),
            scale in 0.1f64..10.0, shift in -5.0f64..5.0,
        ) {
            let ys: Vec<f64> = xs.iter().zip(&noise).map(|(x, n)| 0.7 * x + n).collect();
            let Ok(r) = pearson(&xs, &ys) else { return Ok(()) };
            let xs2: Vec<f64> = xs.iter().map(|x| scale * x + shift).collect();
            let r2 = pearson(&xs2, &ys).unwrap();
            prop_assert!((r - r2).abs() < 1e-9);
        }
    }
}
