//! Sampling Gabor parameters from the three analytical models.
//!
//! * Model 1: independent marginals, log-normal `σx`, Pareto `σy` and `λ`.
//! * Model 2: the same marginals joined by a Gaussian copula.
//! * Model 3: Pareto `λ` with `σx` and `σy` on straight lines in `λ`.
//!
//! All models draw `phi ~ U(0, π)` and `phase ~ U(−2π, 2π)`.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitstats::{correlation_matrix_psd, FitReport, MarginalFit};
use crate::gabor::{GaborBasis, GaborParams};
use crate::rng::atom_stream;

/// Attempts before a Model 3 draw with non-positive widths is declared
/// infeasible.
pub const MAX_RESAMPLES: usize = 10_000;

/// `Φ(x) = ½(1 + erf(x/√2))`, computed as `½ erfc(−x/√2)` to keep the lower
/// tail accurate.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

pub fn lognormal_quantile(mu: f64, sigma: f64, z: f64) -> f64 {
    (mu + sigma * z).exp()
}

/// Inverse CDF `β(1 − u)^(−1/α)` of the Pareto distribution.
pub fn pareto_quantile(alpha: f64, beta: f64, u: f64) -> f64 {
    beta * (1.0 - u).powf(-1.0 / alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Model1,
    Model2,
    Model3,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "1" | "model1" => Ok(Variant::Model1),
            "2" | "model2" => Ok(Variant::Model2),
            "3" | "model3" => Ok(Variant::Model3),
            _ => Err(Error::Argument(format!("unknown model variant {s:?}"))),
        }
    }
}

/// `σx = a1·λ + b1`, `σy = a2·λ + b2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lines {
    pub a1: f64,
    pub b1: f64,
    pub a2: f64,
    pub b2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormalParams {
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParetoParams {
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenModelSpec {
    pub variant: Variant,
    pub sigma_x: LogNormalParams,
    pub sigma_y: ParetoParams,
    pub lambda: ParetoParams,
    /// Copula coefficients `(ρ1, ρ2, ρ3)` for `(σx,σy)`, `(σx,λ)`, `(σy,λ)`.
    pub rho: [f64; 3],
    pub lines: Lines,
}

impl GenModelSpec {
    /// Estimates fitted to learned natural-image bases.
    pub fn published(variant: Variant) -> Self {
        GenModelSpec {
            variant,
            sigma_x: LogNormalParams {
                mu: -1.269,
                sigma: 0.3771,
            },
            sigma_y: ParetoParams {
                alpha: 1.592,
                beta: 0.0750,
            },
            lambda: ParetoParams {
                alpha: 2.751,
                beta: 0.1987,
            },
            rho: [0.8054, 0.7432, 0.7279],
            lines: Lines {
                a1: 1.393,
                b1: -0.0872,
                a2: 0.4948,
                b2: 0.0013,
            },
        }
    }

    /// Model built from a fit report of a learned basis.
    pub fn from_report(report: &FitReport, variant: Variant) -> Result<Self> {
        for (name, f) in [
            ("sigma_x", &report.sigma_x),
            ("sigma_y", &report.sigma_y),
            ("lambda", &report.lambda),
        ] {
            if f.degenerate {
                return Err(Error::Config(format!("fit for {name} is degenerate")));
            }
        }
        let sigma_x = match report.sigma_x.fit {
            MarginalFit::LogNormal { mu, sigma } => LogNormalParams { mu, sigma },
            other => {
                return Err(Error::Config(format!(
                    "sigma_x needs a log-normal fit, got {other:?}"
                )))
            }
        };
        let pareto = |name: &str, f: MarginalFit| match f {
            MarginalFit::Pareto { alpha, beta } => Ok(ParetoParams { alpha, beta }),
            other => Err(Error::Config(format!(
                "{name} needs a Pareto fit, got {other:?}"
            ))),
        };
        let c = &report.correlations;
        let spec = GenModelSpec {
            variant,
            sigma_x,
            sigma_y: pareto("sigma_y", report.sigma_y.fit)?,
            lambda: pareto("lambda", report.lambda.fit)?,
            rho: [c.rho1, c.rho2, c.rho3],
            lines: Lines {
                a1: c.line_sigma_x.slope,
                b1: c.line_sigma_x.intercept,
                a2: c.line_sigma_y.slope,
                b2: c.line_sigma_y.intercept,
            },
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Remaining variance of the third latent normal in the copula,
    /// `1 − ρ2² − (ρ3 − ρ1ρ2)²/(1 − ρ1²)`.
    pub fn copula_residual(&self) -> f64 {
        let [r1, r2, r3] = self.rho;
        1.0 - r2 * r2 - (r3 - r1 * r2).powi(2) / (1.0 - r1 * r1)
    }

    pub fn validate(&self) -> Result<()> {
        MarginalFit::LogNormal {
            mu: self.sigma_x.mu,
            sigma: self.sigma_x.sigma,
        }
        .validate()?;
        for p in [self.sigma_y, self.lambda] {
            MarginalFit::Pareto {
                alpha: p.alpha,
                beta: p.beta,
            }
            .validate()?;
        }
        match self.variant {
            Variant::Model1 => {}
            Variant::Model2 => {
                let [r1, r2, r3] = self.rho;
                if !(r1.abs() < 1.0)
                    || !correlation_matrix_psd(r1, r2, r3)
                    || !(self.copula_residual() >= 0.0)
                {
                    return Err(Error::Config(format!(
                        "copula coefficients {:?} are not a valid correlation structure",
                        self.rho
                    )));
                }
            }
            Variant::Model3 => {
                let beta = self.lambda.beta;
                let l = self.lines;
                let never_positive = |a: f64, b: f64| {
                    !a.is_finite() || !b.is_finite() || (a <= 0.0 && a * beta + b <= 0.0)
                };
                if never_positive(l.a1, l.b1) || never_positive(l.a2, l.b2) {
                    return Err(Error::Config(format!(
                        "lines {l:?} give non-positive widths for every wavelength above {beta}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<GaborParams> {
        match self.variant {
            Variant::Model1 => Ok(sample_model1(self, rng)),
            Variant::Model2 => sample_model2(self, rng),
            Variant::Model3 => sample_model3(self, rng),
        }
    }
}

impl Default for GenModelSpec {
    fn default() -> Self {
        GenModelSpec::published(Variant::Model3)
    }
}

fn assemble(phi: f64, phase: f64, sigma_x: f64, sigma_y: f64, lambda: f64) -> GaborParams {
    GaborParams {
        x0: 0.0,
        y0: 0.0,
        phi,
        phase,
        sigma_x,
        sigma_y,
        k: TAU / lambda,
    }
}

fn angles<R: Rng + ?Sized>(rng: &mut R) -> (f64, f64) {
    let phi = PI * rng.random::<f64>();
    let phase = -TAU + 2.0 * TAU * rng.random::<f64>();
    (phi, phase)
}

/// Model 1 from explicit draws: uniforms for `phi`, `phase`, `σy`, `λ` and a
/// standard normal `z` for `σx`.
pub fn model1_from_draws(
    spec: &GenModelSpec,
    u_phi: f64,
    u_phase: f64,
    z: f64,
    u_sigma_y: f64,
    u_lambda: f64,
) -> GaborParams {
    assemble(
        PI * u_phi,
        -TAU + 2.0 * TAU * u_phase,
        lognormal_quantile(spec.sigma_x.mu, spec.sigma_x.sigma, z),
        pareto_quantile(spec.sigma_y.alpha, spec.sigma_y.beta, u_sigma_y),
        pareto_quantile(spec.lambda.alpha, spec.lambda.beta, u_lambda),
    )
}

pub fn sample_model1<R: Rng + ?Sized>(spec: &GenModelSpec, rng: &mut R) -> GaborParams {
    let (u_phi, u_phase) = (rng.random(), rng.random());
    let z: f64 = rng.sample(StandardNormal);
    let (u_sy, u_l) = (rng.random(), rng.random());
    model1_from_draws(spec, u_phi, u_phase, z, u_sy, u_l)
}

/// Copula uniforms `(Y, Z)` for `σy` and `λ` from independent normals.
pub fn copula_uniforms(spec: &GenModelSpec, z1: f64, z2: f64, z3: f64) -> (f64, f64) {
    let [r1, r2, r3] = spec.rho;
    let s1 = (1.0 - r1 * r1).sqrt();
    let y = std_normal_cdf(r1 * z1 + s1 * z2);
    let z = std_normal_cdf(
        r2 * z1 + (r3 - r1 * r2) / s1 * z2 + spec.copula_residual().max(0.0).sqrt() * z3,
    );
    (y, z)
}

pub fn sample_model2<R: Rng + ?Sized>(spec: &GenModelSpec, rng: &mut R) -> Result<GaborParams> {
    let (phi, phase) = angles(rng);
    let [z1, z2, z3]: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
    let (y, z) = copula_uniforms(spec, z1, z2, z3);
    // Φ can round to one far in the tail, where the Pareto quantile diverges.
    let (y, z) = (y.min(1.0 - f64::EPSILON), z.min(1.0 - f64::EPSILON));
    let params = assemble(
        phi,
        phase,
        lognormal_quantile(spec.sigma_x.mu, spec.sigma_x.sigma, z1),
        pareto_quantile(spec.sigma_y.alpha, spec.sigma_y.beta, y),
        pareto_quantile(spec.lambda.alpha, spec.lambda.beta, z),
    );
    params.validate()?;
    Ok(params)
}

/// Widths on the Model 3 lines at wavelength `lambda`.
pub fn model3_widths(spec: &GenModelSpec, lambda: f64) -> (f64, f64) {
    let l = spec.lines;
    (l.a1 * lambda + l.b1, l.a2 * lambda + l.b2)
}

/// Draws `λ` until both widths are positive.
pub fn sample_model3<R: Rng + ?Sized>(spec: &GenModelSpec, rng: &mut R) -> Result<GaborParams> {
    let (phi, phase) = angles(rng);
    for _ in 0..MAX_RESAMPLES {
        let lambda = pareto_quantile(spec.lambda.alpha, spec.lambda.beta, rng.random());
        let (sx, sy) = model3_widths(spec, lambda);
        if sx > 0.0 && sy > 0.0 {
            return Ok(assemble(phi, phase, sx, sy, lambda));
        }
    }
    Err(Error::Config(format!(
        "no positive widths after {MAX_RESAMPLES} wavelength draws; check the line parameters"
    )))
}

/// One atom per pixel of a `patch_size × patch_size` grid. Atom `i` samples
/// from stream `i` of `seed`.
pub fn generate_basis(
    spec: &GenModelSpec,
    patch_size: usize,
    scale: f64,
    seed: u64,
) -> Result<GaborBasis> {
    spec.validate()?;
    let draws = (0..patch_size * patch_size)
        .map(|i| spec.sample(&mut atom_stream(seed, i)))
        .collect::<Result<Vec<_>>>()?;
    GaborBasis::from_draws(|i| draws[i], scale, patch_size)
}
