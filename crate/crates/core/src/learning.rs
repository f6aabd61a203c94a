//! EM-style adaptation of Gabor parameters, the unconstrained baseline
//! learner and the stability probe that connects the two.
//!
//! Each iteration draws a fresh batch, infers MAP codes for it (E-step), moves
//! every atom's parameters along `η_i Σ_r ∂g/∂θ_i(r) ⟨â r̂(r)⟩` (M-step), and
//! finally rescales the envelope area so each coefficient variance drifts
//! toward a goal value.

use std::f64::consts::TAU;
use std::io::Write;

use log::{debug, warn};
use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gabor::{
    canonicalize, derivative_projections, FieldMatrix, GaborBasis, GaborParams, Param,
};
use crate::imageio::{PatchBatch, PatchStream, PipelineConfig};
use crate::inference::{Coder, InferenceConfig, SparseCode};
use crate::linalg::matmul;

/// Iteration count past which Gabor learning is known to stop improving.
pub const DEGRADATION_ITERATIONS: usize = 320;

/// Per-parameter learning rates. They multiply batch means, so they do not
/// need rescaling when the batch size changes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Rates {
    pub phi: f64,
    pub phase: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub k: f64,
}

impl Default for Rates {
    fn default() -> Self {
        Rates {
            phi: 1.0,
            phase: 1.0,
            sigma_x: 0.5,
            sigma_y: 0.1,
            k: 10.0,
        }
    }
}

impl Rates {
    pub fn zero() -> Self {
        Rates {
            phi: 0.0,
            phase: 0.0,
            sigma_x: 0.0,
            sigma_y: 0.0,
            k: 0.0,
        }
    }

    pub fn get(&self, which: Param) -> f64 {
        match which {
            Param::Phi => self.phi,
            Param::Phase => self.phase,
            Param::SigmaX => self.sigma_x,
            Param::SigmaY => self.sigma_y,
            Param::K => self.k,
        }
    }

    /// The interchanged-rate configuration: σx and σy rates trade places.
    pub fn swap_sigma(&self) -> Self {
        Rates {
            sigma_x: self.sigma_y,
            sigma_y: self.sigma_x,
            ..*self
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningConfig {
    pub eta: Rates,
    /// Exponent of the area rule.
    pub alpha: f64,
    /// Goal variance of every coefficient.
    pub sigma_goal_sq: f64,
    pub iterations: usize,
    /// Apply the area rule after each M-step.
    pub rescale: bool,
    /// Parameter snapshot interval in the trace; 0 disables snapshots.
    pub snapshot_every: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Shortest allowed wavelength, in pixels.
    pub min_wavelength_px: f64,
}

impl Default for LearningConfig {
    fn default() -> Self {
        LearningConfig {
            eta: Rates::default(),
            alpha: 0.7,
            sigma_goal_sq: 1.0,
            iterations: 200,
            rescale: true,
            snapshot_every: 50,
            sigma_min: 0.05,
            sigma_max: 1.5,
            min_wavelength_px: 2.0,
        }
    }
}

impl LearningConfig {
    pub fn validate(&self) -> Result<()> {
        for p in Param::ALL {
            let r = self.eta.get(p);
            if !(r >= 0.0 && r.is_finite()) {
                return Err(Error::Config(format!(
                    "learning rate for {p} must be >= 0, got {r}"
                )));
            }
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!(
                "alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.sigma_goal_sq > 0.0 && self.sigma_goal_sq.is_finite()) {
            return Err(Error::Config(format!(
                "sigma_goal_sq must be positive, got {}",
                self.sigma_goal_sq
            )));
        }
        if !(self.sigma_min > 0.0 && self.sigma_max >= self.sigma_min) {
            return Err(Error::Config(
                "sigma clamps must satisfy 0 < sigma_min <= sigma_max".into(),
            ));
        }
        if !(self.min_wavelength_px > 0.0) {
            return Err(Error::Config("min_wavelength_px must be positive".into()));
        }
        Ok(())
    }

    /// Largest wave number allowed on a patch of side `patch_size`.
    pub fn max_k(&self, patch_size: usize) -> f64 {
        TAU * patch_size as f64 / self.min_wavelength_px
    }

    /// Clamps widths and wavelength, then canonicalizes.
    pub fn clamp(&self, p: &GaborParams, patch_size: usize) -> GaborParams {
        let mut q = canonicalize(p);
        q.sigma_x = q.sigma_x.clamp(self.sigma_min, self.sigma_max);
        q.sigma_y = q.sigma_y.clamp(self.sigma_min, self.sigma_max);
        q.k = q.k.min(self.max_k(patch_size));
        q
    }

    fn check_clamps(&self, basis: &GaborBasis) -> Result<()> {
        let k_max = self.max_k(basis.patch_size());
        for (j, a) in basis.atoms().iter().enumerate() {
            let in_range = |s: f64| s >= self.sigma_min && s <= self.sigma_max;
            if !in_range(a.sigma_x) || !in_range(a.sigma_y) || a.k.abs() > k_max {
                return Err(Error::Numeric(format!(
                    "atom {j} left the parameter clamps: {a:?}"
                )));
            }
        }
        Ok(())
    }
}

/// Codes stacked as a `batch × atoms` matrix and residuals as `batch × pixels`.
fn stack_codes(codes: &[SparseCode]) -> (Array2<f64>, Array2<f64>) {
    let n = codes.first().map_or(0, |c| c.a.len());
    let pix = codes.first().map_or(0, |c| c.residual.len());
    let mut a = Array2::zeros((codes.len(), n));
    let mut r = Array2::zeros((codes.len(), pix));
    for (i, c) in codes.iter().enumerate() {
        a.row_mut(i).assign(&c.a);
        r.row_mut(i).assign(&c.residual);
    }
    (a, r)
}

/// `⟨â_j r̂⟩` for every atom `j`, as an `atoms × pixels` matrix.
pub fn code_residual_correlation(codes: &[SparseCode]) -> Result<Array2<f64>> {
    if codes.is_empty() {
        return Err(Error::Argument("no codes to average over".into()));
    }
    let (a, r) = stack_codes(codes);
    Ok(matmul(a.t(), r.view()) / codes.len() as f64)
}

/// `⟨â_j²⟩` for every atom.
pub fn coefficient_variance(codes: &[SparseCode]) -> Result<Array1<f64>> {
    if codes.is_empty() {
        return Err(Error::Argument("no codes to average over".into()));
    }
    let n = codes[0].a.len();
    let mut v = Array1::zeros(n);
    for c in codes {
        v.zip_mut_with(&c.a, |s, &x| *s += x * x);
    }
    Ok(v / codes.len() as f64)
}

/// One gradient step on every atom's five parameters, followed by clamping
/// and canonicalization.
pub fn m_step_update(
    basis: &GaborBasis,
    batch: &PatchBatch,
    codes: &[SparseCode],
    cfg: &LearningConfig,
) -> Result<GaborBasis> {
    if codes.len() != batch.len() {
        return Err(Error::Argument(format!(
            "{} codes for a batch of {} patches",
            codes.len(),
            batch.len()
        )));
    }
    let corr = code_residual_correlation(codes)?;
    let grid = basis.grid();
    let scale = basis.scale();
    basis.map_atoms(|j, p| {
        let proj = derivative_projections(p, scale, &grid, corr.row(j));
        let mut next = *p;
        for which in Param::ALL {
            let v = p.get(which) + cfg.eta.get(which) * proj[which.index()];
            if !v.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite update of {which} for atom {j}"
                )));
            }
            next.set(which, v);
        }
        Ok(cfg.clamp(&next, basis.patch_size()))
    })
}

/// Rescales both widths of every atom by `s = (⟨â²⟩/σ²_goal)^(α/2)`, so the
/// envelope area changes by `(⟨â²⟩/σ²_goal)^α` and the aspect ratio is kept.
/// The factor is limited so both widths stay inside the clamps; atoms whose
/// coefficients were all zero are left alone.
pub fn variance_rescale(
    basis: &GaborBasis,
    codes: &[SparseCode],
    cfg: &LearningConfig,
) -> Result<GaborBasis> {
    let var = coefficient_variance(codes)?;
    if var.len() != basis.len() {
        return Err(Error::Argument(format!(
            "codes have {} coefficients, basis has {} atoms",
            var.len(),
            basis.len()
        )));
    }
    basis.map_atoms(|j, p| Ok(rescale_atom(p, var[j], cfg)))
}

fn rescale_atom(p: &GaborParams, variance: f64, cfg: &LearningConfig) -> GaborParams {
    if !(variance > 0.0) {
        return *p;
    }
    let s = (variance / cfg.sigma_goal_sq).powf(cfg.alpha / 2.0);
    let lo = cfg.sigma_min / p.sigma_x.min(p.sigma_y);
    let hi = cfg.sigma_max / p.sigma_x.max(p.sigma_y);
    if lo > hi {
        return *p;
    }
    let s = s.clamp(lo, hi);
    let bound = |v: f64| v.clamp(cfg.sigma_min, cfg.sigma_max);
    GaborParams {
        sigma_x: bound(p.sigma_x * s),
        sigma_y: bound(p.sigma_y * s),
        ..*p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub mean_energy: f64,
    pub mean_variance: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LearningTrace {
    pub records: Vec<TraceRecord>,
    /// `(iteration, atoms)` after the given number of completed iterations.
    pub snapshots: Vec<(usize, Vec<GaborParams>)>,
}

impl LearningTrace {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io("<trace csv>", e))?;
        Ok(())
    }
}

fn batch_stats(codes: &[SparseCode]) -> (f64, f64) {
    let b = codes.len() as f64;
    let energy = codes.iter().map(|c| c.energy).sum::<f64>() / b;
    let n = codes.first().map_or(1, |c| c.a.len()) as f64;
    let var = codes
        .iter()
        .map(|c| c.a.iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        / (b * n);
    (energy, var)
}

fn check_stream(stream: &dyn PatchStream, patch_size: usize) -> Result<()> {
    if stream.patch_size() != patch_size {
        return Err(Error::Argument(format!(
            "patch stream yields {}-pixel patches, basis expects {patch_size}",
            stream.patch_size()
        )));
    }
    Ok(())
}

/// Alternates E-steps on fresh batches with M-steps and area rescaling for
/// `lcfg.iterations` rounds.
pub fn em_learn(
    stream: &mut dyn PatchStream,
    pcfg: &PipelineConfig,
    icfg: &InferenceConfig,
    lcfg: &LearningConfig,
    init: &GaborBasis,
) -> Result<(GaborBasis, LearningTrace)> {
    pcfg.validate()?;
    icfg.validate()?;
    lcfg.validate()?;
    check_stream(stream, init.patch_size())?;
    if lcfg.iterations > DEGRADATION_ITERATIONS {
        warn!(
            "{} learning iterations requested; performance tends to degrade past {DEGRADATION_ITERATIONS}",
            lcfg.iterations
        );
    }
    let mut basis = init.clone();
    let mut trace = LearningTrace::default();
    for it in 0..lcfg.iterations {
        let mut step = || -> Result<GaborBasis> {
            let batch = stream.next_batch(pcfg.batch_size)?;
            let g = basis.render();
            let codes = Coder::new(&g, icfg)?.infer_batch(batch.patches().view())?;
            let (mean_energy, mean_variance) = batch_stats(&codes);
            trace.records.push(TraceRecord {
                iteration: it,
                mean_energy,
                mean_variance,
            });
            let mut next = m_step_update(&basis, &batch, &codes, lcfg)?;
            if lcfg.rescale {
                next = variance_rescale(&next, &codes, lcfg)?;
            }
            lcfg.check_clamps(&next)?;
            debug!("iteration {it}: energy {mean_energy:.4}, variance {mean_variance:.4}");
            Ok(next)
        };
        basis = step().map_err(|e| at_iteration(e, it))?;
        if lcfg.snapshot_every > 0 && (it + 1) % lcfg.snapshot_every == 0 {
            trace.snapshots.push((it + 1, basis.atoms().to_vec()));
        }
    }
    Ok((basis, trace))
}

fn at_iteration(e: Error, it: usize) -> Error {
    match e {
        Error::Numeric(m) => Error::Numeric(format!("iteration {it}: {m}")),
        other => other,
    }
}

/// Settings of the unconstrained baseline learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NonparamConfig {
    pub eta: f64,
    /// Gain-normalization exponent; 0 disables normalization.
    pub alpha: f64,
    pub sigma_goal_sq: f64,
    pub iterations: usize,
}

impl Default for NonparamConfig {
    fn default() -> Self {
        NonparamConfig {
            eta: 0.01,
            alpha: 0.01,
            sigma_goal_sq: 1.0,
            iterations: 2000,
        }
    }
}

impl NonparamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("eta must be >= 0, got {}", self.eta)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.sigma_goal_sq > 0.0) {
            return Err(Error::Config("sigma_goal_sq must be positive".into()));
        }
        Ok(())
    }
}

/// `G + η ⟨r̂ âᵀ⟩`: every column moves along its coefficient-weighted residual.
pub fn nonparam_gradient_step(
    g: &FieldMatrix,
    codes: &[SparseCode],
    eta: f64,
) -> Result<FieldMatrix> {
    let corr = code_residual_correlation(codes)?;
    if corr.dim() != (g.atoms(), g.pixels()) {
        return Err(Error::Argument("codes do not match the basis shape".into()));
    }
    FieldMatrix::new(g.values() + &(corr.t().to_owned() * eta))
}

/// Scales column `j` by `(⟨â_j²⟩/σ²_goal)^(α/2)`; dead columns are kept.
pub fn gain_normalize(
    g: &FieldMatrix,
    codes: &[SparseCode],
    alpha: f64,
    sigma_goal_sq: f64,
) -> Result<FieldMatrix> {
    let var = coefficient_variance(codes)?;
    let mut m = g.values().clone();
    for (mut col, v) in m.axis_iter_mut(Axis(1)).zip(var.iter()) {
        if *v > 0.0 {
            col *= (v / sigma_goal_sq).powf(alpha / 2.0);
        }
    }
    FieldMatrix::new(m)
}

/// Learns an unconstrained basis matrix from `init`.
pub fn learn_nonparam(
    stream: &mut dyn PatchStream,
    pcfg: &PipelineConfig,
    icfg: &InferenceConfig,
    ncfg: &NonparamConfig,
    init: &FieldMatrix,
) -> Result<FieldMatrix> {
    pcfg.validate()?;
    icfg.validate()?;
    ncfg.validate()?;
    let p = stream.patch_size();
    if init.pixels() != p * p {
        return Err(Error::Argument(format!(
            "basis has {} pixels, stream patches have {}",
            init.pixels(),
            p * p
        )));
    }
    let mut g = init.clone();
    for it in 0..ncfg.iterations {
        let mut step = || -> Result<FieldMatrix> {
            let batch = stream.next_batch(pcfg.batch_size)?;
            let codes = Coder::new(&g, icfg)?.infer_batch(batch.patches().view())?;
            let next = nonparam_gradient_step(&g, &codes, ncfg.eta)?;
            if ncfg.alpha > 0.0 {
                gain_normalize(&next, &codes, ncfg.alpha, ncfg.sigma_goal_sq)
            } else {
                Ok(next)
            }
        };
        g = step().map_err(|e| at_iteration(e, it))?;
    }
    Ok(g)
}

/// Mean distance from each unit-normalized column of `before` to the nearest
/// unit-normalized column of `after`, up to sign. Zero for any column
/// permutation of the same matrix.
pub fn column_drift(before: &FieldMatrix, after: &FieldMatrix) -> Result<f64> {
    if before.pixels() != after.pixels() || after.atoms() == 0 {
        return Err(Error::Argument(
            "drift needs matrices with matching pixel counts".into(),
        ));
    }
    let unit = |m: &FieldMatrix| {
        let mut u = m.values().clone();
        for mut col in u.axis_iter_mut(Axis(1)) {
            let n = col.dot(&col).sqrt();
            if n > 0.0 {
                col /= n;
            }
        }
        u
    };
    let (u, v) = (unit(before), unit(after));
    let cos = matmul(u.t(), v.view());
    let n = cos.nrows();
    if n == 0 {
        return Ok(0.0);
    }
    let total: f64 = cos
        .rows()
        .into_iter()
        .map(|row| {
            let best = row.iter().fold(f64::NEG_INFINITY, |m, c| m.max(c.abs()));
            // ‖u − v‖² = 2 − 2 u·v for unit vectors
            (2.0 - 2.0 * best.min(1.0)).max(0.0).sqrt()
        })
        .sum();
    Ok(total / n as f64)
}

/// Runs the baseline learner from the rendered `basis` and reports how far
/// its atoms moved.
pub fn stability_probe(
    basis: &GaborBasis,
    stream: &mut dyn PatchStream,
    pcfg: &PipelineConfig,
    icfg: &InferenceConfig,
    ncfg: &NonparamConfig,
) -> Result<(FieldMatrix, f64)> {
    let start = basis.render();
    let end = learn_nonparam(stream, pcfg, icfg, ncfg, &start)?;
    let drift = column_drift(&start, &end)?;
    Ok((end, drift))
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn rescale_preserves_aspect(
            sx in 0.05f64..1.5, sy in 0.05f64..1.5, var in 1e-4f64..10.0, alpha in 0.01f64..1.0,
        ) {
            let cfg = LearningConfig { alpha, ..Default::default() };
            let p = GaborParams { x0: 0.0, y0: 0.0, phi: 0.3, phase: 0.1, sigma_x: sx, sigma_y: sy, k: 9.0 };
            let q = rescale_atom(&p, var, &cfg);
            prop_assert!(((q.sigma_y / q.sigma_x) - sy / sx).abs() <= 1e-12 * (sy / sx));
            prop_assert!(q.sigma_x >= cfg.sigma_min * (1.0 - 1e-12) && q.sigma_x <= cfg.sigma_max * (1.0 + 1e-12));
        }
    }
}
