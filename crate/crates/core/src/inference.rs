//! MAP inference of sparse coefficients under a Cauchy prior.
//!
//! The energy of a coefficient vector `a` for patch `I` and rendered basis `G`
//! is `½‖I − G a‖² + λ Σ log(1 + a_j²)`. It is minimized by Polak–Ribière
//! nonlinear conjugate gradient, restarted whenever the update fails to be a
//! descent direction. Patches of a batch are solved in lockstep so the
//! Hessian–direction products become one matrix product per iteration; each
//! column still follows its own independent trajectory.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gabor::FieldMatrix;
use crate::linalg::{matmul, matvec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    /// Weight of the sparseness penalty.
    pub lambda_sparse: f64,
    /// Stop once the gradient infinity-norm drops below this.
    pub cg_tol: f64,
    pub cg_max_iters: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            lambda_sparse: 0.1,
            cg_tol: 1e-4,
            cg_max_iters: 200,
        }
    }
}

impl InferenceConfig {
    pub fn with_lambda(&self, lambda_sparse: f64) -> Self {
        InferenceConfig {
            lambda_sparse,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_sparse >= 0.0 && self.lambda_sparse.is_finite()) {
            return Err(Error::Config(format!(
                "lambda_sparse must be >= 0, got {}",
                self.lambda_sparse
            )));
        }
        if !(self.cg_tol > 0.0) {
            return Err(Error::Config(format!(
                "cg_tol must be positive, got {}",
                self.cg_tol
            )));
        }
        if self.cg_max_iters < 1 {
            return Err(Error::Config("cg_max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode {
    pub a: Array1<f64>,
    pub energy: f64,
    /// `I − G a`, one entry per pixel.
    pub residual: Array1<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[inline]
fn penalty(x: f64) -> f64 {
    (x * x).ln_1p()
}

#[inline]
fn penalty_d1(x: f64) -> f64 {
    2.0 * x / (1.0 + x * x)
}

#[inline]
fn penalty_d2(x: f64) -> f64 {
    let q = 1.0 + x * x;
    2.0 * (1.0 - x * x) / (q * q)
}

/// `Σ log(1 + x_i²)`.
pub fn sparseness(x: ArrayView1<f64>) -> f64 {
    x.iter().map(|&v| penalty(v)).sum()
}

fn check_dims(image: ArrayView1<f64>, basis: &FieldMatrix, a: ArrayView1<f64>) {
    assert_eq!(
        image.len(),
        basis.pixels(),
        "image length must equal basis pixel count"
    );
    assert_eq!(
        a.len(),
        basis.atoms(),
        "coefficient length must equal atom count"
    );
}

pub fn residual(image: ArrayView1<f64>, basis: &FieldMatrix, a: ArrayView1<f64>) -> Array1<f64> {
    check_dims(image, basis, a);
    &image - &matvec(basis.values().view(), a)
}

pub fn energy(image: ArrayView1<f64>, basis: &FieldMatrix, a: ArrayView1<f64>, lambda: f64) -> f64 {
    let r = residual(image, basis, a);
    0.5 * r.dot(&r) + lambda * sparseness(a)
}

pub fn energy_grad_a(
    image: ArrayView1<f64>,
    basis: &FieldMatrix,
    a: ArrayView1<f64>,
    lambda: f64,
) -> Array1<f64> {
    let r = residual(image, basis, a);
    let mut g = -matvec(basis.values().t(), r.view());
    Zip::from(&mut g)
        .and(&a)
        .for_each(|g, &aj| *g += lambda * penalty_d1(aj));
    g
}

/// `S(a) / S(I)`; below one means the code is sparser than the pixels.
pub fn sparseness_ratio(a: ArrayView1<f64>, image: ArrayView1<f64>) -> Result<f64> {
    let denom = sparseness(image);
    if denom == 0.0 {
        return Err(Error::Domain(
            "sparseness ratio undefined for an all-zero image".into(),
        ));
    }
    Ok(sparseness(a) / denom)
}

/// Mean squared residual per pixel.
pub fn reconstruction_error(
    image: ArrayView1<f64>,
    basis: &FieldMatrix,
    a: ArrayView1<f64>,
) -> f64 {
    let r = residual(image, basis, a);
    r.dot(&r) / r.len() as f64
}

pub fn map_infer(
    image: ArrayView1<f64>,
    basis: &FieldMatrix,
    cfg: &InferenceConfig,
) -> Result<SparseCode> {
    Coder::new(basis, cfg)?.infer(image)
}

/// A basis prepared for repeated inference: holds the Gram matrix `GᵀG`.
pub struct Coder<'a> {
    basis: &'a FieldMatrix,
    gram: Array2<f64>,
    cfg: InferenceConfig,
}

/// Left-to-right dot product, so the rounding does not depend on the
/// memory layout of either operand.
fn seq_dot(x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
    x.iter().zip(y.iter()).fold(0.0, |acc, (a, b)| acc + a * b)
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;
const NEWTON_STEPS: usize = 6;

/// Per-column scratch for the one-dimensional search along `d`. The
/// quadratic part of the energy is exact given `gᵀd` and `dᵀGᵀGd`, so each
/// trial step costs O(atoms).
struct LineProblem<'v> {
    a: ArrayView1<'v, f64>,
    d: ArrayView1<'v, f64>,
    quad_slope: f64,
    curvature: f64,
    lambda: f64,
    base_penalty: f64,
}

impl LineProblem<'_> {
    fn value(&self, t: f64) -> f64 {
        let pen: f64 = Zip::from(&self.a)
            .and(&self.d)
            .fold(0.0, |acc, &a, &d| acc + penalty(a + t * d));
        t * self.quad_slope + 0.5 * t * t * self.curvature + self.lambda * (pen - self.base_penalty)
    }

    fn derivatives(&self, t: f64) -> (f64, f64) {
        let (d1, d2) = Zip::from(&self.a)
            .and(&self.d)
            .fold((0.0, 0.0), |(s1, s2), &a, &d| {
                let x = a + t * d;
                (s1 + penalty_d1(x) * d, s2 + penalty_d2(x) * d * d)
            });
        (
            self.quad_slope + t * self.curvature + self.lambda * d1,
            self.curvature + self.lambda * d2,
        )
    }

    /// Returns `(t, φ(t))` with `φ(t) ≤ c₁·t·φ'(0)`, or `(0, 0)` if no such
    /// step was found.
    fn search(&self) -> (f64, f64) {
        let (slope0, curv0) = self.derivatives(0.0);
        if !(slope0 < 0.0) {
            return (0.0, 0.0);
        }
        let h = curv0.max(self.curvature).max(f64::MIN_POSITIVE);
        let mut t = -slope0 / h;
        // Safeguarded Newton refinement toward the 1-D minimizer.
        for _ in 0..NEWTON_STEPS {
            let (s, c) = self.derivatives(t);
            if !(c > 0.0) {
                break;
            }
            let next = t - s / c;
            if !(next > 0.0 && next.is_finite()) {
                break;
            }
            let done = (next - t).abs() <= 1e-12 * t.abs();
            t = next;
            if done {
                break;
            }
        }
        for _ in 0..MAX_BACKTRACKS {
            let v = self.value(t);
            if v.is_finite() && v <= ARMIJO_C1 * t * slope0 {
                return (t, v);
            }
            t *= 0.5;
        }
        (0.0, 0.0)
    }
}

impl<'a> Coder<'a> {
    pub fn new(basis: &'a FieldMatrix, cfg: &InferenceConfig) -> Result<Self> {
        cfg.validate()?;
        let g = basis.values();
        Ok(Coder {
            basis,
            gram: matmul(g.t(), g.view()),
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &InferenceConfig {
        &self.cfg
    }

    pub fn infer(&self, image: ArrayView1<f64>) -> Result<SparseCode> {
        let x = image.insert_axis(Axis(0));
        Ok(self.solve(x, None)?.pop().expect("one patch"))
    }

    /// Like [`Coder::infer`], also returning the energy (evaluated directly from
    /// the coefficients) before the first and after every accepted step.
    pub fn infer_traced(&self, image: ArrayView1<f64>) -> Result<(SparseCode, Vec<f64>)> {
        let x = image.insert_axis(Axis(0));
        let mut trace = Vec::new();
        let code = self.solve(x, Some(&mut trace))?.pop().expect("one patch");
        Ok((code, trace))
    }

    /// Independent MAP estimates for every row of `patches`.
    pub fn infer_batch(&self, patches: ArrayView2<f64>) -> Result<Vec<SparseCode>> {
        self.solve(patches, None)
    }

    fn solve(
        &self,
        patches: ArrayView2<f64>,
        mut trace: Option<&mut Vec<f64>>,
    ) -> Result<Vec<SparseCode>> {
        let g = self.basis.values();
        let n_pix = g.nrows();
        let n = g.ncols();
        assert_eq!(
            patches.ncols(),
            n_pix,
            "patch length must equal basis pixel count"
        );
        let batch = patches.nrows();
        let lambda = self.cfg.lambda_sparse;

        // Column c of every matrix below belongs to patch c.
        let x = patches.t();
        let b = matmul(g.t(), x);
        let mut a = Array2::<f64>::zeros((n, batch));
        let mut qa = Array2::<f64>::zeros((n, batch));
        let mut grad = -&b;
        let mut dir = b.clone();
        let mut grad_sq: Vec<f64> = grad.columns().into_iter().map(|c| seq_dot(c, c)).collect();
        let mut iterations = vec![0usize; batch];
        let mut converged = vec![false; batch];
        let mut active: Vec<usize> = Vec::with_capacity(batch);

        if let Some(tr) = trace.as_deref_mut() {
            tr.push(energy(x.column(0), self.basis, a.column(0), lambda));
        }

        for iter in 0..self.cfg.cg_max_iters {
            active.clear();
            for c in 0..batch {
                if converged[c] {
                    continue;
                }
                let gmax = grad.column(c).iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if gmax < self.cfg.cg_tol {
                    converged[c] = true;
                } else {
                    active.push(c);
                }
            }
            if active.is_empty() {
                break;
            }
            let d_act = dir.select(Axis(1), &active);
            let qd = matmul(self.gram.view(), d_act.view());

            for (k, &c) in active.iter().enumerate() {
                let d = d_act.column(k);
                let qd_c = qd.column(k);
                let quad_slope = seq_dot((&qa.column(c) - &b.column(c)).view(), d);
                let line = LineProblem {
                    a: a.column(c),
                    d,
                    quad_slope,
                    curvature: seq_dot(d, qd_c),
                    lambda,
                    base_penalty: sparseness(a.column(c)),
                };
                let (t, dv) = line.search();
                if !dv.is_finite() || !t.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite energy in line search (patch {c}, iteration {iter}, step {t})"
                    )));
                }
                iterations[c] = iter + 1;
                if t == 0.0 {
                    // no descent possible along d even after restarting
                    converged[c] = true;
                    continue;
                }
                a.column_mut(c).scaled_add(t, &d);
                qa.column_mut(c).scaled_add(t, &qd_c);

                let mut g_new = &qa.column(c) - &b.column(c);
                Zip::from(&mut g_new)
                    .and(a.column(c))
                    .for_each(|gv, &av| *gv += lambda * penalty_d1(av));
                let g_old = grad.column(c);
                let new_sq = seq_dot(g_new.view(), g_new.view());
                let beta = if grad_sq[c] > 0.0 {
                    ((new_sq - seq_dot(g_new.view(), g_old)) / grad_sq[c]).max(0.0)
                } else {
                    0.0
                };
                let mut d_next = dir.column_mut(c);
                Zip::from(&mut d_next)
                    .and(&g_new)
                    .for_each(|dv, &gv| *dv = -gv + beta * *dv);
                if seq_dot(d_next.view(), g_new.view()) >= 0.0 || (iter + 1) % n == 0 {
                    Zip::from(&mut d_next)
                        .and(&g_new)
                        .for_each(|dv, &gv| *dv = -gv);
                }
                grad.column_mut(c).assign(&g_new);
                grad_sq[c] = new_sq;

                if let Some(tr) = trace.as_deref_mut() {
                    tr.push(energy(x.column(c), self.basis, a.column(c), lambda));
                }
            }
        }

        let resid = &x - &matmul(g.view(), a.view());
        let mut out = Vec::with_capacity(batch);
        for c in 0..batch {
            let r = resid.column(c).to_owned();
            let ac = a.column(c).to_owned();
            let e = 0.5 * r.dot(&r) + lambda * sparseness(ac.view());
            if !e.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite final energy for patch {c}"
                )));
            }
            out.push(SparseCode {
                a: ac,
                energy: e,
                residual: r,
                iterations: iterations[c],
                converged: converged[c],
            });
        }
        Ok(out)
    }
}
