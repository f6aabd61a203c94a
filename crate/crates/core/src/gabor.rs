//! Two-dimensional Gabor atoms with the wave-vector locked to the ỹ principal
//! axis, their closed-form parameter derivatives, and patch-tiling bases.
//!
//! Coordinates are pixels on a `P × P` grid, with `x` the column and `y` the
//! row. Offsets from an atom center are divided by `P` before rotation, so
//! widths and wavelengths are measured in patch side-lengths.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::atom_stream;

/// Parameters of one atom. `x0`, `y0` are fixed pixel coordinates; the other
/// five are learnable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaborParams {
    pub x0: f64,
    pub y0: f64,
    /// Orientation of the envelope principal axes, radians.
    pub phi: f64,
    /// Phase of the carrier, radians.
    pub phase: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    /// Carrier wave number along ỹ, radians per patch side-length.
    pub k: f64,
}

impl GaborParams {
    pub fn wavelength(&self) -> f64 {
        TAU / self.k.abs()
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.x0,
            self.y0,
            self.phi,
            self.phase,
            self.sigma_x,
            self.sigma_y,
            self.k,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "non-finite Gabor parameter in {self:?}"
            )));
        }
        if self.sigma_x <= 0.0 || self.sigma_y <= 0.0 {
            return Err(Error::Domain(format!(
                "envelope widths must be positive, got sigma_x={} sigma_y={}",
                self.sigma_x, self.sigma_y
            )));
        }
        if self.k == 0.0 {
            return Err(Error::Domain("wave number k must be non-zero".into()));
        }
        Ok(())
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

    pub fn set(&mut self, which: Param, value: f64) {
        match which {
            Param::Phi => self.phi = value,
            Param::Phase => self.phase = value,
            Param::SigmaX => self.sigma_x = value,
            Param::SigmaY => self.sigma_y = value,
            Param::K => self.k = value,
        }
    }
}

/// The five learnable parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Param {
    Phi,
    Phase,
    SigmaX,
    SigmaY,
    K,
}

impl Param {
    pub const ALL: [Param; 5] = [
        Param::Phi,
        Param::Phase,
        Param::SigmaX,
        Param::SigmaY,
        Param::K,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Param::Phi => "phi",
            Param::Phase => "phase",
            Param::SigmaX => "sigma_x",
            Param::SigmaY => "sigma_y",
            Param::K => "k",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Param {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Param::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown Gabor parameter '{s}'")))
    }
}

/// Square pixel grid of side `P`. One dimensionless unit equals `P` pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    size: usize,
}

impl Grid {
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::Argument("grid size must be positive".into()));
        }
        Ok(Grid { size })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn pixels(&self) -> usize {
        self.size * self.size
    }

    /// Pixels per dimensionless unit.
    pub fn unit(&self) -> f64 {
        self.size as f64
    }

    /// Pixel coordinates `(x, y)` of row-major index `i`.
    pub fn coords(&self, i: usize) -> (f64, f64) {
        ((i % self.size) as f64, (i / self.size) as f64)
    }
}

/// Rotated, centered coordinates `(x̃, ỹ)` of pixel `(x, y)` in units.
pub fn rotate_coords(params: &GaborParams, grid: &Grid, x: f64, y: f64) -> (f64, f64) {
    let dx = (x - params.x0) / grid.unit();
    let dy = (y - params.y0) / grid.unit();
    let (s, c) = params.phi.sin_cos();
    (c * dx - s * dy, s * dx + c * dy)
}

/// Everything the field and its derivatives need at one pixel.
#[derive(Debug, Clone, Copy)]
struct PixelTerms {
    xt: f64,
    yt: f64,
    g: f64,
    h: f64,
}

fn for_each_pixel(
    params: &GaborParams,
    scale: f64,
    grid: &Grid,
    mut f: impl FnMut(usize, PixelTerms),
) {
    let inv_sx2 = 1.0 / (params.sigma_x * params.sigma_x);
    let inv_sy2 = 1.0 / (params.sigma_y * params.sigma_y);
    for i in 0..grid.pixels() {
        let (x, y) = grid.coords(i);
        let (xt, yt) = rotate_coords(params, grid, x, y);
        let env = scale * (-0.5 * (xt * xt * inv_sx2 + yt * yt * inv_sy2)).exp();
        let (s, c) = (params.k * yt + params.phase).sin_cos();
        f(
            i,
            PixelTerms {
                xt,
                yt,
                g: env * c,
                h: env * s,
            },
        );
    }
}

fn field_from(
    grid: &Grid,
    params: &GaborParams,
    scale: f64,
    pick: impl Fn(&PixelTerms) -> f64,
) -> Array2<f64> {
    let p = grid.size();
    let mut out = Array2::zeros((p, p));
    let flat = out.as_slice_mut().expect("standard layout");
    for_each_pixel(params, scale, grid, |i, t| flat[i] = pick(&t));
    out
}

/// The atom sampled on the grid, indexed `[y, x]`.
pub fn evaluate(params: &GaborParams, scale: f64, grid: &Grid) -> Array2<f64> {
    field_from(grid, params, scale, |t| t.g)
}

/// The sine-phase partner of [`evaluate`]: same envelope, `sin` carrier.
pub fn evaluate_h(params: &GaborParams, scale: f64, grid: &Grid) -> Array2<f64> {
    field_from(grid, params, scale, |t| t.h)
}

fn derivative_term(which: Param, params: &GaborParams, t: &PixelTerms) -> f64 {
    let sx = params.sigma_x;
    let sy = params.sigma_y;
    match which {
        Param::Phi => {
            t.g * (1.0 / (sx * sx) - 1.0 / (sy * sy)) * t.xt * t.yt - t.h * params.k * t.xt
        }
        Param::SigmaX => t.g * t.xt * t.xt / (sx * sx * sx),
        Param::SigmaY => t.g * t.yt * t.yt / (sy * sy * sy),
        Param::K => -t.h * t.yt,
        Param::Phase => -t.h,
    }
}

/// Closed-form derivative of the atom field with respect to one parameter.
pub fn partial_derivative(
    params: &GaborParams,
    scale: f64,
    grid: &Grid,
    which: Param,
) -> Array2<f64> {
    field_from(grid, params, scale, |t| derivative_term(which, params, t))
}

/// `Σ_r ∂g(r)/∂θ_i · weights(r)` for all five parameters in one pass, in
/// [`Param::ALL`] order. `weights` is a row-major pixel vector.
pub fn derivative_projections(
    params: &GaborParams,
    scale: f64,
    grid: &Grid,
    weights: ArrayView1<f64>,
) -> [f64; 5] {
    assert_eq!(weights.len(), grid.pixels(), "weight vector length");
    let mut acc = [0.0; 5];
    for_each_pixel(params, scale, grid, |i, t| {
        let w = weights[i];
        for p in Param::ALL {
            acc[p.index()] += derivative_term(p, params, &t) * w;
        }
    });
    acc
}

/// Maps parameters onto the canonical representative of their symmetry class
/// without changing the field: `k > 0`, `phi ∈ [0, π)`, `phase ∈ (−π, π]`.
pub fn canonicalize(params: &GaborParams) -> GaborParams {
    let mut q = *params;
    if q.k < 0.0 {
        q.k = -q.k;
        q.phase = -q.phase;
    }
    if !(0.0..PI).contains(&q.phi) {
        let mut phi = q.phi.rem_euclid(TAU);
        if phi >= TAU {
            phi -= TAU;
        }
        if phi >= PI {
            // a half-turn flips both rotated axes; cos is even
            phi -= PI;
            q.phase = -q.phase;
        }
        q.phi = phi.clamp(0.0, PI.next_down());
    }
    if !(q.phase > -PI && q.phase <= PI) {
        let mut ph = q.phase.rem_euclid(TAU);
        if ph > PI {
            ph -= TAU;
        }
        if ph <= -PI {
            ph = PI;
        }
        q.phase = ph;
    }
    q
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeStats {
    /// `σy / σx`.
    pub aspect: f64,
    /// `σy / λ` (widths swapped to match the receptive-field convention).
    pub n_x: f64,
    /// `σx / λ`.
    pub n_y: f64,
}

pub fn shape_stats(params: &GaborParams) -> ShapeStats {
    let lambda = params.wavelength();
    ShapeStats {
        aspect: params.sigma_y / params.sigma_x,
        n_x: params.sigma_y / lambda,
        n_y: params.sigma_x / lambda,
    }
}

/// Columns are rendered atoms, rows are pixels in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldMatrix(pub Array2<f64>);

impl FieldMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("field matrix has non-finite entries".into()));
        }
        Ok(FieldMatrix(values))
    }

    pub fn pixels(&self) -> usize {
        self.0.nrows()
    }

    pub fn atoms(&self) -> usize {
        self.0.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

/// One atom centered at every pixel of a `P × P` patch, with a shared scale `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaborBasis {
    atoms: Vec<GaborParams>,
    scale: f64,
    patch_size: usize,
}

/// Default global amplitude `A`. With unit-variance whitened patches it keeps
/// atoms of typical learned size near unit norm, so coefficient and pixel
/// magnitudes are comparable in the sparseness ratio.
pub const DEFAULT_SCALE: f64 = 0.25;

/// Initial parameter ranges: widths and wavelength in `(0.2, 0.4)` units.
pub const INIT_SPATIAL_RANGE: (f64, f64) = (0.2, 0.4);

impl GaborBasis {
    pub fn new(atoms: Vec<GaborParams>, scale: f64, patch_size: usize) -> Result<Self> {
        let grid = Grid::new(patch_size)?;
        if atoms.len() != grid.pixels() {
            return Err(Error::Format(format!(
                "basis for patch size {patch_size} needs {} atoms, got {}",
                grid.pixels(),
                atoms.len()
            )));
        }
        if !scale.is_finite() {
            return Err(Error::Domain("basis scale must be finite".into()));
        }
        for (i, atom) in atoms.iter().enumerate() {
            let (x, y) = grid.coords(i);
            if atom.x0 != x || atom.y0 != y {
                return Err(Error::Format(format!(
                    "atom {i} must be centered at ({x}, {y}), found ({}, {})",
                    atom.x0, atom.y0
                )));
            }
            atom.validate()?;
        }
        Ok(GaborBasis {
            atoms,
            scale,
            patch_size,
        })
    }

    /// Builds a basis from one parameter draw per pixel; centers are assigned
    /// from the pixel grid and every atom is canonicalized.
    pub fn from_draws(
        mut draws: impl FnMut(usize) -> GaborParams,
        scale: f64,
        patch_size: usize,
    ) -> Result<Self> {
        let grid = Grid::new(patch_size)?;
        let atoms = (0..grid.pixels())
            .map(|i| {
                let (x0, y0) = grid.coords(i);
                canonicalize(&GaborParams { x0, y0, ..draws(i) })
            })
            .collect();
        GaborBasis::new(atoms, scale, patch_size)
    }

    /// Uninformed starting point: `phi ~ U(0, π)`, `phase ~ U(−2π, 2π)`,
    /// `σx, σy, λ ~ U(0.2, 0.4)`. Each atom draws from its own stream of `seed`.
    pub fn uniform_random(patch_size: usize, scale: f64, seed: u64) -> Result<Self> {
        let (lo, hi) = INIT_SPATIAL_RANGE;
        GaborBasis::from_draws(
            |i| {
                let mut rng = atom_stream(seed, i);
                let phi = rng.random_range(0.0..PI);
                let phase = rng.random_range(-TAU..TAU);
                let sigma_x = rng.random_range(lo..hi);
                let sigma_y = rng.random_range(lo..hi);
                let lambda = rng.random_range(lo..hi);
                GaborParams {
                    x0: 0.0,
                    y0: 0.0,
                    phi,
                    phase,
                    sigma_x,
                    sigma_y,
                    k: TAU / lambda,
                }
            },
            scale,
            patch_size,
        )
    }

    pub fn atoms(&self) -> &[GaborParams] {
        &self.atoms
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn grid(&self) -> Grid {
        Grid {
            size: self.patch_size,
        }
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Replaces the learnable parameters, keeping centers. Used by learning
    /// rules that map atoms one-to-one.
    pub fn map_atoms(
        &self,
        mut f: impl FnMut(usize, &GaborParams) -> Result<GaborParams>,
    ) -> Result<Self> {
        let atoms = self
            .atoms
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let mut next = f(i, a)?;
                next.x0 = a.x0;
                next.y0 = a.y0;
                Ok(next)
            })
            .collect::<Result<Vec<_>>>()?;
        GaborBasis::new(atoms, self.scale, self.patch_size)
    }

    pub fn render(&self) -> FieldMatrix {
        render(self)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
        w.write_record(["P", "A"])?;
        w.write_record([self.patch_size.to_string(), self.scale.to_string()])?;
        w.write_record(["x0", "y0", "phi", "phase", "sigma_x", "sigma_y", "k"])?;
        for a in &self.atoms {
            w.serialize((a.x0, a.y0, a.phi, a.phase, a.sigma_x, a.sigma_y, a.k))?;
        }
        w.flush().map_err(|e| Error::io("<basis csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut rows = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(input)
            .into_records();
        let mut next_row = |what: &str| -> Result<csv::StringRecord> {
            rows.next()
                .ok_or_else(|| Error::Format(format!("basis csv ended before {what}")))?
                .map_err(Error::from)
        };
        let head = next_row("header")?;
        if head.len() != 2 || &head[0] != "P" || &head[1] != "A" {
            return Err(Error::Format(
                "basis csv must start with a 'P,A' header".into(),
            ));
        }
        let meta = next_row("patch size and scale")?;
        if meta.len() != 2 {
            return Err(Error::Format("expected 'P,A' values on line 2".into()));
        }
        let patch_size: usize = meta[0]
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("bad patch size '{}'", &meta[0])))?;
        let scale = parse_f64(&meta[1])?;
        let cols = next_row("column header")?;
        if cols.len() != 7 {
            return Err(Error::Format("expected 7 atom columns".into()));
        }
        let mut atoms = Vec::new();
        for row in rows {
            let row = row?;
            if row.len() != 7 {
                return Err(Error::Format(format!(
                    "atom row has {} fields, expected 7",
                    row.len()
                )));
            }
            let v = row.iter().map(parse_f64).collect::<Result<Vec<_>>>()?;
            atoms.push(GaborParams {
                x0: v[0],
                y0: v[1],
                phi: v[2],
                phase: v[3],
                sigma_x: v[4],
                sigma_y: v[5],
                k: v[6],
            });
        }
        GaborBasis::new(atoms, scale, patch_size)
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Format(format!("not a number: '{s}'")))
}

/// Renders every atom as a column of a `(P·P) × n` matrix.
pub fn render(basis: &GaborBasis) -> FieldMatrix {
    render_atoms(&basis.atoms, basis.scale, &basis.grid())
}

/// Column `j` is atom `j` sampled on `grid` in row-major pixel order.
pub fn render_atoms(atoms: &[GaborParams], scale: f64, grid: &Grid) -> FieldMatrix {
    let mut m = Array2::zeros((grid.pixels(), atoms.len()));
    for (j, atom) in atoms.iter().enumerate() {
        let mut col = m.column_mut(j);
        for_each_pixel(atom, scale, grid, |i, t| col[i] = t.g);
    }
    FieldMatrix(m)
}
