//! Gaussian-kernel and linear-spline bases over the wavelength grid.
//!
//! Four design matrices make up a [`BasisSet`]:
//!
//! * `k_alpha` for the wavelength-varying intercept (knots every 10 nm),
//! * `k_u` for the site-level random effects (knots every 25 nm),
//! * `k_beta` for the covariate coefficient functions (knots every 100 nm),
//! * `k_sigma`, a linear spline for the log noise variance (interior knots every 50 nm).
//!
//! Kernel columns are unnormalized Gaussians `exp(-(w - κ)² / 2h²)`, so every
//! entry lies in `[0, 1]`. Each matrix starts with an all-ones intercept column.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strictly increasing wavelengths in nm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WavelengthGrid {
    values: Vec<f64>,
}

impl WavelengthGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("wavelength grid is empty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("wavelength grid has non-finite values".into()));
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("wavelength grid must be strictly increasing".into()));
        }
        Ok(Self { values })
    }

    /// Evenly spaced grid `start, start + step, …` with `len` points.
    pub fn regular(start: f64, step: f64, len: usize) -> Result<Self> {
        Self::new((0..len).map(|i| start + step * i as f64).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn translated(&self, shift: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v + shift).collect(),
        }
    }
}

impl Default for WavelengthGrid {
    /// 450..=949 nm at 1 nm spacing (500 points).
    fn default() -> Self {
        Self::regular(450.0, 1.0, 500).expect("default grid is valid")
    }
}

/// Evenly spaced Gaussian kernel knots with a fixed bandwidth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelBasisSpec {
    pub knot_start: f64,
    /// Last knot, included.
    pub knot_end: f64,
    pub knot_spacing: f64,
    pub bandwidth: f64,
    pub include_intercept: bool,
}

impl KernelBasisSpec {
    /// Knots from `start` to `end` inclusive, bandwidth 1.5 × spacing, with intercept.
    pub fn with_spacing(start: f64, end: f64, spacing: f64) -> Self {
        Self {
            knot_start: start,
            knot_end: end,
            knot_spacing: spacing,
            bandwidth: 1.5 * spacing,
            include_intercept: true,
        }
    }

    pub fn knots(&self) -> Vec<f64> {
        if !(self.knot_spacing > 0.0) || self.knot_end < self.knot_start {
            return Vec::new();
        }
        let count = ((self.knot_end - self.knot_start) / self.knot_spacing + 1e-9).floor() as usize + 1;
        (0..count).map(|i| self.knot_start + self.knot_spacing * i as f64).collect()
    }

    pub fn n_columns(&self) -> usize {
        self.knots().len() + usize::from(self.include_intercept)
    }

    pub fn shifted(&self, shift: f64) -> Self {
        Self {
            knot_start: self.knot_start + shift,
            knot_end: self.knot_end + shift,
            ..self.clone()
        }
    }
}

/// Linear spline `{1, (w - origin)/scale, (w - κ₁)₊/Δ, …}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplineSpec {
    pub interior_knots: Vec<f64>,
    pub ramp_origin: f64,
    pub ramp_scale: f64,
    /// Divisor applied to every hinge column.
    pub hinge_scale: f64,
}

impl SplineSpec {
    pub fn n_columns(&self) -> usize {
        2 + self.interior_knots.len()
    }
}

/// Knot layouts for all four bases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisSpecs {
    pub alpha: KernelBasisSpec,
    pub u: KernelBasisSpec,
    pub beta: KernelBasisSpec,
    pub sigma: SplineSpec,
}

impl Default for BasisSpecs {
    fn default() -> Self {
        Self {
            alpha: KernelBasisSpec::with_spacing(450.0, 950.0, 10.0),
            u: KernelBasisSpec::with_spacing(450.0, 950.0, 25.0),
            beta: KernelBasisSpec::with_spacing(450.0, 950.0, 100.0),
            sigma: SplineSpec {
                interior_knots: (0..10).map(|i| 475.0 + 50.0 * i as f64).collect(),
                ramp_origin: 450.0,
                ramp_scale: 500.0,
                hinge_scale: 50.0,
            },
        }
    }
}

impl BasisSpecs {
    /// Coarse layout for small desk-scale runs (e.g. a 50-point grid at 10 nm):
    /// (N_α, N_U, N_β, N_σ) = (12, 7, 4, 4).
    pub fn reduced() -> Self {
        Self {
            alpha: KernelBasisSpec::with_spacing(450.0, 950.0, 50.0),
            u: KernelBasisSpec::with_spacing(450.0, 950.0, 100.0),
            beta: KernelBasisSpec::with_spacing(450.0, 950.0, 250.0),
            sigma: SplineSpec {
                interior_knots: vec![575.0, 825.0],
                ramp_origin: 450.0,
                ramp_scale: 500.0,
                hinge_scale: 250.0,
            },
        }
    }
}

/// The four design matrices, each W × N.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisSet {
    pub k_alpha: DMatrix<f64>,
    pub k_u: DMatrix<f64>,
    pub k_beta: DMatrix<f64>,
    pub k_sigma: DMatrix<f64>,
}

impl BasisSet {
    pub fn from_specs(grid: &WavelengthGrid, specs: &BasisSpecs) -> Result<Self> {
        for (name, spec) in [("alpha", &specs.alpha), ("U", &specs.u), ("beta", &specs.beta)] {
            let knots = spec.knots();
            if let (Some(first), Some(last)) = (knots.first(), knots.last()) {
                // A knot one grid step past the end is expected (950 on a grid ending at 949).
                let step = if grid.len() > 1 { grid.values()[1] - grid.values()[0] } else { 0.0 };
                if *first < grid.min() - step || *last > grid.max() + step {
                    log::warn!(
                        "K_{name} knots [{first}, {last}] extend past the grid [{}, {}]; kernels are extrapolated",
                        grid.min(),
                        grid.max()
                    );
                }
            }
        }
        Ok(Self {
            k_alpha: gaussian_kernel_matrix(grid, &specs.alpha)?,
            k_u: gaussian_kernel_matrix(grid, &specs.u)?,
            k_beta: gaussian_kernel_matrix(grid, &specs.beta)?,
            k_sigma: linear_spline_matrix(grid, &specs.sigma)?,
        })
    }

    /// Intercept-only bases (every matrix is a single column of ones).
    pub fn intercept_only(n_wavelengths: usize) -> Self {
        let ones = DMatrix::from_element(n_wavelengths, 1, 1.0);
        Self {
            k_alpha: ones.clone(),
            k_u: ones.clone(),
            k_beta: ones.clone(),
            k_sigma: ones,
        }
    }

    pub fn n_wavelengths(&self) -> usize {
        self.k_alpha.nrows()
    }

    pub fn n_alpha(&self) -> usize {
        self.k_alpha.ncols()
    }

    pub fn n_u(&self) -> usize {
        self.k_u.ncols()
    }

    pub fn n_beta(&self) -> usize {
        self.k_beta.ncols()
    }

    pub fn n_sigma(&self) -> usize {
        self.k_sigma.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.n_wavelengths();
        for (name, m) in [("K_U", &self.k_u), ("K_beta", &self.k_beta), ("K_sigma", &self.k_sigma)] {
            if m.nrows() != w {
                return Err(Error::dim("basis rows", w, format!("{name} has {}", m.nrows())));
            }
        }
        Ok(())
    }
}

pub fn gaussian_kernel_matrix(grid: &WavelengthGrid, spec: &KernelBasisSpec) -> Result<DMatrix<f64>> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty wavelength grid".into()));
    }
    if !(spec.bandwidth > 0.0) {
        return Err(Error::InvalidInput(format!("kernel bandwidth must be positive, got {}", spec.bandwidth)));
    }
    let knots = spec.knots();
    if knots.is_empty() {
        return Err(Error::InvalidInput("kernel basis has no knots".into()));
    }
    let offset = usize::from(spec.include_intercept);
    let two_h2 = 2.0 * spec.bandwidth * spec.bandwidth;
    Ok(DMatrix::from_fn(grid.len(), knots.len() + offset, |i, j| {
        if j < offset {
            1.0
        } else {
            let d = grid.values()[i] - knots[j - offset];
            (-d * d / two_h2).exp()
        }
    }))
}

pub fn linear_spline_matrix(grid: &WavelengthGrid, spec: &SplineSpec) -> Result<DMatrix<f64>> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty wavelength grid".into()));
    }
    if spec.interior_knots.windows(2).any(|k| k[1] <= k[0]) {
        return Err(Error::InvalidInput("spline knots must be strictly increasing".into()));
    }
    if let Some(k) = spec.interior_knots.iter().find(|&&k| k <= grid.min() || k >= grid.max()) {
        return Err(Error::InvalidInput(format!(
            "spline knot {k} lies outside the grid interior ({}, {})",
            grid.min(),
            grid.max()
        )));
    }
    if !(spec.ramp_scale > 0.0) || !(spec.hinge_scale > 0.0) {
        return Err(Error::InvalidInput("spline scales must be positive".into()));
    }
    Ok(DMatrix::from_fn(grid.len(), spec.n_columns(), |i, j| {
        let w = grid.values()[i];
        match j {
            0 => 1.0,
            1 => (w - spec.ramp_origin) / spec.ramp_scale,
            _ => (w - spec.interior_knots[j - 2]).max(0.0) / spec.hinge_scale,
        }
    }))
}

/// The standard layout on `grid`: (N_α, N_U, N_β, N_σ) = (52, 22, 7, 12).
pub fn default_bases(grid: &WavelengthGrid) -> Result<BasisSet> {
    BasisSet::from_specs(grid, &BasisSpecs::default())
}

fn knot_label(prefix: char, k: f64) -> String {
    if k.fract() == 0.0 {
        format!("{prefix}{}", k as i64)
    } else {
        format!("{prefix}{k}")
    }
}

pub fn kernel_column_names(spec: &KernelBasisSpec) -> Vec<String> {
    let mut names = Vec::new();
    if spec.include_intercept {
        names.push("intercept".to_string());
    }
    names.extend(spec.knots().into_iter().map(|k| knot_label('k', k)));
    names
}

pub fn spline_column_names(spec: &SplineSpec) -> Vec<String> {
    let mut names = vec!["intercept".to_string(), "linear".to_string()];
    names.extend(spec.interior_knots.iter().map(|&k| knot_label('h', k)));
    names
}

/// Write a basis matrix as CSV: one row per wavelength, one column per basis function.
pub fn write_basis_csv<W: Write>(
    mut out: W,
    grid: &WavelengthGrid,
    matrix: &DMatrix<f64>,
    column_names: &[String],
) -> Result<()> {
    if matrix.ncols() != column_names.len() || matrix.nrows() != grid.len() {
        return Err(Error::dim(
            "basis csv",
            format!("{}x{}", grid.len(), column_names.len()),
            format!("{}x{}", matrix.nrows(), matrix.ncols()),
        ));
    }
    write!(out, "wavelength")?;
    for name in column_names {
        write!(out, ",{name}")?;
    }
    writeln!(out)?;
    for (i, w) in grid.values().iter().enumerate() {
        write!(out, "{w}")?;
        for j in 0..matrix.ncols() {
            write!(out, ",{}", matrix[(i, j)])?;
        }
        writeln!(out)?;
    }
    Ok(())
}
