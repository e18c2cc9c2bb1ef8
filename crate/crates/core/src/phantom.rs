//! Synthetic data: Gaussian random optical index, inclusion shear-modulus
//! maps and compatible Dirichlet traces.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlannerScalar;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid2D, ScalarField2D, VectorField2D};

/// Stationary Gaussian field with covariance `σ² exp(−r²/ℓ²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianProcessSpec {
    pub correlation_length: f64,
    pub mean: f64,
    pub std: f64,
    pub seed: u64,
}

impl Default for GaussianProcessSpec {
    fn default() -> Self {
        Self {
            correlation_length: 0.05,
            mean: 14.4,
            std: 1.5,
            seed: 6,
        }
    }
}

impl GaussianProcessSpec {
    pub fn validate(&self, grid: &Grid2D) -> Result<()> {
        if !(self.correlation_length > 0.0) {
            return Err(Error::Config("correlation length must be positive".into()));
        }
        if self.correlation_length < 2.0 * grid.max_spacing() {
            return Err(Error::Config(format!(
                "correlation length {} is not resolvable at grid spacing {}",
                self.correlation_length,
                grid.max_spacing()
            )));
        }
        if !(self.std >= 0.0) || !self.mean.is_finite() || !self.std.is_finite() {
            return Err(Error::Config("mean must be finite and std non-negative".into()));
        }
        Ok(())
    }
}

fn fft2(buf: &mut [Complex64], n0: usize, n1: usize, inverse: bool) {
    let mut planner = FftPlannerScalar::<f64>::new();
    let (f0, f1) = if inverse {
        (planner.plan_fft_inverse(n0), planner.plan_fft_inverse(n1))
    } else {
        (planner.plan_fft_forward(n0), planner.plan_fft_forward(n1))
    };
    // rows are contiguous (length n0); columns are gathered
    f0.process(buf);
    let mut col = vec![Complex64::new(0.0, 0.0); n1];
    for i in 0..n0 {
        for (j, c) in col.iter_mut().enumerate() {
            *c = buf[j * n0 + i];
        }
        f1.process(&mut col);
        for (j, c) in col.iter().enumerate() {
            buf[j * n0 + i] = *c;
        }
    }
}

#[inline]
fn angular_frequency(m: usize, n: usize, h: f64) -> f64 {
    let signed = if m <= n / 2 { m as f64 } else { m as f64 - n as f64 };
    2.0 * std::f64::consts::PI * signed / (n as f64 * h)
}

/// Spectrally filtered white noise, rescaled to the requested sample mean
/// and standard deviation. Bit-identical for identical `(grid, spec)`.
pub fn generate_epsilon(grid: &Grid2D, spec: &GaussianProcessSpec) -> Result<ScalarField2D> {
    spec.validate(grid)?;
    if spec.std == 0.0 {
        return Ok(ScalarField2D::constant(*grid, spec.mean));
    }
    let ell = spec.correlation_length;
    // pad so the periodic wrap-around correlation is below e^-16
    let pad_x = (4.0 * ell / grid.dx).ceil() as usize;
    let pad_y = (4.0 * ell / grid.dy).ceil() as usize;
    let (n0, n1) = (grid.nx + pad_x, grid.ny + pad_y);

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut buf: Vec<Complex64> = (0..n0 * n1)
        .map(|_| Complex64::new(StandardNormal.sample(&mut rng), 0.0))
        .collect();
    fft2(&mut buf, n0, n1, false);
    for j in 0..n1 {
        let ky = angular_frequency(j, n1, grid.dy);
        for i in 0..n0 {
            let kx = angular_frequency(i, n0, grid.dx);
            let filter = (-ell * ell * (kx * kx + ky * ky) / 8.0).exp();
            buf[j * n0 + i] *= filter;
        }
    }
    fft2(&mut buf, n0, n1, true);

    let raw: Vec<f64> = (0..grid.ny)
        .flat_map(|j| (0..grid.nx).map(move |i| (i, j)))
        .map(|(i, j)| buf[j * n0 + i].re)
        .collect();
    let n = raw.len() as f64;
    let m = raw.iter().sum::<f64>() / n;
    let sd = (raw.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
    let values = raw
        .iter()
        .map(|v| spec.mean + spec.std * (v - m) / sd)
        .collect();
    ScalarField2D::new(*grid, values)
}

/// One circular inclusion with a `tanh` edge of the given width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inclusion {
    pub center: [f64; 2],
    pub radius: f64,
    pub mu: f64,
    #[serde(default)]
    pub edge_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InclusionSpec {
    pub background_mu: f64,
    pub inclusions: Vec<Inclusion>,
}

impl Default for InclusionSpec {
    fn default() -> Self {
        Self {
            background_mu: 1.0,
            inclusions: vec![Inclusion {
                center: [0.55, 0.45],
                radius: 0.2,
                mu: 5.0,
                edge_width: 0.04,
            }],
        }
    }
}

impl InclusionSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.background_mu > 0.0 && self.background_mu.is_finite()) {
            return Err(Error::Config("background shear modulus must be positive".into()));
        }
        for inc in &self.inclusions {
            if !(inc.mu > 0.0 && inc.mu.is_finite()) {
                return Err(Error::Config(format!("inclusion shear modulus {} must be positive", inc.mu)));
            }
            if !(inc.radius > 0.0) || !(inc.edge_width >= 0.0) {
                return Err(Error::Config("inclusion radius must be positive and edge width non-negative".into()));
            }
        }
        Ok(())
    }

    pub fn min_mu(&self) -> f64 {
        self.inclusions.iter().map(|i| i.mu).fold(self.background_mu, f64::min)
    }

    pub fn max_mu(&self) -> f64 {
        self.inclusions.iter().map(|i| i.mu).fold(self.background_mu, f64::max)
    }
}

/// Shear-modulus map: background plus smoothed circular inclusions. Where
/// inclusions overlap the one deviating most from the background wins.
pub fn generate_mu(grid: &Grid2D, spec: &InclusionSpec) -> Result<ScalarField2D> {
    spec.validate()?;
    let bg = spec.background_mu;
    Ok(ScalarField2D::from_fn(*grid, |x, y| {
        let mut value = bg;
        for inc in &spec.inclusions {
            let r = (x - inc.center[0]).hypot(y - inc.center[1]);
            let s = if inc.edge_width > 0.0 {
                0.5 * (1.0 - ((r - inc.radius) / inc.edge_width).tanh())
            } else if r <= inc.radius {
                1.0
            } else {
                0.0
            };
            let v = bg + (inc.mu - bg) * s;
            if (v - bg).abs() > (value - bg).abs() {
                value = v;
            }
        }
        value
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMode {
    UniaxialCompression,
    Shear,
    CustomTrace,
}

/// Dirichlet data on the rectangle's boundary nodes. Interior entries of
/// `trace` are zero and never read.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryCondition {
    pub mode: BoundaryMode,
    pub amplitude: f64,
    trace: VectorField2D,
    /// Net outward flux of the raw trace before projection.
    pub projected_flux: f64,
}

/// Per-node coefficient vectors `a_k` with `∫∂Ω f·ν ≈ Σ_k f_k · a_k`
/// (trapezoid rule on each edge).
fn flux_coefficients(grid: &Grid2D) -> Vec<(usize, [f64; 2])> {
    let (nx, ny) = (grid.nx, grid.ny);
    let mut a = vec![[0.0; 2]; grid.len()];
    for i in 0..nx - 1 {
        for ii in [i, i + 1] {
            a[grid.index(ii, 0)][1] -= 0.5 * grid.dx;
            a[grid.index(ii, ny - 1)][1] += 0.5 * grid.dx;
        }
    }
    for j in 0..ny - 1 {
        for jj in [j, j + 1] {
            a[grid.index(0, jj)][0] -= 0.5 * grid.dy;
            a[grid.index(nx - 1, jj)][0] += 0.5 * grid.dy;
        }
    }
    boundary_nodes(grid).map(|(i, j)| (grid.index(i, j), a[grid.index(i, j)])).collect()
}

/// Boundary nodes in a fixed order: bottom, top, then left and right edges
/// without their corners.
pub fn boundary_nodes(grid: &Grid2D) -> impl Iterator<Item = (usize, usize)> + '_ {
    let (nx, ny) = (grid.nx, grid.ny);
    (0..nx)
        .map(|i| (i, 0))
        .chain((0..nx).map(move |i| (i, ny - 1)))
        .chain((1..ny - 1).map(|j| (0, j)))
        .chain((1..ny - 1).map(move |j| (nx - 1, j)))
}

impl BoundaryCondition {
    /// Wraps an arbitrary trace, projecting out its net flux.
    pub fn custom(trace: VectorField2D) -> Result<Self> {
        Self::from_raw(BoundaryMode::CustomTrace, trace.max_norm(), trace, false)
    }

    fn from_raw(mode: BoundaryMode, amplitude: f64, raw: VectorField2D, rescale: bool) -> Result<Self> {
        let grid = *raw.grid();
        let coeffs = flux_coefficients(&grid);
        let mut fx = vec![0.0; grid.len()];
        let mut fy = vec![0.0; grid.len()];
        for &(k, _) in &coeffs {
            fx[k] = raw.x().values()[k];
            fy[k] = raw.y().values()[k];
        }
        let flux: f64 = coeffs.iter().map(|&(k, a)| fx[k] * a[0] + fy[k] * a[1]).sum();
        let norm2: f64 = coeffs.iter().map(|(_, a)| a[0] * a[0] + a[1] * a[1]).sum();
        let c = flux / norm2;
        for &(k, a) in &coeffs {
            fx[k] -= c * a[0];
            fy[k] -= c * a[1];
        }
        if rescale {
            let m = coeffs.iter().fold(0.0f64, |m, &(k, _)| m.max(fx[k].hypot(fy[k])));
            if m > 0.0 {
                let s = amplitude.abs() / m;
                for &(k, _) in &coeffs {
                    fx[k] *= s;
                    fy[k] *= s;
                }
            }
        }
        let trace = VectorField2D::new(ScalarField2D::new(grid, fx)?, ScalarField2D::new(grid, fy)?)?;
        Ok(Self {
            mode,
            amplitude,
            trace,
            projected_flux: flux,
        })
    }

    pub fn grid(&self) -> &Grid2D {
        self.trace.grid()
    }

    pub fn trace(&self) -> &VectorField2D {
        &self.trace
    }

    #[inline]
    pub fn value(&self, i: usize, j: usize) -> [f64; 2] {
        self.trace.at(i, j)
    }

    /// Homogeneous data on `grid`.
    pub fn zero(grid: &Grid2D) -> Self {
        Self {
            mode: BoundaryMode::CustomTrace,
            amplitude: 0.0,
            trace: VectorField2D::zeros(*grid),
            projected_flux: 0.0,
        }
    }

    /// Trapezoidal boundary quadrature of `f·ν`.
    pub fn flux(&self) -> f64 {
        flux_coefficients(self.grid())
            .iter()
            .map(|&(k, a)| self.trace.x().values()[k] * a[0] + self.trace.y().values()[k] * a[1])
            .sum()
    }

    pub fn max_magnitude(&self) -> f64 {
        boundary_nodes(self.grid())
            .map(|(i, j)| {
                let v = self.value(i, j);
                v[0].hypot(v[1])
            })
            .fold(0.0, f64::max)
    }

    /// Check used by the solvers: net flux within `1e-10` of the trace scale.
    pub fn check_compatible(&self) -> Result<()> {
        let scale = self.max_magnitude().max(1e-300) * (self.grid().width() + self.grid().height());
        let flux = self.flux();
        if flux.abs() > 1e-10 * scale.max(1.0) {
            return Err(Error::Precondition(format!("boundary trace has net flux {flux:e}")));
        }
        Ok(())
    }

    pub fn to_record(&self) -> BoundaryRecord {
        let g = *self.grid();
        BoundaryRecord {
            mode: self.mode,
            amplitude: self.amplitude,
            projected_flux: self.projected_flux,
            grid: g,
            nodes: boundary_nodes(&g)
                .map(|(i, j)| {
                    let v = self.value(i, j);
                    BoundaryNode { i, j, fx: v[0], fy: v[1] }
                })
                .collect(),
        }
    }

    pub fn from_record(rec: &BoundaryRecord) -> Result<Self> {
        let g = rec.grid;
        let mut fx = vec![0.0; g.len()];
        let mut fy = vec![0.0; g.len()];
        for n in &rec.nodes {
            if n.i >= g.nx || n.j >= g.ny || !g.is_boundary(n.i, n.j) {
                return Err(Error::Config(format!("trace node ({}, {}) is not on the boundary", n.i, n.j)));
            }
            fx[g.index(n.i, n.j)] = n.fx;
            fy[g.index(n.i, n.j)] = n.fy;
        }
        let bc = Self {
            mode: rec.mode,
            amplitude: rec.amplitude,
            trace: VectorField2D::new(ScalarField2D::new(g, fx)?, ScalarField2D::new(g, fy)?)?,
            projected_flux: rec.projected_flux,
        };
        bc.check_compatible()?;
        Ok(bc)
    }
}

/// Serialized form of a [`BoundaryCondition`] (`bc.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryRecord {
    pub mode: BoundaryMode,
    pub amplitude: f64,
    pub projected_flux: f64,
    pub grid: Grid2D,
    pub nodes: Vec<BoundaryNode>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryNode {
    pub i: usize,
    pub j: usize,
    pub fx: f64,
    pub fy: f64,
}

/// Builds the Dirichlet trace for a loading mode.
///
/// Uniaxial compression pushes the top edge down by `amplitude` over a fixed
/// bottom with linearly varying sides; the net inflow is removed by an
/// orthogonal projection along the flux functional and the result rescaled
/// so that `max |f| = amplitude`. Shear moves the top edge sideways.
pub fn make_boundary_condition(grid: &Grid2D, mode: BoundaryMode, amplitude: f64) -> Result<BoundaryCondition> {
    if !amplitude.is_finite() {
        return Err(Error::Config("boundary amplitude must be finite".into()));
    }
    let ly = grid.height();
    let y0 = grid.y0;
    let raw = match mode {
        BoundaryMode::UniaxialCompression => {
            VectorField2D::from_fn(*grid, |_, y| [0.0, -amplitude * (y - y0) / ly])
        }
        BoundaryMode::Shear => VectorField2D::from_fn(*grid, |_, y| [amplitude * (y - y0) / ly, 0.0]),
        BoundaryMode::CustomTrace => {
            return Err(Error::Config(
                "custom traces must be supplied with BoundaryCondition::custom".into(),
            ))
        }
    };
    BoundaryCondition::from_raw(mode, amplitude, raw, true)
}
