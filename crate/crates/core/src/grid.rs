//! Node-centered uniform grids and the scalar/vector fields sampled on them.
//!
//! Values are stored row-major with `y` as the outer index: the sample at
//! node `(i, j)` (position `(x0 + i·dx, y0 + j·dy)`) lives at `j·nx + i`.
//! Integrals use the composite trapezoidal rule over the nodes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Axis, Error, Result};

/// A rectangle `[x0, x0+(nx−1)dx] × [y0, y0+(ny−1)dy]` sampled at its nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    pub nx: usize,
    pub ny: usize,
    pub x0: f64,
    pub y0: f64,
    pub dx: f64,
    pub dy: f64,
}

impl Grid2D {
    pub fn new(nx: usize, ny: usize, x0: f64, y0: f64, dx: f64, dy: f64) -> Result<Self> {
        if nx < 4 || ny < 4 {
            return Err(Error::Config(format!(
                "grid needs at least 4 nodes per axis, got {nx}x{ny}"
            )));
        }
        if !(dx > 0.0 && dy > 0.0 && dx.is_finite() && dy.is_finite()) {
            return Err(Error::Config(format!(
                "grid spacings must be positive, got dx={dx}, dy={dy}"
            )));
        }
        if !(x0.is_finite() && y0.is_finite()) {
            return Err(Error::Config("grid origin must be finite".into()));
        }
        Ok(Self {
            nx,
            ny,
            x0,
            y0,
            dx,
            dy,
        })
    }

    /// `n × n` nodes covering `[0, 1]²`.
    pub fn unit_square(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Config(format!("grid size {n} too small")));
        }
        let h = 1.0 / (n - 1) as f64;
        Self::new(n, n, 0.0, 0.0, h, h)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.dx
    }

    #[inline]
    pub fn y(&self, j: usize) -> f64 {
        self.y0 + j as f64 * self.dy
    }

    #[inline]
    pub fn x_max(&self) -> f64 {
        self.x(self.nx - 1)
    }

    #[inline]
    pub fn y_max(&self) -> f64 {
        self.y(self.ny - 1)
    }

    pub fn width(&self) -> f64 {
        (self.nx - 1) as f64 * self.dx
    }

    pub fn height(&self) -> f64 {
        (self.ny - 1) as f64 * self.dy
    }

    #[inline]
    pub fn max_spacing(&self) -> f64 {
        self.dx.max(self.dy)
    }

    #[inline]
    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i + 1 == self.nx || j + 1 == self.ny
    }

    /// Trapezoidal quadrature weight of node `(i, j)`.
    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        let wx = if i == 0 || i + 1 == self.nx { 0.5 } else { 1.0 };
        let wy = if j == 0 || j + 1 == self.ny { 0.5 } else { 1.0 };
        wx * wy * self.dx * self.dy
    }

    /// Quadrature weights for every node, in storage order.
    pub fn weights(&self) -> Vec<f64> {
        (0..self.ny)
            .flat_map(|j| (0..self.nx).map(move |i| (i, j)))
            .map(|(i, j)| self.weight(i, j))
            .collect()
    }

    /// Distance from `(x, y)` to the nearest edge of the rectangle.
    pub fn distance_to_boundary(&self, x: f64, y: f64) -> f64 {
        (x - self.x0)
            .min(self.x_max() - x)
            .min(y - self.y0)
            .min(self.y_max() - y)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let sx = 1e-9 * self.dx;
        let sy = 1e-9 * self.dy;
        x >= self.x0 - sx && x <= self.x_max() + sx && y >= self.y0 - sy && y <= self.y_max() + sy
    }

    /// Nearest point of the rectangle.
    pub fn clamp(&self, x: f64, y: f64) -> (f64, f64) {
        (x.clamp(self.x0, self.x_max()), y.clamp(self.y0, self.y_max()))
    }

    /// Maps a coordinate to `(cell, fraction)` for interpolation; snaps
    /// positions within rounding of a node onto the node.
    fn locate(&self, axis: Axis, v: f64) -> Result<(usize, f64)> {
        let (origin, step, n) = match axis {
            Axis::X => (self.x0, self.dx, self.nx),
            Axis::Y => (self.y0, self.dy, self.ny),
        };
        let hi_idx = (n - 1) as f64;
        let mut f = (v - origin) / step;
        let r = f.round();
        if (f - r).abs() < 1e-9 {
            f = r;
        }
        if !(f >= 0.0 && f <= hi_idx) {
            return Err(Error::Domain {
                axis,
                value: v,
                lo: origin,
                hi: origin + hi_idx * step,
            });
        }
        let cell = (f.floor() as usize).min(n - 2);
        Ok((cell, f - cell as f64))
    }
}

#[inline]
fn catmull_rom_weights(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]
}

#[inline]
fn catmull_rom_derivative_weights(t: f64) -> [f64; 4] {
    let t2 = t * t;
    [
        0.5 * (-3.0 * t2 + 4.0 * t - 1.0),
        0.5 * (9.0 * t2 - 10.0 * t),
        0.5 * (-9.0 * t2 + 8.0 * t + 1.0),
        0.5 * (3.0 * t2 - 2.0 * t),
    ]
}

#[inline]
fn dot4(w: &[f64; 4], v: &[f64; 4]) -> f64 {
    w[0] * v[0] + w[1] * v[1] + w[2] * v[2] + w[3] * v[3]
}

/// Four consecutive samples starting at `cell − 1`, extending past either end
/// by linear extrapolation so that linear data is reproduced exactly.
#[inline]
fn stencil(get: impl Fn(usize) -> f64, cell: usize, n: usize) -> [f64; 4] {
    let a = if cell == 0 {
        2.0 * get(0) - get(1)
    } else {
        get(cell - 1)
    };
    let d = if cell + 2 >= n {
        2.0 * get(n - 1) - get(n - 2)
    } else {
        get(cell + 2)
    };
    [a, get(cell), get(cell + 1), d]
}

/// A real quantity sampled at every node of a [`Grid2D`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField2D {
    grid: Grid2D,
    values: Vec<f64>,
}

impl ScalarField2D {
    pub fn new(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Config(format!(
                "field has {} values but grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Precondition(format!(
                "non-finite value {} at node {}",
                values[k], k
            )));
        }
        Ok(Self { grid, values })
    }

    pub(crate) fn from_vec_unchecked(grid: Grid2D, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self { grid, values }
    }

    pub fn zeros(grid: Grid2D) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: Grid2D, c: f64) -> Self {
        assert!(c.is_finite(), "constant field value must be finite");
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    /// Samples `f(x, y)` at every node.
    ///
    /// Panics if `f` returns a non-finite value.
    pub fn from_fn(grid: Grid2D, f: impl Fn(f64, f64) -> f64 + Sync) -> Self {
        let values: Vec<f64> = (0..grid.len())
            .into_par_iter()
            .map(|k| f(grid.x(k % grid.nx), grid.y(k / grid.nx)))
            .collect();
        Self::new(grid, values).expect("from_fn produced a non-finite value")
    }

    #[inline]
    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    /// Applies `f` node-wise; panics on non-finite output.
    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync) -> Self {
        let values = self.values.par_iter().map(|&v| f(v)).collect();
        Self::new(self.grid, values).expect("map produced a non-finite value")
    }

    /// Node-wise combination of two fields on the same grid.
    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64 + Sync) -> Self {
        assert_eq!(self.grid, other.grid, "fields live on different grids");
        let values = self
            .values
            .par_iter()
            .zip(other.values.par_iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::new(self.grid, values).expect("zip_map produced a non-finite value")
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Arithmetic mean of the node values.
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Trapezoidal integral over the rectangle.
    pub fn integral(&self) -> f64 {
        let g = &self.grid;
        let mut s = 0.0;
        for j in 0..g.ny {
            for i in 0..g.nx {
                s += g.weight(i, j) * self.values[g.index(i, j)];
            }
        }
        s
    }

    /// Trapezoidal `L²` inner product.
    pub fn dot(&self, other: &Self) -> f64 {
        assert_eq!(self.grid, other.grid, "fields live on different grids");
        let g = &self.grid;
        let mut s = 0.0;
        for j in 0..g.ny {
            for i in 0..g.nx {
                let k = g.index(i, j);
                s += g.weight(i, j) * self.values[k] * other.values[k];
            }
        }
        s
    }

    pub fn norm_l2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Catmull-Rom bicubic interpolant at `(x, y)`.
    ///
    /// Reproduces node values exactly and linear data everywhere; the
    /// interpolant is C¹.
    pub fn sample(&self, x: f64, y: f64) -> Result<f64> {
        let g = &self.grid;
        let (ci, tx) = g.locate(Axis::X, x)?;
        let (cj, ty) = g.locate(Axis::Y, y)?;
        let wx = catmull_rom_weights(tx);
        let wy = catmull_rom_weights(ty);
        let row = |j: usize| dot4(&wx, &stencil(|i| self.values[g.index(i, j)], ci, g.nx));
        Ok(dot4(&wy, &stencil(row, cj, g.ny)))
    }

    /// Interpolated value together with the exact gradient of the interpolant.
    pub fn sample_with_gradient(&self, x: f64, y: f64) -> Result<(f64, [f64; 2])> {
        let g = &self.grid;
        let (ci, tx) = g.locate(Axis::X, x)?;
        let (cj, ty) = g.locate(Axis::Y, y)?;
        let wx = catmull_rom_weights(tx);
        let wy = catmull_rom_weights(ty);
        let dwx = catmull_rom_derivative_weights(tx);
        let dwy = catmull_rom_derivative_weights(ty);
        let row_v = |j: usize| dot4(&wx, &stencil(|i| self.values[g.index(i, j)], ci, g.nx));
        let row_d = |j: usize| dot4(&dwx, &stencil(|i| self.values[g.index(i, j)], ci, g.nx));
        let rv = stencil(row_v, cj, g.ny);
        let rd = stencil(row_d, cj, g.ny);
        let value = dot4(&wy, &rv);
        let gx = dot4(&wy, &rd) / g.dx;
        let gy = dot4(&dwy, &rv) / g.dy;
        Ok((value, [gx, gy]))
    }

    /// Second-order finite-difference gradient: central in the interior,
    /// one-sided three-point stencils on the boundary.
    pub fn gradient(&self) -> VectorField2D {
        let g = self.grid;
        let v = &self.values;
        let gx: Vec<f64> = (0..g.len())
            .into_par_iter()
            .map(|k| {
                let (i, j) = (k % g.nx, k / g.nx);
                diff_along(|m| v[g.index(m, j)], i, g.nx, g.dx)
            })
            .collect();
        let gy: Vec<f64> = (0..g.len())
            .into_par_iter()
            .map(|k| {
                let (i, j) = (k % g.nx, k / g.nx);
                diff_along(|m| v[g.index(i, m)], j, g.ny, g.dy)
            })
            .collect();
        VectorField2D {
            x: ScalarField2D::from_vec_unchecked(g, gx),
            y: ScalarField2D::from_vec_unchecked(g, gy),
        }
    }
}

#[inline]
fn diff_along(f: impl Fn(usize) -> f64, m: usize, n: usize, h: f64) -> f64 {
    if m == 0 {
        (-3.0 * f(0) + 4.0 * f(1) - f(2)) / (2.0 * h)
    } else if m + 1 == n {
        (3.0 * f(n - 1) - 4.0 * f(n - 2) + f(n - 3)) / (2.0 * h)
    } else {
        (f(m + 1) - f(m - 1)) / (2.0 * h)
    }
}

/// A 2-vector quantity sampled on a grid, stored as two scalar components.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField2D {
    x: ScalarField2D,
    y: ScalarField2D,
}

impl VectorField2D {
    pub fn new(x: ScalarField2D, y: ScalarField2D) -> Result<Self> {
        if x.grid != y.grid {
            return Err(Error::Config(
                "vector field components live on different grids".into(),
            ));
        }
        Ok(Self { x, y })
    }

    pub fn zeros(grid: Grid2D) -> Self {
        Self {
            x: ScalarField2D::zeros(grid),
            y: ScalarField2D::zeros(grid),
        }
    }

    pub fn from_fn(grid: Grid2D, f: impl Fn(f64, f64) -> [f64; 2] + Sync) -> Self {
        Self {
            x: ScalarField2D::from_fn(grid, |x, y| f(x, y)[0]),
            y: ScalarField2D::from_fn(grid, |x, y| f(x, y)[1]),
        }
    }

    #[inline]
    pub fn grid(&self) -> &Grid2D {
        &self.x.grid
    }

    #[inline]
    pub fn x(&self) -> &ScalarField2D {
        &self.x
    }

    #[inline]
    pub fn y(&self) -> &ScalarField2D {
        &self.y
    }

    pub fn into_components(self) -> (ScalarField2D, ScalarField2D) {
        (self.x, self.y)
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> [f64; 2] {
        [self.x.at(i, j), self.y.at(i, j)]
    }

    pub fn sample(&self, px: f64, py: f64) -> Result<[f64; 2]> {
        Ok([self.x.sample(px, py)?, self.y.sample(px, py)?])
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            x: self.x.map(|v| s * v),
            y: self.y.map(|v| s * v),
        }
    }

    /// `self + s·other`.
    pub fn axpy(&self, s: f64, other: &Self) -> Self {
        Self {
            x: self.x.zip_map(&other.x, |a, b| a + s * b),
            y: self.y.zip_map(&other.y, |a, b| a + s * b),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.axpy(-1.0, other)
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.x.dot(&other.x) + self.y.dot(&other.y)
    }

    pub fn norm_l2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Largest pointwise Euclidean length.
    pub fn max_norm(&self) -> f64 {
        self.x
            .values
            .iter()
            .zip(&self.y.values)
            .fold(0.0, |m, (a, b)| m.max(a.hypot(*b)))
    }

    /// Largest entry magnitude of the finite-difference Jacobian.
    pub fn max_jacobian_entry(&self) -> f64 {
        let gx = self.x.gradient();
        let gy = self.y.gradient();
        [gx.x.max_abs(), gx.y.max_abs(), gy.x.max_abs(), gy.y.max_abs()]
            .into_iter()
            .fold(0.0, f64::max)
    }

    /// Divergence with the same stencils as [`ScalarField2D::gradient`].
    pub fn divergence(&self) -> ScalarField2D {
        let g = *self.grid();
        let (ux, uy) = (&self.x.values, &self.y.values);
        let values = (0..g.len())
            .into_par_iter()
            .map(|k| {
                let (i, j) = (k % g.nx, k / g.nx);
                diff_along(|m| ux[g.index(m, j)], i, g.nx, g.dx)
                    + diff_along(|m| uy[g.index(i, m)], j, g.ny, g.dy)
            })
            .collect();
        ScalarField2D::from_vec_unchecked(g, values)
    }
}
