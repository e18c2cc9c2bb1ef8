//! Compactly supported radial smoothing kernel and truncated convolution.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Grid2D, ScalarField2D};

/// Radial bump `w_δ(r) = δ⁻² w(r/δ)` with `w(s) = (4/π)(1 − s²)³` on `s < 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mollifier {
    delta: f64,
}

impl Mollifier {
    pub fn new(delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::Config(format!("mollifier radius must be positive, got {delta}")));
        }
        Ok(Self { delta })
    }

    #[inline]
    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Unit-radius profile; integrates to one over the plane.
    #[inline]
    pub fn profile(s: f64) -> f64 {
        if s >= 1.0 {
            0.0
        } else {
            let a = 1.0 - s * s;
            4.0 / PI * a * a * a
        }
    }

    /// Continuous kernel value at distance `r`.
    #[inline]
    pub fn value(&self, r: f64) -> f64 {
        Self::profile(r / self.delta) / (self.delta * self.delta)
    }

    /// Discrete kernel on `grid`, normalized so the weights times the cell
    /// area sum to one.
    pub fn stencil(&self, grid: &Grid2D) -> Result<KernelStencil> {
        if self.delta < 2.0 * grid.max_spacing() {
            return Err(Error::Config(format!(
                "mollifier radius {} is below twice the grid spacing {}",
                self.delta,
                grid.max_spacing()
            )));
        }
        let rx = (self.delta / grid.dx).floor() as isize;
        let ry = (self.delta / grid.dy).floor() as isize;
        let mut taps = Vec::new();
        for l in -ry..=ry {
            for k in -rx..=rx {
                let r = ((k as f64 * grid.dx).powi(2) + (l as f64 * grid.dy).powi(2)).sqrt();
                let w = self.value(r);
                if w > 0.0 {
                    taps.push((k, l, w));
                }
            }
        }
        let total: f64 = taps.iter().map(|t| t.2).sum::<f64>() * grid.dx * grid.dy;
        for t in &mut taps {
            t.2 /= total;
        }
        Ok(KernelStencil { taps })
    }
}

/// Offsets `(di, dj)` and weights of a discretized kernel.
#[derive(Debug, Clone)]
pub struct KernelStencil {
    pub(crate) taps: Vec<(isize, isize, f64)>,
}

impl KernelStencil {
    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    /// Sum of the weights times the cell area (one by construction).
    pub fn mass(&self, grid: &Grid2D) -> f64 {
        self.taps.iter().map(|t| t.2).sum::<f64>() * grid.dx * grid.dy
    }

    /// Weighted averages of several node arrays at once: for every node `x`
    /// returns `Σ_y ω_y k(x−y) f(y) / Σ_y ω_y k(x−y)` per input, with the sum
    /// restricted to nodes inside the grid (`ω` are the trapezoid weights).
    pub(crate) fn average<const N: usize>(&self, grid: &Grid2D, inputs: [&[f64]; N]) -> [Vec<f64>; N] {
        let rows: Vec<[f64; N]> = (0..grid.len())
            .into_par_iter()
            .map(|k| {
                let (i, j) = ((k % grid.nx) as isize, (k / grid.nx) as isize);
                let mut acc = [0.0; N];
                let mut norm = 0.0;
                for &(di, dj, w) in &self.taps {
                    let (a, b) = (i + di, j + dj);
                    if a < 0 || b < 0 || a >= grid.nx as isize || b >= grid.ny as isize {
                        continue;
                    }
                    let (a, b) = (a as usize, b as usize);
                    let ww = w * grid.weight(a, b);
                    let idx = grid.index(a, b);
                    norm += ww;
                    for (s, f) in acc.iter_mut().zip(inputs.iter()) {
                        *s += ww * f[idx];
                    }
                }
                acc.map(|s| s / norm)
            })
            .collect();
        std::array::from_fn(|n| rows.iter().map(|r| r[n]).collect())
    }
}

/// Convolves `field` with the kernel, truncating to the grid and
/// renormalizing so constants are preserved up to the boundary.
pub fn mollify(field: &ScalarField2D, w: &Mollifier) -> Result<ScalarField2D> {
    let grid = *field.grid();
    let stencil = w.stencil(&grid)?;
    let [out] = stencil.average(&grid, [field.values()]);
    Ok(ScalarField2D::from_vec_unchecked(grid, out))
}
