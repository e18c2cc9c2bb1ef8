//! Displacement estimation from an image pair: mollified structure matrix,
//! closed-form local least-squares initializer and descent on the
//! registration discrepancy.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid2D, ScalarField2D, VectorField2D};
use crate::mollifier::Mollifier;
use crate::report::{DescentReport, Termination};
use crate::warp::check_contractive;

/// Condition number stored where the smaller eigenvalue is numerically zero.
pub const SINGULAR_CONDITION: f64 = 1e16;

/// Per-pixel `M(x) = ∫ w_δ(|x − y|) ∇ε ∇εᵀ dy`, normalized by the kernel
/// mass inside the grid so that truncated boundary kernels stay comparable.
#[derive(Debug, Clone)]
pub struct StructureMatrixField {
    pub grid: Grid2D,
    pub m_xx: ScalarField2D,
    pub m_xy: ScalarField2D,
    pub m_yy: ScalarField2D,
    pub condition_number: ScalarField2D,
    pub delta: f64,
}

/// Eigenvalues `(λ_min, λ_max)` of a symmetric 2×2 matrix.
pub fn eigenvalues(a: f64, b: f64, c: f64) -> (f64, f64) {
    let m = 0.5 * (a + c);
    let r = (0.5 * (a - c)).hypot(b);
    (m - r, m + r)
}

/// `λ_max / λ_min`, or [`SINGULAR_CONDITION`] when `λ_min ≤ 1e-14 λ_max`.
pub fn condition_number(a: f64, b: f64, c: f64) -> f64 {
    let (lo, hi) = eigenvalues(a, b, c);
    if hi <= 0.0 || lo <= 1e-14 * hi {
        SINGULAR_CONDITION
    } else {
        (hi / lo).min(SINGULAR_CONDITION)
    }
}

impl StructureMatrixField {
    pub fn at(&self, k: usize) -> [f64; 3] {
        [self.m_xx.values()[k], self.m_xy.values()[k], self.m_yy.values()[k]]
    }

    pub fn is_singular(&self, k: usize) -> bool {
        self.condition_number.values()[k] >= SINGULAR_CONDITION
    }
}

pub fn compute_structure_matrix(epsilon: &ScalarField2D, w: &Mollifier) -> Result<StructureMatrixField> {
    let grid = *epsilon.grid();
    let stencil = w.stencil(&grid)?;
    let g = epsilon.gradient();
    let (gx, gy) = (g.x().values(), g.y().values());
    let xx: Vec<f64> = gx.iter().map(|a| a * a).collect();
    let xy: Vec<f64> = gx.iter().zip(gy).map(|(a, b)| a * b).collect();
    let yy: Vec<f64> = gy.iter().map(|b| b * b).collect();
    let [m_xx, m_xy, m_yy] = stencil.average(&grid, [&xx, &xy, &yy]);
    let cond = (0..grid.len())
        .into_par_iter()
        .map(|k| condition_number(m_xx[k], m_xy[k], m_yy[k]))
        .collect();
    Ok(StructureMatrixField {
        grid,
        m_xx: ScalarField2D::from_vec_unchecked(grid, m_xx),
        m_xy: ScalarField2D::from_vec_unchecked(grid, m_xy),
        m_yy: ScalarField2D::from_vec_unchecked(grid, m_yy),
        condition_number: ScalarField2D::from_vec_unchecked(grid, cond),
        delta: w.delta(),
    })
}

/// Result of [`initial_guess`].
#[derive(Debug, Clone)]
pub struct InitialGuess {
    pub u: VectorField2D,
    /// Pixels where the local system was solved (`cond ≤ cond_max`).
    pub mask: Vec<bool>,
    pub structure: StructureMatrixField,
}

pub const INFILL_SWEEPS: usize = 100;

/// Local least-squares displacement `M(x)⁻¹ ∫ w_δ (ε − ε_u) ∇ε`, with
/// ill-conditioned pixels filled by neighbour diffusion.
pub fn initial_guess(
    epsilon: &ScalarField2D,
    epsilon_u: &ScalarField2D,
    w: &Mollifier,
    cond_max: f64,
) -> Result<InitialGuess> {
    let grid = *epsilon.grid();
    if epsilon_u.grid() != &grid {
        return Err(Error::Precondition("image grids differ".into()));
    }
    let structure = compute_structure_matrix(epsilon, w)?;
    let stencil = w.stencil(&grid)?;
    let g = epsilon.gradient();
    let d: Vec<f64> = epsilon.values().iter().zip(epsilon_u.values()).map(|(a, b)| a - b).collect();
    let bx: Vec<f64> = d.iter().zip(g.x().values()).map(|(d, g)| d * g).collect();
    let by: Vec<f64> = d.iter().zip(g.y().values()).map(|(d, g)| d * g).collect();
    let [bx, by] = stencil.average(&grid, [&bx, &by]);
    let mask: Vec<bool> = structure
        .condition_number
        .values()
        .iter()
        .map(|&c| c <= cond_max)
        .collect();
    if !mask.iter().any(|&m| m) {
        let c = &structure.condition_number;
        return Err(Error::Estimation(format!(
            "every pixel exceeds cond_max = {cond_max} (condition numbers in [{}, {}])",
            c.min(),
            c.max()
        )));
    }
    let mut ux = vec![0.0; grid.len()];
    let mut uy = vec![0.0; grid.len()];
    for k in 0..grid.len() {
        if mask[k] {
            let [a, b, c] = structure.at(k);
            let det = a * c - b * b;
            ux[k] = (c * bx[k] - b * by[k]) / det;
            uy[k] = (a * by[k] - b * bx[k]) / det;
        }
    }
    infill(&grid, &mask, &mut ux);
    infill(&grid, &mask, &mut uy);
    Ok(InitialGuess {
        u: VectorField2D::new(
            ScalarField2D::from_vec_unchecked(grid, ux),
            ScalarField2D::from_vec_unchecked(grid, uy),
        )?,
        mask,
        structure,
    })
}

/// Jacobi sweeps of 5-point averaging over known neighbours; pixels still
/// unreached after [`INFILL_SWEEPS`] are set to zero.
fn infill(grid: &Grid2D, mask: &[bool], v: &mut [f64]) {
    let mut known = mask.to_vec();
    if known.iter().all(|&k| k) {
        return;
    }
    for _ in 0..INFILL_SWEEPS {
        let prev = v.to_vec();
        let prev_known = known.clone();
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let k = grid.index(i, j);
                if mask[k] {
                    continue;
                }
                let mut s = 0.0;
                let mut n = 0;
                for (a, b) in [(i.wrapping_sub(1), j), (i + 1, j), (i, j.wrapping_sub(1)), (i, j + 1)] {
                    if a < grid.nx && b < grid.ny && prev_known[grid.index(a, b)] {
                        s += prev[grid.index(a, b)];
                        n += 1;
                    }
                }
                if n > 0 {
                    v[k] = s / n as f64;
                    known[k] = true;
                }
            }
        }
    }
    for (x, k) in v.iter_mut().zip(&known) {
        if !k {
            *x = 0.0;
        }
    }
}

/// True when every node of the bicubic stencil around `(x, y)` is valid.
fn stencil_is_valid(g: &Grid2D, valid: &[bool], x: f64, y: f64) -> bool {
    let ci = (((x - g.x0) / g.dx).floor().max(0.0) as usize).min(g.nx - 2);
    let cj = (((y - g.y0) / g.dy).floor().max(0.0) as usize).min(g.ny - 2);
    (cj.saturating_sub(1)..(cj + 3).min(g.ny))
        .all(|j| (ci.saturating_sub(1)..(ci + 3).min(g.nx)).all(|i| valid[g.index(i, j)]))
}

/// Samples `ε̃(x + u(x))` with its gradient where the displaced position
/// stays in the rectangle and, if `valid` is given, only touches valid
/// pixels of `ε̃`.
fn displaced_samples(
    epsilon_tilde: &ScalarField2D,
    u: &VectorField2D,
    valid: Option<&[bool]>,
) -> Vec<Option<(f64, [f64; 2])>> {
    let g = epsilon_tilde.grid();
    (0..g.len())
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k % g.nx, k / g.nx);
            let d = u.at(i, j);
            let (x, y) = (g.x(i) + d[0], g.y(j) + d[1]);
            if g.contains(x, y) && valid.is_none_or(|m| stencil_is_valid(g, m, x, y)) {
                Some(epsilon_tilde.sample_with_gradient(x, y).expect("inside"))
            } else {
                None
            }
        })
        .collect()
}

fn check_pair(
    epsilon: &ScalarField2D,
    epsilon_tilde: &ScalarField2D,
    u: &VectorField2D,
    valid: Option<&[bool]>,
) -> Result<()> {
    if epsilon_tilde.grid() != epsilon.grid() || u.grid() != epsilon.grid() {
        return Err(Error::Precondition("fields live on different grids".into()));
    }
    if valid.is_some_and(|m| m.len() != epsilon.grid().len()) {
        return Err(Error::Precondition("validity mask has the wrong length".into()));
    }
    check_contractive(u)
}

/// `I(u) = ∫ |ε̃(x + u(x)) − ε(x)|²` over pixels whose displaced position
/// stays in the grid. `valid` is the validity mask of `ε̃` (pixels whose
/// content is known); displaced samples touching invalid pixels are skipped.
pub fn discrepancy(
    epsilon: &ScalarField2D,
    epsilon_tilde: &ScalarField2D,
    u: &VectorField2D,
    valid: Option<&[bool]>,
) -> Result<f64> {
    check_pair(epsilon, epsilon_tilde, u, valid)?;
    Ok(evaluate(epsilon, epsilon_tilde, u, valid).0)
}

/// Riesz representative `2[ε̃(x + u) − ε] ∇ε̃(x + u)` of the derivative of
/// [`discrepancy`] (zero where the displaced position leaves the grid).
pub fn discrepancy_gradient(
    epsilon: &ScalarField2D,
    epsilon_tilde: &ScalarField2D,
    u: &VectorField2D,
    valid: Option<&[bool]>,
) -> Result<VectorField2D> {
    check_pair(epsilon, epsilon_tilde, u, valid)?;
    Ok(evaluate(epsilon, epsilon_tilde, u, valid).1)
}

fn evaluate(
    epsilon: &ScalarField2D,
    epsilon_tilde: &ScalarField2D,
    u: &VectorField2D,
    valid: Option<&[bool]>,
) -> (f64, VectorField2D) {
    let g = *epsilon.grid();
    let s = displaced_samples(epsilon_tilde, u, valid);
    let mut gx = vec![0.0; g.len()];
    let mut gy = vec![0.0; g.len()];
    let mut total = 0.0;
    for (k, v) in s.iter().enumerate() {
        if let Some((v, d)) = v {
            let r = v - epsilon.values()[k];
            total += g.weight(k % g.nx, k / g.nx) * r * r;
            gx[k] = 2.0 * r * d[0];
            gy[k] = 2.0 * r * d[1];
        }
    }
    let grad = VectorField2D::new(
        ScalarField2D::from_vec_unchecked(g, gx),
        ScalarField2D::from_vec_unchecked(g, gy),
    )
    .expect("same grid");
    (total, grad)
}

/// Tunables of [`minimize_displacement`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DescentOptions {
    /// Stop when the relative objective decrease of a step falls below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Mollify the raw gradient with radius `2·h` before stepping.
    pub smoothing: bool,
}

impl Default for DescentOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 200,
            smoothing: true,
        }
    }
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_HALVINGS: usize = 40;
/// Descent stops once `I` falls below this fraction of `‖ε̃‖²`.
pub const OBJECTIVE_FLOOR: f64 = 1e-12;

fn zero_boundary(v: &mut VectorField2D) {
    let g = *v.grid();
    let mut x = v.x().values().to_vec();
    let mut y = v.y().values().to_vec();
    for j in 0..g.ny {
        for i in 0..g.nx {
            if g.is_boundary(i, j) {
                x[g.index(i, j)] = 0.0;
                y[g.index(i, j)] = 0.0;
            }
        }
    }
    *v = VectorField2D::new(
        ScalarField2D::from_vec_unchecked(g, x),
        ScalarField2D::from_vec_unchecked(g, y),
    )
    .expect("same grid");
}

/// Armijo gradient descent on [`discrepancy`]; boundary values of `u0` are
/// held fixed.
pub fn minimize_displacement(
    epsilon: &ScalarField2D,
    epsilon_tilde: &ScalarField2D,
    valid: Option<&[bool]>,
    u0: &VectorField2D,
    opts: &DescentOptions,
) -> Result<(VectorField2D, DescentReport)> {
    check_pair(epsilon, epsilon_tilde, u0, valid)?;
    let grid = *epsilon.grid();
    let smoother = if opts.smoothing {
        Some(Mollifier::new(2.0 * grid.max_spacing())?.stencil(&grid)?)
    } else {
        None
    };
    let h = grid.dx.min(grid.dy);
    let mut report = DescentReport::new();
    let mut u = u0.clone();
    let (mut obj, mut grad) = evaluate(epsilon, epsilon_tilde, &u, valid);
    report.objective_history.push(obj);
    let floor = OBJECTIVE_FLOOR * data_energy(epsilon_tilde, valid);
    let mut step: Option<f64> = None;
    loop {
        report.iterations += 1;
        zero_boundary(&mut grad);
        let gnorm = grad.norm_l2();
        report.gradient_norm_history.push(gnorm);
        if gnorm == 0.0 || obj <= floor {
            report.termination = Termination::Tolerance;
            break;
        }
        if report.iterations > opts.max_iter {
            report.termination = Termination::MaxIter;
            break;
        }
        let mut dir = match &smoother {
            Some(st) => {
                let [sx, sy] = st.average(&grid, [grad.x().values(), grad.y().values()]);
                VectorField2D::new(
                    ScalarField2D::from_vec_unchecked(grid, sx),
                    ScalarField2D::from_vec_unchecked(grid, sy),
                )?
                .scale(-1.0)
            }
            None => grad.scale(-1.0),
        };
        zero_boundary(&mut dir);
        let mut slope = grad.dot(&dir);
        if !(slope < 0.0) {
            dir = grad.scale(-1.0);
            slope = -gnorm * gnorm;
        }
        let dmax = dir.max_norm();
        let mut s = step.map_or(0.1 * h / dmax, |s| 2.0 * s);
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial = u.axpy(s, &dir);
            if trial.max_jacobian_entry() < 1.0 {
                let (o, g) = evaluate(epsilon, epsilon_tilde, &trial, valid);
                if o <= obj + ARMIJO_C1 * s * slope && o < obj {
                    accepted = Some((trial, o, g));
                    break;
                }
            }
            s *= 0.5;
        }
        let Some((trial, o, g)) = accepted else {
            report.termination = Termination::LineSearchFailure;
            break;
        };
        let rel = (obj - o) / obj;
        u = trial;
        obj = o;
        grad = g;
        step = Some(s);
        report.step_sizes.push(s);
        report.objective_history.push(obj);
        log::debug!("displacement descent {}: I = {obj:e}, step {s:e}", report.iterations);
        if rel < opts.tol {
            report.termination = Termination::Tolerance;
            break;
        }
    }
    Ok((u, report))
}

fn data_energy(f: &ScalarField2D, valid: Option<&[bool]>) -> f64 {
    let g = f.grid();
    (0..g.len())
        .filter(|&k| valid.is_none_or(|v| v[k]))
        .map(|k| g.weight(k % g.nx, k / g.nx) * f.values()[k].powi(2))
        .sum()
}

/// Relative L² error `‖a − b‖ / ‖b‖` restricted to `mask`.
pub fn relative_error_on(a: &VectorField2D, b: &VectorField2D, mask: &[bool]) -> f64 {
    let g = a.grid();
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..g.len() {
        if !mask[k] {
            continue;
        }
        let w = g.weight(k % g.nx, k / g.nx);
        let (p, q) = (a.at(k % g.nx, k / g.nx), b.at(k % g.nx, k / g.nx));
        num += w * ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2));
        den += w * (q[0] * q[0] + q[1] * q[1]);
    }
    (num / den).sqrt()
}
