//! Shear-modulus recovery from a measured displacement field.
//!
//! The misfit `K(μ) = Σ ω |F[μ] − u_meas|²` is minimized by projected
//! descent. `F[μ]` is the Stokes solution with the fixed boundary data; its
//! gradient comes from one adjoint solve that reuses the forward
//! factorization, and Gauss-Newton products `JᵀJh` from one linearized and
//! one adjoint solve.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid2D, ScalarField2D, VectorField2D};
use crate::phantom::BoundaryCondition;
use crate::report::{DescentReport, Termination};
use crate::stokes::{StokesOperator, StokesSolution};

/// How the multiplicative ambiguity `μ ~ cμ` is removed after each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gauge {
    /// Hold `μ = mu0` on the outer ring of nodes. Besides the scale this
    /// removes the modes `f(x) + g(y)` a single uniaxial load cannot see.
    #[default]
    BoundaryPin,
    /// Match the weighted mean of `mu0` over the boundary collar.
    BoundaryAnchor,
    /// Match the global weighted mean of `mu0`.
    MeanAnchor,
    None,
}

/// Search direction of the projected descent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescentMethod {
    /// Steepest descent with Barzilai-Borwein trial steps.
    Gradient,
    /// Gauss-Newton direction from truncated conjugate gradients on the
    /// free (non-clipped) nodes.
    #[default]
    GaussNewton,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MuRecoveryConfig {
    pub mu0: ScalarField2D,
    pub mu_bounds: (f64, f64),
    /// First step, as the largest relative change of `μ` it may cause.
    pub step0: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub gauge: Gauge,
    /// Width of the boundary collar (in domain units) used by the anchor.
    pub collar: f64,
    /// Weight of the smoothness penalty `‖∇θ‖²` on the descent variable
    /// `θ` (`μ` or `log μ`), relative to `‖u_meas‖²`.
    pub tikhonov: f64,
    /// Descend in `log μ` instead of `μ`.
    pub log_parameterization: bool,
    pub method: DescentMethod,
    /// Inner conjugate-gradient iterations per Gauss-Newton step.
    pub cg_max_iter: usize,
}

impl MuRecoveryConfig {
    pub fn new(mu0: ScalarField2D) -> Self {
        Self {
            mu0,
            mu_bounds: (0.5, 10.0),
            step0: 0.1,
            tol: 1e-6,
            max_iter: 100,
            gauge: Gauge::BoundaryPin,
            collar: 0.1,
            tikhonov: 1e-8,
            log_parameterization: true,
            method: DescentMethod::GaussNewton,
            cg_max_iter: 30,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.mu_bounds;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(Error::Config(format!("mu_bounds ({lo}, {hi}) must satisfy 0 < min < max")));
        }
        if self.mu0.values().iter().any(|&m| !(m > 0.0 && m.is_finite())) {
            return Err(Error::Config("mu0 must be positive".into()));
        }
        if !(self.step0 > 0.0) || !(self.tol >= 0.0) || !(self.tikhonov >= 0.0) || !(self.collar >= 0.0) {
            return Err(Error::Config("step0 must be positive; tol, tikhonov and collar non-negative".into()));
        }
        Ok(())
    }
}

/// Nodes within `width` of the boundary.
pub fn collar_mask(grid: &Grid2D, width: f64) -> Vec<bool> {
    let mut mask = vec![false; grid.len()];
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            mask[grid.index(i, j)] = grid.distance_to_boundary(grid.x(i), grid.y(j)) <= width;
        }
    }
    mask
}

fn masked_mean(f: &ScalarField2D, mask: &[bool]) -> f64 {
    let g = f.grid();
    let (mut s, mut w) = (0.0, 0.0);
    for j in 0..g.ny {
        for i in 0..g.nx {
            if mask[g.index(i, j)] {
                s += g.weight(i, j) * f.at(i, j);
                w += g.weight(i, j);
            }
        }
    }
    s / w
}

/// Relative L² error of `mu` against `truth` away from a boundary collar.
pub fn interior_relative_error(mu: &ScalarField2D, truth: &ScalarField2D, collar: f64) -> f64 {
    let g = mu.grid();
    let outer = collar_mask(g, collar);
    let (mut num, mut den) = (0.0, 0.0);
    for j in 0..g.ny {
        for i in 0..g.nx {
            if !outer[g.index(i, j)] {
                let w = g.weight(i, j);
                num += w * (mu.at(i, j) - truth.at(i, j)).powi(2);
                den += w * truth.at(i, j).powi(2);
            }
        }
    }
    (num / den).sqrt()
}

fn check_inputs(mu: &ScalarField2D, u_meas: &VectorField2D, bc: &BoundaryCondition) -> Result<()> {
    if mu.grid() != u_meas.grid() || mu.grid() != bc.grid() {
        return Err(Error::Precondition("modulus, measurement and boundary data must share a grid".into()));
    }
    Ok(())
}

struct Forward {
    op: StokesOperator,
    sol: StokesSolution,
    misfit: f64,
}

fn forward(mu: &ScalarField2D, u_meas: &VectorField2D, bc: &BoundaryCondition) -> Result<Forward> {
    let op = StokesOperator::new(mu)?;
    let sol = op.solve(bc, None)?;
    let r = sol.u.sub(u_meas);
    let misfit = r.dot(&r);
    Ok(Forward { op, sol, misfit })
}

fn misfit_gradient(fw: &Forward, u_meas: &VectorField2D, bc: &BoundaryCondition) -> Result<ScalarField2D> {
    let v = fw.op.solve_adjoint(&fw.sol.u.sub(u_meas))?;
    Ok(fw.op.strain_contraction(&fw.sol, bc, &v))
}

/// `K(μ) = Σ ω |F[μ] − u_meas|²`.
pub fn objective_k(mu: &ScalarField2D, u_meas: &VectorField2D, bc: &BoundaryCondition) -> Result<f64> {
    check_inputs(mu, u_meas, bc)?;
    Ok(forward(mu, u_meas, bc)?.misfit)
}

/// Nodal Riesz representative of `∇K` in the trapezoid inner product.
pub fn gradient_k(mu: &ScalarField2D, u_meas: &VectorField2D, bc: &BoundaryCondition) -> Result<ScalarField2D> {
    check_inputs(mu, u_meas, bc)?;
    misfit_gradient(&forward(mu, u_meas, bc)?, u_meas, bc)
}

#[derive(Debug, Clone)]
pub struct MuRecovery {
    pub mu: ScalarField2D,
    pub report: DescentReport,
    /// Product of all gauge rescalings applied.
    pub gauge_factor: f64,
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_HALVINGS: usize = 40;
const CG_RTOL: f64 = 0.1;
/// Recovery stops once `K` falls below this fraction of `‖u_meas‖²`.
pub const MISFIT_FLOOR: f64 = 1e-14;

struct Problem<'a> {
    u_meas: &'a VectorField2D,
    bc: &'a BoundaryCondition,
    cfg: &'a MuRecoveryConfig,
    anchor: Option<(Vec<bool>, f64)>,
    /// `tikhonov · ‖u_meas‖²`.
    reg: f64,
}

impl Problem<'_> {
    fn to_mu(&self, theta: &[f64]) -> Vec<f64> {
        if self.cfg.log_parameterization {
            theta.iter().map(|t| t.exp()).collect()
        } else {
            theta.to_vec()
        }
    }

    fn to_theta(&self, mu: &[f64]) -> Vec<f64> {
        if self.cfg.log_parameterization {
            mu.iter().map(|m| m.ln()).collect()
        } else {
            mu.to_vec()
        }
    }

    fn clip(&self, mu: &mut [f64]) {
        let (lo, hi) = self.cfg.mu_bounds;
        for m in mu {
            *m = m.clamp(lo, hi);
        }
    }

    /// Rescales `mu` in place per the gauge; returns the factor.
    fn fix_gauge(&self, mu: &mut ScalarField2D) -> f64 {
        let Some((mask, target)) = &self.anchor else {
            return 1.0;
        };
        let c = target / masked_mean(mu, mask);
        let mut v = mu.values().iter().map(|m| m * c).collect::<Vec<_>>();
        self.clip(&mut v);
        *mu = ScalarField2D::from_vec_unchecked(*mu.grid(), v);
        c
    }

    fn objective(&self, mu: &ScalarField2D, fw: &Forward) -> f64 {
        if self.reg > 0.0 {
            let theta = self.to_theta(mu.values());
            fw.misfit + self.reg * smoothness(mu.grid(), &theta).0
        } else {
            fw.misfit
        }
    }

    /// Gradient with respect to the descent variable.
    fn gradient(&self, mu: &ScalarField2D, fw: &Forward) -> Result<Vec<f64>> {
        let g = misfit_gradient(fw, self.u_meas, self.bc)?;
        let mut out = g.into_values();
        if self.cfg.log_parameterization {
            for (o, m) in out.iter_mut().zip(mu.values()) {
                *o *= m;
            }
        }
        if self.reg > 0.0 {
            let (_, r) = smoothness(mu.grid(), &self.to_theta(mu.values()));
            for (o, r) in out.iter_mut().zip(r) {
                *o += self.reg * r;
            }
        }
        Ok(out)
    }
}

/// `Σ_edges ω_e ((θ_a − θ_b) / h)²` and the nodal Riesz representative of
/// its gradient.
fn smoothness(grid: &Grid2D, theta: &[f64]) -> (f64, Vec<f64>) {
    let mut value = 0.0;
    let mut grad = vec![0.0; grid.len()];
    let area = grid.dx * grid.dy;
    let mut edge = |a: usize, b: usize, w: f64, h: f64| {
        let d = (theta[a] - theta[b]) / h;
        value += w * d * d;
        let t = 2.0 * w * d / h;
        grad[a] += t;
        grad[b] -= t;
    };
    for j in 0..grid.ny {
        let half = if j == 0 || j + 1 == grid.ny { 0.5 } else { 1.0 };
        for i in 0..grid.nx - 1 {
            edge(grid.index(i, j), grid.index(i + 1, j), half * area, grid.dx);
        }
    }
    for j in 0..grid.ny - 1 {
        for i in 0..grid.nx {
            let half = if i == 0 || i + 1 == grid.nx { 0.5 } else { 1.0 };
            edge(grid.index(i, j), grid.index(i, j + 1), half * area, grid.dy);
        }
    }
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            grad[grid.index(i, j)] /= grid.weight(i, j);
        }
    }
    (value, grad)
}

impl Problem<'_> {
    /// Nodes held fixed by the bounds: clipped and pushed outward.
    fn free_set(&self, mu: &ScalarField2D, grad: &[f64]) -> Vec<bool> {
        let (lo, hi) = self.cfg.mu_bounds;
        let eps = 1e-12;
        let g = mu.grid();
        (0..g.len())
            .map(|k| {
                let (m, d) = (mu.values()[k], grad[k]);
                let pinned = self.cfg.gauge == Gauge::BoundaryPin && g.is_boundary(k % g.nx, k / g.nx);
                !(pinned || (m <= lo * (1.0 + eps) && d > 0.0) || (m >= hi * (1.0 - eps) && d < 0.0))
            })
            .collect()
    }

    /// Gauss-Newton Hessian (plus Tikhonov) applied to `h`, in the descent
    /// variable.
    fn hessian_apply(&self, mu: &ScalarField2D, fw: &Forward, h: &[f64]) -> Result<Vec<f64>> {
        let grid = *mu.grid();
        let scale: Vec<f64> = if self.cfg.log_parameterization {
            mu.values().to_vec()
        } else {
            vec![1.0; grid.len()]
        };
        let hmu: Vec<f64> = h.iter().zip(&scale).map(|(a, b)| a * b).collect();
        let hf = ScalarField2D::from_vec_unchecked(grid, hmu.clone());
        let du = fw.op.linearized_response(&fw.sol, self.bc, &hf)?;
        let v = fw.op.solve_adjoint(&du)?;
        let gh = fw.op.strain_contraction(&fw.sol, self.bc, &v);
        let mut out: Vec<f64> = gh.values().iter().zip(&scale).map(|(g, sc)| sc * g).collect();
        if self.reg > 0.0 {
            let (_, lh) = smoothness(&grid, h);
            for (o, l) in out.iter_mut().zip(lh) {
                *o += self.reg * l;
            }
        }
        Ok(out)
    }

    /// Truncated conjugate gradients for `H d = −g` on the free nodes.
    fn gauss_newton_direction(&self, mu: &ScalarField2D, fw: &Forward, grad: &[f64]) -> Result<Vec<f64>> {
        let grid = *mu.grid();
        let free = self.free_set(mu, grad);
        let restrict = |v: &mut [f64]| {
            for (x, &f) in v.iter_mut().zip(&free) {
                if !f {
                    *x = 0.0;
                }
            }
        };
        let mut r: Vec<f64> = grad.iter().map(|g| -g).collect();
        restrict(&mut r);
        let r0 = weighted_dot(&grid, &r, &r).sqrt();
        let mut d = vec![0.0; grid.len()];
        let mut p = r.clone();
        let mut rr = r0 * r0;
        let mut iters = 0;
        for _ in 0..self.cfg.cg_max_iter {
            iters += 1;
            let mut hp = self.hessian_apply(mu, fw, &p)?;
            restrict(&mut hp);
            let curv = weighted_dot(&grid, &p, &hp);
            if !(curv > 0.0) {
                break;
            }
            let alpha = rr / curv;
            for k in 0..d.len() {
                d[k] += alpha * p[k];
                r[k] -= alpha * hp[k];
            }
            let rr_new = weighted_dot(&grid, &r, &r);
            if rr_new.sqrt() <= CG_RTOL * r0 {
                break;
            }
            let beta = rr_new / rr;
            rr = rr_new;
            for k in 0..p.len() {
                p[k] = r[k] + beta * p[k];
            }
        }
        log::debug!("gauss-newton: {iters} cg iterations, residual {:e}", rr.sqrt() / r0);
        if d.iter().all(|&x| x == 0.0) {
            d = grad.iter().map(|g| -g).collect();
            restrict(&mut d);
        }
        Ok(d)
    }
}

fn weighted_dot(grid: &Grid2D, a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let k = grid.index(i, j);
            s += grid.weight(i, j) * a[k] * b[k];
        }
    }
    s
}

/// Projected Armijo descent on `K` with Barzilai-Borwein trial steps.
///
/// Each step is `μ ← clip(μ − s g)` followed by the gauge rescaling; the
/// objective never increases over accepted steps.
pub fn recover_mu(u_meas: &VectorField2D, bc: &BoundaryCondition, cfg: &MuRecoveryConfig) -> Result<MuRecovery> {
    cfg.validate()?;
    check_inputs(&cfg.mu0, u_meas, bc)?;
    bc.check_compatible()?;
    let grid = *u_meas.grid();
    let anchor = match cfg.gauge {
        Gauge::None | Gauge::BoundaryPin => None,
        Gauge::MeanAnchor => {
            let all = vec![true; grid.len()];
            let t = masked_mean(&cfg.mu0, &all);
            Some((all, t))
        }
        Gauge::BoundaryAnchor => {
            let mask = collar_mask(&grid, cfg.collar);
            if !mask.iter().any(|&m| m) {
                return Err(Error::Config("boundary collar contains no nodes".into()));
            }
            let t = masked_mean(&cfg.mu0, &mask);
            Some((mask, t))
        }
    };
    let reg = cfg.tikhonov * u_meas.dot(u_meas);
    let pb = Problem { u_meas, bc, cfg, anchor, reg };
    let floor = MISFIT_FLOOR * u_meas.dot(u_meas);

    let mut mu = {
        let mut v = cfg.mu0.values().to_vec();
        pb.clip(&mut v);
        ScalarField2D::from_vec_unchecked(grid, v)
    };
    let mut gauge_factor = pb.fix_gauge(&mut mu);
    let mut fw = forward(&mu, u_meas, bc)?;
    let mut obj = pb.objective(&mu, &fw);
    let mut grad = pb.gradient(&mu, &fw)?;
    let mut report = DescentReport::new();
    report.objective_history.push(obj);
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;

    loop {
        report.iterations += 1;
        let gnorm = weighted_dot(&grid, &grad, &grad).sqrt();
        report.gradient_norm_history.push(gnorm);
        if gnorm == 0.0 || fw.misfit <= floor {
            report.termination = Termination::Tolerance;
            break;
        }
        if report.iterations > cfg.max_iter {
            report.termination = Termination::MaxIter;
            break;
        }
        let theta = pb.to_theta(mu.values());
        let (dir, mut s) = match cfg.method {
            DescentMethod::GaussNewton => (pb.gauss_newton_direction(&mu, &fw, &grad)?, 1.0),
            DescentMethod::Gradient => {
                let gmax = grad.iter().fold(0.0_f64, |a, g| a.max(g.abs()));
                let first = if cfg.log_parameterization {
                    cfg.step0 / gmax
                } else {
                    cfg.step0 * mu.max() / gmax
                };
                let s = match &prev {
                    Some((dtheta, dgrad)) => {
                        let sy = weighted_dot(&grid, dtheta, dgrad);
                        let yy = weighted_dot(&grid, dgrad, dgrad);
                        if sy > 0.0 && yy > 0.0 { sy / yy } else { first }
                    }
                    None => first,
                };
                let free = pb.free_set(&mu, &grad);
                (grad.iter().zip(&free).map(|(g, &f)| if f { -g } else { 0.0 }).collect::<Vec<_>>(), s)
            }
        };
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial_theta: Vec<f64> = theta.iter().zip(&dir).map(|(t, d)| t + s * d).collect();
            let mut v = pb.to_mu(&trial_theta);
            pb.clip(&mut v);
            let mut trial = ScalarField2D::from_vec_unchecked(grid, v);
            let c = pb.fix_gauge(&mut trial);
            let moved: Vec<f64> = pb.to_theta(trial.values()).iter().zip(&theta).map(|(a, b)| a - b).collect();
            let decrease = weighted_dot(&grid, &grad, &moved);
            if decrease < 0.0 {
                let tf = forward(&trial, u_meas, bc)?;
                let o = pb.objective(&trial, &tf);
                if o <= obj + ARMIJO_C1 * decrease && o < obj {
                    accepted = Some((trial, tf, o, c));
                    break;
                }
            }
            s *= 0.5;
        }
        let Some((trial, tf, o, c)) = accepted else {
            report.termination = Termination::LineSearchFailure;
            break;
        };
        let new_grad = pb.gradient(&trial, &tf)?;
        let new_theta = pb.to_theta(trial.values());
        prev = Some((
            new_theta.iter().zip(&theta).map(|(a, b)| a - b).collect(),
            new_grad.iter().zip(&grad).map(|(a, b)| a - b).collect(),
        ));
        let rel = (obj - o) / obj;
        mu = trial;
        fw = tf;
        obj = o;
        grad = new_grad;
        gauge_factor *= c;
        report.step_sizes.push(s);
        report.objective_history.push(obj);
        log::debug!("mu recovery {}: K = {obj:e}, step {s:e}", report.iterations);
        if rel < cfg.tol {
            report.termination = Termination::Tolerance;
            break;
        }
    }
    log::info!(
        "mu recovery: {} iterations, K {:e} -> {:e} ({})",
        report.iterations,
        report.initial_objective(),
        report.final_objective(),
        report.termination
    );
    Ok(MuRecovery { mu, report, gauge_factor })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_mu, make_boundary_condition, BoundaryMode, InclusionSpec};

    fn setup(n: usize) -> (Grid2D, ScalarField2D, BoundaryCondition, VectorField2D) {
        let g = Grid2D::unit_square(n).unwrap();
        let mu = generate_mu(&g, &InclusionSpec::default()).unwrap();
        let bc = make_boundary_condition(&g, BoundaryMode::UniaxialCompression, 0.005).unwrap();
        let u = StokesOperator::new(&mu).unwrap().solve(&bc, None).unwrap().u;
        (g, mu, bc, u)
    }

    fn smooth_mu(g: Grid2D) -> ScalarField2D {
        ScalarField2D::from_fn(g, |x, y| 1.5 + 0.4 * (3.0 * x).sin() * (2.0 * y).cos())
    }

    #[test]
    fn objective_vanishes_at_consistent_data_and_is_scale_invariant() {
        let (g, mu, bc, u) = setup(24);
        let floor = 1e-14 * u.dot(&u);
        assert!(objective_k(&mu, &u, &bc).unwrap() <= floor);
        for c in [0.5, 2.0] {
            assert!(objective_k(&mu.map(|m| c * m), &u, &bc).unwrap() <= floor);
        }
        let zero = BoundaryCondition::zero(&g);
        assert_eq!(objective_k(&mu, &VectorField2D::zeros(g), &zero).unwrap(), 0.0);
        let g2 = gradient_k(&mu, &u, &bc).unwrap();
        assert!(g2.max_abs() <= 1e-8 * u.max_norm(), "{}", g2.max_abs());
    }

    #[test]
    fn gradient_matches_finite_differences_at_the_plateau() {
        let (g, _, bc, u) = setup(20);
        let mu = smooth_mu(g);
        let grad = gradient_k(&mu, &u, &bc).unwrap();
        let dirs = [
            ScalarField2D::from_fn(g, |x, y| 1.0 + 0.5 * (2.0 * x + y).sin()),
            ScalarField2D::from_fn(g, |x, y| 0.2 + x * y),
            ScalarField2D::from_fn(g, |x, y| (-(x - 0.4).powi(2) / 0.05 - (y - 0.6).powi(2) / 0.08).exp()),
        ];
        for h in &dirs {
            let an = grad.dot(h);
            let best = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7]
                .iter()
                .map(|&t| {
                    let kp = objective_k(&mu.zip_map(h, |m, d| m + t * d), &u, &bc).unwrap();
                    let km = objective_k(&mu.zip_map(h, |m, d| m - t * d), &u, &bc).unwrap();
                    let fd = (kp - km) / (2.0 * t);
                    (an - fd).abs() / an.abs().max(1e-14)
                })
                .fold(f64::INFINITY, f64::min);
            assert!(best <= 1e-3, "{best}");
        }
    }

    #[test]
    fn scaling_direction_is_a_null_direction() {
        let (g, _, bc, u) = setup(24);
        let ones = ScalarField2D::constant(g, 1.0);
        let grad = gradient_k(&ScalarField2D::constant(g, 1.3), &u, &bc).unwrap();
        assert!(grad.dot(&ones).abs() <= 1e-6 * grad.norm_l2() * ones.norm_l2());
        let mu = smooth_mu(g);
        let grad = gradient_k(&mu, &u, &bc).unwrap();
        assert!(grad.dot(&mu).abs() <= 1e-6 * grad.norm_l2() * mu.norm_l2());
    }

    #[test]
    fn smoothness_gradient_matches_differences() {
        let g = Grid2D::unit_square(9).unwrap();
        let th: Vec<f64> = (0..g.len()).map(|k| ((k * 7 % 11) as f64).sin()).collect();
        let h: Vec<f64> = (0..g.len()).map(|k| ((k * 3 % 5) as f64).cos()).collect();
        let (_, grad) = smoothness(&g, &th);
        let t = 1e-6;
        let plus: Vec<f64> = th.iter().zip(&h).map(|(a, b)| a + t * b).collect();
        let minus: Vec<f64> = th.iter().zip(&h).map(|(a, b)| a - t * b).collect();
        let fd = (smoothness(&g, &plus).0 - smoothness(&g, &minus).0) / (2.0 * t);
        let an = weighted_dot(&g, &grad, &h);
        assert!((an - fd).abs() <= 1e-7 * an.abs());
        let (v, grad) = smoothness(&g, &vec![2.0; g.len()]);
        assert_eq!(v, 0.0);
        assert!(grad.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn consistent_start_is_returned_unchanged() {
        let (g, _, bc, _) = setup(24);
        let mu0 = smooth_mu(g);
        let u = StokesOperator::new(&mu0).unwrap().solve(&bc, None).unwrap().u;
        for method in [DescentMethod::GaussNewton, DescentMethod::Gradient] {
            let cfg = MuRecoveryConfig { method, ..MuRecoveryConfig::new(mu0.clone()) };
            let r = recover_mu(&u, &bc, &cfg).unwrap();
            assert!(r.report.iterations <= 2);
            assert_eq!(r.mu, mu0);
        }
    }

    #[test]
    fn config_is_validated() {
        let g = Grid2D::unit_square(10).unwrap();
        let mut cfg = MuRecoveryConfig::new(ScalarField2D::constant(g, 1.0));
        cfg.mu_bounds = (0.0, 2.0);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.mu_bounds = (3.0, 2.0);
        assert!(cfg.validate().is_err());
        let cfg = MuRecoveryConfig::new(ScalarField2D::constant(g, -1.0));
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn inverse_crime_recovery_at_small_scale() {
        let (g, truth, bc, u) = setup(48);
        let mut cfg = MuRecoveryConfig::new(ScalarField2D::constant(g, 1.0));
        cfg.max_iter = 30;
        let r = recover_mu(&u, &bc, &cfg).unwrap();
        assert!(r.report.is_monotone());
        assert!(r.report.final_objective() < 1e-3 * r.report.initial_objective());
        let err = interior_relative_error(&r.mu, &truth, 0.1);
        assert!(err <= 0.2, "{err}");
        assert!(r.mu.min() >= 0.5 && r.mu.max() <= 10.0);
        for (i, j) in crate::phantom::boundary_nodes(&g) {
            assert_eq!(r.mu.at(i, j), 1.0);
        }
    }

    #[test]
    fn bounds_and_anchors_are_honoured() {
        let (g, _, bc, u) = setup(24);
        let all = vec![true; g.len()];
        let collar = collar_mask(&g, 0.1);
        for gauge in [Gauge::BoundaryAnchor, Gauge::MeanAnchor, Gauge::None] {
            let mut cfg = MuRecoveryConfig::new(ScalarField2D::constant(g, 1.0));
            cfg.mu_bounds = (0.05, 20.0);
            cfg.gauge = gauge;
            cfg.max_iter = 8;
            let r = recover_mu(&u, &bc, &cfg).unwrap();
            assert!(r.report.is_monotone());
            match gauge {
                Gauge::MeanAnchor => assert!((masked_mean(&r.mu, &all) - 1.0).abs() < 1e-12),
                Gauge::BoundaryAnchor => assert!((masked_mean(&r.mu, &collar) - 1.0).abs() < 1e-12),
                _ => assert_eq!(r.gauge_factor, 1.0),
            }
        }
        let mut cfg = MuRecoveryConfig::new(ScalarField2D::constant(g, 1.0));
        cfg.mu_bounds = (0.9, 2.5);
        cfg.max_iter = 8;
        let r = recover_mu(&u, &bc, &cfg).unwrap();
        assert!(r.mu.min() >= 0.9 && r.mu.max() <= 2.5);
    }

    #[test]
    fn gradient_method_decreases_the_misfit() {
        let (g, _, bc, u) = setup(24);
        let mut cfg = MuRecoveryConfig::new(ScalarField2D::constant(g, 1.0));
        cfg.method = DescentMethod::Gradient;
        cfg.max_iter = 10;
        let r = recover_mu(&u, &bc, &cfg).unwrap();
        assert!(r.report.is_monotone());
        assert!(r.report.final_objective() < 0.5 * r.report.initial_objective());
    }
}
