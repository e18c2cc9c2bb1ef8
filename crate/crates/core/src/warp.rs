//! Backward image warping `ε_u = ε ∘ (I + u)⁻¹` and the weak first-order
//! residual of the warp.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Grid2D, ScalarField2D, VectorField2D};

/// Fixed-point stopping tolerance on successive iterates.
pub const FIXED_POINT_TOL: f64 = 1e-12;
pub const FIXED_POINT_MAX_ITER: usize = 50;

/// Output of [`warp_image`].
#[derive(Debug, Clone)]
pub struct WarpResult {
    pub image: ScalarField2D,
    /// `true` where the preimage lies in the grid rectangle and the
    /// fixed-point iteration converged.
    pub mask: Vec<bool>,
    /// Pixels whose fixed-point iteration hit the iteration cap.
    pub unconverged: usize,
}

impl WarpResult {
    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Fails unless every entry of the displacement Jacobian is below one.
pub fn check_contractive(u: &VectorField2D) -> Result<()> {
    let j = u.max_jacobian_entry();
    if !(j < 1.0) {
        return Err(Error::Precondition(format!(
            "displacement gradient sup-norm {j} is not below 1"
        )));
    }
    Ok(())
}

struct Preimage {
    point: (f64, f64),
    inside: bool,
    converged: bool,
}

/// Solves `x + u(x) = x̃` by `x ← x̃ − u(x)`, evaluating `u` at the nearest
/// point of the rectangle.
fn preimage(u: &VectorField2D, xt: f64, yt: f64) -> Preimage {
    let g = u.grid();
    let (mut x, mut y) = (xt, yt);
    let mut converged = false;
    for _ in 0..FIXED_POINT_MAX_ITER {
        let (cx, cy) = g.clamp(x, y);
        let d = u.sample(cx, cy).expect("clamped point is inside");
        let (nx, ny) = (xt - d[0], yt - d[1]);
        let step = (nx - x).hypot(ny - y);
        x = nx;
        y = ny;
        if step <= FIXED_POINT_TOL {
            converged = true;
            break;
        }
    }
    Preimage {
        point: (x, y),
        inside: g.contains(x, y),
        converged,
    }
}

fn node_points(g: &Grid2D) -> impl IndexedParallelIterator<Item = (f64, f64)> + '_ {
    (0..g.len()).into_par_iter().map(move |k| (g.x(k % g.nx), g.y(k / g.nx)))
}

/// Evaluates `ε_u(x̃) = ε((I + u)⁻¹ x̃)` at every node.
///
/// Preimages outside the rectangle are clamped for evaluation and flagged
/// in the mask.
pub fn warp_image(epsilon: &ScalarField2D, u: &VectorField2D) -> Result<WarpResult> {
    let g = epsilon.grid();
    if u.grid() != g {
        return Err(Error::Precondition("image and displacement grids differ".into()));
    }
    check_contractive(u)?;
    let zero = u.max_norm() == 0.0;
    let out: Vec<(f64, bool, bool)> = node_points(g)
        .map(|(xt, yt)| {
            if zero {
                return (epsilon.sample(xt, yt).expect("node"), true, true);
            }
            let p = preimage(u, xt, yt);
            let (cx, cy) = g.clamp(p.point.0, p.point.1);
            let v = epsilon.sample(cx, cy).expect("clamped point is inside");
            (v, p.inside && p.converged, p.converged)
        })
        .collect();
    let unconverged = out.iter().filter(|o| !o.2).count();
    if unconverged > 0 {
        log::warn!("warp: {unconverged} pixels did not converge");
    }
    Ok(WarpResult {
        image: ScalarField2D::from_vec_unchecked(*g, out.iter().map(|o| o.0).collect()),
        mask: out.iter().map(|o| o.1).collect(),
        unconverged,
    })
}

/// Displacement `w` with `I + w = (I + u)⁻¹` at the nodes, and the validity
/// mask of the inversion.
pub fn inverse_displacement(u: &VectorField2D) -> Result<(VectorField2D, Vec<bool>)> {
    check_contractive(u)?;
    let g = u.grid();
    let out: Vec<([f64; 2], bool)> = node_points(g)
        .map(|(xt, yt)| {
            let p = preimage(u, xt, yt);
            ([p.point.0 - xt, p.point.1 - yt], p.inside && p.converged)
        })
        .collect();
    let w = VectorField2D::new(
        ScalarField2D::from_vec_unchecked(*g, out.iter().map(|o| o.0[0]).collect()),
        ScalarField2D::from_vec_unchecked(*g, out.iter().map(|o| o.0[1]).collect()),
    )?;
    Ok((w, out.iter().map(|o| o.1).collect()))
}

/// Weak residual `|∫(ε − ε_u)ψ − ∫ψ u·∇ε|` by trapezoid quadrature.
///
/// `psi` must vanish within `max|u| + 2h` of the boundary so that only
/// valid pixels contribute.
pub fn first_order_residual(epsilon: &ScalarField2D, u: &VectorField2D, psi: &ScalarField2D) -> Result<f64> {
    let g = epsilon.grid();
    if psi.grid() != g {
        return Err(Error::Precondition("test function lives on a different grid".into()));
    }
    let margin = u.max_norm() + 2.0 * g.max_spacing();
    for j in 0..g.ny {
        for i in 0..g.nx {
            if g.distance_to_boundary(g.x(i), g.y(j)) < margin && psi.at(i, j) != 0.0 {
                return Err(Error::Precondition(format!(
                    "test function is nonzero at ({}, {}) within {margin} of the boundary",
                    g.x(i),
                    g.y(j)
                )));
            }
        }
    }
    let warped = warp_image(epsilon, u)?;
    let grad = epsilon.gradient();
    let mut s = 0.0;
    for k in 0..g.len() {
        let (i, j) = (k % g.nx, k / g.nx);
        let ps = psi.values()[k];
        if ps == 0.0 {
            continue;
        }
        let du = u.x().values()[k] * grad.x().values()[k] + u.y().values()[k] * grad.y().values()[k];
        s += g.weight(i, j) * ps * (epsilon.values()[k] - warped.image.values()[k] - du);
    }
    Ok(s.abs())
}
