//! Heterogeneous incompressible Stokes solver on a staggered (MAC) grid.
//!
//! Unknowns live on cell faces: `ux` on vertical faces `(x_i, y_{j+1/2})`,
//! `uy` on horizontal faces `(x_{i+1/2}, y_j)`, pressure at cell centres.
//! The discrete problem minimizes
//!
//! ```text
//! Σ_cells |c| μ_c (exx² + eyy²) + Σ_nodes ω_n 2 μ_n exy² − ⟨b, P u⟩
//! ```
//!
//! subject to a zero cell divergence, where `P` interpolates face values to
//! the nodes and `ω` are the trapezoid weights. Because the same `P` and `ω`
//! are used for loads and outputs, the solution map is exactly self-adjoint
//! with respect to the nodal inner product, which makes the adjoint-state
//! gradient of a nodal misfit exact.

use std::fmt::Write as _;
use std::path::Path;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;

use crate::error::{Error, Result};
use crate::grid::{Grid2D, ScalarField2D, VectorField2D};
use crate::phantom::BoundaryCondition;

const RESIDUAL_TOL: f64 = 1e-8;

/// Affine functional of the face unknowns with at most four terms.
#[derive(Clone, Copy)]
struct Affine {
    idx: [usize; 4],
    coef: [f64; 4],
    len: usize,
    c0: f64,
}

impl Affine {
    fn zero() -> Self {
        Self {
            idx: [0; 4],
            coef: [0.0; 4],
            len: 0,
            c0: 0.0,
        }
    }

    fn push(&mut self, k: usize, c: f64) {
        self.idx[self.len] = k;
        self.coef[self.len] = c;
        self.len += 1;
    }

    fn add(&mut self, face: Face, c: f64) {
        match face {
            Face::Unknown(k) => self.push(k, c),
            Face::Fixed(v) => self.c0 += c * v,
        }
    }

    fn add_const(&mut self, v: f64) {
        self.c0 += v;
    }

    fn terms(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.idx[..self.len].iter().copied().zip(self.coef[..self.len].iter().copied())
    }

    fn eval(&self, x: &[f64]) -> f64 {
        self.c0 + self.terms().map(|(k, c)| c * x[k]).sum::<f64>()
    }

    fn eval_linear(&self, x: &[f64]) -> f64 {
        self.terms().map(|(k, c)| c * x[k]).sum()
    }
}

#[derive(Clone, Copy)]
enum Face {
    Unknown(usize),
    Fixed(f64),
}

/// Index bookkeeping for the staggered unknowns.
#[derive(Debug, Clone, Copy)]
struct Layout {
    nx: usize,
    ny: usize,
    nux: usize,
    nuy: usize,
    ncell: usize,
}

impl Layout {
    fn new(grid: &Grid2D) -> Self {
        let (nx, ny) = (grid.nx, grid.ny);
        Self {
            nx,
            ny,
            nux: (nx - 2) * (ny - 1),
            nuy: (nx - 1) * (ny - 2),
            ncell: (nx - 1) * (ny - 1),
        }
    }

    fn nvel(&self) -> usize {
        self.nux + self.nuy
    }

    /// The pressure of cell `(0, 0)` is pinned to remove the constant mode;
    /// its divergence row is implied by the others and the compatible trace.
    fn size(&self) -> usize {
        self.nvel() + self.ncell - 1
    }

    fn pressure(&self, i: usize, j: usize) -> Option<usize> {
        let k = j * (self.nx - 1) + i;
        (k > 0).then(|| self.nvel() + k - 1)
    }

    /// `ux` at `(x_i, y_{j+1/2})`.
    fn ux(&self, i: usize, j: usize, f: &dyn Fn(usize, usize) -> [f64; 2]) -> Face {
        if i == 0 || i + 1 == self.nx {
            Face::Fixed(0.5 * (f(i, j)[0] + f(i, j + 1)[0]))
        } else {
            Face::Unknown(j * (self.nx - 2) + i - 1)
        }
    }

    /// `uy` at `(x_{i+1/2}, y_j)`.
    fn uy(&self, i: usize, j: usize, f: &dyn Fn(usize, usize) -> [f64; 2]) -> Face {
        if j == 0 || j + 1 == self.ny {
            Face::Fixed(0.5 * (f(i, j)[1] + f(i + 1, j)[1]))
        } else {
            Face::Unknown(self.nux + (j - 1) * (self.nx - 1) + i)
        }
    }
}

/// Cell strains `(exx, eyy)` and the cell divergence.
fn cell_strains(
    g: &Grid2D,
    l: &Layout,
    i: usize,
    j: usize,
    f: &dyn Fn(usize, usize) -> [f64; 2],
) -> (Affine, Affine, Affine) {
    let mut exx = Affine::zero();
    exx.add(l.ux(i + 1, j, f), 1.0 / g.dx);
    exx.add(l.ux(i, j, f), -1.0 / g.dx);
    let mut eyy = Affine::zero();
    eyy.add(l.uy(i, j + 1, f), 1.0 / g.dy);
    eyy.add(l.uy(i, j, f), -1.0 / g.dy);
    let mut div = exx;
    for (k, c) in eyy.terms() {
        div.push(k, c);
    }
    div.c0 += eyy.c0;
    (exx, eyy, div)
}

/// Nodal shear strain `exy = (∂ux/∂y + ∂uy/∂x)/2`; one-sided half-cell
/// differences against the trace at the boundary.
fn node_shear(g: &Grid2D, l: &Layout, i: usize, j: usize, f: &dyn Fn(usize, usize) -> [f64; 2]) -> Affine {
    let mut e = Affine::zero();
    let (nx, ny) = (g.nx, g.ny);
    let hy = 0.5 / g.dy;
    let hx = 0.5 / g.dx;
    if j == 0 {
        e.add(l.ux(i, 0, f), 2.0 * hy);
        e.add_const(-2.0 * hy * f(i, 0)[0]);
    } else if j + 1 == ny {
        e.add_const(2.0 * hy * f(i, j)[0]);
        e.add(l.ux(i, j - 1, f), -2.0 * hy);
    } else {
        e.add(l.ux(i, j, f), hy);
        e.add(l.ux(i, j - 1, f), -hy);
    }
    if i == 0 {
        e.add(l.uy(0, j, f), 2.0 * hx);
        e.add_const(-2.0 * hx * f(0, j)[1]);
    } else if i + 1 == nx {
        e.add_const(2.0 * hx * f(i, j)[1]);
        e.add(l.uy(i - 1, j, f), -2.0 * hx);
    } else {
        e.add(l.uy(i, j, f), hx);
        e.add(l.uy(i - 1, j, f), -hx);
    }
    e
}

fn check_mu(mu: &ScalarField2D) -> Result<()> {
    let g = mu.grid();
    if g.nx < 8 || g.ny < 8 {
        return Err(Error::Precondition(format!(
            "Stokes solves need at least 8x8 nodes, got {}x{}",
            g.nx, g.ny
        )));
    }
    let m = mu.min();
    if m <= 0.0 {
        return Err(Error::Precondition(format!("shear modulus must be positive, min is {m}")));
    }
    Ok(())
}

fn zero_trace(_: usize, _: usize) -> [f64; 2] {
    [0.0, 0.0]
}

/// Assembled and factorized saddle-point operator for one modulus field.
pub struct StokesOperator {
    grid: Grid2D,
    mu: ScalarField2D,
    layout: Layout,
    matrix: SparseColMat<usize, f64>,
    lu: Lu<usize, f64>,
    pscale: f64,
}

impl std::fmt::Debug for StokesOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StokesOperator")
            .field("grid", &self.grid)
            .field("unknowns", &self.layout.size())
            .finish()
    }
}

/// Displacement and pressure of one solve, both at the grid nodes.
#[derive(Debug, Clone)]
pub struct StokesSolution {
    pub u: VectorField2D,
    pub p: ScalarField2D,
    /// `sqrt(Σ_cells |c| div²)` of the staggered field.
    pub divergence_norm: f64,
    /// Number of triangular solves (1 plus refinement steps).
    pub iterations: usize,
    /// Relative algebraic residual of the saddle-point system.
    pub residual: f64,
    /// Face unknowns, kept for exact strain contractions.
    faces: Vec<f64>,
}

/// Forward problem data.
#[derive(Debug, Clone)]
pub struct StokesProblem<'a> {
    pub mu: &'a ScalarField2D,
    pub bc: &'a BoundaryCondition,
    pub body_force: Option<&'a VectorField2D>,
}

impl StokesOperator {
    pub fn new(mu: &ScalarField2D) -> Result<Self> {
        check_mu(mu)?;
        let grid = *mu.grid();
        let layout = Layout::new(&grid);
        let matrix = assemble(&grid, &layout, mu)?;
        let symbolic = SymbolicLu::try_new(matrix.symbolic()).map_err(|e| Error::Solver {
            message: format!("symbolic factorization failed: {e:?}"),
            residual_history: vec![],
        })?;
        let lu = Lu::try_new_with_symbolic(symbolic, matrix.as_ref()).map_err(|e| Error::Solver {
            message: format!("sparse LU failed: {e:?}"),
            residual_history: vec![],
        })?;
        Ok(Self {
            grid,
            mu: mu.clone(),
            layout,
            matrix,
            lu,
            pscale: (grid.dx * grid.dy).sqrt(),
        })
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn mu(&self) -> &ScalarField2D {
        &self.mu
    }

    /// Number of rows of the saddle-point system.
    pub fn size(&self) -> usize {
        self.layout.size()
    }

    /// Solves with Dirichlet data `bc` and body force `b` (`None` = 0).
    pub fn solve(&self, bc: &BoundaryCondition, body_force: Option<&VectorField2D>) -> Result<StokesSolution> {
        if bc.grid() != &self.grid {
            return Err(Error::Precondition("boundary data lives on a different grid".into()));
        }
        if let Some(b) = body_force {
            if b.grid() != &self.grid {
                return Err(Error::Precondition("body force lives on a different grid".into()));
            }
        }
        bc.check_compatible()?;
        let rhs = self.rhs(bc, body_force);
        let (x, iterations, residual) = self.solve_system(&rhs)?;
        Ok(self.finish(bc, x, iterations, residual))
    }

    /// Adjoint solve: zero Dirichlet data and `∇·(μDv) + ∇q = r`.
    pub fn solve_adjoint(&self, r: &VectorField2D) -> Result<StokesSolution> {
        self.solve(&BoundaryCondition::zero(&self.grid), Some(&r.scale(-1.0)))
    }

    fn rhs(&self, bc: &BoundaryCondition, body_force: Option<&VectorField2D>) -> Vec<f64> {
        let (g, l) = (&self.grid, &self.layout);
        let f = |i: usize, j: usize| bc.value(i, j);
        let mu = self.mu.values();
        let mut rhs = vec![0.0; l.size()];
        for j in 0..g.ny - 1 {
            for i in 0..g.nx - 1 {
                let (exx, eyy, div) = cell_strains(g, l, i, j, &f);
                let c = g.dx * g.dy * cell_mu(g, mu, i, j);
                for e in [exx, eyy] {
                    for (k, a) in e.terms() {
                        rhs[k] -= 2.0 * c * e.c0 * a;
                    }
                }
                if let Some(p) = l.pressure(i, j) {
                    rhs[p] = -g.dx * g.dy * div.c0 / self.pscale;
                }
            }
        }
        for j in 0..g.ny {
            for i in 0..g.nx {
                let e = node_shear(g, l, i, j, &f);
                let c = 2.0 * g.weight(i, j) * mu[g.index(i, j)];
                for (k, a) in e.terms() {
                    rhs[k] -= 2.0 * c * e.c0 * a;
                }
            }
        }
        if let Some(b) = body_force {
            let (bx, by) = (b.x().values(), b.y().values());
            for j in 1..g.ny - 1 {
                for i in 1..g.nx - 1 {
                    let n = g.index(i, j);
                    let w = 0.5 * g.weight(i, j);
                    for face in [l.ux(i, j, &zero_trace), l.ux(i, j - 1, &zero_trace)] {
                        if let Face::Unknown(k) = face {
                            rhs[k] += w * bx[n];
                        }
                    }
                    for face in [l.uy(i, j, &zero_trace), l.uy(i - 1, j, &zero_trace)] {
                        if let Face::Unknown(k) = face {
                            rhs[k] += w * by[n];
                        }
                    }
                }
            }
        }
        rhs
    }

    fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let m = self.matrix.as_ref();
        let (cp, ri, v) = (m.symbolic().col_ptr(), m.symbolic().row_idx(), m.val());
        let mut y = vec![0.0; x.len()];
        for (c, &xc) in x.iter().enumerate() {
            for k in cp[c]..cp[c + 1] {
                y[ri[k]] += v[k] * xc;
            }
        }
        y
    }

    fn apply_lu(&self, b: &[f64]) -> Vec<f64> {
        let mut m = Mat::<f64>::from_fn(b.len(), 1, |i, _| b[i]);
        self.lu.solve_in_place(m.as_mut());
        (0..b.len()).map(|i| m[(i, 0)]).collect()
    }

    fn solve_system(&self, rhs: &[f64]) -> Result<(Vec<f64>, usize, f64)> {
        let bnorm = norm(rhs);
        if bnorm == 0.0 {
            return Ok((vec![0.0; rhs.len()], 0, 0.0));
        }
        let mut x = self.apply_lu(rhs);
        let mut history = Vec::new();
        let mut iterations = 1;
        loop {
            let ax = self.matvec(&x);
            let r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
            let rel = norm(&r) / bnorm;
            history.push(rel);
            if !rel.is_finite() {
                return Err(Error::Solver {
                    message: "non-finite residual".into(),
                    residual_history: history,
                });
            }
            if rel <= 1e-12 || iterations >= 3 {
                if rel > RESIDUAL_TOL {
                    return Err(Error::Solver {
                        message: format!("relative residual {rel:e} above {RESIDUAL_TOL:e}"),
                        residual_history: history,
                    });
                }
                log::debug!("stokes: {iterations} solve(s), residual history {history:?}");
                return Ok((x, iterations, rel));
            }
            let dx = self.apply_lu(&r);
            for (a, d) in x.iter_mut().zip(dx) {
                *a += d;
            }
            iterations += 1;
        }
    }

    fn finish(&self, bc: &BoundaryCondition, x: Vec<f64>, iterations: usize, residual: f64) -> StokesSolution {
        let (g, l) = (&self.grid, &self.layout);
        let f = |i: usize, j: usize| bc.value(i, j);
        let u = nodal_velocity(g, l, &x, &f);

        let mut div2 = 0.0;
        let mut pc = vec![0.0; l.ncell];
        for j in 0..g.ny - 1 {
            for i in 0..g.nx - 1 {
                let (_, _, div) = cell_strains(g, l, i, j, &f);
                div2 += g.dx * g.dy * div.eval(&x).powi(2);
                pc[j * (g.nx - 1) + i] = l.pressure(i, j).map_or(0.0, |p| x[p] / self.pscale);
            }
        }
        let mut p = vec![0.0; g.len()];
        for j in 0..g.ny {
            for i in 0..g.nx {
                let (mut s, mut n) = (0.0, 0.0);
                for (ci, cj) in [(i, j), (i.wrapping_sub(1), j), (i, j.wrapping_sub(1)), (i.wrapping_sub(1), j.wrapping_sub(1))] {
                    if ci < g.nx - 1 && cj < g.ny - 1 {
                        s += pc[cj * (g.nx - 1) + ci];
                        n += 1.0;
                    }
                }
                p[g.index(i, j)] = s / n;
            }
        }
        let mut p = ScalarField2D::from_vec_unchecked(*g, p);
        let mean = p.mean();
        p = p.map(|v| v - mean);

        StokesSolution {
            u,
            p,
            divergence_norm: div2.sqrt(),
            iterations,
            residual,
            faces: x[..l.nvel()].to_vec(),
        }
    }

    /// Riesz representative (nodal, trapezoid inner product) of
    /// `h ↦ Σ h·(Du : Dv)` for the discrete strains of two solutions.
    ///
    /// With `u` a forward solution and `v` the adjoint solution for the
    /// residual `u − u_meas`, this is the exact gradient of the nodal misfit
    /// `Σ ω |u − u_meas|²` with respect to the nodal modulus.
    pub fn strain_contraction(&self, u: &StokesSolution, bc_u: &BoundaryCondition, v: &StokesSolution) -> ScalarField2D {
        let (g, l) = (&self.grid, &self.layout);
        let fu = |i: usize, j: usize| bc_u.value(i, j);
        let mut acc = vec![0.0; g.len()];
        let area = g.dx * g.dy;
        for j in 0..g.ny - 1 {
            for i in 0..g.nx - 1 {
                let (exx, eyy, _) = cell_strains(g, l, i, j, &fu);
                let s = exx.eval(&u.faces) * exx.eval_linear(&v.faces) + eyy.eval(&u.faces) * eyy.eval_linear(&v.faces);
                for (a, b) in [(i, j), (i + 1, j), (i, j + 1), (i + 1, j + 1)] {
                    acc[g.index(a, b)] += area * s;
                }
            }
        }
        let mut out = vec![0.0; g.len()];
        for j in 0..g.ny {
            for i in 0..g.nx {
                let e = node_shear(g, l, i, j, &fu);
                let w = g.weight(i, j);
                let n = g.index(i, j);
                out[n] = acc[n] / w + 8.0 * e.eval(&u.faces) * e.eval_linear(&v.faces);
            }
        }
        ScalarField2D::from_vec_unchecked(*g, out)
    }

    /// Derivative of the forward map at `u` in the modulus direction `h`
    /// (nodal, zero on the boundary).
    pub fn linearized_response(&self, u: &StokesSolution, bc_u: &BoundaryCondition, h: &ScalarField2D) -> Result<VectorField2D> {
        if h.grid() != &self.grid || bc_u.grid() != &self.grid {
            return Err(Error::Precondition("direction lives on a different grid".into()));
        }
        let (g, l) = (&self.grid, &self.layout);
        let fu = |i: usize, j: usize| bc_u.value(i, j);
        let hv = h.values();
        let mut rhs = vec![0.0; l.size()];
        let area = g.dx * g.dy;
        for j in 0..g.ny - 1 {
            for i in 0..g.nx - 1 {
                let (exx, eyy, _) = cell_strains(g, l, i, j, &fu);
                let c = 2.0 * area * cell_mu(g, hv, i, j);
                for e in [exx, eyy] {
                    let s = c * e.eval(&u.faces);
                    for (k, a) in e.terms() {
                        rhs[k] -= s * a;
                    }
                }
            }
        }
        for j in 0..g.ny {
            for i in 0..g.nx {
                let e = node_shear(g, l, i, j, &fu);
                let s = 4.0 * g.weight(i, j) * hv[g.index(i, j)] * e.eval(&u.faces);
                for (k, a) in e.terms() {
                    rhs[k] -= s * a;
                }
            }
        }
        let (x, _, _) = self.solve_system(&rhs)?;
        Ok(nodal_velocity(g, l, &x, &zero_trace))
    }

    /// Writes the assembled matrix in Matrix Market coordinate format.
    pub fn write_matrix_market(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let m = self.matrix.as_ref();
        let (cp, ri, v) = (m.symbolic().col_ptr(), m.symbolic().row_idx(), m.val());
        let n = self.layout.size();
        let mut s = String::from("%%MatrixMarket matrix coordinate real general\n");
        let _ = writeln!(s, "{n} {n} {}", v.len());
        for c in 0..n {
            for k in cp[c]..cp[c + 1] {
                let _ = writeln!(s, "{} {} {:e}", ri[k] + 1, c + 1, v[k]);
            }
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

fn cell_mu(g: &Grid2D, mu: &[f64], i: usize, j: usize) -> f64 {
    0.25 * (mu[g.index(i, j)] + mu[g.index(i + 1, j)] + mu[g.index(i, j + 1)] + mu[g.index(i + 1, j + 1)])
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn nodal_velocity(g: &Grid2D, l: &Layout, x: &[f64], f: &dyn Fn(usize, usize) -> [f64; 2]) -> VectorField2D {
    let val = |face: Face| match face {
        Face::Unknown(k) => x[k],
        Face::Fixed(v) => v,
    };
    let mut ux = vec![0.0; g.len()];
    let mut uy = vec![0.0; g.len()];
    for j in 0..g.ny {
        for i in 0..g.nx {
            let n = g.index(i, j);
            if g.is_boundary(i, j) {
                [ux[n], uy[n]] = f(i, j);
            } else {
                ux[n] = 0.5 * (val(l.ux(i, j, f)) + val(l.ux(i, j - 1, f)));
                uy[n] = 0.5 * (val(l.uy(i, j, f)) + val(l.uy(i - 1, j, f)));
            }
        }
    }
    VectorField2D::new(
        ScalarField2D::from_vec_unchecked(*g, ux),
        ScalarField2D::from_vec_unchecked(*g, uy),
    )
    .expect("same grid")
}

fn assemble(g: &Grid2D, l: &Layout, mu: &ScalarField2D) -> Result<SparseColMat<usize, f64>> {
    let mu = mu.values();
    let mut t: Vec<Triplet<usize, usize, f64>> = Vec::with_capacity(40 * l.size());
    let quad = |e: &Affine, c: f64, t: &mut Vec<Triplet<usize, usize, f64>>| {
        for (a, ca) in e.terms() {
            for (b, cb) in e.terms() {
                t.push(Triplet::new(a, b, 2.0 * c * ca * cb));
            }
        }
    };
    let area = g.dx * g.dy;
    let pscale = area.sqrt();
    for j in 0..g.ny - 1 {
        for i in 0..g.nx - 1 {
            let (exx, eyy, div) = cell_strains(g, l, i, j, &zero_trace);
            let c = area * cell_mu(g, mu, i, j);
            quad(&exx, c, &mut t);
            quad(&eyy, c, &mut t);
            if let Some(p) = l.pressure(i, j) {
                for (k, a) in div.terms() {
                    let v = area * a / pscale;
                    t.push(Triplet::new(p, k, v));
                    t.push(Triplet::new(k, p, v));
                }
            }
        }
    }
    for j in 0..g.ny {
        for i in 0..g.nx {
            let e = node_shear(g, l, i, j, &zero_trace);
            quad(&e, 2.0 * g.weight(i, j) * mu[g.index(i, j)], &mut t);
        }
    }
    SparseColMat::try_new_from_triplets(l.size(), l.size(), &t).map_err(|e| Error::Solver {
        message: format!("assembly failed: {e:?}"),
        residual_history: vec![],
    })
}

/// Solves the forward problem of a [`StokesProblem`].
pub fn solve_forward(problem: &StokesProblem) -> Result<StokesSolution> {
    StokesOperator::new(problem.mu)?.solve(problem.bc, problem.body_force)
}

/// Adjoint solve with homogeneous Dirichlet data and source `residual`.
pub fn solve_adjoint(mu: &ScalarField2D, residual: &VectorField2D) -> Result<StokesSolution> {
    if residual.grid() != mu.grid() {
        return Err(Error::Precondition("residual lives on a different grid".into()));
    }
    StokesOperator::new(mu)?.solve_adjoint(residual)
}

/// Pointwise symmetric gradient `(exx, eyy, exy)` of a nodal field, from
/// the finite-difference gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricGradient {
    pub xx: ScalarField2D,
    pub yy: ScalarField2D,
    pub xy: ScalarField2D,
}

pub fn symmetric_gradient(u: &VectorField2D) -> SymmetricGradient {
    let gx = u.x().gradient();
    let gy = u.y().gradient();
    SymmetricGradient {
        xx: gx.x().clone(),
        yy: gy.y().clone(),
        xy: gx.y().zip_map(gy.x(), |a, b| 0.5 * (a + b)),
    }
}

/// One level of the manufactured-solution refinement study.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct MmsLevel {
    pub n: usize,
    pub l2_error: f64,
    pub divergence_ratio: f64,
}

/// Exact field `(sin²πx sin2πy, −sin2πx sin²πy)` used by the study.
pub fn mms_velocity(x: f64, y: f64) -> [f64; 2] {
    use std::f64::consts::PI;
    let (sx, sy) = ((PI * x).sin(), (PI * y).sin());
    [sx * sx * (2.0 * PI * y).sin(), -(2.0 * PI * x).sin() * sy * sy]
}

/// Body force `−Δu` that makes [`mms_velocity`] a solution with `μ = 1`, `p = 0`.
pub fn mms_body_force(x: f64, y: f64) -> [f64; 2] {
    use std::f64::consts::PI;
    let p2 = PI * PI;
    let (sx, sy) = ((PI * x).sin(), (PI * y).sin());
    let lap_x = 2.0 * p2 * (2.0 * PI * x).cos() * (2.0 * PI * y).sin() - 4.0 * p2 * sx * sx * (2.0 * PI * y).sin();
    let lap_y = 4.0 * p2 * (2.0 * PI * x).sin() * sy * sy - 2.0 * p2 * (2.0 * PI * x).sin() * (2.0 * PI * y).cos();
    [-lap_x, -lap_y]
}

/// Runs the manufactured-solution study on unit-square grids with `n`
/// cells per side (so `n + 1` nodes).
pub fn mms_study(cells: &[usize]) -> Result<Vec<MmsLevel>> {
    cells
        .iter()
        .map(|&n| {
            let g = Grid2D::unit_square(n + 1)?;
            let mu = ScalarField2D::constant(g, 1.0);
            let b = VectorField2D::from_fn(g, mms_body_force);
            let bc = BoundaryCondition::zero(&g);
            let sol = StokesOperator::new(&mu)?.solve(&bc, Some(&b))?;
            let exact = VectorField2D::from_fn(g, mms_velocity);
            Ok(MmsLevel {
                n,
                l2_error: sol.u.sub(&exact).norm_l2(),
                divergence_ratio: sol.divergence_norm / sol.u.norm_l2(),
            })
        })
        .collect()
}

/// Observed orders `log2(e_k / e_{k+1})` between successive levels.
pub fn observed_orders(levels: &[MmsLevel]) -> Vec<f64> {
    levels
        .windows(2)
        .map(|w| (w[0].l2_error / w[1].l2_error).ln() / (w[1].n as f64 / w[0].n as f64).ln())
        .collect()
}
