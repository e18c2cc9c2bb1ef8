//! Stage commands and the end-to-end experiment.
//!
//! Every stage reads its inputs from and writes its outputs to
//! `config.output_dir`, and records file checksums plus stage diagnostics in
//! `manifest.json`. Running the four stages in sequence is the same as
//! [`run_pipeline`], which additionally writes `summary.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::displacement::{initial_guess, minimize_displacement, relative_error_on};
use crate::error::{Error, Result};
use crate::grid::{Grid2D, ScalarField2D, VectorField2D};
use crate::io::{read_f2d, read_mask_pgm, read_vector, write_f2d, write_mask_pgm, write_pgm16, write_vector};
use crate::mollifier::Mollifier;
use crate::phantom::{generate_epsilon, generate_mu, make_boundary_condition, BoundaryCondition, BoundaryMode, BoundaryRecord};
use crate::report::{DescentReport, Termination};
use crate::shear::{interior_relative_error, recover_mu};
use crate::stokes::{mms_study, observed_orders, MmsLevel, StokesOperator};
use crate::warp::warp_image;

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Contents of `manifest.json`. Holds no timings, so it is byte-identical
/// across reruns of the same configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: BTreeMap<String, String>,
    pub stages: BTreeMap<String, serde_json::Value>,
}

struct Workspace {
    dir: PathBuf,
    manifest: Manifest,
    config_sha256: String,
}

impl Workspace {
    fn open(cfg: &PipelineConfig) -> Result<Self> {
        let dir = cfg.output_dir.clone();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mpath = dir.join("manifest.json");
        let manifest = if mpath.exists() {
            read_json(&mpath)?
        } else {
            Manifest::default()
        };
        Ok(Self {
            dir,
            manifest,
            config_sha256: sha256_hex(cfg.to_json().as_bytes()),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn record(&mut self, name: &str) -> Result<()> {
        let p = self.path(name);
        let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
        self.manifest.files.insert(name.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    fn scalar(&mut self, name: &str, f: &ScalarField2D) -> Result<()> {
        write_f2d(self.path(name), f)?;
        self.record(name)
    }

    fn vector(&mut self, base: &str, f: &VectorField2D) -> Result<()> {
        write_vector(self.path(base), f)?;
        self.record(&format!("{base}.ux"))?;
        self.record(&format!("{base}.uy"))
    }

    fn preview(&mut self, name: &str, f: &ScalarField2D) -> Result<()> {
        write_pgm16(self.path(name), f)?;
        self.record(name)?;
        self.record(&format!("{name}.range"))
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        write_json(&self.path(name), value)?;
        self.record(name)
    }

    fn report(&mut self, name: &str, r: &DescentReport) -> Result<()> {
        r.write_json_lines(self.path(name))?;
        self.record(name)
    }

    fn finish<T: Serialize>(mut self, stage: &str, record: &T) -> Result<()> {
        let mut v = serde_json::to_value(record)?;
        if let serde_json::Value::Object(m) = &mut v {
            m.insert("config_sha256".into(), self.config_sha256.clone().into());
        }
        self.manifest.stages.insert(stage.to_string(), v);
        let p = self.path("manifest.json");
        write_json(&p, &self.manifest)
    }

    fn read_scalar(&self, name: &str) -> Result<ScalarField2D> {
        read_f2d(self.path(name))
    }

    fn read_vector(&self, base: &str) -> Result<VectorField2D> {
        read_vector(self.path(base))
    }

    fn has(&self, name: &str) -> bool {
        self.path(name).exists()
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&s)?)
}

fn same_grid(expected: &Grid2D, f: &Grid2D, what: &str) -> Result<()> {
    if f != expected {
        return Err(Error::Config(format!(
            "{what} is {}x{} but the configuration asks for {}x{}",
            f.nx, f.ny, expected.nx, expected.ny
        )));
    }
    Ok(())
}

fn boundary_condition(cfg: &PipelineConfig, grid: &Grid2D) -> Result<BoundaryCondition> {
    match cfg.boundary.mode {
        BoundaryMode::CustomTrace => {
            let path = cfg
                .boundary
                .trace_file
                .as_ref()
                .ok_or_else(|| Error::Config("custom_trace needs boundary.trace_file".into()))?;
            let rec: BoundaryRecord = read_json(path)?;
            same_grid(grid, &rec.grid, "the custom trace")?;
            BoundaryCondition::from_record(&rec)
        }
        mode => make_boundary_condition(grid, mode, cfg.boundary.amplitude),
    }
}

fn fraction(mask: &[bool]) -> f64 {
    mask.iter().filter(|&&m| m).count() as f64 / mask.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomRecord {
    pub seed: u64,
    pub epsilon_range: [f64; 2],
    pub mu_range: [f64; 2],
    pub boundary_max: f64,
}

/// Writes `epsilon.f2d`, `mu.f2d` and `bc.json` (plus previews).
pub fn run_phantom(cfg: &PipelineConfig) -> Result<PhantomRecord> {
    cfg.validate()?;
    let grid = cfg.grid.grid()?;
    let mut ws = Workspace::open(cfg)?;
    let eps = generate_epsilon(&grid, &cfg.epsilon_spec())?;
    let mu = generate_mu(&grid, &cfg.mu)?;
    let bc = boundary_condition(cfg, &grid)?;
    ws.scalar("epsilon.f2d", &eps)?;
    ws.scalar("mu.f2d", &mu)?;
    ws.json("bc.json", &bc.to_record())?;
    ws.preview("epsilon.pgm", &eps)?;
    ws.preview("mu.pgm", &mu)?;
    let rec = PhantomRecord {
        seed: cfg.seed,
        epsilon_range: [eps.min(), eps.max()],
        mu_range: [mu.min(), mu.max()],
        boundary_max: bc.max_magnitude(),
    };
    log::info!("phantom: epsilon in [{:.4}, {:.4}], mu in [{:.4}, {:.4}]", rec.epsilon_range[0], rec.epsilon_range[1], rec.mu_range[0], rec.mu_range[1]);
    ws.finish("phantom", &rec)?;
    Ok(rec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardRecord {
    pub divergence_norm: f64,
    /// `‖∇·u‖ / ‖u‖`, zero for a zero solution.
    pub divergence_ratio: f64,
    pub solver_residual: f64,
    pub warp_valid_fraction: f64,
    pub warp_unconverged: usize,
}

fn read_bc(ws: &Workspace, grid: &Grid2D) -> Result<BoundaryCondition> {
    let rec: BoundaryRecord = read_json(&ws.path("bc.json"))?;
    same_grid(grid, &rec.grid, "bc.json")?;
    BoundaryCondition::from_record(&rec)
}

/// Solves the Stokes problem on the phantom and deforms the image:
/// `u_true`, `p.f2d`, `epsilon_u.f2d`, `mask.pgm`.
pub fn run_forward(cfg: &PipelineConfig) -> Result<ForwardRecord> {
    cfg.validate()?;
    let grid = cfg.grid.grid()?;
    let mut ws = Workspace::open(cfg)?;
    let eps = ws.read_scalar("epsilon.f2d")?;
    let mu = ws.read_scalar("mu.f2d")?;
    same_grid(&grid, eps.grid(), "epsilon.f2d")?;
    same_grid(&grid, mu.grid(), "mu.f2d")?;
    let bc = read_bc(&ws, &grid)?;
    let sol = StokesOperator::new(&mu)?.solve(&bc, None)?;
    let unorm = sol.u.norm_l2();
    let ratio = if unorm > 0.0 { sol.divergence_norm / unorm } else { 0.0 };
    if ratio > 1e-6 {
        return Err(Error::Solver {
            message: format!("divergence ratio {ratio:e} above 1e-6"),
            residual_history: vec![sol.residual],
        });
    }
    let warped = warp_image(&eps, &sol.u)?;
    ws.vector("u_true", &sol.u)?;
    ws.scalar("p.f2d", &sol.p)?;
    ws.scalar("epsilon_u.f2d", &warped.image)?;
    write_mask_pgm(ws.path("mask.pgm"), &grid, &warped.mask)?;
    ws.record("mask.pgm")?;
    ws.preview("epsilon_u.pgm", &warped.image)?;
    let rec = ForwardRecord {
        divergence_norm: sol.divergence_norm,
        divergence_ratio: ratio,
        solver_residual: sol.residual,
        warp_valid_fraction: fraction(&warped.mask),
        warp_unconverged: warped.unconverged,
    };
    log::info!("forward: |div u|/|u| = {ratio:e}, max|u| = {:e}", sol.u.max_norm());
    ws.finish("forward", &rec)?;
    Ok(rec)
}

#[derive(Debug, Clone, Serialize)]
pub struct MmsRecord {
    pub levels: Vec<MmsLevel>,
    pub orders: Vec<f64>,
}

/// Manufactured-solution refinement study on 32/64/128 cells (`mms.json`).
pub fn run_mms(cfg: &PipelineConfig) -> Result<MmsRecord> {
    let mut ws = Workspace::open(cfg)?;
    let levels = mms_study(&[32, 64, 128])?;
    let orders = observed_orders(&levels);
    let rec = MmsRecord { levels, orders };
    ws.json("mms.json", &rec)?;
    ws.finish("mms", &rec)?;
    Ok(rec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub condition_range: [f64; 2],
    pub initializer_valid_fraction: f64,
    pub iterations: usize,
    pub termination: Termination,
    pub objective_initial: f64,
    pub objective_final: f64,
    /// Relative L² errors against `u_true` on the initializer mask, when
    /// the ground truth is present.
    pub initializer_error: Option<f64>,
    pub displacement_error: Option<f64>,
}

/// Structure matrix, closed-form initializer and discrepancy descent:
/// `u_init`, `u_rec`, `cond.f2d`, `estimate.report.jsonl`.
pub fn run_estimate(cfg: &PipelineConfig) -> Result<EstimateRecord> {
    cfg.validate()?;
    let grid = cfg.grid.grid()?;
    let mut ws = Workspace::open(cfg)?;
    let eps = ws.read_scalar("epsilon.f2d")?;
    let eps_u = ws.read_scalar("epsilon_u.f2d")?;
    same_grid(&grid, eps.grid(), "epsilon.f2d")?;
    same_grid(&grid, eps_u.grid(), "epsilon_u.f2d")?;
    let valid = if ws.has("mask.pgm") {
        Some(read_mask_pgm(ws.path("mask.pgm"), &grid)?)
    } else {
        None
    };
    let est = &cfg.estimation;
    let w = Mollifier::new(est.delta)?;
    let ig = initial_guess(&eps, &eps_u, &w, est.cond_max)?;
    let (u_rec, report) = minimize_displacement(&eps, &eps_u, valid.as_deref(), &ig.u, &est.descent)?;
    let cond = &ig.structure.condition_number;
    ws.vector("u_init", &ig.u)?;
    ws.vector("u_rec", &u_rec)?;
    ws.scalar("cond.f2d", cond)?;
    ws.preview("cond.pgm", cond)?;
    ws.report("estimate.report.jsonl", &report)?;
    let (initializer_error, displacement_error) = if ws.has("u_true.ux") {
        let truth = ws.read_vector("u_true")?;
        (
            Some(relative_error_on(&ig.u, &truth, &ig.mask)),
            Some(relative_error_on(&u_rec, &truth, &ig.mask)),
        )
    } else {
        (None, None)
    };
    let rec = EstimateRecord {
        condition_range: [cond.min(), cond.max()],
        initializer_valid_fraction: fraction(&ig.mask),
        iterations: report.iterations,
        termination: report.termination,
        objective_initial: report.initial_objective(),
        objective_final: report.final_objective(),
        initializer_error,
        displacement_error,
    };
    log::info!(
        "estimate: I {:e} -> {:e} in {} iterations ({}), errors {:?} -> {:?}",
        rec.objective_initial,
        rec.objective_final,
        rec.iterations,
        rec.termination,
        initializer_error,
        displacement_error
    );
    ws.finish("estimate", &rec)?;
    Ok(rec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRecord {
    pub source: String,
    pub objective_initial: f64,
    pub objective_final: f64,
    pub iterations: usize,
    pub termination: Termination,
    pub gauge_factor: f64,
    pub mu_range: [f64; 2],
    /// Interior relative L² error against `mu.f2d`, when present.
    pub interior_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoverRecord {
    pub estimated: RecoveryRecord,
    /// Recovery from the true displacement, when `u_true` is present.
    pub inverse_crime: Option<RecoveryRecord>,
}

fn recover_one(
    ws: &mut Workspace,
    cfg: &PipelineConfig,
    bc: &BoundaryCondition,
    truth: Option<&ScalarField2D>,
    source: &str,
    suffix: &str,
) -> Result<RecoveryRecord> {
    let grid = *bc.grid();
    let u = ws.read_vector(source)?;
    same_grid(&grid, u.grid(), source)?;
    let r = recover_mu(&u, bc, &cfg.recovery.to_recovery(&grid))?;
    ws.scalar(&format!("mu_rec{suffix}.f2d"), &r.mu)?;
    ws.preview(&format!("mu_rec{suffix}.pgm"), &r.mu)?;
    ws.report(&format!("recover{suffix}.report.jsonl"), &r.report)?;
    let rec = RecoveryRecord {
        source: source.to_string(),
        objective_initial: r.report.initial_objective(),
        objective_final: r.report.final_objective(),
        iterations: r.report.iterations,
        termination: r.report.termination,
        gauge_factor: r.gauge_factor,
        mu_range: [r.mu.min(), r.mu.max()],
        interior_error: truth.map(|t| interior_relative_error(&r.mu, t, cfg.recovery.collar)),
    };
    log::info!("recover from {source}: K {:e} -> {:e}, interior error {:?}", rec.objective_initial, rec.objective_final, rec.interior_error);
    Ok(rec)
}

/// Shear-modulus recovery from `u_rec` (`mu_rec.f2d`,
/// `recover.report.jsonl`) and, when available, from `u_true`
/// (`mu_rec_true.f2d`, `recover_true.report.jsonl`).
pub fn run_recover(cfg: &PipelineConfig) -> Result<RecoverRecord> {
    cfg.validate()?;
    let grid = cfg.grid.grid()?;
    let mut ws = Workspace::open(cfg)?;
    let bc = read_bc(&ws, &grid)?;
    let truth = if ws.has("mu.f2d") { Some(ws.read_scalar("mu.f2d")?) } else { None };
    let estimated = recover_one(&mut ws, cfg, &bc, truth.as_ref(), "u_rec", "")?;
    let inverse_crime = if ws.has("u_true.ux") {
        Some(recover_one(&mut ws, cfg, &bc, truth.as_ref(), "u_true", "_true")?)
    } else {
        None
    };
    let rec = RecoverRecord { estimated, inverse_crime };
    ws.finish("recover", &rec)?;
    Ok(rec)
}

/// The six headline numbers of a pipeline run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub divergence_ratio: f64,
    pub initializer_error: f64,
    pub displacement_error: f64,
    /// `I(u_init) / I(u_rec)`.
    pub discrepancy_reduction: f64,
    pub mu_error_inverse_crime: f64,
    pub mu_error_pipeline: f64,
}

impl Metrics {
    pub fn to_array(&self) -> [f64; 6] {
        [
            self.divergence_ratio,
            self.initializer_error,
            self.displacement_error,
            self.discrepancy_reduction,
            self.mu_error_inverse_crime,
            self.mu_error_pipeline,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub metrics: Metrics,
    pub phantom: PhantomRecord,
    pub forward: ForwardRecord,
    pub estimate: EstimateRecord,
    pub recover: RecoverRecord,
    /// Wall-clock seconds per stage; the only non-reproducible fields.
    pub timings_s: BTreeMap<String, f64>,
}

fn missing(what: &str) -> Error {
    Error::Estimation(format!("{what} was not produced"))
}

/// All four stages followed by `summary.json`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Summary> {
    cfg.validate()?;
    let mut timings = BTreeMap::new();
    let start = Instant::now();
    let mut t = Instant::now();
    let mut lap = |name: &str, timings: &mut BTreeMap<String, f64>| {
        timings.insert(name.to_string(), t.elapsed().as_secs_f64());
        t = Instant::now();
    };
    let phantom = run_phantom(cfg)?;
    lap("phantom", &mut timings);
    let forward = run_forward(cfg)?;
    lap("forward", &mut timings);
    let estimate = run_estimate(cfg)?;
    lap("estimate", &mut timings);
    let recover = run_recover(cfg)?;
    lap("recover", &mut timings);
    timings.insert("total".into(), start.elapsed().as_secs_f64());

    let inverse = recover.inverse_crime.as_ref().ok_or_else(|| missing("inverse-crime recovery"))?;
    let metrics = Metrics {
        divergence_ratio: forward.divergence_ratio,
        initializer_error: estimate.initializer_error.ok_or_else(|| missing("initializer error"))?,
        displacement_error: estimate.displacement_error.ok_or_else(|| missing("displacement error"))?,
        discrepancy_reduction: estimate.objective_initial / estimate.objective_final,
        mu_error_inverse_crime: inverse.interior_error.ok_or_else(|| missing("mu error"))?,
        mu_error_pipeline: recover.estimated.interior_error.ok_or_else(|| missing("mu error"))?,
    };
    let summary = Summary {
        metrics,
        phantom,
        forward,
        estimate,
        recover,
        timings_s: timings,
    };
    let path = cfg.output_dir.join("summary.json");
    write_json(&path, &summary)?;
    Ok(summary)
}
