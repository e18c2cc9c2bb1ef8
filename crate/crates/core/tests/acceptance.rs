//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Runs in a few minutes at 64² and 128².

use std::f64::consts::PI;
use std::path::Path;
use std::time::Instant;

use octelast::config::PipelineConfig;
use octelast::displacement::{
    compute_structure_matrix, condition_number, discrepancy, discrepancy_gradient, initial_guess, relative_error_on,
};
use octelast::io::{read_f2d, read_vector};
use octelast::phantom::{generate_mu, make_boundary_condition, BoundaryMode, InclusionSpec};
use octelast::pipeline::{run_pipeline, Summary};
use octelast::report::DescentReport;
use octelast::shear::{gradient_k, interior_relative_error, objective_k, recover_mu, Gauge, MuRecoveryConfig};
use octelast::stokes::{mms_study, observed_orders, StokesOperator};
use octelast::warp::{first_order_residual, warp_image};
use octelast::{Grid2D, Mollifier, ScalarField2D, VectorField2D};

struct Outcome {
    id: u8,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn line(o: &Outcome) {
    println!(
        "{} [{:>2}] {:<28} {}",
        if o.pass { "PASS" } else { "FAIL" },
        o.id,
        o.name,
        o.detail
    );
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

fn bump(g: Grid2D, r0: f64) -> ScalarField2D {
    ScalarField2D::from_fn(g, move |x, y| {
        let r2 = ((x - 0.5).powi(2) + (y - 0.5).powi(2)) / (r0 * r0);
        if r2 < 1.0 {
            (1.0 - r2).powi(3)
        } else {
            0.0
        }
    })
}

fn smooth_image(g: Grid2D) -> ScalarField2D {
    ScalarField2D::from_fn(g, |x, y| (2.0 * PI * x).sin() * (PI * y).cos() + 0.3 * x * y)
}

fn pipeline(n: usize, seed: Option<u64>, threads: usize, out: &Path) -> Summary {
    let cfg = PipelineConfig::default()
        .with_overrides(seed, Some(n), Some(out.to_path_buf()))
        .expect("acceptance config");
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool")
        .install(|| run_pipeline(&cfg))
        .expect("pipeline run")
}

fn read_report(path: &Path) -> DescentReport {
    let text = std::fs::read_to_string(path).expect("report");
    let objective_history: Vec<f64> = text
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["objective"].as_f64().unwrap())
        .collect();
    DescentReport {
        iterations: objective_history.len() - 1,
        objective_history,
        gradient_norm_history: Vec::new(),
        step_sizes: Vec::new(),
        termination: octelast::report::Termination::Tolerance,
    }
}

fn mms(divergences: &mut Vec<f64>) -> Outcome {
    let t = Instant::now();
    let levels = mms_study(&[32, 64, 128]).expect("mms study");
    let orders = observed_orders(&levels);
    let elapsed = secs(t);
    divergences.extend(levels.iter().map(|l| l.divergence_ratio));
    Outcome {
        id: 1,
        name: "stokes convergence order",
        pass: orders.iter().all(|&p| p >= 1.9) && elapsed <= 60.0,
        detail: format!("orders {orders:.3?} (>= 1.9), {elapsed:.1} s (<= 60)"),
    }
}

fn first_order() -> Outcome {
    let t = Instant::now();
    let g = Grid2D::unit_square(129).unwrap();
    let e = ScalarField2D::from_fn(g, |x, y| (2.0 * PI * x).sin() * (2.0 * PI * y).cos() + 0.5 * x * y);
    let u0 = VectorField2D::from_fn(g, |x, y| {
        [(PI * x).sin() * (PI * y).sin(), 0.5 * (PI * x).sin() * (2.0 * PI * y).sin()]
    });
    let psi = bump(g, 0.35);
    let r: Vec<f64> = [0.01, 0.005, 0.0025]
        .iter()
        .map(|&s| first_order_residual(&e, &u0.scale(s), &psi).unwrap())
        .collect();
    let ratios: Vec<f64> = r.windows(2).map(|w| w[0] / w[1]).collect();
    let elapsed = secs(t);
    Outcome {
        id: 3,
        name: "first-order expansion",
        pass: ratios.iter().all(|q| (3.2..=4.8).contains(q)) && elapsed <= 10.0,
        detail: format!("ratios {ratios:.3?} (in [3.2, 4.8]), {elapsed:.1} s (<= 10)"),
    }
}

fn structure(cond_range: [f64; 2]) -> Outcome {
    let g = Grid2D::unit_square(101).unwrap();
    let delta = 0.1;
    let w = Mollifier::new(delta).unwrap();
    let e = ScalarField2D::from_fn(g, |x, y| x * x + y * y);
    let s = compute_structure_matrix(&e, &w).unwrap();
    let mut worst: f64 = 0.0;
    for j in 34..66 {
        for i in 34..66 {
            let (px, py) = (g.x(i), g.y(j));
            let (mut o, mut norm) = ([0.0; 3], 0.0);
            for jj in 0..g.ny {
                for ii in 0..g.nx {
                    let (yx, yy) = (g.x(ii), g.y(jj));
                    let k = w.value((px - yx).hypot(py - yy)) * g.weight(ii, jj);
                    let d = [2.0 * yx, 2.0 * yy];
                    o[0] += k * d[0] * d[0];
                    o[1] += k * d[0] * d[1];
                    o[2] += k * d[1] * d[1];
                    norm += k;
                }
            }
            let o = o.map(|v| v / norm);
            let m = s.at(g.index(i, j));
            let scale = o[0].abs().max(o[2].abs());
            for c in 0..3 {
                worst = worst.max((m[c] - o[c]).abs() / scale);
            }
            let oc = condition_number(o[0], o[1], o[2]);
            worst = worst.max((s.condition_number.at(i, j) - oc).abs() / oc);
        }
    }
    let gs = Grid2D::unit_square(41).unwrap();
    let singular = [|x: f64, _: f64| x, |x: f64, y: f64| x + y].iter().all(|f| {
        let s = compute_structure_matrix(&ScalarField2D::from_fn(gs, f), &w).unwrap();
        (0..gs.len()).all(|k| s.is_singular(k))
    });
    let in_range = cond_range[0] >= 1.0 && cond_range[1] <= 5.0;
    Outcome {
        id: 4,
        name: "structure matrix",
        pass: worst <= 1e-6 && singular && in_range,
        detail: format!(
            "oracle rel {worst:.1e} (<= 1e-6), collinear singular {singular}, cond [{:.4}, {:.4}] (in [1, 5])",
            cond_range[0], cond_range[1]
        ),
    }
}

fn initializer(out: &Path, delta: f64, cond_max: f64) -> Outcome {
    let g = Grid2D::unit_square(101).unwrap();
    let a = 1e-3;
    let e = ScalarField2D::from_fn(g, |x, y| x * x + y * y);
    let eu = ScalarField2D::from_fn(g, |x, y| (x - a) * (x - a) + y * y);
    let ig = initial_guess(&e, &eu, &Mollifier::new(0.1).unwrap(), 1e6).unwrap();
    let mut worst: f64 = 0.0;
    for k in (0..g.len()).filter(|&k| ig.mask[k]) {
        let u = ig.u.at(k % g.nx, k / g.nx);
        worst = worst.max((u[0] - a).abs()).max(u[1].abs());
    }

    let eps = read_f2d(out.join("epsilon.f2d")).unwrap();
    let eps_u = read_f2d(out.join("epsilon_u.f2d")).unwrap();
    let truth = read_vector(out.join("u_true")).unwrap();
    let t = Instant::now();
    let ig = initial_guess(&eps, &eps_u, &Mollifier::new(delta).unwrap(), cond_max).unwrap();
    let elapsed = secs(t);
    let err = relative_error_on(&ig.u, &truth, &ig.mask);
    Outcome {
        id: 5,
        name: "initializer fidelity",
        pass: worst <= 1e-5 && err <= 0.35 && elapsed <= 30.0,
        detail: format!(
            "translation err {worst:.1e} (<= 1e-5), phantom err {err:.4} (<= 0.35), {elapsed:.1} s at {}² (<= 30)",
            eps.grid().nx
        ),
    }
}

fn discrepancy_fd() -> Outcome {
    let g = Grid2D::unit_square(65).unwrap();
    let e = smooth_image(g);
    let u = VectorField2D::from_fn(g, |x, y| {
        let s = (PI * x).sin() * (PI * y).sin();
        [0.004 * s, -0.003 * s]
    });
    let w = warp_image(&e, &u).unwrap();
    let u0 = u.scale(0.4);
    let grad = discrepancy_gradient(&e, &w.image, &u0, Some(&w.mask)).unwrap();
    let t = 1e-6;
    let mut worst: f64 = 0.0;
    for m in 1..=5 {
        let (a, b) = (m as f64, 0.5 * m as f64 + 1.0);
        let h = VectorField2D::from_fn(g, |x, y| {
            let bump = ((PI * x).sin() * (PI * y).sin()).powi(2);
            [bump * (a * x + b * y).cos(), bump * (b * x - a * y).sin()]
        });
        let ip = discrepancy(&e, &w.image, &u0.axpy(t, &h), Some(&w.mask)).unwrap();
        let im = discrepancy(&e, &w.image, &u0.axpy(-t, &h), Some(&w.mask)).unwrap();
        let an = grad.dot(&h);
        worst = worst.max((an - (ip - im) / (2.0 * t)).abs() / an.abs());
    }
    Outcome {
        id: 6,
        name: "discrepancy gradient",
        pass: worst <= 1e-4,
        detail: format!("worst of 5 directions {worst:.1e} (<= 1e-4)"),
    }
}

fn descent(s: &Summary, out: &Path) -> Outcome {
    let m = &s.metrics;
    let report = read_report(&out.join("estimate.report.jsonl"));
    let monotone = report.is_monotone();
    Outcome {
        id: 7,
        name: "displacement descent",
        pass: m.displacement_error < m.initializer_error && m.discrepancy_reduction >= 10.0 && monotone,
        detail: format!(
            "error {:.4} -> {:.4}, objective reduced {:.0}x (>= 10), monotone over {} steps {monotone}",
            m.initializer_error, m.displacement_error, m.discrepancy_reduction, report.iterations
        ),
    }
}

fn k_gradient() -> Outcome {
    let g = Grid2D::unit_square(20).unwrap();
    let truth = generate_mu(&g, &InclusionSpec::default()).unwrap();
    let bc = make_boundary_condition(&g, BoundaryMode::UniaxialCompression, 0.005).unwrap();
    let u = StokesOperator::new(&truth).unwrap().solve(&bc, None).unwrap().u;
    let mu = ScalarField2D::from_fn(g, |x, y| 1.5 + 0.4 * (3.0 * x).sin() * (2.0 * y).cos());
    let grad = gradient_k(&mu, &u, &bc).unwrap();
    let dirs = [
        ScalarField2D::from_fn(g, |x, y| 1.0 + 0.5 * (2.0 * x + y).sin()),
        ScalarField2D::from_fn(g, |x, y| 0.2 + x * y),
        ScalarField2D::from_fn(g, |x, y| (-(x - 0.4).powi(2) / 0.05 - (y - 0.6).powi(2) / 0.08).exp()),
    ];
    let mut worst: f64 = 0.0;
    for h in &dirs {
        let an = grad.dot(h);
        let best = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7]
            .iter()
            .map(|&t| {
                let kp = objective_k(&mu.zip_map(h, |m, d| m + t * d), &u, &bc).unwrap();
                let km = objective_k(&mu.zip_map(h, |m, d| m - t * d), &u, &bc).unwrap();
                (an - (kp - km) / (2.0 * t)).abs() / an.abs()
            })
            .fold(f64::INFINITY, f64::min);
        worst = worst.max(best);
    }
    let ones = ScalarField2D::constant(g, 1.0);
    let gc = gradient_k(&ScalarField2D::constant(g, 1.3), &u, &bc).unwrap();
    let pairing_const = gc.dot(&ones).abs() / (gc.norm_l2() * ones.norm_l2());
    let pairing_mu = grad.dot(&mu).abs() / (grad.norm_l2() * mu.norm_l2());
    Outcome {
        id: 8,
        name: "adjoint gradient of K",
        pass: worst <= 1e-3 && pairing_const <= 1e-6 && pairing_mu <= 1e-6,
        detail: format!(
            "FD plateau worst {worst:.1e} (<= 1e-3), <g,1> {pairing_const:.1e}, <g,mu> {pairing_mu:.1e} (<= 1e-6)"
        ),
    }
}

fn mu_recovery(s: &Summary, out: &Path) -> Outcome {
    let truth = read_f2d(out.join("mu.f2d")).unwrap();
    let u = read_vector(out.join("u_true")).unwrap();
    let g = *truth.grid();
    let bc = make_boundary_condition(&g, BoundaryMode::UniaxialCompression, 0.005).unwrap();
    let cfg = MuRecoveryConfig::new(ScalarField2D::constant(g, 1.0));
    let t = Instant::now();
    let fixed = recover_mu(&u, &bc, &cfg).unwrap();
    let elapsed = secs(t);
    let err = interior_relative_error(&fixed.mu, &truth, cfg.collar);
    let matches_pipeline = err == s.metrics.mu_error_inverse_crime;

    let free_cfg = MuRecoveryConfig { gauge: Gauge::None, ..cfg.clone() };
    let free = recover_mu(&u, &bc, &free_cfg).unwrap();
    let (lo, hi) = (free.mu.min(), free.mu.max());
    // within a factor of ten of the displayed reconstruction [0.5, 4.15]
    let consistent = (0.05..=5.0).contains(&lo) && (0.415..=41.5).contains(&hi);
    Outcome {
        id: 9,
        name: "shear modulus recovery",
        pass: err <= 0.2 && elapsed <= 300.0 && consistent && matches_pipeline,
        detail: format!(
            "inverse-crime error {err:.4} (<= 0.2) in {elapsed:.0} s at {}² (<= 300), same as pipeline {matches_pipeline}, \
             ungauged range [{lo:.3}, {hi:.3}] vs [0.5, 4.15], ungauged error {:.3}",
            g.nx,
            interior_relative_error(&free.mu, &truth, cfg.collar)
        ),
    }
}

fn determinism(tmp: &Path, divergences: &mut Vec<f64>) -> Outcome {
    let runs: Vec<Summary> = [(1, "t1"), (8, "t8"), (8, "t8b")]
        .iter()
        .map(|&(threads, name)| pipeline(64, Some(6), threads, &tmp.join(name)))
        .collect();
    divergences.extend(runs.iter().map(|s| s.forward.divergence_ratio));
    let base = runs[0].metrics.to_array();
    let worst = runs[1..]
        .iter()
        .flat_map(|s| s.metrics.to_array().into_iter().zip(base).map(|(a, b)| (a - b).abs() / b.abs().max(1e-300)))
        .fold(0.0, f64::max);
    let manifest = |name: &str| -> serde_json::Value {
        let text = std::fs::read_to_string(tmp.join(name).join("manifest.json")).unwrap();
        serde_json::from_str::<serde_json::Value>(&text).unwrap()["files"].clone()
    };
    let same_files = manifest("t1") == manifest("t8") && manifest("t8") == manifest("t8b");
    Outcome {
        id: 10,
        name: "determinism",
        pass: worst <= 1e-12,
        detail: format!("64² metrics across reruns and 1 vs 8 threads differ by {worst:.1e} (<= 1e-12), identical file checksums {same_files}"),
    }
}

fn main() {
    let tmp = tempfile::tempdir().expect("scratch directory");
    let mut outcomes = Vec::new();
    let mut divergences = Vec::new();

    outcomes.push(mms(&mut divergences));
    outcomes.push(first_order());
    outcomes.push(discrepancy_fd());
    outcomes.push(k_gradient());

    let out128 = tmp.path().join("p128");
    let cfg = PipelineConfig::default();
    let s128 = pipeline(128, None, rayon::current_num_threads(), &out128);
    divergences.push(s128.forward.divergence_ratio);
    outcomes.push(structure(s128.estimate.condition_range));
    outcomes.push(initializer(&out128, cfg.estimation.delta, cfg.estimation.cond_max));
    outcomes.push(descent(&s128, &out128));
    outcomes.push(mu_recovery(&s128, &out128));
    outcomes.push(determinism(tmp.path(), &mut divergences));

    let worst_div = divergences.iter().copied().fold(0.0, f64::max);
    let div = Outcome {
        id: 2,
        name: "divergence-free",
        pass: worst_div <= 1e-6,
        detail: format!("worst of {} solves {worst_div:.1e} (<= 1e-6)", divergences.len()),
    };
    outcomes.push(div);
    outcomes.sort_by_key(|o| o.id);
    outcomes.iter().for_each(line);

    let failed: Vec<u8> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    println!("acceptance: {} of {} criteria pass", outcomes.len() - failed.len(), outcomes.len());
    if !failed.is_empty() {
        println!("failing: {failed:?}");
        std::process::exit(1);
    }
}
