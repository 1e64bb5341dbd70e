//! Experiment driver: builds the problem on the unit disk with `f = 1`,
//! `g = 0`, solves it with V-cycle preconditioned GMRES and records the
//! measurements as CSV rows.

use std::io::Write;
use std::time::Instant;

use serde::Serialize;

use crate::assembly::{assemble, shift_statistics, AssemblyOptions, PenaltyRhs};
use crate::error::{Result, SbmError};
use crate::exec::Execution;
use crate::fem::{l2_error, DofHandler};
use crate::geometry::{Circle, Point};
use crate::linalg::{gmres, GmresOptions, GmresOutcome, DEFAULT_DENSE_CAP};
use crate::mesh::{classify_cells, MeshLevel};
use crate::multigrid::{HierarchyConfig, MgHierarchy, MgMode};
use crate::smoother::{
    boundary_patch_fraction, coverage_report, smooth_stage, CoverageReport, SmootherConfig, SmootherWork, SweepOrder,
};

pub const CSV_HEADER: [&str; 18] = [
    "mode",
    "p",
    "refinements",
    "lambda",
    "shyness",
    "smooth_steps",
    "dofs",
    "iterations",
    "converged",
    "setup_time_s",
    "solve_time_s",
    "gmg_throughput",
    "l2_error",
    "shift_min",
    "shift_max",
    "boundary_patch_fraction",
    "t_s1",
    "t_s2",
];

/// Exact solution of `-Δu = 1` in the unit disk with `u = 0` on the circle.
pub fn exact_solution(x: Point) -> f64 {
    0.25 * (1.0 - x[0] * x[0] - x[1] * x[1])
}

fn unit_source(_: Point) -> f64 {
    1.0
}

fn zero_boundary(_: Point) -> f64 {
    0.0
}

#[derive(Clone, Copy, Debug)]
pub struct SolverConfig {
    pub mode: MgMode,
    pub degree: usize,
    pub refinements: usize,
    pub lambda: f64,
    pub shyness: usize,
    pub smooth_steps: usize,
    pub sigma: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Replace every shift by zero.
    pub zero_shift: bool,
    pub penalty_rhs: PenaltyRhs,
    /// Measure single- and two-stage smoother sweeps on the finest level.
    pub time_sweeps: bool,
    pub exec: Execution,
    pub dense_cap: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            mode: MgMode::H,
            degree: 1,
            refinements: 3,
            lambda: 0.0,
            shyness: 3,
            smooth_steps: 3,
            sigma: 5.0,
            tol: 1e-8,
            max_iter: 100,
            zero_shift: false,
            penalty_rhs: PenaltyRhs::Extended,
            time_sweeps: false,
            exec: Execution::default(),
            dense_cap: DEFAULT_DENSE_CAP,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SbmError::InvalidConfig(m.to_string()));
        if !(1..=15).contains(&self.degree) {
            return bad("degree must lie in 1..=15");
        }
        if self.refinements > 12 {
            return bad("refinements must be at most 12");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must lie in [0, 1]");
        }
        if !(1..=4).contains(&self.shyness) {
            return bad("shyness must lie in 1..=4");
        }
        if self.smooth_steps == 0 {
            return bad("smoothing steps must be positive");
        }
        if !(self.sigma > 0.0) || !(self.tol > 0.0) || self.max_iter == 0 {
            return bad("sigma, tol and max-iter must be positive");
        }
        Ok(())
    }

    pub fn hierarchy(&self) -> HierarchyConfig {
        HierarchyConfig {
            mode: self.mode,
            degree: self.degree,
            refinements: self.refinements,
            lambda: self.lambda,
            smoother: SmootherConfig {
                shyness: self.shyness,
                steps: self.smooth_steps,
            },
            assembly: AssemblyOptions {
                sigma: self.sigma,
                zero_shift: self.zero_shift,
                penalty_rhs: self.penalty_rhs,
                exec: self.exec,
            },
            exec: self.exec,
            dense_cap: self.dense_cap,
        }
    }
}

/// One CSV row.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentRecord {
    pub mode: String,
    pub p: usize,
    pub refinements: usize,
    pub lambda: f64,
    pub shyness: usize,
    pub smooth_steps: usize,
    /// Active DoFs on the finest level.
    pub dofs: usize,
    /// `-1` when GMRES did not converge.
    pub iterations: i64,
    pub converged: bool,
    pub setup_time_s: f64,
    pub solve_time_s: f64,
    /// Active DoFs per second of solve time.
    pub gmg_throughput: f64,
    pub l2_error: f64,
    pub shift_min: Option<f64>,
    pub shift_max: Option<f64>,
    pub boundary_patch_fraction: f64,
    pub t_s1: Option<f64>,
    pub t_s2: Option<f64>,
}

/// A finished solve with everything needed for diagnostics.
pub struct RunOutput {
    pub record: ExperimentRecord,
    pub hierarchy: MgHierarchy,
    pub outcome: GmresOutcome,
}

/// Builds the hierarchy and solves from a zero initial guess.
pub fn run(cfg: &SolverConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let geom = Circle::unit();
    let t0 = Instant::now();
    let hierarchy = MgHierarchy::build(&cfg.hierarchy(), &geom, &unit_source, &zero_boundary)?;
    let setup = t0.elapsed().as_secs_f64();

    let finest = hierarchy.finest();
    let opts = GmresOptions {
        tol: cfg.tol,
        max_iter: cfg.max_iter,
        exec: cfg.exec,
    };
    let t1 = Instant::now();
    let outcome = gmres(&finest.system.operator, &finest.system.rhs, &hierarchy, &opts)?;
    let solve = t1.elapsed().as_secs_f64();

    let dofs = finest.dofs.n_active_dofs();
    let err = l2_error(&finest.mesh, &finest.dofs, &outcome.x, exact_solution);
    let (shift_min, shift_max) = if finest.system.shift_data.is_empty() {
        (None, None)
    } else {
        let (lo, hi) = shift_statistics(&finest.system);
        (Some(lo), Some(hi))
    };
    let (t_s1, t_s2) = if cfg.time_sweeps {
        let (a, b) = time_sweeps(&hierarchy);
        (Some(a), Some(b))
    } else {
        (None, None)
    };
    let record = ExperimentRecord {
        mode: cfg.mode.as_str().to_string(),
        p: cfg.degree,
        refinements: cfg.refinements,
        lambda: cfg.lambda,
        shyness: cfg.shyness,
        smooth_steps: cfg.smooth_steps,
        dofs,
        iterations: if outcome.converged {
            outcome.iterations as i64
        } else {
            -1
        },
        converged: outcome.converged,
        setup_time_s: setup,
        solve_time_s: solve,
        gmg_throughput: dofs as f64 / solve,
        l2_error: err,
        shift_min,
        shift_max,
        boundary_patch_fraction: boundary_patch_fraction(&finest.patches),
        t_s1,
        t_s2,
    };
    Ok(RunOutput {
        record,
        hierarchy,
        outcome,
    })
}

/// Minimum wall times of one- and two-stage smoothing on the finest level.
/// The second stage is timed on its own right after the first, so the
/// two-stage time is not the difference of two noisy measurements.
pub fn time_sweeps(h: &MgHierarchy) -> (f64, f64) {
    let lv = h.finest();
    let op = &lv.system.operator;
    let b = &lv.system.rhs;
    let mut work = SmootherWork::new(&lv.patches);
    let mut x = vec![0.0; b.len()];
    let (mut full, mut boundary) = (f64::INFINITY, f64::INFINITY);
    let budget = Instant::now();
    let mut trials = 0;
    while trials < 5 || (budget.elapsed().as_secs_f64() < 2.0 && trials < 200) {
        x.iter_mut().for_each(|v| *v = 0.0);
        let t = Instant::now();
        smooth_stage(op, &mut x, b, &lv.patches, 0, SweepOrder::Forward, &mut work);
        full = full.min(t.elapsed().as_secs_f64());
        let t = Instant::now();
        smooth_stage(op, &mut x, b, &lv.patches, 1, SweepOrder::Forward, &mut work);
        boundary = boundary.min(t.elapsed().as_secs_f64());
        trials += 1;
    }
    (full, full + boundary)
}

/// Runs each configuration in order and writes one CSV row per run. A run
/// failing with an error is logged and skipped.
pub fn sweep<W: Write>(configs: &[SolverConfig], out: W) -> Result<Vec<ExperimentRecord>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER)?;
    let mut records = Vec::with_capacity(configs.len());
    for cfg in configs {
        match run(cfg) {
            Ok(r) => {
                log::info!(
                    "mode={} p={} L={} lambda={} xi={} s={}: iterations={}",
                    r.record.mode,
                    r.record.p,
                    r.record.refinements,
                    r.record.lambda,
                    r.record.shyness,
                    r.record.smooth_steps,
                    r.record.iterations
                );
                w.serialize(&r.record)?;
                w.flush()?;
                records.push(r.record);
            }
            Err(e) => log::error!("run failed: {e}"),
        }
    }
    w.flush()?;
    Ok(records)
}

/// Cartesian product in the order mode, p, L, lambda, shyness, steps.
pub fn grid(
    base: &SolverConfig,
    modes: &[MgMode],
    degrees: &[usize],
    levels: &[usize],
    lambdas: &[f64],
    shyness: &[usize],
    steps: &[usize],
) -> Vec<SolverConfig> {
    let mut out = Vec::new();
    for &mode in modes {
        for &degree in degrees {
            for &refinements in levels {
                for &lambda in lambdas {
                    for &xi in shyness {
                        for &s in steps {
                            out.push(SolverConfig {
                                mode,
                                degree,
                                refinements,
                                lambda,
                                shyness: xi,
                                smooth_steps: s,
                                ..*base
                            });
                        }
                    }
                }
            }
        }
    }
    out
}

/// Classified finest mesh and the coverage report for `cfg`, without solving.
pub fn coverage(cfg: &SolverConfig) -> Result<(MeshLevel, CoverageReport)> {
    cfg.validate()?;
    let mesh = classify_cells(cfg.refinements, &Circle::unit(), cfg.lambda, cfg.exec)?;
    let dofs = DofHandler::new(&mesh, cfg.degree);
    let report = coverage_report(&mesh, &dofs, cfg.shyness, cfg.exec);
    Ok((mesh, report))
}

/// Min and max normalized signed shift on the finest mesh of `cfg`.
pub fn shift_range(cfg: &SolverConfig) -> Result<(f64, f64)> {
    cfg.validate()?;
    let geom = Circle::unit();
    let mesh = classify_cells(cfg.refinements, &geom, cfg.lambda, cfg.exec)?;
    let dofs = DofHandler::new(&mesh, cfg.degree);
    let sys = assemble(&mesh, &dofs, &geom, &unit_source, &zero_boundary, &cfg.hierarchy().assembly)?;
    Ok(shift_statistics(&sys))
}

#[derive(Clone, Debug)]
pub struct ConvergenceStudy {
    pub degree: usize,
    pub levels: Vec<usize>,
    pub h: Vec<f64>,
    pub errors: Vec<f64>,
    pub iterations: Vec<i64>,
    /// Least-squares slope of `log(error)` against `log(h)`.
    pub order: f64,
}

/// L2 errors over a range of refinements and the fitted order.
pub fn verify_convergence(base: &SolverConfig, levels: &[usize]) -> Result<ConvergenceStudy> {
    let mut h = Vec::new();
    let mut errors = Vec::new();
    let mut iterations = Vec::new();
    for &l in levels {
        let cfg = SolverConfig {
            refinements: l,
            ..*base
        };
        let out = run(&cfg)?;
        h.push(out.hierarchy.finest().mesh.h);
        errors.push(out.record.l2_error);
        iterations.push(out.record.iterations);
    }
    let order = fitted_slope(&h, &errors);
    Ok(ConvergenceStudy {
        degree: base.degree,
        levels: levels.to_vec(),
        h,
        errors,
        iterations,
        order,
    })
}

/// Slope of the least-squares line through `(log h, log e)`.
pub fn fitted_slope(h: &[f64], e: &[f64]) -> f64 {
    let n = h.len() as f64;
    let xs: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = e.iter().map(|v| v.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}
