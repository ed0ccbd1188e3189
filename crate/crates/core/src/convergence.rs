//! Grid-refinement studies on the Hager benchmark.
//!
//! Each cell `(ε, N)` is compared against a run on a finer reference grid at
//! the shared grid points. Cells are independent and run on a worker pool
//! whose size is read from `IMEXCTRL_THREADS`.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::integrate::{adjoint_scheme, ControlGrid, ControlMode, StageSource};
use crate::optimize::{evaluate_with, solve, SolveOptions, DEFAULT_TOL_NORM_SQ};
use crate::problems::{hager_exact_control, hamiltonian_problem, ControlProblem, ProblemParams};
use crate::report::{fmt_f64, fmt_opt};
use crate::tableau::ImexTableau;

/// Environment variable bounding the worker count.
pub const THREADS_ENV: &str = "IMEXCTRL_THREADS";

pub const DEFAULT_GRIDS: [usize; 6] = [10, 20, 40, 80, 160, 320];
pub const DEFAULT_REFERENCE: usize = 640;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ControlSource {
    /// Analytic optimal control of the unrelaxed problem, sampled on the grid.
    ExactUStar,
    /// Solution of the discrete optimality system from `u ≡ 1`.
    Optimized,
}

impl ControlSource {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "exact-u-star" | "exact_u_star" => Ok(ControlSource::ExactUStar),
            "optimized" => Ok(ControlSource::Optimized),
            other => Err(Error::UnknownName {
                kind: "control source",
                name: other.to_string(),
                available: vec!["exact-u-star".into(), "optimized".into()],
            }),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ConvergenceConfig {
    pub tableau: ImexTableau,
    pub eps_list: Vec<f64>,
    pub grids: Vec<usize>,
    pub reference: usize,
    pub source: ControlSource,
    pub stage_source: StageSource,
    pub control_mode: ControlMode,
    pub adjoint: String,
    pub tol_norm_sq: f64,
    pub max_iter: usize,
}

impl ConvergenceConfig {
    /// Defaults for a tableau: standard grids, stored stages, one control per
    /// stage for sampled controls and one per step for optimized ones.
    pub fn new(tableau: ImexTableau, eps_list: Vec<f64>, source: ControlSource) -> Self {
        ConvergenceConfig {
            tableau,
            eps_list,
            grids: DEFAULT_GRIDS.to_vec(),
            reference: DEFAULT_REFERENCE,
            source,
            stage_source: StageSource::Stored,
            control_mode: match source {
                ControlSource::ExactUStar => ControlMode::PerStage,
                ControlSource::Optimized => ControlMode::PerStep,
            },
            adjoint: "stage-sweep".into(),
            tol_norm_sq: DEFAULT_TOL_NORM_SQ,
            max_iter: 500,
        }
    }
}

/// Error columns of the report.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorColumn {
    X,
    Z,
    P2,
    P3,
    U,
}

impl ErrorColumn {
    pub const ALL: [ErrorColumn; 5] = [
        ErrorColumn::X,
        ErrorColumn::Z,
        ErrorColumn::P2,
        ErrorColumn::P3,
        ErrorColumn::U,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ErrorColumn::X => "x",
            ErrorColumn::Z => "z",
            ErrorColumn::P2 => "p2",
            ErrorColumn::P3 => "p3",
            ErrorColumn::U => "u",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub eps: f64,
    pub n: usize,
    pub err_x: Option<f64>,
    pub err_z: Option<f64>,
    pub err_p2: Option<f64>,
    pub err_p3: Option<f64>,
    pub err_u: Option<f64>,
    /// `‖F(u*)‖∞`, or `‖F(u*) − F(u)‖∞` for optimized controls.
    pub f_inf: Option<f64>,
    pub iterations: Option<usize>,
    /// `ok`, `not-converged` or `failed: <reason>`.
    pub status: String,
}

impl ConvergenceRow {
    pub fn error(&self, col: ErrorColumn) -> Option<f64> {
        match col {
            ErrorColumn::X => self.err_x,
            ErrorColumn::Z => self.err_z,
            ErrorColumn::P2 => self.err_p2,
            ErrorColumn::P3 => self.err_p3,
            ErrorColumn::U => self.err_u,
        }
    }

    fn failed(eps: f64, n: usize, reason: String) -> Self {
        ConvergenceRow {
            eps,
            n,
            err_x: None,
            err_z: None,
            err_p2: None,
            err_p3: None,
            err_u: None,
            f_inf: None,
            iterations: None,
            status: format!("failed: {reason}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ConvergenceReport {
    pub scheme: String,
    pub reference_n: usize,
    /// Sorted by `(ε, N)`.
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceReport {
    fn find(&self, eps: f64, n: usize) -> Option<&ConvergenceRow> {
        self.rows.iter().find(|r| r.eps == eps && r.n == n)
    }

    /// `err(N/2) / err(N)` when both rows exist and the errors are positive.
    pub fn ratio(&self, row: &ConvergenceRow, col: ErrorColumn) -> Option<f64> {
        if !row.n.is_multiple_of(2) {
            return None;
        }
        let coarse = self.find(row.eps, row.n / 2)?.error(col)?;
        let fine = row.error(col)?;
        (coarse > 0.0 && fine > 0.0).then(|| coarse / fine)
    }

    pub fn observed_order(&self, row: &ConvergenceRow, col: ErrorColumn) -> Option<f64> {
        self.ratio(row, col).map(f64::log2)
    }

    /// Observed orders of one column for `ε`, as `(N, order)` in grid order.
    pub fn orders(&self, eps: f64, col: ErrorColumn) -> Vec<(usize, Option<f64>)> {
        self.rows
            .iter()
            .filter(|r| r.eps == eps)
            .map(|r| (r.n, self.observed_order(r, col)))
            .collect()
    }

    /// Mean observed order over rows with `lo ≤ N ≤ hi`; `None` if any is missing.
    pub fn mean_order(&self, eps: f64, col: ErrorColumn, lo: usize, hi: usize) -> Option<f64> {
        let sel: Vec<Option<f64>> = self
            .orders(eps, col)
            .into_iter()
            .filter(|(n, _)| (lo..=hi).contains(n))
            .map(|(_, o)| o)
            .collect();
        if sel.is_empty() || sel.iter().any(Option::is_none) {
            return None;
        }
        Some(sel.iter().flatten().sum::<f64>() / sel.len() as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut header = vec!["eps".to_string(), "N".to_string()];
        for c in ErrorColumn::ALL {
            let l = c.label();
            header.extend([format!("err_{l}"), format!("ratio_{l}"), format!("order_{l}")]);
        }
        header.extend(["F_inf".into(), "iterations".into(), "status".into()]);
        let mut out = header.join(",");
        out.push('\n');
        for r in &self.rows {
            let mut cells = vec![fmt_f64(r.eps), r.n.to_string()];
            for c in ErrorColumn::ALL {
                cells.push(fmt_opt(r.error(c)));
                cells.push(fmt_opt(self.ratio(r, c)));
                cells.push(fmt_opt(self.observed_order(r, c)));
            }
            cells.push(fmt_opt(r.f_inf));
            cells.push(r.iterations.map(|i| i.to_string()).unwrap_or_default());
            cells.push(r.status.clone());
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// Outcome of one grid run.
struct Run {
    y: Vec<DVector<f64>>,
    p: Vec<DVector<f64>>,
    err_u: Option<f64>,
    f_inf: f64,
    iterations: Option<usize>,
    converged: bool,
}

fn run_cell(cfg: &ConvergenceConfig, prob: &dyn ControlProblem, n: usize) -> Result<Run> {
    let tab = &cfg.tableau;
    let scheme = adjoint_scheme(&cfg.adjoint)?;
    let exact = ControlGrid::sampled(cfg.control_mode, tab, n, prob.horizon(), |t| {
        DVector::from_element(1, hager_exact_control(t))
    });
    let at_exact = evaluate_with(tab, prob, &exact, scheme.as_ref(), cfg.stage_source)?;
    match cfg.source {
        ControlSource::ExactUStar => Ok(Run {
            y: at_exact.traj.y,
            p: at_exact.adj.p,
            err_u: None,
            f_inf: at_exact.gradient.max_abs(),
            iterations: None,
            converged: true,
        }),
        ControlSource::Optimized => {
            let u0 = ControlGrid::constant(cfg.control_mode, n, tab.stages, &DVector::from_element(1, 1.0));
            let opts = SolveOptions {
                tol_norm_sq: cfg.tol_norm_sq,
                max_iter: cfg.max_iter,
                ..Default::default()
            };
            let res = solve(tab, prob, &u0, &opts)?;
            let err_u = res
                .u
                .values()
                .iter()
                .zip(exact.values())
                .map(|(a, b)| (a - b).amax())
                .fold(0.0, f64::max);
            let f_inf = (&at_exact.gradient.values - &res.gradient.values).amax();
            Ok(Run {
                y: res.traj.y,
                p: res.adj.p,
                err_u: Some(err_u),
                f_inf,
                iterations: Some(res.iterations),
                converged: res.converged,
            })
        }
    }
}

fn component_error(
    coarse: &[DVector<f64>],
    fine: &[DVector<f64>],
    stride: usize,
    idx: usize,
) -> Option<f64> {
    if coarse[0].len() <= idx {
        return None;
    }
    Some(
        coarse
            .iter()
            .enumerate()
            .map(|(n, v)| (v[idx] - fine[n * stride][idx]).abs())
            .fold(0.0, f64::max),
    )
}

fn make_problem(eps: f64) -> Result<Box<dyn ControlProblem>> {
    let params = ProblemParams {
        eps,
        ..Default::default()
    };
    Ok(hamiltonian_problem("hager", &params)? as Box<dyn ControlProblem>)
}

fn worker_count() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Runs every `(ε, N)` cell plus one reference run per `ε`.
pub fn run_convergence(cfg: &ConvergenceConfig) -> Result<ConvergenceReport> {
    if cfg.grids.is_empty() {
        return Err(Error::Domain("grid list is empty".into()));
    }
    if cfg.grids.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Domain("grid sizes must be strictly ascending".into()));
    }
    for &n in &cfg.grids {
        if n == 0 || n >= cfg.reference || !cfg.reference.is_multiple_of(n) {
            return Err(Error::Domain(format!(
                "grid size {n} must divide the reference size {} and be smaller",
                cfg.reference
            )));
        }
    }
    adjoint_scheme(&cfg.adjoint)?;

    let mut jobs: Vec<(f64, usize)> = Vec::new();
    for &eps in &cfg.eps_list {
        jobs.push((eps, cfg.reference));
        jobs.extend(cfg.grids.iter().map(|&n| (eps, n)));
    }
    let work = || -> Vec<((f64, usize), Result<Run>)> {
        jobs.par_iter()
            .map(|&(eps, n)| ((eps, n), make_problem(eps).and_then(|p| run_cell(cfg, p.as_ref(), n))))
            .collect()
    };
    let results = match worker_count() {
        Some(threads) => rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Domain(format!("worker pool: {e}")))?
            .install(work),
        None => work(),
    };

    let mut rows = Vec::new();
    for &eps in &cfg.eps_list {
        let reference = results
            .iter()
            .find(|((e, n), _)| *e == eps && *n == cfg.reference)
            .map(|(_, r)| r)
            .expect("reference job scheduled");
        for &n in &cfg.grids {
            let cell = &results
                .iter()
                .find(|((e, m), _)| *e == eps && *m == n)
                .expect("cell job scheduled")
                .1;
            let row = match (cell, reference) {
                (Err(e), _) => ConvergenceRow::failed(eps, n, e.to_string()),
                (_, Err(e)) => ConvergenceRow::failed(eps, n, format!("reference run: {e}")),
                (Ok(run), Ok(refr)) => {
                    let stride = cfg.reference / n;
                    let status = if !run.converged {
                        "not-converged"
                    } else if !refr.converged {
                        "reference-not-converged"
                    } else {
                        "ok"
                    };
                    ConvergenceRow {
                        eps,
                        n,
                        err_x: component_error(&run.y, &refr.y, stride, 1),
                        err_z: component_error(&run.y, &refr.y, stride, 2),
                        err_p2: component_error(&run.p, &refr.p, stride, 1),
                        err_p3: component_error(&run.p, &refr.p, stride, 2),
                        err_u: run.err_u,
                        f_inf: Some(run.f_inf),
                        iterations: run.iterations,
                        status: status.into(),
                    }
                }
            };
            rows.push(row);
        }
    }
    rows.sort_by(|a, b| a.eps.total_cmp(&b.eps).then(a.n.cmp(&b.n)));
    Ok(ConvergenceReport {
        scheme: cfg.tableau.name.clone(),
        reference_n: cfg.reference,
        rows,
    })
}
