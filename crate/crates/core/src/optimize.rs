//! Reduced gradients of the discrete problem and the optimality-system solver.
//!
//! For a control grid `u` the discrete objective is `J(u) = j(y_N(u))`. Its
//! exact gradient with respect to the stage control `u_n^k` is
//!
//! ```text
//! F_n^k = f_u(Y_n^k, u_n^k)ᵀ ξ̃_n^k + g_u(Y_n^k, u_n^k)ᵀ ξ_n^k
//! ```
//!
//! built from the adjoint multipliers; with one control per step the stage
//! contributions are summed.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::integrate::{
    adjoint_backward, adjoint_forward_form, forward, solve_step, AdjointScheme,
    AdjointTrajectory, ControlGrid, ControlMode, StageSource, Trajectory,
};
use crate::problems::ControlProblem;
use crate::report::fmt_f64;
use crate::tableau::{adjoint_coefficients, AdjointValidity, ImexTableau};

/// Default termination tolerance on `‖F‖₂²`.
pub const DEFAULT_TOL_NORM_SQ: f64 = 1e-8;
/// Default central-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-6;

/// `F(u)` in the parameter layout of [`ControlGrid::params`].
#[derive(Clone, Debug)]
pub struct ReducedGradient {
    pub values: DVector<f64>,
    pub norm_sq: f64,
}

impl ReducedGradient {
    pub fn max_abs(&self) -> f64 {
        self.values.amax()
    }
}

/// Discrete objective `j(y_N(u))`.
pub fn objective(tab: &ImexTableau, prob: &dyn ControlProblem, u: &ControlGrid) -> Result<f64> {
    let traj = forward(tab, prob, u, u.steps())?;
    Ok(prob.terminal_cost(traj.final_state()))
}

fn assemble(
    tab: &ImexTableau,
    prob: &dyn ControlProblem,
    u: &ControlGrid,
    stages: &dyn crate::integrate::StageStates,
    adj: &AdjointTrajectory,
) -> ReducedGradient {
    let m = u.dim();
    let mut values = DVector::zeros(u.num_params());
    for n in 0..u.steps() {
        for k in 0..tab.stages {
            let y = stages.stage(n, k);
            let uk = u.stage(n, k);
            let contrib =
                prob.f_u(&y, uk).tr_mul(&adj.mult_exp[n][k]) + prob.g_u(&y, uk).tr_mul(&adj.mult_imp[n][k]);
            let slot = match u.mode {
                ControlMode::PerStep => n,
                ControlMode::PerStage => n * tab.stages + k,
            };
            let mut dst = values.rows_mut(slot * m, m);
            dst += contrib;
        }
    }
    let norm_sq = values.norm_squared();
    ReducedGradient { values, norm_sq }
}

/// Forward solve, adjoint solve and gradient assembly in one pass.
pub struct Evaluation {
    pub objective: f64,
    pub gradient: ReducedGradient,
    pub traj: Trajectory,
    pub adj: AdjointTrajectory,
}

/// Evaluates objective and reduced gradient with a chosen adjoint formulation
/// and stage-state source.
pub fn evaluate_with(
    tab: &ImexTableau,
    prob: &dyn ControlProblem,
    u: &ControlGrid,
    scheme: &dyn AdjointScheme,
    source: StageSource,
) -> Result<Evaluation> {
    let traj = forward(tab, prob, u, u.steps())?;
    let stages = source.provider(tab, &traj)?;
    let adj = scheme.solve(tab, prob, &traj, u, stages.as_ref())?;
    let gradient = assemble(tab, prob, u, stages.as_ref(), &adj);
    drop(stages);
    Ok(Evaluation {
        objective: prob.terminal_cost(traj.final_state()),
        gradient,
        traj,
        adj,
    })
}

fn evaluate(tab: &ImexTableau, prob: &dyn ControlProblem, u: &ControlGrid) -> Result<Evaluation> {
    let traj = forward(tab, prob, u, u.steps())?;
    let adj = adjoint_backward(tab, prob, &traj, u)?;
    let gradient = assemble(tab, prob, u, &crate::integrate::StoredStages(&traj), &adj);
    Ok(Evaluation {
        objective: prob.terminal_cost(traj.final_state()),
        gradient,
        traj,
        adj,
    })
}

/// `F(u)` from the reverse stage sweep with stored stage values.
pub fn reduced_gradient(
    tab: &ImexTableau,
    prob: &dyn ControlProblem,
    u: &ControlGrid,
) -> Result<ReducedGradient> {
    Ok(evaluate(tab, prob, u)?.gradient)
}

/// Central differences of `u ↦ j(y_N(u))`, one component per control parameter.
pub fn fd_objective_gradient(
    tab: &ImexTableau,
    prob: &dyn ControlProblem,
    u: &ControlGrid,
    step: f64,
) -> Result<DVector<f64>> {
    if !(step > 0.0) {
        return Err(Error::Domain(format!("finite-difference step must be positive, got {step}")));
    }
    let base = u.params();
    let (mode, steps, stages, dim) = (u.mode, u.steps(), u.stages(), u.dim());
    let eval = |params: DVector<f64>| -> Result<f64> {
        objective(tab, prob, &ControlGrid::from_params(mode, steps, stages, dim, &params)?)
    };
    let comps: Result<Vec<f64>> = (0..base.len())
        .into_par_iter()
        .map(|k| {
            let mut plus = base.clone();
            let mut minus = base.clone();
            plus[k] += step;
            minus[k] -= step;
            let width = plus[k] - minus[k];
            Ok((eval(plus)? - eval(minus)?) / width)
        })
        .collect();
    Ok(DVector::from_vec(comps?))
}

// ---------------------------------------------------------------------------
// solver

#[derive(Clone, Debug)]
pub struct SolveOptions {
    pub tol_norm_sq: f64,
    pub max_iter: usize,
    /// Number of stored secant pairs.
    pub memory: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol_norm_sq: DEFAULT_TOL_NORM_SQ,
            max_iter: 500,
            memory: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub iter: usize,
    pub norm_sq: f64,
    pub objective: f64,
    pub step_length: f64,
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub u: ControlGrid,
    pub traj: Trajectory,
    pub adj: AdjointTrajectory,
    pub gradient: ReducedGradient,
    pub iterations: usize,
    pub final_norm_sq: f64,
    pub converged: bool,
    pub log: Vec<LogRow>,
}

impl SolveResult {
    /// Solve log with header `iter,norm_sq_F,objective,step_length`.
    pub fn log_csv(&self) -> String {
        let mut out = String::from("iter,norm_sq_F,objective,step_length\n");
        for r in &self.log {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.iter,
                fmt_f64(r.norm_sq),
                fmt_f64(r.objective),
                fmt_f64(r.step_length)
            ));
        }
        out
    }

    /// Controls with header `t,u1..um`; a per-step control is written at the
    /// interval midpoint, a per-stage control at its stage time.
    pub fn control_csv(&self, tab: &ImexTableau) -> String {
        control_csv(&self.u, tab, self.traj.h)
    }
}

pub fn control_csv(u: &ControlGrid, tab: &ImexTableau, h: f64) -> String {
    let mut out = String::from("t");
    for j in 1..=u.dim() {
        out.push_str(&format!(",u{j}"));
    }
    out.push('\n');
    let c = tab.c_exp();
    let mut push = |t: f64, v: &DVector<f64>| {
        out.push_str(&fmt_f64(t));
        for x in v.iter() {
            out.push(',');
            out.push_str(&fmt_f64(*x));
        }
        out.push('\n');
    };
    for n in 0..u.steps() {
        match u.mode {
            ControlMode::PerStep => push((n as f64 + 0.5) * h, u.stage(n, 0)),
            ControlMode::PerStage => {
                for i in 0..u.stages() {
                    push((n as f64 + c[i]) * h, u.stage(n, i));
                }
            }
        }
    }
    out
}

/// Limited-memory secant direction `−H F` (two-loop recursion).
fn lbfgs_direction(grad: &DVector<f64>, memory: &[(DVector<f64>, DVector<f64>)]) -> DVector<f64> {
    let mut q = grad.clone();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y) in memory.iter().rev() {
        let rho = 1.0 / y.dot(s);
        let a = rho * s.dot(&q);
        q -= y * a;
        alphas.push((rho, a));
    }
    if let Some((s, y)) = memory.last() {
        q *= s.dot(y) / y.dot(y);
    }
    for ((s, y), (rho, a)) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = rho * y.dot(&q);
        q += s * (a - b);
    }
    -q
}

fn steepest(grad: &DVector<f64>) -> DVector<f64> {
    let scale = grad.amax();
    if scale > 0.0 {
        -grad / scale
    } else {
        -grad.clone()
    }
}

/// Minimizes `J(u)` with a limited-memory secant method, using `F` as the
/// gradient, until `‖F‖₂² ≤ tol_norm_sq`.
///
/// A trial point is accepted when it satisfies the Armijo condition and does
/// not increase `‖F‖₂²`; if the secant direction yields no acceptable point
/// the memory is cleared and the scaled negative gradient is tried instead.
pub fn solve(
    tab: &ImexTableau,
    prob: &dyn ControlProblem,
    u0: &ControlGrid,
    opts: &SolveOptions,
) -> Result<SolveResult> {
    if !(opts.tol_norm_sq > 0.0) {
        return Err(Error::Domain("tolerance must be positive".into()));
    }
    let (mode, steps, stages, dim) = (u0.mode, u0.steps(), u0.stages(), u0.dim());
    let grid = |x: &DVector<f64>| ControlGrid::from_params(mode, steps, stages, dim, x);

    let mut u = u0.clone();
    let mut x = u.params();
    let mut cur = evaluate(tab, prob, &u)?;
    let mut log = vec![LogRow {
        iter: 0,
        norm_sq: cur.gradient.norm_sq,
        objective: cur.objective,
        step_length: 0.0,
    }];
    let mut memory: Vec<(DVector<f64>, DVector<f64>)> = Vec::new();
    let mut iter = 0;

    while cur.gradient.norm_sq > opts.tol_norm_sq && iter < opts.max_iter {
        let g = cur.gradient.values.clone();
        let mut accepted = None;
        for use_memory in [true, false] {
            if use_memory && memory.is_empty() {
                continue;
            }
            let d = if use_memory {
                lbfgs_direction(&g, &memory)
            } else {
                memory.clear();
                steepest(&g)
            };
            let slope = g.dot(&d);
            if !(slope < 0.0) {
                continue;
            }
            let mut t = 1.0;
            for _ in 0..60 {
                let x_new = &x + &d * t;
                let u_new = grid(&x_new)?;
                if let Ok(trial) = evaluate(tab, prob, &u_new) {
                    if trial.objective <= cur.objective + 1e-4 * t * slope
                        && trial.gradient.norm_sq <= cur.gradient.norm_sq
                    {
                        accepted = Some((x_new, u_new, trial, t * d.amax()));
                        break;
                    }
                }
                t *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
        }
        let Some((x_new, u_new, trial, step_length)) = accepted else {
            break;
        };
        iter += 1;
        let s = &x_new - &x;
        let y = &trial.gradient.values - &g;
        if s.dot(&y) > 1e-14 * s.norm() * y.norm() {
            memory.push((s, y));
            if memory.len() > opts.memory {
                memory.remove(0);
            }
        }
        x = x_new;
        u = u_new;
        cur = trial;
        log.push(LogRow {
            iter,
            norm_sq: cur.gradient.norm_sq,
            objective: cur.objective,
            step_length,
        });
    }
    let final_norm_sq = cur.gradient.norm_sq;
    Ok(SolveResult {
        u,
        traj: cur.traj,
        adj: cur.adj,
        converged: final_norm_sq <= opts.tol_norm_sq,
        final_norm_sq,
        gradient: cur.gradient,
        iterations: iter,
        log,
    })
}

/// Compares `∇_{u_n^k} H^h(y_n, p_{n+1}, u_n)` from central differences of
///
/// ```text
/// H^h = p_{n+1}ᵀ Σ_i (ω̃_i f(Y_i, u_i) + ω_i g(Y_i, u_i))
/// ```
///
/// (stages re-solved for every perturbation) with the closed form
/// `ω̃_k f_uᵀ P̃_k + ω_k g_uᵀ P_k`. Returns the worst absolute discrepancy over
/// all stages and control components of step `n`.
pub fn discrete_hamiltonian_gradient_check(
    tab: &ImexTableau,
    prob: &dyn ControlProblem,
    u: &ControlGrid,
    n: usize,
    step: f64,
) -> Result<f64> {
    if n >= u.steps() {
        return Err(Error::Domain(format!("step index {n} out of range")));
    }
    let coeffs = adjoint_coefficients(tab);
    if coeffs.validity == AdjointValidity::Unavailable {
        return Err(Error::UnsupportedStructure(format!(
            "{}: scaled adjoint stages undefined",
            tab.name
        )));
    }
    let traj = forward(tab, prob, u, u.steps())?;
    let adj = adjoint_forward_form(tab, &coeffs, prob, &traj, u)?;
    let (pe, pi) = match (&adj.stage_p_exp, &adj.stage_p_imp) {
        (Some(a), Some(b)) => (&a[n], &b[n]),
        _ => unreachable!("transformed formulation stores scaled stages"),
    };
    let h = traj.h;
    let p_next = &adj.p[n + 1];
    let y_n = &traj.y[n];
    let controls = u.stage_controls(n);
    let hamiltonian = |ctrl: &[DVector<f64>]| -> Result<f64> {
        let (st, _) = solve_step(tab, prob, y_n, ctrl, h, n)?;
        let mut sum = DVector::zeros(y_n.len());
        for i in 0..tab.stages {
            sum += &st.k_exp[i] * tab.b_exp[i] + &st.k_imp[i] * tab.b_imp[i];
        }
        Ok(p_next.dot(&sum))
    };
    let mut worst: f64 = 0.0;
    for k in 0..tab.stages {
        let y = &traj.stages_y[n][k];
        let closed = prob.f_u(y, &controls[k]).tr_mul(&pe[k]) * tab.b_exp[k]
            + prob.g_u(y, &controls[k]).tr_mul(&pi[k]) * tab.b_imp[k];
        for c in 0..u.dim() {
            let mut plus = controls.clone();
            let mut minus = controls.clone();
            plus[k][c] += step;
            minus[k][c] -= step;
            let width = plus[k][c] - minus[k][c];
            let fd = (hamiltonian(&plus)? - hamiltonian(&minus)?) / width;
            worst = worst.max((fd - closed[c]).abs());
        }
    }
    Ok(worst)
}
