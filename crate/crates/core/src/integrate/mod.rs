//! Forward IMEX integration of the state equation and backward integration of
//! the discrete adjoint.
//!
//! A step of the scheme computes stage values
//!
//! ```text
//! Y_i     = y_n + h Σ_j ã_ij f(Y_j, u_i) + h Σ_j a_ij g(Y_j, u_i)
//! y_{n+1} = y_n + h Σ_i ω̃_i f(Y_i, u_i) + h Σ_i ω_i g(Y_i, u_i)
//! ```
//!
//! Only diagonally implicit tableaus are executable, so stages are solved one
//! at a time. The adjoint formulations live in [`adjoint`] and the stage-state
//! providers used by them in [`stages`].

pub mod adjoint;
pub mod stages;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::problems::ControlProblem;
use crate::report::fmt_f64;
use crate::tableau::{ImexTableau, STRUCTURE_TOL};

pub use adjoint::{
    adjoint_backward, adjoint_forward_form, adjoint_hs_form, adjoint_scheme,
    adjoint_scheme_names, extended_adjoint, AdjointScheme, AdjointTrajectory, ExtendedAdjoint,
};
pub use stages::{interpolate_stage_states, StageSource, StageStates, StoredStages};

/// Absolute residual tolerance of the stage Newton solve (∞-norm).
pub const STAGE_TOL: f64 = 1e-13;
/// Iteration cap of the stage Newton solve.
pub const STAGE_MAX_ITER: usize = 50;

/// How controls are attached to stages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ControlMode {
    /// One control per stage and step.
    PerStage,
    /// One control per step, shared by all stages.
    PerStep,
}

/// Discrete controls `u_n^i` on a uniform grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlGrid {
    pub mode: ControlMode,
    steps: usize,
    stages: usize,
    dim: usize,
    /// `steps` entries (PerStep) or `steps * stages` entries, step major (PerStage).
    values: Vec<DVector<f64>>,
}

impl ControlGrid {
    pub fn constant(mode: ControlMode, steps: usize, stages: usize, value: &DVector<f64>) -> Self {
        let count = match mode {
            ControlMode::PerStep => steps,
            ControlMode::PerStage => steps * stages,
        };
        ControlGrid {
            mode,
            steps,
            stages,
            dim: value.len(),
            values: vec![value.clone(); count],
        }
    }

    /// Samples `control(t)`: at `t_n + c̃_i h` per stage, or at the interval
    /// midpoint `t_n + h/2` per step.
    pub fn sampled(
        mode: ControlMode,
        tab: &ImexTableau,
        steps: usize,
        horizon: f64,
        control: impl Fn(f64) -> DVector<f64>,
    ) -> Self {
        let h = horizon / steps as f64;
        let c = tab.c_exp();
        let values: Vec<_> = match mode {
            ControlMode::PerStep => (0..steps).map(|n| control((n as f64 + 0.5) * h)).collect(),
            ControlMode::PerStage => (0..steps)
                .flat_map(|n| (0..tab.stages).map(move |i| (n, i)))
                .map(|(n, i)| control(n as f64 * h + c[i] * h))
                .collect(),
        };
        let dim = values.first().map_or(0, |v| v.len());
        ControlGrid {
            mode,
            steps,
            stages: tab.stages,
            dim,
            values,
        }
    }

    /// Builds a grid from a flat parameter vector (layout of [`Self::params`]).
    pub fn from_params(
        mode: ControlMode,
        steps: usize,
        stages: usize,
        dim: usize,
        params: &DVector<f64>,
    ) -> Result<Self> {
        let count = match mode {
            ControlMode::PerStep => steps,
            ControlMode::PerStage => steps * stages,
        };
        if params.len() != count * dim {
            return Err(Error::Domain(format!(
                "expected {} control parameters, got {}",
                count * dim,
                params.len()
            )));
        }
        let values = (0..count)
            .map(|k| DVector::from_column_slice(&params.as_slice()[k * dim..(k + 1) * dim]))
            .collect();
        Ok(ControlGrid {
            mode,
            steps,
            stages,
            dim,
            values,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }
    pub fn stages(&self) -> usize {
        self.stages
    }
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Control used at stage `i` of step `n`.
    pub fn stage(&self, n: usize, i: usize) -> &DVector<f64> {
        match self.mode {
            ControlMode::PerStep => &self.values[n],
            ControlMode::PerStage => &self.values[n * self.stages + i],
        }
    }

    /// Stored control values in parameter order.
    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }

    pub fn num_params(&self) -> usize {
        self.values.len() * self.dim
    }

    pub fn params(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.num_params(),
            self.values.iter().flat_map(|v| v.iter().copied()),
        )
    }

    pub fn stage_controls(&self, n: usize) -> Vec<DVector<f64>> {
        (0..self.stages).map(|i| self.stage(n, i).clone()).collect()
    }

    fn check(&self, tab: &ImexTableau, prob: &dyn ControlProblem, steps: usize) -> Result<()> {
        if self.steps != steps || self.stages != tab.stages || self.dim != prob.control_dim() {
            return Err(Error::Domain(format!(
                "control grid is {}x{}x{}, expected {}x{}x{}",
                self.steps,
                self.stages,
                self.dim,
                steps,
                tab.stages,
                prob.control_dim()
            )));
        }
        Ok(())
    }
}

/// Forward solution together with stage values and stage rates.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub h: f64,
    pub times: Vec<f64>,
    pub y: Vec<DVector<f64>>,
    /// `stages_y[n][i] = Y_n^(i)`.
    pub stages_y: Vec<Vec<DVector<f64>>>,
    /// `f(Y_n^(i), u_n^i)`.
    pub stages_k_exp: Vec<Vec<DVector<f64>>>,
    /// `g(Y_n^(i), u_n^i)`.
    pub stages_k_imp: Vec<Vec<DVector<f64>>>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.y.len() - 1
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.y.last().expect("trajectory has at least one point")
    }

    /// CSV with header `t,y1..yK`.
    pub fn to_csv(&self) -> String {
        trajectory_csv(self, None)
    }
}

/// Stage values of a single step.
#[derive(Clone, Debug)]
pub struct StepStages {
    pub y: Vec<DVector<f64>>,
    pub k_exp: Vec<DVector<f64>>,
    pub k_imp: Vec<DVector<f64>>,
}

pub(crate) fn require_diagonally_implicit(tab: &ImexTableau) -> Result<()> {
    if tab.is_diagonally_implicit() {
        Ok(())
    } else {
        Err(Error::UnsupportedStructure(format!(
            "{} is not diagonally implicit",
            tab.name
        )))
    }
}

fn solve_linear(m: DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let sol = m.lu().solve(rhs)?;
    sol.iter().all(|v| v.is_finite()).then_some(sol)
}

/// Solves `Y = base + h a g(Y, u)` by damped Newton.
fn implicit_stage(
    prob: &dyn ControlProblem,
    base: &DVector<f64>,
    u: &DVector<f64>,
    ha: f64,
    step: usize,
    stage: usize,
) -> Result<DVector<f64>> {
    let k = base.len();
    let residual = |y: &DVector<f64>| y - base - prob.g(y, u) * ha;
    let mut y = base.clone();
    let mut r = residual(&y);
    let mut rn = r.amax();
    for _ in 0..STAGE_MAX_ITER {
        if rn <= STAGE_TOL {
            return Ok(y);
        }
        let jac = DMatrix::identity(k, k) - prob.g_y(&y, u) * ha;
        let delta = solve_linear(jac, &r).ok_or(Error::StageSolve {
            step,
            stage,
            residual: rn,
        })?;
        let mut lambda = 1.0;
        let (mut y_new, mut r_new);
        loop {
            y_new = &y - &delta * lambda;
            r_new = residual(&y_new);
            if r_new.amax() <= rn || lambda < 1e-4 {
                break;
            }
            lambda *= 0.5;
        }
        let correction = (&delta * lambda).amax();
        y = y_new;
        r = r_new;
        rn = r.amax();
        // Residuals of very stiff stages stall at the rounding level of h a g(Y).
        if correction <= STAGE_TOL * y.amax().max(1.0) {
            return Ok(y);
        }
    }
    if rn <= STAGE_TOL {
        Ok(y)
    } else {
        Err(Error::StageSolve {
            step,
            stage,
            residual: rn,
        })
    }
}

/// Computes the stages and the endpoint of one step from `y_n`.
pub fn solve_step(
    tab: &ImexTableau,
    prob: &dyn ControlProblem,
    y_n: &DVector<f64>,
    controls: &[DVector<f64>],
    h: f64,
    step: usize,
) -> Result<(StepStages, DVector<f64>)> {
    require_diagonally_implicit(tab)?;
    let s = tab.stages;
    let mut st = StepStages {
        y: Vec::with_capacity(s),
        k_exp: Vec::with_capacity(s),
        k_imp: Vec::with_capacity(s),
    };
    for i in 0..s {
        let u = &controls[i];
        let mut base = y_n.clone();
        for j in 0..i {
            base += &st.k_exp[j] * (h * tab.a_exp[(i, j)]);
            base += &st.k_imp[j] * (h * tab.a_imp[(i, j)]);
        }
        let ha = h * tab.a_imp[(i, i)];
        let (yi, ki) = if tab.a_imp[(i, i)].abs() <= STRUCTURE_TOL || h == 0.0 {
            let ki = prob.g(&base, u);
            (base, ki)
        } else {
            let yi = implicit_stage(prob, &base, u, ha, step, i)?;
            let ki = (&yi - &base) / ha;
            (yi, ki)
        };
        st.k_exp.push(prob.f(&yi, u));
        st.k_imp.push(ki);
        st.y.push(yi);
    }
    let mut y_next = y_n.clone();
    for i in 0..s {
        y_next += &st.k_exp[i] * (h * tab.b_exp[i]);
        y_next += &st.k_imp[i] * (h * tab.b_imp[i]);
    }
    Ok((st, y_next))
}

/// Integrates the state from the problem's initial value over `steps` uniform steps.
pub fn forward(
    tab: &ImexTableau,
    prob: &dyn ControlProblem,
    u: &ControlGrid,
    steps: usize,
) -> Result<Trajectory> {
    forward_from(tab, prob, u, steps, &prob.initial_state())
}

/// [`forward`] with an explicit initial value.
pub fn forward_from(
    tab: &ImexTableau,
    prob: &dyn ControlProblem,
    u: &ControlGrid,
    steps: usize,
    y0: &DVector<f64>,
) -> Result<Trajectory> {
    if steps == 0 {
        return Err(Error::Domain("number of steps must be at least 1".into()));
    }
    require_diagonally_implicit(tab)?;
    u.check(tab, prob, steps)?;
    let h = prob.horizon() / steps as f64;
    let mut traj = Trajectory {
        h,
        times: (0..=steps).map(|n| n as f64 * h).collect(),
        y: Vec::with_capacity(steps + 1),
        stages_y: Vec::with_capacity(steps),
        stages_k_exp: Vec::with_capacity(steps),
        stages_k_imp: Vec::with_capacity(steps),
    };
    traj.y.push(y0.clone());
    for n in 0..steps {
        let (st, y_next) = solve_step(tab, prob, &traj.y[n], &u.stage_controls(n), h, n)?;
        traj.stages_y.push(st.y);
        traj.stages_k_exp.push(st.k_exp);
        traj.stages_k_imp.push(st.k_imp);
        traj.y.push(y_next);
    }
    Ok(traj)
}

/// CSV with header `t,y1..yK` and, when an adjoint is given, `p1..pK`.
pub fn trajectory_csv(traj: &Trajectory, adj: Option<&AdjointTrajectory>) -> String {
    let k = traj.y[0].len();
    let mut header: Vec<String> = vec!["t".into()];
    header.extend((1..=k).map(|i| format!("y{i}")));
    if adj.is_some() {
        header.extend((1..=k).map(|i| format!("p{i}")));
    }
    let mut out = header.join(",");
    out.push('\n');
    for (n, t) in traj.times.iter().enumerate() {
        let mut row = vec![fmt_f64(*t)];
        row.extend(traj.y[n].iter().map(|v| fmt_f64(*v)));
        if let Some(a) = adj {
            row.extend(a.p[n].iter().map(|v| fmt_f64(*v)));
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
