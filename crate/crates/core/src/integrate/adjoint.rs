//! Discrete adjoint of the IMEX scheme in three equivalent formulations.
//!
//! All formulations run backward from `p_N = j'(y_N)` and produce the same
//! sequence `p_n` together with the stage multipliers
//!
//! ```text
//! ξ̃_i = h ω̃_i p_{n+1} + h Σ_j ã_ji η_j        (paired with f)
//! ξ_i  = h ω_i  p_{n+1} + h Σ_j a_ji  η_j        (paired with g)
//! η_i  = f_y(Y_i)ᵀ ξ̃_i + g_y(Y_i)ᵀ ξ_i,          p_n = p_{n+1} + Σ_i η_i
//! ```
//!
//! * `stage-sweep` solves the multiplier equations stage by stage in reverse order.
//! * `transformed` solves for the scaled stages `P̃_i = ξ̃_i/(h ω̃_i)`, `P_i = ξ_i/(h ω_i)`.
//! * `block` solves the coupled system for the increments `η` directly.

use nalgebra::{DMatrix, DVector};

use super::stages::{StageStates, StoredStages};
use super::{require_diagonally_implicit, ControlGrid, Trajectory};
use crate::error::{Error, Result};
use crate::problems::ControlProblem;
use crate::tableau::{adjoint_coefficients, AdjointCoefficients, AdjointValidity, ImexTableau};

/// Backward adjoint solution.
#[derive(Clone, Debug)]
pub struct AdjointTrajectory {
    /// Name of the formulation that produced it.
    pub scheme: &'static str,
    /// `p[n]`, `n = 0..=N`.
    pub p: Vec<DVector<f64>>,
    /// Multipliers paired with the explicit part, `ξ̃_n^(i)`.
    pub mult_exp: Vec<Vec<DVector<f64>>>,
    /// Multipliers paired with the implicit part, `ξ_n^(i)`.
    pub mult_imp: Vec<Vec<DVector<f64>>>,
    /// Per-stage increments `η_n^(i)` with `p_n = p_{n+1} + Σ_i η_n^(i)`.
    pub increments: Vec<Vec<DVector<f64>>>,
    /// Scaled stages `P̃_n^(i)` (transformed formulation only).
    pub stage_p_exp: Option<Vec<Vec<DVector<f64>>>>,
    /// Scaled stages `P_n^(i)` (transformed formulation only).
    pub stage_p_imp: Option<Vec<Vec<DVector<f64>>>>,
}

impl AdjointTrajectory {
    fn empty(scheme: &'static str, steps: usize, terminal: DVector<f64>) -> Self {
        let mut p = vec![DVector::zeros(0); steps + 1];
        p[steps] = terminal;
        AdjointTrajectory {
            scheme,
            p,
            mult_exp: vec![Vec::new(); steps],
            mult_imp: vec![Vec::new(); steps],
            increments: vec![Vec::new(); steps],
            stage_p_exp: None,
            stage_p_imp: None,
        }
    }
}

/// A discrete adjoint formulation.
pub trait AdjointScheme: Send + Sync {
    fn name(&self) -> &'static str;

    fn solve(
        &self,
        tab: &ImexTableau,
        prob: &dyn ControlProblem,
        traj: &Trajectory,
        u: &ControlGrid,
        stages: &dyn StageStates,
    ) -> Result<AdjointTrajectory>;
}

struct StageSweep;
struct Transformed;
struct Block;

struct SchemeEntry {
    name: &'static str,
    build: fn() -> Box<dyn AdjointScheme>,
}

const SCHEMES: &[SchemeEntry] = &[
    SchemeEntry {
        name: "stage-sweep",
        build: || Box::new(StageSweep),
    },
    SchemeEntry {
        name: "transformed",
        build: || Box::new(Transformed),
    },
    SchemeEntry {
        name: "block",
        build: || Box::new(Block),
    },
];

pub fn adjoint_scheme_names() -> Vec<&'static str> {
    SCHEMES.iter().map(|e| e.name).collect()
}

pub fn adjoint_scheme(name: &str) -> Result<Box<dyn AdjointScheme>> {
    SCHEMES
        .iter()
        .find(|e| e.name == name)
        .map(|e| (e.build)())
        .ok_or_else(|| Error::UnknownName {
            kind: "adjoint scheme",
            name: name.to_string(),
            available: adjoint_scheme_names().iter().map(|s| s.to_string()).collect(),
        })
}

// ---------------------------------------------------------------------------

struct StepJacobians {
    f_y: Vec<DMatrix<f64>>,
    g_y: Vec<DMatrix<f64>>,
}

fn step_jacobians(
    prob: &dyn ControlProblem,
    stages: &dyn StageStates,
    u: &ControlGrid,
    n: usize,
    s: usize,
) -> StepJacobians {
    let mut jac = StepJacobians {
        f_y: Vec::with_capacity(s),
        g_y: Vec::with_capacity(s),
    };
    for i in 0..s {
        let y = stages.stage(n, i);
        jac.f_y.push(prob.f_y(&y, u.stage(n, i)));
        jac.g_y.push(prob.g_y(&y, u.stage(n, i)));
    }
    jac
}

fn check_inputs(
    tab: &ImexTableau,
    prob: &dyn ControlProblem,
    traj: &Trajectory,
    u: &ControlGrid,
) -> Result<()> {
    require_diagonally_implicit(tab)?;
    let steps = traj.steps();
    if u.steps() != steps || u.stages() != tab.stages || traj.stages_y.len() != steps {
        return Err(Error::Domain(
            "trajectory, control grid and tableau do not match".into(),
        ));
    }
    if traj.y[0].len() != prob.state_dim() {
        return Err(Error::Domain("trajectory dimension does not match problem".into()));
    }
    Ok(())
}

fn solve_dense(m: DMatrix<f64>, rhs: &DVector<f64>, step: usize, context: &str) -> Result<DVector<f64>> {
    m.lu()
        .solve(rhs)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Singular {
            step,
            context: context.to_string(),
        })
}

impl AdjointScheme for StageSweep {
    fn name(&self) -> &'static str {
        "stage-sweep"
    }

    fn solve(
        &self,
        tab: &ImexTableau,
        prob: &dyn ControlProblem,
        traj: &Trajectory,
        u: &ControlGrid,
        stages: &dyn StageStates,
    ) -> Result<AdjointTrajectory> {
        check_inputs(tab, prob, traj, u)?;
        let (s, k, h) = (tab.stages, prob.state_dim(), traj.h);
        let steps = traj.steps();
        let mut out = AdjointTrajectory::empty(self.name(), steps, prob.terminal_gradient(traj.final_state()));
        for n in (0..steps).rev() {
            let jac = step_jacobians(prob, stages, u, n, s);
            let p = out.p[n + 1].clone();
            let mut eta = vec![DVector::zeros(k); s];
            let mut xt = vec![DVector::zeros(k); s];
            let mut xi = vec![DVector::zeros(k); s];
            for i in (0..s).rev() {
                let mut t = &p * (h * tab.b_exp[i]);
                let mut r = &p * (h * tab.b_imp[i]);
                for j in i + 1..s {
                    t += &eta[j] * (h * tab.a_exp[(j, i)]);
                    r += &eta[j] * (h * tab.a_imp[(j, i)]);
                }
                let ha = h * tab.a_imp[(i, i)];
                r += jac.f_y[i].tr_mul(&t) * ha;
                let m = DMatrix::identity(k, k) - jac.g_y[i].transpose() * ha;
                let x = solve_dense(m, &r, n, "stage multiplier matrix")?;
                eta[i] = jac.f_y[i].tr_mul(&t) + jac.g_y[i].tr_mul(&x);
                xt[i] = t;
                xi[i] = x;
            }
            let mut pn = p;
            for e in &eta {
                pn += e;
            }
            out.p[n] = pn;
            out.mult_exp[n] = xt;
            out.mult_imp[n] = xi;
            out.increments[n] = eta;
        }
        Ok(out)
    }
}

/// Solves the scaled stage system of one step with backward coefficient
/// families. Returns `(P̃, P)`.
fn transformed_stages(
    adj: &AdjointCoefficients,
    jac: &StepJacobians,
    p: &DVector<f64>,
    h: f64,
    n: usize,
) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
    let s = jac.f_y.len();
    let k = p.len();
    let dim = 2 * s * k;
    let mut m = DMatrix::<f64>::identity(dim, dim);
    let mut rhs = DVector::zeros(dim);
    for i in 0..s {
        for (row_block, (c_exp, c_imp)) in [
            (i, (&adj.check_alpha, &adj.hat_alpha)),
            (s + i, (&adj.check_beta, &adj.hat_beta)),
        ] {
            rhs.rows_mut(row_block * k, k).copy_from(p);
            for j in 0..s {
                let fe = jac.f_y[j].transpose() * (-h * c_exp[(i, j)]);
                let ge = jac.g_y[j].transpose() * (-h * c_imp[(i, j)]);
                let mut blk = m.view_mut((row_block * k, j * k), (k, k));
                blk += fe;
                let mut blk = m.view_mut((row_block * k, (s + j) * k), (k, k));
                blk += ge;
            }
        }
    }
    let sol = solve_dense(m, &rhs, n, "transformed stage system")?;
    let pe = (0..s).map(|i| sol.rows(i * k, k).into_owned()).collect();
    let pi = (0..s).map(|i| sol.rows((s + i) * k, k).into_owned()).collect();
    Ok((pe, pi))
}

fn transformed_solve(
    tab: &ImexTableau,
    adj: &AdjointCoefficients,
    prob: &dyn ControlProblem,
    traj: &Trajectory,
    u: &ControlGrid,
    stages: &dyn StageStates,
) -> Result<AdjointTrajectory> {
    check_inputs(tab, prob, traj, u)?;
    if adj.validity == AdjointValidity::Unavailable {
        return Err(Error::UnsupportedStructure(format!(
            "{}: transformed adjoint stages need nonzero weights",
            tab.name
        )));
    }
    let (s, h) = (tab.stages, traj.h);
    let steps = traj.steps();
    let mut out = AdjointTrajectory::empty("transformed", steps, prob.terminal_gradient(traj.final_state()));
    let mut all_pe = vec![Vec::new(); steps];
    let mut all_pi = vec![Vec::new(); steps];
    for n in (0..steps).rev() {
        let jac = step_jacobians(prob, stages, u, n, s);
        let p = out.p[n + 1].clone();
        let (pe, pi) = transformed_stages(adj, &jac, &p, h, n)?;
        let mut pn = p;
        let mut eta = Vec::with_capacity(s);
        for i in 0..s {
            let e = jac.f_y[i].tr_mul(&pe[i]) * (h * tab.b_exp[i])
                + jac.g_y[i].tr_mul(&pi[i]) * (h * tab.b_imp[i]);
            pn += &e;
            eta.push(e);
        }
        out.p[n] = pn;
        out.mult_exp[n] = (0..s).map(|i| &pe[i] * (h * tab.b_exp[i])).collect();
        out.mult_imp[n] = (0..s).map(|i| &pi[i] * (h * tab.b_imp[i])).collect();
        out.increments[n] = eta;
        all_pe[n] = pe;
        all_pi[n] = pi;
    }
    out.stage_p_exp = Some(all_pe);
    out.stage_p_imp = Some(all_pi);
    Ok(out)
}

impl AdjointScheme for Transformed {
    fn name(&self) -> &'static str {
        "transformed"
    }

    fn solve(
        &self,
        tab: &ImexTableau,
        prob: &dyn ControlProblem,
        traj: &Trajectory,
        u: &ControlGrid,
        stages: &dyn StageStates,
    ) -> Result<AdjointTrajectory> {
        transformed_solve(tab, &adjoint_coefficients(tab), prob, traj, u, stages)
    }
}

impl AdjointScheme for Block {
    fn name(&self) -> &'static str {
        "block"
    }

    fn solve(
        &self,
        tab: &ImexTableau,
        prob: &dyn ControlProblem,
        traj: &Trajectory,
        u: &ControlGrid,
        stages: &dyn StageStates,
    ) -> Result<AdjointTrajectory> {
        check_inputs(tab, prob, traj, u)?;
        let (s, k, h) = (tab.stages, prob.state_dim(), traj.h);
        let steps = traj.steps();
        let mut out = AdjointTrajectory::empty(self.name(), steps, prob.terminal_gradient(traj.final_state()));
        let dim = s * k;
        for n in (0..steps).rev() {
            let jac = step_jacobians(prob, stages, u, n, s);
            let p = out.p[n + 1].clone();
            // M = I − hB with B_ij = ã_ji f_y,iᵀ + a_ji g_y,iᵀ; right side h C p
            let mut m = DMatrix::<f64>::identity(dim, dim);
            let mut rhs = DVector::zeros(dim);
            for i in 0..s {
                let ft = jac.f_y[i].transpose();
                let gt = jac.g_y[i].transpose();
                let c = &ft * tab.b_exp[i] + &gt * tab.b_imp[i];
                rhs.rows_mut(i * k, k).copy_from(&(c * &p * h));
                for j in 0..s {
                    let b = &ft * tab.a_exp[(j, i)] + &gt * tab.a_imp[(j, i)];
                    let mut blk = m.view_mut((i * k, j * k), (k, k));
                    blk -= b * h;
                }
            }
            let zeta = solve_dense(m, &rhs, n, "block increment system")?;
            let eta: Vec<DVector<f64>> = (0..s).map(|i| zeta.rows(i * k, k).into_owned()).collect();
            let mut pn = p.clone();
            for e in &eta {
                pn += e;
            }
            let mut xt = Vec::with_capacity(s);
            let mut xi = Vec::with_capacity(s);
            for i in 0..s {
                let mut t = &p * (h * tab.b_exp[i]);
                let mut r = &p * (h * tab.b_imp[i]);
                for j in 0..s {
                    t += &eta[j] * (h * tab.a_exp[(j, i)]);
                    r += &eta[j] * (h * tab.a_imp[(j, i)]);
                }
                xt.push(t);
                xi.push(r);
            }
            out.p[n] = pn;
            out.mult_exp[n] = xt;
            out.mult_imp[n] = xi;
            out.increments[n] = eta;
        }
        Ok(out)
    }
}

/// Reverse stage sweep with stored stage values.
pub fn adjoint_backward(
    tab: &ImexTableau,
    prob: &dyn ControlProblem,
    traj: &Trajectory,
    u: &ControlGrid,
) -> Result<AdjointTrajectory> {
    StageSweep.solve(tab, prob, traj, u, &StoredStages(traj))
}

/// Scaled-stage formulation with the given coefficient families.
pub fn adjoint_forward_form(
    tab: &ImexTableau,
    adj: &AdjointCoefficients,
    prob: &dyn ControlProblem,
    traj: &Trajectory,
    u: &ControlGrid,
) -> Result<AdjointTrajectory> {
    transformed_solve(tab, adj, prob, traj, u, &StoredStages(traj))
}

/// Block increment formulation with stored stage values.
pub fn adjoint_hs_form(
    tab: &ImexTableau,
    prob: &dyn ControlProblem,
    traj: &Trajectory,
    u: &ControlGrid,
) -> Result<AdjointTrajectory> {
    Block.solve(tab, prob, traj, u, &StoredStages(traj))
}

/// Adjoint integrated as an additive scheme for the duplicated system
/// `(p_aux, p)`, where the stages paired with `f` are built from `p_aux` and
/// those paired with `g` from `p`.
#[derive(Clone, Debug)]
pub struct ExtendedAdjoint {
    pub p: Vec<DVector<f64>>,
    pub p_aux: Vec<DVector<f64>>,
}

impl ExtendedAdjoint {
    /// `max_n ‖p_aux[n] − p[n]‖∞`.
    pub fn max_discrepancy(&self) -> f64 {
        self.p
            .iter()
            .zip(&self.p_aux)
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max)
    }
}

pub fn extended_adjoint(
    tab: &ImexTableau,
    prob: &dyn ControlProblem,
    traj: &Trajectory,
    u: &ControlGrid,
) -> Result<ExtendedAdjoint> {
    check_inputs(tab, prob, traj, u)?;
    let adj = adjoint_coefficients(tab);
    if adj.validity == AdjointValidity::Unavailable {
        return Err(Error::UnsupportedStructure(format!(
            "{}: transformed adjoint stages need nonzero weights",
            tab.name
        )));
    }
    let (s, k, h) = (tab.stages, prob.state_dim(), traj.h);
    let steps = traj.steps();
    let stored = StoredStages(traj);
    let terminal = prob.terminal_gradient(traj.final_state());
    let mut p = vec![DVector::zeros(k); steps + 1];
    let mut p_aux = p.clone();
    p[steps] = terminal.clone();
    p_aux[steps] = terminal;
    // unknowns: P̃ (s blocks), P (s blocks), p_aux_n, p_n
    let dim = (2 * s + 2) * k;
    let aux_col = 2 * s * k;
    let p_col = (2 * s + 1) * k;
    for n in (0..steps).rev() {
        let jac = step_jacobians(prob, &stored, u, n, s);
        let ft: Vec<_> = jac.f_y.iter().map(|m| m.transpose()).collect();
        let gt: Vec<_> = jac.g_y.iter().map(|m| m.transpose()).collect();
        let mut m = DMatrix::<f64>::identity(dim, dim);
        let mut rhs = DVector::zeros(dim);
        let eye = DMatrix::<f64>::identity(k, k);
        for i in 0..s {
            for (row, base_col, (ce, ci)) in [
                (i * k, aux_col, (&adj.alpha_exp, &adj.alpha_imp)),
                ((s + i) * k, p_col, (&adj.beta_exp, &adj.beta_imp)),
            ] {
                let mut blk = m.view_mut((row, base_col), (k, k));
                blk -= &eye;
                for j in 0..s {
                    let mut b = m.view_mut((row, j * k), (k, k));
                    b += &ft[j] * (h * ce[(i, j)]);
                    let mut b = m.view_mut((row, (s + j) * k), (k, k));
                    b += &gt[j] * (h * ci[(i, j)]);
                }
            }
        }
        for (row, target) in [(aux_col, &p_aux[n + 1]), (p_col, &p[n + 1])] {
            rhs.rows_mut(row, k).copy_from(target);
            for j in 0..s {
                let mut b = m.view_mut((row, j * k), (k, k));
                b -= &ft[j] * (h * tab.b_exp[j]);
                let mut b = m.view_mut((row, (s + j) * k), (k, k));
                b -= &gt[j] * (h * tab.b_imp[j]);
            }
        }
        let sol = solve_dense(m, &rhs, n, "extended adjoint system")?;
        p_aux[n] = sol.rows(aux_col, k).into_owned();
        p[n] = sol.rows(p_col, k).into_owned();
    }
    Ok(ExtendedAdjoint { p, p_aux })
}
