//! Symplecticity of the coupled state/adjoint one-step map.
//!
//! One step solves the state stages together with the scaled adjoint stages,
//! the stage controls being eliminated through the stationarity condition:
//!
//! ```text
//! Y_i = y0 + h Σ_j ã_ij f(Y_j, u_j) + h Σ_j a_ij g(Y_j, u_j)
//! P̃_i = p0 − h Σ_j α̃_ij f_yᵀ P̃_j − h Σ_j α_ij g_yᵀ P_j
//! P_i = p0 − h Σ_j β̃_ij f_yᵀ P̃_j − h Σ_j β_ij g_yᵀ P_j
//! f_u(Y_i, u_i)ᵀ P̃_i + g_u(Y_i, u_i)ᵀ P_i = 0
//! ```
//!
//! The Jacobian `M` of `(y0, p0) ↦ (y1, p1)` is formed by central differences
//! and the residual `‖MᵀΩM − Ω‖∞` measures the defect of the canonical 2-form.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::order_check::{symplectic_conditions, DEFAULT_TOL};
use crate::problems::HamiltonianProblem;
use crate::report::fmt_f64;
use crate::tableau::{AdjointCoefficients, AdjointValidity, ImexTableau};

/// Residual tolerance of the coupled stage solve (∞-norm).
pub const COUPLED_TOL: f64 = 1e-13;
const COUPLED_MAX_ITER: usize = 60;
/// Default central-difference step for [`step_jacobian`].
pub const DEFAULT_JACOBIAN_STEP: f64 = 1e-5;

/// Converged stage unknowns `(Y, P̃, P)` of one coupled step, stacked.
#[derive(Clone, Debug)]
pub struct CoupledStages(pub DVector<f64>);

#[derive(Clone, Debug)]
pub struct CoupledStep {
    pub y1: DVector<f64>,
    pub p1: DVector<f64>,
    pub stages: CoupledStages,
}

struct StageEval {
    f: Vec<DVector<f64>>,
    g: Vec<DVector<f64>>,
    f_y: Vec<DMatrix<f64>>,
    g_y: Vec<DMatrix<f64>>,
}

struct Layout {
    s: usize,
    k: usize,
}

impl Layout {
    fn y(&self, x: &DVector<f64>, i: usize) -> DVector<f64> {
        x.rows(i * self.k, self.k).into_owned()
    }
    fn p_exp(&self, x: &DVector<f64>, i: usize) -> DVector<f64> {
        x.rows((self.s + i) * self.k, self.k).into_owned()
    }
    fn p_imp(&self, x: &DVector<f64>, i: usize) -> DVector<f64> {
        x.rows((2 * self.s + i) * self.k, self.k).into_owned()
    }
}

fn eval_stages(prob: &dyn HamiltonianProblem, lay: &Layout, x: &DVector<f64>) -> Result<StageEval> {
    let mut ev = StageEval {
        f: Vec::with_capacity(lay.s),
        g: Vec::with_capacity(lay.s),
        f_y: Vec::with_capacity(lay.s),
        g_y: Vec::with_capacity(lay.s),
    };
    for i in 0..lay.s {
        let y = lay.y(x, i);
        let u = prob.stage_control(&y, &lay.p_imp(x, i), &lay.p_exp(x, i))?;
        ev.f.push(prob.f(&y, &u));
        ev.g.push(prob.g(&y, &u));
        ev.f_y.push(prob.f_y(&y, &u));
        ev.g_y.push(prob.g_y(&y, &u));
    }
    Ok(ev)
}

struct System<'a> {
    tab: &'a ImexTableau,
    adj: &'a AdjointCoefficients,
    prob: &'a dyn HamiltonianProblem,
    y0: &'a DVector<f64>,
    p0: &'a DVector<f64>,
    h: f64,
    lay: Layout,
}

impl System<'_> {
    fn residual(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let (s, k, h) = (self.lay.s, self.lay.k, self.h);
        let ev = eval_stages(self.prob, &self.lay, x)?;
        let ft: Vec<DVector<f64>> = (0..s).map(|j| ev.f_y[j].tr_mul(&self.lay.p_exp(x, j))).collect();
        let gt: Vec<DVector<f64>> = (0..s).map(|j| ev.g_y[j].tr_mul(&self.lay.p_imp(x, j))).collect();
        let mut r = DVector::zeros(3 * s * k);
        for i in 0..s {
            let mut ry = self.lay.y(x, i) - self.y0;
            let mut re = self.lay.p_exp(x, i) - self.p0;
            let mut ri = self.lay.p_imp(x, i) - self.p0;
            for j in 0..s {
                ry -= &ev.f[j] * (h * self.tab.a_exp[(i, j)]) + &ev.g[j] * (h * self.tab.a_imp[(i, j)]);
                re += &ft[j] * (h * self.adj.alpha_exp[(i, j)]) + &gt[j] * (h * self.adj.alpha_imp[(i, j)]);
                ri += &ft[j] * (h * self.adj.beta_exp[(i, j)]) + &gt[j] * (h * self.adj.beta_imp[(i, j)]);
            }
            r.rows_mut(i * k, k).copy_from(&ry);
            r.rows_mut((s + i) * k, k).copy_from(&re);
            r.rows_mut((2 * s + i) * k, k).copy_from(&ri);
        }
        Ok(r)
    }

    fn endpoint(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let ev = eval_stages(self.prob, &self.lay, x)?;
        let mut y1 = self.y0.clone();
        let mut p1 = self.p0.clone();
        for i in 0..self.lay.s {
            let (we, wi) = (self.h * self.tab.b_exp[i], self.h * self.tab.b_imp[i]);
            y1 += &ev.f[i] * we + &ev.g[i] * wi;
            p1 -= ev.f_y[i].tr_mul(&self.lay.p_exp(x, i)) * we + ev.g_y[i].tr_mul(&self.lay.p_imp(x, i)) * wi;
        }
        Ok((y1, p1))
    }

    fn fd_jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let n = x.len();
        let mut jac = DMatrix::zeros(n, n);
        for c in 0..n {
            let d = 1e-7 * x[c].abs().max(1.0);
            let mut plus = x.clone();
            let mut minus = x.clone();
            plus[c] += d;
            minus[c] -= d;
            let col = (self.residual(&plus)? - self.residual(&minus)?) / (plus[c] - minus[c]);
            jac.set_column(c, &col);
        }
        Ok(jac)
    }
}

fn require_transformable(adj: &AdjointCoefficients, tab: &ImexTableau) -> Result<()> {
    if adj.validity == AdjointValidity::Unavailable {
        return Err(Error::UnsupportedStructure(format!(
            "{}: coupled step needs scaled adjoint stages (a weight vanishes)",
            tab.name
        )));
    }
    Ok(())
}

/// One step of the coupled state/adjoint scheme from `(y0, p0)`.
pub fn coupled_step(
    tab: &ImexTableau,
    adj: &AdjointCoefficients,
    prob: &dyn HamiltonianProblem,
    y0: &DVector<f64>,
    p0: &DVector<f64>,
    h: f64,
) -> Result<CoupledStep> {
    coupled_step_from(tab, adj, prob, y0, p0, h, None)
}

/// [`coupled_step`] warm-started from previously converged stages.
pub fn coupled_step_from(
    tab: &ImexTableau,
    adj: &AdjointCoefficients,
    prob: &dyn HamiltonianProblem,
    y0: &DVector<f64>,
    p0: &DVector<f64>,
    h: f64,
    guess: Option<&CoupledStages>,
) -> Result<CoupledStep> {
    require_transformable(adj, tab)?;
    let (s, k) = (tab.stages, prob.state_dim());
    let sys = System {
        tab,
        adj,
        prob,
        y0,
        p0,
        h,
        lay: Layout { s, k },
    };
    let mut x = match guess {
        Some(g) if g.0.len() == 3 * s * k => g.0.clone(),
        _ => {
            let mut x = DVector::zeros(3 * s * k);
            for i in 0..s {
                x.rows_mut(i * k, k).copy_from(y0);
                x.rows_mut((s + i) * k, k).copy_from(p0);
                x.rows_mut((2 * s + i) * k, k).copy_from(p0);
            }
            x
        }
    };
    let mut r = sys.residual(&x)?;
    let mut iter = 0;
    while r.amax() > COUPLED_TOL {
        if iter == COUPLED_MAX_ITER {
            return Err(Error::StageSolve {
                step: 0,
                stage: 0,
                residual: r.amax(),
            });
        }
        iter += 1;
        let jac = sys.fd_jacobian(&x)?;
        let delta = jac.lu().solve(&r).ok_or_else(|| Error::Singular {
            step: 0,
            context: "coupled stage Jacobian".into(),
        })?;
        let mut lambda = 1.0;
        loop {
            let trial = &x - &delta * lambda;
            match sys.residual(&trial) {
                Ok(rt) if rt.amax() < r.amax() || lambda < 1e-3 => {
                    x = trial;
                    r = rt;
                    break;
                }
                _ if lambda < 1e-3 => {
                    return Err(Error::StageSolve {
                        step: 0,
                        stage: 0,
                        residual: r.amax(),
                    })
                }
                _ => lambda *= 0.5,
            }
        }
        // stop once corrections reach the rounding level
        if (&delta * lambda).amax() <= 1e-15 * x.amax().max(1.0) {
            break;
        }
    }
    let (y1, p1) = sys.endpoint(&x)?;
    Ok(CoupledStep {
        y1,
        p1,
        stages: CoupledStages(x),
    })
}

/// `∂(y1, p1)/∂(y0, p0)` by central differences.
#[derive(Clone, Debug)]
pub struct StepJacobian {
    pub matrix: DMatrix<f64>,
    pub h: f64,
}

impl StepJacobian {
    /// `‖MᵀΩM − Ω‖∞` (largest absolute entry) with `Ω = [[0, I], [−I, 0]]`.
    pub fn residual(&self) -> f64 {
        let m = &self.matrix;
        let omega = canonical_form(m.nrows() / 2);
        (m.transpose() * &omega * m - omega).amax()
    }
}

pub fn canonical_form(k: usize) -> DMatrix<f64> {
    let mut omega = DMatrix::zeros(2 * k, 2 * k);
    for i in 0..k {
        omega[(i, k + i)] = 1.0;
        omega[(k + i, i)] = -1.0;
    }
    omega
}

pub fn step_jacobian(
    tab: &ImexTableau,
    adj: &AdjointCoefficients,
    prob: &dyn HamiltonianProblem,
    y0: &DVector<f64>,
    p0: &DVector<f64>,
    h: f64,
    fd_step: f64,
) -> Result<StepJacobian> {
    if !(fd_step > 0.0) {
        return Err(Error::Domain("finite-difference step must be positive".into()));
    }
    let k = y0.len();
    let base = coupled_step(tab, adj, prob, y0, p0, h)?;
    let mut matrix = DMatrix::zeros(2 * k, 2 * k);
    for c in 0..2 * k {
        let probe = |sign: f64| -> Result<DVector<f64>> {
            let (mut y, mut p) = (y0.clone(), p0.clone());
            if c < k {
                y[c] += sign * fd_step;
            } else {
                p[c - k] += sign * fd_step;
            }
            let st = coupled_step_from(tab, adj, prob, &y, &p, h, Some(&base.stages))?;
            let mut out = DVector::zeros(2 * k);
            out.rows_mut(0, k).copy_from(&st.y1);
            out.rows_mut(k, k).copy_from(&st.p1);
            Ok(out)
        };
        let col = (probe(1.0)? - probe(-1.0)?) / (2.0 * fd_step);
        matrix.set_column(c, &col);
    }
    Ok(StepJacobian { matrix, h })
}

#[derive(Clone, Debug)]
pub struct SymplecticReport {
    /// `(h, residual)` pairs in the order requested.
    pub h_sweep: Vec<(f64, f64)>,
    /// Tableau satisfies the symplecticity conditions.
    pub qualified: bool,
}

impl SymplecticReport {
    /// Largest residual over the sweep.
    pub fn residual(&self) -> f64 {
        self.h_sweep.iter().map(|r| r.1).fold(0.0, f64::max)
    }

    /// CSV with header `h,residual,qualified`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("h,residual,qualified\n");
        for (h, r) in &self.h_sweep {
            out.push_str(&format!("{},{},{}\n", fmt_f64(*h), fmt_f64(*r), self.qualified));
        }
        out
    }
}

pub fn symplectic_residual(
    tab: &ImexTableau,
    adj: &AdjointCoefficients,
    prob: &dyn HamiltonianProblem,
    y0: &DVector<f64>,
    p0: &DVector<f64>,
    h_list: &[f64],
    fd_step: f64,
) -> Result<SymplecticReport> {
    let qualified = symplectic_conditions(tab, adj, DEFAULT_TOL)
        .map(|c| c.qualified)
        .unwrap_or(false);
    let rows: Result<Vec<(f64, f64)>> = h_list
        .par_iter()
        .map(|&h| Ok((h, step_jacobian(tab, adj, prob, y0, p0, h, fd_step)?.residual())))
        .collect();
    Ok(SymplecticReport {
        h_sweep: rows?,
        qualified,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::{forward_from, ControlGrid, ControlMode};
    use crate::problems::{hager_hamiltonian, linear_split_problem};
    use crate::tableau::{adjoint_coefficients, builtin};

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn scalar_amplification_factors_are_reciprocal() {
        let tab = builtin("imex-ssp2").unwrap();
        let adj = adjoint_coefficients(&tab);
        let prob = linear_split_problem(0.7, -1.3);
        for h in [0.2, 0.1, 0.05] {
            let st = coupled_step(&tab, &adj, &prob, &v(&[1.0]), &v(&[1.0]), h).unwrap();
            assert!((st.y1[0] * st.p1[0] - 1.0).abs() <= 1e-13, "{h}");
        }
    }

    #[test]
    fn zero_step_is_identity() {
        let tab = builtin("imex-sa3").unwrap();
        let adj = adjoint_coefficients(&tab);
        let prob = hager_hamiltonian(1.0).unwrap();
        let (y0, p0) = (v(&[0.0, 1.0, 0.5]), v(&[1.0, 0.2, -0.1]));
        let st = coupled_step(&tab, &adj, &prob, &y0, &p0, 0.0).unwrap();
        assert_eq!(st.y1, y0);
        assert_eq!(st.p1, p0);
        let jac = step_jacobian(&tab, &adj, &linear_split_problem(0.0, 0.0), &v(&[1.0]), &v(&[1.0]), 0.1, 1e-5).unwrap();
        assert!((jac.matrix - DMatrix::identity(2, 2)).amax() <= 1e-10);
    }

    #[test]
    fn linear_jacobian_matches_amplification() {
        let tab = builtin("imex-ssp2").unwrap();
        let adj = adjoint_coefficients(&tab);
        let prob = linear_split_problem(0.7, -1.3);
        let h = 0.1;
        let u = ControlGrid::constant(ControlMode::PerStep, 1, tab.stages, &v(&[0.0]));
        let mut lin = prob.clone();
        lin.lambda *= h;
        lin.mu *= h;
        // one forward step of length h via a horizon-1 run on the scaled problem
        let traj = forward_from(&tab, &lin, &u, 1, &v(&[1.0])).unwrap();
        let r = traj.y[1][0];
        for point in [(1.0, 1.0), (-2.0, 0.5)] {
            let jac = step_jacobian(&tab, &adj, &prob, &v(&[point.0]), &v(&[point.1]), h, 1e-5).unwrap();
            assert!((jac.matrix[(0, 0)] - r).abs() <= 1e-9);
            assert!((jac.matrix[(1, 1)] - 1.0 / r).abs() <= 1e-9);
            assert!(jac.matrix[(0, 1)].abs() <= 1e-9 && jac.matrix[(1, 0)].abs() <= 1e-9);
            assert!((jac.matrix.determinant() - 1.0).abs() <= 1e-8);
        }
    }

    #[test]
    fn one_step_consistent_with_forward_and_adjoint() {
        // replaying the stage controls of the coupled solve through the
        // forward step reproduces its state stages and endpoint
        let tab = builtin("imex-ssp2").unwrap();
        let adj = adjoint_coefficients(&tab);
        let prob = hager_hamiltonian(1.0).unwrap();
        let (y0, p0) = (v(&[0.0, 1.0, 0.5]), v(&[1.0, 0.3, 0.05]));
        let h = 0.05;
        let st = coupled_step(&tab, &adj, &prob, &y0, &p0, h).unwrap();
        let k = 3;
        let s = tab.stages;
        let x = &st.stages.0;
        let controls: Vec<f64> = (0..s)
            .map(|i| {
                let pe = x.rows((s + i) * k, k).into_owned();
                -pe[1] / pe[0]
            })
            .collect();
        let u = ControlGrid::from_params(ControlMode::PerStage, 1, s, 1, &DVector::from_vec(controls)).unwrap();
        let (stages, y1) = crate::integrate::solve_step(&tab, &prob, &y0, &u.stage_controls(0), h, 0).unwrap();
        assert!((y1 - &st.y1).amax() <= 1e-12);
        for i in 0..s {
            assert!((&stages.y[i] - x.rows(i * k, k)).amax() <= 1e-12);
        }
    }

    #[test]
    fn perturbed_beta_breaks_symplecticity() {
        let tab = builtin("imex-ssp2").unwrap();
        let mut adj = adjoint_coefficients(&tab);
        adj.beta_imp[(0, 0)] += 0.01;
        let prob = linear_split_problem(0.7, -1.3);
        let rep = symplectic_residual(&tab, &adj, &prob, &v(&[1.0]), &v(&[1.0]), &[0.1, 0.05], 1e-5).unwrap();
        assert!(!rep.qualified);
        let (r1, r2) = (rep.h_sweep[0].1, rep.h_sweep[1].1);
        assert!(r1 >= 1e-5, "{r1}");
        assert!(((r1 / r2).log2() - 2.0).abs() <= 0.3, "{r1} {r2}");
        assert!(rep.to_csv().starts_with("h,residual,qualified\n"));
    }

    #[test]
    fn gsa_unsupported() {
        let tab = builtin("imex-gsa").unwrap();
        let adj = adjoint_coefficients(&tab);
        let prob = linear_split_problem(0.7, -1.3);
        assert!(matches!(
            coupled_step(&tab, &adj, &prob, &v(&[1.0]), &v(&[1.0]), 0.1),
            Err(Error::UnsupportedStructure(_))
        ));
    }
}
