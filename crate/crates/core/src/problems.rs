//! Optimal control problems `min j(y(T))` subject to `y' = f(y, u) + g(y, u)`.
//!
//! Problems implement [`ControlProblem`]; problems whose stationarity condition
//! can be solved for the control in closed form also implement
//! [`HamiltonianProblem`]. Problems are selected by name through
//! [`control_problem`] and [`hamiltonian_problem`].

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Default seed for [`derivative_check`] sample points.
pub const DERIVATIVE_CHECK_SEED: u64 = 0x5EED;

/// Callback contract of an optimal control problem with a split right-hand side:
/// `f` is the non-stiff part (integrated explicitly), `g` the stiff part.
///
/// Implementations must be reentrant: callbacks may be evaluated concurrently.
pub trait ControlProblem: Send + Sync {
    fn name(&self) -> String;
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn horizon(&self) -> f64 {
        1.0
    }
    fn initial_state(&self) -> DVector<f64>;

    fn f(&self, y: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;
    fn g(&self, y: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;
    /// `∂f/∂y`, `K×K`.
    fn f_y(&self, y: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64>;
    /// `∂g/∂y`, `K×K`.
    fn g_y(&self, y: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64>;
    /// `∂f/∂u`, `K×m`.
    fn f_u(&self, y: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64>;
    /// `∂g/∂u`, `K×m`.
    fn g_u(&self, y: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64>;

    fn terminal_cost(&self, y: &DVector<f64>) -> f64;
    fn terminal_gradient(&self, y: &DVector<f64>) -> DVector<f64>;
}

/// A control problem whose control can be eliminated from the stationarity
/// condition, giving a reduced Hamiltonian system in `(y, p)`.
pub trait HamiltonianProblem: ControlProblem {
    /// Control solving `f_u(y, u)ᵀ p_exp + g_u(y, u)ᵀ p_imp = 0`, where
    /// `p_exp` is the adjoint paired with `f` and `p_imp` the one paired with `g`.
    fn stage_control(
        &self,
        y: &DVector<f64>,
        p_imp: &DVector<f64>,
        p_exp: &DVector<f64>,
    ) -> Result<DVector<f64>>;

    /// `u = φ(y, p)` solving `H_u(y, u, p) = 0` for `H = pᵀ(f + g)`.
    fn phi(&self, y: &DVector<f64>, p: &DVector<f64>) -> Result<DVector<f64>> {
        self.stage_control(y, p, p)
    }
}

/// `H_u(y, u, p) = f_uᵀ p + g_uᵀ p`.
pub fn hamiltonian_u(
    prob: &dyn ControlProblem,
    y: &DVector<f64>,
    u: &DVector<f64>,
    p: &DVector<f64>,
) -> DVector<f64> {
    prob.f_u(y, u).tr_mul(p) + prob.g_u(y, u).tr_mul(p)
}

// ---------------------------------------------------------------------------
// Hager benchmark

/// Analytic optimal control of the unrelaxed Hager problem,
/// `u*(t) = 2(e^{3t} − e³) / (e^{3t/2}(2 + e³))`.
///
/// The closed form is smooth and is evaluated as-is outside `[0, 1]`; stage
/// times of some schemes slightly exceed the horizon.
pub fn hager_exact_control(t: f64) -> f64 {
    let e3 = 3f64.exp();
    2.0 * ((3.0 * t).exp() - e3) / ((1.5 * t).exp() * (2.0 + e3))
}

/// Singularly perturbed Hager problem in `y = (c, x, z)`:
///
/// ```text
/// c' = (u² + x² + 4z²)/2,  x' = z + u,  z' = (x/2 − z)/ε
/// ```
///
/// with `f` holding the first two rows, `g` the relaxation row and `j(y) = c`.
#[derive(Clone, Debug)]
pub struct HagerRelaxed {
    eps: f64,
}

pub fn hager_relaxed(eps: f64) -> Result<HagerRelaxed> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::Domain(format!(
            "relaxation parameter must be positive and finite, got {eps}"
        )));
    }
    Ok(HagerRelaxed { eps })
}

/// The relaxed Hager problem together with `φ(y, p) = −p_2 / p_1`.
pub fn hager_hamiltonian(eps: f64) -> Result<HagerRelaxed> {
    hager_relaxed(eps)
}

impl HagerRelaxed {
    pub fn eps(&self) -> f64 {
        self.eps
    }
}

impl ControlProblem for HagerRelaxed {
    fn name(&self) -> String {
        format!("hager-relaxed(eps={:e})", self.eps)
    }
    fn state_dim(&self) -> usize {
        3
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn initial_state(&self) -> DVector<f64> {
        DVector::from_column_slice(&[0.0, 1.0, 0.5])
    }
    fn f(&self, y: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let (x, z, u) = (y[1], y[2], u[0]);
        DVector::from_column_slice(&[0.5 * (u * u + x * x + 4.0 * z * z), z + u, 0.0])
    }
    fn g(&self, y: &DVector<f64>, _u: &DVector<f64>) -> DVector<f64> {
        DVector::from_column_slice(&[0.0, 0.0, (0.5 * y[1] - y[2]) / self.eps])
    }
    fn f_y(&self, y: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(3, 3);
        m[(0, 1)] = y[1];
        m[(0, 2)] = 4.0 * y[2];
        m[(1, 2)] = 1.0;
        m
    }
    fn g_y(&self, _y: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(3, 3);
        m[(2, 1)] = 0.5 / self.eps;
        m[(2, 2)] = -1.0 / self.eps;
        m
    }
    fn f_u(&self, _y: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_column_slice(3, 1, &[u[0], 1.0, 0.0])
    }
    fn g_u(&self, _y: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(3, 1)
    }
    fn terminal_cost(&self, y: &DVector<f64>) -> f64 {
        y[0]
    }
    fn terminal_gradient(&self, _y: &DVector<f64>) -> DVector<f64> {
        DVector::from_column_slice(&[1.0, 0.0, 0.0])
    }
}

fn hager_stage_control(p_exp: &DVector<f64>) -> Result<DVector<f64>> {
    // f_uᵀ p̃ = u p̃_1 + p̃_2 and g_u = 0
    if p_exp[0] == 0.0 {
        return Err(Error::SingularControl(
            "first adjoint component vanishes; u = -p2/p1 undefined".into(),
        ));
    }
    Ok(DVector::from_element(1, -p_exp[1] / p_exp[0]))
}

impl HamiltonianProblem for HagerRelaxed {
    fn stage_control(
        &self,
        _y: &DVector<f64>,
        _p_imp: &DVector<f64>,
        p_exp: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        hager_stage_control(p_exp)
    }
}

/// The `ε → 0` limit of [`HagerRelaxed`] with `z = x/2` substituted:
/// `y = (c, x)`, `c' = (u² + 2x²)/2`, `x' = x/2 + u`, everything in `f`.
#[derive(Clone, Debug, Default)]
pub struct HagerUnrelaxed;

impl ControlProblem for HagerUnrelaxed {
    fn name(&self) -> String {
        "hager-unrelaxed".into()
    }
    fn state_dim(&self) -> usize {
        2
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn initial_state(&self) -> DVector<f64> {
        DVector::from_column_slice(&[0.0, 1.0])
    }
    fn f(&self, y: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let (x, u) = (y[1], u[0]);
        DVector::from_column_slice(&[0.5 * (u * u + 2.0 * x * x), 0.5 * x + u])
    }
    fn g(&self, _y: &DVector<f64>, _u: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(2)
    }
    fn f_y(&self, y: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.0, 2.0 * y[1], 0.0, 0.5])
    }
    fn g_y(&self, _y: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(2, 2)
    }
    fn f_u(&self, _y: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_column_slice(2, 1, &[u[0], 1.0])
    }
    fn g_u(&self, _y: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(2, 1)
    }
    fn terminal_cost(&self, y: &DVector<f64>) -> f64 {
        y[0]
    }
    fn terminal_gradient(&self, _y: &DVector<f64>) -> DVector<f64> {
        DVector::from_column_slice(&[1.0, 0.0])
    }
}

impl HamiltonianProblem for HagerUnrelaxed {
    fn stage_control(
        &self,
        _y: &DVector<f64>,
        _p_imp: &DVector<f64>,
        p_exp: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        hager_stage_control(p_exp)
    }
}

// ---------------------------------------------------------------------------
// scalar fixtures

/// Scalar control-free split `y' = λy + μy`; the adjoint flow is
/// `p' = −(λ + μ)p` and `y·p` is conserved.
#[derive(Clone, Debug)]
pub struct LinearSplit {
    pub lambda: f64,
    pub mu: f64,
}

pub fn linear_split_problem(lambda: f64, mu: f64) -> LinearSplit {
    LinearSplit { lambda, mu }
}

impl ControlProblem for LinearSplit {
    fn name(&self) -> String {
        format!("linear-split(lambda={}, mu={})", self.lambda, self.mu)
    }
    fn state_dim(&self) -> usize {
        1
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn initial_state(&self) -> DVector<f64> {
        DVector::from_element(1, 1.0)
    }
    fn f(&self, y: &DVector<f64>, _u: &DVector<f64>) -> DVector<f64> {
        y * self.lambda
    }
    fn g(&self, y: &DVector<f64>, _u: &DVector<f64>) -> DVector<f64> {
        y * self.mu
    }
    fn f_y(&self, _y: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.lambda)
    }
    fn g_y(&self, _y: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.mu)
    }
    fn f_u(&self, _y: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(1, 1)
    }
    fn g_u(&self, _y: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(1, 1)
    }
    fn terminal_cost(&self, y: &DVector<f64>) -> f64 {
        y[0]
    }
    fn terminal_gradient(&self, _y: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, 1.0)
    }
}

impl HamiltonianProblem for LinearSplit {
    fn stage_control(
        &self,
        _y: &DVector<f64>,
        _p_imp: &DVector<f64>,
        _p_exp: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        Ok(DVector::zeros(1))
    }
}

/// Linear-quadratic toy `c' = u²/2`, `x' = u`, `j = c + (x − 1)²/2`, `y0 = 0`.
///
/// With one control per step the discrete objective is
/// `h/2 Σ u_n² + (h Σ u_n − 1)²/2` for every consistent scheme, minimized by
/// `u_n = 1/(1 + T)`.
#[derive(Clone, Debug, Default)]
pub struct LinearQuadratic;

impl ControlProblem for LinearQuadratic {
    fn name(&self) -> String {
        "linear-quadratic".into()
    }
    fn state_dim(&self) -> usize {
        2
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn initial_state(&self) -> DVector<f64> {
        DVector::zeros(2)
    }
    fn f(&self, _y: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_column_slice(&[0.5 * u[0] * u[0], u[0]])
    }
    fn g(&self, _y: &DVector<f64>, _u: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(2)
    }
    fn f_y(&self, _y: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(2, 2)
    }
    fn g_y(&self, _y: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(2, 2)
    }
    fn f_u(&self, _y: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_column_slice(2, 1, &[u[0], 1.0])
    }
    fn g_u(&self, _y: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(2, 1)
    }
    fn terminal_cost(&self, y: &DVector<f64>) -> f64 {
        y[0] + 0.5 * (y[1] - 1.0).powi(2)
    }
    fn terminal_gradient(&self, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_column_slice(&[1.0, y[1] - 1.0])
    }
}

// ---------------------------------------------------------------------------
// registry

/// Parameters shared by the problem constructors in the registry.
#[derive(Clone, Copy, Debug)]
pub struct ProblemParams {
    pub eps: f64,
    pub lambda: f64,
    pub mu: f64,
}

impl Default for ProblemParams {
    fn default() -> Self {
        ProblemParams {
            eps: 0.1,
            lambda: 0.7,
            mu: -1.3,
        }
    }
}

struct ProblemEntry {
    name: &'static str,
    build: fn(&ProblemParams) -> Result<Box<dyn HamiltonianProblem>>,
}

fn build_hager(p: &ProblemParams) -> Result<Box<dyn HamiltonianProblem>> {
    if p.eps == 0.0 {
        Ok(Box::new(HagerUnrelaxed))
    } else {
        Ok(Box::new(hager_relaxed(p.eps)?))
    }
}

const PROBLEMS: &[ProblemEntry] = &[
    ProblemEntry {
        name: "hager",
        build: build_hager,
    },
    ProblemEntry {
        name: "hager-relaxed",
        build: |p| Ok(Box::new(hager_relaxed(p.eps)?)),
    },
    ProblemEntry {
        name: "hager-unrelaxed",
        build: |_| Ok(Box::new(HagerUnrelaxed)),
    },
    ProblemEntry {
        name: "linear-split",
        build: |p| Ok(Box::new(linear_split_problem(p.lambda, p.mu))),
    },
];

pub fn problem_names() -> Vec<&'static str> {
    let mut names: Vec<_> = PROBLEMS.iter().map(|e| e.name).collect();
    names.push("linear-quadratic");
    names
}

/// Builds a problem by name. `hager` maps `eps = 0` to the unrelaxed variant.
pub fn control_problem(name: &str, params: &ProblemParams) -> Result<Box<dyn ControlProblem>> {
    if name == "linear-quadratic" {
        return Ok(Box::new(LinearQuadratic));
    }
    let p: Box<dyn ControlProblem> = hamiltonian_problem(name, params)?;
    Ok(p)
}

/// Builds a problem that supports control elimination.
pub fn hamiltonian_problem(
    name: &str,
    params: &ProblemParams,
) -> Result<Box<dyn HamiltonianProblem>> {
    PROBLEMS
        .iter()
        .find(|e| e.name == name)
        .ok_or_else(|| Error::UnknownName {
            kind: "problem",
            name: name.to_string(),
            available: problem_names().iter().map(|s| s.to_string()).collect(),
        })
        .and_then(|e| (e.build)(params))
}

// ---------------------------------------------------------------------------
// derivative check

fn central_jacobian(
    eval: impl Fn(&DVector<f64>) -> DVector<f64>,
    at: &DVector<f64>,
    rows: usize,
    step: f64,
) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(rows, at.len());
    for k in 0..at.len() {
        let mut plus = at.clone();
        let mut minus = at.clone();
        plus[k] += step;
        minus[k] -= step;
        let width = plus[k] - minus[k];
        let col = (eval(&plus) - eval(&minus)) / width;
        jac.set_column(k, &col);
    }
    jac
}

fn worst_relative(analytic: &DMatrix<f64>, approx: &DMatrix<f64>) -> f64 {
    analytic
        .iter()
        .zip(approx.iter())
        .map(|(a, b)| (a - b).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Compares the Jacobian callbacks and `j'` with central differences at
/// `samples` seeded pseudo-random points. Returns the worst relative discrepancy
/// `|analytic − fd| / max(1, |analytic|)`.
pub fn derivative_check(prob: &dyn ControlProblem, samples: usize, step: f64) -> f64 {
    derivative_check_seeded(prob, samples, step, DERIVATIVE_CHECK_SEED)
}

pub fn derivative_check_seeded(
    prob: &dyn ControlProblem,
    samples: usize,
    step: f64,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = prob.state_dim();
    let m = prob.control_dim();
    let y0 = prob.initial_state();
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let y = DVector::from_fn(k, |i, _| y0[i] + rng.random_range(-1.0..1.0));
        let u = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        let checks = [
            (prob.f_y(&y, &u), central_jacobian(|v| prob.f(v, &u), &y, k, step)),
            (prob.g_y(&y, &u), central_jacobian(|v| prob.g(v, &u), &y, k, step)),
            (prob.f_u(&y, &u), central_jacobian(|w| prob.f(&y, w), &u, k, step)),
            (prob.g_u(&y, &u), central_jacobian(|w| prob.g(&y, w), &u, k, step)),
            (
                DMatrix::from_column_slice(1, k, prob.terminal_gradient(&y).as_slice()),
                central_jacobian(
                    |v| DVector::from_element(1, prob.terminal_cost(v)),
                    &y,
                    1,
                    step,
                ),
            ),
        ];
        for (analytic, approx) in &checks {
            worst = worst.max(worst_relative(analytic, approx));
        }
    }
    worst
}
