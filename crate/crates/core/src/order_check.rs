//! Order, coupling and symplecticity conditions evaluated on a tableau.
//!
//! Every check is plain floating point arithmetic against a tolerance; there is
//! no rational engine since the SSP2 entries are irrational.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::report::fmt_f64;
use crate::tableau::{
    classify, derive_coefficients, AdjointCoefficients, AdjointValidity, ImexTableau,
    STRUCTURE_TOL,
};

pub const DEFAULT_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Condition {
    pub label: String,
    pub order: u8,
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    pub satisfied: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionReport {
    pub conditions: Vec<Condition>,
    /// Largest `k` such that every condition of order `<= k` holds.
    pub max_order_satisfied: u8,
    pub tolerance: f64,
}

impl ConditionReport {
    fn new(tolerance: f64) -> Self {
        ConditionReport {
            conditions: Vec::new(),
            max_order_satisfied: 0,
            tolerance,
        }
    }

    fn push(&mut self, label: impl Into<String>, order: u8, lhs: f64, rhs: f64) {
        let residual = if lhs.is_finite() {
            (lhs - rhs).abs()
        } else {
            f64::INFINITY
        };
        self.conditions.push(Condition {
            label: label.into(),
            order,
            lhs,
            rhs,
            residual,
            satisfied: residual <= self.tolerance,
        });
    }

    fn finish(mut self) -> Self {
        let highest = self.conditions.iter().map(|c| c.order).max().unwrap_or(0);
        let mut k = 0;
        for order in 1..=highest {
            if self
                .conditions
                .iter()
                .filter(|c| c.order == order)
                .all(|c| c.satisfied)
            {
                k = order;
            } else {
                break;
            }
        }
        self.max_order_satisfied = k;
        self
    }

    pub fn all_satisfied(&self) -> bool {
        self.conditions.iter().all(|c| c.satisfied)
    }

    pub fn max_residual(&self) -> f64 {
        self.conditions
            .iter()
            .map(|c| c.residual)
            .fold(0.0, f64::max)
    }

    /// Appends the conditions of another report, re-evaluating the summary order.
    pub fn merge(mut self, other: ConditionReport) -> Self {
        self.conditions.extend(other.conditions);
        self.finish()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("label,lhs,rhs,residual,satisfied\n");
        for c in &self.conditions {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                c.label,
                fmt_f64(c.lhs),
                fmt_f64(c.rhs),
                fmt_f64(c.residual),
                c.satisfied
            );
        }
        out
    }

    pub fn to_text(&self) -> String {
        let width = self
            .conditions
            .iter()
            .map(|c| c.label.len())
            .max()
            .unwrap_or(5)
            .max(5);
        let mut out = format!(
            "{:<width$}  {:>5}  {:>22}  {:>22}  {:>10}  status\n",
            "label", "order", "lhs", "rhs", "residual"
        );
        for c in &self.conditions {
            let _ = writeln!(
                out,
                "{:<width$}  {:>5}  {:>22.15}  {:>22.15}  {:>10.2e}  {}",
                c.label,
                c.order,
                c.lhs,
                c.rhs,
                c.residual,
                if c.satisfied { "ok" } else { "FAIL" }
            );
        }
        let _ = writeln!(
            out,
            "max order satisfied: {} (tol {:e})",
            self.max_order_satisfied, self.tolerance
        );
        out
    }
}

fn dot3(w: &DVector<f64>, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    w.iter().zip(x.iter()).zip(y.iter()).map(|((w, x), y)| w * x * y).sum()
}

/// `Σ_ij w_i X_ij y_j`
fn bilinear(w: &DVector<f64>, m: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    w.dot(&(m * y))
}

/// Additive Runge–Kutta order conditions of the forward scheme up to
/// `up_to_order` (clamped to 1..=3).
pub fn forward_conditions(tab: &ImexTableau, up_to_order: u8, tol: f64) -> ConditionReport {
    let order = up_to_order.clamp(1, 3);
    let mut rep = ConditionReport::new(tol);
    let ce = tab.c_exp();
    let ci = tab.c_imp();
    let weights = [("w~", &tab.b_exp), ("w", &tab.b_imp)];
    let abscissae = [("c~", &ce), ("c", &ci)];
    let matrices = [("A~", &tab.a_exp), ("A", &tab.a_imp)];

    for (wn, w) in weights {
        rep.push(format!("sum {wn} = 1"), 1, w.sum(), 1.0);
    }
    if order >= 2 {
        for (wn, w) in weights {
            for (cn, c) in abscissae {
                rep.push(format!("sum {wn}*{cn} = 1/2"), 2, w.dot(c), 0.5);
            }
        }
    }
    if order >= 3 {
        let pairs = [(0, 0), (0, 1), (1, 1)];
        for (wn, w) in weights {
            for (x, y) in pairs {
                let (xn, xv) = abscissae[x];
                let (yn, yv) = abscissae[y];
                rep.push(
                    format!("sum {wn}*{xn}*{yn} = 1/3"),
                    3,
                    dot3(w, xv, yv),
                    1.0 / 3.0,
                );
            }
        }
        for (wn, w) in weights {
            for (mn, m) in matrices {
                for (cn, c) in abscissae {
                    rep.push(
                        format!("sum {wn}*{mn}*{cn} = 1/6"),
                        3,
                        bilinear(w, m, c),
                        1.0 / 6.0,
                    );
                }
            }
        }
    }
    rep.finish()
}

/// `Σ_i num_i * coeff_i / den_i`, skipping terms whose denominator and
/// coefficient both vanish. A zero denominator with a nonzero coefficient
/// yields infinity.
fn ratio_sum(numer: &DVector<f64>, coeff: &DVector<f64>, denom: &DVector<f64>) -> f64 {
    let mut sum = 0.0;
    for i in 0..denom.len() {
        if denom[i].abs() <= STRUCTURE_TOL {
            if coeff[i].abs() <= STRUCTURE_TOL {
                continue;
            }
            return f64::INFINITY;
        }
        sum += numer[i] * coeff[i] / denom[i];
    }
    sum
}

/// Second-order coupling sums and third-order adjoint sums that the coupled
/// state/adjoint scheme needs on top of the forward conditions.
pub fn adjoint_coupling_conditions(tab: &ImexTableau, tol: f64) -> ConditionReport {
    let d = derive_coefficients(tab);
    let (we, wi) = (&tab.b_exp, &tab.b_imp);
    let mut rep = ConditionReport::new(tol);
    rep.push("sum (w/w~)*d = 1/2", 2, ratio_sum(wi, &d.d, we), 0.5);
    rep.push("sum (w/w~)*d~ = 1/2", 2, ratio_sum(wi, &d.d_tilde, we), 0.5);
    rep.push("sum (w~/w)*e = 1/2", 2, ratio_sum(we, &d.e, wi), 0.5);
    rep.push("sum (w~/w)*e~ = 1/2", 2, ratio_sum(we, &d.e_tilde, wi), 0.5);
    let ones = DVector::from_element(tab.stages, 1.0);
    rep.push("sum d^2/w = 1/3", 3, ratio_sum(&d.d, &d.d, wi), 1.0 / 3.0);
    rep.push("sum e^2/w = 1/3", 3, ratio_sum(&d.e, &d.e, wi), 1.0 / 3.0);
    rep.push(
        "sum d*e/w = 1/3",
        3,
        ratio_sum(&d.d.component_mul(&d.e), &ones, wi),
        1.0 / 3.0,
    );
    rep.finish()
}

/// Condition families on the adjoint row sums (`γ, γ̃, δ, δ̃`) and the
/// adjoint matrices, as consumed by the second- and third-order arguments.
pub fn adjoint_gamma_conditions(
    tab: &ImexTableau,
    adj: &AdjointCoefficients,
    tol: f64,
) -> Result<ConditionReport> {
    if adj.validity == AdjointValidity::Unavailable {
        return Err(Error::Precondition(format!(
            "adjoint coefficients unavailable for `{}`",
            tab.name
        )));
    }
    let row_sums = |m: &DMatrix<f64>| DVector::from_iterator(m.nrows(), m.row_iter().map(|r| r.sum()));
    let gamma = row_sums(&adj.alpha_imp);
    let gamma_t = row_sums(&adj.alpha_exp);
    let delta = row_sums(&adj.beta_imp);
    let delta_t = row_sums(&adj.beta_exp);
    let ce = tab.c_exp();
    let ci = tab.c_imp();
    let (we, wi) = (&tab.b_exp, &tab.b_imp);
    let mut rep = ConditionReport::new(tol);

    for (wn, w) in [("w", wi), ("w~", we)] {
        for (gn, g) in [
            ("gamma", &gamma),
            ("gamma~", &gamma_t),
            ("delta", &delta),
            ("delta~", &delta_t),
        ] {
            rep.push(format!("sum {wn}*{gn} = 1/2"), 2, w.dot(g), 0.5);
        }
    }

    rep.push("sum w*gamma^2 = 1/3", 3, dot3(wi, &gamma, &gamma), 1.0 / 3.0);
    rep.push("sum w*delta^2 = 1/3", 3, dot3(wi, &delta, &delta), 1.0 / 3.0);
    rep.push("sum w*gamma*delta = 1/3", 3, dot3(wi, &gamma, &delta), 1.0 / 3.0);
    for (cn, c) in [("c", &ci), ("c~", &ce)] {
        for (gn, g) in [("gamma", &gamma), ("delta", &delta)] {
            rep.push(format!("sum w*{cn}*{gn} = 1/3"), 3, dot3(wi, c, g), 1.0 / 3.0);
        }
    }
    let families = [("beta", &adj.beta_imp), ("alpha", &adj.alpha_imp)];
    for (mn, m) in families {
        for (yn, y) in [("gamma", &gamma), ("delta", &delta), ("c", &ci), ("c~", &ce)] {
            rep.push(
                format!("sum w*{mn}*{yn} = 1/6"),
                3,
                bilinear(wi, m, y),
                1.0 / 6.0,
            );
        }
    }
    for (mn, m) in [("A", &tab.a_imp), ("A~", &tab.a_exp)] {
        for (yn, y) in [("gamma", &gamma), ("delta", &delta)] {
            rep.push(
                format!("sum w*{mn}*{yn} = 1/6"),
                3,
                bilinear(wi, m, y),
                1.0 / 6.0,
            );
        }
    }
    Ok(rep.finish())
}

/// Outcome of the coefficient-level symplecticity test.
#[derive(Clone, Debug, PartialEq)]
pub struct SymplecticConditions {
    pub weights_equal: bool,
    /// Max entrywise magnitude of each of the four wedge coefficient matrices.
    pub m_residuals: [f64; 4],
    pub qualified: bool,
    pub tolerance: f64,
}

impl SymplecticConditions {
    pub fn max_m_residual(&self) -> f64 {
        self.m_residuals.iter().copied().fold(0.0, f64::max)
    }

    pub fn to_report(&self, tab: &ImexTableau) -> ConditionReport {
        let mut rep = ConditionReport::new(self.tolerance);
        let weight_gap = (&tab.b_exp - &tab.b_imp).amax();
        rep.push("weights equal (max |w~ - w|)", 1, weight_gap, 0.0);
        for (k, r) in self.m_residuals.iter().enumerate() {
            rep.push(format!("M{} = 0", k + 1), 1, *r, 0.0);
        }
        rep.finish()
    }
}

/// Evaluates the four matrices whose vanishing removes the `h²` wedge terms,
/// together with the `ω̃ = ω` hypothesis.
///
/// ```text
/// M1_ij = ω̃_i ω̃_j − ω̃_j ã_ji − ω̃_i α̃_ij      M2_ij = ω_i ω̃_j − ω̃_j a_ji − ω_i β̃_ij
/// M3_ij = ω̃_i ω_j − ω_j ã_ji − ω̃_i α_ij       M4_ij = ω_i ω_j − ω_j a_ji − ω_i β_ij
/// ```
pub fn symplectic_conditions(
    tab: &ImexTableau,
    adj: &AdjointCoefficients,
    tol: f64,
) -> Result<SymplecticConditions> {
    if adj.validity != AdjointValidity::AllWeightsNonzero {
        return Err(Error::Precondition(format!(
            "symplecticity conditions need nonzero weights (`{}` is {:?})",
            tab.name, adj.validity
        )));
    }
    let s = tab.stages;
    let (we, wi, ae, ai) = (&tab.b_exp, &tab.b_imp, &tab.a_exp, &tab.a_imp);
    let max_entry = |f: &dyn Fn(usize, usize) -> f64| {
        let mut m: f64 = 0.0;
        for i in 0..s {
            for j in 0..s {
                m = m.max(f(i, j).abs());
            }
        }
        m
    };
    let m1 = max_entry(&|i, j| we[i] * we[j] - we[j] * ae[(j, i)] - we[i] * adj.alpha_exp[(i, j)]);
    let m2 = max_entry(&|i, j| wi[i] * we[j] - we[j] * ai[(j, i)] - wi[i] * adj.beta_exp[(i, j)]);
    let m3 = max_entry(&|i, j| we[i] * wi[j] - wi[j] * ae[(j, i)] - we[i] * adj.alpha_imp[(i, j)]);
    let m4 = max_entry(&|i, j| wi[i] * wi[j] - wi[j] * ai[(j, i)] - wi[i] * adj.beta_imp[(i, j)]);
    let weights_equal = classify(tab).weights_equal;
    let m_residuals = [m1, m2, m3, m4];
    let max_m = m_residuals.iter().copied().fold(0.0, f64::max);
    Ok(SymplecticConditions {
        weights_equal,
        m_residuals,
        qualified: weights_equal && max_m <= tol,
        tolerance: tol,
    })
}

/// Forward conditions, coupling sums and (when available) the adjoint
/// row-sum families, all restricted to orders `<= order`.
pub fn full_report(tab: &ImexTableau, order: u8, tol: f64) -> ConditionReport {
    let order = order.clamp(1, 3);
    let keep = |r: ConditionReport| ConditionReport {
        conditions: r.conditions.into_iter().filter(|c| c.order <= order).collect(),
        ..r
    };
    let mut rep = forward_conditions(tab, order, tol);
    rep = rep.merge(keep(adjoint_coupling_conditions(tab, tol)));
    let adj = crate::tableau::adjoint_coefficients(tab);
    if let Ok(g) = adjoint_gamma_conditions(tab, &adj, tol) {
        rep = rep.merge(keep(g));
    }
    rep
}
