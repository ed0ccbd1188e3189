//! IMEX Runge–Kutta coefficient pairs.
//!
//! An [`ImexTableau`] holds the explicit pair `(Ã, ω̃)` applied to the non-stiff
//! part `f` and the implicit pair `(A, ω)` applied to the stiff part `g`.
//! Throughout the crate the suffix `_exp` marks the explicit (tilde) family and
//! `_imp` the implicit one.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Absolute tolerance used to decide structural zeros and equalities.
pub const STRUCTURE_TOL: f64 = 1e-14;

/// Literal token accepted by the file format for `1 - 1/sqrt(2)`.
pub const GAMMA_TOKEN: &str = "1-1/sqrt(2)";

/// An IMEX Runge–Kutta scheme: explicit tableau `(a_exp, b_exp)` and implicit
/// tableau `(a_imp, b_imp)`, both with `stages` stages.
#[derive(Clone, Debug, PartialEq)]
pub struct ImexTableau {
    pub name: String,
    pub stages: usize,
    pub a_exp: DMatrix<f64>,
    pub a_imp: DMatrix<f64>,
    pub b_exp: DVector<f64>,
    pub b_imp: DVector<f64>,
}

impl ImexTableau {
    /// Builds a tableau from row-major slices, checking dimensions and finiteness.
    pub fn from_rows(
        name: &str,
        a_exp: &[&[f64]],
        a_imp: &[&[f64]],
        b_exp: &[f64],
        b_imp: &[f64],
    ) -> Result<Self> {
        let s = b_exp.len();
        let mat = |rows: &[&[f64]], label: &str| -> Result<DMatrix<f64>> {
            if rows.len() != s || rows.iter().any(|r| r.len() != s) {
                return Err(Error::Domain(format!("{label} must be {s}x{s}")));
            }
            Ok(DMatrix::from_fn(s, s, |i, j| rows[i][j]))
        };
        let tab = ImexTableau {
            name: name.to_string(),
            stages: s,
            a_exp: mat(a_exp, "explicit matrix")?,
            a_imp: mat(a_imp, "implicit matrix")?,
            b_exp: DVector::from_column_slice(b_exp),
            b_imp: DVector::from_column_slice(b_imp),
        };
        tab.validate()?;
        Ok(tab)
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.stages;
        if s == 0 {
            return Err(Error::Domain("stage count must be positive".into()));
        }
        if self.a_exp.shape() != (s, s)
            || self.a_imp.shape() != (s, s)
            || self.b_exp.len() != s
            || self.b_imp.len() != s
        {
            return Err(Error::Domain(format!("inconsistent dimensions for s = {s}")));
        }
        let finite = self.a_exp.iter().all(|v| v.is_finite())
            && self.a_imp.iter().all(|v| v.is_finite())
            && self.b_exp.iter().all(|v| v.is_finite())
            && self.b_imp.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Domain("tableau entries must be finite".into()));
        }
        Ok(())
    }

    /// `ã_ij = 0` for `j >= i` and `a_ij = 0` for `j > i`.
    pub fn is_diagonally_implicit(&self) -> bool {
        let s = self.stages;
        (0..s).all(|i| {
            (i..s).all(|j| self.a_exp[(i, j)].abs() <= STRUCTURE_TOL)
                && (i + 1..s).all(|j| self.a_imp[(i, j)].abs() <= STRUCTURE_TOL)
        })
    }

    /// Explicit abscissae `c̃_i = Σ_j ã_ij`.
    pub fn c_exp(&self) -> DVector<f64> {
        row_sums(&self.a_exp)
    }

    /// Implicit abscissae `c_i = Σ_j a_ij`.
    pub fn c_imp(&self) -> DVector<f64> {
        row_sums(&self.a_imp)
    }
}

fn row_sums(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.nrows(), m.row_iter().map(|r| r.sum()))
}

/// `v_j = Σ_i w_i m_ij`.
fn weighted_col_sums(w: &DVector<f64>, m: &DMatrix<f64>) -> DVector<f64> {
    m.tr_mul(w)
}

// ---------------------------------------------------------------------------
// builtins

struct BuiltinScheme {
    name: &'static str,
    build: fn() -> ImexTableau,
}

const BUILTINS: &[BuiltinScheme] = &[
    BuiltinScheme {
        name: "imex-ssp2",
        build: imex_ssp2,
    },
    BuiltinScheme {
        name: "imex-gsa",
        build: imex_gsa,
    },
    BuiltinScheme {
        name: "imex-hag",
        build: imex_hag,
    },
    BuiltinScheme {
        name: "imex-sa3",
        build: imex_sa3,
    },
];

/// Names accepted by [`builtin`].
pub fn builtin_names() -> Vec<&'static str> {
    BUILTINS.iter().map(|b| b.name).collect()
}

/// Looks up a builtin scheme by name.
pub fn builtin(name: &str) -> Result<ImexTableau> {
    BUILTINS
        .iter()
        .find(|b| b.name == name)
        .map(|b| (b.build)())
        .ok_or_else(|| Error::UnknownName {
            kind: "scheme",
            name: name.to_string(),
            available: builtin_names().iter().map(|s| s.to_string()).collect(),
        })
}

/// `1 - 1/sqrt(2)`, the diagonal entry of the SSP2 implicit part.
pub fn ssp2_gamma() -> f64 {
    1.0 - 1.0 / 2f64.sqrt()
}

/// Two-stage second-order scheme with an L-stable implicit part.
fn imex_ssp2() -> ImexTableau {
    let g = ssp2_gamma();
    ImexTableau::from_rows(
        "imex-ssp2",
        &[&[0.0, 0.0], &[1.0, 0.0]],
        &[&[g, 0.0], &[1.0 - 2.0 * g, g]],
        &[0.5, 0.5],
        &[0.5, 0.5],
    )
    .expect("builtin tableau is well formed")
}

/// Second-order globally stiffly accurate scheme (3 explicit, 4 implicit levels).
fn imex_gsa() -> ImexTableau {
    ImexTableau::from_rows(
        "imex-gsa",
        &[
            &[0.0, 0.0, 0.0, 0.0],
            &[1.5, 0.0, 0.0, 0.0],
            &[5.0 / 6.0, -1.0 / 3.0, 0.0, 0.0],
            &[1.0 / 3.0, 1.0 / 6.0, 0.5, 0.0],
        ],
        &[
            &[0.5, 0.0, 0.0, 0.0],
            &[0.75, 0.5, 0.0, 0.0],
            &[-0.25, 0.0, 0.5, 0.0],
            &[1.0 / 6.0, -1.0 / 6.0, 0.5, 0.5],
        ],
        &[1.0 / 3.0, 1.0 / 6.0, 0.5, 0.0],
        &[1.0 / 6.0, -1.0 / 6.0, 0.5, 0.5],
    )
    .expect("builtin tableau is well formed")
}

/// Three-stage third-order scheme built on Hager's explicit method.
fn imex_hag() -> ImexTableau {
    ImexTableau::from_rows(
        "imex-hag",
        &[&[0.0, 0.0, 0.0], &[0.5, 0.0, 0.0], &[-1.0, 2.0, 0.0]],
        &[&[0.0, 0.0, 0.0], &[0.25, 0.25, 0.0], &[0.0, 1.0, 0.0]],
        &[1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
        &[1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
    )
    .expect("builtin tableau is well formed")
}

/// Four-stage third-order scheme.
fn imex_sa3() -> ImexTableau {
    ImexTableau::from_rows(
        "imex-sa3",
        &[
            &[0.0, 0.0, 0.0, 0.0],
            &[2.0 / 3.0, 0.0, 0.0, 0.0],
            &[0.75, 0.25, 0.0, 0.0],
            &[0.25, 0.75, 0.0, 0.0],
        ],
        &[
            &[0.0, 0.0, 0.0, 0.0],
            &[-1.0 / 3.0, 1.0, 0.0, 0.0],
            &[-0.25, 0.25, 1.0, 0.0],
            &[0.25, 0.75, -0.5, 0.5],
        ],
        &[0.25, 0.75, -0.5, 0.5],
        &[0.25, 0.75, -0.5, 0.5],
    )
    .expect("builtin tableau is well formed")
}

/// Resolves either a builtin name or a path to a tableau file.
pub fn load(name_or_path: &str) -> Result<ImexTableau> {
    match builtin(name_or_path) {
        Ok(t) => Ok(t),
        Err(lookup) => {
            let path = std::path::Path::new(name_or_path);
            if path.is_file() {
                parse_tableau(&std::fs::read_to_string(path)?)
            } else {
                Err(lookup)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// text format

fn parse_value(token: &str, line: usize) -> Result<f64> {
    let err = |message: String| Error::Parse { line, message };
    let t = token.trim();
    if t == GAMMA_TOKEN {
        return Ok(ssp2_gamma());
    }
    let parse_num = |s: &str| -> Result<f64> {
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| err(format!("non-numeric token `{token}`")))
    };
    let v = match t.split_once('/') {
        Some((p, q)) => {
            let (p, q) = (parse_num(p)?, parse_num(q)?);
            if q == 0.0 {
                return Err(err(format!("zero denominator in `{token}`")));
            }
            p / q
        }
        None => parse_num(t)?,
    };
    Ok(v)
}

fn parse_row(text: &str, expected: usize, line: usize, what: &str) -> Result<Vec<f64>> {
    let vals = text
        .split_whitespace()
        .map(|tok| parse_value(tok, line))
        .collect::<Result<Vec<_>>>()?;
    if vals.len() != expected {
        return Err(Error::Parse {
            line,
            message: format!("{what}: expected {expected} entries, found {}", vals.len()),
        });
    }
    Ok(vals)
}

/// Parses the line-oriented tableau format.
///
/// ```text
/// name: <label>
/// s: <integer>
/// tilde_a:
/// <s rows>
/// a:
/// <s rows>
/// tilde_w: <s values>
/// w: <s values>
/// ```
///
/// `#` starts a comment. Values are decimal literals, rationals `p/q`, or the
/// token `1-1/sqrt(2)`.
pub fn parse_tableau(text: &str) -> Result<ImexTableau> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let mut name: Option<String> = None;
    let mut s: Option<usize> = None;
    let mut a_exp: Option<Vec<Vec<f64>>> = None;
    let mut a_imp: Option<Vec<Vec<f64>>> = None;
    let mut b_exp: Option<Vec<f64>> = None;
    let mut b_imp: Option<Vec<f64>> = None;
    let mut last_line = 0;

    while let Some((ln, line)) = lines.next() {
        last_line = ln;
        let (key, rest) = line.split_once(':').ok_or_else(|| Error::Parse {
            line: ln,
            message: format!("expected `key: value`, found `{line}`"),
        })?;
        let rest = rest.trim();
        let need_s = |s: Option<usize>| {
            s.ok_or_else(|| Error::Parse {
                line: ln,
                message: format!("`{key}` must follow the `s:` declaration"),
            })
        };
        match key.trim() {
            "name" => name = Some(rest.to_string()),
            "s" => {
                let v: usize = rest.parse().map_err(|_| Error::Parse {
                    line: ln,
                    message: format!("stage count `{rest}` is not a positive integer"),
                })?;
                if v == 0 {
                    return Err(Error::Parse {
                        line: ln,
                        message: "stage count must be positive".into(),
                    });
                }
                s = Some(v);
            }
            k @ ("tilde_a" | "a") => {
                let n = need_s(s)?;
                if !rest.is_empty() {
                    return Err(Error::Parse {
                        line: ln,
                        message: format!("matrix `{k}` rows start on the next line"),
                    });
                }
                let mut rows = Vec::with_capacity(n);
                for r in 0..n {
                    let (rl, row) = lines.next().ok_or_else(|| Error::Parse {
                        line: ln,
                        message: format!("matrix `{k}` ended after {r} of {n} rows"),
                    })?;
                    last_line = rl;
                    rows.push(parse_row(row, n, rl, k)?);
                }
                if k == "tilde_a" {
                    a_exp = Some(rows);
                } else {
                    a_imp = Some(rows);
                }
            }
            k @ ("tilde_w" | "w") => {
                let n = need_s(s)?;
                let row = parse_row(rest, n, ln, k)?;
                if k == "tilde_w" {
                    b_exp = Some(row);
                } else {
                    b_imp = Some(row);
                }
            }
            other => {
                return Err(Error::Parse {
                    line: ln,
                    message: format!("unknown key `{other}`"),
                })
            }
        }
    }

    let missing = |what: &str| Error::Parse {
        line: last_line,
        message: format!("missing `{what}` section"),
    };
    let s = s.ok_or_else(|| missing("s"))?;
    let a_exp = a_exp.ok_or_else(|| missing("tilde_a"))?;
    let a_imp = a_imp.ok_or_else(|| missing("a"))?;
    let b_exp = b_exp.ok_or_else(|| missing("tilde_w"))?;
    let b_imp = b_imp.ok_or_else(|| missing("w"))?;
    let to_mat = |rows: &[Vec<f64>]| DMatrix::from_fn(s, s, |i, j| rows[i][j]);
    let tab = ImexTableau {
        name: name.unwrap_or_else(|| "unnamed".to_string()),
        stages: s,
        a_exp: to_mat(&a_exp),
        a_imp: to_mat(&a_imp),
        b_exp: DVector::from_vec(b_exp),
        b_imp: DVector::from_vec(b_imp),
    };
    tab.validate()?;
    Ok(tab)
}

/// Writes a tableau in the text format. Entries use the shortest decimal
/// representation that parses back to the same double.
pub fn serialize_tableau(tab: &ImexTableau) -> String {
    let mut out = String::new();
    let row = |vals: &mut dyn Iterator<Item = f64>| {
        vals.map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" ")
    };
    let _ = writeln!(out, "name: {}", tab.name);
    let _ = writeln!(out, "s: {}", tab.stages);
    for (label, m) in [("tilde_a", &tab.a_exp), ("a", &tab.a_imp)] {
        let _ = writeln!(out, "{label}:");
        for r in m.row_iter() {
            let _ = writeln!(out, "{}", row(&mut r.iter().copied()));
        }
    }
    let _ = writeln!(out, "tilde_w: {}", row(&mut tab.b_exp.iter().copied()));
    let _ = writeln!(out, "w: {}", row(&mut tab.b_imp.iter().copied()));
    out
}

// ---------------------------------------------------------------------------
// derived coefficient families

/// Abscissae, weighted column sums and adjoint row sums of a tableau.
#[derive(Clone, Debug, PartialEq)]
pub struct DerivedCoefficients {
    /// `c̃_i = Σ_j ã_ij`
    pub c_exp: DVector<f64>,
    /// `c_i = Σ_j a_ij`
    pub c_imp: DVector<f64>,
    /// `d_j = Σ_i ω_i ã_ij`
    pub d: DVector<f64>,
    /// `d̃_j = Σ_i ω̃_i ã_ij`
    pub d_tilde: DVector<f64>,
    /// `e_j = Σ_i ω_i a_ij`
    pub e: DVector<f64>,
    /// `ẽ_j = Σ_i ω̃_i a_ij`
    pub e_tilde: DVector<f64>,
    /// Row sums of the adjoint families (`γ̃, γ, δ̃, δ`); `None` when the
    /// adjoint coefficients are unavailable.
    pub adjoint_sums: Option<AdjointRowSums>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdjointRowSums {
    pub gamma_tilde: DVector<f64>,
    pub gamma: DVector<f64>,
    pub delta_tilde: DVector<f64>,
    pub delta: DVector<f64>,
}

pub fn derive_coefficients(tab: &ImexTableau) -> DerivedCoefficients {
    let adj = adjoint_coefficients(tab);
    let adjoint_sums = (adj.validity != AdjointValidity::Unavailable).then(|| AdjointRowSums {
        gamma_tilde: row_sums(&adj.alpha_exp),
        gamma: row_sums(&adj.alpha_imp),
        delta_tilde: row_sums(&adj.beta_exp),
        delta: row_sums(&adj.beta_imp),
    });
    DerivedCoefficients {
        c_exp: tab.c_exp(),
        c_imp: tab.c_imp(),
        d: weighted_col_sums(&tab.b_imp, &tab.a_exp),
        d_tilde: weighted_col_sums(&tab.b_exp, &tab.a_exp),
        e: weighted_col_sums(&tab.b_imp, &tab.a_imp),
        e_tilde: weighted_col_sums(&tab.b_exp, &tab.a_imp),
        adjoint_sums,
    }
}

/// Which transformation produced the adjoint coefficient families.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdjointValidity {
    /// Every weight is nonzero; the families follow the defining formulas.
    AllWeightsNonzero,
    /// ARS pattern: `ω_1 = 0`, first implicit column zero, all other weights
    /// nonzero. The first implicit stage row is replaced by the weights.
    ArsExtension,
    /// No admissible transformation; matrices are zero-filled.
    Unavailable,
}

/// Coefficients of the transformed adjoint scheme.
///
/// Forward family (stage equations written from `p_n`):
///
/// ```text
/// P̃_i = p_n − h Σ_j alpha_exp[i,j] f_yᵀ P̃_j − h Σ_j alpha_imp[i,j] g_yᵀ P_j
/// P_i = p_n − h Σ_j beta_exp[i,j]  f_yᵀ P̃_j − h Σ_j beta_imp[i,j]  g_yᵀ P_j
/// ```
///
/// Backward family (stage equations written from `p_{n+1}`), the `check_*` /
/// `hat_*` matrices, e.g. `check_alpha[i,j] = (ω̃_j/ω̃_i) ã_ji`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjointCoefficients {
    /// α̃
    pub alpha_exp: DMatrix<f64>,
    /// α
    pub alpha_imp: DMatrix<f64>,
    /// β̃
    pub beta_exp: DMatrix<f64>,
    /// β
    pub beta_imp: DMatrix<f64>,
    pub check_alpha: DMatrix<f64>,
    pub hat_alpha: DMatrix<f64>,
    pub check_beta: DMatrix<f64>,
    pub hat_beta: DMatrix<f64>,
    pub validity: AdjointValidity,
}

fn is_zero(v: f64) -> bool {
    v.abs() <= STRUCTURE_TOL
}

pub fn adjoint_coefficients(tab: &ImexTableau) -> AdjointCoefficients {
    let s = tab.stages;
    let (we, wi) = (&tab.b_exp, &tab.b_imp);
    let all_nonzero = we.iter().chain(wi.iter()).all(|&w| !is_zero(w));
    let ars = !all_nonzero
        && we.iter().all(|&w| !is_zero(w))
        && is_zero(wi[0])
        && wi.iter().skip(1).all(|&w| !is_zero(w))
        && (0..s).all(|j| is_zero(tab.a_imp[(j, 0)]));
    let validity = if all_nonzero {
        AdjointValidity::AllWeightsNonzero
    } else if ars {
        AdjointValidity::ArsExtension
    } else {
        AdjointValidity::Unavailable
    };

    let zeros = || DMatrix::zeros(s, s);
    if validity == AdjointValidity::Unavailable {
        return AdjointCoefficients {
            alpha_exp: zeros(),
            alpha_imp: zeros(),
            beta_exp: zeros(),
            beta_imp: zeros(),
            check_alpha: zeros(),
            hat_alpha: zeros(),
            check_beta: zeros(),
            hat_beta: zeros(),
            validity,
        };
    }

    let ae = &tab.a_exp;
    let ai = &tab.a_imp;
    let check_alpha = DMatrix::from_fn(s, s, |i, j| we[j] / we[i] * ae[(j, i)]);
    let hat_alpha = DMatrix::from_fn(s, s, |i, j| wi[j] / we[i] * ae[(j, i)]);
    // Rows divided by ω_i are undefined for the ARS first stage; the first
    // row is then overwritten below.
    let safe_div = |num: f64, den: f64| if is_zero(den) { 0.0 } else { num / den };
    let mut check_beta = DMatrix::from_fn(s, s, |i, j| safe_div(we[j] * ai[(j, i)], wi[i]));
    let mut hat_beta = DMatrix::from_fn(s, s, |i, j| safe_div(wi[j] * ai[(j, i)], wi[i]));
    if validity == AdjointValidity::ArsExtension {
        check_beta.row_mut(0).fill(0.0);
        hat_beta.row_mut(0).fill(0.0);
    }

    let alpha_exp = DMatrix::from_fn(s, s, |i, j| we[j] - check_alpha[(i, j)]);
    let alpha_imp = DMatrix::from_fn(s, s, |i, j| wi[j] - hat_alpha[(i, j)]);
    let beta_exp = DMatrix::from_fn(s, s, |i, j| we[j] - check_beta[(i, j)]);
    let beta_imp = DMatrix::from_fn(s, s, |i, j| wi[j] - hat_beta[(i, j)]);

    AdjointCoefficients {
        alpha_exp,
        alpha_imp,
        beta_exp,
        beta_imp,
        check_alpha,
        hat_alpha,
        check_beta,
        hat_beta,
        validity,
    }
}

// ---------------------------------------------------------------------------
// classification

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StructuralClassification {
    pub diagonally_implicit: bool,
    /// Last rows of both matrices equal the respective weights.
    pub globally_stiffly_accurate: bool,
    pub weights_equal: bool,
    /// `ω̃` without zeros, `ω_1 = 0` and `ω_j ≠ 0` for `j > 1`.
    pub ars_type: bool,
}

pub fn classify(tab: &ImexTableau) -> StructuralClassification {
    let s = tab.stages;
    let close = |a: f64, b: f64| (a - b).abs() <= STRUCTURE_TOL;
    let gsa = (0..s).all(|j| {
        close(tab.a_exp[(s - 1, j)], tab.b_exp[j]) && close(tab.a_imp[(s - 1, j)], tab.b_imp[j])
    });
    let weights_equal = (0..s).all(|j| close(tab.b_exp[j], tab.b_imp[j]));
    let ars_type = tab.b_exp.iter().all(|&w| !is_zero(w))
        && is_zero(tab.b_imp[0])
        && tab.b_imp.iter().skip(1).all(|&w| !is_zero(w));
    StructuralClassification {
        diagonally_implicit: tab.is_diagonally_implicit(),
        globally_stiffly_accurate: gsa,
        weights_equal,
        ars_type,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assert_vec(actual: &DVector<f64>, expected: &[f64], tol: f64) {
        assert_eq!(actual.len(), expected.len());
        for (a, e) in actual.iter().zip(expected) {
            assert!((a - e).abs() <= tol, "{actual:?} vs {expected:?}");
        }
    }

    #[test]
    fn ssp2_entries() {
        let t = builtin("imex-ssp2").unwrap();
        let g = 1.0 - 1.0 / 2f64.sqrt();
        assert_eq!(t.a_exp[(1, 0)], 1.0);
        assert_eq!(t.a_exp[(1, 1)], 0.0);
        assert_eq!(t.a_imp[(0, 0)], g);
        assert_vec(&t.b_exp, &[0.5, 0.5], 0.0);
        assert_vec(&t.b_imp, &[0.5, 0.5], 0.0);
    }

    #[test]
    fn gsa_and_sa3_entries() {
        let gsa = builtin("imex-gsa").unwrap();
        assert_vec(&gsa.b_exp, &[1.0 / 3.0, 1.0 / 6.0, 0.5, 0.0], 0.0);
        assert_vec(&gsa.b_imp, &[1.0 / 6.0, -1.0 / 6.0, 0.5, 0.5], 0.0);
        let sa3 = builtin("imex-sa3").unwrap();
        assert_eq!(
            sa3.a_exp.row(3).iter().copied().collect::<Vec<_>>(),
            vec![0.25, 0.75, 0.0, 0.0]
        );
        assert_eq!(
            sa3.a_imp.row(3).iter().copied().collect::<Vec<_>>(),
            vec![0.25, 0.75, -0.5, 0.5]
        );
    }

    #[test]
    fn unknown_builtin_lists_available() {
        let err = builtin("rk4").unwrap_err().to_string();
        for name in builtin_names() {
            assert!(err.contains(name), "{err}");
        }
    }

    #[test]
    fn derived_ssp2() {
        let g = ssp2_gamma();
        let d = derive_coefficients(&builtin("imex-ssp2").unwrap());
        assert_vec(&d.c_imp, &[g, 1.0 - g], 1e-15);
        assert_vec(&d.c_exp, &[0.0, 1.0], 0.0);
    }

    #[test]
    fn derived_hag_and_gsa() {
        let hag = derive_coefficients(&builtin("imex-hag").unwrap());
        assert_vec(&hag.d, &[1.0 / 6.0, 1.0 / 3.0, 0.0], 1e-15);
        assert_vec(&hag.e, &[1.0 / 6.0, 1.0 / 3.0, 0.0], 1e-15);
        let gsa = derive_coefficients(&builtin("imex-gsa").unwrap());
        assert_vec(&gsa.d, &[1.0 / 3.0, -1.0 / 12.0, 0.25, 0.0], 1e-15);
        assert!(gsa.adjoint_sums.is_none());
    }

    #[test]
    fn adjoint_ssp2_alpha_exp() {
        let adj = adjoint_coefficients(&builtin("imex-ssp2").unwrap());
        assert_eq!(adj.validity, AdjointValidity::AllWeightsNonzero);
        let expected = [[0.5, -0.5], [0.5, 0.5]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((adj.alpha_exp[(i, j)] - expected[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn adjoint_hag_beta() {
        let adj = adjoint_coefficients(&builtin("imex-hag").unwrap());
        assert!((adj.beta_imp[(0, 1)] + 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn adjoint_gsa_unavailable() {
        let adj = adjoint_coefficients(&builtin("imex-gsa").unwrap());
        assert_eq!(adj.validity, AdjointValidity::Unavailable);
        assert!(adj.alpha_exp.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn ars_extension_first_row() {
        let t = ImexTableau::from_rows(
            "ars-like",
            &[&[0.0, 0.0], &[1.0, 0.0]],
            &[&[0.0, 0.0], &[0.0, 1.0]],
            &[0.5, 0.5],
            &[0.0, 1.0],
        )
        .unwrap();
        assert!(classify(&t).ars_type);
        let adj = adjoint_coefficients(&t);
        assert_eq!(adj.validity, AdjointValidity::ArsExtension);
        for j in 0..2 {
            assert_eq!(adj.beta_exp[(0, j)], t.b_exp[j]);
            assert_eq!(adj.beta_imp[(0, j)], t.b_imp[j]);
        }
    }

    #[test]
    fn classification_flags() {
        let gsa = classify(&builtin("imex-gsa").unwrap());
        assert!(gsa.globally_stiffly_accurate && gsa.diagonally_implicit);
        assert!(!gsa.weights_equal && !gsa.ars_type);
        let ssp2 = classify(&builtin("imex-ssp2").unwrap());
        assert!(ssp2.weights_equal && !ssp2.globally_stiffly_accurate);
        let sa3 = classify(&builtin("imex-sa3").unwrap());
        assert!(sa3.diagonally_implicit && sa3.weights_equal);
    }

    #[test]
    fn equal_weights_collapse_adjoint_families() {
        for name in builtin_names() {
            let t = builtin(name).unwrap();
            if !classify(&t).weights_equal {
                continue;
            }
            let adj = adjoint_coefficients(&t);
            assert!((&adj.alpha_exp - &adj.alpha_imp).amax() <= 1e-14, "{name}");
            assert!((&adj.beta_exp - &adj.beta_imp).amax() <= 1e-14, "{name}");
        }
    }

    #[test]
    fn parse_valid_file() {
        let text = "# two stage\nname: demo\ns: 2\ntilde_a:\n0 0\n1 0\na:\n1-1/sqrt(2) 0\n0.5 1/3\ntilde_w: 1/2 1/2\nw: 0.5 0.5\n";
        let t = parse_tableau(text).unwrap();
        assert_eq!(t.name, "demo");
        assert_eq!(t.stages, 2);
        assert_eq!(t.a_imp[(0, 0)], ssp2_gamma());
        assert_eq!(t.a_imp[(1, 1)], 0.3333333333333333);
    }

    #[test]
    fn parse_dimension_error_reports_line() {
        let text = "name: bad\ns: 2\ntilde_a:\n0 0\n1 0\na:\n0 0\n0 0\ntilde_w: 0.5 0.25 0.25\nw: 0.5 0.5\n";
        match parse_tableau(text) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 9);
                assert!(message.contains("expected 2"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn parse_rejects_garbage() {
        let text = "s: 1\ntilde_a:\nx\na:\n0\ntilde_w: 1\nw: 1\n";
        assert!(matches!(parse_tableau(text), Err(Error::Parse { line: 3, .. })));
        assert!(matches!(
            parse_tableau("tilde_w: 1\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_tableau("s: 1\ntilde_a:\n0\n"),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn builtins_round_trip_bit_exact() {
        for name in builtin_names() {
            let t = builtin(name).unwrap();
            let text = serialize_tableau(&t);
            let back = parse_tableau(&text).unwrap();
            assert_eq!(back, t, "{name}");
            assert_eq!(serialize_tableau(&back), text);
        }
    }

    proptest! {
        #[test]
        fn serialize_parse_fixed_point(
            s in 1usize..5,
            seed in proptest::collection::vec(-1e3f64..1e3, 2 * 16 + 2 * 4),
        ) {
            let t = ImexTableau {
                name: "p".into(),
                stages: s,
                a_exp: DMatrix::from_fn(s, s, |i, j| seed[i * 4 + j]),
                a_imp: DMatrix::from_fn(s, s, |i, j| seed[16 + i * 4 + j]),
                b_exp: DVector::from_fn(s, |i, _| seed[32 + i]),
                b_imp: DVector::from_fn(s, |i, _| seed[36 + i]),
            };
            let text = serialize_tableau(&t);
            let back = parse_tableau(&text).unwrap();
            prop_assert_eq!(&back, &t);
            prop_assert_eq!(serialize_tableau(&back), text);
        }

        #[test]
        fn defining_relations_hold(
            s in 1usize..5,
            seed in proptest::collection::vec(0.05f64..2.0, 2 * 16 + 2 * 4),
        ) {
            let t = ImexTableau {
                name: "p".into(),
                stages: s,
                a_exp: DMatrix::from_fn(s, s, |i, j| seed[i * 4 + j] - 1.0),
                a_imp: DMatrix::from_fn(s, s, |i, j| seed[16 + i * 4 + j] - 1.0),
                b_exp: DVector::from_fn(s, |i, _| seed[32 + i]),
                b_imp: DVector::from_fn(s, |i, _| seed[36 + i]),
            };
            let adj = adjoint_coefficients(&t);
            prop_assert_eq!(adj.validity, AdjointValidity::AllWeightsNonzero);
            let (we, wi, ae, ai) = (&t.b_exp, &t.b_imp, &t.a_exp, &t.a_imp);
            for i in 0..s {
                for j in 0..s {
                    let tol = 1e-14 * (1.0 + (we[i] * we[j]).abs() + (wi[i] * wi[j]).abs()) * 8.0;
                    prop_assert!((we[i] * adj.alpha_exp[(i, j)] + we[j] * ae[(j, i)] - we[i] * we[j]).abs() <= tol);
                    prop_assert!((we[i] * adj.alpha_imp[(i, j)] + wi[j] * ae[(j, i)] - we[i] * wi[j]).abs() <= tol);
                    prop_assert!((wi[i] * adj.beta_exp[(i, j)] + we[j] * ai[(j, i)] - wi[i] * we[j]).abs() <= tol);
                    prop_assert!((wi[i] * adj.beta_imp[(i, j)] + wi[j] * ai[(j, i)] - wi[i] * wi[j]).abs() <= tol);
                    prop_assert!((adj.alpha_exp[(i, j)] + adj.check_alpha[(i, j)] - we[j]).abs() <= 1e-14 * (1.0 + we[j].abs()));
                }
            }
            // pure and deterministic
            prop_assert_eq!(derive_coefficients(&t), derive_coefficients(&t));
        }
    }
}
