//! Acceptance suite: eight end-to-end criteria with fixed tolerances.
//!
//! Runs without the libtest harness so that every criterion prints exactly one
//! `PASS`/`FAIL` line, followed by a summary. The process exits non-zero if
//! any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use imex_ctrl::convergence::{run_convergence, ControlSource, ConvergenceConfig, ErrorColumn};
use imex_ctrl::integrate::{
    adjoint_backward, adjoint_forward_form, adjoint_hs_form, forward, ControlGrid, ControlMode,
};
use imex_ctrl::optimize::{discrete_hamiltonian_gradient_check, fd_objective_gradient, reduced_gradient};
use imex_ctrl::order_check::{full_report, DEFAULT_TOL};
use imex_ctrl::problems::{hager_hamiltonian, hager_relaxed, linear_split_problem, HamiltonianProblem};
use imex_ctrl::symplectic::{symplectic_residual, DEFAULT_JACOBIAN_STEP};
use imex_ctrl::tableau::{adjoint_coefficients, builtin, builtin_names};
use imex_ctrl::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 0x5EED;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

type Criterion = fn() -> Outcome;

fn order_conditions() -> Outcome {
    let cases = [("imex-ssp2", 2u8), ("imex-gsa", 2), ("imex-hag", 3), ("imex-sa3", 3)];
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, order) in cases {
        let rep = full_report(&builtin(name).unwrap(), order, DEFAULT_TOL);
        let third_order_sums = rep
            .conditions
            .iter()
            .filter(|c| c.label.starts_with("sum d^2/w") || c.label.starts_with("sum e^2/w") || c.label.starts_with("sum d*e/w"))
            .count();
        let good = rep.all_satisfied()
            && rep.max_order_satisfied >= order
            && rep.max_residual() <= 1e-12
            && (order < 3 || third_order_sums == 3);
        ok &= good;
        parts.push(format!("{name}: order {} max residual {:.1e}", rep.max_order_satisfied, rep.max_residual()));
    }
    outcome(ok, parts.join("; "))
}

fn commutativity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let steps = 20;
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for eps in [0.1, 1.0] {
        let prob = hager_relaxed(eps).unwrap();
        for name in builtin_names() {
            let tab = builtin(name).unwrap();
            let constant = ControlGrid::constant(ControlMode::PerStep, steps, tab.stages, &DVector::from_element(1, 1.0));
            let random = ControlGrid::from_params(
                ControlMode::PerStep,
                steps,
                tab.stages,
                1,
                &DVector::from_fn(steps, |_, _| rng.random_range(-2.0..2.0)),
            )
            .unwrap();
            for u in [constant, random] {
                let g = reduced_gradient(&tab, &prob, &u).unwrap().values;
                let fd = fd_objective_gradient(&tab, &prob, &u, 1e-6).unwrap();
                for (a, b) in g.iter().zip(fd.iter()) {
                    let diff = (a - b).abs();
                    ok &= diff <= 1e-6 || diff <= 1e-4 * b.abs();
                    worst = worst.max(diff);
                }
            }
        }
    }
    outcome(ok, format!("worst |F - FD| = {worst:.2e}"))
}

fn adjoint_equivalence() -> Outcome {
    let prob = hager_relaxed(0.1).unwrap();
    let steps = 40;
    let mut ok = true;
    let mut worst: f64 = 0.0;
    let mut skipped = Vec::new();
    for name in builtin_names() {
        let tab = builtin(name).unwrap();
        let u = ControlGrid::constant(ControlMode::PerStep, steps, tab.stages, &DVector::from_element(1, 1.0));
        let traj = forward(&tab, &prob, &u, steps).unwrap();
        let sweep = adjoint_backward(&tab, &prob, &traj, &u).unwrap();
        let scale = sweep.p.iter().map(|p| p.amax()).fold(0.0, f64::max);
        let rel = |p: &[DVector<f64>]| {
            sweep.p.iter().zip(p).map(|(a, b)| (a - b).amax()).fold(0.0, f64::max) / scale
        };
        let block = adjoint_hs_form(&tab, &prob, &traj, &u).unwrap();
        worst = worst.max(rel(&block.p));
        match adjoint_forward_form(&tab, &adjoint_coefficients(&tab), &prob, &traj, &u) {
            Ok(t) => worst = worst.max(rel(&t.p)),
            Err(_) => skipped.push(name),
        }
    }
    ok &= worst <= 1e-11;
    outcome(
        ok,
        format!("max relative deviation {worst:.2e}; transformed form undefined for {skipped:?}"),
    )
}

fn sa3_convergence() -> Outcome {
    let mut cfg = ConvergenceConfig::new(builtin("imex-sa3").unwrap(), vec![10.0, 1e-4], ControlSource::ExactUStar);
    cfg.grids = vec![10, 20, 40, 80, 160, 320];
    let rep = run_convergence(&cfg).unwrap();
    let order_x = rep.mean_order(10.0, ErrorColumn::X, 20, 160);
    let err10 = rep.rows.iter().find(|r| r.eps == 10.0 && r.n == 10).and_then(|r| r.err_x);
    let order_z = rep.mean_order(1e-4, ErrorColumn::Z, 40, 320);
    let target = 3.1890e-05;
    let ok = order_x.is_some_and(|o| o >= 2.9)
        && err10.is_some_and(|e| e <= 3.0 * target && e >= target / 3.0)
        && order_z.is_some_and(|o| o <= 1.0);
    outcome(
        ok,
        format!(
            "eps=10: mean x order {:.3} (>= 2.9), err(N=10) {:.4e} (target {target:.4e} within x3); eps=1e-4: mean z order {:.3} (<= 1.0)",
            order_x.unwrap_or(f64::NAN),
            err10.unwrap_or(f64::NAN),
            order_z.unwrap_or(f64::NAN)
        ),
    )
}

fn gsa_convergence() -> Outcome {
    let mut cfg = ConvergenceConfig::new(builtin("imex-gsa").unwrap(), vec![1e-8], ControlSource::ExactUStar);
    cfg.grids = vec![10, 20, 40, 80, 160, 320];
    let rep = run_convergence(&cfg).unwrap();
    let order = rep.mean_order(1e-8, ErrorColumn::X, 20, 320);
    let ok = order.is_some_and(|o| (o - 2.0).abs() <= 0.3);
    outcome(ok, format!("eps=1e-8: mean x order {:.3} (2.0 +- 0.3)", order.unwrap_or(f64::NAN)))
}

fn ssp2_optimizer() -> Outcome {
    let mut cfg = ConvergenceConfig::new(builtin("imex-ssp2").unwrap(), vec![0.0], ControlSource::Optimized);
    cfg.grids = vec![320];
    cfg.reference = 640;
    let rep = run_convergence(&cfg).unwrap();
    let row = &rep.rows[0];
    let (ex, eu) = (row.err_x.unwrap_or(f64::NAN), row.err_u.unwrap_or(f64::NAN));
    let ok = row.status == "ok" && ex <= 3.3e-3 && eu <= 2.9e-3;
    outcome(
        ok,
        format!(
            "N=320: status {}, |x*-x| {ex:.4e} (<= 3.3e-3), |u*-u| {eu:.4e} (<= 2.9e-3), {} iterations",
            row.status,
            row.iterations.unwrap_or(0)
        ),
    )
}

fn symplecticity() -> Outcome {
    let hs = [0.2, 0.1, 0.05];
    let linear = linear_split_problem(0.7, -1.3);
    let hager = hager_hamiltonian(1.0).unwrap();
    let cases: [(&dyn HamiltonianProblem, DVector<f64>, DVector<f64>); 2] = [
        (&linear, DVector::from_element(1, 1.0), DVector::from_element(1, 1.0)),
        (
            &hager,
            DVector::from_column_slice(&[0.0, 1.0, 0.5]),
            DVector::from_column_slice(&[1.0, 1.7, 0.2]),
        ),
    ];
    let mut ok = true;
    let mut worst: f64 = 0.0;
    for name in ["imex-ssp2", "imex-sa3"] {
        let tab = builtin(name).unwrap();
        let adj = adjoint_coefficients(&tab);
        for (prob, y0, p0) in &cases {
            let rep = symplectic_residual(&tab, &adj, *prob, y0, p0, &hs, DEFAULT_JACOBIAN_STEP).unwrap();
            ok &= rep.qualified && rep.residual() <= 1e-6;
            worst = worst.max(rep.residual());
        }
    }
    let tab = builtin("imex-ssp2").unwrap();
    let mut adj = adjoint_coefficients(&tab);
    adj.beta_imp[(0, 0)] += 0.01;
    let rep = symplectic_residual(
        &tab,
        &adj,
        &linear,
        &DVector::from_element(1, 1.0),
        &DVector::from_element(1, 1.0),
        &[0.1, 0.05],
        DEFAULT_JACOBIAN_STEP,
    )
    .unwrap();
    let (r1, r2) = (rep.h_sweep[0].1, rep.h_sweep[1].1);
    let rate = (r1 / r2).log2();
    ok &= r1 >= 1e-5 && (rate - 2.0).abs() <= 0.3;
    outcome(
        ok,
        format!("qualified max residual {worst:.2e} (<= 1e-6); perturbed residual {r1:.2e} at h=0.1, rate {rate:.3}"),
    )
}

fn hamiltonian_gradient() -> Outcome {
    let tab = builtin("imex-ssp2").unwrap();
    let prob = hager_relaxed(0.1).unwrap();
    let steps = 20;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let params = DVector::from_fn(steps * tab.stages, |_, _| rng.random_range(-2.0..2.0));
    let u = ControlGrid::from_params(ControlMode::PerStage, steps, tab.stages, 1, &params).unwrap();
    let mut worst: f64 = 0.0;
    let mut picked = Vec::new();
    for _ in 0..5 {
        let n = rng.random_range(0..steps);
        picked.push(n);
        worst = worst.max(discrete_hamiltonian_gradient_check(&tab, &prob, &u, n, 1e-6).unwrap());
    }
    outcome(worst <= 1e-6, format!("steps {picked:?}: worst discrepancy {worst:.2e} (<= 1e-6)"))
}

fn main() -> ExitCode {
    let criteria: [(&str, Criterion, Duration); 8] = [
        ("1 order conditions", order_conditions, Duration::from_secs(1)),
        ("2 gradient commutativity", commutativity, Duration::from_secs(10)),
        ("3 adjoint form equivalence", adjoint_equivalence, Duration::from_secs(5)),
        ("4 convergence imex-sa3", sa3_convergence, Duration::from_secs(60)),
        ("5 convergence imex-gsa", gsa_convergence, Duration::from_secs(60)),
        ("6 optimizer imex-ssp2", ssp2_optimizer, Duration::from_secs(120)),
        ("7 symplecticity", symplecticity, Duration::from_secs(30)),
        ("8 discrete Hamiltonian gradient", hamiltonian_gradient, Duration::from_secs(5)),
    ];
    let mut failed = 0;
    for (label, run, budget) in criteria {
        let start = Instant::now();
        let result = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let in_time = elapsed <= budget;
        let passed = result.passed && in_time;
        if !passed {
            failed += 1;
        }
        println!(
            "criterion {label}: {} | {} | {:.2}s (budget {}s)",
            if passed { "PASS" } else { "FAIL" },
            result.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("acceptance: {} of 8 criteria passed", 8 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
