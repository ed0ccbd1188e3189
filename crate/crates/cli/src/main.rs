use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use imex_ctrl::convergence::{
    run_convergence, ControlSource, ConvergenceConfig, DEFAULT_GRIDS, DEFAULT_REFERENCE,
};
use imex_ctrl::integrate::{
    adjoint_scheme, trajectory_csv, ControlGrid, ControlMode, StageSource,
};
use imex_ctrl::optimize::{
    fd_objective_gradient, reduced_gradient, solve, SolveOptions, DEFAULT_FD_STEP,
    DEFAULT_TOL_NORM_SQ,
};
use imex_ctrl::order_check::{full_report, DEFAULT_TOL};
use imex_ctrl::problems::{control_problem, hamiltonian_problem, ProblemParams};
use imex_ctrl::report::fmt_f64;
use imex_ctrl::symplectic::{symplectic_residual, DEFAULT_JACOBIAN_STEP};
use imex_ctrl::tableau::{
    adjoint_coefficients, builtin_names, classify, derive_coefficients, load, serialize_tableau,
    AdjointValidity, ImexTableau,
};
use imex_ctrl::{DVector, Error};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EXIT_CONDITION: u8 = 1;
const EXIT_NOT_CONVERGED: u8 = 2;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(name = "imexctrl", version, about = "IMEX Runge-Kutta discretizations of optimal control problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inspect builtin or file-based tableaus.
    Tableau {
        #[command(subcommand)]
        action: TableauAction,
    },
    /// Evaluate order, coupling and symplecticity conditions.
    OrderCheck(OrderCheckArgs),
    /// Solve the discrete optimality system from a constant initial control.
    Solve(SolveArgs),
    /// Grid-refinement study against a fine reference grid.
    Convergence(ConvergenceArgs),
    /// Symplectic 2-form residual of the coupled state/adjoint step.
    SymplecticCheck(SymplecticArgs),
    /// Compare the reduced gradient with finite differences of the objective.
    GradientCheck(GradientCheckArgs),
}

#[derive(Subcommand)]
enum TableauAction {
    /// Print a tableau with its derived coefficients.
    Show {
        /// Builtin name or path to a tableau file.
        scheme: String,
    },
    /// List builtin tableau names.
    List,
}

#[derive(Args)]
struct ProblemArgs {
    /// Problem name.
    #[arg(long, default_value = "hager")]
    problem: String,
    /// Relaxation parameter; 0 selects the unrelaxed Hager problem.
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    /// Explicit rate of the linear split problem.
    #[arg(long, default_value_t = 0.7, allow_negative_numbers = true)]
    lambda: f64,
    /// Implicit rate of the linear split problem.
    #[arg(long, default_value_t = -1.3, allow_negative_numbers = true)]
    mu: f64,
}

impl ProblemArgs {
    fn params(&self) -> ProblemParams {
        ProblemParams { eps: self.eps, lambda: self.lambda, mu: self.mu }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    PerStep,
    PerStage,
}

impl From<Mode> for ControlMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::PerStep => ControlMode::PerStep,
            Mode::PerStage => ControlMode::PerStage,
        }
    }
}

#[derive(Args)]
struct OrderCheckArgs {
    /// Builtin name or path to a tableau file.
    scheme: String,
    #[arg(long, default_value_t = 2)]
    order: u8,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    /// Also write the report as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    scheme: String,
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long, default_value_t = 320)]
    n: usize,
    /// Stopping tolerance on the squared reduced gradient norm.
    #[arg(long, default_value_t = DEFAULT_TOL_NORM_SQ)]
    tol: f64,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    /// Constant initial control.
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    u0: f64,
    #[arg(long, value_enum, default_value = "per-step")]
    control_mode: Mode,
    /// Directory for control.csv, trajectory.csv and log.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ConvergenceArgs {
    #[arg(long)]
    scheme: String,
    /// Comma separated relaxation parameters.
    #[arg(long, value_delimiter = ',', required = true)]
    eps: Vec<f64>,
    /// Comma separated grid sizes, ascending.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_GRIDS)]
    n: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_REFERENCE)]
    reference: usize,
    /// `exact-u-star` or `optimized`.
    #[arg(long, default_value = "exact-u-star")]
    control_source: String,
    /// Stage states for the adjoint: `stored`, `poly2` or `poly3`.
    #[arg(long, default_value = "stored")]
    interp: String,
    /// Adjoint formulation.
    #[arg(long, default_value = "stage-sweep")]
    adjoint: String,
    #[arg(long, value_enum)]
    control_mode: Option<Mode>,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SymplecticArgs {
    #[arg(long)]
    scheme: String,
    #[command(flatten)]
    problem: ProblemArgs,
    /// Comma separated step sizes.
    #[arg(long, value_delimiter = ',', default_values_t = [0.2, 0.1, 0.05])]
    h: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_JACOBIAN_STEP)]
    fd_step: f64,
    /// Added to the first diagonal entry of the implicit adjoint family.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    perturb_beta11: f64,
    /// Initial state; defaults to the problem's initial state.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    y0: Option<Vec<f64>>,
    /// Initial adjoint; defaults to all ones.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    p0: Option<Vec<f64>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradientCheckArgs {
    #[arg(long)]
    scheme: String,
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long, default_value_t = 20)]
    n: usize,
    /// Seed for a random control in [-2, 2]; omit for u = 1.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_FD_STEP)]
    fd_step: f64,
    #[arg(long, value_enum, default_value = "per-step")]
    control_mode: Mode,
}

enum Failure {
    Usage(String),
    Condition(String),
    NotConverged(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::UnknownName { .. }
            | Error::Parse { .. }
            | Error::Domain(_)
            | Error::Precondition(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn write_file(path: &Path, contents: &str) -> CmdResult {
    std::fs::write(path, contents)
        .map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn emit(out: Option<&Path>, csv: &str) -> CmdResult {
    match out {
        Some(p) => write_file(p, csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn vec_line(v: &DVector<f64>) -> String {
    v.iter().map(|x| format!("{x:.12}")).collect::<Vec<_>>().join(" ")
}

fn tableau_show(scheme: &str) -> CmdResult {
    let tab = load(scheme)?;
    let derived = derive_coefficients(&tab);
    let class = classify(&tab);
    let adj = adjoint_coefficients(&tab);
    let mut out = serialize_tableau(&tab);
    let _ = writeln!(out, "c_exp: {}", vec_line(&derived.c_exp));
    let _ = writeln!(out, "c_imp: {}", vec_line(&derived.c_imp));
    let _ = writeln!(out, "diagonally implicit: {}", class.diagonally_implicit);
    let _ = writeln!(out, "globally stiffly accurate: {}", class.globally_stiffly_accurate);
    let _ = writeln!(out, "equal weights: {}", class.weights_equal);
    let _ = writeln!(out, "ARS type: {}", class.ars_type);
    let _ = writeln!(out, "transformed adjoint: {:?}", adj.validity);
    print!("{out}");
    Ok(())
}

fn order_check(args: &OrderCheckArgs) -> CmdResult {
    if !(1..=3).contains(&args.order) {
        return Err(Failure::Usage(format!("order must be 1, 2 or 3, got {}", args.order)));
    }
    let tab = load(&args.scheme)?;
    let rep = full_report(&tab, args.order, args.tol);
    print!("{}", rep.to_text());
    if let Some(p) = &args.csv {
        write_file(p, &rep.to_csv())?;
    }
    if rep.all_satisfied() && rep.max_order_satisfied >= args.order {
        println!("{}: order {} conditions satisfied", tab.name, args.order);
        Ok(())
    } else {
        Err(Failure::Condition(format!(
            "{}: order {} conditions not satisfied",
            tab.name, args.order
        )))
    }
}

fn solve_cmd(args: &SolveArgs) -> CmdResult {
    let tab = load(&args.scheme)?;
    let prob = control_problem(&args.problem.problem, &args.problem.params())?;
    if args.n == 0 {
        return Err(Failure::Usage("--n must be positive".into()));
    }
    let u0 = ControlGrid::constant(
        args.control_mode.into(),
        args.n,
        tab.stages,
        &DVector::from_element(prob.control_dim(), args.u0),
    );
    let opts = SolveOptions { tol_norm_sq: args.tol, max_iter: args.max_iter, ..SolveOptions::default() };
    let res = solve(&tab, prob.as_ref(), &u0, &opts)?;
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        write_file(&dir.join("control.csv"), &res.control_csv(&tab))?;
        write_file(&dir.join("trajectory.csv"), &trajectory_csv(&res.traj, Some(&res.adj)))?;
        write_file(&dir.join("log.csv"), &res.log_csv())?;
    }
    let summary = format!(
        "scheme {} problem {} N {}: iterations {}, |F|^2 {}, objective {}, final state [{}]",
        tab.name,
        prob.name(),
        args.n,
        res.iterations,
        fmt_f64(res.final_norm_sq),
        fmt_f64(res.log.last().map(|r| r.objective).unwrap_or(f64::NAN)),
        res.traj.final_state().iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(", ")
    );
    if res.converged {
        println!("converged: {summary}");
        Ok(())
    } else {
        Err(Failure::NotConverged(format!(
            "not converged (tolerance {}): {summary}",
            fmt_f64(args.tol)
        )))
    }
}

fn convergence_cmd(args: &ConvergenceArgs) -> CmdResult {
    let tab = load(&args.scheme)?;
    let source = ControlSource::parse(&args.control_source)?;
    let mut cfg = ConvergenceConfig::new(tab, args.eps.clone(), source);
    cfg.grids = args.n.clone();
    cfg.reference = args.reference;
    cfg.stage_source = StageSource::parse(&args.interp)?;
    adjoint_scheme(&args.adjoint)?;
    cfg.adjoint = args.adjoint.clone();
    if let Some(m) = args.control_mode {
        cfg.control_mode = m.into();
    }
    let rep = run_convergence(&cfg)?;
    emit(args.out.as_deref(), &rep.to_csv())?;
    let bad: Vec<String> = rep
        .rows
        .iter()
        .filter(|r| r.status != "ok")
        .map(|r| format!("eps {} N {}: {}", r.eps, r.n, r.status))
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Failure::NotConverged(bad.join("; ")))
    }
}

fn symplectic_cmd(args: &SymplecticArgs) -> CmdResult {
    let tab = load(&args.scheme)?;
    let prob = hamiltonian_problem(&args.problem.problem, &args.problem.params())?;
    let mut adj = adjoint_coefficients(&tab);
    if adj.validity == AdjointValidity::Unavailable {
        return Err(Failure::Condition(format!(
            "{}: not qualified: weights differ and no transformed adjoint exists; coupled step undefined",
            tab.name
        )));
    }
    adj.beta_imp[(0, 0)] += args.perturb_beta11;
    let k = prob.state_dim();
    let vector = |given: &Option<Vec<f64>>, fallback: DVector<f64>, flag: &str| match given {
        Some(v) if v.len() == k => Ok(DVector::from_column_slice(v)),
        Some(v) => Err(Failure::Usage(format!("--{flag} needs {k} values, got {}", v.len()))),
        None => Ok(fallback),
    };
    let y0 = vector(&args.y0, prob.initial_state(), "y0")?;
    let p0 = vector(&args.p0, DVector::from_element(k, 1.0), "p0")?;
    if args.h.iter().any(|h| !(*h > 0.0)) {
        return Err(Failure::Usage("step sizes must be positive".into()));
    }
    let rep = symplectic_residual(&tab, &adj, prob.as_ref(), &y0, &p0, &args.h, args.fd_step)?;
    emit(args.out.as_deref(), &rep.to_csv())?;
    if rep.qualified && args.perturb_beta11 == 0.0 {
        Ok(())
    } else {
        Err(Failure::Condition(format!(
            "{}: not qualified: symplecticity conditions fail; residuals are exploratory",
            tab.name
        )))
    }
}

fn gradient_check(args: &GradientCheckArgs) -> CmdResult {
    let tab: ImexTableau = load(&args.scheme)?;
    let prob = control_problem(&args.problem.problem, &args.problem.params())?;
    if args.n == 0 {
        return Err(Failure::Usage("--n must be positive".into()));
    }
    let mode: ControlMode = args.control_mode.into();
    let dim = prob.control_dim();
    let u = match args.seed {
        None => ControlGrid::constant(mode, args.n, tab.stages, &DVector::from_element(dim, 1.0)),
        Some(seed) => {
            let count = ControlGrid::constant(mode, args.n, tab.stages, &DVector::zeros(dim)).num_params();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let params = DVector::from_fn(count, |_, _| rng.random_range(-2.0..2.0));
            ControlGrid::from_params(mode, args.n, tab.stages, dim, &params)?
        }
    };
    let g = reduced_gradient(&tab, prob.as_ref(), &u)?;
    let fd = fd_objective_gradient(&tab, prob.as_ref(), &u, args.fd_step)?;
    let mut worst_abs: f64 = 0.0;
    let mut worst_rel: f64 = 0.0;
    let mut ok = true;
    for (a, b) in g.values.iter().zip(fd.iter()) {
        let d = (a - b).abs();
        worst_abs = worst_abs.max(d);
        worst_rel = worst_rel.max(d / b.abs().max(f64::MIN_POSITIVE));
        ok &= d <= 1e-6 || d <= 1e-4 * b.abs();
    }
    println!(
        "{} on {}: {} components, max |F - FD| {}, max relative {}",
        tab.name,
        prob.name(),
        g.values.len(),
        fmt_f64(worst_abs),
        fmt_f64(worst_rel)
    );
    if ok {
        Ok(())
    } else {
        Err(Failure::Condition("reduced gradient and finite differences disagree".into()))
    }
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Tableau { action: TableauAction::Show { scheme } } => tableau_show(&scheme),
        Command::Tableau { action: TableauAction::List } => {
            for n in builtin_names() {
                println!("{n}");
            }
            Ok(())
        }
        Command::OrderCheck(a) => order_check(&a),
        Command::Solve(a) => solve_cmd(&a),
        Command::Convergence(a) => convergence_cmd(&a),
        Command::SymplecticCheck(a) => symplectic_cmd(&a),
        Command::GradientCheck(a) => gradient_check(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Condition(m)) => {
            eprintln!("{m}");
            ExitCode::from(EXIT_CONDITION)
        }
        Err(Failure::NotConverged(m)) => {
            eprintln!("{m}");
            ExitCode::from(EXIT_NOT_CONVERGED)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_CONDITION)
        }
    }
}
