use std::path::PathBuf;
use std::process::{Command, Output};

fn imexctrl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_imexctrl"))
        .args(args)
        .env("IMEXCTRL_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("imexctrl-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&imexctrl(&["--help"])), 0);
    assert_eq!(code(&imexctrl(&["--version"])), 0);
}

#[test]
fn usage_errors_exit_64() {
    assert_eq!(code(&imexctrl(&["bogus"])), 64);
    assert_eq!(code(&imexctrl(&["solve", "--scheme", "nope"])), 64);
    assert_eq!(code(&imexctrl(&["order-check", "imex-ssp2", "--order", "7"])), 64);
    assert_eq!(code(&imexctrl(&["convergence", "--scheme", "imex-sa3", "--eps", "1", "--interp", "cubic"])), 64);
    assert_eq!(code(&imexctrl(&["solve", "--scheme", "imex-ssp2", "--problem", "brachistochrone"])), 64);
}

#[test]
fn tableau_show_prints_entries_and_flags() {
    let out = imexctrl(&["tableau", "show", "imex-gsa"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("tilde_w: 0.3333333333333333 0.16666666666666666 0.5 0.0"));
    assert!(text.contains("globally stiffly accurate: true"));
    assert!(text.contains("transformed adjoint: Unavailable"));
}

#[test]
fn tableau_show_reads_files() {
    let dir = scratch("tab");
    let path = dir.join("euler.txt");
    std::fs::write(&path, "name: euler\ns: 2\ntilde_a:\n0 0\n1 0\na:\n0 0\n0 1\ntilde_w: 1 0\nw: 0 1\n").unwrap();
    let out = imexctrl(&["tableau", "show", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("name: euler"));
}

#[test]
fn order_check_exit_codes() {
    assert_eq!(code(&imexctrl(&["order-check", "imex-sa3", "--order", "3"])), 0);
    assert_eq!(code(&imexctrl(&["order-check", "imex-ssp2", "--order", "2"])), 0);
    let gsa = imexctrl(&["order-check", "imex-gsa", "--order", "3"]);
    assert_eq!(code(&gsa), 1);
    assert!(stdout(&gsa).contains("FAIL"));
}

#[test]
fn order_check_writes_csv() {
    let path = scratch("order").join("report.csv");
    let out = imexctrl(&["order-check", "imex-hag", "--order", "3", "--csv", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let csv = std::fs::read_to_string(&path).unwrap();
    assert!(csv.lines().count() > 5);
}

#[test]
fn solve_converges_and_writes_outputs() {
    let dir = scratch("solve");
    let out = imexctrl(&[
        "solve", "--scheme", "imex-ssp2", "--eps", "1e-8", "--n", "320", "--out", dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).starts_with("converged"));
    let log = std::fs::read_to_string(dir.join("log.csv")).unwrap();
    assert!(log.starts_with("iter,norm_sq_F,objective,step_length\n"));
    let last: f64 = log.lines().last().unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!(last <= 1e-8);
    let control = std::fs::read_to_string(dir.join("control.csv")).unwrap();
    assert_eq!(control.lines().count(), 321);
    let traj = std::fs::read_to_string(dir.join("trajectory.csv")).unwrap();
    assert!(traj.starts_with("t,y1,y2,y3,p1,p2,p3\n"));
    assert_eq!(traj.lines().count(), 322);
}

#[test]
fn solve_reports_non_convergence() {
    let out = imexctrl(&["solve", "--scheme", "imex-ssp2", "--n", "40", "--max-iter", "1", "--tol", "1e-30"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("not converged"));
}

#[test]
fn coarse_solve_converges() {
    let out = imexctrl(&["solve", "--scheme", "imex-ssp2", "--eps", "0", "--n", "10"]);
    assert_eq!(code(&out), 0);
}

#[test]
fn convergence_csv_is_byte_stable_and_self_consistent() {
    let args = ["convergence", "--scheme", "imex-sa3", "--eps", "10,1e-4", "--n", "10,20,40", "--reference", "160"];
    let a = imexctrl(&args);
    let b = imexctrl(&args);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    let text = stdout(&a);
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 6);
    for pair in rows.windows(2).filter(|w| w[0][0] == w[1][0]) {
        let coarse: f64 = pair[0][col("err_x")].parse().unwrap();
        let fine: f64 = pair[1][col("err_x")].parse().unwrap();
        let ratio: f64 = pair[1][col("ratio_x")].parse().unwrap();
        let order: f64 = pair[1][col("order_x")].parse().unwrap();
        assert!((ratio - coarse / fine).abs() <= 1e-12 * ratio);
        assert!((order - ratio.log2()).abs() <= 1e-12);
    }
}

#[test]
fn convergence_writes_file() {
    let path = scratch("conv").join("table.csv");
    let out = imexctrl(&[
        "convergence", "--scheme", "imex-gsa", "--eps", "1e-8", "--n", "10,20", "--reference", "80",
        "--out", path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    assert!(out.stdout.is_empty());
    assert!(std::fs::read_to_string(&path).unwrap().starts_with("eps,N,err_x"));
}

#[test]
fn symplectic_check_qualified_and_not() {
    let ok = imexctrl(&["symplectic-check", "--scheme", "imex-ssp2", "--problem", "linear-split"]);
    assert_eq!(code(&ok), 0);
    for line in stdout(&ok).lines().skip(1) {
        let r: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(r <= 1e-8);
    }

    let gsa = imexctrl(&["symplectic-check", "--scheme", "imex-gsa", "--problem", "linear-split"]);
    assert_eq!(code(&gsa), 1);
    assert!(String::from_utf8_lossy(&gsa.stderr).contains("not qualified"));

    let perturbed = imexctrl(&[
        "symplectic-check", "--scheme", "imex-ssp2", "--problem", "linear-split", "--perturb-beta11", "0.01",
    ]);
    assert_eq!(code(&perturbed), 1);
    let r: f64 = stdout(&perturbed).lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!(r >= 1e-5);
}

#[test]
fn symplectic_check_validates_vector_length() {
    let out = imexctrl(&["symplectic-check", "--scheme", "imex-ssp2", "--problem", "hager", "--y0", "1,2"]);
    assert_eq!(code(&out), 64);
}

#[test]
fn gradient_check_passes_for_random_control() {
    for scheme in ["imex-ssp2", "imex-gsa", "imex-hag", "imex-sa3"] {
        let out = imexctrl(&["gradient-check", "--scheme", scheme, "--seed", "24301"]);
        assert_eq!(code(&out), 0, "{scheme}");
    }
}
