use std::fs;
use std::process::Command;

use sbm_multigrid::harness::CSV_HEADER;

fn sbm() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sbm"))
}

#[test]
fn solve_writes_record_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run.csv");
    let status = sbm()
        .args(["solve", "--p", "1", "--levels", "2", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), CSV_HEADER.join(","));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row.len(), CSV_HEADER.len());
    assert_eq!(row[0], "h");
    assert_eq!(row[8], "true");
}

#[test]
fn non_convergence_exits_with_two() {
    let status = sbm()
        .args(["solve", "--p", "2", "--levels", "3", "--max-iter", "1"])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));
    let stdout = String::from_utf8(status.stdout).unwrap();
    let row = stdout.lines().nth(1).unwrap();
    assert!(row.contains(",-1,false,"));
}

#[test]
fn invalid_configuration_exits_with_one() {
    let status = sbm().args(["solve", "--p", "0"]).output().unwrap();
    assert_eq!(status.status.code(), Some(1));
    let status = sbm()
        .args(["solve", "--lambda", "1.5"])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(1));
}

#[test]
fn dumps_matrix_rhs_and_classification() {
    let dir = tempfile::tempdir().unwrap();
    let mtx = dir.path().join("a.mtx");
    let cls = dir.path().join("cells.csv");
    let status = sbm()
        .args(["solve", "--p", "1", "--levels", "1", "--dump-matrix"])
        .arg(&mtx)
        .arg("--dump-classification")
        .arg(&cls)
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(0));
    let matrix = fs::read_to_string(&mtx).unwrap();
    assert!(matrix.starts_with("%%MatrixMarket matrix coordinate real general"));
    let rhs = fs::read_to_string(dir.path().join("a.mtx.rhs")).unwrap();
    assert!(rhs.starts_with("%%MatrixMarket matrix array real general"));
    let cells = fs::read_to_string(&cls).unwrap();
    assert_eq!(cells.lines().next().unwrap(), "i,j,fraction_inside,active");
    assert_eq!(cells.lines().count(), 1 + 64);
}

#[test]
fn sweep_writes_cartesian_product() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.csv");
    let status = sbm()
        .args([
            "sweep",
            "--p",
            "1,2",
            "--levels",
            "1,2",
            "--smooth-steps",
            "1,3",
            "--out",
        ])
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 1 + 8);
}

#[test]
fn coverage_reports_uncovered_dofs_for_shyness_four() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cov.csv");
    let run = sbm()
        .args(["coverage", "--p", "2", "--levels", "3", "--shyness", "4", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(run.status.code(), Some(0));
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "vertex,active_cells,patch_formed,uncovered_dofs"
    );
    let stderr = String::from_utf8(run.stderr).unwrap();
    assert!(!stderr.starts_with("0 uncovered"), "{stderr}");
}

#[test]
fn shift_stats_and_converge_schemas() {
    let run = sbm()
        .args(["shift-stats", "--levels", "2", "--lambda", "0"])
        .output()
        .unwrap();
    assert_eq!(run.status.code(), Some(0));
    let text = String::from_utf8(run.stdout).unwrap();
    assert_eq!(text.lines().next().unwrap(), "p,refinements,lambda,shift_min,shift_max");
    assert_eq!(text.lines().count(), 2);

    let run = sbm()
        .args(["converge", "--p", "1", "--levels", "2,3"])
        .output()
        .unwrap();
    assert_eq!(run.status.code(), Some(0));
    let text = String::from_utf8(run.stdout).unwrap();
    assert_eq!(text.lines().next().unwrap(), "refinements,h,l2_error,iterations");
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn sequential_flag_gives_identical_iterations() {
    let run = |extra: &[&str]| {
        let out = sbm()
            .args(extra)
            .args(["solve", "--p", "2", "--levels", "3"])
            .output()
            .unwrap();
        let text = String::from_utf8(out.stdout).unwrap();
        let row: Vec<String> = text.lines().nth(1).unwrap().split(',').map(String::from).collect();
        (row[7].clone(), row[12].clone())
    };
    assert_eq!(run(&[]), run(&["--sequential"]));
}
