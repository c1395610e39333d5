use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn cutmove(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cutmove"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn read(dir: &TempDir, name: &str) -> String {
    fs::read_to_string(dir.path().join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn run_writes_errors_for_manufactured_cases() {
    let dir = TempDir::new().unwrap();
    let o = cutmove(
        &[
            "run",
            "example1_travel",
            "--Lx",
            "0",
            "--Lt",
            "0",
            "--scheme",
            "ie",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let errors = read(&dir, "errors.txt");
    assert!(errors.starts_with("l2l2 = "));
    let rows = errors
        .lines()
        .skip_while(|l| !l.starts_with("step,"))
        .skip(1)
        .count();
    assert_eq!(rows, 3);
    assert_eq!(read(&dir, "diagnostics.log").lines().count(), 2);
    assert!(read(&dir, "metadata.txt").contains("steps"));
}

#[test]
fn unknown_case_is_a_configuration_error() {
    let dir = TempDir::new().unwrap();
    let o = cutmove(&["run", "no_such_case"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = cutmove(&["run", "example1_travel", "--dt-div", "7"], dir.path());
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let o = cutmove(&["run", "example1_travel", "--ghost", "bogus"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn conservative_topology_run_keeps_its_mass() {
    let dir = TempDir::new().unwrap();
    let o = cutmove(
        &[
            "run",
            "example4_topology",
            "--dt-div",
            "10",
            "--conservative",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mass = read(&dir, "mass.csv");
    let m: Vec<f64> = mass
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(m.len(), 11);
    assert!(m
        .iter()
        .all(|v| (v - m[0]).abs() <= 1e-10 * (1.0 + m[0].abs())));
    assert!(!dir.path().join("errors.txt").exists());
}

#[test]
fn convergence_grid_tables() {
    let dir = TempDir::new().unwrap();
    let o = cutmove(
        &[
            "convergence",
            "example1_travel",
            "--Lx",
            "0..1",
            "--Lt",
            "0..1",
            "--scheme",
            "ie",
            "--norms",
            "l2l2,l2h1",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = read(&dir, "l2l2.csv");
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "Lt\\Lx,0,1,eoc_t");
    assert_eq!(lines.len(), 1 + 2 + 3);
    assert!(lines[5].starts_with("eoc_xtt,---,---"));
    assert!(dir.path().join("l2h1.csv").exists());
    assert!(!dir.path().join("linfl2.csv").exists());
    assert!(read(&dir, "metadata.txt").contains("runs"));

    // tables are byte-stable across invocations
    let again = TempDir::new().unwrap();
    cutmove(
        &[
            "convergence",
            "example1_travel",
            "--Lx",
            "0..1",
            "--Lt",
            "0..1",
            "--scheme",
            "ie",
            "--norms",
            "l2l2",
            "--sequential",
        ],
        again.path(),
    );
    assert_eq!(read(&again, "l2l2.csv"), csv);
}

#[test]
fn export_initial_state() {
    let dir = TempDir::new().unwrap();
    let args = [
        "export",
        "example3_mass",
        "--Lx",
        "0",
        "--Lt",
        "0",
        "--step",
        "0",
    ];
    assert!(cutmove(&args, dir.path()).status.success());
    let table = read(&dir, "field_00000.txt");
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("x y phi u active"));
    let mut active = 0;
    for l in lines {
        let c: Vec<&str> = l.split(' ').collect();
        let v: Vec<f64> = c[..4].iter().map(|s| s.parse().unwrap()).collect();
        if c[4] == "1" {
            active += 1;
            // u0 = sin(pi r) around the centre (0, 0) at t = 0
            let r = v[0].hypot(v[1]);
            assert!((v[3] - (std::f64::consts::PI * r).sin()).abs() < 1e-12);
        } else {
            assert_eq!(c[4], "0");
            assert_eq!(v[3], 0.0);
        }
    }
    assert!(active > 0);
    let again = TempDir::new().unwrap();
    cutmove(&args, again.path());
    assert_eq!(read(&again, "field_00000.txt"), table);
    assert_eq!(
        cutmove(&["export", "example3_mass", "--step", "99"], dir.path())
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn case_files_load_from_disk() {
    let dir = TempDir::new().unwrap();
    let case = dir.path().join("still.case");
    fs::write(
        &case,
        "name = still\nbox = 0 1 0 1\nT = 0.1\nalpha = 1\nh0 = 0.5\ndt0 = 0.05\nphi = x - 0.55\nu0 = 1\nuex = 1\nuex_dx = 0\nuex_dy = 0\nf = 0\n",
    )
    .unwrap();
    let o = cutmove(&["run", case.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let errors = read(&dir, "errors.txt");
    let l2: f64 = errors
        .lines()
        .next()
        .unwrap()
        .trim_start_matches("l2l2 = ")
        .parse()
        .unwrap();
    assert!(l2 < 1e-10, "{l2}");
}
