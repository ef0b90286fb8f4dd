use std::path::Path;
use std::process::{Command, Output};

const MINIMAL: &str = r#"
[mesh]
n = 4
[model]
p = 2.0
eps = 0.5
[time]
T = 0.1
K = 10
"#;

fn lagflow(args: &[&str], config: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_lagflow"));
    cmd.args(args);
    if let Some(c) = config {
        cmd.arg(c);
    }
    cmd.output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn minimal_run_writes_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", MINIMAL);
    let out = lagflow(&["run"], Some(&cfg));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("out/trajectory.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "k,t_k,L2_norm,W1p_seminorm,energy_eps,dtau_L2,solver_iters,residual");
    assert_eq!(lines.len(), 12);
    assert!(lines[11].starts_with("10,0.1,"));
    let diag: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/diagnostics.json")).unwrap()).unwrap();
    assert_eq!(diag["schema"], lagflow_cli::RUN_SCHEMA);
    assert_eq!(diag["passed"], true);
    assert!(dir.path().join("out/final.vtk").exists());
}

#[test]
fn zero_eps_semi_implicit_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", &MINIMAL.replace("eps = 0.5", "eps = 0.0"));
    let out = lagflow(&["run"], Some(&cfg));
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("model.eps"), "{err}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn unknown_keys_and_missing_files_fail() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", &format!("{MINIMAL}\n[extra]\nx = 1\n"));
    assert_eq!(lagflow(&["run"], Some(&cfg)).status.code(), Some(1));
    assert_eq!(lagflow(&["run"], Some(&dir.path().join("absent.toml"))).status.code(), Some(1));
}

#[test]
fn implicit_run_with_lower_order_term() {
    let dir = tempfile::tempdir().unwrap();
    let text = MINIMAL.replace("p = 2.0", "p = 1.5").replace("eps = 0.5", "eps = 0.05")
        + "[scheme]\nkind = \"implicit\"\n[scheme.nonlinear]\nkind = \"newton-damped\"\ntol_res = 1e-10\nmax_iter = 50\n"
        + "[model.coeff]\nkind = \"power\"\nr = 3.0\n";
    let cfg = write(dir.path(), "run.toml", &text);
    let out = lagflow(&["run"], Some(&cfg));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn inadmissible_coefficient_runs_with_warning() {
    let dir = tempfile::tempdir().unwrap();
    let text = MINIMAL.replace("p = 2.0", "p = 1.5") + "[model.coeff]\nkind = \"power\"\nr = 2.6\n";
    let cfg = write(dir.path(), "run.toml", &text);
    let out = lagflow(&["run"], Some(&cfg));
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("outside convergence theory"));
    let diag: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/diagnostics.json")).unwrap()).unwrap();
    assert_eq!(diag["admissible"], false);
}

#[test]
fn p2_study_has_vanishing_scheme_gap() {
    let dir = tempfile::tempdir().unwrap();
    let text = MINIMAL.replace("eps = 0.5", "eps = 0.01").replace("K = 10", "K = 4")
        + "[study]\nlevels = 3\nnegative_control = false\n";
    let cfg = write(dir.path(), "study.toml", &text);
    let (report, out) = lagflow_cli::study(&cfg).unwrap();
    for level in &report.study.levels {
        assert!(level.report.as_ref().unwrap().gap <= 1e-8);
    }
    assert!(out.join("study_report.json").exists());
    assert!(out.join("study_levels.csv").exists());
}

#[test]
fn check_lemmas_with_one_sample() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("lemmas");
    let out = lagflow(
        &["check-lemmas", "--samples", "1", "--out", out_dir.to_str().unwrap()],
        None,
    );
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("total violations: 0"));
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("lemma_report.json")).unwrap()).unwrap();
    assert_eq!(doc["schema"], lagflow_cli::LEMMA_SCHEMA);
    assert_eq!(lagflow(&["check-lemmas", "--samples", "0"], None).status.code(), Some(1));
}

#[test]
fn export_mesh_counts() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m/mesh.vtk");
    let out = lagflow(&["export-mesh", "--n", "2", "--refine", "1", "--out", path.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(0));
    let vtk = std::fs::read_to_string(&path).unwrap();
    // One refinement of n = 2 gives a 4x4 grid of squares, two triangles each.
    assert!(vtk.contains("POINTS 25 double"), "{}", &vtk[..200]);
    assert!(vtk.contains("CELLS 32 128"));
}
