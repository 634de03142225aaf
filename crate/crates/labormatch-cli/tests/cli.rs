//! End-to-end tests of the compiled binary: exit codes, artifact layout, and
//! run-to-run determinism.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_labormatch"))
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path
}

/// Small economy that estimates and tests in well under a second per run.
fn small_economy(beta: f64) -> String {
    format!(
        r#"
[economy]
workers = 60
firms = 60
edu_levels = [1.0, 2.0]
capital_support = [0.5, 1.0]
capital_mass = [0.5, 0.5]
covariate_dim = 2
theta1 = 1.0
theta2 = [1.0, 1.0]
beta = {beta}
production = "multiplicative"
outside = "exp_interaction"

[matching]
beta_draws = 40
"#
    )
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn simulate_writes_numbered_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small_economy(1.0));
    let out = bin()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .args(["--seed", "7", "--reps", "2", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    for name in [
        "matches_0000.csv",
        "matches_0001.csv",
        "workers_0000.csv",
        "workers_0001.csv",
    ] {
        assert!(dir.path().join(name).exists(), "missing {name}");
    }
    let text = stdout_of(&out);
    assert!(text.contains("education share"), "stdout: {text}");
    assert!(text.contains("wrote 2 market(s)"), "stdout: {text}");
}

#[test]
fn single_replication_drops_the_number_suffix() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small_economy(0.5));
    let out = bin()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .args(["--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    assert!(dir.path().join("matches.csv").exists());
    assert!(dir.path().join("workers.csv").exists());
}

#[test]
fn missing_config_exits_with_code_two() {
    let out = bin()
        .args(["simulate", "--config", "/nonexistent/config.toml"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr_of(&out));
    assert!(stderr_of(&out).contains("error:"));
}

#[test]
fn invalid_config_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = small_economy(0.0).replace("capital_mass = [0.5, 0.5]", "capital_mass = [0.6, 0.6]");
    let cfg = write_config(dir.path(), &bad);
    let out = bin()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr_of(&out));
    assert!(stderr_of(&out).contains("capital_mass"));
}

#[test]
fn unknown_scale_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small_economy(0.0));
    let out = bin()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .args(["--scale", "huge"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr_of(&out));
    assert!(stderr_of(&out).contains("scale"));
}

#[test]
fn unconverged_solver_exits_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    let strangled = format!(
        "{}\n[solver]\ntol = 1e-12\nmax_iter = 1\n",
        small_economy(1.0)
    );
    let cfg = write_config(dir.path(), &strangled);
    let out = bin()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .args(["--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "stderr: {}", stderr_of(&out));
    assert!(stderr_of(&out).contains("did not converge"));
}

#[test]
fn estimate_writes_interval_table() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{}\n[inference]\nbootstrap_reps = 30\n", small_economy(1.0));
    let cfg = write_config(dir.path(), &text);
    let out = bin()
        .args(["estimate", "--config"])
        .arg(&cfg)
        .args(["--seed", "11", "--reps", "2", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let csv = std::fs::read_to_string(dir.path().join("estimates.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# labormatch"));
    assert_eq!(
        lines.next().unwrap(),
        "replication,theta1_hat,theta2_hat,ci_lo,ci_hi,covered"
    );
    assert_eq!(lines.count(), 2);
    assert!(stdout_of(&out).contains("2 replication(s)"));
}

#[test]
fn confint_beta_accepts_the_generating_friction_on_observed_data() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        "{}\n[inference]\nmc_sims = 19\nbeta_grid = [1.0]\n",
        small_economy(1.0)
    );
    let cfg = write_config(dir.path(), &text);
    let sim = bin()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .args(["--seed", "3", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(sim.status.success(), "stderr: {}", stderr_of(&sim));

    let out = bin()
        .args(["confint-beta", "--config"])
        .arg(&cfg)
        .args(["--seed", "3", "--theta-known", "--data"])
        .arg(dir.path().join("matches.csv"))
        .arg("--covariates")
        .arg(dir.path().join("workers.csv"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    assert!(dir.path().join("confint.csv").exists());
    assert!(dir.path().join("region.csv").exists());
    let text = stdout_of(&out);
    assert!(text.contains("accepted {1}"), "stdout: {text}");
}

#[test]
fn confint_data_flag_requires_covariates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small_economy(1.0));
    let out = bin()
        .args(["confint-beta", "--config"])
        .arg(&cfg)
        .args(["--data", "matches.csv"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr_of(&out));
    assert!(stderr_of(&out).contains("--covariates"));
}

#[test]
fn figures_sweeps_both_scales() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        "{}\n[figures]\ntheta1_cases = [1.0, 3.0]\nbeta_grid = [0.0, 1.0]\nsims = 3\n",
        small_economy(0.0)
    );
    let cfg = write_config(dir.path(), &text);
    let out = bin()
        .args(["figures", "--config"])
        .arg(&cfg)
        .args(["--seed", "5", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let csv = std::fs::read_to_string(dir.path().join("figures.csv")).unwrap();
    let rows = csv.lines().skip(2).count();
    assert_eq!(rows, 4);
    assert!(stdout_of(&out).contains("4 rows"));
}

#[test]
fn tables_reports_each_cell() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        "{}\n[tables]\nbeta0_grid = [0.0]\nsample_sizes = [60]\nsims = 2\nbootstrap_reps = 20\nspecs = [[\"exp_interaction\", \"multiplicative\"]]\n",
        small_economy(0.0)
    );
    let cfg = write_config(dir.path(), &text);
    let out = bin()
        .args(["tables", "--config"])
        .arg(&cfg)
        .args(["--seed", "9", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    assert!(dir.path().join("tables.csv").exists());
    let text = stdout_of(&out);
    assert!(
        text.contains("exp_interaction/multiplicative beta0=0 n=60"),
        "stdout: {text}"
    );
}

#[test]
fn shipped_configs_parse_and_validate() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&configs).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("toml") {
            continue;
        }
        seen += 1;
        let text = std::fs::read_to_string(&path).unwrap();
        labormatch::Config::from_toml_str(&text)
            .unwrap_or_else(|e| panic!("{} does not parse: {e}", path.display()));
    }
    assert!(seen >= 5, "expected the shipped configs, found {seen}");
}

#[test]
fn identical_invocations_reproduce_byte_identical_files() {
    let cfg_dir = tempfile::tempdir().unwrap();
    let cfg = write_config(cfg_dir.path(), &small_economy(2.0));
    let run = |seed: &str| {
        let dir = tempfile::tempdir().unwrap();
        let out = bin()
            .args(["simulate", "--config"])
            .arg(&cfg)
            .args(["--seed", seed, "--out"])
            .arg(dir.path())
            .output()
            .unwrap();
        assert!(out.status.success(), "stderr: {}", stderr_of(&out));
        std::fs::read(dir.path().join("matches.csv")).unwrap()
    };
    let first = run("42");
    let second = run("42");
    assert_eq!(first, second);
    let other_seed = run("43");
    assert_ne!(first, other_seed);
}
