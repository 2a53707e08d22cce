//! End-to-end checks of the binary: artifact layout, determinism across
//! reruns, and the documented exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn arxcv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_arxcv"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|_| panic!("missing {}", path.display()))
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.toml");
    std::fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

const TINY_ANALYTIC: &str = r#"
[experiment]
id = 1
base_phi = [0.75, 0.2]
q_star = 3
variant = "easy"
alpha_grid = [0.0, 1.0]
t = 28

[experiment.candidate_a]
p = 1
q = 2

[experiment.candidate_b]
p = 1
q = 1

[[schemes]]
kind = "loo"
mode = "pointwise"
"#;

const TINY_FULL_BAYES: &str = r#"
[experiment]
id = 2
base_phi = [0.95]
q_star = 3
variant = "hard"
alpha_grid = [0.0, 1.0]
t = 20
replicates = 3
mc_draws = 4
seed = 7

[experiment.candidate_a]
p = 1
q = 3

[experiment.candidate_b]
p = 1
q = 2

[[schemes]]
kind = "k-fold"
k = 4
mode = "joint"
"#;

#[test]
fn experiment_run_writes_deterministic_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), TINY_ANALYTIC);
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");

    for out in [&out_a, &out_b] {
        let result = arxcv(&[
            "experiment",
            "run",
            "--config",
            &config,
            "--out-dir",
            &out.to_string_lossy(),
        ]);
        assert_success(&result);
    }

    let selection = read(&out_a.join("selection.csv"));
    assert_eq!(selection, read(&out_b.join("selection.csv")), "reruns must match");
    assert!(selection.starts_with("alpha,scheme,mode,t,"));
    assert_eq!(selection.lines().count(), 3, "two grid cells plus the header");

    assert!(read(&out_a.join("config.toml")).contains("kind = \"loo\""));
    assert!(read(&out_a.join("design.csv")).starts_with("z1,z2,z3"));
    assert!(read(&out_a.join("adverse_loo_pointwise.svg")).contains("<svg"));
}

#[test]
fn experiment_run_replicate_engine_emits_tables_and_scatter() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), TINY_FULL_BAYES);
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");

    for out in [&out_a, &out_b] {
        let result = arxcv(&[
            "experiment",
            "run",
            "--config",
            &config,
            "--engine",
            "full-bayes",
            "--threads",
            "2",
            "--out-dir",
            &out.to_string_lossy(),
        ]);
        assert_success(&result);
    }

    let replicates = read(&out_a.join("replicates.csv"));
    assert_eq!(replicates, read(&out_b.join("replicates.csv")));
    assert!(replicates.starts_with("replicate,alpha,variant,stat_joint,stat_pointwise"));
    assert_eq!(replicates.lines().count(), 7, "3 replicates x 2 alphas plus the header");
    assert!(read(&out_a.join("statistics_scatter.svg")).contains("circle"));
}

#[test]
fn simulate_writes_one_row_per_observation() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sim");
    let result = arxcv(&[
        "simulate",
        "--preset",
        "2",
        "--variant",
        "easy",
        "--paths",
        "2",
        "--alpha",
        "0.5",
        "--out-dir",
        &out.to_string_lossy(),
    ]);
    assert_success(&result);

    let paths = read(&out.join("paths.csv"));
    assert!(paths.starts_with("path,t,y"));
    assert_eq!(paths.lines().count(), 1 + 2 * 100);
    assert!(read(&out.join("design.csv")).starts_with("z1,z2,z3"));
}

#[test]
fn elpd_dist_tabulates_each_series() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), TINY_ANALYTIC);
    let out = tmp.path().join("dist");
    let result = arxcv(&[
        "elpd-dist",
        "--config",
        &config,
        "--alpha",
        "1.0",
        "--grid",
        "11",
        "--out-dir",
        &out.to_string_lossy(),
    ]);
    assert_success(&result);

    let table = read(&out.join("elpd_dist.csv"));
    assert!(table.starts_with("series,w,cdf"));
    assert_eq!(table.lines().count(), 1 + 3 * 11, "three series, eleven points each");
    for name in ["candidate_a", "candidate_b", "difference"] {
        assert!(table.contains(name), "missing series {name}");
    }
}

#[test]
fn adverse_rate_sweeps_the_requested_axis() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        r#"
[experiment]
id = 1
base_phi = [0.75, 0.2]
q_star = 3
variant = "easy"
alpha_grid = [1.0]
t = 24

[experiment.candidate_a]
p = 1
q = 2

[experiment.candidate_b]
p = 1
q = 1

[[schemes]]
kind = "hv-block"
h = 2
v = 2
mode = "joint"
"#,
    );
    let out = tmp.path().join("sweep");
    let result = arxcv(&[
        "adverse-rate",
        "--config",
        &config,
        "--axis",
        "v",
        "--values",
        "0,2",
        "--alpha",
        "0.8",
        "--out-dir",
        &out.to_string_lossy(),
    ]);
    assert_success(&result);

    let table = read(&out.join("sweep.csv"));
    assert!(table.starts_with("axis,value,alpha,scheme,mode,t,"));
    assert_eq!(table.lines().count(), 3);
    assert!(table.contains("\nv,0,"));
    assert!(table.contains("\nv,2,"));
}

#[test]
fn min_sample_size_reports_the_search() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), TINY_ANALYTIC);
    let out = tmp.path().join("mss");
    let result = arxcv(&[
        "min-sample-size",
        "--config",
        &config,
        "--alpha",
        "0.3",
        "--gamma",
        "0.6",
        "--t-lo",
        "12",
        "--t-hi",
        "32",
        "--step",
        "10",
        "--out-dir",
        &out.to_string_lossy(),
    ]);
    assert_success(&result);
    assert!(String::from_utf8_lossy(&result.stdout).contains("t_min="));
    assert!(read(&out.join("min_sample_size.csv")).starts_with("t,adverse_prob"));
}

#[test]
fn plot_round_trips_csv_with_column_selection() {
    let tmp = tempfile::tempdir().unwrap();
    let csv_path = tmp.path().join("points.csv");
    std::fs::write(&csv_path, "idx,lo,hi\n1,0.5,2.0\n2,0.25,3.0\n3,0.75,1.0\n").unwrap();

    let line = tmp.path().join("line.svg");
    let result = arxcv(&[
        "plot",
        "--input",
        &csv_path.to_string_lossy(),
        "--kind",
        "line",
        "--out",
        &line.to_string_lossy(),
        "--x",
        "idx",
        "--y",
        "hi",
    ]);
    assert_success(&result);
    let svg = read(&line);
    assert_eq!(svg.matches("<polyline").count(), 1);

    let scatter = tmp.path().join("scatter.svg");
    let result = arxcv(&[
        "plot",
        "--input",
        &csv_path.to_string_lossy(),
        "--kind",
        "scatter",
        "--out",
        &scatter.to_string_lossy(),
    ]);
    assert_success(&result);
    assert_eq!(read(&scatter).matches("<circle").count(), 3);

    let missing = arxcv(&[
        "plot",
        "--input",
        &csv_path.to_string_lossy(),
        "--kind",
        "line",
        "--out",
        &line.to_string_lossy(),
        "--x",
        "idx",
        "--y",
        "nope",
    ]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn configuration_problems_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");

    let missing = arxcv(&[
        "experiment",
        "run",
        "--config",
        "/nonexistent/config.toml",
        "--out-dir",
        &out.to_string_lossy(),
    ]);
    assert_eq!(missing.status.code(), Some(2));

    let unstable = write_config(
        tmp.path(),
        "[experiment]\nid = 1\nbase_phi = [1.2]\nq_star = 3\nvariant = \"easy\"\n\n[experiment.candidate_a]\np = 1\nq = 2\n\n[experiment.candidate_b]\np = 1\nq = 1\n",
    );
    let invalid = arxcv(&["experiment", "run", "--config", &unstable, "--out-dir", &out.to_string_lossy()]);
    assert_eq!(invalid.status.code(), Some(2));

    let wrong_engine = arxcv(&[
        "elpd-dist",
        "--preset",
        "1",
        "--engine",
        "full-bayes",
        "--out-dir",
        &out.to_string_lossy(),
    ]);
    assert_eq!(wrong_engine.status.code(), Some(2));

    let bad_preset = arxcv(&["simulate", "--preset", "9", "--out-dir", &out.to_string_lossy()]);
    assert_eq!(bad_preset.status.code(), Some(2));
}
