use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn homlab(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_homlab"));
    cmd.args(args).env_remove("HOMLAB_WORKERS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn run_sub(sub: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![sub, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    homlab(&args, &[])
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn expansion_and_annealed_routes_agree() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "routes.toml",
        "dim = 1\nside = 32\ndelta = 0.1\nsamples = 2000\norder = 4\nseed = 5\n",
    );
    let a = tmp.path().join("exp");
    let b = tmp.path().join("ann");
    assert!(run_sub("expansion", &cfg, &a, &[]).status.success());
    assert!(run_sub("annealed", &cfg, &b, &[]).status.success());
    let out = homlab(
        &[
            "compare",
            a.join("expansion_k1.csv").to_str().unwrap(),
            b.join("annealed_symbol.csv").to_str().unwrap(),
            "--out",
            tmp.path().join("cmp").to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    assert!(stdout(&out).contains("PASS"));
    let table = fs::read_to_string(tmp.path().join("cmp/compare.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 8);
}

#[test]
fn truncated_series_is_flagged_against_the_annealed_route() {
    let tmp = tempfile::tempdir().unwrap();
    let series = write_config(
        tmp.path(),
        "n1.toml",
        "side = 8\ndelta = 0.7\nsamples = 20000\norder = 1\nseed = 3\n",
    );
    let annealed = write_config(tmp.path(), "ann.toml", "side = 8\ndelta = 0.7\nsamples = 20000\nseed = 4\n");
    let a = tmp.path().join("exp");
    let b = tmp.path().join("ann");
    assert!(run_sub("expansion", &series, &a, &[]).status.success());
    assert!(run_sub("annealed", &annealed, &b, &[]).status.success());
    let out = homlab(
        &[
            "compare",
            a.join("expansion_k1.csv").to_str().unwrap(),
            b.join("annealed_symbol.csv").to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(1), "{}", stdout(&out));
    assert!(stdout(&out).contains("FAIL"));
}

#[test]
fn outputs_do_not_depend_on_worker_count() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "det.toml",
        "dim = 2\nside = 8\nsamples = 400\norder = 3\nseed = 21\ndistribution = \"uniform\"\nhalf_width = 1.0\n",
    );
    let mut snapshots = Vec::new();
    for (i, workers) in ["1", "3", "8"].iter().enumerate() {
        let out = tmp.path().join(format!("w{i}"));
        let o = homlab(
            &["expansion", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()],
            &[("HOMLAB_WORKERS", workers)],
        );
        assert!(o.status.success(), "{}", stderr(&o));
        snapshots.push((
            fs::read(out.join("expansion_symbol.csv")).unwrap(),
            fs::read(out.join("expansion_k1.csv")).unwrap(),
        ));
    }
    assert_eq!(snapshots[0], snapshots[1]);
    assert_eq!(snapshots[0], snapshots[2]);
}

#[test]
fn seed_override_changes_samples_and_fingerprint() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "seed.toml", "side = 8\nsamples = 100\n");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(run_sub("expansion", &cfg, &a, &["--seed", "1"]).status.success());
    assert!(run_sub("expansion", &cfg, &b, &["--seed", "2"]).status.success());
    let ta = fs::read_to_string(a.join("expansion_k1.csv")).unwrap();
    let tb = fs::read_to_string(b.join("expansion_k1.csv")).unwrap();
    let fp = |t: &str| t.lines().nth(1).unwrap().rsplit(',').next().unwrap().to_string();
    assert_ne!(fp(&ta), fp(&tb));
    assert_ne!(ta, tb);
}

#[test]
fn fit_reads_an_annealed_table() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "fit.toml",
        "side = 32\nsamples = 500\nfit_mode = \"symbol\"\n",
    );
    let ann = tmp.path().join("ann");
    assert!(run_sub("annealed", &cfg, &ann, &[]).status.success());
    let out = tmp.path().join("fit");
    let input = ann.join("annealed_symbol.csv");
    let o = run_sub("fit", &cfg, &out, &["--input", input.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = fs::read_to_string(out.join("fit_report.csv")).unwrap();
    let header: Vec<&str> = report.lines().next().unwrap().split(',').collect();
    assert_eq!(&header[..3], &["mode", "slope", "ci95"]);
    assert!(report.lines().nth(1).unwrap().starts_with("symbol,"));
}

#[test]
fn oracle_recovers_the_laplacian_without_disorder() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "o.toml", "side = 6\ndelta = 0.0\n");
    let out = tmp.path().join("o");
    assert!(run_sub("oracle", &cfg, &out, &[]).status.success());
    let report = fs::read_to_string(out.join("oracle_report.csv")).unwrap();
    assert!(report.lines().any(|l| l.starts_with("matches_laplacian,true")), "{report}");
}

#[test]
fn configuration_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let unknown = write_config(tmp.path(), "bad.toml", "side = 8\ncolour = 1\n");
    let o = run_sub("expansion", &unknown, &tmp.path().join("x"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr(&o).trim().lines().count(), 1, "{}", stderr(&o));

    let large = write_config(tmp.path(), "large.toml", "side = 32\n");
    let o = run_sub("oracle", &large, &tmp.path().join("y"), &[]);
    assert_eq!(o.status.code(), Some(2));

    let coercivity = write_config(tmp.path(), "delta.toml", "side = 8\ndelta = 1.5\n");
    let o = run_sub("annealed", &coercivity, &tmp.path().join("z"), &[]);
    assert_eq!(o.status.code(), Some(2));

    let a = write_config(tmp.path(), "a.csv", "k_0,xi_norm,k1,k1_stderr\n1,0.1,0.0,1.0\n");
    let b = write_config(tmp.path(), "b.csv", "k_0,xi_norm,k1,k1_stderr\n2,0.2,0.0,1.0\n");
    let o = homlab(&["compare", a.to_str().unwrap(), b.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn solver_failure_exits_with_three_and_leaves_a_marker() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "tol.toml", "side = 16\nsamples = 10\ntol = 1e-40\n");
    let out = tmp.path().join("a");
    let o = run_sub("annealed", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let marker = fs::read_to_string(out.join("annealed.partial")).unwrap();
    assert!(marker.starts_with("incomplete: "));
    assert!(!out.join("annealed_symbol.csv").exists());
}
