use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sarbf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sarbf")).args(args).output().expect("binary runs")
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.toml");
    fs::write(
        &path,
        "seed = 3\ntrials = 5\n\n[scenario]\nnum_users = 2\n\n[sweep]\nparameter = \"sar_limit\"\nvalues = [0.8, 1.6]\nschemes = [\"optimal\"]\n",
    )
    .unwrap();
    path.to_string_lossy().into_owned()
}

fn data_rows(csv: &str) -> Vec<&str> {
    csv.lines().filter(|l| !l.starts_with('#')).skip(1).collect()
}

#[test]
fn sweep_writes_csv_with_expected_shape() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("run");
    let o = sarbf(&["sweep", "--config", &cfg, "--trials", "2", "--schemes", "zf", "--jobs", "2", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let rows = data_rows(&csv);
    assert_eq!(rows.len(), 2 * 2);
    assert!(rows.iter().all(|r| r.split(',').nth(4) == Some("zf")));
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("config_sha256 = "));
    assert!(manifest.contains("seed = 3"));
    assert!(manifest.contains("sarbf_version = "));
    assert_eq!(data_rows(&fs::read_to_string(out.join("timing.csv")).unwrap()).len(), 4);
}

#[test]
fn same_seed_gives_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (out, jobs) in [(&a, "1"), (&b, "3")] {
        let o = sarbf(&["sweep", "--config", &cfg, "--trials", "2", "--schemes", "optimal,zf", "--seed", "11", "--jobs", jobs, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(fs::read(a.join("sweep.csv")).unwrap(), fs::read(b.join("sweep.csv")).unwrap());
    assert_eq!(fs::read(a.join("manifest.txt")).unwrap(), fs::read(b.join("manifest.txt")).unwrap());
}

#[test]
fn bad_config_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "seed = 1\n\n[scenario]\nnum_users = \"four\"\n").unwrap();
    let o = sarbf(&["sweep", "--config", path.to_str().unwrap()]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 4"), "{err}");

    let o = sarbf(&["sweep", "--schemes", "optimal,mmse"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("mmse"));
}

#[test]
fn single_user_bench_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench");
    let o = sarbf(&["single-user-bench", "--trials", "4", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("single_user_bench.csv")).unwrap();
    let rows = data_rows(&csv);
    assert_eq!(rows.len(), 4);
    for r in rows {
        let gap: f64 = r.split(',').nth(3).unwrap().parse().unwrap();
        assert!(gap <= 1e-3, "{r}");
    }
}

#[test]
fn robust_cdf_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("cdf");
    let o = sarbf(&["robust-cdf", "--config", &cfg, "--trials", "50", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["cdf_sinr.csv", "cdf_eh.csv"] {
        let csv = fs::read_to_string(out.join(name)).unwrap();
        assert_eq!(data_rows(&csv).len(), 2 * 2 * 50);
    }
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("robust    violation probability 0.0000"), "{stdout}");
}

#[test]
fn validate_passes() {
    let o = sarbf(&["validate", "--trials", "2"]);
    assert!(o.status.success(), "{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).lines().all(|l| l.starts_with("PASS")));
}
