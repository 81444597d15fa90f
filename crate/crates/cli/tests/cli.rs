use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BASE: &str = r#"
[kernel]
hurst = 0.3
mu = 0.0
lambda = 1.0

[branching]
rate = 1.0
offspring = { kind = "binary", p0 = 0.2, p2 = 0.8 }

[simulation]
grid_dt = 0.05
horizon = 3.0
snapshot_times = [1.0, 2.0, 3.0]
replicates = 40
seed = 99

[[test_functions]]
kind = "box"
lower = [-1.0]
upper = [1.0]

[[test_functions]]
kind = "bump"
amplitude = 1.0
width = 0.5
"#;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("exp.toml");
    fs::write(&p, text).unwrap();
    p
}

fn vbsim(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_vbsim"));
    cmd.args(args).env_remove("VBSIM_THREADS");
    if let Some(t) = threads {
        cmd.env("VBSIM_THREADS", t);
    }
    cmd.output().unwrap()
}

fn run_in(dir: &Path, sub: &str, text: &str, extra: &[&str], threads: Option<&str>) -> (Output, PathBuf) {
    let cfg = write_config(dir, text);
    let out = dir.join("out");
    let mut args = vec![sub, cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    (vbsim(&args, threads), out)
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn bad_hurst_is_invalid_input() {
    let dir = tempfile::tempdir().unwrap();
    let (out, _) = run_in(dir.path(), "simulate", &BASE.replace("hurst = 0.3", "hurst = 1.2"), &[], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("kernel.hurst"));
    let (out, _) = run_in(dir.path(), "kernel", BASE, &["--set", "kernel.hurst=1.2"], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("kernel.hurst"));
}

#[test]
fn unknown_keys_report_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let (out, _) = run_in(dir.path(), "kernel", &BASE.replace("seed = 99", "seed = 99\nsed = 1"), &[], None);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("sed") && err.contains("line"), "{err}");
}

#[test]
fn missing_memory_file_is_invalid_input() {
    let dir = tempfile::tempdir().unwrap();
    let text = BASE.replace("seed = 99", "seed = 99\nmemory_length = 0.5\nmemory_file = \"nowhere.csv\"");
    let (out, _) = run_in(dir.path(), "simulate", &text, &[], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("memory_file"));
}

#[test]
fn byte_identical_across_thread_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for sub in ["lln", "simulate"] {
        let (oa, da) = run_in(a.path(), sub, BASE, &[], Some("1"));
        let (ob, db) = run_in(b.path(), sub, BASE, &[], Some("8"));
        assert_eq!(oa.status.code(), ob.status.code());
        let (fa, fb) = (files(&da), files(&db));
        assert!(!fa.is_empty());
        assert_eq!(fa, fb, "{sub}");
    }
}

#[test]
fn kernel_table_for_brownian_motion_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let text = BASE.replace("hurst = 0.3", "hurst = 0.5");
    let (out, dir_out) = run_in(dir.path(), "kernel", &text, &[], None);
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(dir_out.join("kernel.csv")).unwrap();
    assert!(csv.starts_with("# vbsim kernel\n# root_seed = 99\n# config = {"));
    let mut n = 0;
    for line in csv.lines().filter(|l| !l.starts_with('#')).skip(1) {
        let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(cols[1], cols[0]);
        n += 1;
    }
    assert_eq!(n, 20);
}

#[test]
fn simulated_count_mean_matches_formula() {
    let dir = tempfile::tempdir().unwrap();
    let text = BASE
        .replace("hurst = 0.3", "hurst = 0.5")
        .replace("{ kind = \"binary\", p0 = 0.2, p2 = 0.8 }", "{ kind = \"deterministic\", k = 2 }")
        .replace("horizon = 3.0", "horizon = 4.0")
        .replace("[1.0, 2.0, 3.0]", "[4.0]")
        .replace("replicates = 40", "replicates = 10000\ntrack_positions = false");
    let (out, dir_out) = run_in(dir.path(), "simulate", &text, &[], None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir_out.join("simulate_summary.json")).unwrap()).unwrap();
    let mean = doc["mean_count"]["mean"].as_f64().unwrap();
    let se = doc["mean_count"]["se"].as_f64().unwrap();
    assert!((mean - 4f64.exp()).abs() <= 3.0 * se, "{mean} ± {se}");
    assert_eq!(doc["config"]["simulation"]["replicates"], 10000);
    assert_eq!(doc["root_seed"], 99);
}

#[test]
fn capped_runs_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let (out, dir_out) = run_in(dir.path(), "simulate", BASE, &["--set", "simulation.max_particles=3"], None);
    assert_eq!(out.status.code(), Some(3));
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir_out.join("simulate_summary.json")).unwrap()).unwrap();
    assert_eq!(doc["partial"], true);
}

#[test]
fn lln_exit_status_follows_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let text = BASE.replace("hurst = 0.3", "hurst = 0.5\nmu = -1.0").replace("mu = 0.0\n", "");
    let (out, _) = run_in(dir.path(), "lln", &text, &["--set", "tolerances.ratio_relative=0.5"], None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let (out, dir_out) = run_in(dir.path(), "lln", &text, &["--set", "tolerances.ratio_relative=1e-9"], None);
    assert_eq!(out.status.code(), Some(1));
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir_out.join("lln.json")).unwrap()).unwrap();
    assert_eq!(doc["pass"], false);
}

#[test]
fn lln_rejects_divergent_target() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{BASE}\n[[test_functions]]\nkind = \"constant\"\nvalue = 1.0\n");
    let (out, _) = run_in(dir.path(), "lln", &text, &[], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("test_functions[2]"));
}

#[test]
fn moments_print_json() {
    let dir = tempfile::tempdir().unwrap();
    let (out, _) = run_in(dir.path(), "moments", BASE, &[], None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let first = &doc["times"][0]["functions"][0];
    assert!(first["second_moment"].as_f64().unwrap() >= first["mean"].as_f64().unwrap().powi(2));
}

#[test]
fn conditions_pass_for_fbm() {
    let dir = tempfile::tempdir().unwrap();
    let (out, dir_out) = run_in(dir.path(), "conditions", BASE, &["--set", "lln.series_terms=1000"], None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir_out.join("conditions.csv").exists());
}
