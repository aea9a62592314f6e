//! End-to-end runs of the `tpe` binary.

use std::path::Path;
use std::process::{Command, Output};

fn tpe(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tpe"))
        .args(args)
        .current_dir(dir)
        .env_remove("TPE_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

fn manifest(path: impl AsRef<Path>) -> serde_json::Value {
    serde_json::from_str(&read(path)).expect("manifest is JSON")
}

/// A small, fast analytic configuration.
const SMALL_GRID: &str = "alpha = 0.5\nbeta = 0.5\ngrid_window = 2.0\ngrid_step = 0.5\n";

#[test]
fn unknown_config_key_exits_two_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "alpha = 0.5\nkappa_q = 3\n").unwrap();
    let out = tpe(dir.path(), &["grid", "--config", "bad.toml"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("kappa_q"));
}

#[test]
fn out_of_range_values_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = tpe(dir.path(), &["grid", "--eta", "2"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("`eta`"));
    assert_eq!(code(&tpe(dir.path(), &["grid", "--sector", "sideways"])), 2);
    assert_eq!(code(&tpe(dir.path(), &["compare", "--alpha", "1.5"])), 2);
    assert_eq!(code(&tpe(dir.path(), &["frobnicate"])), 2);
}

#[test]
fn grid_writes_four_planes_in_the_csv_layout() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.toml"), SMALL_GRID).unwrap();
    let out = tpe(dir.path(), &["grid", "--config", "small.toml", "--sector", "even", "--quadrature", "X", "--out", "g"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for field in ["P", "F", "C", "gradF"] {
        let text = read(dir.path().join(format!("g/grid_even_X_{field}.csv")));
        assert!(!text.contains('\r'));
        assert!(text.ends_with('\n'));
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("xi_a,xi_b,value"));
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), 9 * 9);
        for row in rows {
            for cell in row.split(',') {
                let mantissa = cell.split('e').next().unwrap().trim_start_matches('-');
                assert_eq!(mantissa.chars().filter(char::is_ascii_digit).count(), 17, "{cell}");
            }
        }
    }
    let m = manifest(dir.path().join("g/manifest_grid.json"));
    assert_eq!(m["command"], "grid");
    assert_eq!(m["files"].as_array().unwrap().len(), 4);
    assert_eq!(m["config"]["params"]["alpha"], 0.5);
}

#[test]
fn zero_amplitude_gives_a_perfect_bell_state() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("zero.toml"), "alpha = 0.0\nbeta = 0.0\ngrid_window = 1.0\ngrid_step = 0.5\n").unwrap();
    let out = tpe(dir.path(), &["grid", "--config", "zero.toml", "--sector", "even", "--out", "z"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for q in ["X", "Y"] {
        for line in read(dir.path().join(format!("z/grid_even_{q}_F.csv"))).lines().skip(1) {
            let f: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
            assert!((f - 1.0).abs() < 1e-12, "{line}");
        }
    }
}

#[test]
fn out_flag_overrides_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.toml"), SMALL_GRID).unwrap();
    let args = ["grid", "--config", "small.toml", "--sector", "odd", "--quadrature", "Y"];
    let run = |extra: &[&str]| {
        let mut all: Vec<&str> = args.to_vec();
        all.extend_from_slice(extra);
        Command::new(env!("CARGO_BIN_EXE_tpe")).args(&all).current_dir(dir.path()).env("TPE_OUT_DIR", "from-env").output().unwrap()
    };
    assert_eq!(code(&run(&[])), 0);
    assert!(dir.path().join("from-env/grid_odd_Y_F.csv").exists());
    assert_eq!(code(&run(&["--out", "from-flag"])), 0);
    assert!(dir.path().join("from-flag/grid_odd_Y_F.csv").exists());
    assert_eq!(code(&tpe(dir.path(), &args)), 0);
    assert!(dir.path().join("tpe-out/grid_odd_Y_F.csv").exists());
}

#[test]
fn fixed_seed_output_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), "t_total = 0.2\nsweep_alphas = [0.5]\nsweep_etas = [0.6, 1.0]\n").unwrap();
    let base = ["sweep", "--config", "tiny.toml", "--trajectories", "6", "--seed", "11"];
    for (out, threads) in [("a", "1"), ("b", "2")] {
        let mut args = base.to_vec();
        args.extend_from_slice(&["--threads", threads, "--out", out]);
        let o = tpe(dir.path(), &args);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = std::fs::read(dir.path().join("a/sweep.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/sweep.csv")).unwrap();
    assert_eq!(a, b);
    let ma = manifest(dir.path().join("a/manifest_sweep.json"));
    assert_eq!(ma["files"][0]["sha256"], manifest(dir.path().join("b/manifest_sweep.json"))["files"][0]["sha256"]);
}

#[test]
fn default_sweep_covers_thirty_points() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("short.toml"), "t_total = 0.1\n").unwrap();
    let out = tpe(dir.path(), &["sweep", "--config", "short.toml", "--trajectories", "1", "--out", "s"]);
    assert!(matches!(code(&out), 0 | 1), "{}", String::from_utf8_lossy(&out.stderr));
    let text = read(dir.path().join("s/sweep.csv"));
    assert_eq!(text.lines().count(), 31);
    assert!(text.starts_with("alpha,beta,eta,"));
}

#[test]
fn quick_validation_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = tpe(dir.path(), &["validate", "--quick", "--out", "v"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let text = read(dir.path().join("v/validate.csv"));
    assert!(text.starts_with("check,passed,detail\n"));
    assert!(text.lines().skip(1).all(|l| l.contains(",true,")));
}
