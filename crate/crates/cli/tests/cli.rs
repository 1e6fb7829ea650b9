//! End-to-end runs of the `jcir` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn jcir(args: &[&str], out_root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jcir"))
        .args(args)
        .env("JCIR_OUT", out_root)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn read_json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

#[test]
fn condition_a_holds_for_coordinate_stable_immigration() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("condition_a.toml");
    let o = jcir(
        &["condition-a", "--config", cfg.to_str().unwrap()],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let dir = tmp.path().join("condition-a-0");
    let report = read_json(&dir.join("report.json"));
    assert_eq!(report["satisfied"], serde_json::Value::Bool(true));
    for c in report["coordinates"].as_array().unwrap() {
        assert!((c["vartheta_fit"].as_f64().unwrap() - 0.7).abs() < 0.02);
    }
    let manifest = read_json(&dir.join("manifest.json"));
    assert_eq!(manifest["status"], "ok");
    assert_eq!(manifest["version"], env!("CARGO_PKG_VERSION"));
    assert!(manifest["config"]["model"]["levy"]["variant"] == "coordinate_stable");
    assert!(dir.join("summary.txt").exists() && dir.join("resolved_config.toml").exists());
}

#[test]
fn zero_paths_is_a_validation_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("simulate.toml");
    let out = tmp.path().join("run");
    let o = jcir(
        &[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--set",
            "n_paths=0",
            "--out",
            out.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 1);
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["status"], "failed");
    assert_eq!(manifest["error"]["kind"], "validation");
}

#[test]
fn config_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let bad_tag = tmp.path().join("bad.toml");
    fs::write(&bad_tag, "experiment = \"nope\"\nmodel_file = \"m.toml\"\n").unwrap();
    assert_eq!(
        code(&jcir(
            &["run", "--config", bad_tag.to_str().unwrap()],
            tmp.path()
        )),
        1
    );
    let missing = tmp.path().join("missing.toml");
    fs::write(
        &missing,
        "experiment = \"lyapunov\"\nmodel_file = \"absent.toml\"\n",
    )
    .unwrap();
    assert_eq!(
        code(&jcir(
            &["run", "--config", missing.to_str().unwrap()],
            tmp.path()
        )),
        1
    );
    let unknown_knob = configs().join("lyapunov.toml");
    let o = jcir(
        &[
            "run",
            "--config",
            unknown_knob.to_str().unwrap(),
            "--set",
            "colour=1",
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 1);
    assert_eq!(code(&jcir(&["no-such-command"], tmp.path())), 1);
}

#[test]
fn numerical_failures_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("ergodicity.toml");
    let out = tmp.path().join("run");
    // identical starts leave nothing above the noise floor to fit
    let o = jcir(
        &[
            "ergodicity",
            "--config",
            cfg.to_str().unwrap(),
            "--set",
            "y=[5.0, 0.0]",
            "--set",
            "n_paths=2000",
            "--set",
            "t_grid=[0.5, 1.0, 2.0]",
            "--set",
            "dt=0.02",
            "--out",
            out.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["error"]["kind"], "numerical");
    assert!(manifest["error"]["message"]
        .as_str()
        .unwrap()
        .contains("degenerate fit"));
}

#[test]
fn runs_are_reproducible_across_threads_and_from_the_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("simulate.toml");
    let run = |dir: &str, threads: &str| {
        let out = tmp.path().join(dir);
        let o = jcir(
            &[
                "simulate",
                "--config",
                cfg.to_str().unwrap(),
                "--set",
                "n_paths=3000",
                "--threads",
                threads,
                "--out",
                out.to_str().unwrap(),
            ],
            tmp.path(),
        );
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let a = run("a", "1");
    let b = run("b", "1");
    let c = run("c", "3");
    assert_eq!(csv_files(&a), csv_files(&b));
    assert_eq!(csv_files(&a), csv_files(&c));
    assert_eq!(
        fs::read(a.join("report.json")).unwrap(),
        fs::read(c.join("report.json")).unwrap()
    );
    assert_eq!(csv_files(&a).len(), 3);

    let replay = tmp.path().join("replay");
    let manifest = a.join("manifest.json");
    let o = jcir(
        &[
            "run",
            "--config",
            manifest.to_str().unwrap(),
            "--out",
            replay.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 0);
    assert_eq!(csv_files(&a), csv_files(&replay));
    assert_eq!(
        fs::read(a.join("resolved_config.toml")).unwrap(),
        fs::read(replay.join("resolved_config.toml")).unwrap()
    );
}

#[test]
fn terminal_dump_has_a_header_and_all_states() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("simulate.toml");
    let out = tmp.path().join("run");
    let o = jcir(
        &[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--set",
            "n_paths=100",
            "--set",
            "dump_terminal=true",
            "--set",
            "char_probes=[]",
            "--out",
            out.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 0);
    let bytes = fs::read(out.join("terminal.bin")).unwrap();
    assert_eq!(&bytes[..8], b"JCIRBIN1");
    let word = |i: usize| u64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().unwrap());
    assert_eq!((word(0), word(1), word(2)), (2, 100, 2024));
    assert_eq!(bytes.len(), 32 + 8 * 2 * 100);
    let first = f64::from_le_bytes(bytes[32..40].try_into().unwrap());
    assert!(first >= 0.0 && first.is_finite());
    assert!(!out.join("char.csv").exists());
}

#[test]
fn riccati_check_and_plot_data() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("riccati_check.toml");
    let out = tmp.path().join("run");
    let o = jcir(
        &[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 0);
    let report = read_json(&out.join("report.json"));
    assert!(report["closed_form_max_rel_err"].as_f64().unwrap() <= 1e-8);

    let plot = tmp.path().join("plot.csv");
    let o = jcir(
        &[
            "plot-data",
            out.join("closed_form.csv").to_str().unwrap(),
            "-o",
            plot.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 0);
    let text = fs::read_to_string(&plot).unwrap();
    assert!(text.starts_with("series,x,y,lo,hi\npsi_ode,0,-1,,\npsi_closed,0,-1,,\n"));
    let o = jcir(
        &["plot-data", out.join("trajectory.csv").to_str().unwrap()],
        tmp.path(),
    );
    assert_eq!(code(&o), 1);
}
