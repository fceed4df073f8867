//! Black-box tests of the `aoi` binary.

use std::path::Path;
use std::process::{Command, Output};

fn aoi(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aoi"))
        .args(args)
        .env("AOI_OUTPUT_DIR", out)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn summary(dir: &Path) -> toml::Table {
    toml::from_str(&std::fs::read_to_string(dir.join("summary.toml")).unwrap()).unwrap()
}

#[test]
fn run_writes_csvs_with_one_row_per_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let o = aoi(
        &[
            "run",
            "--preset",
            "fig2",
            "--horizon",
            "1000",
            "--rounds",
            "4",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let regret = std::fs::read_to_string(dir.path().join("regret.csv")).unwrap();
    let mut lines = regret.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header[0], "t");
    assert_eq!(header.len(), 1 + 2 * 5);
    assert_eq!(header[1], "suplinucb-approx_regret_mean");
    assert_eq!(header[10], "adts_regret_stderr");
    let rows: Vec<&str> = lines.collect();
    assert!(rows.len() >= 40 && rows.len() <= 60, "{}", rows.len());
    assert!(rows.last().unwrap().starts_with("1000,"));
    for row in &rows {
        assert_eq!(row.split(',').count(), header.len());
    }
    for name in ["kcount.csv", "aoi.csv", "summary.toml"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let s = summary(dir.path());
    assert_eq!(s["run"]["rounds"].as_integer(), Some(4));
    assert_eq!(s["run"]["model"].as_str(), Some("table1"));
}

#[test]
fn fig4_and_fig5_presets() {
    let dir = tempfile::tempdir().unwrap();
    let o = aoi(
        &[
            "run",
            "--preset",
            "fig4",
            "--horizon",
            "300",
            "--rounds",
            "2",
            "--policies",
            "linucb",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        summary(dir.path())["run"]["model"].as_str(),
        Some("nonlinear_snr")
    );

    let o = aoi(
        &[
            "run",
            "--preset",
            "fig5",
            "--horizon",
            "300",
            "--rounds",
            "2",
            "--policies",
            "aducb",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let s = summary(dir.path());
    assert_eq!(s["run"]["num_pairs"].as_integer(), Some(3));
    assert_eq!(s["run"]["model"].as_str(), Some("table1"));
    let kcount = std::fs::read_to_string(dir.path().join("kcount.csv")).unwrap();
    assert!(kcount.starts_with("t,aducb_k_mean,aducb_k_stderr,aducb_case1_mean"));
}

#[test]
fn desk_scale_is_the_default() {
    let dir = tempfile::tempdir().unwrap();
    let o = aoi(
        &[
            "run",
            "--preset",
            "fig2",
            "--rounds",
            "1",
            "--policies",
            "random",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        summary(dir.path())["run"]["horizon"].as_integer(),
        Some(10_000)
    );
}

#[test]
fn config_file_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(
        &cfg,
        "preset = \"fig2\"\nhorizon = 200\nrounds = 2\nchannel_policies = [\"lints\"]\n[params]\nv = 0.25\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = aoi(
        &[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(summary(&out)["run"]["v"].as_float(), Some(0.25));

    std::fs::write(&cfg, "horizon = 200\nhorizn = 3\n").unwrap();
    let o = aoi(&["run", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("horizn"), "{}", stderr(&o));

    let o = aoi(&["run", "--pairs", "6", "--horizon", "10"], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("num_pairs"), "{}", stderr(&o));

    let o = aoi(&["run", "--policies", "", "--horizon", "10"], dir.path());
    assert!(!o.status.success());
}

#[test]
fn verify_passes_by_default() {
    let dir = tempfile::tempdir().unwrap();
    let o = aoi(&["verify", "--horizon", "5000"], dir.path());
    let text = stdout(&o);
    assert!(o.status.success(), "{text}{}", stderr(&o));
    assert_eq!(
        text.lines().filter(|l| l.starts_with("PASS")).count(),
        7,
        "{text}"
    );
}

#[test]
fn verify_detects_injected_fault() {
    let dir = tempfile::tempdir().unwrap();
    let o = aoi(
        &[
            "verify",
            "--check",
            "projection",
            "--inject-fault",
            "skip-clamp",
        ],
        dir.path(),
    );
    assert!(!o.status.success());
    assert!(stdout(&o).contains("FAIL projection"), "{}", stdout(&o));
}

#[test]
fn verify_check_filter() {
    let dir = tempfile::tempdir().unwrap();
    let o = aoi(
        &[
            "verify",
            "--check",
            "coupling",
            "--rounds",
            "10",
            "--horizon",
            "10000",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 1, "{text}");
    assert!(text.starts_with("PASS coupling"));
    assert!(text.contains("10 rounds x 10000 slots"));
}

#[test]
fn sweep_over_thompson_scale() {
    let dir = tempfile::tempdir().unwrap();
    let o = aoi(
        &[
            "sweep",
            "--param",
            "v",
            "--values",
            "0.25,0.5,1",
            "--horizon",
            "200",
            "--rounds",
            "2",
            "--policies",
            "lints",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let sweep = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(
        sweep.lines().next(),
        Some("v,lints_regret_mean,lints_regret_stderr,lints_k_mean")
    );
    assert_eq!(sweep.lines().count(), 4);
    for v in ["0.25", "0.5", "1"] {
        assert!(dir
            .path()
            .join(format!("v={v}"))
            .join("regret.csv")
            .exists());
    }
    let o = aoi(&["sweep", "--param", "gamma", "--values", "1"], dir.path());
    assert!(!o.status.success());
}

#[test]
fn traces_are_dumped_on_request() {
    let dir = tempfile::tempdir().unwrap();
    let o = aoi(
        &[
            "run",
            "--horizon",
            "50",
            "--rounds",
            "2",
            "--policies",
            "linucb",
            "--dump-traces",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("traces/round_00001.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 50);
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first["round"], 1);
    assert_eq!(first["t"], 1);
    assert_eq!(first["policies"][0]["policy"], "linucb");
    assert_eq!(first["arrivals"].as_array().unwrap().len(), 20);
}
