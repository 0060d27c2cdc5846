use std::path::Path;
use std::process::{Command, Output};

use sandpile_lab::FieldDump;

fn sandpile(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sandpile")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read(dir: &Path, file: &str) -> String {
    std::fs::read_to_string(dir.join(file)).unwrap_or_else(|e| panic!("{file}: {e}"))
}

#[test]
fn point_law_on_two_sites_needs_no_toppling() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = sandpile(&["stabilize", "--d", "1", "--n", "2", "--law", "point", "--mean", "1", "--seed", "1", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let odometer = read(&out, "odometer.csv");
    assert_eq!(odometer, "site,s0,u,s\n0,1.0,0.0,1.0\n1,1.0,0.0,1.0\n");
    let summary: serde_json::Value = serde_json::from_str(&read(&out, "summary.json")).unwrap();
    assert_eq!(summary["passed"], true);
    assert_eq!(summary["summary"]["rounds"], 0);
    // the manifest alone reproduces the run
    let manifest: serde_json::Value = serde_json::from_str(&read(&out, "manifest.json")).unwrap();
    assert_eq!(manifest["config"]["seed"], 1);
    assert_eq!(manifest["config"]["law"]["kind"], "point");
    assert_eq!(manifest["version"], env!("CARGO_PKG_VERSION"));
    // no temporaries survive the atomic writes
    let mut names: Vec<String> =
        std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["manifest.json", "odometer.csv", "odometer.field", "summary.json", "trace.csv"]);
}

#[test]
fn same_config_twice_gives_identical_csv() {
    let args = ["stabilize", "--d", "2", "--n", "8", "--law", "sas", "--alpha", "1.5", "--conserve", "--seed", "9"];
    let a = sandpile(&args);
    let b = sandpile(&args);
    assert!(a.status.success(), "{}", stderr(&a));
    assert!(!a.stdout.is_empty());
    assert_eq!(a.stdout, b.stdout);
    let c = sandpile(&["stabilize", "--d", "2", "--n", "8", "--law", "sas", "--alpha", "1.5", "--conserve", "--seed", "10"]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn parseval_sweep_gap_is_small() {
    let o = sandpile(&["scaling", "sweep", "--d", "1", "--alpha", "2", "--modes", "1:0.5", "--ns", "8,16,32,64", "--seed", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("n,knsum,limit,gap"));
    let last = lines.last().unwrap();
    let gap: f64 = last.split(',').nth(3).unwrap().parse().unwrap();
    assert!(last.starts_with("64,") && gap < 0.02, "{last}");
}

#[test]
fn emitted_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let flags = ["scaling", "mccf", "--law", "pareto", "--alpha", "1.5", "--ns", "8", "--reps", "500", "--seed", "3"];
    let direct = sandpile(&flags);
    let emitted = sandpile(&[&flags[..], &["--emit-config"]].concat());
    assert!(emitted.status.success(), "{}", stderr(&emitted));
    let path = dir.path().join("c.toml");
    std::fs::write(&path, &emitted.stdout).unwrap();
    let replay = sandpile(&["--config", path.to_str().unwrap()]);
    assert!(replay.status.success(), "{}", stderr(&replay));
    assert_eq!(direct.stdout, replay.stdout);
    // --seed overrides the file
    let other = sandpile(&["--config", path.to_str().unwrap(), "--seed", "4"]);
    assert_ne!(direct.stdout, other.stdout);
}

#[test]
fn json_config_files_work_too() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    std::fs::write(
        &path,
        r#"{"command": "nu", "seed": 1, "d": 3, "radii": [2, 4], "probe": {"alpha": 1.3}, "format": "json"}"#,
    )
    .unwrap();
    let o = sandpile(&["run", "--config", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let doc: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(doc["tables"]["nu"].as_array().unwrap().len(), 2);
    assert_eq!(doc["manifest"]["config"]["probe"]["alpha"], 1.3);
}

#[test]
fn bad_input_is_a_usage_error_naming_the_field() {
    let o = sandpile(&["sample", "--law", "pareto", "--alpha", "2.5", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`law`"), "{}", stderr(&o));

    let o = sandpile(&["sample", "--law", "sas", "--alpha", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`seed`"), "{}", stderr(&o));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    std::fs::write(&path, "command = \"nested\"\nseed = 1\nradii = [8, 4]\n").unwrap();
    let o = sandpile(&["--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`radii`"), "{}", stderr(&o));
}

#[test]
fn sample_and_cfprobe_outputs() {
    let o = sandpile(&["sample", "--law", "sas", "--alpha", "1.5", "--scale", "1", "--count", "7", "--seed", "2"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let values: Vec<f64> = text.lines().skip(1).map(|l| l.parse().unwrap()).collect();
    assert_eq!(values.len(), 7);

    let o = sandpile(&["cfprobe", "--law", "sas", "--alpha", "1.5", "--count", "20000", "--seed", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("theta,re,im,stderr\n"));
}

#[test]
fn green_dumps_parse_back() {
    let o = sandpile(&["green", "--torus", "4", "2", "1,0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let dump = FieldDump::from_bytes("green", &o.stdout).unwrap();
    assert_eq!((dump.header.d, dump.header.n), (2, 4));
    assert!(dump.values.iter().sum::<f64>().abs() < 1e-12);
    // the source site carries the largest value
    let max = dump.values.iter().copied().fold(f64::MIN, f64::max);
    assert_eq!(dump.values[4], max);

    let o = sandpile(&["green", "--box", "1", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let dump = FieldDump::from_bytes("green", &o.stdout).unwrap();
    assert_eq!(dump.header.domain, "box");
    // three sites killed outside: visits are (1, 2, 1)
    assert_eq!(dump.values.len(), 3);
    for (v, e) in dump.values.iter().zip([1.0, 2.0, 1.0]) {
        assert!((v - e).abs() < 1e-12);
    }
}

#[test]
fn selftest_passes_and_names_a_corrupted_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let first = sandpile(&["selftest", "--out", a.to_str().unwrap()]);
    assert!(first.status.success(), "{}", stderr(&first));
    let second = sandpile(&["selftest", "--out", b.to_str().unwrap()]);
    assert!(second.status.success());
    assert_eq!(read(&a, "selftest.csv"), read(&b, "selftest.csv"));

    let broken = sandpile(&["selftest", "--set", "odometer=1e-15"]);
    assert_eq!(broken.status.code(), Some(1));
    assert!(stderr(&broken).contains("check failed: odometer-cross-check"), "{}", stderr(&broken));
}
