use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tfus_core::config::RunConfig;

const SMALL: &[&str] = &[
    "--set",
    "phantom.dims=[61,61,61]",
    "--set",
    "phantom.shell.outer_radius=8",
    "--set",
    "phantom.shell.inner_radius=5",
    "--set",
    "phantom.shell.cortical_thickness=1",
    "--set",
    "pipeline.array.radius_mm=10",
    "--set",
    "pipeline.array.tilt_step_deg=5",
    "--set",
    "pipeline.simulation.n_cycles=8",
    "--set",
    "pipeline.simulation.rms_window_cycles=3",
];

const UNIFORM: &[&str] = &["--set", "phantom.shell.cortical_hu=1500", "--set", "phantom.shell.trabecular_hu=1500"];

fn tfus(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tfus"))
        .current_dir(dir)
        .args(args)
        .args(SMALL)
        .output()
        .unwrap()
}

fn ok(o: &Output) -> String {
    assert!(o.status.success(), "status {:?}\nstderr: {}", o.status, String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn plan_on_uniform_shell() {
    let dir = tempfile::tempdir().unwrap();
    ok(&tfus(dir.path(), &[&["phantom"], UNIFORM].concat()));
    let out = ok(&tfus(dir.path(), &["plan", "--ct", "out/rct.nii"]));
    assert!(out.starts_with("NAE=990 SDR=1.000 "), "{out}");
    assert!(out.contains("tilt=(0, 0)"), "{out}");

    let plan: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("out/plan.json")).unwrap()).unwrap();
    assert_eq!(plan["nae"], 990);
    let csv = fs::read_to_string(dir.path().join("out/elements.csv")).unwrap();
    assert_eq!(csv.lines().count(), 991);
    assert!(dir.path().join("out/manifest-plan.json").exists());
}

#[test]
fn self_comparison_has_zero_deltas() {
    let dir = tempfile::tempdir().unwrap();
    ok(&tfus(dir.path(), &["phantom"]));
    let out = ok(&tfus(dir.path(), &["compare", "--rct", "out/rct.nii", "--sct", "out/rct.nii"]));
    assert!(out.contains("overlap=1.000 deficit=0.0%"), "{out}");

    let s: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("out/summary.json")).unwrap()).unwrap();
    for key in ["mae_skull", "nae_delta", "sdr_delta", "st_delta", "pressure_deficit_pct", "argmax_distance"] {
        assert_eq!(s[key]["mean"], 0.0, "{key}");
    }
    assert_eq!(s["overlap_fraction"]["mean"], 1.0);

    let csv = fs::read_to_string(dir.path().join("out/report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    let rep = ok(&tfus(dir.path(), &["report", "--csv", "out/report.csv", "--out-dir", "rep"]));
    assert!(rep.starts_with("cases=1 overlap=1.000"), "{rep}");
    assert_eq!(
        fs::read(dir.path().join("rep/summary.json")).unwrap(),
        fs::read(dir.path().join("out/summary.json")).unwrap()
    );
}

#[test]
fn missing_input_exits_3_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = tfus(dir.path(), &["plan", "--ct", "no/such/ct.nii"]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("no/such/ct.nii") && err.contains("[load]"), "{err}");
}

#[test]
fn invalid_configuration_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = tfus(dir.path(), &["phantom", "--set", "phantom.shel.outer_radius=3"]);
    assert_eq!(o.status.code(), Some(2));
    let o = tfus(dir.path(), &["phantom", "--set", "pipeline.ray_step_mm=-1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("out/manifest-phantom.json").exists());
    ok(&tfus(dir.path(), &["phantom"]));
    let o = tfus(dir.path(), &["plan", "--ct", "out/rct.nii", "--tilt-x", "11"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("10°"));
}

#[test]
fn dry_run_prints_config_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&tfus(dir.path(), &["--dry-run", "--seed", "42", "phantom"]));
    let cfg: RunConfig = serde_json::from_str(&out).unwrap();
    assert_eq!(cfg.perturbation.rng_seed, 42);
    assert_eq!(cfg.cohort.seed, 42);
    assert_eq!(cfg.phantom.dims, [61, 61, 61]);
    assert!(!dir.path().join("out").exists());
}

#[test]
fn defaults_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&Command::new(env!("CARGO_BIN_EXE_tfus"))
        .args(["config", "print-defaults"])
        .output()
        .unwrap());
    assert_eq!(serde_json::from_str::<RunConfig>(&out).unwrap(), RunConfig::default());
    let path = dir.path().join("defaults.json");
    fs::write(&path, &out).unwrap();
    let again = ok(&Command::new(env!("CARGO_BIN_EXE_tfus"))
        .args(["--dry-run", "--config", path.to_str().unwrap(), "plan", "--ct", "unused.nii"])
        .output()
        .unwrap());
    assert_eq!(again, out);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let names = ["rct.nii", "sct.nii", "skull_mask.vol", "skull_mask.raw", "manifest-phantom.json", "manifest-extract.json"];
    let snapshot = || -> Vec<Vec<u8>> { names.iter().map(|n| fs::read(dir.path().join("out").join(n)).unwrap()).collect() };
    let go = || {
        ok(&tfus(dir.path(), &["phantom", "--seed", "5"]));
        ok(&tfus(dir.path(), &["extract", "--ct", "out/sct.nii", "--threads", "2"]));
    };
    go();
    let first = snapshot();
    go();
    assert_eq!(snapshot(), first);

    let m: serde_json::Value = serde_json::from_slice(&first[5]).unwrap();
    assert_eq!(m["inputs"][0]["path"], "out/sct.nii");
    assert_eq!(m["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    assert_eq!(m["outputs"].as_array().unwrap().len(), 3, "mask header, mask payload, masked CT");
}
