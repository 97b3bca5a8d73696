use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lungstack_cli::exit;
use lungstack_cli::manifest::RunManifest;

const CHAIN: [&str; 6] = ["ingest", "preprocess", "embed", "train-base", "stack", "aggregate"];

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_lungstack"));
    c.env_remove("RUST_LOG");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("spawn lungstack")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = run(dir, args);
    assert!(
        o.status.success(),
        "{args:?} failed ({:?}): {}",
        o.status.code(),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

const CONFIG: &str = r#"
seed = 5
data_root = "data"
targets = ["screening", "sound_pattern", "disease_group"]
[schedule]
preset = "fast"
[stacking]
trials = 2
[bootstrap]
replicates = 100
seed = 3
[report]
clips = 2
n_mels = 32
"#;

fn setup(patients: usize) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), CONFIG).unwrap();
    ok(dir.path(), &["synth", "--out", "data", "--patients", &patients.to_string(), "--seed", "5"]);
    dir
}

fn chain(dir: &Path, run_dir: &str) {
    for c in CHAIN {
        ok(dir, &[c, "-c", "run.toml", "--run-dir", run_dir]);
    }
    ok(dir, &["evaluate", "-c", "run.toml", "--run-dir", run_dir, "--level", "event"]);
    ok(dir, &["evaluate", "-c", "run.toml", "--run-dir", run_dir, "--level", "patient"]);
    ok(dir, &["report", "-c", "run.toml", "--run-dir", run_dir]);
}

fn manifest(dir: &Path, run_dir: &str) -> RunManifest {
    serde_json::from_slice(&fs::read(dir.join(run_dir).join("manifest.json")).unwrap()).unwrap()
}

/// Output digests per command, from the latest record of each.
fn output_digests(m: &RunManifest) -> BTreeMap<(String, Vec<String>), Vec<(String, String)>> {
    m.stages
        .iter()
        .map(|s| {
            (
                (s.command.clone(), s.args.clone()),
                s.outputs.iter().map(|o| (o.path.clone(), o.sha256.clone())).collect(),
            )
        })
        .collect()
}

#[test]
fn synthetic_chain_is_complete_idempotent_and_replayable() {
    let tmp = setup(40);
    let dir = tmp.path();
    chain(dir, "a");

    let report = dir.join("a/report");
    for f in [
        "cohort.csv",
        "cohort-tests.csv",
        "index.json",
        "summary-event-meta-sound_pattern.csv",
        "per-class-event-base-screening.csv",
        "per-class-patient-meta-disease_group.csv",
        "confusion-patient-meta-disease_group.csv",
        "roc-event-meta-disease_group.csv",
        "pr-event-meta-disease_group.csv",
        "clips/00/waveform.csv",
        "clips/00/mel.csv",
        "clips/00/probs.csv",
        "clips/01/clip.json",
    ] {
        assert!(report.join(f).is_file(), "missing report/{f}");
    }
    let wave = fs::read_to_string(report.join("clips/00/waveform.csv")).unwrap();
    assert_eq!(wave.lines().count(), 1 + 32_000);
    let preds = fs::read_to_string(dir.join("a/predictions/disease_group.csv")).unwrap();
    let header = preds.lines().next().unwrap();
    assert!(header.starts_with("patient_id,") && header.ends_with(",class,gate_active"), "{header}");
    let oof = fs::read_to_string(dir.join("a/oof.csv")).unwrap();
    assert_eq!(oof.lines().next().unwrap().split(',').count(), 2 + 9);

    // Every input a stage recorded matches what its producer wrote, so no
    // stage rewrote an upstream artifact.
    let m = manifest(dir, "a");
    let mut produced: BTreeMap<String, String> = BTreeMap::new();
    for s in &m.stages {
        for i in &s.inputs {
            if let Some(d) = produced.get(&i.path) {
                assert_eq!(d, &i.sha256, "{} changed before {}", i.path, s.command);
            }
        }
        for o in &s.outputs {
            produced.insert(o.path.clone(), o.sha256.clone());
        }
    }

    let before = m.stages.len();
    for c in CHAIN {
        let out = ok(dir, &[c, "-c", "run.toml", "--run-dir", "a"]);
        assert!(out.contains("up to date"), "{c}: {out}");
    }
    assert_eq!(manifest(dir, "a").stages.len(), before);

    // Replaying the chain into a fresh directory reproduces every artifact.
    chain(dir, "b");
    let (da, db) = (output_digests(&m), output_digests(&manifest(dir, "b")));
    assert_eq!(da.keys().collect::<Vec<_>>(), db.keys().collect::<Vec<_>>());
    for (k, v) in &da {
        assert_eq!(v, &db[k], "{k:?} differs between replays");
    }
}

#[test]
fn patient_bootstrap_evaluation_is_byte_identical() {
    let tmp = setup(40);
    let dir = tmp.path();
    for c in CHAIN {
        ok(dir, &[c, "-c", "run.toml", "--run-dir", "r"]);
    }
    let args = [
        "evaluate", "-c", "run.toml", "--run-dir", "r", "--level", "patient", "--bootstrap", "1000", "--seed", "7",
    ];
    ok(dir, &args);
    let path = dir.join("r/eval/patient-meta-disease_group.json");
    let first = fs::read(&path).unwrap();
    let again = ok(dir, &args);
    assert!(again.contains("up to date"));
    let mut forced: Vec<&str> = args.to_vec();
    forced.push("--force");
    ok(dir, &forced);
    assert_eq!(first, fs::read(&path).unwrap());
    let v: serde_json::Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(v["bootstrap"]["replicates"], 1000);
    assert!(v["accuracy"]["lower"].is_number());
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn failures_map_to_distinct_exit_codes() {
    let tmp = setup(8);
    let dir = tmp.path();

    // Missing upstream artifact names the producing command.
    let o = run(dir, &["preprocess", "-c", "run.toml", "--run-dir", "fresh"]);
    assert_eq!(code(&o), exit::DATA);
    assert!(String::from_utf8_lossy(&o.stderr).contains("lungstack ingest"));

    // Missing mandatory seed.
    fs::write(dir.join("noseed.toml"), "data_root = \"data\"\n").unwrap();
    assert_eq!(code(&run(dir, &["ingest", "-c", "noseed.toml"])), exit::CONFIG);

    // Nonexistent data root.
    fs::write(dir.join("nodata.toml"), "seed = 1\ndata_root = \"missing\"\n").unwrap();
    assert_eq!(code(&run(dir, &["ingest", "-c", "nodata.toml"])), exit::CONFIG);

    // Foundation backend without weights.
    fs::write(dir.join("found.toml"), "seed = 1\ndata_root = \"data\"\nbackend = \"foundation\"\n").unwrap();
    let o = bin()
        .current_dir(dir)
        .env_remove(lungstack_core::encoder::FOUNDATION_ENV)
        .args(["ingest", "-c", "found.toml"])
        .output()
        .unwrap();
    assert_eq!(code(&o), exit::CONFIG);

    // Resuming a run directory under a different config is refused.
    ok(dir, &["ingest", "-c", "run.toml", "--run-dir", "r"]);
    let other = CONFIG.replace("seed = 5", "seed = 6");
    fs::write(dir.join("other.toml"), other).unwrap();
    let o = run(dir, &["preprocess", "-c", "other.toml", "--run-dir", "r"]);
    assert_eq!(code(&o), exit::CONFIG);
    assert!(String::from_utf8_lossy(&o.stderr).contains("config hash"));

    // A held lock blocks a second command.
    fs::write(dir.join("r/.lock"), "1\n").unwrap();
    assert_eq!(code(&run(dir, &["preprocess", "-c", "run.toml", "--run-dir", "r"])), exit::RUNTIME);
    fs::remove_file(dir.join("r/.lock")).unwrap();

    // Corrupt upstream artifact is a data error.
    fs::write(dir.join("r/corpus.json"), "{").unwrap();
    assert_eq!(code(&run(dir, &["preprocess", "-c", "run.toml", "--run-dir", "r"])), exit::DATA);
}

#[test]
fn default_run_dir_is_keyed_by_config_hash() {
    let tmp = setup(8);
    let dir = tmp.path();
    ok(dir, &["ingest", "-c", "run.toml"]);
    let runs: Vec<PathBuf> = fs::read_dir(dir.join("runs"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with("run-"))
        .collect();
    assert_eq!(runs.len(), 1);
    let m: RunManifest = serde_json::from_slice(&fs::read(runs[0].join("manifest.json")).unwrap()).unwrap();
    let name = runs[0].file_name().unwrap().to_string_lossy().to_string();
    assert_eq!(name, format!("run-{}", &m.config_hash[..12]));
    assert_eq!(m.tool_version, env!("CARGO_PKG_VERSION"));
}
