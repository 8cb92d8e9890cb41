use std::path::Path;

use ftcs_core::dataio;
use ftcs_core::pipeline::{run, RunConfig};
use serde_json::{json, Value};

fn schema() -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/run_metadata.schema.json");
    let text = std::fs::read_to_string(&path).expect("schema shipped in docs");
    let schema: Value = serde_json::from_str(&text).expect("schema is JSON");
    jsonschema::validator_for(&schema).expect("schema compiles")
}

fn write_run(dir: &Path, config: Value) -> Value {
    let cfg: RunConfig = serde_json::from_value(config).unwrap();
    run(&cfg).unwrap().write(dir, &cfg).unwrap();
    serde_json::from_str(&std::fs::read_to_string(dir.join(dataio::METADATA)).unwrap()).unwrap()
}

fn errors(v: &jsonschema::Validator, doc: &Value) -> Vec<String> {
    v.iter_errors(doc).map(|e| format!("{} at {}", e, e.instance_path())).collect()
}

#[test]
fn minimal_run_metadata_validates() {
    let dir = tempfile::tempdir().unwrap();
    // One box per side, shifted by a constant velocity: the smallest run with two rows.
    let meta = write_run(
        dir.path(),
        json!({
            "field": {"kind": "constant", "velocity": [0.25, 0.0]},
            "domain": {"lo": [0.0, 0.0], "hi": [2.0, 1.0], "counts": [2, 1], "periodic": [true, false]},
            "t": 0.0, "tau": 1.0, "step": 0.25, "samples_per_box": 4
        }),
    );
    let v = schema();
    assert_eq!(errors(&v, &meta), Vec::<String>::new());
    assert_eq!(meta["m"], 2);
    for name in meta["files"].as_array().unwrap() {
        assert!(dir.path().join(name.as_str().unwrap()).is_file(), "{name}");
    }
}

#[test]
fn bickley_run_metadata_validates_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let meta = write_run(
        dir.path(),
        json!({
            "field": {"kind": "bickley"},
            "domain": {"lo": [0.0, -2.5], "hi": [20.015086796020572, 2.5], "counts": [20, 8]},
            "t": 20.0, "tau": 2.0, "step": 0.1, "samples_per_box": 16,
            "pointwise": {"samples": 2000}
        }),
    );
    assert_eq!(errors(&schema(), &meta), Vec::<String>::new());
    // The echoed config alone reproduces the run.
    let again = tempfile::tempdir().unwrap();
    let replay = write_run(again.path(), meta["config"].clone());
    assert_eq!(replay["sigma2"], meta["sigma2"]);
    assert_eq!(replay["partition"], meta["partition"]);
    assert_eq!(replay["image_grid"], meta["image_grid"]);
}

#[test]
fn schema_rejects_missing_and_mistyped_keys() {
    let dir = tempfile::tempdir().unwrap();
    let meta = write_run(
        dir.path(),
        json!({
            "field": {"kind": "bickley"},
            "domain": {"lo": [0.0, -2.5], "hi": [20.015086796020572, 2.5], "counts": [10, 4]},
            "t": 20.0, "tau": 1.0, "step": 0.1, "samples_per_box": 4
        }),
    );
    let v = schema();
    let mut missing = meta.clone();
    missing.as_object_mut().unwrap().remove("sigma2");
    assert!(!v.is_valid(&missing));
    let mut mistyped = meta.clone();
    mistyped["m"] = json!("28200");
    assert!(!v.is_valid(&mistyped));
    let mut bad_end = meta;
    bad_end["partition"]["search_end"] = json!("sideways");
    assert!(!v.is_valid(&bad_end));
}
