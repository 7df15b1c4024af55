use std::path::Path;

use regime_kit::io::sha256_file;
use regime_kit::pipeline::{run_pipeline, RunConfig};
use regime_kit::synth::SynthConfig;

fn small_config(dir: &Path, out: &str) -> RunConfig {
    let synth = SynthConfig::harmonic_regimes(3, 20, 15, 0.3, 4);
    let synth_path = dir.join("synth.json");
    std::fs::write(&synth_path, serde_json::to_vec(&synth).unwrap()).unwrap();
    RunConfig {
        synth: Some(synth_path),
        out_dir: dir.join(out),
        k_max: 6,
        seeds: 5,
        silhouette_null_perms: 5,
        network_null_perms: 50,
        threshold_sweep: vec![0.7, 0.9],
        income_subsample: true,
        ..RunConfig::default()
    }
}

#[test]
fn run_writes_every_output_with_matching_digests() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "out");
    let m = run_pipeline(&cfg).unwrap();
    assert_eq!(m.status, "ok");
    for name in [
        "labels.csv",
        "k_selection.json",
        "network.json",
        "shocks.csv",
        "variance_decomposition.json",
        "robustness.json",
    ] {
        let digest = m.outputs.get(name).unwrap_or_else(|| panic!("{name} missing from manifest"));
        assert_eq!(&sha256_file(&cfg.out_dir.join(name)).unwrap(), digest);
    }
    assert!(!m.outputs.contains_key("manifest.json"));
    assert!(cfg.out_dir.join("manifest.json").exists());
    assert_eq!(m.summary["k_star"], 3);
}

#[test]
fn repeated_runs_are_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let a = run_pipeline(&small_config(tmp.path(), "a")).unwrap();
    let b = run_pipeline(&small_config(tmp.path(), "b")).unwrap();
    assert_eq!(a.outputs, b.outputs);
}

#[test]
fn failure_leaves_partial_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let panel = tmp.path().join("flat.csv");
    let mut csv = String::from("entity_id,country_code,year,value\n");
    for e in 0..6 {
        for y in 2000..2006 {
            csv.push_str(&format!("e{e},X,{y},100\n"));
        }
    }
    std::fs::write(&panel, csv).unwrap();
    let cfg = RunConfig {
        panel: Some(panel),
        out_dir: tmp.path().join("out"),
        ..RunConfig::default()
    };
    let err = run_pipeline(&cfg).unwrap_err();
    let text = std::fs::read_to_string(cfg.out_dir.join("manifest.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["status"], "failed");
    assert_eq!(v["failed_stage"], err.stage.as_str());
}

#[test]
fn config_rejects_unknown_keys_and_resolves_paths() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("bad.json");
    std::fs::write(&p, r#"{"panel": "x.csv", "k_maximum": 4}"#).unwrap();
    assert!(RunConfig::load(&p).is_err());
    std::fs::write(&p, r#"{"panel": "x.csv", "out_dir": "o"}"#).unwrap();
    let cfg = RunConfig::load(&p).unwrap();
    assert_eq!(cfg.panel.unwrap(), tmp.path().join("x.csv"));
    assert_eq!(cfg.out_dir, tmp.path().join("o"));
}
