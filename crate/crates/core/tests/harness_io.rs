use maisac_core::harness::{run_experiment, write_bundle, ExperimentConfig, Scheme, SweepAxis};

fn small() -> ExperimentConfig {
    ExperimentConfig { realizations: 2, sweep_values: vec![1.0, 2.0], ..ExperimentConfig::desk() }
}

#[test]
fn experiment_records_every_scheme_and_dominance_holds() {
    let cfg = small();
    let b = run_experiment(&cfg, &Scheme::ALL).unwrap();
    assert!(b.complete);
    assert_eq!(b.records.len(), 2 * 2 * 3);
    assert_eq!(b.aggregates.len(), 2 * 3);
    for v in [1.0, 2.0] {
        for r in 0..2 {
            let get = |s: Scheme| b.records.iter().find(|x| x.sweep_value == v && x.realization == r && x.scheme == s).unwrap().objective;
            let p = get(Scheme::Proposed);
            assert!(p <= get(Scheme::Fixed) + 1e-6 && p <= get(Scheme::Random) + 1e-6);
        }
    }
    assert!(!b.traces.is_empty());
    assert!(!b.beampattern.is_empty());
}

#[test]
fn experiments_are_reproducible() {
    let cfg = ExperimentConfig { realizations: 1, ..small() };
    let a = run_experiment(&cfg, &[Scheme::Fixed, Scheme::Random]).unwrap();
    let b = run_experiment(&cfg, &[Scheme::Fixed, Scheme::Random]).unwrap();
    let strip = |v: &[maisac_core::harness::RealizationRecord]| v.iter().map(|r| (r.objective, r.trajectory.clone())).collect::<Vec<_>>();
    assert_eq!(strip(&a.records), strip(&b.records));
}

#[test]
fn region_size_sweep_changes_the_grid() {
    let cfg = ExperimentConfig { realizations: 1, sweep_axis: SweepAxis::RegionSize, sweep_values: vec![0.4, 0.6], ..ExperimentConfig::desk() };
    let b = run_experiment(&cfg, &[Scheme::Fixed]).unwrap();
    assert_eq!(b.records.len(), 2);
    assert!(b.records.iter().all(|r| r.sweep_value == 0.4 || r.sweep_value == 0.6));
}

#[test]
fn bundle_files_and_manifest_hash() {
    let cfg = ExperimentConfig { realizations: 1, ..small() };
    let b = run_experiment(&cfg, &[Scheme::Fixed]).unwrap();
    let dir = std::env::temp_dir().join(format!("maisac-bundle-{}", std::process::id()));
    write_bundle(&b, &cfg, &[Scheme::Fixed], &dir).unwrap();
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_sha256"].as_str().unwrap(), cfg.hash());
    assert_eq!(manifest["records"].as_u64().unwrap(), b.records.len() as u64);
    let records = std::fs::read_to_string(dir.join("records.csv")).unwrap();
    assert!(records.starts_with("sweep_value,realization,seed,scheme,status,objective,eta,normalized_mismatch"));
    std::fs::remove_dir_all(dir).unwrap();
}
