use std::path::{Path, PathBuf};

use rfens_cli::corpus::*;
use tempfile::TempDir;

fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

fn record(name: &str) -> GoldenRecord {
    load_corpus(&corpus_dir()).unwrap().into_iter().map(|(_, r)| r).find(|r| r.name == name).unwrap()
}

#[test]
fn untouched_corpus_passes() {
    let reports = regenerate_goldens(&corpus_dir(), false, 1).unwrap();
    assert!(reports.len() >= 10);
    for r in &reports {
        assert!(r.passed, "{}: {}", r.name, r.message);
    }
}

#[test]
fn every_record_has_a_current_hash_and_provenance() {
    for (path, rec) in load_corpus(&corpus_dir()).unwrap() {
        assert_eq!(rec.config_hash, config_hash(&rec.check), "{}", path.display());
        assert!(!rec.provenance.source.is_empty());
        assert_eq!(path.file_stem().unwrap().to_str().unwrap(), rec.name);
        match rec.check {
            Check::MonteCarlo { .. } => assert_eq!(rec.provenance.kind, ProvenanceKind::Oracle),
            Check::SweepProperty { .. } => assert_eq!(rec.provenance.kind, ProvenanceKind::PublishedCurve),
            Check::FixedPoint { .. } => {}
        }
    }
}

#[test]
fn zero_tolerance_monte_carlo_record_fails() {
    let mut rec = record("mc_avg_sign_k3");
    rec.tolerance = Tolerance { abs: 0.0, rel: 0.0 };
    let (report, _) = check_record(&rec, false);
    assert!(!report.passed);
    assert!(report.max_deviation > 0.0);
}

#[test]
fn perturbed_fixed_point_value_fails() {
    let mut rec = record("ridge_finite");
    if let Check::FixedPoint { values, .. } = &mut rec.check {
        *values.get_mut("q0").unwrap() *= 1.0 + 1e-4;
    }
    let (report, fresh) = check_record(&rec, false);
    assert!(!report.passed);
    assert!(report.message.contains("q0"), "{}", report.message);
    assert!(fresh.is_some());
}

#[test]
fn edited_configuration_is_flagged_as_stale() {
    let mut rec = record("ridge_finite");
    if let Check::FixedPoint { model, .. } = &mut rec.check {
        model.lambda = 0.2;
    }
    let (report, _) = check_record(&rec, false);
    assert!(!report.passed);
    assert!(report.message.contains("hash"), "{}", report.message);
}

#[test]
fn unknown_value_key_fails_the_record() {
    let mut rec = record("ridge_finite");
    if let Check::FixedPoint { values, .. } = &mut rec.check {
        values.insert("observables.nonsense".into(), 1.0);
    }
    rec.config_hash = config_hash(&rec.check);
    let (report, _) = check_record(&rec, false);
    assert!(!report.passed);
    assert!(report.message.contains("nonsense"));
}

#[test]
fn write_mode_refreshes_values_and_hashes() {
    let dir = TempDir::new().unwrap();
    let src = corpus_dir().join("ridge_kernel.json");
    let dest = dir.path().join("ridge_kernel.json");
    let mut rec: GoldenRecord = serde_json::from_str(&std::fs::read_to_string(&src).unwrap()).unwrap();
    let original = rec.clone();
    if let Check::FixedPoint { values, .. } = &mut rec.check {
        values.values_mut().for_each(|v| *v = 0.0);
    }
    rec.config_hash = "stale".into();
    std::fs::write(&dest, serde_json::to_string_pretty(&rec).unwrap()).unwrap();

    let before = regenerate_goldens(dir.path(), false, 1).unwrap();
    assert!(!before[0].passed);
    let _ = regenerate_goldens(dir.path(), true, 1).unwrap();
    let after = regenerate_goldens(dir.path(), false, 1).unwrap();
    assert!(after[0].passed, "{}", after[0].message);
    let rewritten: GoldenRecord = serde_json::from_str(&std::fs::read_to_string(&dest).unwrap()).unwrap();
    assert_eq!(rewritten.config_hash, original.config_hash);
    assert_eq!(rewritten.check, original.check);
}

#[test]
fn sweep_property_records_detect_violations() {
    let mut rec = record("sweep_ridge_peak");
    if let Check::SweepProperty { property, .. } = &mut rec.check {
        *property = Property::MaximumAt { column: "eps_g_k1".into(), at: 2.0 };
    }
    rec.config_hash = config_hash(&rec.check);
    let (report, _) = check_record(&rec, false);
    assert!(!report.passed, "{}", report.message);
}

#[test]
fn tolerance_combines_absolute_and_relative_parts() {
    let t = Tolerance { abs: 1e-3, rel: 1e-2 };
    assert!(t.accepts(1.0, 1.011 - 1e-9));
    assert!(!t.accepts(1.0, 1.0115));
    assert!(Tolerance { abs: 0.0, rel: 0.0 }.accepts(0.5, 0.5));
}
