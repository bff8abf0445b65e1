use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use markov_rsm::eval::{run_grs_bench4, run_resi_test, MeasureConfig, ModelRecord, Target};
use markov_rsm::io::{report_json, EvalManifest, ProtocolId, ProtocolSpec};
use markov_rsm::kernels::RepMatrix;
use markov_rsm::measures::MeasureId;
use markov_rsm::Error;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

const TOL: f64 = 1e-12;

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/resi3")
}

fn oracle() -> Value {
    let text = std::fs::read_to_string(fixture_dir().join("oracle.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn manifest() -> EvalManifest {
    let text = std::fs::read_to_string(fixture_dir().join("manifest.json")).unwrap();
    EvalManifest::from_json(&text).unwrap()
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect()
}

fn assert_close(got: &[f64], want: &[f64], what: &str) {
    assert_eq!(got.len(), want.len(), "{what}");
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() <= TOL, "{what}: {g} vs {w}");
    }
}

fn run_variant(measure: &str, target: &str) {
    let o = oracle();
    let mut m = manifest();
    match measure {
        "cka" => {}
        "ad_cka" => {
            m.measure = MeasureConfig::new(MeasureId::AdCka);
            m.measure.kernel = Some("linear".into());
            m.measure.layer_indices = Some(vec![0, 1]);
        }
        _ => unreachable!(),
    }
    m.protocol = match target {
        "acc" => ProtocolSpec {
            id: ProtocolId::ResiTest1,
            target: None,
        },
        "jsd" => ProtocolSpec {
            id: ProtocolId::ResiTest2,
            target: None,
        },
        _ => ProtocolSpec {
            id: ProtocolId::ResiTest2,
            target: Some(Target::Disagreement),
        },
    };
    let report = m.run(&fixture_dir()).unwrap();
    let pairs: Vec<(String, String)> = report
        .pairs
        .iter()
        .map(|p| (p.model_a.clone(), p.model_b.clone()))
        .collect();
    let want_pairs: Vec<(String, String)> = o["pairs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| (p[0].as_str().unwrap().into(), p[1].as_str().unwrap().into()))
        .collect();
    assert_eq!(pairs, want_pairs);
    let scores: Vec<f64> = report.pairs.iter().map(|p| p.score).collect();
    let deltas: Vec<f64> = report.pairs.iter().map(|p| p.delta).collect();
    assert_close(&scores, &floats(&o["scores"][measure]), "scores");
    assert_close(&deltas, &floats(&o["deltas"][target]), "deltas");
    let key = format!("{measure}/{target}");
    let rho = o["resi"][&key]["spearman_rho"].as_f64().unwrap();
    let tau = o["resi"][&key]["kendall_tau"].as_f64().unwrap();
    assert!((report.spearman_rho - rho).abs() <= TOL, "{key} rho");
    assert!(
        (report.kendall_tau.unwrap() - tau).abs() <= TOL,
        "{key} tau"
    );
    assert_eq!(report.pair_count, 3);
}

#[test]
fn fixture_cka_matches_oracle_for_every_target() {
    for target in ["acc", "jsd", "disagreement"] {
        run_variant("cka", target);
    }
}

#[test]
fn fixture_ad_cka_matches_oracle_for_every_target() {
    for target in ["acc", "jsd", "disagreement"] {
        run_variant("ad_cka", target);
    }
}

#[test]
fn fixture_grs_matches_oracle() {
    let o = &oracle()["grs_cka"];
    let mut m = manifest();
    m.protocol = ProtocolSpec {
        id: ProtocolId::GrsBench4,
        target: None,
    };
    let report = m.run(&fixture_dir()).unwrap();
    assert_eq!(
        report.reference_model.as_deref(),
        o["reference_model"].as_str()
    );
    let dis: Vec<f64> = report
        .pairs
        .iter()
        .map(|p| p.dissimilarity.unwrap())
        .collect();
    let delta: Vec<f64> = report.pairs.iter().map(|p| p.delta).collect();
    assert_close(&dis, &floats(&o["dissimilarity"]), "dissimilarity");
    assert_close(&delta, &floats(&o["delta"]), "delta");
    assert!((report.spearman_rho - o["spearman_rho"].as_f64().unwrap()).abs() <= TOL);
    assert!((report.kendall_tau.unwrap() - o["kendall_tau"].as_f64().unwrap()).abs() <= TOL);
    assert_eq!(report.pair_count, 2);
}

#[test]
fn fixture_report_is_deterministic() {
    let a = report_json(&manifest().run(&fixture_dir()).unwrap());
    let b = report_json(&manifest().run(&fixture_dir()).unwrap());
    assert_eq!(a, b);
}

fn random_model(rng: &mut ChaCha8Rng, id: &str, n: usize, labels: &[usize]) -> ModelRecord {
    let mut layers = BTreeMap::new();
    for k in 0..3 {
        let rep = Array2::from_shape_fn((n, 4), |_| rng.random_range(-1.0..1.0));
        layers.insert(k, RepMatrix::new(rep).unwrap());
    }
    let mut outputs = Array2::zeros((n, 2));
    for mut row in outputs.rows_mut() {
        row[0] = rng.random_range(0.05..0.95);
        row[1] = 1.0 - row[0];
    }
    ModelRecord::new(id, layers, outputs, labels.to_vec()).unwrap()
}

fn family(seed: u64, n_models: usize) -> Vec<ModelRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 12;
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    (0..n_models)
        .map(|k| random_model(&mut rng, &format!("m{k}"), n, &labels))
        .collect()
}

#[test]
fn resi_is_invariant_under_model_order() {
    let models = family(3, 5);
    let mut reversed = models.clone();
    reversed.reverse();
    reversed.swap(0, 2);
    for id in [MeasureId::Cka, MeasureId::Distcorr, MeasureId::AdDistcorr] {
        let cfg = MeasureConfig::new(id);
        for target in [Target::Acc, Target::Jsd, Target::Disagreement] {
            let a = run_resi_test(&models, &cfg, target);
            let b = run_resi_test(&reversed, &cfg, target);
            match (a, b) {
                (Ok(a), Ok(b)) => {
                    assert_eq!(a.pairs.len(), 10);
                    for (x, y) in a.pairs.iter().zip(&b.pairs) {
                        assert_eq!((&x.model_a, &x.model_b), (&y.model_a, &y.model_b));
                        assert!((x.score - y.score).abs() <= TOL);
                    }
                    assert!((a.spearman_rho - b.spearman_rho).abs() <= TOL);
                }
                (Err(Error::ZeroVariance(_)), Err(Error::ZeroVariance(_))) => {}
                (a, b) => panic!("mismatch: {a:?} vs {b:?}"),
            }
        }
    }
}

#[test]
fn markov_route_reports_match_direct_reports() {
    let models = family(11, 4);
    for (direct, markov) in [
        (MeasureId::Cka, MeasureId::CkaViaMarkov),
        (MeasureId::Distcorr, MeasureId::DistcorrViaMarkov),
    ] {
        let a = run_resi_test(&models, &MeasureConfig::new(direct), Target::Jsd).unwrap();
        let b = run_resi_test(&models, &MeasureConfig::new(markov), Target::Jsd).unwrap();
        for (x, y) in a.pairs.iter().zip(&b.pairs) {
            assert!(
                (x.score - y.score).abs() <= 1e-10,
                "{direct}: {} vs {}",
                x.score,
                y.score
            );
        }
        assert!((a.spearman_rho - b.spearman_rho).abs() <= 1e-10);
    }
}

#[test]
fn identical_models_have_zero_variance() {
    let models = family(5, 1);
    let clones: Vec<ModelRecord> = (0..3)
        .map(|k| {
            let mut m = models[0].clone();
            m.model_id = format!("copy{k}");
            m
        })
        .collect();
    let err = run_resi_test(&clones, &MeasureConfig::new(MeasureId::Cka), Target::Acc).unwrap_err();
    assert!(matches!(err, Error::ZeroVariance(_)), "{err:?}");
}

/// Models whose last layer is the reference layer plus growing noise and whose
/// OOD accuracy drops with the noise level.
fn concordant_family(reverse_accuracy: bool) -> Vec<ModelRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let n = 16;
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let base = Array2::from_shape_fn((n, 5), |_| rng.random_range(-1.0..1.0));
    let noise = Array2::from_shape_fn((n, 5), |_| rng.random_range(-1.0..1.0));
    let outputs = Array2::from_shape_fn((n, 2), |(i, j)| if (i % 2) == j { 0.8 } else { 0.2 });
    (0..4)
        .map(|k| {
            let rep = &base + &(&noise * (0.5 * k as f64));
            let mut layers = BTreeMap::new();
            layers.insert(0, RepMatrix::new(rep).unwrap());
            let ood = if reverse_accuracy && k > 0 {
                0.5 + 0.1 * k as f64
            } else {
                0.9 - 0.1 * k as f64
            };
            ModelRecord::new(format!("net{k}"), layers, outputs.clone(), labels.clone())
                .unwrap()
                .with_ood_accuracy(Some(ood))
        })
        .collect()
}

#[test]
fn grs_concordant_family_is_perfectly_ranked() {
    let report = run_grs_bench4(
        &concordant_family(false),
        &MeasureConfig::new(MeasureId::Cka),
    )
    .unwrap();
    assert_eq!(report.reference_model.as_deref(), Some("net0"));
    assert_eq!(report.pair_count, 3);
    assert_eq!(report.spearman_rho, 1.0);
    assert_eq!(report.kendall_tau, Some(1.0));
}

#[test]
fn grs_reversed_family_is_anti_ranked() {
    // net0 keeps the best OOD accuracy; the others improve with distance from it
    let models = concordant_family(true);
    let report = run_grs_bench4(&models, &MeasureConfig::new(MeasureId::Cka)).unwrap();
    assert_eq!(report.reference_model.as_deref(), Some("net0"));
    let mut models = models;
    models[0].ood_accuracy = Some(0.95);
    let report = run_grs_bench4(&models, &MeasureConfig::new(MeasureId::Cka)).unwrap();
    assert_eq!(report.spearman_rho, -1.0);
    assert_eq!(report.kendall_tau, Some(-1.0));
}

#[test]
fn grs_ties_pick_smallest_id() {
    let mut models = concordant_family(false);
    models[2].ood_accuracy = Some(0.9);
    let report = run_grs_bench4(&models, &MeasureConfig::new(MeasureId::Cka)).unwrap();
    assert_eq!(report.reference_model.as_deref(), Some("net0"));
}

#[test]
fn five_model_family_is_self_consistent() {
    let models = family(17, 5);
    let report = run_resi_test(&models, &MeasureConfig::new(MeasureId::Cka), Target::Jsd).unwrap();
    assert_eq!(report.pair_count, 10);
    let (xs, ys) = report.correlated_columns();
    let rho = markov_rsm::eval::spearman(&xs, &ys).unwrap();
    assert_eq!(rho, report.spearman_rho);
    assert!((-1.0..=1.0).contains(&report.spearman_rho));
}

#[test]
fn missing_layer_is_an_ingestion_error() {
    let mut m = manifest();
    m.measure.layer_indices = Some(vec![4]);
    let err = m.validate().unwrap_err();
    assert!(matches!(err, Error::Ingestion { .. }), "{err:?}");
}
