use std::collections::BTreeMap;

use dpsynth_core::data::{Column, ColumnSchema, DatasetTable, Value};
use dpsynth_core::persist::{self, FORMAT_VERSION, HEADER_FIELDS};
use dpsynth_core::pipeline::{fit, synthesize, FitOutput, HyperParams};
use dpsynth_core::privacy::{compose, PrivacySpec};
use dpsynth_core::rng::seeded;
use dpsynth_core::trainer::TrainConfig;
use dpsynth_core::Error;
use rand::Rng as _;

fn table(n: usize, seed: u64) -> DatasetTable {
    let schema = ColumnSchema::new(vec![
        Column::Continuous {
            name: "income".into(),
            min: 0.0,
            max: 10.0,
        },
        Column::Continuous {
            name: "age".into(),
            min: 18.0,
            max: 90.0,
        },
        Column::Categorical {
            name: "region".into(),
            categories: vec!["n".into(), "s".into(), "e".into()],
        },
        Column::Label {
            name: "class".into(),
            classes: vec!["A".into(), "B".into()],
        },
    ])
    .unwrap();
    let mut rng = seeded(seed);
    let records: Vec<Vec<Value>> = (0..n)
        .map(|_| {
            let b = rng.random::<f64>() < 0.3;
            let shift = if b { 4.0 } else { 0.0 };
            vec![
                Value::Num((2.0 + shift + rng.random::<f64>() * 3.0).min(10.0)),
                Value::Num(20.0 + rng.random::<f64>() * 60.0),
                Value::Cat(rng.random_range(0..3)),
                Value::Cat(usize::from(b)),
            ]
        })
        .collect();
    DatasetTable::from_records(schema, &records).unwrap().0
}

fn hyper() -> HyperParams {
    HyperParams {
        d_prime: 3,
        components: 2,
        em_iterations: 5,
        hidden: 8,
        train: TrainConfig {
            batch_size: 20,
            epochs: 2,
            ..TrainConfig::default()
        },
        ..HyperParams::default()
    }
}

fn fitted(eps: f64, seed: u64) -> FitOutput {
    fit(&table(400, 1), &PrivacySpec::new(eps, 1e-5), &hyper(), seed).unwrap()
}

#[test]
fn fit_spends_at_most_target_and_reports_parts() {
    for eps in [1.0, 2.0, 4.0] {
        let out = fitted(eps, 3);
        let b = &out.model.budget;
        assert!(b.epsilon <= eps, "{} > {eps}", b.epsilon);
        assert_eq!(b.parts.len(), 3);
        let total = compose(&b.parts.iter().map(|p| p.curve.clone()).collect::<Vec<_>>()).unwrap();
        assert_eq!(total, b.total);
        assert_eq!(out.em_trace.log_likelihood.len(), 5);
        assert_eq!(out.train_log.steps, 2 * (400 / 20));
    }
}

#[test]
fn small_budgets_hit_the_order_grid_floor() {
    // With α ≤ 128 no noise scale brings the PCA share below ln(1/δ)/127.
    let p = PrivacySpec::new(0.5, 1e-5);
    assert!(matches!(
        fit(&table(400, 1), &p, &hyper(), 0),
        Err(Error::InfeasibleBudget(_))
    ));
}

#[test]
fn fit_is_deterministic() {
    let a = fitted(1.0, 5);
    let b = fitted(1.0, 5);
    assert_eq!(a.model, b.model);
    assert_ne!(a.model, fitted(1.0, 6).model);
}

#[test]
fn synthesis_respects_schema_and_ratio() {
    let m = fitted(2.0, 7).model;
    let t = synthesize(&m, 300, None, false, &mut seeded(1)).unwrap();
    assert_eq!(t.n_rows(), 300);
    assert_eq!(t.schema(), &m.schema);
    for r in t.records() {
        if let (Value::Num(inc), Value::Num(age)) = (r[0], r[1]) {
            assert!((0.0..=10.0).contains(&inc) && (18.0..=90.0).contains(&age));
        } else {
            panic!("continuous columns decode to numbers");
        }
    }
    let all_a: BTreeMap<String, f64> = [("A".to_string(), 1.0)].into();
    if let Ok(t) = synthesize(&m, 50, Some(&all_a), false, &mut seeded(2)) {
        assert!(t.labels().unwrap().iter().all(|&l| l == 0));
    }
    let half: BTreeMap<String, f64> = [("A".to_string(), 0.5), ("B".to_string(), 0.5)].into();
    match synthesize(&m, 40, Some(&half), true, &mut seeded(3)) {
        Ok(t) => {
            let f = t.label_frequencies().unwrap();
            assert_eq!(f["A"], 0.5);
            assert_eq!(f["B"], 0.5);
        }
        Err(e) => assert!(matches!(e, Error::QuotaUnreachable { .. }), "{e}"),
    }
}

#[test]
fn synthesis_rejects_bad_requests() {
    let m = fitted(1.0, 8).model;
    assert!(synthesize(&m, 0, None, false, &mut seeded(0)).is_err());
    let unknown: BTreeMap<String, f64> = [("C".to_string(), 1.0)].into();
    assert!(synthesize(&m, 5, Some(&unknown), false, &mut seeded(0)).is_err());
    let bad_sum: BTreeMap<String, f64> = [("A".to_string(), 0.7)].into();
    assert!(synthesize(&m, 5, Some(&bad_sum), false, &mut seeded(0)).is_err());
}

#[test]
fn fit_rejects_bad_inputs() {
    let data = table(400, 2);
    let p = PrivacySpec::new(1.0, 1e-5);
    let too_many = HyperParams {
        components: 50,
        ..hyper()
    };
    assert!(matches!(fit(&data, &p, &too_many, 0), Err(Error::DegenerateData(_))));
    let big_batch = HyperParams {
        train: TrainConfig {
            batch_size: 400,
            ..hyper().train
        },
        ..hyper()
    };
    assert!(fit(&data, &p, &big_batch, 0).is_err());
    assert!(fit(&data, &PrivacySpec::new(0.0, 1e-5), &hyper(), 0).is_err());
    assert!(fit(&data, &PrivacySpec::new(1.0, 1.5), &hyper(), 0).is_err());
}

#[test]
fn save_load_round_trip_is_bitwise() {
    let m = fitted(1.0, 9).model;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.dps");
    persist::save(&m, &path).unwrap();
    let back = persist::load(&path).unwrap();
    assert_eq!(back, m);
    let a = synthesize(&m, 100, None, true, &mut seeded(4)).unwrap();
    let b = synthesize(&back, 100, None, true, &mut seeded(4)).unwrap();
    let bits = |t: &DatasetTable| t.matrix().as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn corrupt_and_foreign_files_rejected() {
    let m = fitted(1.0, 10).model;
    let bytes = persist::to_bytes(&m).unwrap();

    let truncated = &bytes[..bytes.len() - 100];
    match persist::from_bytes(truncated) {
        Err(Error::Corrupt(msg)) => assert!(msg.contains("checksum"), "{msg}"),
        other => panic!("expected a checksum error, got {other:?}"),
    }

    let mut flipped = bytes.clone();
    let mid = bytes.len() / 2;
    flipped[mid] ^= 1;
    assert!(matches!(persist::from_bytes(&flipped), Err(Error::Corrupt(_))));

    let mut future = bytes.clone();
    future[8..12].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
    assert!(matches!(
        persist::from_bytes(&future),
        Err(Error::VersionMismatch { found, expected }) if found == FORMAT_VERSION + 1 && expected == FORMAT_VERSION
    ));

    assert!(persist::from_bytes(b"not a model").is_err());
}

#[test]
fn header_holds_only_released_fields() {
    let m = fitted(1.0, 11).model;
    let bytes = persist::to_bytes(&m).unwrap();
    let mut keys = persist::header_keys(&bytes).unwrap();
    keys.sort();
    let mut want: Vec<String> = HEADER_FIELDS.iter().map(|s| s.to_string()).collect();
    want.sort();
    assert_eq!(keys, want);
}
