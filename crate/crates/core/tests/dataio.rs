use std::fs;

use qtomo_core::dataio::{
    load_dataset, load_density, load_model, load_record, read_results, save_dataset, save_density,
    save_model, save_record, write_results, ResultRow, ResultsTable, RESULTS_HEADER,
};
use qtomo_core::measurement::{build_projectors, ideal_probabilities};
use qtomo_core::nn::{
    generate_dataset, predict_tau, train, Dataset, ModelParams, NetworkConfig, Provenance,
};
use qtomo_core::qstate::{haar_random_pure, DensityMatrix};
use qtomo_core::rng::seeded;
use qtomo_core::{Error, MeasurementRecord, Shots};
use rand::Rng;
use tempfile::tempdir;

#[test]
fn dataset_round_trip_is_lossless() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("train.jsonl");
    let data = generate_dataset(100, 2, Provenance::Shots(15), 3).unwrap();
    save_dataset(&data, &path).unwrap();
    let back = load_dataset(&path).unwrap();
    assert_eq!(back.qubits, 2);
    assert_eq!(back.provenance, Provenance::Shots(15));
    assert_eq!(back.len(), 100);
    for (a, b) in data.samples.iter().zip(&back.samples) {
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.measurements), bits(&b.measurements));
        assert_eq!(bits(&a.target_tau), bits(&b.target_tau));
        assert_eq!(a.rho, b.rho);
    }
    let header = fs::read_to_string(&path)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string();
    assert_eq!(
        header,
        r#"{"version":1,"d":2,"provenance":"shots:15","count":100}"#
    );
}

#[test]
fn depolarized_provenance_round_trips() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    let prov = Provenance::Depolarized {
        p: 0.05,
        shots: 2192,
    };
    save_dataset(&generate_dataset(3, 1, prov, 1).unwrap(), &path).unwrap();
    assert_eq!(load_dataset(&path).unwrap().provenance, prov);
}

#[test]
fn empty_dataset_is_valid() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("empty.jsonl");
    fs::write(
        &path,
        "{\"version\":1,\"d\":2,\"provenance\":\"ideal\",\"count\":0}\n",
    )
    .unwrap();
    let data = load_dataset(&path).unwrap();
    assert!(data.is_empty());
    assert_eq!(data.qubits, 2);
}

#[test]
fn dataset_errors_name_the_line() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");

    // Header says d = 2 but the sample has single-qubit lengths.
    let one = generate_dataset(1, 1, Provenance::Ideal, 0).unwrap();
    let mut text = fs::read_to_string({
        let p = dir.path().join("one.jsonl");
        save_dataset(&one, &p).unwrap();
        p
    })
    .unwrap();
    text = text.replacen("\"d\":1", "\"d\":2", 1);
    fs::write(&path, &text).unwrap();
    match load_dataset(&path) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected parse error, got {other:?}"),
    }

    fs::write(
        &path,
        "{\"version\":1,\"d\":1,\"provenance\":\"ideal\",\"count\":2}\n{\"m\":[1,0,1,0,1,0],\"tau\":[1,0,0,0]}\n{\"m\":[oops\n",
    )
    .unwrap();
    match load_dataset(&path) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected parse error, got {other:?}"),
    }

    fs::write(
        &path,
        "{\"version\":1,\"d\":1,\"provenance\":\"ideal\",\"count\":1}\n",
    )
    .unwrap();
    assert!(matches!(
        load_dataset(&path),
        Err(Error::Parse { line: 1, .. })
    ));
}

#[test]
fn unknown_versions_are_rejected() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("v2.jsonl");
    fs::write(
        &path,
        "{\"version\":2,\"d\":1,\"provenance\":\"ideal\",\"count\":0}\n",
    )
    .unwrap();
    assert!(matches!(
        load_dataset(&path),
        Err(Error::UnsupportedFormat(2))
    ));

    let rec = dir.path().join("r.json");
    fs::write(&rec, "{\"version\":7,\"d\":1,\"shots\":\"ideal\",\"m\":[]}").unwrap();
    assert!(matches!(
        load_record(&rec),
        Err(Error::UnsupportedFormat(7))
    ));

    let ckpt = dir.path().join("m.json");
    fs::write(&ckpt, "{\"version\":0}").unwrap();
    assert!(matches!(
        load_model(&ckpt),
        Err(Error::UnsupportedFormat(0))
    ));
}

#[test]
fn record_and_density_round_trip() {
    let dir = tempdir().unwrap();
    let mut rng = seeded(11);
    let rho = haar_random_pure(2, &mut rng).unwrap().to_density();
    let rec = ideal_probabilities(&rho, &build_projectors(2).unwrap()).unwrap();
    save_record(&rec, dir.path().join("r.json")).unwrap();
    save_density(&rho, dir.path().join("s.json")).unwrap();
    assert_eq!(load_record(dir.path().join("r.json")).unwrap(), rec);
    assert_eq!(load_density(dir.path().join("s.json")).unwrap(), rho);

    let finite = MeasurementRecord::new(Shots::Finite(15), rec.values().to_vec()).unwrap();
    save_record(&finite, dir.path().join("f.json")).unwrap();
    assert_eq!(
        load_record(dir.path().join("f.json")).unwrap().shots(),
        Shots::Finite(15)
    );
}

#[test]
fn record_with_wrong_length_is_a_parse_error() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("r.json");
    fs::write(
        &path,
        "{\"version\":1,\"d\":2,\"shots\":\"ideal\",\"m\":[0.5,0.5,0.5,0.5,0.5,0.5]}",
    )
    .unwrap();
    assert!(matches!(load_record(&path), Err(Error::Parse { .. })));
}

fn small_model() -> (ModelParams, Vec<qtomo_core::nn::EpochStats>) {
    let mut config = NetworkConfig::defaults(1);
    config.epochs = 2;
    let data = generate_dataset(32, 1, Provenance::Ideal, 5).unwrap();
    let val = generate_dataset(8, 1, Provenance::Ideal, 6).unwrap();
    train(&data, &val, &config).unwrap()
}

#[test]
fn checkpoint_round_trip_gives_identical_outputs() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("model.json");
    let (model, history) = small_model();
    save_model(&model, &history, &path).unwrap();
    let back = load_model(&path).unwrap();
    assert_eq!(back.model.config, model.config);
    assert_eq!(back.history, history);
    assert_eq!(back.model.accumulators, model.accumulators);

    let mut rng = seeded(9);
    let proj = build_projectors(1).unwrap();
    for _ in 0..10 {
        let rho = haar_random_pure(1, &mut rng).unwrap().to_density();
        let rec = ideal_probabilities(&rho, &proj).unwrap();
        let a = predict_tau(&model, &rec).unwrap();
        let b = predict_tau(&back.model, &rec).unwrap();
        assert_eq!(
            a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }
}

#[test]
fn truncated_checkpoint_is_corrupt() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("model.json");
    let (model, history) = small_model();
    save_model(&model, &history, &path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    fs::write(&path, &text[..text.len() / 2]).unwrap();
    assert!(matches!(
        load_model(&path),
        Err(Error::CorruptCheckpoint { .. })
    ));

    // Well-formed JSON whose tensor shape disagrees with the config.
    let wrong = text.replacen("\"conv1_filters\": 8", "\"conv1_filters\": 9", 1);
    assert_ne!(wrong, text);
    fs::write(&path, wrong).unwrap();
    assert!(matches!(
        load_model(&path),
        Err(Error::CorruptCheckpoint { .. })
    ));
}

#[test]
fn single_qubit_checkpoint_rejects_two_qubit_record() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("model.json");
    let (model, history) = small_model();
    save_model(&model, &history, &path).unwrap();
    let model = load_model(&path).unwrap().model;
    let rec = MeasurementRecord::uniform(2);
    assert!(matches!(
        predict_tau(&model, &rec),
        Err(Error::DimensionMismatch {
            expected: 1,
            actual: 2
        })
    ));
}

fn table(rng: &mut impl Rng) -> ResultsTable {
    let mut t = ResultsTable::new("shots");
    for (m, method) in ["nn-ideal", "mle"].iter().enumerate() {
        for i in (0..5).rev() {
            t.rows.push(ResultRow {
                method: method.to_string(),
                d: 2,
                shots: if m == 0 {
                    Shots::Ideal
                } else {
                    Shots::Finite(15)
                },
                noise_p: 0.0,
                state_index: i,
                fidelity: rng.random(),
                wall_time_s: rng.random::<f64>() * 1e-3,
                seed: 42,
            });
        }
    }
    t
}

#[test]
fn results_csv_is_deterministic_and_round_trips() {
    let dir = tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    let t = table(&mut seeded(1));
    write_results(&t, &a).unwrap();
    write_results(&t, &b).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let back = read_results(&a).unwrap();
    assert_eq!(back.rows.len(), t.rows.len());
    for row in &t.rows {
        assert!(back.rows.contains(row));
    }
    assert!(back.rows.iter().all(|r| (0.0..=1.0).contains(&r.fidelity)));
}

#[test]
fn empty_table_is_header_only() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("empty.csv");
    write_results(&ResultsTable::new("none"), &path).unwrap();
    assert_eq!(
        fs::read_to_string(&path).unwrap(),
        format!("{RESULTS_HEADER}\n")
    );
}

#[test]
fn write_errors_carry_the_path() {
    let path = std::path::Path::new("/nonexistent-dir/results.csv");
    let err = write_results(&ResultsTable::new("x"), path).unwrap_err();
    assert!(
        err.to_string().contains("/nonexistent-dir/results.csv"),
        "{err}"
    );
}

#[test]
fn saved_dataset_without_states_falls_back_to_tau() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("bare.jsonl");
    let mut data: Dataset = generate_dataset(4, 1, Provenance::Ideal, 2).unwrap();
    let states: Vec<DensityMatrix> = data.target_states().unwrap();
    for s in &mut data.samples {
        s.rho = None;
    }
    save_dataset(&data, &path).unwrap();
    let back = load_dataset(&path).unwrap();
    for (a, b) in back.target_states().unwrap().iter().zip(&states) {
        assert!(qtomo_core::qstate::fidelity(a, b).unwrap() > 1.0 - 1e-6);
    }
}
