use std::fs::File;
use std::io::{BufReader, BufWriter};

use statforge::config::RunConfig;
use statforge::encoder::Encoder;
use statforge::io::{self, Table};
use statforge::manifest::RunManifest;
use statforge::models::ModelId;
use statforge::pipeline::{self, Architecture, WeightsMeta};
use statforge::samples::SampleSet;
use statforge::train::LogEntry;
use statforge::{enca, Error};

fn meta(model: ModelId) -> WeightsMeta {
    WeightsMeta {
        architecture: Architecture::Enca,
        model,
        q: 3,
        p: 2,
        n: 200,
        steps: 0,
        seed: 1,
        c_x: Some(0.01),
        init: pipeline::INIT_SPEC.into(),
        f2: None,
    }
}

#[test]
fn trajectory_batch_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let rows = vec![vec![0.1, 0.2, 0.3], vec![1e-300, -0.0, 7.5]];
    let path = dir.path().join("b.bin");
    io::write_batch(BufWriter::new(File::create(&path).unwrap()), &rows).unwrap();
    assert_eq!(io::read_batch(BufReader::new(File::open(&path).unwrap())).unwrap(), rows);
    assert!(io::write_batch(Vec::new(), &[vec![1.0], vec![1.0, 2.0]]).is_err());
}

#[test]
fn samples_ignore_extra_columns() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.csv");
    let mut t = Table::new(vec!["alpha".into(), "sigma".into(), "distance".into()]);
    t.push(vec![5.1, 0.01, 0.3]).unwrap();
    t.push(vec![5.2, 0.02, 0.1]).unwrap();
    t.save(&path).unwrap();
    let names = vec!["alpha".to_string(), "sigma".to_string()];
    let s = io::load_samples(&path, &names, "abc").unwrap();
    assert_eq!(s, SampleSet::new(names, vec![vec![5.1, 0.01], vec![5.2, 0.02]], "abc").unwrap());
    assert!(matches!(io::load_samples(&path, &["delta".to_string()], "abc"), Err(Error::Format(_))));
}

#[test]
fn weights_round_trip_and_model_check() {
    let dir = tempfile::tempdir().unwrap();
    let w = enca::init_weights(3, 1, 2).unwrap();
    let path = dir.path().join("w.sfw");
    pipeline::save_trained(&path, &w, &meta(ModelId::Nlar1)).unwrap();
    let (back, m) = pipeline::load_trained(&path).unwrap();
    assert_eq!(m, meta(ModelId::Nlar1));
    assert_eq!(back.num_scalars(), w.num_scalars());
    assert!(matches!(pipeline::load_encoder(&path, ModelId::Dynamo), Err(Error::ModelMismatch(_))));

    let enc_path = dir.path().join("e.sfw");
    pipeline::save_encoder_only(&enc_path, &w, &meta(ModelId::Nlar1)).unwrap();
    let (enc, _) = pipeline::load_encoder(&enc_path, ModelId::Nlar1).unwrap();
    let full = Encoder::new(&w, 2).unwrap();
    let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin().abs()).collect();
    let t = statforge::models::Trajectory::new(x, 0.25);
    assert_eq!(enc.encode(&t).unwrap(), full.encode(&t).unwrap());
    assert!(std::fs::metadata(&enc_path).unwrap().len() < std::fs::metadata(&path).unwrap().len());
}

#[test]
fn training_log_round_trip() {
    let log: Vec<LogEntry> = (1..4)
        .map(|i| LogEntry {
            step: i * 100,
            loss: 1.0 / i as f64,
            regression: 0.3,
            reconstruction: 0.7 / i as f64,
            wall_seconds: i as f64,
        })
        .collect();
    let mut buf = Vec::new();
    pipeline::write_log(&mut buf, &log).unwrap();
    assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), 3);
    assert_eq!(pipeline::read_log(buf.as_slice()).unwrap(), log);
}

#[test]
fn config_round_trips_through_toml() {
    for id in [ModelId::Nlar1, ModelId::Dynamo] {
        let mut cfg = RunConfig::default_for(id);
        cfg.mcmc.init = Some(id.true_theta());
        cfg.enca.c_x = Some(0.02);
        assert_eq!(RunConfig::parse(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }
}

#[test]
fn config_file_then_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    std::fs::write(&path, "[abc]\nbudget = 5000\n[enca]\nsteps = 10\n").unwrap();
    let cfg = RunConfig::resolve(Some(&path), Some(ModelId::Dynamo), &["enca.steps=20".into()]).unwrap();
    assert_eq!(cfg.model.id, ModelId::Dynamo);
    assert_eq!(cfg.abc.budget, 5000);
    assert_eq!(cfg.enca.steps, 20);
    assert_eq!(cfg.enca.minibatch, 100);

    std::fs::write(&path, "[abc]\nbudgett = 5000\n").unwrap();
    let err = RunConfig::resolve(Some(&path), None, &[]).unwrap_err();
    assert!(err.to_string().contains("abc.budgett"), "{err}");
    assert!(RunConfig::resolve(None, None, &["model.n=0".into()]).is_err());
}

#[test]
fn manifest_records_outputs() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("a.csv"), "x\n1.0\n").unwrap();
    let mut m = RunManifest::new("test", vec!["a".into()], RunConfig::default_for(ModelId::Nlar1), 1).unwrap();
    m.record_outputs(dir.path()).unwrap();
    m.save(dir.path()).unwrap();
    m.record_outputs(dir.path()).unwrap();
    assert_eq!(m.outputs.len(), 1);
    assert_eq!(m.outputs["a.csv"], io::sha256_hex(b"x\n1.0\n"));
    assert_eq!(RunManifest::load(dir.path()).unwrap().config_hash, m.config_hash);
}
