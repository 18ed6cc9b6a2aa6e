mod support;

use melodia::baselines::{config_diff, train_autoencoder, train_decoder_only, BaselineKind};
use melodia::container::Container;
use melodia::model::*;
use melodia::{Error, ErrorKind};

const SIZES: [usize; 3] = [5, 6, 7];

fn train_config(batch_size: usize, epochs: u64) -> TrainConfig {
    TrainConfig { batch_size, learning_rate: 1e-3, kl_ramp_steps: 20, epochs, ..Default::default() }
}

fn trainer<T: melodia::Scalar>(kind: ModelKind, config: TrainConfig, seed: u64) -> Trainer<T> {
    let model = MusicVae::new(support::tiny_config(8, 4, SIZES), kind, seed).unwrap();
    Trainer::new(model, config, seed).unwrap()
}

#[test]
fn reconstruction_loss_falls_monotonically_without_kl() {
    let data = support::random_sequences(10, 20, SIZES, 1);
    let model = MusicVae::<f32>::new(ModelConfig::desk().with_vocab_sizes(SIZES), ModelKind::Autoencoder, 1).unwrap();
    let config = TrainConfig { batch_size: 10, epochs: 50, ..Default::default() };
    let mut t = Trainer::new(model, config, 1).unwrap();
    let report = t.fit(&data, &mut ()).unwrap();
    assert_eq!(report.rows.len(), 50);
    for w in report.rows.windows(2) {
        assert_eq!(w[1].beta, 0.0);
        assert!(w[1].total < w[0].total, "step {}: {} -> {}", w[1].step, w[0].total, w[1].total);
    }
}

#[test]
fn identical_runs_are_bit_identical() {
    let data = support::random_sequences(20, 6, SIZES, 2);
    let run = || {
        let mut t = trainer::<f64>(ModelKind::Proposed, train_config(10, 5), 2);
        t.fit(&data, &mut ()).unwrap();
        assert_eq!(t.state.step, 10);
        t.model.params().clone()
    };
    assert_eq!(run(), run());
}

#[test]
fn resuming_from_a_checkpoint_reproduces_the_trajectory() {
    let data = support::random_sequences(25, 6, SIZES, 3);
    let mut full = trainer::<f32>(ModelKind::Proposed, train_config(10, 4), 3);
    let expected = full.fit(&data, &mut ()).unwrap().rows;
    assert_eq!(expected.len(), 12);

    let mut first = trainer::<f32>(ModelKind::Proposed, TrainConfig { max_steps: Some(5), ..train_config(10, 4) }, 3);
    let mut rows = first.fit(&data, &mut ()).unwrap().rows;
    assert_eq!(first.state, TrainState { step: 5, epoch: 1, batch: 2 });
    let ck = Checkpoint { model: first.model.clone(), vocabs: None, train_config: first.config.clone(), seed: first.seed, state: first.state };
    let loaded = Checkpoint::<f32>::from_bytes(&ck.to_bytes().unwrap()).unwrap();
    let mut resumed = Trainer::new(loaded.model, train_config(10, 4), loaded.seed).unwrap();
    resumed.state = loaded.state;
    rows.extend(resumed.fit(&data, &mut ()).unwrap().rows);
    assert_eq!(rows, expected);
    assert_eq!(resumed.model.params(), full.model.params());
}

#[test]
fn non_finite_loss_aborts_with_the_batch() {
    let data = support::random_sequences(10, 4, SIZES, 4);
    let mut t = trainer::<f32>(ModelKind::Proposed, train_config(5, 1), 4);
    let id = t.model.params().id("dec.out_pitch.bias").unwrap();
    t.model.params_mut().value_mut(id).data_mut()[0] = f32::NAN;
    let err = t.fit(&data, &mut ()).unwrap_err();
    match &err {
        Error::NonFiniteLoss { step, batch, detail } => {
            assert_eq!((*step, *batch), (0, 0));
            assert!(detail.contains("sequence ids"), "{detail}");
        }
        other => panic!("unexpected {other}"),
    }
    assert_eq!(err.kind(), ErrorKind::Numerical);
}

#[test]
fn every_kind_logs_the_same_columns() {
    let data = support::random_sequences(10, 5, SIZES, 5);
    for kind in ModelKind::ALL {
        let mut t = trainer::<f32>(kind, train_config(5, 3), 5);
        let rows = t.fit(&data, &mut ()).unwrap().rows;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        let mut w = MetricsWriter::open(&path).unwrap();
        rows[..3].iter().for_each(|r| w.write(r).unwrap());
        w.flush().unwrap();
        drop(w);
        let mut w = MetricsWriter::open(&path).unwrap();
        rows[3..].iter().for_each(|r| w.write(r).unwrap());
        w.flush().unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next(), Some("step,beta,recon_nll,kl,total"));
        assert_eq!(read_metrics(&text).unwrap(), rows);
        match kind {
            ModelKind::DecoderOnly => assert!(rows.iter().all(|r| r.kl == 0.0 && r.beta == 0.0)),
            ModelKind::Autoencoder => assert!(rows.iter().all(|r| r.beta == 0.0 && r.kl > 0.0 && (r.total - r.recon_nll).abs() < 1e-5 * r.recon_nll)),
            _ => assert!(rows.iter().any(|r| r.beta > 0.0)),
        }
    }
}

#[test]
fn baselines_train_and_behave() {
    let data = support::random_sequences(10, 6, SIZES, 6);
    let config = support::tiny_config(8, 4, SIZES);
    let (dec, _) = train_decoder_only::<f32>(&data, config.clone(), train_config(10, 20), 6).unwrap();
    let code = LatentCode::new(vec![0.0; 4]);
    let s = Decoding::Sample { temperature: 1.0 };
    assert_ne!(dec.model.generate(&code, 40, s, 1).unwrap(), dec.model.generate(&code, 40, s, 2).unwrap());

    let (ae, _) = train_autoencoder::<f32>(&data, config, train_config(10, 20), 6).unwrap();
    assert_eq!(ae.model.encode(&data[0]).unwrap(), ae.model.encode(&data[0]).unwrap());
}

#[test]
fn baselines_differ_from_the_main_model_only_by_their_documented_delta() {
    let config = support::tiny_config(8, 4, SIZES);
    let main = MusicVae::<f32>::new(config.clone(), ModelKind::Proposed, 7).unwrap();
    assert!(config_diff(&main, &main).is_empty());
    for kind in BaselineKind::ALL {
        let other = MusicVae::<f32>::new(config.clone(), kind.model_kind(), 7).unwrap();
        let diff = config_diff(&main, &other);
        let expected: Vec<String> = match kind {
            BaselineKind::NoUnrollingVae => vec!["note_unrolling: true -> false".into(), "kind: proposed -> no-unrolling".into()],
            BaselineKind::DecoderOnly => vec!["kind: proposed -> decoder-only".into(), "latent pathway: encoded -> zero".into()],
            BaselineKind::ModularizedAutoencoder => vec![
                "kind: proposed -> autoencoder".into(),
                "objective: annealed ELBO with sampled z -> reconstruction with z = mean".into(),
            ],
        };
        assert_eq!(diff, expected, "{kind}");
        // Same seed, same parameter values: only the training path differs.
        assert_eq!(other.params(), main.params());
    }
}

#[test]
fn checkpoints_round_trip_and_reject_mismatches() {
    let data = support::random_sequences(10, 5, SIZES, 8);
    let mut t = trainer::<f32>(ModelKind::NoUnrolling, train_config(5, 2), 8);
    t.fit(&data, &mut ()).unwrap();
    let ck = Checkpoint { model: t.model.clone(), vocabs: None, train_config: t.config.clone(), seed: 8, state: t.state };
    let bytes = ck.to_bytes().unwrap();
    let back = Checkpoint::<f32>::from_bytes(&bytes).unwrap();
    assert_eq!(back.model.params(), t.model.params());
    assert_eq!(back.model.kind(), ModelKind::NoUnrolling);
    assert_eq!(back.state, t.state);
    assert_eq!(back.train_config, t.config);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.bin");
    ck.save(&path).unwrap();
    assert_eq!(Checkpoint::<f32>::load(&path).unwrap().model.params(), t.model.params());
    // Loading at double precision widens every value exactly.
    let wide = Checkpoint::<f64>::from_bytes(&bytes).unwrap();
    assert_eq!(wide.model.params().convert::<f32>(), *t.model.params());

    let mut c = Container::from_bytes(CHECKPOINT_MAGIC, &bytes).unwrap();
    let entry = c.entries.iter_mut().find(|e| e.name == "model.config").unwrap();
    let text = entry.as_text().unwrap().replace("hidden = 8", "hidden = 9");
    *entry = melodia::container::Entry { name: entry.name.clone(), dims: vec![text.len()], payload: melodia::container::Payload::Text(text) };
    let err = Checkpoint::<f32>::from_bytes(&c.to_bytes()).unwrap_err();
    assert!(matches!(err, Error::CheckpointMismatch(_)), "{err}");

    assert!(Checkpoint::<f32>::from_bytes(&bytes[..bytes.len() - 3]).is_err());
}
