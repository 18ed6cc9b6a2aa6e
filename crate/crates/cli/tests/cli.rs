#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use melodia::model::read_metrics;
use melodia::notes::{parse_midi, to_note_events};

const TINY: &str = r#"
seed = 3

[dataset]
segment_length = 16
stride = 8
max_transpose = 1

[model]
hidden = 12
latent = 4
embed_dt = 4
embed_duration = 4
embed_pitch = 6

[train]
batch_size = 16
learning_rate = 1e-3
kl_ramp_steps = 10
epochs = 1
max_steps = 12
eval_every = 1000

[analysis]
steps = 5
pairs = 6
length = 10
"#;

fn melodia(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_melodia")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = melodia(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
    cache: PathBuf,
    manifest: PathBuf,
}

fn workspace() -> Workspace {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let manifest = support::write_corpus(&root, &support::corpus(4, 31));
    let config = root.join("tiny.toml");
    std::fs::write(&config, TINY).unwrap();
    let cache = root.join("corpus.bin");
    ok(&["ingest", "--config", s(&config), "--manifest", s(&manifest), "--out", s(&cache)]);
    Workspace { _dir: dir, root, config, cache, manifest }
}

fn train(w: &Workspace, kind: &str, out: &str, extra: &[&str]) -> PathBuf {
    let dir = w.root.join(out);
    let mut args = vec!["train", "--config", s(&w.config), "--cache", s(&w.cache), "--kind", kind, "--out-dir", s(&dir)];
    args.extend_from_slice(extra);
    ok(&args);
    dir
}

#[test]
fn ingest_writes_cache_and_report() {
    let w = workspace();
    assert!(w.cache.exists());
    let report = std::fs::read_to_string(w.cache.with_extension("report.txt")).unwrap();
    assert!(report.contains("corpus chorale: 2 files") && report.contains("corpus folk: 2 files"));
    assert!(w.cache.with_extension("vocab.tsv").exists());

    let again = w.root.join("again.bin");
    ok(&["ingest", "--config", s(&w.config), "--manifest", s(&w.manifest), "--out", s(&again)]);
    assert_eq!(std::fs::read(&w.cache).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn train_then_generate() {
    let w = workspace();
    let run = train(&w, "proposed", "run", &[]);
    let rows = read_metrics(&std::fs::read_to_string(run.join("metrics.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 12);
    let ck = s(&run.join("checkpoint.bin")).to_string();

    let (g1, g2) = (w.root.join("gen1"), w.root.join("gen2"));
    for g in [&g1, &g2] {
        ok(&["generate", "--config", s(&w.config), "--checkpoint", &ck, "--count", "5", "--length", "100", "--out-dir", s(g)]);
    }
    for i in 0..5 {
        let name = format!("sample_{i:03}.mid");
        let bytes = std::fs::read(g1.join(&name)).unwrap();
        let seq = to_note_events(&parse_midi(&bytes).unwrap()).unwrap();
        assert_eq!(seq.len(), 100);
        assert_eq!(bytes, std::fs::read(g2.join(&name)).unwrap());
    }

    let g3 = w.root.join("gen3");
    ok(&["generate", "--config", s(&w.config), "--seed", "99", "--checkpoint", &ck, "--count", "5", "--out-dir", s(&g3)]);
    let differs = (0..5).any(|i| {
        let name = format!("sample_{i:03}.mid");
        std::fs::read(g1.join(&name)).unwrap() != std::fs::read(g3.join(&name)).unwrap()
    });
    assert!(differs);
}

#[test]
fn every_kind_logs_the_same_columns() {
    let w = workspace();
    for kind in ["proposed", "no-unrolling", "decoder-only", "autoencoder"] {
        let run = train(&w, kind, kind, &[]);
        let text = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
        assert_eq!(text.lines().next(), Some("step,beta,recon_nll,kl,total"), "{kind}");
        assert_eq!(read_metrics(&text).unwrap().len(), 12, "{kind}");
        let out = w.root.join(format!("{kind}-gen"));
        let ck = run.join("checkpoint.bin");
        ok(&["generate", "--config", s(&w.config), "--checkpoint", s(&ck), "--count", "2", "--length", "20", "--out-dir", s(&out)]);
        assert!(out.join("sample_001.mid").exists(), "{kind}");
    }
}

#[test]
fn resume_continues_the_same_run() {
    let w = workspace();
    let full = train(&w, "proposed", "full", &["--override", "train.max_steps=8"]);
    let half = train(&w, "proposed", "half", &["--override", "train.max_steps=4"]);
    let ck = half.join("checkpoint.bin");
    train(&w, "proposed", "half", &["--override", "train.max_steps=8", "--resume", s(&ck)]);
    let a = std::fs::read_to_string(full.join("metrics.csv")).unwrap();
    let b = std::fs::read_to_string(half.join("metrics.csv")).unwrap();
    assert_eq!(a, b);
    assert_eq!(std::fs::read(full.join("checkpoint.bin")).unwrap(), std::fs::read(&ck).unwrap());

    let wrong = melodia(&[
        "train", "--config", s(&w.config), "--cache", s(&w.cache), "--kind", "autoencoder", "--out-dir", s(&half), "--resume",
        s(&ck),
    ]);
    assert_eq!(wrong.status.code(), Some(3));
}

#[test]
fn interpolation_and_latent_analysis_write_outputs() {
    let w = workspace();
    let run = train(&w, "proposed", "run", &[]);
    let ck = run.join("checkpoint.bin");
    let pair = w.root.join("pair");
    let a = w.root.join("chorale/chorale_000.mid");
    let b = w.root.join("folk/folk_001.mid");
    ok(&["interpolate", "--config", s(&w.config), "--checkpoint", s(&ck), "--a", s(&a), "--b", s(&b), "--out-dir", s(&pair)]);
    assert!(pair.join("interp_004.mid").exists() && pair.join("curve.svg").exists());
    let curve = std::fs::read_to_string(pair.join("curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 6);
    let first: Vec<&str> = curve.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(first[1].parse::<f64>().unwrap(), 0.0, "{curve}");

    let agg = w.root.join("agg");
    let out = ok(&["interpolate", "--config", s(&w.config), "--checkpoint", s(&ck), "--cache", s(&w.cache), "--out-dir", s(&agg)]);
    assert!(out.contains("spearman"));
    assert_eq!(std::fs::read_to_string(agg.join("curve.csv")).unwrap().lines().count(), 6);

    let lat = w.root.join("latent");
    let out = ok(&["analyze-latent", "--config", s(&w.config), "--checkpoint", s(&ck), "--cache", s(&w.cache), "--out-dir", s(&lat)]);
    assert!(out.starts_with("silhouette"));
    assert_eq!(std::fs::read_to_string(lat.join("pca.csv")).unwrap().lines().count(), 5);
    assert!(lat.join("pca.svg").exists());
}

#[test]
fn exit_codes() {
    let w = workspace();
    let scratch = w.root.join("x");
    let no_seed = w.root.join("noseed.toml");
    std::fs::write(&no_seed, TINY.replace("seed = 3", "")).unwrap();
    let out = melodia(&["train", "--config", s(&no_seed), "--cache", s(&w.cache), "--out-dir", s(&scratch)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));

    let out = melodia(&[
        "train", "--config", s(&w.config), "--override", "train.learning_rat=1", "--cache", s(&w.cache), "--out-dir",
        s(&scratch),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rat"));

    let absent = w.root.join("absent.bin");
    let out = melodia(&["train", "--config", s(&w.config), "--cache", s(&absent), "--out-dir", s(&scratch)]);
    assert_eq!(out.status.code(), Some(3));

    let out = melodia(&["train", "--seed", "1", "--cache", s(&w.manifest), "--out-dir", s(&scratch)]);
    assert_eq!(out.status.code(), Some(3));
}
