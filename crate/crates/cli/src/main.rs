//! `melodia`: ingest MIDI corpora, train models, generate and analyze.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;
use melodia::analysis::{self, svg};
use melodia::dataset::{self, Dataset};
use melodia::model::{
    derive_seed, Checkpoint, LatentCode, MetricsRow, MetricsWriter, ModelKind, MusicVae, TrainObserver, Trainer,
};
use melodia::notes::{self, IndexedSequence};
use melodia::{Error, ErrorKind, Result};

#[derive(Parser)]
#[command(name = "melodia", version, about = "Variational recurrent model of melodies")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `key=value` override of a config entry, e.g. `train.learning_rate=1e-3`.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse the MIDI files of a manifest into a dataset cache.
    Ingest {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a dataset cache.
    Train {
        #[arg(long)]
        cache: PathBuf,
        #[arg(long, default_value = "proposed")]
        kind: ModelKind,
        #[arg(long)]
        out_dir: PathBuf,
        /// Continue from this checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Write generated pieces as MIDI files.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        length: Option<usize>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Interpolate between two pieces, or average curves over random pairs of a cache.
    Interpolate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, requires = "b", conflicts_with = "cache")]
        a: Option<PathBuf>,
        #[arg(long, requires = "a")]
        b: Option<PathBuf>,
        #[arg(long, required_unless_present = "a")]
        cache: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Project encoder means of a cache with PCA and score corpus separation.
    AnalyzeLatent {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        cache: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data | ErrorKind::Io => 3,
                ErrorKind::Numerical => 4,
            })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let text = match &cli.config {
        Some(path) => std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?,
        None => String::new(),
    };
    let config = RunConfig::load(&text, &cli.overrides, cli.seed)?;
    match cli.command {
        Command::Ingest { manifest, out } => ingest(&config, &manifest, &out),
        Command::Train { cache, kind, out_dir, resume } => train(&config, &cache, kind, &out_dir, resume.as_deref()),
        Command::Generate { checkpoint, count, length, out_dir } => generate(&config, &checkpoint, count, length, &out_dir),
        Command::Interpolate { checkpoint, a, b, cache, steps, out_dir } => {
            let steps = steps.unwrap_or(config.analysis.steps);
            match (a, b, cache) {
                (Some(a), Some(b), _) => interpolate_pair(&config, &checkpoint, &a, &b, steps, &out_dir),
                (_, _, Some(cache)) => interpolate_aggregate(&config, &checkpoint, &cache, steps, &out_dir),
                _ => Err(Error::Config("give --a and --b, or --cache".into())),
            }
        }
        Command::AnalyzeLatent { checkpoint, cache, out_dir } => analyze_latent(&config, &checkpoint, &cache, &out_dir),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Worker threads for parallel analysis, capped by `MELODIA_THREADS`.
fn threads() -> usize {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var("MELODIA_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        Some(cap) if cap > 0 => cap.min(available),
        _ => available,
    }
}

fn ingest(config: &RunConfig, manifest: &Path, out: &Path) -> Result<()> {
    let entries = dataset::read_manifest(manifest)?;
    let report = dataset::ingest(&entries, &config.dataset)?;
    report.dataset.save(out)?;
    let vocab_path = out.with_extension("vocab.tsv");
    write(&vocab_path, report.dataset.vocabs.to_text())?;
    let summary = report.summary();
    write(&out.with_extension("report.txt"), &summary)?;
    print!("{summary}");
    for (path, reason) in &report.skipped {
        println!("skipped {}: {reason}", path.display());
    }
    Ok(())
}

struct CliObserver {
    metrics: MetricsWriter,
    checkpoint: PathBuf,
    vocabs: notes::Vocabularies,
}

impl TrainObserver<f32> for CliObserver {
    fn on_step(&mut self, row: &MetricsRow) -> Result<()> {
        if row.step % 100 == 0 {
            log::info!("step {} beta {:.3} recon {:.3} kl {:.3}", row.step, row.beta, row.recon_nll, row.kl);
        }
        self.metrics.write(row)
    }

    fn on_epoch(&mut self, trainer: &Trainer<f32>) -> Result<()> {
        self.metrics.flush()?;
        save_checkpoint(trainer, &self.vocabs, &self.checkpoint)
    }
}

fn save_checkpoint(trainer: &Trainer<f32>, vocabs: &notes::Vocabularies, path: &Path) -> Result<()> {
    Checkpoint {
        model: trainer.model.clone(),
        vocabs: Some(vocabs.clone()),
        train_config: trainer.config.clone(),
        seed: trainer.seed,
        state: trainer.state,
    }
    .save(path)
}

fn train(config: &RunConfig, cache: &Path, kind: ModelKind, out_dir: &Path, resume: Option<&Path>) -> Result<()> {
    let data = Dataset::load(cache)?;
    let sequences = data.segment_sequences();
    if sequences.is_empty() {
        return Err(Error::EmptyInput("dataset has no segments; lower dataset.segment_length"));
    }
    create_dir(out_dir)?;
    let mut trainer = match resume {
        Some(path) => {
            let ck = Checkpoint::<f32>::load(path)?;
            if ck.model.kind() != kind {
                return Err(Error::CheckpointMismatch(format!("checkpoint is {}, requested {kind}", ck.model.kind())));
            }
            if ck.vocabs.as_ref() != Some(&data.vocabs) {
                return Err(Error::CheckpointMismatch("checkpoint vocabularies differ from the cache".into()));
            }
            let mut train = config.train.clone();
            train.epochs = train.epochs.max(ck.train_config.epochs);
            let mut t = Trainer::new(ck.model, train, ck.seed)?;
            t.state = ck.state;
            t
        }
        None => {
            let model_config = config.model.clone().with_vocab_sizes(data.vocabs.sizes());
            let model = MusicVae::<f32>::new(model_config, kind, config.seed)?;
            Trainer::new(model, config.train.clone(), config.seed)?
        }
    };
    log::info!(
        "training {kind}: {} segments, {} parameters",
        sequences.len(),
        trainer.model.params().scalar_count()
    );
    let metrics_path = out_dir.join("metrics.csv");
    if resume.is_none() && metrics_path.exists() {
        std::fs::remove_file(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    }
    let checkpoint = out_dir.join("checkpoint.bin");
    let mut observer = CliObserver { metrics: MetricsWriter::open(&metrics_path)?, checkpoint: checkpoint.clone(), vocabs: data.vocabs.clone() };
    let report = trainer.fit(&sequences, &mut observer)?;
    observer.metrics.flush()?;
    save_checkpoint(&trainer, &data.vocabs, &checkpoint)?;
    let eval = trainer.model.evaluate(&sequences)?;
    println!(
        "stopped ({:?}) after {} steps: recon {:.4}, kl {:.4}, accuracy dT {:.4} T {:.4} P {:.4}",
        report.stop, trainer.state.step, eval.recon, eval.kl, eval.accuracy[0], eval.accuracy[1], eval.accuracy[2]
    );
    Ok(())
}

fn load_with_vocab(path: &Path) -> Result<(MusicVae<f32>, notes::Vocabularies)> {
    let ck = Checkpoint::<f32>::load(path)?;
    let vocabs = ck.vocabs.ok_or_else(|| Error::CheckpointMismatch("checkpoint carries no vocabulary".into()))?;
    Ok((ck.model, vocabs))
}

fn write_sequence(path: &Path, seq: &IndexedSequence, vocabs: &notes::Vocabularies) -> Result<()> {
    let notes = notes::to_absolute(&notes::decode_indices(seq, vocabs)?)?;
    let tpq = notes::default_resolution(&notes)?;
    write(path, notes::write_midi(&notes, tpq)?)
}

fn generate(config: &RunConfig, checkpoint: &Path, count: Option<usize>, length: Option<usize>, out_dir: &Path) -> Result<()> {
    let (model, vocabs) = load_with_vocab(checkpoint)?;
    let count = count.unwrap_or(config.generate.count);
    let length = length.unwrap_or(config.generate.length);
    let decoding = config.generate.decoding()?;
    create_dir(out_dir)?;
    for i in 0..count {
        let seed = derive_seed(config.seed, i as u64);
        let code = if model.kind().uses_encoder() {
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
            LatentCode::new(melodia::model::standard_normal(&mut rng, 1, model.config().latent).into_data())
        } else {
            LatentCode::new(vec![0.0; model.config().latent])
        };
        let seq = model.generate(&code, length, decoding, derive_seed(seed, 1))?;
        let path = out_dir.join(format!("sample_{i:03}.mid"));
        write_sequence(&path, &seq, &vocabs)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn read_piece(path: &Path, vocabs: &notes::Vocabularies) -> Result<IndexedSequence> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let seq = notes::to_note_events(&notes::parse_midi(&bytes)?)?;
    notes::encode_indices(&seq, vocabs)
}

fn interpolate_pair(config: &RunConfig, checkpoint: &Path, a: &Path, b: &Path, steps: usize, out_dir: &Path) -> Result<()> {
    let (model, vocabs) = load_with_vocab(checkpoint)?;
    let (sa, sb) = (read_piece(a, &vocabs)?, read_piece(b, &vocabs)?);
    let curve = analysis::interpolation_curve(&model, &sa, &sb, steps, config.analysis.length)?;
    create_dir(out_dir)?;
    for (i, seq) in curve.generations.iter().enumerate() {
        write_sequence(&out_dir.join(format!("interp_{i:03}.mid")), seq, &vocabs)?;
    }
    write(&out_dir.join("curve.csv"), curve.to_csv())?;
    if config.analysis.svg {
        write(&out_dir.join("curve.svg"), svg::curve_svg(&(&curve).into()))?;
    }
    print!("{}", curve.to_csv());
    Ok(())
}

fn interpolate_aggregate(config: &RunConfig, checkpoint: &Path, cache: &Path, steps: usize, out_dir: &Path) -> Result<()> {
    let (model, _) = load_with_vocab(checkpoint)?;
    let data = Dataset::load(cache)?;
    check_vocab(&model, &data)?;
    let sequences = data.segment_sequences();
    let a = &config.analysis;
    let curve = analysis::aggregate_curve(&model, &sequences, a.pairs, steps, a.length, config.seed, threads())?;
    create_dir(out_dir)?;
    write(&out_dir.join("curve.csv"), curve.to_csv())?;
    if a.svg {
        write(&out_dir.join("curve.svg"), svg::curve_svg(&curve))?;
    }
    print!("{}", curve.to_csv());
    println!(
        "spearman {:.4}, asymmetry {:.4}, roughness {:.4}",
        curve.rising_correlation().unwrap_or(f64::NAN),
        curve.asymmetry(),
        curve.roughness()
    );
    Ok(())
}

fn check_vocab(model: &MusicVae<f32>, data: &Dataset) -> Result<()> {
    if model.config().vocab_sizes != data.vocabs.sizes() {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint vocabulary sizes {:?}, cache {:?}",
            model.config().vocab_sizes,
            data.vocabs.sizes()
        )));
    }
    Ok(())
}

fn analyze_latent(config: &RunConfig, checkpoint: &Path, cache: &Path, out_dir: &Path) -> Result<()> {
    let (model, _) = load_with_vocab(checkpoint)?;
    let data = Dataset::load(cache)?;
    check_vocab(&model, &data)?;
    let seqs: Vec<IndexedSequence> = data.sources.iter().map(|s| s.indexed.clone()).collect();
    let encoded = model.encode_many(&seqs)?;
    let latents: Vec<(Vec<f32>, String)> =
        encoded.into_iter().zip(&data.sources).map(|((mu, _), s)| (mu, s.label.clone())).collect();
    let cloud = analysis::pca_project(&latents, config.analysis.pca_dims)?;
    let score = analysis::cluster_separation(&cloud)?;
    create_dir(out_dir)?;
    write(&out_dir.join("pca.csv"), cloud.to_csv())?;
    if config.analysis.svg {
        write(&out_dir.join("pca.svg"), svg::scatter_svg(&cloud))?;
    }
    let ratios: Vec<String> = cloud.explained_variance_ratio.iter().map(|r| format!("{r:.4}")).collect();
    let summary = format!("silhouette {score:.4}\nexplained variance {}\n", ratios.join(" "));
    write(&out_dir.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}
