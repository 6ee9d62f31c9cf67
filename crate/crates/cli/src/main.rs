use std::fs;
use std::io::{self, Write};
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use triage_core::calibration::{self, CutoffTable, EfficacyCurve, DEFAULT_PERCENTS};
use triage_core::corpus::{load_labeled, write_labeled_to, ThresholdCorpus, ValidationSet};
use triage_core::rnn::EmbeddingTable;
use triage_core::scorer::{load_scorer, Scorer};
use triage_core::synth::{generate_synthetic, generate_threshold_texts};
use triage_core::transformer::export_onnx;
use triage_core::{train_bow, train_rnn, train_transformer, BowConfig, RnnTrainConfig, TransformerScorer};
use triage_core::{TransformerTrainConfig, WeightFile};
use triage_service::engine::{DEFAULT_MAX_TEXT_BYTES, EngineConfig};
use triage_service::Engine;

/// Triage engine for alarming student responses.
#[derive(Parser)]
#[command(name = "asr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScorerArg {
    Bow,
    Rnn,
    Transformer,
}

#[derive(Subcommand)]
enum Command {
    /// Train a scorer on a labeled JSONL corpus and write its weight file.
    Train {
        #[arg(long, value_enum)]
        scorer: ScorerArg,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// JSON file overriding the scorer's training configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Pretrained GloVe-format word vectors (rnn only).
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Derive score cutoffs for review percentages from a threshold corpus.
    Calibrate {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        threshold_corpus: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_PERCENTS.to_vec())]
        percents: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Report efficacy on a validation set at every calibrated percentage.
    Evaluate {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        cutoffs: PathBuf,
        #[arg(long)]
        validation: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Score one text and print the fragment score with its segments.
    Score {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        text: String,
    },
    /// Run the HTTP triage service.
    Serve {
        #[arg(long, env = "ASR_DATA_DIR")]
        data_dir: PathBuf,
        #[arg(long, env = "ASR_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value_t = IpAddr::V4(Ipv4Addr::LOCALHOST))]
        bind: IpAddr,
        /// Weight file; defaults to model.asrw in the data directory.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Cutoff table; defaults to cutoffs.json in the data directory.
        #[arg(long)]
        cutoffs: Option<PathBuf>,
        /// Review percentage used when none has been persisted.
        #[arg(long, default_value_t = 2.0)]
        p: f64,
        #[arg(long, default_value_t = DEFAULT_MAX_TEXT_BYTES)]
        max_text_bytes: usize,
    },
    /// Generate a synthetic labeled corpus, and optionally a threshold corpus.
    Synth {
        #[arg(long)]
        normal: usize,
        #[arg(long)]
        asr: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Labeled JSONL output; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Size of an unlabeled threshold corpus to write alongside.
        #[arg(long, requires = "threshold_out")]
        threshold: Option<usize>,
        #[arg(long)]
        threshold_out: Option<PathBuf>,
        /// Alarming prevalence in the threshold corpus.
        #[arg(long, default_value_t = 0.005)]
        prevalence: f64,
    },
    /// Export a transformer weight file as an ONNX graph plus vocabulary.
    ExportOnnx {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(io::stderr)
        .init();
    match Cli::parse().command {
        Command::Train {
            scorer,
            corpus,
            out,
            config,
            embeddings,
        } => train(scorer, &corpus, &out, config.as_deref(), embeddings.as_deref()),
        Command::Calibrate {
            weights,
            threshold_corpus,
            percents,
            out,
        } => calibrate(&weights, &threshold_corpus, &percents, &out),
        Command::Evaluate {
            weights,
            cutoffs,
            validation,
            report,
        } => evaluate(&weights, &cutoffs, &validation, report.as_deref()),
        Command::Score { weights, text } => {
            let scorer = load_scorer(&weights).with_context(|| format!("loading {}", weights.display()))?;
            let scored = scorer.score_fragment(&text);
            println!("{}", serde_json::to_string_pretty(&scored)?);
            Ok(())
        }
        Command::Serve {
            data_dir,
            port,
            bind,
            weights,
            cutoffs,
            p,
            max_text_bytes,
        } => serve(data_dir, SocketAddr::new(bind, port), weights, cutoffs, p, max_text_bytes),
        Command::Synth {
            normal,
            asr,
            seed,
            out,
            threshold,
            threshold_out,
            prevalence,
        } => synth(normal, asr, seed, out.as_deref(), threshold.zip(threshold_out), prevalence),
        Command::ExportOnnx { weights, out } => {
            let w = WeightFile::load(&weights)?;
            let scorer = TransformerScorer::from_weights(&w)
                .with_context(|| format!("{} is not a transformer weight file", weights.display()))?;
            let handle = export_onnx(&scorer, &out)?;
            println!("wrote {} and {}", handle.graph.display(), handle.vocab.display());
            Ok(())
        }
    }
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let raw = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_slice(&raw).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn train(kind: ScorerArg, corpus: &Path, out: &Path, config: Option<&Path>, embeddings: Option<&Path>) -> Result<()> {
    let records = load_labeled(corpus).with_context(|| format!("loading {}", corpus.display()))?;
    let texts: Vec<&str> = records.iter().map(|r| r.text.as_str()).collect();
    let labels: Vec<u8> = records.iter().map(|r| r.label.value()).collect();
    tracing::info!(texts = texts.len(), positives = labels.iter().filter(|&&l| l == 1).count(), "training");
    if embeddings.is_some() && !matches!(kind, ScorerArg::Rnn) {
        bail!("--embeddings only applies to the rnn scorer");
    }
    let weights = match kind {
        ScorerArg::Bow => train_bow(&texts, &labels, &read_config::<BowConfig>(config)?)?.to_weights(),
        ScorerArg::Rnn => {
            let pretrained = embeddings.map(EmbeddingTable::load_glove).transpose()?;
            train_rnn(&texts, &labels, &read_config::<RnnTrainConfig>(config)?, pretrained.as_ref())?.to_weights()
        }
        ScorerArg::Transformer => {
            train_transformer(&texts, &labels, &read_config::<TransformerTrainConfig>(config)?)?.to_weights()
        }
    };
    weights.save(out)?;
    println!("{}", triage_core::scorer::scorer_from_weights(&weights)?.model_id());
    Ok(())
}

fn calibrate(weights: &Path, threshold: &Path, percents: &[f64], out: &Path) -> Result<()> {
    let scorer = load_scorer(weights)?;
    let corpus = ThresholdCorpus::load(threshold)?;
    if let Some(w) = calibration::sizing_warning(corpus.declared_size(), percents) {
        tracing::warn!("{w}");
        eprintln!("warning: {w}");
    }
    let table = calibration::calibrate(&scorer, &corpus, percents)?;
    table.save(out)?;
    for e in &table.entries {
        println!("p={:<5} cutoff={:.4} flagged={}", e.p, e.cutoff, e.flagged);
    }
    Ok(())
}

fn evaluate(weights: &Path, cutoffs: &Path, validation: &Path, report: Option<&Path>) -> Result<()> {
    let scorer = load_scorer(weights)?;
    let table = CutoffTable::load(cutoffs)?;
    if table.model != scorer.model_id() {
        bail!(
            "cutoffs in {} were calibrated for {}, not {}",
            cutoffs.display(),
            table.model,
            scorer.model_id()
        );
    }
    let validation = ValidationSet::load(validation)?;
    let scores = calibration::validation_scores(&scorer, &validation)?;
    let curve = EfficacyCurve::from_table(&table, &scores);
    let csv = curve.to_csv();
    match report {
        Some(path) => fs::write(path, &csv).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{csv}"),
    }
    if !curve.is_monotone() {
        eprintln!("warning: efficacy is not monotone in p");
    }
    Ok(())
}

fn serve(
    data_dir: PathBuf,
    addr: SocketAddr,
    weights: Option<PathBuf>,
    cutoffs: Option<PathBuf>,
    p: f64,
    max_text_bytes: usize,
) -> Result<()> {
    let engine = Arc::new(Engine::open(
        &data_dir,
        EngineConfig {
            max_text_bytes,
            ..Default::default()
        },
    )?);
    let weights = weights.unwrap_or_else(|| data_dir.join("model.asrw"));
    let cutoffs = cutoffs.unwrap_or_else(|| data_dir.join("cutoffs.json"));
    if weights.exists() && cutoffs.exists() {
        let scorer: Arc<dyn Scorer> = load_scorer(&weights)?;
        let table = CutoffTable::load(&cutoffs)?;
        let view = engine.configure(scorer, table, p)?;
        tracing::info!(p = view.active.p, cutoff = view.active.cutoff, "scoring enabled");
    } else {
        tracing::warn!(
            weights = %weights.display(),
            cutoffs = %cutoffs.display(),
            "no scorer configured; submissions will be refused with 503"
        );
    }
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(triage_service::serve(engine, max_text_bytes, addr))?;
    Ok(())
}

fn synth(
    normal: usize,
    asr: usize,
    seed: u64,
    out: Option<&Path>,
    threshold: Option<(usize, PathBuf)>,
    prevalence: f64,
) -> Result<()> {
    let records = generate_synthetic(normal, asr, seed)?;
    match out {
        Some(path) => triage_core::corpus::write_labeled(path, &records)?,
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write_labeled_to(&mut lock, &records)?;
            lock.flush()?;
        }
    }
    if let Some((n, path)) = threshold {
        let texts = generate_threshold_texts(n, prevalence, seed.wrapping_add(1))?;
        ThresholdCorpus::new(texts).save(&path)?;
    }
    Ok(())
}
