use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use kgbias::probe::{self, AttributeSet, ProbeFile};
use kgbias::report::{self, BiasReport, ReportFormat};
use kgbias::store::{load_triples, TripleFormat, TripleStore};
use kgbias::synth::{self, SynthSpec};
use kgbias::trainer::{self, TrainConfig};
use kgbias::{EmbeddingModel, Error};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(name = "kgbias", version, about = "Train knowledge-graph embeddings and audit them for profession bias")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a triple store directory from a TSV triple file.
    Ingest {
        #[arg(long)]
        triples: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train embeddings on a store and write a checkpoint.
    Train {
        #[arg(long)]
        store: PathBuf,
        /// `key = value` training config; missing keys take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Probe a trained model and write a ranked bias report.
    Audit {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        probe: PathBuf,
        /// CSV report path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        markdown: Option<PathBuf>,
        #[arg(long, default_value_t = report::DEFAULT_MIN_COUNT)]
        min_count: u64,
        #[arg(long, default_value_t = report::DEFAULT_TOP_K)]
        top_k: usize,
        /// Compare two entities directly instead of running the finetuning probe.
        #[arg(long, value_name = "A,B")]
        pairwise: Option<String>,
        /// Overrides the probe file's attribute_a.
        #[arg(long)]
        attribute_a: Option<String>,
        /// Overrides the probe file's attribute_b (comma list or `*`).
        #[arg(long)]
        attribute_b: Option<String>,
        /// Overrides the probe file's alpha.
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, default_value = "")]
        title: String,
    },
    /// Generate a synthetic planted-bias graph as a TSV triple file.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(if err.is_numeric() { EXIT_NUMERIC } else { EXIT_DATA })
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), Error> {
    std::fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Ingest { triples, out } => {
            let (store, stats) = load_triples(&triples, TripleFormat::Tsv)?;
            store.save(&out)?;
            println!(
                "read {} lines: {} unique triples, {} entities, {} relations",
                stats.lines,
                stats.unique_triples,
                store.entity_count(),
                store.relation_count()
            );
        }
        Command::Train { store, config, out } => {
            let store = TripleStore::load(&store)?;
            let config = match config {
                Some(path) => TrainConfig::read(&path)?,
                None => TrainConfig::default(),
            };
            let model = EmbeddingModel::for_store(config.model, config.dim, &store, config.seed)?;
            let (model, _) = trainer::train_model(model, &store, &config, |record| {
                println!("epoch {} mean_loss {:.6}", record.epoch, record.mean_loss);
            })?;
            model.save(&out)?;
        }
        Command::Audit {
            store,
            model,
            probe: probe_path,
            out,
            markdown,
            min_count,
            top_k,
            pairwise,
            attribute_a,
            attribute_b,
            alpha,
            title,
        } => {
            let store = TripleStore::load(&store)?;
            let model = EmbeddingModel::load(&model)?;
            let mut file = ProbeFile::read(&probe_path)?;
            if let Some(a) = attribute_a {
                file.attribute_a = a;
            }
            if let Some(b) = attribute_b {
                file.attribute_b = if b.trim() == "*" {
                    AttributeSet::AllOthers
                } else {
                    AttributeSet::Labels(b.split(',').map(|s| s.trim().to_string()).collect())
                };
            }
            if let Some(alpha) = alpha {
                file.alpha = alpha;
            }
            let spec = file.resolve(&store)?;
            let scores = match pairwise {
                Some(pair) => {
                    let (a, b) = pair
                        .split_once(',')
                        .ok_or_else(|| Error::Config(format!("--pairwise expects A,B, got '{pair}'")))?;
                    let a = store.entity(a.trim())?;
                    let b = store.entity(b.trim())?;
                    probe::pairwise_bias(&model, &store, a, b, &spec)?
                }
                None => probe::bias_scores(&model, &store, &spec)?,
            };
            let column_b = match &file.attribute_b {
                AttributeSet::Labels(labels) => format!("C_{}", labels.join("+")),
                AttributeSet::AllOthers => "C_rest".to_string(),
            };
            let report = BiasReport::from_scores(
                &store,
                &scores,
                title,
                format!("C_{}", file.attribute_a),
                column_b,
                min_count,
                top_k,
            )?;
            write_file(&out, &report::render_report(&report, ReportFormat::Csv))?;
            if let Some(path) = markdown {
                write_file(&path, &report::render_report(&report, ReportFormat::Markdown))?;
            }
            println!(
                "{} targets scored over {} humans, {} rows after filtering",
                scores.len(),
                spec.humans.len(),
                report.rows().len()
            );
        }
        Command::Synth { spec, out } => {
            let spec = SynthSpec::read(&spec)?;
            let store = synth::generate(&spec)?;
            let file = std::fs::File::create(&out).map_err(|source| Error::Io {
                path: out.clone(),
                source,
            })?;
            store.write_tsv(file).map_err(|source| Error::Io { path: out, source })?;
            println!("wrote {} triples", store.len());
        }
    }
    Ok(())
}
