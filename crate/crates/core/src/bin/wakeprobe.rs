use std::path::PathBuf;
use std::process::ExitCode;

use chrono::{DateTime, SecondsFormat, Utc};
use clap::{Parser, Subcommand};

use wakeprobe_core::distance::Variant;
use wakeprobe_core::workbench::{write_outputs, TuneOptions, VocabSource, Workbench, WorkbenchConfig, WorkbenchError};

#[derive(Parser)]
#[command(name = "wakeprobe", version, about = "Phonetic false-wake candidate generation and analysis")]
struct Cli {
    /// TOML configuration; relative paths inside it resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Omit the `# generated` header so outputs are byte-reproducible.
    #[arg(long, global = true)]
    no_timestamp: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rank candidates for one wake word and export the synthesis manifest.
    Rank {
        wake: String,
        /// Use n-grams from this transcript file instead of the dictionary.
        #[arg(long)]
        transcripts: Option<PathBuf>,
        /// N-gram orders used with --transcripts.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        orders: Vec<usize>,
        /// unweighted, simple or advanced; defaults to the configured model.
        #[arg(long)]
        model: Option<Variant>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Filter labelled triggers and grid-search the scale factors.
    Tune {
        triggers: PathBuf,
        /// standard, extended, or lo:hi:step.
        #[arg(long)]
        grid: Option<String>,
        #[arg(long)]
        filter_threshold: Option<usize>,
        /// Tune the advanced model against the configured weight table.
        #[arg(long)]
        advanced: bool,
        /// Also run leave-one-wake-word-out evaluation for this variant.
        #[arg(long)]
        loocv: Option<Variant>,
    },
    /// List dictionary-covered n-grams from a transcript file.
    Ngrams {
        transcripts: PathBuf,
        #[arg(long, default_value_t = 1)]
        n: usize,
    },
    /// Print the effective blocklist of a wake word.
    Blocklist { wake: String },
    /// Draw probe words for one phone and write the edit plan.
    ProbePlan {
        phone: String,
        #[arg(long, default_value_t = 100)]
        words: usize,
        #[arg(long, default_value_t = 10)]
        voices: u32,
    },
    /// Build or check a weight table.
    Weights {
        #[command(subcommand)]
        action: WeightsAction,
    },
    /// Analyze an on-device trigger study.
    Harness { events: PathBuf, verification: PathBuf, adjudication: PathBuf },
}

#[derive(Subcommand)]
enum WeightsAction {
    /// Aggregate and normalize probe scores into a table.
    Build {
        scores: PathBuf,
        #[arg(long, default_value_t = 10)]
        voices: u32,
    },
    /// Validate a stored table.
    Check { table: PathBuf },
}

fn run(cli: Cli) -> Result<(), WorkbenchError> {
    let mut config = match &cli.config {
        Some(path) => WorkbenchConfig::load(path)?,
        None => WorkbenchConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out = out.clone();
    }
    if let Command::Rank { k: Some(k), .. } = &cli.command {
        if *k == 0 {
            return Err(WorkbenchError::Config("k must be at least 1".into()));
        }
        config.k = *k;
    }
    let out_dir = config.out.clone();
    let mut bench = Workbench::new(config)?;
    let outputs = match cli.command {
        Command::Rank { wake, transcripts, orders, model, .. } => {
            let source = match transcripts {
                Some(path) => VocabSource::Transcripts { path, orders },
                None => VocabSource::Dictionary,
            };
            bench.rank(&wake, &source, model)?
        }
        Command::Tune { triggers, grid, filter_threshold, advanced, loocv } => {
            bench.tune(&triggers, &TuneOptions { grid, filter_threshold, advanced, loocv })?
        }
        Command::Ngrams { transcripts, n } => bench.ngrams(&transcripts, n)?,
        Command::Blocklist { wake } => bench.blocklist(&wake)?,
        Command::ProbePlan { phone, words, voices } => bench.probe_plan(&phone, words, voices)?,
        Command::Weights { action: WeightsAction::Build { scores, voices } } => bench.weights_build(&scores, voices)?,
        Command::Weights { action: WeightsAction::Check { table } } => {
            println!("{}", bench.weights_check(&table)?);
            return Ok(());
        }
        Command::Harness { events, verification, adjudication } => {
            bench.harness(&events, &verification, &adjudication)?
        }
    };
    let stamp = (!cli.no_timestamp)
        .then(|| DateTime::<Utc>::from(std::time::SystemTime::now()).to_rfc3339_opts(SecondsFormat::Secs, true));
    for path in write_outputs(&outputs, &out_dir, stamp.as_deref())? {
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
