//! `loopcompat` command line: corpus pipeline, training, evaluation and
//! audition helpers over a corpus directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use loopcompat::audio::mix_peak_normalized;
use loopcompat::audio::wav::{write_wav, WavFormat};
use loopcompat::eval::EvalSetConfig;
use loopcompat::neural::{history_csv, ModelCheckpoint, ModelKind, TrainConfig};
use loopcompat::store::{
    evaluate_corpus, ingest, rank_pool, resolve_pool, run_dedup, run_extract, run_featurize, run_negatives,
    run_pairs, run_pipeline, run_split, train_from_corpus, validate, Corpus, EvalTask, PipelineConfig, ScorerChoice,
    StageOutcome,
};
use loopcompat::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "loopcompat", version, about = "Loop mining, compatibility models and evaluation")]
struct Cli {
    /// Corpus directory.
    #[arg(long, global = true, default_value = "corpus")]
    corpus: PathBuf,
    /// Seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// File of key=value settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for per-song stages.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Keep at most this many loops per song after deduplication.
    #[arg(long, global = true)]
    max_loops_per_song: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Copy the songs of a JSONL manifest into the corpus as mono 44.1 kHz WAV.
    Ingest { manifest: PathBuf },
    /// Bar grids, factorization and candidate loop audio.
    Extract,
    /// Remove duplicate loops and refine the layouts.
    Dedup,
    /// Positive pairs from co-occurring loops.
    Pairs,
    /// Negative pairs for the train and val songs.
    Negatives {
        /// random, selected, reverse, shift, rearrange or equal.
        #[arg(long)]
        strategy: Option<String>,
        /// Negatives per positive.
        #[arg(long)]
        ratio: Option<f64>,
    },
    /// Cache log-mel maps of every loop.
    Featurize,
    /// Song-level train / val / test split.
    Split {
        /// Songs held out for ranking, one pair each.
        #[arg(long)]
        test_songs: Option<usize>,
    },
    /// Every pipeline stage in order.
    Run,
    /// Train a model on the split corpus.
    Train {
        #[arg(long, value_enum)]
        model: ModelArg,
        /// Negative strategy to train on (or `equal` for all).
        #[arg(long, default_value = "random")]
        neg: String,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Stack the two loops as channels instead of mixing them (cnn).
        #[arg(long)]
        channel_stack: bool,
        /// Checkpoint path; the epoch log goes next to it as CSV.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Classification and / or ranking evaluation.
    Eval {
        #[arg(long, value_enum, default_value = "both")]
        task: TaskArg,
        #[arg(long, value_enum)]
        scorer: ScorerArg,
        /// Checkpoint for the cnn and snn scorers.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Draw ranking distractors from the whole corpus.
        #[arg(long)]
        corpus_wide: bool,
        /// Report JSON path.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Rank a pool of loops against a query loop.
    Rank {
        #[arg(long)]
        query: String,
        /// train, val, test, all, or a file with one loop id per line.
        #[arg(long, default_value = "all")]
        pool: String,
        #[arg(long, value_enum)]
        scorer: ScorerArg,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
    /// Render two loops mixed together for listening.
    Mix {
        /// Two loop ids separated by a comma.
        #[arg(long)]
        pair: String,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Check the corpus for dangling references and malformed audio.
    Validate,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ModelArg {
    Cnn,
    Snn,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum TaskArg {
    Classify,
    Rank,
    Both,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq)]
enum ScorerArg {
    Cnn,
    Snn,
    Amu,
}

/// Pipeline and training settings: defaults, then the config file, then flags.
struct Settings {
    pipeline: PipelineConfig,
    train: TrainConfig,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| invalid(format!("bad value {value:?} for {key}")))
}

fn set_train(train: &mut TrainConfig, key: &str, value: &str) -> Result<bool> {
    match key {
        "epochs" => train.epochs = parse_value(key, value)?,
        "lr" => train.lr = parse_value(key, value)?,
        "batch_size" => train.batch_size = parse_value(key, value)?,
        "margin" => train.margin = parse_value(key, value)?,
        "channel_stack" => train.channel_stack = parse_value(key, value)?,
        "target_val_metric" => train.target_val_metric = Some(parse_value(key, value)?),
        "dropout" => train.shape.dropout = parse_value(key, value)?,
        _ => return Ok(false),
    }
    Ok(true)
}

impl Settings {
    fn load(cli: &Cli) -> Result<Self> {
        let mut s = Settings {
            pipeline: PipelineConfig::default(),
            train: TrainConfig::default(),
        };
        if let Some(path) = &cli.config {
            let text = fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            for (n, line) in text.lines().enumerate() {
                let line = line.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (key, value) = line
                    .split_once('=')
                    .ok_or_else(|| invalid(format!("{}:{}: expected key=value", path.display(), n + 1)))?;
                let (key, value) = (key.trim(), value.trim());
                let known = s.pipeline.set(key, value)? | set_train(&mut s.train, key, value)?;
                if !known {
                    return Err(invalid(format!("{}:{}: unknown setting {key}", path.display(), n + 1)));
                }
            }
        }
        if let Some(seed) = cli.seed {
            s.pipeline.seed = seed;
        }
        s.train.seed = s.pipeline.seed;
        if let Some(jobs) = cli.jobs {
            s.pipeline.jobs = jobs;
        }
        if cli.max_loops_per_song.is_some() {
            s.pipeline.max_loops_per_song = cli.max_loops_per_song;
        }
        Ok(s)
    }
}

fn report(outcome: &StageOutcome) {
    let note = if outcome.skipped { " (up to date)" } else { "" };
    println!("{}: {}{note}", outcome.stage, outcome.summary);
}

fn scorer_choice(scorer: ScorerArg, model: Option<&Path>) -> Result<ScorerChoice> {
    if scorer == ScorerArg::Amu {
        return Ok(ScorerChoice::Mashability);
    }
    let path = model.ok_or_else(|| invalid("the cnn and snn scorers need --model <checkpoint>"))?;
    let checkpoint = ModelCheckpoint::load(path)?;
    let expected = if scorer == ScorerArg::Cnn { ModelKind::Cnn } else { ModelKind::Snn };
    if checkpoint.kind != expected {
        return Err(invalid(format!("{} holds a {} model", path.display(), checkpoint.kind)));
    }
    Ok(ScorerChoice::Model(checkpoint))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<()> {
    let mut settings = Settings::load(&cli)?;
    let corpus = || Corpus::open(&cli.corpus);
    match cli.command {
        Command::Ingest { ref manifest } => {
            let songs = ingest(manifest, &Corpus::create(&cli.corpus)?)?;
            println!("ingested {} songs into {}", songs.len(), cli.corpus.display());
        }
        Command::Extract => report(&run_extract(&corpus()?, &settings.pipeline)?),
        Command::Dedup => report(&run_dedup(&corpus()?, &settings.pipeline)?),
        Command::Pairs => report(&run_pairs(&corpus()?, &settings.pipeline)?),
        Command::Featurize => report(&run_featurize(&corpus()?, &settings.pipeline)?),
        Command::Split { test_songs } => {
            if let Some(n) = test_songs {
                settings.pipeline.test_songs = n;
            }
            report(&run_split(&corpus()?, &settings.pipeline)?)
        }
        Command::Negatives { ref strategy, ratio } => {
            if let Some(s) = strategy {
                settings.pipeline.negative_strategy = s.parse()?;
            }
            if let Some(r) = ratio {
                settings.pipeline.neg_pos_ratio = r;
            }
            report(&run_negatives(&corpus()?, &settings.pipeline)?)
        }
        Command::Run => {
            for outcome in run_pipeline(&corpus()?, &settings.pipeline)? {
                report(&outcome);
            }
        }
        Command::Train {
            model,
            ref neg,
            epochs,
            lr,
            batch_size,
            channel_stack,
            ref out,
        } => {
            let corpus = corpus()?;
            let kind = match model {
                ModelArg::Cnn => ModelKind::Cnn,
                ModelArg::Snn => ModelKind::Snn,
            };
            let mut config = settings.train;
            config.negative_strategy = neg.parse::<loopcompat::negatives::StrategyChoice>()?.to_string();
            config.epochs = epochs.unwrap_or(config.epochs);
            config.lr = lr.unwrap_or(config.lr);
            config.batch_size = batch_size.unwrap_or(config.batch_size);
            config.channel_stack |= channel_stack;
            let path = out
                .clone()
                .unwrap_or_else(|| corpus.path(format!("models/{kind}-{}.ckpt", config.negative_strategy)));
            info!("training {kind} on {} negatives", config.negative_strategy);
            let checkpoint = train_from_corpus(&corpus, kind, &config)?;
            write_file(&path, &[])?;
            checkpoint.save(&path)?;
            let log = path.with_extension("csv");
            write_file(&log, history_csv(&checkpoint.history).as_bytes())?;
            println!(
                "saved {} (best epoch {}) and {}",
                path.display(),
                checkpoint.best_epoch,
                log.display()
            );
        }
        Command::Eval {
            task,
            scorer,
            ref model,
            corpus_wide,
            ref out,
        } => {
            let corpus = corpus()?;
            let choice = scorer_choice(scorer, model.as_deref())?;
            let task = match task {
                TaskArg::Classify => EvalTask::Classify,
                TaskArg::Rank => EvalTask::Rank,
                TaskArg::Both => EvalTask::Both,
            };
            let sets = EvalSetConfig {
                seed: settings.pipeline.seed,
                corpus_wide,
            };
            let report = evaluate_corpus(&corpus, choice, task, &sets)?;
            let path = out.clone().unwrap_or_else(|| {
                corpus.path(format!("reports/{}-{}.json", report.model, report.negative_strategy))
            });
            write_file(&path, format!("{}\n", report.to_json()).as_bytes())?;
            print!("{}", report.table());
            println!("report written to {}", path.display());
        }
        Command::Rank {
            ref query,
            ref pool,
            scorer,
            ref model,
            top,
        } => {
            let corpus = corpus()?;
            let choice = scorer_choice(scorer, model.as_deref())?;
            let pool = resolve_pool(&corpus, pool)?;
            for (i, (id, score)) in rank_pool(&corpus, choice, query, &pool)?.iter().take(top).enumerate() {
                println!("{:>4}  {score:>10.6}  {id}", i + 1);
            }
        }
        Command::Mix { ref pair, ref out } => {
            let corpus = corpus()?;
            let (a, b) = pair
                .split_once(',')
                .ok_or_else(|| invalid(format!("--pair expects two loop ids separated by a comma, got {pair:?}")))?;
            let loops = corpus.loops()?;
            let find = |id: &str| {
                loops
                    .iter()
                    .find(|l| l.loop_id == id.trim())
                    .ok_or_else(|| invalid(format!("loop {id} is not in the corpus")))
            };
            let mixed = mix_peak_normalized(&corpus.loop_audio(find(a)?)?, &corpus.loop_audio(find(b)?)?)?;
            write_wav(out, &mixed, WavFormat::Float32)?;
            println!("wrote {}", out.display());
        }
        Command::Validate => {
            let problems = validate(&corpus()?)?;
            if !problems.is_empty() {
                for p in &problems {
                    eprintln!("{p}");
                }
                return Err(invalid(format!("{} problems found", problems.len())));
            }
            println!("corpus is consistent");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
