//! Command-line front end. Exit codes: 0 success, 1 usage error, 2 runtime
//! error. Diagnostics go to stderr.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::agent::{evaluate, train, ActionPredictor, Dataset, Models, ScoreMode, TrainConfig, TrainLogRecord};
use crate::embedding::EmbeddingStore;
use crate::priors::{
    read_instructions, read_priors, write_priors, ExtractOptions, FallbackSource, FallbackVocabulary,
    LiveClient, LlmClient, PriorCache, PriorExtractor, PriorRecord, ReplayClient,
};
use crate::scoring::ScoringParams;
use crate::sim::{generate_world, MetricsReport, Split, SynthConfig, WorldBundle};

pub const SCORING_CKPT: &str = "scoring.ckpt";
pub const AGENT_CKPT: &str = "agent.ckpt";
pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const TRAIN_CONFIG: &str = "train_config.json";
pub const METRICS_FILE: &str = "metrics.json";

#[derive(Debug, Parser)]
#[command(name = "console", about = "Landmark-guided instruction-following navigation")]
struct Cli {
    /// Worker threads for evaluation.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LlmMode {
    Replay,
    Live,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReportFormat {
    Text,
    Structured,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScoreArg {
    Learned,
    /// All scores frozen at 1.
    Uniform,
    /// All scores frozen at 0.
    Zero,
    /// Landmark pipeline disabled.
    Off,
}

impl From<ScoreArg> for ScoreMode {
    fn from(s: ScoreArg) -> Self {
        match s {
            ScoreArg::Learned => ScoreMode::Learned,
            ScoreArg::Uniform => ScoreMode::Fixed(1.0),
            ScoreArg::Zero => ScoreMode::Fixed(0.0),
            ScoreArg::Off => ScoreMode::Off,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Eval,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Eval => Split::Eval,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Extract landmark and cooccurrence priors for an instructions file.
    GenPriors {
        #[arg(long)]
        instructions: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "replay")]
        llm: LlmMode,
        /// Recorded prompt/response pairs; required in replay mode.
        #[arg(long)]
        transcript: Option<PathBuf>,
        /// Persistent response cache.
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        n_co: usize,
        /// Priors file whose cooccurrence lists pad short responses.
        #[arg(long, requires = "fallback_store")]
        fallback_priors: Option<PathBuf>,
        #[arg(long, requires = "fallback_priors")]
        fallback_store: Option<PathBuf>,
    },
    /// Generate a synthetic world bundle.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// World configuration as JSON; missing fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train on the train split of a world bundle.
    Train {
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, value_enum)]
        scores: Option<ScoreArg>,
        /// Priors file to use instead of the bundle's own.
        #[arg(long)]
        priors: Option<PathBuf>,
    },
    /// Greedy evaluation of trained checkpoints.
    Eval {
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Metrics file; defaults to metrics.json in the checkpoint directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "eval")]
        split: SplitArg,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        scores: Option<ScoreArg>,
        #[arg(long)]
        priors: Option<PathBuf>,
        /// Also write per-episode step traces as JSON lines.
        #[arg(long)]
        traces: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        report: ReportFormat,
    },
    /// Summarize a training log.
    Report {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        report: ReportFormat,
        /// Directory for PNG plots of the loss and SR curves.
        #[arg(long)]
        plots: Option<PathBuf>,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

fn rt<E: std::fmt::Display>(ctx: &'static str) -> impl Fn(E) -> CliError {
    move |e| CliError::Runtime(format!("{ctx}: {e}"))
}

/// Runs the command line `argv` (program name first) and returns the exit
/// code.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("{first} (see --help)");
            return 1;
        }
    };
    let result = match cli.jobs {
        Some(0) => Err(CliError::Usage("error: --jobs must be at least 1".into())),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| run(cli.command)),
            Err(e) => Err(CliError::Runtime(format!("thread pool: {e}"))),
        },
        None => run(cli.command),
    };
    match result {
        Ok(()) => 0,
        Err(CliError::Usage(m)) => {
            eprintln!("{m}");
            1
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            2
        }
    }
}

fn require_file(p: &Path, what: &str) -> Result<(), CliError> {
    if p.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("error: {what} {} is not a file", p.display())))
    }
}

fn require_dir(p: &Path, what: &str) -> Result<(), CliError> {
    if p.is_dir() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("error: {what} {} is not a directory", p.display())))
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(p: &Path) -> Result<T, CliError> {
    let bytes = fs::read(p).map_err(rt("config"))?;
    serde_json::from_slice(&bytes).map_err(rt("config"))
}

fn write_json<T: Serialize>(p: &Path, v: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(v).map_err(rt("json"))?;
    s.push('\n');
    fs::write(p, s).map_err(rt("write"))
}

fn run(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::GenPriors {
            instructions,
            out,
            llm,
            transcript,
            cache,
            n_co,
            fallback_priors,
            fallback_store,
        } => {
            require_file(&instructions, "--instructions")?;
            let client: Box<dyn LlmClient> = match llm {
                LlmMode::Replay => {
                    let t = transcript
                        .ok_or_else(|| CliError::Usage("error: --llm replay needs --transcript".into()))?;
                    require_file(&t, "--transcript")?;
                    Box::new(ReplayClient::from_file(&t).map_err(rt("prior-generation"))?)
                }
                LlmMode::Live => Box::new(LiveClient::from_env(Duration::from_secs(60)).map_err(rt("prior-generation"))?),
            };
            let records = read_instructions(&instructions).map_err(rt("prior-generation"))?;
            let mut cache = match cache {
                Some(p) => PriorCache::open(p).map_err(rt("prior-generation"))?,
                None => PriorCache::in_memory(),
            };
            let fallback = match (fallback_priors, fallback_store) {
                (Some(p), Some(s)) => {
                    let recs = read_priors(&p).map_err(rt("prior-generation"))?;
                    let store = EmbeddingStore::load(&s).map_err(rt("embedding-store"))?;
                    Some((FallbackVocabulary::from_records(&recs, n_co), store))
                }
                _ => None,
            };
            let opts = ExtractOptions {
                n_co,
                fallback: fallback.as_ref().map(|(vocab, store)| FallbackSource {
                    vocab,
                    store,
                    use_photo_prompt: true,
                }),
                ..Default::default()
            };
            let mut ex = PriorExtractor::new(client.as_ref(), &mut cache, opts);
            let mut out_recs = Vec::with_capacity(records.len());
            for r in records {
                let priors = ex
                    .extract(&r.instruction, r.style)
                    .map_err(|e| CliError::Runtime(format!("prior-generation: {}: {e}", r.instruction_id)))?;
                out_recs.push(PriorRecord {
                    instruction_id: r.instruction_id,
                    priors,
                });
            }
            write_priors(&out, &out_recs).map_err(rt("prior-generation"))
        }
        Command::Synth { out, seed, config } => {
            let mut cfg: SynthConfig = match &config {
                Some(p) => {
                    require_file(p, "--config")?;
                    read_json(p)?
                }
                None => SynthConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let bundle = generate_world(&cfg).map_err(rt("sim-env"))?;
            bundle.save(&out).map_err(rt("sim-env"))
        }
        Command::Train {
            world,
            out,
            config,
            seed,
            epochs,
            scores,
            priors,
        } => {
            require_dir(&world, "--world")?;
            let mut cfg: TrainConfig = match &config {
                Some(p) => {
                    require_file(p, "--config")?;
                    read_json(p)?
                }
                None => TrainConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            if let Some(s) = scores {
                cfg.score_mode = s.into();
            }
            let bundle = WorldBundle::load(&world).map_err(rt("sim-env"))?;
            let ds = dataset(&bundle, priors.as_deref())?;
            let outcome = train(&ds, &cfg).map_err(rt("agent-trainer"))?;
            fs::create_dir_all(&out).map_err(rt("write"))?;
            outcome
                .models
                .scoring
                .save(out.join(SCORING_CKPT))
                .map_err(rt("scoring-enhancement"))?;
            outcome
                .models
                .predictor
                .save(out.join(AGENT_CKPT))
                .map_err(rt("agent-trainer"))?;
            write_json(&out.join(TRAIN_CONFIG), &cfg)?;
            let mut f = fs::File::create(out.join(TRAIN_LOG)).map_err(rt("write"))?;
            for r in &outcome.log {
                writeln!(f, "{}", serde_json::to_string(r).map_err(rt("json"))?).map_err(rt("write"))?;
            }
            Ok(())
        }
        Command::Eval {
            world,
            ckpt,
            out,
            split,
            seed,
            scores,
            priors,
            traces,
            report,
        } => {
            require_dir(&world, "--world")?;
            require_dir(&ckpt, "--ckpt")?;
            let cfg_path = ckpt.join(TRAIN_CONFIG);
            let mut cfg: TrainConfig = if cfg_path.is_file() {
                read_json(&cfg_path)?
            } else {
                TrainConfig::default()
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(s) = scores {
                cfg.score_mode = s.into();
            }
            let models = Models {
                scoring: ScoringParams::load(ckpt.join(SCORING_CKPT)).map_err(rt("scoring-enhancement"))?,
                predictor: ActionPredictor::load(ckpt.join(AGENT_CKPT)).map_err(rt("agent-trainer"))?,
            };
            let bundle = WorldBundle::load(&world).map_err(rt("sim-env"))?;
            let ds = dataset(&bundle, priors.as_deref())?;
            let split: Split = split.into();
            let (metrics, trace_list) = evaluate(&ds, &models, &cfg, split).map_err(rt("agent-trainer"))?;
            let doc = EvalReport {
                config: cfg,
                split,
                metrics,
            };
            write_json(&out.unwrap_or_else(|| ckpt.join(METRICS_FILE)), &doc)?;
            if let Some(p) = traces {
                let mut f = fs::File::create(p).map_err(rt("write"))?;
                for t in &trace_list {
                    writeln!(f, "{}", serde_json::to_string(t).map_err(rt("json"))?).map_err(rt("write"))?;
                }
            }
            match report {
                ReportFormat::Text => print!("{}", metrics_table(&doc.metrics)),
                ReportFormat::Structured => {
                    println!("{}", serde_json::to_string_pretty(&doc).map_err(rt("json"))?)
                }
            }
            Ok(())
        }
        Command::Report { log, report, plots } => {
            require_file(&log, "--log")?;
            let records = read_log(&log)?;
            match report {
                ReportFormat::Text => print!("{}", log_table(&records)),
                ReportFormat::Structured => {
                    println!("{}", serde_json::to_string_pretty(&log_summary(&records)).map_err(rt("json"))?)
                }
            }
            if let Some(dir) = plots {
                fs::create_dir_all(&dir).map_err(rt("write"))?;
                crate::plot::write_curves(&records, &dir).map_err(rt("report"))?;
            }
            Ok(())
        }
    }
}

fn dataset<'a>(bundle: &'a WorldBundle, priors: Option<&Path>) -> Result<Dataset<'a>, CliError> {
    let records = match priors {
        Some(p) => {
            require_file(p, "--priors")?;
            read_priors(p).map_err(rt("prior-generation"))?
        }
        None => bundle.priors.clone(),
    };
    Dataset::new(&bundle.world, &bundle.store, records).map_err(rt("agent-trainer"))
}

/// Structured eval output: config echo, split metrics, per-episode rows.
#[derive(Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: TrainConfig,
    pub split: Split,
    pub metrics: MetricsReport,
}

fn metrics_table(m: &MetricsReport) -> String {
    format!(
        "episodes  TL      NE      SR      SPL     CLS     nDTW    SDTW\n{:<9} {:<7.3} {:<7.3} {:<7.3} {:<7.3} {:<7.3} {:<7.3} {:.3}\n",
        m.n_episodes, m.tl, m.ne, m.sr, m.spl, m.cls, m.ndtw, m.sdtw
    )
}

fn read_log(p: &Path) -> Result<Vec<TrainLogRecord>, CliError> {
    let f = fs::File::open(p).map_err(rt("report"))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(rt("report"))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line).map_err(rt("report"))?);
        }
    }
    Ok(out)
}

fn log_table(records: &[TrainLogRecord]) -> String {
    let mut s = String::from("epoch  mean_il   mean_cs   mean_ct   eval_sr\n");
    for r in records {
        let sr = r.eval_sr.map_or("-".to_string(), |v| format!("{v:.3}"));
        s.push_str(&format!(
            "{:<6} {:<9.4} {:<9.4} {:<9.4} {}\n",
            r.epoch, r.mean_il, r.mean_cs, r.mean_ct, sr
        ));
    }
    s
}

fn log_summary(records: &[TrainLogRecord]) -> BTreeMap<&'static str, serde_json::Value> {
    let best = records
        .iter()
        .filter_map(|r| r.eval_sr.map(|s| (r.epoch, s)))
        .fold(None, |acc: Option<(usize, f64)>, (e, s)| match acc {
            Some((_, b)) if b >= s => acc,
            _ => Some((e, s)),
        });
    let mut m = BTreeMap::new();
    m.insert("epochs", serde_json::json!(records.len()));
    m.insert("final", serde_json::json!(records.last()));
    m.insert("best_eval_sr", serde_json::json!(best.map(|(e, s)| serde_json::json!({"epoch": e, "sr": s}))));
    m.insert("records", serde_json::json!(records));
    m
}
