use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, OnceLock};

use clap::{Args, Parser, Subcommand};
use log::warn;

use rolerel::corpus::{build_corpus, parse_triples, ContextualTriple};
use rolerel::embedding::{train_skipgram, EmbeddingModel};
use rolerel::eval::{
    evaluate, run_protocol, write_report_csv, write_report_json, FractionRun, Protocol,
};
use rolerel::pipeline::{rank, train_role_models, write_scores, ModelBundle, ScoredTriple};
use rolerel::{Error, RunConfig};

const EMBEDDINGS_FILE: &str = "embeddings.txt";
const SCORES_FILE: &str = "scores.jsonl";
const REPORT_JSON: &str = "report.json";
const REPORT_CSV: &str = "report.csv";

fn defaults_help() -> &'static str {
    static HELP: OnceLock<String> = OnceLock::new();
    HELP.get_or_init(|| {
        format!(
            "Configuration keys (config file `key = value`, or --set key=value) and defaults:\n{}\n\
             Module seeds derive from --seed. With --threads > 1, embedding training\n\
             runs lock-free workers and is no longer reproducible run to run.",
            RunConfig::describe_defaults()
        )
    })
}

#[derive(Parser)]
#[command(
    name = "rolerel",
    version,
    about = "Score the role relevance of contextual entity triples"
)]
#[command(after_help = defaults_help())]
struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; overrides the config file.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory (default: current directory; `score` prints to stdout when absent).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set forest.n_trees=50`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train word embeddings on the context sentences of every given file.
    TrainEmbeddings {
        /// Triple files (labeled or not); all sentences are pooled.
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Train one random forest per role.
    Train(TrainArgs),
    /// Score and rank triples.
    Score {
        #[arg(long)]
        triples: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        /// Emit one ranked block per role instead of a single global ranking.
        #[arg(long)]
        per_role: bool,
    },
    /// Split, retrain and evaluate at each training fraction.
    Evaluate {
        #[command(flatten)]
        train: TrainArgs,
        /// Comma-separated training fractions, e.g. 0.1,0.5,0.9.
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
        /// Also evaluate these trained models on the whole labeled file.
        #[arg(long)]
        models: Option<PathBuf>,
    },
    /// Nearest neighbors of seed words in the embedding space.
    Neighbors {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(short, default_value_t = 3)]
        k: usize,
        #[arg(required = true)]
        words: Vec<String>,
    },
    /// Run train-embeddings, train, score and evaluate in one go.
    Pipeline {
        #[arg(long)]
        labeled: PathBuf,
        /// Extra unlabeled triples whose sentences join the embedding corpus.
        #[arg(long)]
        unlabeled: Vec<PathBuf>,
        /// Triples to score (default: the unlabeled files, else the labeled file).
        #[arg(long)]
        score: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    labeled: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
}

#[derive(Debug)]
enum CliError {
    /// Bad invocation, bad configuration or unreadable/unwritable path.
    Usage(String),
    /// The inputs were read but the run failed.
    Failed(String),
}

impl CliError {
    fn at(path: &Path, err: Error) -> CliError {
        let msg = format!("{}: {err}", path.display());
        match err {
            Error::Io(_) | Error::Config(_) => CliError::Usage(msg),
            _ => CliError::Failed(msg),
        }
    }
}

impl From<Error> for CliError {
    fn from(err: Error) -> CliError {
        match err {
            Error::Io(_) | Error::Config(_) => CliError::Usage(err.to_string()),
            _ => CliError::Failed(err.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn read_triples(path: &Path) -> CliResult<Vec<ContextualTriple>> {
    let file = File::open(path).map_err(|e| CliError::at(path, e.into()))?;
    parse_triples(BufReader::new(file)).map_err(|e| CliError::at(path, e))
}

fn read_embeddings(path: &Path) -> CliResult<Arc<EmbeddingModel>> {
    let file = File::open(path).map_err(|e| CliError::at(path, e.into()))?;
    let model =
        EmbeddingModel::read_text(BufReader::new(file)).map_err(|e| CliError::at(path, e))?;
    Ok(Arc::new(model))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::at(parent, e.into()))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::at(path, e.into()))
}

fn write_file(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> rolerel::Result<()>,
) -> CliResult<()> {
    let mut w = create(path)?;
    f(&mut w).map_err(|e| CliError::at(path, e))?;
    w.flush().map_err(|e| CliError::at(path, e.into()))
}

fn load_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path).map_err(|e| CliError::at(path, e.into()))?;
        cfg.apply_text(&text).map_err(|e| CliError::at(path, e))?;
    }
    for kv in &cli.overrides {
        cfg.apply_override(kv)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = cli.threads {
        cfg.threads = threads;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train_embeddings(cfg: &RunConfig, triples: &[ContextualTriple]) -> CliResult<EmbeddingModel> {
    let corpus = build_corpus(triples);
    let model = train_skipgram(&corpus, &cfg.embedding_config())?;
    let stats = model.stats();
    println!(
        "vocabulary: {} words, sentences: {}, epochs: {}, final mean loss: {:.6}",
        model.vocab().len(),
        corpus.len(),
        stats.epoch_mean_loss.len(),
        stats.epoch_mean_loss.last().copied().unwrap_or(0.0)
    );
    Ok(model.finalize())
}

fn train_models(
    cfg: &RunConfig,
    labeled: &[ContextualTriple],
    emb: Arc<EmbeddingModel>,
    dir: &Path,
) -> CliResult<()> {
    let bundle = train_role_models(labeled, emb, &cfg.forest_config())?;
    bundle.save_dir(dir).map_err(|e| CliError::at(dir, e))?;
    println!(
        "trained {} role classifier(s) into {}",
        bundle.classifiers.len(),
        dir.display()
    );
    for s in &bundle.skipped {
        println!("skipped role {}: {}", s.role, s.reason);
    }
    Ok(())
}

fn ranked_output(scored: Vec<ScoredTriple>, per_role: bool) -> Vec<ScoredTriple> {
    if !per_role {
        return rank(scored);
    }
    let mut blocks: std::collections::BTreeMap<String, Vec<ScoredTriple>> = Default::default();
    for s in scored {
        blocks.entry(s.triple.role.to_string()).or_default().push(s);
    }
    blocks.into_values().flat_map(rank).collect()
}

fn evaluate_fractions(
    cfg: &RunConfig,
    labeled: &[ContextualTriple],
    emb: Arc<EmbeddingModel>,
    fractions: Vec<f64>,
    out: &Path,
) -> CliResult<Vec<FractionRun>> {
    let protocol = Protocol {
        fractions,
        forest: cfg.forest_config(),
        split_seed: cfg.split_seed(),
        threshold: cfg.threshold,
        gains: cfg.gains,
    };
    let runs = run_protocol(labeled, emb, &protocol)?;
    write_file(&out.join(REPORT_JSON), |w| write_report_json(w, &runs))?;
    write_file(&out.join(REPORT_CSV), |w| write_report_csv(w, &runs))?;
    for run in &runs {
        for r in run
            .evaluation
            .roles
            .iter()
            .chain([&run.evaluation.aggregate])
        {
            println!(
                "fraction {:<4} {:<16} P {:.4}  R {:.4}  F1 {:.4}  NDCG {:.4}",
                run.fraction, r.role, r.precision, r.recall, r.f1, r.ndcg
            );
        }
    }
    Ok(runs)
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = load_config(&cli)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build_global()
        .map_err(|e| CliError::Failed(e.to_string()))?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));

    match cli.command {
        Command::TrainEmbeddings { files } => {
            let mut triples = Vec::new();
            for f in &files {
                triples.extend(read_triples(f)?);
            }
            let model = train_embeddings(&cfg, &triples)?;
            let path = out.join(EMBEDDINGS_FILE);
            write_file(&path, |w| model.write_text(w))?;
            println!("wrote {}", path.display());
        }
        Command::Train(args) => {
            let emb = read_embeddings(&args.embeddings)?;
            let labeled = read_triples(&args.labeled)?;
            train_models(&cfg, &labeled, emb, &out)?;
        }
        Command::Score {
            triples,
            models,
            embeddings,
            per_role,
        } => {
            let emb = read_embeddings(&embeddings)?;
            let bundle =
                ModelBundle::load_dir(&models, emb).map_err(|e| CliError::Failed(e.to_string()))?;
            let triples = read_triples(&triples)?;
            let ranked = ranked_output(bundle.score_triples(&triples)?, per_role);
            match &cli.out {
                Some(dir) => write_file(&dir.join(SCORES_FILE), |w| write_scores(w, &ranked))?,
                None => {
                    let stdout = io::stdout();
                    let mut lock = stdout.lock();
                    write_scores(&mut lock, &ranked)?;
                    lock.flush().map_err(|e| CliError::Failed(e.to_string()))?;
                }
            }
        }
        Command::Evaluate {
            train,
            fractions,
            models,
        } => {
            let emb = read_embeddings(&train.embeddings)?;
            let labeled = read_triples(&train.labeled)?;
            if let Some(bad) = labeled.iter().find(|t| t.label.is_none()) {
                return Err(CliError::Usage(format!(
                    "{}: triple {:?} has no label",
                    train.labeled.display(),
                    bad.id
                )));
            }
            let fractions = fractions.unwrap_or_else(|| cfg.fractions.clone());
            if let Some(bad) = fractions.iter().find(|f| !(**f > 0.0 && **f < 1.0)) {
                return Err(CliError::Usage(format!(
                    "fraction {bad} must lie strictly between 0 and 1"
                )));
            }
            if let Some(dir) = models {
                let bundle = ModelBundle::load_dir(&dir, emb.clone())
                    .map_err(|e| CliError::Failed(e.to_string()))?;
                let report = evaluate(&bundle, &labeled, cfg.threshold, &cfg.gains)?;
                write_file(&out.join("report-models.json"), |w| {
                    serde_json::to_writer_pretty(&mut *w, &report)?;
                    w.write_all(b"\n")?;
                    Ok(())
                })?;
            }
            evaluate_fractions(&cfg, &labeled, emb, fractions, &out)?;
        }
        Command::Neighbors {
            embeddings,
            k,
            words,
        } => {
            if k == 0 {
                return Err(CliError::Usage("k must be positive".into()));
            }
            let emb = read_embeddings(&embeddings)?;
            let width = words.iter().map(|w| w.len()).max().unwrap_or(4).max(4);
            let mut ok = 0;
            println!("{:<width$}  top-{k} nearest neighbors", "seed");
            for word in &words {
                match emb.nearest_neighbors(word, k) {
                    Ok(nn) => {
                        ok += 1;
                        let cells: Vec<String> =
                            nn.iter().map(|(w, s)| format!("{w} ({s:.4})")).collect();
                        println!("{word:<width$}  {}", cells.join(", "));
                    }
                    Err(e) => warn!("{e}"),
                }
            }
            if ok == 0 {
                return Err(CliError::Failed(
                    "none of the seed words is in the vocabulary".into(),
                ));
            }
        }
        Command::Pipeline {
            labeled,
            unlabeled,
            score,
        } => {
            let labeled_triples = read_triples(&labeled)?;
            let mut extra = Vec::new();
            for f in &unlabeled {
                extra.extend(read_triples(f)?);
            }
            let to_score = match &score {
                Some(p) => read_triples(p)?,
                None if !extra.is_empty() => extra.clone(),
                None => labeled_triples.clone(),
            };
            let mut pooled = labeled_triples.clone();
            pooled.extend(extra);
            if score.is_some() {
                pooled.extend(to_score.iter().cloned());
            }

            let model = train_embeddings(&cfg, &pooled)?;
            let emb_path = out.join(EMBEDDINGS_FILE);
            write_file(&emb_path, |w| model.write_text(w))?;
            let emb = read_embeddings(&emb_path)?;

            let model_dir = out.join("models");
            train_models(&cfg, &labeled_triples, emb.clone(), &model_dir)?;
            let bundle = ModelBundle::load_dir(&model_dir, emb.clone())
                .map_err(|e| CliError::Failed(e.to_string()))?;
            let ranked = rank(bundle.score_triples(&to_score)?);
            write_file(&out.join(SCORES_FILE), |w| write_scores(w, &ranked))?;

            let fractions = cfg.fractions.clone();
            evaluate_fractions(&cfg, &labeled_triples, emb, fractions, &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Failed(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
