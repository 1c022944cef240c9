use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fhre::data::{categorize_relations, dataset_stats, load_augmented, load_dataset, EtaSource, KgDataset, Split};
use fhre::evaluation::{evaluate, evaluate_by_category, TiePolicy};
use fhre::model::{param_count, rotate_into};
use fhre::training::{fit_with_log, TrainConfig};
use fhre::{Checkpoint, Error};
use log::info;
use serde_json::json;

#[derive(Parser)]
#[command(name = "fhre", version, about = "Lorentz-rotation knowledge-graph embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Entity, relation and split counts of a dataset directory.
    Stats {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Train a model and write the best-validation checkpoint.
    Train(TrainArgs),
    /// Filtered link-prediction metrics for a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Add per-category metrics (test split only).
        #[arg(long)]
        by_category: bool,
        #[arg(long, value_enum, default_value_t = Eta::Train)]
        eta_source: Eta,
        /// Defaults to the policy stored in the checkpoint.
        #[arg(long)]
        tie_policy: Option<TiePolicy>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Write entity points (and optionally rotated heads) as TSV.
    Export {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Needed for entity names and relation triples.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also emit rotated head points for triples of this relation.
        #[arg(long)]
        relation: Option<String>,
        /// Number of triples to rotate when `--relation` is given.
        #[arg(long, default_value_t = 1000)]
        n: usize,
    },
    /// Relation categories under both degree conventions.
    Categorize {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Parameter counts for a dataset directory or a known dataset name.
    Params {
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        dim: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Tsv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Eta {
    Train,
    All,
}

impl From<Eta> for EtaSource {
    fn from(e: Eta) -> Self {
        match e {
            Eta::Train => EtaSource::Train,
            Eta::All => EtaSource::All,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Start from a shipped preset (nations, codex-s, codex-m, fb15k-237, wn18rr, ...).
    #[arg(long)]
    preset: Option<String>,
    /// `key = value` config file, applied after the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's `dataset` key.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch log file; stderr if absent.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    neg: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    init_std: Option<f64>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    renorm_every: Option<u64>,
    #[arg(long)]
    tie_policy: Option<TiePolicy>,
}

impl TrainArgs {
    fn resolve(&self) -> anyhow::Result<TrainConfig> {
        let mut cfg = match &self.preset {
            Some(name) => TrainConfig::preset(name)?,
            None => TrainConfig::default(),
        };
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            cfg.apply_kv_text(&text)
                .with_context(|| format!("in config file {}", path.display()))?;
        }
        cfg.seed = self.seed;
        macro_rules! overlay {
            ($($field:ident),*) => { $( if let Some(v) = self.$field { cfg.$field = v; } )* };
        }
        overlay!(dim, lr, neg, batch, epochs, init_std, eval_every, renorm_every, tie_policy);
        if let Some(d) = &self.dataset {
            cfg.dataset = Some(d.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Dataset sizes as published, for counting parameters without the files.
const KNOWN_DATASETS: [(&str, u64, u64); 5] = [
    ("fb15k-237", 14_541, 227),
    ("wn18rr", 40_943, 11),
    ("codex-s", 2_034, 42),
    ("codex-m", 17_050, 51),
    ("nations", 14, 55),
];

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", describe(&err));
            ExitCode::from(exit_code(&err))
        }
    }
}

/// The error chain joined with ": ", skipping causes their parent already spells out.
fn describe(err: &anyhow::Error) -> String {
    let mut text = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if !text.ends_with(&msg) {
            if !text.is_empty() {
                text.push_str(": ");
            }
            text.push_str(&msg);
        }
    }
    text
}

/// 1 internal/numeric, 2 input or I/O, 3 checkpoint incompatibility.
fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<Error>() {
        return match e {
            Error::Incompatible(_) => 3,
            Error::Numeric(_) | Error::Internal(_) => 1,
            _ => 2,
        };
    }
    if err.downcast_ref::<io::Error>().is_some() {
        return 2;
    }
    1
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Stats { dataset, format } => cmd_stats(&dataset, format),
        Command::Train(args) => cmd_train(&args),
        Command::Eval {
            checkpoint,
            dataset,
            split,
            by_category,
            eta_source,
            tie_policy,
            workers,
        } => cmd_eval(&checkpoint, &dataset, split, by_category, eta_source.into(), tie_policy, workers),
        Command::Export {
            checkpoint,
            dataset,
            out,
            relation,
            n,
        } => cmd_export(&checkpoint, &dataset, &out, relation.as_deref(), n),
        Command::Categorize { dataset } => cmd_categorize(&dataset),
        Command::Params { dataset, dim } => cmd_params(&dataset, dim),
    }
}

fn print_json(value: &serde_json::Value) -> anyhow::Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn cmd_stats(dir: &Path, format: Format) -> anyhow::Result<()> {
    let stats = dataset_stats(&load_dataset(dir)?);
    match format {
        Format::Json => print_json(&serde_json::to_value(&stats)?),
        Format::Tsv => {
            println!("entities\trelations\ttrain\tvalid\ttest");
            println!(
                "{}\t{}\t{}\t{}\t{}",
                stats.entities, stats.relations, stats.train, stats.valid, stats.test
            );
            Ok(())
        }
    }
}

fn cmd_train(args: &TrainArgs) -> anyhow::Result<()> {
    let cfg = args.resolve()?;
    let Some(dir) = cfg.dataset.clone() else {
        bail!(Error::Config("no dataset: pass --dataset or set `dataset` in the config".into()));
    };
    for line in cfg.to_kv_text().lines() {
        info!("config: {line}");
    }
    let ds = load_augmented(&dir)?;
    info!(
        "dataset {}: {} entities, {} relations, {} augmented training triples",
        dir.display(),
        ds.n_entities(),
        ds.n_base_relations(),
        ds.augmented_train.len()
    );

    let mut log: Box<dyn Write> = match &args.log {
        Some(path) => Box::new(BufWriter::new(
            File::create(path).with_context(|| format!("creating {}", path.display()))?,
        )),
        None => Box::new(io::stderr()),
    };
    for line in cfg.to_kv_text().lines() {
        writeln!(log, "# {line}")?;
    }
    let result = fit_with_log(&cfg, &ds, &mut log)?;
    log.flush()?;
    result.best.save(&args.out)?;
    info!("wrote {}", args.out.display());

    let history: Vec<_> = result
        .history
        .iter()
        .map(|h| json!({"epoch": h.epoch, "loss": h.loss, "valid_mrr": h.metrics.mrr}))
        .collect();
    print_json(&json!({
        "checkpoint": args.out,
        "seed": cfg.seed,
        "best_epoch": result.best.epoch,
        "best_valid_mrr": result.best.best_valid_mrr,
        "final_loss": result.epoch_losses.last(),
        "history": history,
    }))
}

fn load_matching(checkpoint: &Path, dir: &Path) -> anyhow::Result<(Checkpoint, KgDataset)> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let ds = load_augmented(dir)?;
    ckpt.check_dataset(&ds)?;
    Ok((ckpt, ds))
}

fn cmd_eval(
    checkpoint: &Path,
    dir: &Path,
    split: Split,
    by_category: bool,
    eta_source: EtaSource,
    tie_policy: Option<TiePolicy>,
    workers: usize,
) -> anyhow::Result<()> {
    let (ckpt, ds) = load_matching(checkpoint, dir)?;
    let tie = tie_policy.unwrap_or(ckpt.config.tie_policy);
    let report = if by_category {
        if split != Split::Test {
            bail!(Error::Config("--by-category evaluates the test split only".into()));
        }
        evaluate_by_category(&ckpt.model, &ds, tie, eta_source, workers)?
    } else {
        evaluate(&ckpt.model, &ds, split, tie, workers)?
    };
    print_json(&report.to_json())
}

fn cmd_export(checkpoint: &Path, dir: &Path, out: &Path, relation: Option<&str>, n: usize) -> anyhow::Result<()> {
    let (ckpt, ds) = load_matching(checkpoint, dir)?;
    let model = &ckpt.model;
    let relation = relation
        .map(|name| {
            ds.relations
                .get(name)
                .ok_or_else(|| Error::Config(format!("unknown relation {name:?}")))
        })
        .transpose()?;

    let mut w = BufWriter::new(File::create(out).with_context(|| format!("creating {}", out.display()))?);
    let row = |w: &mut BufWriter<File>, label: &str, coords: &[f64], hb: f64, tb: f64| -> io::Result<()> {
        write!(w, "{label}")?;
        for x in coords {
            write!(w, "\t{x}")?;
        }
        writeln!(w, "\t{hb}\t{tb}")
    };
    write!(w, "entity")?;
    for i in 0..=model.dim() {
        write!(w, "\tx{i}")?;
    }
    writeln!(w, "\thead_bias\ttail_bias")?;
    for e in 0..model.n_entities() {
        let name = ds.entities.name(e).unwrap_or_default();
        row(&mut w, name, model.entity(e), model.head_bias[e], model.tail_bias[e])?;
    }
    let mut rotated_rows = 0;
    if let Some(r) = relation {
        let rel_name = ds.relations.name(r).unwrap_or_default();
        let mut rotated = vec![0.0; model.dim() + 1];
        for t in ds.train.iter().filter(|t| t.r == r).take(n) {
            rotate_into(model.entity(t.h), model.angles(r), &mut rotated);
            let label = format!("{}@{rel_name}", ds.entities.name(t.h).unwrap_or_default());
            row(&mut w, &label, &rotated, model.head_bias[t.h], model.tail_bias[t.h])?;
            rotated_rows += 1;
        }
    }
    w.flush()?;
    info!(
        "wrote {} entity rows and {rotated_rows} rotated rows to {}",
        model.n_entities(),
        out.display()
    );
    Ok(())
}

fn cmd_categorize(dir: &Path) -> anyhow::Result<()> {
    let ds = load_dataset(dir)?;
    print_json(&json!({
        "test_triples": ds.test.len(),
        "train": categorize_relations(&ds, EtaSource::Train),
        "all": categorize_relations(&ds, EtaSource::All),
    }))
}

fn cmd_params(dataset: &str, dim: u64) -> anyhow::Result<()> {
    let (entities, relations) = if Path::new(dataset).is_dir() {
        let ds = load_dataset(dataset)?;
        (ds.n_entities() as u64, ds.n_base_relations() as u64)
    } else {
        let (_, e, r) = KNOWN_DATASETS
            .iter()
            .find(|(name, _, _)| *name == dataset)
            .ok_or_else(|| {
                Error::Config(format!(
                    "{dataset:?} is neither a directory nor one of: {}",
                    KNOWN_DATASETS.map(|(n, _, _)| n).join(", ")
                ))
            })?;
        (*e, *r)
    };
    let count = param_count(entities, relations, dim)?;
    print_json(&json!({
        "entities": entities,
        "relations": relations,
        "dim": dim,
        "nominal": count.nominal,
        "actual": count.actual,
    }))
}
