//! `proxsense`: batch driver for generating, preparing, training, scoring and
//! diagnosing proximity datasets.
//!
//! Exit status: 0 on success, 2 for usage or configuration errors, 3 when a
//! lenient run finished but skipped unparseable records, 1 for anything else.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use proxsense::analysis::{emit_scatter, nn_gap, optimal_subset_indices, pca_fit};
use proxsense::baselines::ForestMode;
use proxsense::config::{Key, Overrides, RunConfig, CONFIG_ENV};
use proxsense::container::write_atomic;
use proxsense::error::Error;
use proxsense::eval::{
    ablate, report_csv, run_experiment, score_row, set_name, to_csv, Fitted, ModeComparison, ModelChoice,
    ReportRow,
};
use proxsense::ingest::{assemble, load_dir, ParseReport, SplitRule};
use proxsense::pipeline::{self, Prepared};
use proxsense::synth::{generate, write_sites};
use proxsense::types::{Representation, Sample, SensorKind};

const MODEL_FILE: &str = "model.pxc";

#[derive(Debug, Parser)]
#[command(name = "proxsense", version, about = "Proximity classification from BLE RSSI and phone sensor logs")]
struct Cli {
    #[command(flatten)]
    flags: Flags,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write synthetic log/manifest pairs, one per site, into the output directory
    Gen,
    /// Parse raw logs from the data directory, featurize, and write train.pxc, eval.pxc and parse_report.toml
    Prep,
    /// Fit the configured model on prepared data and write model.pxc (and history.csv for networks)
    Train,
    /// Score the model.pxc in the output directory on the prepared eval split and write report.csv
    Eval,
    /// Re-featurize raw data for each sensor/metadata subset, train and score, and write ablation.csv
    Ablate,
    /// PCA scatter plots, nearest-neighbor gap and optimal training subset for prepared data
    /// (flat features, or RSSI histograms with --representation histogram)
    Analyze,
    /// Run the model grid over every configured train/eval pairing and write bench.csv
    Bench,
}

#[derive(Debug, Args)]
struct Flags {
    /// TOML config file; command-line flags override its values
    #[arg(long, global = true, env = CONFIG_ENV, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed for every random stream (required)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Input directory: raw logs for prep, ablate and bench; prepared data for train, eval and analyze
    #[arg(long, global = true, value_name = "DIR")]
    data_dir: Option<PathBuf>,
    /// Output directory for generated files and reports
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// Model kind (feedforward, gru, lstm, conv1d, conv1d-dilated, conv1d-maxpool, conv-gru,
    /// conv-gru-nolinear) or baseline (naive-bayes, rf-classifier, rf-regressor)
    #[arg(long, global = true)]
    model: Option<String>,
    /// Named training preset, e.g. conv1d-2
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Comma-separated site names used for training
    #[arg(long, global = true, value_delimiter = ',', value_name = "SITES")]
    train_site: Option<Vec<String>>,
    /// Comma-separated site names used for evaluation
    #[arg(long, global = true, value_delimiter = ',', value_name = "SITES")]
    eval_site: Option<Vec<String>>,
    /// Comma-separated sensor kinds to keep (others are treated as missing)
    #[arg(long, global = true, value_delimiter = ',', value_name = "KINDS")]
    sensors: Option<Vec<SensorKind>>,
    /// Drop the one-hot metadata block from the features
    #[arg(long, global = true)]
    no_metadata: bool,
    /// Input representation for the model
    #[arg(
        long,
        global = true,
        value_parser = PossibleValuesParser::new(["timeseries", "flat", "histogram"])
            .map(|s| s.parse::<Representation>().expect("restricted to valid names"))
    )]
    representation: Option<Representation>,
    /// Largest distance in meters counted as a contact (inclusive)
    #[arg(long, global = true, value_name = "METERS")]
    contact_threshold: Option<f64>,
    /// Abort on the first malformed log or manifest record
    #[arg(long, global = true)]
    strict: bool,
    /// Override the preset's number of training epochs
    #[arg(long, global = true)]
    epochs: Option<usize>,
}

impl Flags {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            data_dir: self.data_dir.clone(),
            out_dir: self.out_dir.clone(),
            model: self.model.clone(),
            preset: self.preset.clone(),
            train_site: self.train_site.clone(),
            eval_site: self.eval_site.clone(),
            sensors: self.sensors.clone(),
            no_metadata: self.no_metadata,
            representation: self.representation,
            contact_threshold: self.contact_threshold,
            strict: self.strict,
            epochs: self.epochs,
        }
    }
}

/// Finished successfully, or finished with skipped records.
enum Outcome {
    Clean,
    SkippedRecords(usize),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Outcome::Clean) => ExitCode::SUCCESS,
        Ok(Outcome::SkippedRecords(n)) => {
            eprintln!("warning: {n} malformed record(s) skipped; see parse_report.toml");
            ExitCode::from(3)
        }
        Err(e) => {
            report_error(&e);
            ExitCode::from(if matches!(e, Error::Config(_)) { 2 } else { 1 })
        }
    }
}

fn report_error(e: &Error) {
    let kind = match e {
        Error::Domain(_) => "domain",
        Error::Shape(_) => "shape",
        Error::Config(_) => "config",
        Error::Parse { .. } | Error::ParseErrors(_) => "parse",
        Error::OrphanIntervals(_) => "orphan-intervals",
        Error::Manifest(_) => "manifest",
        Error::OutOfVocabulary { .. } => "out-of-vocabulary",
        Error::Container(_) => "container",
        Error::Io { .. } => "io",
    };
    eprintln!("error[{kind}]: {e}");
    if let Error::ParseErrors(all) = e {
        for inner in all {
            eprintln!("  - {inner}");
        }
    }
}

fn run(cli: &Cli) -> Result<Outcome, Error> {
    let mut cfg = match &cli.flags.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply(cli.flags.overrides());
    let needed: &[Key] = match cli.command {
        Command::Gen => &[Key::Seed, Key::OutDir],
        Command::Prep | Command::Analyze | Command::Bench => &[Key::Seed, Key::DataDir, Key::OutDir],
        Command::Train | Command::Ablate => &[Key::Seed, Key::DataDir, Key::OutDir, Key::Model],
        Command::Eval => &[Key::Seed, Key::DataDir, Key::OutDir],
    };
    cfg.require(needed)?;
    if let (true, Some(dir)) = (needed.contains(&Key::DataDir), &cfg.data_dir) {
        if !dir.is_dir() {
            return Err(Error::Config(format!("data_dir {} is not a directory", dir.display())));
        }
    }
    let out = cfg.out_dir()?.to_path_buf();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    match cli.command {
        Command::Gen => cmd_gen(&cfg, &out),
        Command::Prep => cmd_prep(&cfg, &out),
        Command::Train => cmd_train(&cfg, &out),
        Command::Eval => cmd_eval(&cfg, &out),
        Command::Ablate => cmd_ablate(&cfg, &out),
        Command::Analyze => cmd_analyze(&cfg, &out),
        Command::Bench => cmd_bench(&cfg, &out),
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    write_atomic(path, text.as_bytes())?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_gen(cfg: &RunConfig, out: &Path) -> Result<Outcome, Error> {
    let sites = generate(&cfg.synth_config()?)?;
    write_sites(&sites, out)?;
    for s in &sites {
        println!("wrote {} ({} intervals)", out.join(format!("{}.log", s.site)).display(), s.manifest.len());
    }
    Ok(Outcome::Clean)
}

#[derive(Serialize)]
struct ParseSummary {
    records: usize,
    parsed: usize,
    dropped_out_of_window: usize,
    errored: usize,
    orphaned: usize,
    empty_intervals: Vec<String>,
    errors: Vec<String>,
}

impl From<&ParseReport> for ParseSummary {
    fn from(r: &ParseReport) -> Self {
        Self {
            records: r.records,
            parsed: r.parsed,
            dropped_out_of_window: r.dropped_out_of_window,
            errored: r.errored,
            orphaned: r.orphaned,
            empty_intervals: r.empty_intervals.clone(),
            errors: r.errors.iter().map(ToString::to_string).collect(),
        }
    }
}

fn outcome(report: &ParseReport) -> Outcome {
    if report.errors.is_empty() {
        Outcome::Clean
    } else {
        for e in &report.errors {
            eprintln!("  - {e}");
        }
        Outcome::SkippedRecords(report.errored + report.orphaned)
    }
}

/// Loads raw logs and writes `parse_report.toml` next to the other outputs.
fn ingest(cfg: &RunConfig, out: &Path, rule: &SplitRule) -> Result<(proxsense::ingest::SplitIntervals, ParseReport), Error> {
    let (intervals, report) = load_dir(cfg.data_dir()?, cfg.strict())?;
    let text = toml::to_string(&ParseSummary::from(&report)).map_err(|e| Error::Config(e.to_string()))?;
    write_text(&out.join("parse_report.toml"), &text)?;
    Ok((assemble(intervals, rule)?, report))
}

fn cmd_prep(cfg: &RunConfig, out: &Path) -> Result<Outcome, Error> {
    let opts = cfg.feature_options()?;
    let (split, report) = ingest(cfg, out, &cfg.split_rule()?)?;
    let prepared = pipeline::prepare(&split, &opts)?;
    pipeline::save(&prepared, out)?;
    println!(
        "wrote {} ({} train, {} eval samples)",
        out.join(pipeline::TRAIN_FILE).display(),
        prepared.train.len(),
        prepared.eval.len()
    );
    Ok(outcome(&report))
}

fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<Outcome, Error> {
    let choice = cfg.model_choice()?;
    let repr = cfg.representation_for(&choice);
    let prepared = pipeline::load(cfg.data_dir()?)?;
    let e = run_experiment(&choice, repr, &prepared.train, &prepared.eval, &cfg.contact_rule()?, cfg.seed()?)?;
    let checkpoint = e.fitted.to_tagged_container(&e.row.model, repr)?;
    write_atomic(&out.join(MODEL_FILE), &checkpoint.encode())?;
    println!("wrote {}", out.join(MODEL_FILE).display());
    if let Some(h) = e.fitted.history() {
        write_text(&out.join("history.csv"), &h.to_csv())?;
    }
    Ok(Outcome::Clean)
}

fn cmd_eval(cfg: &RunConfig, out: &Path) -> Result<Outcome, Error> {
    let container = proxsense::container::Container::read(&out.join(MODEL_FILE))?;
    let (mut fitted, tag) = Fitted::from_tagged_container(&container)?;
    let prepared = pipeline::load(cfg.data_dir()?)?;
    let preds = fitted.predict(&prepared.eval.representation(tag.representation))?;
    let row = score_row(
        &tag.label,
        &set_name(&prepared.train),
        &set_name(&prepared.eval),
        &preds,
        &prepared.eval.timeseries.labels(),
        &cfg.contact_rule()?,
    )?;
    println!("{}: ndcf {:.4}, accuracy {:.4}", row.model, row.ndcf, row.accuracy);
    write_text(&out.join("report.csv"), &report_csv(&[row])?)?;
    Ok(Outcome::Clean)
}

fn cmd_ablate(cfg: &RunConfig, out: &Path) -> Result<Outcome, Error> {
    let choice = cfg.model_choice()?;
    let repr = cfg.representation_for(&choice);
    let (split, report) = ingest(cfg, out, &cfg.split_rule()?)?;
    let rows = ablate(
        &cfg.ablation_specs(),
        &split,
        &cfg.feature_options()?,
        &choice,
        repr,
        &cfg.contact_rule()?,
        cfg.seed()?,
    )?;
    write_text(&out.join("ablation.csv"), &to_csv(&rows)?)?;
    Ok(outcome(&report))
}

fn cmd_analyze(cfg: &RunConfig, out: &Path) -> Result<Outcome, Error> {
    let Prepared { train, eval, options } = pipeline::load(cfg.data_dir()?)?;
    if cfg.analysis.pca_components < 2 {
        return Err(Error::Config("analysis.pca_components must be at least 2 for the scatter plots".into()));
    }
    let titles = [set_name(&train), set_name(&eval)];
    let indices = match cfg.representation.unwrap_or(Representation::Flat) {
        Representation::Histogram => {
            analyze_samples(cfg, out, &train.histogram.samples, &eval.histogram.samples, &titles)?
        }
        _ => analyze_samples(cfg, out, &train.flat().samples, &eval.flat().samples, &titles)?,
    };
    let subset = train.select(&indices)?;
    let container = pipeline::to_container(&subset, &options)?;
    write_atomic(&out.join("optimal_subset.pxc"), &container.encode())?;
    println!("wrote {} ({} samples)", out.join("optimal_subset.pxc").display(), subset.len());
    Ok(Outcome::Clean)
}

/// PCA scatter and variance table, nn-gap report; returns the optimal-subset indices into `train`.
fn analyze_samples<S: Sample>(
    cfg: &RunConfig,
    out: &Path,
    train: &[S],
    eval: &[S],
    titles: &[String; 2],
) -> Result<Vec<usize>, Error> {
    let rows: Vec<&[f64]> = train.iter().map(|s| s.features()).collect();
    let pca = pca_fit(&rows, cfg.analysis.pca_components)?;

    let mut variance = String::from("component,eigenvalue,explained_fraction\n");
    for (i, ev) in pca.eigenvalues.iter().enumerate() {
        variance.push_str(&format!("{},{},{}\n", i + 1, ev, ev / pca.total_variance));
    }
    write_text(&out.join("pca_variance.csv"), &variance)?;

    for (stem, title, samples) in [("pca_train", &titles[0], train), ("pca_eval", &titles[1], eval)] {
        let points = samples
            .iter()
            .map(|s| {
                let z = pca.project(s.features())?;
                Ok((z[0], z[1], s.label()))
            })
            .collect::<Result<Vec<_>, Error>>()?;
        emit_scatter(&points, out, stem, &format!("{title} ({} samples)", points.len()))?;
        println!("wrote {}", out.join(format!("{stem}.svg")).display());
    }

    let gap = nn_gap(train, eval)?;
    write_text(&out.join("nn_gap.txt"), &gap.to_text())?;
    optimal_subset_indices(train, eval, cfg.analysis.subset_neighbors)
}

fn cmd_bench(cfg: &RunConfig, out: &Path) -> Result<Outcome, Error> {
    let grid = cfg.bench_models()?;
    let opts = cfg.feature_options()?;
    let rule = cfg.contact_rule()?;
    let seed = cfg.seed()?;
    let (intervals, report) = load_dir(cfg.data_dir()?, cfg.strict())?;
    let text = toml::to_string(&ParseSummary::from(&report)).map_err(|e| Error::Config(e.to_string()))?;
    write_text(&out.join("parse_report.toml"), &text)?;

    let mut rows: Vec<ReportRow> = Vec::new();
    let mut forest: BTreeMap<(usize, Representation), [Option<ReportRow>; 2]> = BTreeMap::new();
    for (set_idx, set) in cfg.bench.sets.iter().enumerate() {
        let rule_split = SplitRule::Site {
            train: set.train.clone(),
            eval: set.eval.clone(),
        };
        let prepared = pipeline::prepare(&assemble(intervals.clone(), &rule_split)?, &opts)?;
        for (choice, repr) in &grid {
            let e = run_experiment(choice, *repr, &prepared.train, &prepared.eval, &rule, seed)?;
            println!("{} {}->{}: ndcf {:.4}", e.row.model, e.row.train_set, e.row.eval_set, e.row.ndcf);
            if let ModelChoice::Forest(p) = choice {
                let slot = usize::from(p.mode == ForestMode::Regress);
                forest.entry((set_idx, *repr)).or_default()[slot] = Some(e.row.clone());
            }
            rows.push(e.row);
        }
    }
    write_text(&out.join("bench.csv"), &report_csv(&rows)?)?;

    let deltas: Vec<ModeComparison> = forest
        .into_iter()
        .filter_map(|((_, representation), pair)| match pair {
            [Some(c), Some(r)] => Some(ModeComparison {
                train_set: c.train_set,
                eval_set: c.eval_set,
                representation,
                classifier_ndcf: c.ndcf,
                regressor_ndcf: r.ndcf,
                ndcf_delta: r.ndcf - c.ndcf,
            }),
            _ => None,
        })
        .collect();
    if !deltas.is_empty() {
        write_text(&out.join("rf_delta.csv"), &to_csv(&deltas)?)?;
    }
    Ok(outcome(&report))
}
