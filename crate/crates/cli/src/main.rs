use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rankfidelity::attribution::{explain, group_attributions, AttributionRecord};
use rankfidelity::data::{lendingclub, load_table, prepare, synthetic, DatasetDir, FeatureSchema, TableFormat};
use rankfidelity::gateway::TransportMode;
use rankfidelity::harness::{report_from_dir, run_rq1, run_rq2, stratified_sample, EvalPlan};
use rankfidelity::models::{
    train_gbdt, train_logistic, EvalMetrics, Model, ModelFile, SearchSpace, DEFAULT_LAMBDA_GRID,
};

#[derive(Parser)]
#[command(
    name = "rankfidelity",
    version,
    about = "Credit-risk baselines, attributions and LLM ranking fidelity"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    Logistic,
    Gbdt,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitChoice {
    Train,
    Test,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum Source {
    /// Plain CSV with a header row.
    Csv,
    /// Raw LendingClub 2007-2011 export.
    Lendingclub,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Live,
    Record,
    Replay,
}

impl From<ModeArg> for TransportMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Live => TransportMode::Live,
            ModeArg::Record => TransportMode::Record,
            ModeArg::Replay => TransportMode::Replay,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the bundled synthetic loan corpus as CSV.
    GenSynthetic {
        #[arg(long, default_value_t = synthetic::DEFAULT_ROWS)]
        rows: usize,
        #[arg(long, default_value_t = synthetic::DEFAULT_SEED)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode a raw table with a feature schema and split it into train and test.
    PrepareData {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Source::Csv)]
        source: Source,
        /// Schema TOML; defaults to the bundled schema for the source.
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.7)]
        train_ratio: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Fit a base model on the training split.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        model: ModelKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Random-search trials for the forest.
        #[arg(long, default_value_t = 30)]
        trials: usize,
        /// Comma-separated penalty grid for the logistic model.
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
    },
    /// Test-split PR-AUC, macro-F1 and KS of one or more models.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "model", required = true)]
        models: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Also write the metrics as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-instance grouped attributions and rankings as JSON lines.
    Attribute {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitChoice::Test)]
        split: SplitChoice,
    },
    /// Draw the cell-stratified evaluation sample for a model.
    Sample {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 50)]
        per_cell: usize,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the translator (1) or autonomous (2) experiment of a plan.
    Run {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        rq: u8,
        #[arg(long)]
        plan: PathBuf,
        /// Overrides the plan's transport.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Summary tables from a run's output directory.
    Report {
        #[arg(long)]
        records: PathBuf,
        /// Defaults to the records directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_dataset(dir: &Path) -> Result<(rankfidelity::data::EncodedDataset, rankfidelity::data::SplitIndices)> {
    let d = DatasetDir::new(dir);
    let ds = d.load().with_context(|| format!("loading dataset {}", dir.display()))?;
    let split = d
        .load_split()
        .with_context(|| format!("loading split of {}", dir.display()))?;
    Ok((ds, split))
}

fn load_model(path: &Path, ds: &rankfidelity::data::EncodedDataset) -> Result<ModelFile> {
    let file = ModelFile::load(path).with_context(|| format!("loading model {}", path.display()))?;
    file.check_columns(ds)?;
    Ok(file)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::GenSynthetic { rows, seed, out } => {
            let file = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            synthetic::write_corpus(BufWriter::new(file), rows, seed)?;
            println!("wrote {rows} rows to {}", out.display());
        }
        Command::PrepareData {
            input,
            source,
            schema,
            out,
            train_ratio,
            seed,
        } => {
            let schema_text = match &schema {
                Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
                None => match source {
                    Source::Csv => synthetic::SCHEMA_TOML.to_string(),
                    Source::Lendingclub => lendingclub::SCHEMA_TOML.to_string(),
                },
            };
            let schema = FeatureSchema::from_toml_str(&schema_text)?;
            let raw = match source {
                Source::Csv => load_table(&input, TableFormat::Csv)?,
                Source::Lendingclub => lendingclub::load_export(&input)?,
            };
            let prepared = prepare(raw, &schema, train_ratio, seed)?;
            let dir = DatasetDir::new(&out);
            dir.save(&prepared.dataset, &schema_text)?;
            dir.save_split(&prepared.split)?;
            dir.save_report(&prepared.report)?;
            println!(
                "{} rows ({} train / {} test), {} features, {} encoded columns, prevalence {:.4}",
                prepared.dataset.n_rows(),
                prepared.split.train_idx.len(),
                prepared.split.test_idx.len(),
                prepared.dataset.groups().len(),
                prepared.dataset.n_cols(),
                prepared.dataset.prevalence()
            );
        }
        Command::Train {
            data,
            model,
            out,
            folds,
            seed,
            trials,
            lambdas,
        } => {
            let (ds, split) = load_dataset(&data)?;
            let train = ds.select(&split.train_idx);
            let names = ds.encoded_names().to_vec();
            let file = match model {
                ModelKind::Logistic => {
                    let grid = lambdas.unwrap_or_else(|| DEFAULT_LAMBDA_GRID.to_vec());
                    let (m, sel) = train_logistic(&train, &grid, folds, seed)?;
                    println!("chose lambda = {} ({})", m.lambda, sel.candidates[sel.chosen].0);
                    ModelFile::new(Model::Logistic(m), names, Some(sel))
                }
                ModelKind::Gbdt => {
                    let space = SearchSpace {
                        trials,
                        ..SearchSpace::default()
                    };
                    let (m, sel) = train_gbdt(&train, &space, folds, seed)?;
                    println!(
                        "chose {} (CV PR-AUC {:.4})",
                        sel.candidates[sel.chosen].0, sel.candidates[sel.chosen].1
                    );
                    ModelFile::new(Model::Gbdt(m), names, Some(sel))
                }
            };
            file.save(&out)?;
            println!("saved {}", out.display());
        }
        Command::Evaluate {
            data,
            models,
            threshold,
            out,
        } => {
            let (ds, split) = load_dataset(&data)?;
            let test = ds.select(&split.test_idx);
            let mut table = std::collections::BTreeMap::new();
            println!("{:<24} {:>8} {:>9} {:>8}", "model", "PR-AUC", "macro-F1", "KS (%)");
            for path in &models {
                let file = load_model(path, &ds)?;
                let scores: Vec<f64> = file.model.predict_all(&test)?.iter().map(|p| p.probability).collect();
                let m = EvalMetrics::compute(&scores, test.labels(), threshold)?;
                let name = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                println!("{name:<24} {:>8.4} {:>9.4} {:>8.2}", m.pr_auc, m.macro_f1, 100.0 * m.ks);
                table.insert(name, m);
            }
            if let Some(out) = out {
                std::fs::write(&out, serde_json::to_string_pretty(&table)? + "\n")?;
            }
        }
        Command::Attribute {
            data,
            model,
            out,
            split: which,
        } => {
            let (ds, split) = load_dataset(&data)?;
            let file = load_model(&model, &ds)?;
            let rows: Vec<usize> = match which {
                SplitChoice::Train => split.train_idx.clone(),
                SplitChoice::Test => split.test_idx.clone(),
                SplitChoice::All => (0..ds.n_rows()).collect(),
            };
            let mut w = BufWriter::new(File::create(&out).with_context(|| format!("creating {}", out.display()))?);
            let mut worst = 0.0f64;
            for &r in &rows {
                let (attr, ranked) = explain(&file.model, &ds, r)?;
                worst = worst.max(attr.additivity_gap());
                let record = AttributionRecord {
                    instance_id: ds.row_ids()[r],
                    baseline: attr.baseline,
                    model_output: attr.model_output,
                    grouped: group_attributions(&attr, ds.groups())?.values,
                    ranking: ranked.names().iter().map(|s| s.to_string()).collect(),
                };
                writeln!(w, "{}", serde_json::to_string(&record)?)?;
            }
            w.flush()?;
            println!("{} rows attributed; largest additivity gap {worst:.3e}", rows.len());
        }
        Command::Sample {
            data,
            model,
            per_cell,
            threshold,
            seed,
            out,
        } => {
            let (ds, split) = load_dataset(&data)?;
            let file = load_model(&model, &ds)?;
            let probs: Vec<f64> = file.model.predict_all(&ds)?.iter().map(|p| p.probability).collect();
            let ids: Vec<usize> = split.test_idx.iter().map(|&r| ds.row_ids()[r]).collect();
            let scores: Vec<f64> = split.test_idx.iter().map(|&r| probs[r]).collect();
            let labels: Vec<u8> = split.test_idx.iter().map(|&r| ds.labels()[r]).collect();
            let sample = stratified_sample(&ids, &scores, &labels, threshold, per_cell, seed)?;
            let text = serde_json::to_string_pretty(&sample)? + "\n";
            match out {
                Some(p) => std::fs::write(&p, text)?,
                None => print!("{text}"),
            }
        }
        Command::Run { rq, plan, mode } => {
            let mut plan = EvalPlan::load(&plan)?;
            if let Some(m) = mode {
                plan.transport = m.into();
                plan.validate()?;
            }
            let output = match rq {
                1 => run_rq1(&plan)?,
                2 => run_rq2(&plan)?,
                _ => bail!("--rq must be 1 or 2"),
            };
            println!(
                "{} records ({} resumed, {} failed) written to {}",
                output.manifest.n_records,
                output.manifest.n_resumed,
                output.manifest.n_failed,
                output.records_path.display()
            );
        }
        Command::Report { records, out } => {
            let out = out.unwrap_or_else(|| records.clone());
            let (_, json, md) = report_from_dir(&records, &out)?;
            println!("wrote {} and {}", json.display(), md.display());
        }
    }
    Ok(())
}
