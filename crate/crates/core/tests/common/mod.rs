//! A prepared synthetic workspace shared by the pipeline tests.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use rankfidelity::data::{prepare, read_csv, synthetic, DatasetDir, EncodedDataset, FeatureSchema, SplitIndices};
use rankfidelity::gateway::TransportMode;
use rankfidelity::harness::{BaseModelRef, EvalPlan, GridSpec, LlmTarget, SampleSpec};
use rankfidelity::models::{train_gbdt, train_logistic, Model, ModelFile, SearchSpace};
use rankfidelity::prompt::PromptMode;

pub struct Workspace {
    _dir: tempfile::TempDir,
    pub root: PathBuf,
    pub data: PathBuf,
    pub logistic: PathBuf,
    pub gbdt: PathBuf,
}

/// Small search budget; enough for a forest that beats the linear model.
pub fn quick_space() -> SearchSpace {
    SearchSpace {
        depth: (2, 4),
        rounds: (50, 150),
        trials: 3,
        ..SearchSpace::default()
    }
}

pub fn build_workspace(rows: usize, corpus_seed: u64) -> Workspace {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let raw = read_csv(synthetic::corpus_bytes(rows, corpus_seed).as_slice()).unwrap();
    let schema = FeatureSchema::from_toml_str(synthetic::SCHEMA_TOML).unwrap();
    let prepared = prepare(raw, &schema, 0.7, 42).unwrap();
    let data = root.join("data");
    let ds_dir = DatasetDir::new(&data);
    ds_dir.save(&prepared.dataset, synthetic::SCHEMA_TOML).unwrap();
    ds_dir.save_split(&prepared.split).unwrap();
    ds_dir.save_report(&prepared.report).unwrap();

    let train = prepared.dataset.select(&prepared.split.train_idx);
    let names = prepared.dataset.encoded_names().to_vec();
    let models = root.join("models");
    std::fs::create_dir_all(&models).unwrap();
    let (lm, lsel) = train_logistic(&train, &rankfidelity::models::DEFAULT_LAMBDA_GRID, 3, 42).unwrap();
    let logistic = models.join("logistic.json");
    ModelFile::new(Model::Logistic(lm), names.clone(), Some(lsel))
        .save(&logistic)
        .unwrap();
    let (gm, gsel) = train_gbdt(&train, &quick_space(), 3, 42).unwrap();
    let gbdt = models.join("gbdt.json");
    ModelFile::new(Model::Gbdt(gm), names, Some(gsel)).save(&gbdt).unwrap();
    Workspace {
        _dir: dir,
        root,
        data,
        logistic,
        gbdt,
    }
}

/// One workspace per test binary, built on first use.
pub fn shared() -> &'static Workspace {
    static WS: OnceLock<Workspace> = OnceLock::new();
    WS.get_or_init(|| build_workspace(synthetic::DEFAULT_ROWS, synthetic::DEFAULT_SEED))
}

pub fn load(ws: &Workspace) -> (EncodedDataset, SplitIndices) {
    let d = DatasetDir::new(&ws.data);
    (d.load().unwrap(), d.load_split().unwrap())
}

pub fn plan(ws: &Workspace, out: &Path, transport: TransportMode, llms: &[&str], modes: &[PromptMode]) -> EvalPlan {
    EvalPlan {
        data_dir: ws.data.clone(),
        output_dir: out.to_path_buf(),
        cassette: Some(out.join("cassette.jsonl")),
        transport,
        seed: 11,
        bot_seed: 5,
        sample: SampleSpec::default(),
        base_models: vec![
            BaseModelRef {
                name: "logistic".into(),
                path: ws.logistic.clone(),
            },
            BaseModelRef {
                name: "gbdt".into(),
                path: ws.gbdt.clone(),
            },
        ],
        llms: llms
            .iter()
            .map(|m| LlmTarget {
                provider: "bot".into(),
                model: m.to_string(),
            })
            .collect(),
        modes: modes.to_vec(),
        rq1: GridSpec {
            k_out: 20,
            k_grid: vec![5, 10, 15, 20],
        },
        rq2: GridSpec {
            k_out: 10,
            k_grid: vec![3, 5, 10],
        },
        providers: Vec::new(),
        retry: Default::default(),
        max_tokens: 512,
        workers: 4,
    }
}
