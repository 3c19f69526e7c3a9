//! End-to-end orchestration of the translator and autonomous experiments.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};

use super::plan::{EvalPlan, LlmTarget, BOT_PROVIDER};
use super::record::{
    arm_id, journal_path, manifest_path, read_journal, records_path, sha256_file, sha256_files, write_atomic,
    write_records, EvalRecord, Journal, RunManifest, RECORD_SCHEMA_VERSION,
};
use super::sample::{stratified_sample, SampledInstance};
use super::HarnessError;
use crate::alignment::AlignmentScore;
use crate::attribution::{explain, RankedExplanation};
use crate::data::{DatasetDir, EncodedDataset, SplitIndices};
use crate::gateway::bots::{BotTransport, ReferenceTable};
use crate::gateway::{Cassette, ChatRequest, Gateway, TransportMode};
use crate::models::{EvalMetrics, ModelFile};
use crate::prompt::{
    build_few_shot_prompt, build_translator_prompt, build_zero_shot_prompt, parse_ranking, select_demonstrations,
    DemoCandidate, Demonstration, InstanceContext, PromptError, PromptMode, TEMPLATE_VERSION,
};

pub const METRICS_FILE: &str = "metrics.json";

/// Everything the prompts need from one trained model.
pub struct BaseModelState {
    pub name: String,
    pub file_hash: String,
    /// Predicted default probability for every dataset row position.
    pub probabilities: Vec<f64>,
    pub metrics: EvalMetrics,
    pub sample: Vec<SampledInstance>,
    /// Reference rankings of the sampled instances, by instance id.
    pub references: BTreeMap<usize, RankedExplanation>,
    pub demos: Option<[Demonstration; 2]>,
}

fn build_state(
    plan: &EvalPlan,
    ds: &EncodedDataset,
    split: &SplitIndices,
    name: &str,
    path: &std::path::Path,
    with_demos: bool,
) -> Result<BaseModelState, HarnessError> {
    let file = ModelFile::load(path)?;
    file.check_columns(ds)?;
    let model = &file.model;
    let probabilities: Vec<f64> = model.predict_all(ds)?.iter().map(|p| p.probability).collect();
    let ids = ds.row_ids();
    let labels = ds.labels();
    let test_ids: Vec<usize> = split.test_idx.iter().map(|&r| ids[r]).collect();
    let test_scores: Vec<f64> = split.test_idx.iter().map(|&r| probabilities[r]).collect();
    let test_labels: Vec<u8> = split.test_idx.iter().map(|&r| labels[r]).collect();
    let metrics = EvalMetrics::compute(&test_scores, &test_labels, plan.sample.threshold)?;
    let sample = stratified_sample(
        &test_ids,
        &test_scores,
        &test_labels,
        plan.sample.threshold,
        plan.sample.per_cell,
        plan.seed,
    )?;
    let position = |id: usize| ds.position_of(id).expect("sampled ids come from the dataset");
    let mut references = BTreeMap::new();
    for s in &sample {
        let (_, ranked) = explain(model, ds, position(s.instance_id))?;
        references.insert(s.instance_id, ranked);
    }
    let demos = if with_demos {
        let pool: Vec<DemoCandidate> = split
            .train_idx
            .iter()
            .map(|&r| DemoCandidate {
                instance_id: ids[r],
                observed: labels[r],
                predicted: probabilities[r],
            })
            .collect();
        let picked = select_demonstrations(&pool)?;
        let demo = |id: usize| -> Result<Demonstration, HarnessError> {
            let row = position(id);
            Ok(Demonstration {
                context: InstanceContext::from_dataset(ds, row, probabilities[row], name),
                ranking: explain(model, ds, row)?.1,
            })
        };
        Some([demo(picked[0])?, demo(picked[1])?])
    } else {
        None
    };
    Ok(BaseModelState {
        name: name.to_string(),
        file_hash: sha256_file(path)?,
        probabilities,
        metrics,
        sample,
        references,
        demos,
    })
}

struct Task {
    instance_id: usize,
    sampled: SampledInstance,
    base_model: String,
    llm: LlmTarget,
    mode: PromptMode,
    arm: String,
    k_out: usize,
    k_grid: Vec<usize>,
    demo_ids: Vec<usize>,
    vocabulary: Vec<String>,
    reference: Vec<String>,
    request: ChatRequest,
    fingerprint: String,
}

fn execute(gateway: &Gateway, t: &Task) -> EvalRecord {
    let outcome = gateway.complete(&t.request);
    let mut record = EvalRecord {
        schema_version: RECORD_SCHEMA_VERSION,
        instance_id: t.instance_id,
        cell: t.sampled.cell,
        base_model: t.base_model.clone(),
        llm: t.llm.id(),
        mode: t.mode,
        arm_id: t.arm.clone(),
        k_out: t.k_out,
        fingerprint: t.fingerprint.clone(),
        demo_ids: t.demo_ids.clone(),
        prompt: t.request.prompt_text(),
        reply: None,
        error: None,
        unparseable: false,
        parsed: Vec::new(),
        violations: Vec::new(),
        reference: t.reference.clone(),
        scores: None,
        attempts: outcome.attempts,
    };
    match outcome.result {
        Err(e) => record.error = Some(e.to_string()),
        Ok(resp) => {
            match parse_ranking(&resp.text, &t.vocabulary, t.k_out) {
                Ok(p) => {
                    record.parsed = p.names;
                    record.violations = p.violations;
                }
                Err(PromptError::UnparseableReply) => record.unparseable = true,
                Err(e) => record.error = Some(e.to_string()),
            }
            record.reply = Some(resp.text);
            if record.error.is_none() {
                // grids were checked against the reference length up front
                record.scores = Some(
                    AlignmentScore::compute(&record.reference, &record.parsed, &t.k_grid)
                        .expect("k grid fits the reference"),
                );
            }
        }
    }
    record
}

fn build_gateway(plan: &EvalPlan, references: ReferenceTable) -> Result<Gateway, HarnessError> {
    let cassette = match (plan.transport, &plan.cassette) {
        (TransportMode::Live, _) => None,
        (TransportMode::Record, Some(p)) => Some(Arc::new(Cassette::open_for_record(p)?)),
        (TransportMode::Replay, Some(p)) => Some(Arc::new(Cassette::open_for_replay(p)?)),
        (mode, None) => return Err(HarnessError::Plan(format!("{mode:?} transport needs a cassette path"))),
    };
    let mut gateway = Gateway::new(plan.transport, cassette, plan.retry.clone())?;
    if plan.transport != TransportMode::Replay {
        let bot = BotTransport::new(plan.bot_seed).with_references(Arc::new(references));
        gateway.add_provider(BOT_PROVIDER, Arc::new(bot), plan.workers);
        for p in &plan.providers {
            if plan.llms.iter().any(|l| l.provider == p.name) {
                gateway.add_configured(p)?;
            }
        }
    }
    Ok(gateway)
}

/// Records of one run plus its manifest.
#[derive(Debug)]
pub struct RunOutput {
    pub records: Vec<EvalRecord>,
    pub manifest: RunManifest,
    pub records_path: PathBuf,
}

pub fn run_rq1(plan: &EvalPlan) -> Result<RunOutput, HarnessError> {
    run(plan, 1)
}

pub fn run_rq2(plan: &EvalPlan) -> Result<RunOutput, HarnessError> {
    run(plan, 2)
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

/// Test-split metrics of every base model, as written next to the records.
pub fn model_metrics(states: &[BaseModelState]) -> BTreeMap<String, EvalMetrics> {
    states.iter().map(|s| (s.name.clone(), s.metrics)).collect()
}

fn run(plan: &EvalPlan, rq: u8) -> Result<RunOutput, HarnessError> {
    plan.validate()?;
    let started_at = now();
    let modes: Vec<PromptMode> = plan
        .modes
        .iter()
        .copied()
        .filter(|m| (*m == PromptMode::Translator) == (rq == 1))
        .collect();
    if modes.is_empty() {
        return Err(HarnessError::Plan(format!("the plan has no mode for RQ{rq}")));
    }
    let grid = if rq == 1 { &plan.rq1 } else { &plan.rq2 };

    let dir = DatasetDir::new(&plan.data_dir);
    let ds = dir.load()?;
    let split = dir.load_split()?;
    let m = ds.groups().len();
    if grid.k_out > m {
        return Err(HarnessError::Plan(format!(
            "k_out {} exceeds the {m} features",
            grid.k_out
        )));
    }
    let with_demos = modes.contains(&PromptMode::FewShot);
    let mut states = Vec::new();
    for bm in &plan.base_models {
        log::info!("preparing base model `{}`", bm.name);
        states.push(build_state(plan, &ds, &split, &bm.name, &bm.path, with_demos)?);
    }
    std::fs::create_dir_all(&plan.output_dir).map_err(|source| HarnessError::Io {
        path: plan.output_dir.clone(),
        source,
    })?;
    let metrics = serde_json::to_string_pretty(&model_metrics(&states))? + "\n";
    write_atomic(&plan.output_dir.join(METRICS_FILE), metrics.as_bytes())?;

    let mut tasks = Vec::new();
    let mut leak_table = ReferenceTable::new();
    for st in &states {
        for s in &st.sample {
            let row = ds.position_of(s.instance_id).expect("sampled from the dataset");
            let ctx = InstanceContext::from_dataset(&ds, row, st.probabilities[row], &st.name);
            let ranking = &st.references[&s.instance_id];
            let reference: Vec<String> = ranking.names().iter().map(|n| n.to_string()).collect();
            leak_table.insert((st.name.clone(), s.instance_id), reference.clone());
            for llm in &plan.llms {
                for &mode in &modes {
                    let spec = match mode {
                        PromptMode::Translator => build_translator_prompt(&ctx, ranking, grid.k_out)?,
                        PromptMode::ZeroShot => build_zero_shot_prompt(&ctx, grid.k_out)?,
                        PromptMode::FewShot => {
                            let demos = st.demos.as_ref().expect("demos built for few-shot");
                            build_few_shot_prompt(&ctx, demos, grid.k_out)?
                        }
                    };
                    let request = ChatRequest::new(&llm.provider, &llm.model, &spec.rendered_text, plan.max_tokens);
                    tasks.push(Task {
                        instance_id: s.instance_id,
                        sampled: *s,
                        base_model: st.name.clone(),
                        llm: llm.clone(),
                        mode,
                        arm: arm_id(&st.name, &llm.id(), mode),
                        k_out: grid.k_out,
                        k_grid: grid.k_grid.clone(),
                        demo_ids: spec.demo_ids.clone(),
                        vocabulary: ctx.vocabulary(),
                        reference: reference.clone(),
                        fingerprint: request.fingerprint(),
                        request,
                    });
                }
            }
        }
    }

    let journal_file = journal_path(&plan.output_dir, rq);
    let resumed = read_journal(&journal_file)?;
    let mut done: Vec<Option<EvalRecord>> = tasks
        .iter()
        .map(|t| {
            resumed
                .get(&t.fingerprint)
                .filter(|r| r.arm_id == t.arm && r.instance_id == t.instance_id)
                .cloned()
        })
        .collect();
    let n_resumed = done.iter().filter(|d| d.is_some()).count();
    let pending: Vec<usize> = (0..tasks.len()).filter(|&i| done[i].is_none()).collect();
    log::info!(
        "RQ{rq}: {} calls, {n_resumed} resumed from the journal, {} to run",
        tasks.len(),
        pending.len()
    );

    let gateway = build_gateway(plan, leak_table)?;
    let mut journal = Journal::open(&journal_file)?;
    let mut write_error = None;
    if !pending.is_empty() {
        let next = AtomicUsize::new(0);
        let (tx, rx) = mpsc::channel::<(usize, EvalRecord)>();
        let (tasks_ref, pending_ref, next_ref, gateway_ref) = (&tasks, &pending, &next, &gateway);
        std::thread::scope(|scope| {
            for _ in 0..plan.workers.min(pending.len()) {
                let tx = tx.clone();
                scope.spawn(move || loop {
                    let i = next_ref.fetch_add(1, Ordering::Relaxed);
                    let Some(&task_index) = pending_ref.get(i) else { break };
                    let record = execute(gateway_ref, &tasks_ref[task_index]);
                    if tx.send((task_index, record)).is_err() {
                        break;
                    }
                });
            }
            drop(tx);
            let mut finished = 0usize;
            for (i, record) in rx {
                if write_error.is_none() {
                    if let Err(e) = journal.append(&record) {
                        write_error = Some(e);
                    }
                }
                done[i] = Some(record);
                finished += 1;
                if finished.is_multiple_of(100) {
                    log::info!("RQ{rq}: {finished}/{} calls finished", pending.len());
                }
            }
        });
    }
    if let Some(e) = write_error {
        return Err(e);
    }

    let mut records: Vec<EvalRecord> = done.into_iter().map(|d| d.expect("every task ran")).collect();
    records.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    let out_path = records_path(&plan.output_dir, rq);
    write_records(&out_path, &records)?;

    let manifest = RunManifest {
        software_version: env!("CARGO_PKG_VERSION").to_string(),
        rq,
        transport: plan.transport,
        config_hash: plan.config_hash(),
        data_hash: sha256_files(&[dir.path("matrix.csv"), dir.path("labels.csv"), dir.path("split.json")])?,
        schema_hash: sha256_file(&dir.path("schema.toml"))?,
        model_hashes: states.iter().map(|s| (s.name.clone(), s.file_hash.clone())).collect(),
        seed: plan.seed,
        bot_seed: plan.bot_seed,
        jitter_seed: plan.retry.jitter_seed,
        threshold: plan.sample.threshold,
        per_cell: plan.sample.per_cell,
        template_version: TEMPLATE_VERSION,
        sample: states
            .iter()
            .map(|s| (s.name.clone(), s.sample.iter().map(|x| x.instance_id).collect()))
            .collect(),
        demo_ids: states
            .iter()
            .filter_map(|s| {
                s.demos
                    .as_ref()
                    .map(|d| (s.name.clone(), d.iter().map(|x| x.context.instance_id).collect()))
            })
            .collect(),
        n_records: records.len(),
        n_resumed,
        n_failed: records.iter().filter(|r| r.error.is_some()).count(),
        started_at,
        finished_at: now(),
    };
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    write_atomic(&manifest_path(&plan.output_dir, rq), text.as_bytes())?;
    Ok(RunOutput {
        records,
        manifest,
        records_path: out_path,
    })
}
