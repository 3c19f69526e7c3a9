//! Full pipeline on the synthetic corpus with the offline bots.

mod common;

use std::collections::BTreeSet;
use std::fs;

use rankfidelity::gateway::bots::{CONSTANT_LIST, ECHO, RANDOM_PERMUTATION, REFERENCE_LEAK, SCRAMBLER};
use rankfidelity::gateway::TransportMode;
use rankfidelity::harness::{
    journal_path, manifest_path, read_records, records_path, report_from_dir, run_rq1, run_rq2, EvalRecord, CELLS,
};
use rankfidelity::prompt::PromptMode;

fn arms(records: &[EvalRecord]) -> BTreeSet<String> {
    records.iter().map(|r| r.arm_id.clone()).collect()
}

#[test]
fn translator_echo_is_perfect_and_replays() {
    let ws = common::shared();
    let out = ws.root.join("rq1-echo");
    let plan = common::plan(
        ws,
        &out,
        TransportMode::Record,
        &[ECHO, SCRAMBLER],
        &[PromptMode::Translator],
    );
    let recorded = run_rq1(&plan).unwrap();
    // 2 base models x 200 instances x 2 bots
    assert_eq!(recorded.records.len(), 800);

    for r in recorded.records.iter().filter(|r| r.llm == "bot/echo") {
        let s = r.scores.as_ref().unwrap();
        assert!(r.violations.is_empty(), "{:?}", r.violations);
        for k in [5, 10, 15, 20] {
            assert_eq!(s.overlap_at_k[&k], 1.0);
            assert_eq!(s.tau_at_k[&k], Some(1.0));
        }
        // the stored reference is the one the prompt showed
        let shown: Vec<String> = r
            .prompt
            .split("Reference ranking, most influential first:\n")
            .nth(1)
            .unwrap()
            .lines()
            .take_while(|l| !l.is_empty())
            .map(|l| l.split_once(". ").unwrap().1.to_string())
            .collect();
        assert_eq!(shown, r.reference);
    }
    // reversing the top 20 keeps the set at K = 20 but not below it
    for r in recorded.records.iter().filter(|r| r.llm == "bot/scrambler") {
        let s = r.scores.as_ref().unwrap();
        assert_eq!(s.overlap_at_k[&20], 1.0);
        assert_eq!(s.tau_at_k[&20], Some(-1.0));
        assert_eq!(s.overlap_at_k[&5], 0.0);
        assert_eq!(s.overlap_at_k[&10], 0.0);
    }
    for r in &recorded.records {
        assert_eq!(r.recompute_scores().unwrap(), r.scores);
    }

    // each arm sees the same 200 instances, 50 per cell
    for arm in arms(&recorded.records) {
        let rs: Vec<&EvalRecord> = recorded.records.iter().filter(|r| r.arm_id == arm).collect();
        assert_eq!(rs.len(), 200);
        for cell in CELLS {
            assert_eq!(rs.iter().filter(|r| r.cell == cell).count(), 50);
        }
    }
    let base_ids = |name: &str| -> BTreeSet<usize> {
        recorded
            .records
            .iter()
            .filter(|r| r.base_model == name)
            .map(|r| r.instance_id)
            .collect()
    };
    assert_eq!(base_ids("gbdt").len(), 200);
    assert_eq!(
        recorded.manifest.sample["gbdt"]
            .iter()
            .copied()
            .collect::<BTreeSet<_>>(),
        base_ids("gbdt")
    );
    assert!(recorded.records.windows(2).all(|w| w[0].sort_key() < w[1].sort_key()));

    let mut replay_plan = plan.clone();
    replay_plan.transport = TransportMode::Replay;
    replay_plan.output_dir = ws.root.join("rq1-echo-replay");
    let replayed = run_rq1(&replay_plan).unwrap();
    assert_eq!(replayed.records.len(), recorded.records.len());
    for (a, b) in recorded.records.iter().zip(&replayed.records) {
        assert_eq!(a.reply, b.reply);
        assert_eq!(a.scores, b.scores);
        assert_eq!(b.attempts[0].outcome, "replay");
    }
}

#[test]
fn autonomous_controls() {
    let ws = common::shared();
    let out = ws.root.join("rq2-controls");
    let mut plan = common::plan(
        ws,
        &out,
        TransportMode::Live,
        &[REFERENCE_LEAK, CONSTANT_LIST, RANDOM_PERMUTATION],
        &[PromptMode::ZeroShot, PromptMode::FewShot],
    );
    plan.cassette = None;
    let run = run_rq2(&plan).unwrap();
    assert_eq!(run.records.len(), 2 * 200 * 3 * 2);
    for r in &run.records {
        assert!(r.error.is_none());
        let s = r.scores.as_ref().unwrap();
        assert_eq!(s.k_values, vec![3, 5, 10]);
        assert_eq!(r.parsed.len(), 10);
        if r.llm == "bot/reference-leak" {
            assert!(s.overlap_at_k.values().all(|&v| v == 1.0));
            assert!(s.tau_at_k.values().all(|&v| v == Some(1.0)));
        }
    }
    // a fixed list scores differently on different instances
    let constant: Vec<f64> = run
        .records
        .iter()
        .filter(|r| r.llm == "bot/constant-list" && r.base_model == "gbdt")
        .map(|r| r.scores.as_ref().unwrap().overlap_at_k[&10])
        .collect();
    let lo = constant.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = constant.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert!(lo < hi, "constant list gave a single overlap value {lo}");

    // demonstrations come from the training split, one per class
    let (ds, split) = common::load(ws);
    let train_ids: BTreeSet<usize> = split.train_idx.iter().map(|&r| ds.row_ids()[r]).collect();
    for (name, ids) in &run.manifest.demo_ids {
        assert_eq!(ids.len(), 2, "{name}");
        assert!(ids.iter().all(|id| train_ids.contains(id)));
        let labels: Vec<u8> = ids.iter().map(|&id| ds.labels()[ds.position_of(id).unwrap()]).collect();
        assert_eq!(labels, vec![1, 0]);
    }
    for r in run.records.iter().filter(|r| r.mode == PromptMode::FewShot) {
        assert_eq!(r.demo_ids, run.manifest.demo_ids[&r.base_model]);
        assert!(r.prompt.contains("Example 1") && r.prompt.contains("Example 2"));
    }
    for r in run.records.iter().filter(|r| r.mode == PromptMode::ZeroShot) {
        assert!(r.demo_ids.is_empty());
        assert!(!r.prompt.contains("Example 1"));
    }
}

#[test]
fn interrupted_run_resumes_to_the_same_records() {
    let ws = common::shared();
    let seed_dir = ws.root.join("resume-seed");
    let mut plan = common::plan(ws, &seed_dir, TransportMode::Record, &[ECHO], &[PromptMode::Translator]);
    plan.sample.per_cell = 10;
    run_rq1(&plan).unwrap();

    let cassette = seed_dir.join("cassette.jsonl");
    let replay = |dir: &str| {
        let mut p = plan.clone();
        p.transport = TransportMode::Replay;
        p.cassette = Some(cassette.clone());
        p.output_dir = ws.root.join(dir);
        p
    };
    let full = run_rq1(&replay("resume-full")).unwrap();

    let partial_plan = replay("resume-partial");
    run_rq1(&partial_plan).unwrap();
    // keep half the journal plus a torn line, drop the final file
    let journal = journal_path(&partial_plan.output_dir, 1);
    let text = fs::read_to_string(&journal).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let mut kept = lines[..lines.len() / 2].join("\n");
    kept.push_str("\n{\"schema_version\":1,\"inst");
    fs::write(&journal, kept).unwrap();
    fs::remove_file(records_path(&partial_plan.output_dir, 1)).unwrap();

    let resumed = run_rq1(&partial_plan).unwrap();
    assert_eq!(resumed.manifest.n_resumed, lines.len() / 2);
    assert_eq!(resumed.records, full.records);
    assert_eq!(
        fs::read(records_path(&partial_plan.output_dir, 1)).unwrap(),
        fs::read(&full.records_path).unwrap()
    );
}

#[test]
fn replay_without_cassette_entry_is_recorded_as_failure() {
    let ws = common::shared();
    let out = ws.root.join("rq1-miss");
    fs::create_dir_all(&out).unwrap();
    fs::write(out.join("cassette.jsonl"), "").unwrap();
    let mut plan = common::plan(ws, &out, TransportMode::Replay, &[ECHO], &[PromptMode::Translator]);
    plan.sample.per_cell = 2;
    let run = run_rq1(&plan).unwrap();
    assert_eq!(run.records.len(), 16);
    assert!(run.records.iter().all(|r| r.error.is_some() && r.scores.is_none()));
    assert_eq!(run.manifest.n_failed, 16);
    let (report, _, md) = report_from_dir(&out, &out).unwrap();
    assert!(report.health.iter().all(|h| h.failed == h.records));
    assert!(fs::read_to_string(md).unwrap().contains("| 8 | 8 |"));
}

#[test]
fn reports_are_pure_functions_of_the_records() {
    let ws = common::shared();
    let out = ws.root.join("report-purity");
    let mut plan = common::plan(
        ws,
        &out,
        TransportMode::Live,
        &[RANDOM_PERMUTATION],
        &[PromptMode::Translator, PromptMode::ZeroShot],
    );
    plan.cassette = None;
    plan.sample.per_cell = 5;
    run_rq1(&plan).unwrap();
    run_rq2(&plan).unwrap();
    let (report, json, md) = report_from_dir(&out, &out.join("r1")).unwrap();
    let (_, json2, md2) = report_from_dir(&out, &out.join("r2")).unwrap();
    assert_eq!(fs::read(&json).unwrap(), fs::read(&json2).unwrap());
    assert_eq!(fs::read(&md).unwrap(), fs::read(&md2).unwrap());
    assert_eq!(report.model_metrics.len(), 2);
    assert_eq!(report.autonomous_overlap.len(), 2);
    assert!(!report.translator_tau.is_empty());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(manifest_path(&out, 2)).unwrap()).unwrap();
    assert_eq!(manifest["per_cell"], 5);
    assert_eq!(read_records(&records_path(&out, 2)).unwrap().len(), 40);
}
