//! The multi-round refinement loop.
//!
//! Round 0 builds a graph from the document; every later round refines the
//! previous graph with the feedback selected for it. Each round simulates
//! the current graph, has the structural critic confirm the observed
//! failures, runs the semantic checks per gateway and per gateway segment,
//! scores the pooled feedback, and selects a budgeted subset for the next
//! prompt. The loop stops at `max_rounds` or as soon as a round produces no
//! feedback.
//!
//! Every round is journaled (`round_<t>.json`) together with the final
//! graph (`final.flow.txt`, `final.graph.json`) and the scored feedback
//! ledger (`feedback.jsonl`). A rerun over an existing journal directory
//! loads completed rounds instead of repeating their agent calls.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    self, AgentBackend, AgentError, FewShotSet, RecordingBackend, RenderedIssue, Subject,
    TranscriptEntry, VerdictStatus,
};
use crate::dsl;
use crate::graph::ProceduralGraph;
use crate::prioritizer::{
    self, FeedbackItem, FeedbackKind, FeedbackOrigin, FeedbackScore, LedgerEntry,
    PrioritizerConfig,
};
use crate::simulator::{self, IssueSignature, SimulationConfig};

#[derive(Debug, Clone)]
pub struct RunConfig {
    /// Maximum number of rounds (records); round 0 is the initial build.
    pub max_rounds: usize,
    pub simulation: SimulationConfig,
    pub prioritizer: PrioritizerConfig,
    /// Stop as soon as a round's feedback pool is empty.
    pub stop_when_no_feedback: bool,
    /// Pool items below this weight do not keep the loop alive.
    pub min_feedback_weight: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            max_rounds: 2,
            simulation: SimulationConfig::default(),
            prioritizer: PrioritizerConfig::default(),
            stop_when_no_feedback: true,
            min_feedback_weight: 0.0,
        }
    }
}

/// Compact simulation outcome stored in the journal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceSummary {
    pub trials: u64,
    pub failing: u64,
    /// Failure signature -> count, keys in canonical display form.
    pub issue_counts: BTreeMap<String, u64>,
}

/// One scored feedback item as journaled.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoredFeedback {
    pub kind: FeedbackKind,
    pub origin: String,
    pub text: String,
    pub token_len: usize,
    pub utility: f64,
    pub repeat: f64,
    pub weight: f64,
    pub selected: bool,
}

/// Journal record of one round.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Flow text the round started from; empty for round 0.
    pub graph_in: String,
    /// Flow text the round produced (the graph that was diagnosed).
    pub graph_out: String,
    pub parse_diagnostics: Vec<String>,
    pub traces: TraceSummary,
    pub feedback: Vec<ScoredFeedback>,
    pub warnings: Vec<String>,
    pub transcripts: Vec<TranscriptEntry>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub graph: ProceduralGraph,
    pub final_dsl: String,
    pub records: Vec<RoundRecord>,
    /// Set when the backend failed mid-run and the result is the best graph
    /// seen so far.
    pub error: Option<String>,
}

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("document is empty")]
    EmptyDocument,
    #[error("journal I/O at {path}: {source}")]
    Journal {
        path: String,
        source: std::io::Error,
    },
    #[error("corrupt journal record {path}: {message}")]
    CorruptJournal { path: String, message: String },
    #[error("round 0 produced no parseable graph: {0}")]
    NoInitialGraph(String),
}

pub struct Orchestrator {
    pub config: RunConfig,
    pub shots: FewShotSet,
    pub journal_dir: Option<PathBuf>,
}

impl Orchestrator {
    pub fn new(config: RunConfig) -> Self {
        Orchestrator {
            config,
            shots: FewShotSet::standard(),
            journal_dir: None,
        }
    }

    pub fn with_journal(mut self, dir: impl Into<PathBuf>) -> Self {
        self.journal_dir = Some(dir.into());
        self
    }

    /// Drives the full loop. Backend failures after round 0 degrade to a
    /// partial result (`outcome.error` set) instead of an error.
    pub fn run(
        &self,
        document: &str,
        backend: &dyn AgentBackend,
    ) -> Result<RunOutcome, OrchestratorError> {
        if document.trim().is_empty() {
            return Err(OrchestratorError::EmptyDocument);
        }
        if let Some(dir) = &self.journal_dir {
            fs::create_dir_all(dir).map_err(|source| OrchestratorError::Journal {
                path: dir.display().to_string(),
                source,
            })?;
        }

        // resume: a finished journal short-circuits, a partial one seeds state
        let mut records = self.load_journal()?;
        if let Some(outcome) = self.finished_outcome(&records)? {
            return Ok(outcome);
        }

        let mut history: Vec<FeedbackItem> = Vec::new();
        let mut selection: Vec<FeedbackItem> = Vec::new();
        let mut current: Option<(String, ProceduralGraph)> = None;
        for record in &records {
            let (graph, _) = dsl::parse(&record.graph_out);
            current = Some((record.graph_out.clone(), graph));
            selection.clear();
            for feedback in &record.feedback {
                let item = FeedbackItem {
                    kind: feedback.kind,
                    origin: FeedbackOrigin(feedback.origin.clone()),
                    text: feedback.text.clone(),
                    token_len: feedback.token_len,
                    round: record.round,
                };
                if feedback.selected {
                    selection.push(item.clone());
                }
                history.push(item);
            }
        }

        let mut run_error = None;
        let start_round = records.len();
        for round in start_round..self.config.max_rounds {
            let recorder = RecordingBackend::new(backend);
            let produced = if round == 0 {
                agents::build_graph(document, &self.shots, &recorder)
            } else {
                let previous = current.as_ref().map(|(dsl, _)| dsl.as_str()).unwrap_or("");
                agents::refine_graph(previous, &selection, document, &self.shots, &recorder)
            };
            let parsed = self.usable_graph(
                produced,
                document,
                round,
                &selection,
                current.as_ref().map(|(d, _)| d.as_str()),
                &recorder,
            );
            let (graph_out, graph, diagnostics) = match parsed {
                Ok(parts) => parts,
                Err(err) => {
                    if round == 0 {
                        return Err(OrchestratorError::NoInitialGraph(err.to_string()));
                    }
                    run_error = Some(err.to_string());
                    break;
                }
            };

            let graph_in = current
                .as_ref()
                .map(|(dsl, _)| dsl.clone())
                .unwrap_or_default();
            current = Some((graph_out.clone(), graph));
            let graph_ref = &current.as_ref().expect("just set").1;

            let collected = self.collect_feedback(graph_ref, document, &recorder, round, &history);
            let (pool, summary, mut warnings) = match collected {
                Ok(parts) => parts,
                Err(err) => {
                    run_error = Some(err.to_string());
                    break;
                }
            };
            warnings.extend(diagnostics.iter().map(|d| format!("parse: {d}")));

            let selected_idx = prioritizer::select(&pool, &self.config.prioritizer);
            selection = selected_idx.iter().map(|&i| pool[i].0.clone()).collect();
            let feedback: Vec<ScoredFeedback> = pool
                .iter()
                .enumerate()
                .map(|(i, (item, score))| ScoredFeedback {
                    kind: item.kind,
                    origin: item.origin.to_string(),
                    text: item.text.clone(),
                    token_len: item.token_len,
                    utility: score.utility,
                    repeat: score.repeat,
                    weight: score.weight,
                    selected: selected_idx.contains(&i),
                })
                .collect();
            history.extend(pool.iter().map(|(item, _)| item.clone()));

            let record = RoundRecord {
                round,
                graph_in,
                graph_out,
                parse_diagnostics: diagnostics.iter().map(|d| d.to_string()).collect(),
                traces: summary,
                feedback,
                warnings,
                transcripts: recorder.drain(),
            };
            self.write_round(&record)?;
            records.push(record);

            let pool_alive = pool
                .iter()
                .any(|(_, score)| score.weight >= self.config.min_feedback_weight);
            if self.config.stop_when_no_feedback && (pool.is_empty() || !pool_alive) {
                break;
            }
        }

        let (final_dsl, graph) = current.ok_or_else(|| {
            OrchestratorError::NoInitialGraph("backend produced nothing".to_string())
        })?;
        let outcome = RunOutcome {
            graph,
            final_dsl,
            records,
            error: run_error,
        };
        self.write_final(&outcome)?;
        Ok(outcome)
    }

    /// Accepts the round's raw output if it parses to a graph with at least
    /// one edge; otherwise retries the same request once, then falls back
    /// to the previous graph.
    #[allow(clippy::type_complexity)]
    fn usable_graph(
        &self,
        produced: Result<String, AgentError>,
        document: &str,
        round: usize,
        selection: &[FeedbackItem],
        previous: Option<&str>,
        backend: &dyn AgentBackend,
    ) -> Result<(String, ProceduralGraph, Vec<dsl::ParseDiagnostic>), AgentError> {
        let mut last_error = None;
        let mut pending = Some(produced);
        for _attempt in 0..2 {
            let result = match pending.take() {
                Some(first) => first,
                None if round == 0 => agents::build_graph(document, &self.shots, backend),
                None => agents::refine_graph(
                    previous.unwrap_or(""),
                    selection,
                    document,
                    &self.shots,
                    backend,
                ),
            };
            match result {
                Ok(text) => {
                    let (graph, diagnostics) = dsl::parse(&text);
                    if graph.edge_count() > 0 {
                        return Ok((text, graph, diagnostics));
                    }
                    last_error = Some(AgentError::EmptyResponse);
                }
                Err(err) => last_error = Some(err),
            }
        }
        if let (Some(previous), true) = (previous, round > 0) {
            let (graph, diagnostics) = dsl::parse(previous);
            if graph.edge_count() > 0 {
                log::warn!("round {round}: output unusable, keeping previous graph");
                return Ok((previous.to_string(), graph, diagnostics));
            }
        }
        Err(last_error.unwrap_or(AgentError::EmptyResponse))
    }

    /// One round's diagnosis: simulate, aggregate, critique, then the
    /// semantic checks per gateway and per segment. Per-item agent failures
    /// drop that item with a warning; transport-level failure of the critic
    /// aborts the round.
    #[allow(clippy::type_complexity)]
    fn collect_feedback(
        &self,
        graph: &ProceduralGraph,
        document: &str,
        backend: &dyn AgentBackend,
        round: usize,
        history: &[FeedbackItem],
    ) -> Result<
        (
            Vec<(FeedbackItem, FeedbackScore)>,
            TraceSummary,
            Vec<String>,
        ),
        AgentError,
    > {
        let mut warnings = Vec::new();
        let traces = simulator::simulate(graph, &self.config.simulation);
        let counts = simulator::aggregate_issue_counts(&traces);
        let failing = traces.iter().filter(|t| t.issue.is_some()).count() as u64;
        let summary = TraceSummary {
            trials: traces.len() as u64,
            failing,
            issue_counts: counts
                .iter()
                .map(|(sig, count)| (sig.to_string(), *count))
                .collect(),
        };

        // static-only findings join the critique list with zero utility
        let mut issues: Vec<(IssueSignature, u64)> =
            counts.iter().map(|(s, c)| (s.clone(), *c)).collect();
        issues.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        for static_issue in simulator::detect_static_issues(graph) {
            let witnessed = issues.iter().any(|(sig, _)| sig.kind == static_issue.kind);
            if !witnessed {
                issues.push((IssueSignature::of_static(static_issue.kind), 0));
            }
        }

        let utilities = prioritizer::utility(&counts);
        let mut pool_items: Vec<FeedbackItem> = Vec::new();

        if !issues.is_empty() {
            let rendered: Vec<RenderedIssue> = issues
                .iter()
                .map(|(sig, count)| RenderedIssue {
                    signature: sig.clone(),
                    text: if *count > 0 {
                        format!(
                            "{} (seen in {count} of {} trials)",
                            simulator::describe_signature(graph, sig),
                            summary.trials
                        )
                    } else {
                        simulator::describe_signature(graph, sig)
                    },
                })
                .collect();
            let critique =
                agents::structural_critique(&dsl::serialize(graph), document, &rendered, backend)?;
            warnings.extend(critique.warnings);
            pool_items.extend(critique.items.into_iter().map(|i| i.at_round(round)));
        }

        for segment in simulator::extract_gateway_segments(graph) {
            let gateway_label = graph.node_label(segment.gateway);
            for (subject, origin) in [
                (
                    Subject::Gateway(segment.gateway),
                    FeedbackOrigin::gateway(&gateway_label),
                ),
                (
                    Subject::Segment(&segment),
                    FeedbackOrigin::segment(&gateway_label),
                ),
            ] {
                let checked = (|| -> Result<Option<FeedbackItem>, AgentError> {
                    let span = agents::retrieve_span(subject, graph, document, backend)?;
                    let description = agents::verbalize(subject, graph, backend)?;
                    let (verdict, verdict_warnings) =
                        agents::judge_consistency(&span, &description, &gateway_label, backend)?;
                    for w in verdict_warnings {
                        log::warn!("{w}");
                    }
                    Ok(match verdict.status {
                        VerdictStatus::Wrong => Some(
                            FeedbackItem::new(
                                FeedbackKind::Semantic,
                                origin.clone(),
                                verdict.suggestion,
                            )
                            .at_round(round),
                        ),
                        VerdictStatus::Approved => None,
                    })
                })();
                match checked {
                    Ok(Some(item)) => pool_items.push(item),
                    Ok(None) => {}
                    Err(err) => {
                        warnings.push(format!("semantic check for {origin} dropped: {err}"))
                    }
                }
            }
        }

        let scores = prioritizer::score_pool(&pool_items, &utilities, history);
        Ok((
            pool_items.into_iter().zip(scores).collect(),
            summary,
            warnings,
        ))
    }

    fn round_path(&self, round: usize) -> Option<PathBuf> {
        self.journal_dir
            .as_ref()
            .map(|d| d.join(format!("round_{round}.json")))
    }

    fn write_round(&self, record: &RoundRecord) -> Result<(), OrchestratorError> {
        let Some(path) = self.round_path(record.round) else {
            return Ok(());
        };
        let body = serde_json::to_string_pretty(record).expect("record serializes");
        fs::write(&path, body).map_err(|source| OrchestratorError::Journal {
            path: path.display().to_string(),
            source,
        })
    }

    fn write_final(&self, outcome: &RunOutcome) -> Result<(), OrchestratorError> {
        let Some(dir) = &self.journal_dir else {
            return Ok(());
        };
        let io_err = |path: &Path, source| OrchestratorError::Journal {
            path: path.display().to_string(),
            source,
        };
        let flow = dir.join("final.flow.txt");
        fs::write(&flow, &outcome.final_dsl).map_err(|e| io_err(&flow, e))?;
        let json = dir.join("final.graph.json");
        fs::write(&json, outcome.graph.to_json()).map_err(|e| io_err(&json, e))?;
        let ledger = dir.join("feedback.jsonl");
        let mut file = fs::File::create(&ledger).map_err(|e| io_err(&ledger, e))?;
        for record in &outcome.records {
            for feedback in &record.feedback {
                let entry = LedgerEntry {
                    round: record.round,
                    kind: feedback.kind,
                    origin: feedback.origin.clone(),
                    text: feedback.text.clone(),
                    u: feedback.utility,
                    repeat: feedback.repeat,
                    w: feedback.weight,
                    len: feedback.token_len,
                    selected: feedback.selected,
                };
                let line = serde_json::to_string(&entry).expect("entry serializes");
                writeln!(file, "{line}").map_err(|e| io_err(&ledger, e))?;
            }
        }
        // transcript log for audit and token accounting
        let transcripts = dir.join("transcripts.jsonl");
        let mut file = fs::File::create(&transcripts).map_err(|e| io_err(&transcripts, e))?;
        for record in &outcome.records {
            for entry in &record.transcripts {
                let line = serde_json::json!({
                    "round": record.round,
                    "role": entry.role,
                    "prompt_tokens": entry.prompt_tokens,
                    "completion_tokens": entry.completion_tokens,
                    "latency_ms": entry.latency_ms,
                    "prompt": entry.prompt,
                    "response": entry.response,
                });
                writeln!(file, "{line}").map_err(|e| io_err(&transcripts, e))?;
            }
        }
        Ok(())
    }

    /// Loads contiguous `round_<t>.json` records from the journal.
    fn load_journal(&self) -> Result<Vec<RoundRecord>, OrchestratorError> {
        let Some(dir) = &self.journal_dir else {
            return Ok(Vec::new());
        };
        let mut records = Vec::new();
        for round in 0..self.config.max_rounds {
            let path = dir.join(format!("round_{round}.json"));
            if !path.exists() {
                break;
            }
            let body = fs::read_to_string(&path).map_err(|source| OrchestratorError::Journal {
                path: path.display().to_string(),
                source,
            })?;
            let record: RoundRecord =
                serde_json::from_str(&body).map_err(|e| OrchestratorError::CorruptJournal {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?;
            records.push(record);
        }
        Ok(records)
    }

    /// A journal with final artifacts represents a completed run.
    fn finished_outcome(
        &self,
        records: &[RoundRecord],
    ) -> Result<Option<RunOutcome>, OrchestratorError> {
        let Some(dir) = &self.journal_dir else {
            return Ok(None);
        };
        let flow = dir.join("final.flow.txt");
        if records.is_empty() || !flow.exists() || !dir.join("final.graph.json").exists() {
            return Ok(None);
        }
        let final_dsl = fs::read_to_string(&flow).map_err(|source| OrchestratorError::Journal {
            path: flow.display().to_string(),
            source,
        })?;
        let (graph, _) = dsl::parse(&final_dsl);
        Ok(Some(RunOutcome {
            graph,
            final_dsl,
            records: records.to_vec(),
            error: None,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{AgentRole, MockBackend};

    const DOC: &str = "Receive the form. Check the signature. File the form.";

    fn orchestrator(max_rounds: usize) -> Orchestrator {
        let config = RunConfig {
            max_rounds,
            simulation: SimulationConfig {
                trials: 200,
                seed: 7,
                ..SimulationConfig::default()
            },
            ..RunConfig::default()
        };
        Orchestrator::new(config)
    }

    /// Round 0: graph with a dead end. Round 1: fixed. Pool then empties.
    fn scripted_backend() -> MockBackend {
        MockBackend::new()
            .with_script(
                AgentRole::Builder,
                "For the process:\nStart -> receive the form\nreceive the form -> check the signature",
            )
            .with_script(
                AgentRole::Refiner,
                "For the process:\nStart -> receive the form\nreceive the form -> check the signature\ncheck the signature -> file the form\nfile the form -> End",
            )
    }

    #[test]
    fn dead_end_then_fix_stops_before_third_round() {
        let backend = scripted_backend();
        let outcome = orchestrator(3).run(DOC, &backend).unwrap();
        assert_eq!(outcome.records.len(), 2, "round 2 not entered: pool empty");
        assert!(outcome.error.is_none());
        assert!(outcome.records[0]
            .feedback
            .iter()
            .any(|f| f.kind == FeedbackKind::Structural));
        assert!(outcome.records[1].feedback.is_empty());
        assert!(outcome.final_dsl.contains("file the form -> End"));
        // selected feedback is injected into the refine prompt
        let refine = outcome.records[1]
            .transcripts
            .iter()
            .find(|t| t.role == "refiner")
            .expect("refiner transcript");
        let selected: Vec<&ScoredFeedback> = outcome.records[0]
            .feedback
            .iter()
            .filter(|f| f.selected)
            .collect();
        assert!(!selected.is_empty());
        for feedback in selected {
            assert!(refine.prompt.contains(&feedback.text));
        }
    }

    #[test]
    fn max_rounds_one_yields_one_record_despite_feedback() {
        let backend = scripted_backend();
        let outcome = orchestrator(1).run(DOC, &backend).unwrap();
        assert_eq!(outcome.records.len(), 1);
        assert!(!outcome.records[0].feedback.is_empty());
    }

    #[test]
    fn clean_first_graph_stops_after_round_zero() {
        let backend = MockBackend::new(); // naive builder output is issue-free
        let outcome = orchestrator(3).run(DOC, &backend).unwrap();
        assert_eq!(outcome.records.len(), 1);
        assert!(outcome.records[0].feedback.is_empty());
        assert_eq!(outcome.records[0].traces.failing, 0);
    }

    #[test]
    fn empty_document_is_an_error() {
        let backend = MockBackend::new();
        assert!(matches!(
            orchestrator(2).run("  ", &backend),
            Err(OrchestratorError::EmptyDocument)
        ));
    }

    #[test]
    fn corrupt_round_output_falls_back_to_previous_graph() {
        let backend = MockBackend::new()
            .with_script(
                AgentRole::Builder,
                "For the process:\nStart -> a\na -> b", // b is a dead end
            )
            // both refine attempts produce unparseable noise
            .with_script(AgentRole::Refiner, "no flows here at all")
            .with_script(AgentRole::Refiner, "still nothing");
        let outcome = orchestrator(2).run(DOC, &backend).unwrap();
        assert_eq!(outcome.records.len(), 2);
        assert!(outcome.final_dsl.contains("a -> b"));
        // the fallback graph still parses
        assert!(outcome.graph.edge_count() > 0);
    }

    #[test]
    fn budget_respected_in_every_round() {
        let backend = scripted_backend();
        let orch = orchestrator(2);
        let outcome = orch.run(DOC, &backend).unwrap();
        for record in &outcome.records {
            let spent: usize = record
                .feedback
                .iter()
                .filter(|f| f.selected)
                .map(|f| f.token_len)
                .sum();
            assert!(spent <= orch.config.prioritizer.token_budget);
            assert!(
                record.feedback.iter().filter(|f| f.selected).count()
                    <= orch.config.prioritizer.max_items
            );
        }
    }

    #[test]
    fn journal_resume_skips_agent_calls() {
        let dir = tempfile::tempdir().unwrap();
        let backend = scripted_backend();
        let orch = {
            let mut o = orchestrator(3);
            o.journal_dir = Some(dir.path().to_path_buf());
            o
        };
        let first = orch.run(DOC, &backend).unwrap();
        assert!(dir.path().join("round_0.json").exists());
        assert!(dir.path().join("round_1.json").exists());
        assert!(dir.path().join("final.flow.txt").exists());
        assert!(dir.path().join("feedback.jsonl").exists());

        // a backend that would panic if ever called
        struct Poison;
        impl AgentBackend for Poison {
            fn complete(
                &self,
                _: &crate::agents::AgentRequest,
            ) -> Result<crate::agents::AgentResponse, AgentError> {
                panic!("resumed run must not call the backend");
            }
            fn name(&self) -> &str {
                "poison"
            }
        }
        let second = orch.run(DOC, &Poison).unwrap();
        assert_eq!(second.final_dsl, first.final_dsl);
        assert_eq!(second.records.len(), first.records.len());
    }

    #[test]
    fn partial_journal_resumes_from_next_round() {
        let dir = tempfile::tempdir().unwrap();
        let orch = {
            let mut o = orchestrator(3);
            o.journal_dir = Some(dir.path().to_path_buf());
            o
        };
        // complete run, then delete the final artifacts and round 1
        let backend = scripted_backend();
        let first = orch.run(DOC, &backend).unwrap();
        fs::remove_file(dir.path().join("final.flow.txt")).unwrap();
        fs::remove_file(dir.path().join("final.graph.json")).unwrap();
        fs::remove_file(dir.path().join("round_1.json")).unwrap();

        // resume with a backend that only has the refiner script left
        let backend = MockBackend::new().with_script(
            AgentRole::Refiner,
            "For the process:\nStart -> receive the form\nreceive the form -> check the signature\ncheck the signature -> file the form\nfile the form -> End",
        );
        let second = orch.run(DOC, &backend).unwrap();
        assert_eq!(second.records.len(), first.records.len());
        assert_eq!(second.final_dsl, first.final_dsl);
        assert_eq!(second.records[0].graph_out, first.records[0].graph_out);
    }

    #[test]
    fn backend_outage_mid_run_returns_partial_outcome() {
        struct FailAfterFirst {
            inner: MockBackend,
            calls: std::sync::atomic::AtomicU32,
        }
        impl AgentBackend for FailAfterFirst {
            fn complete(
                &self,
                request: &crate::agents::AgentRequest,
            ) -> Result<crate::agents::AgentResponse, AgentError> {
                let n = self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if n == 0 {
                    self.inner.complete(request)
                } else {
                    Err(AgentError::Transport {
                        attempts: 3,
                        message: "connection refused".to_string(),
                    })
                }
            }
            fn name(&self) -> &str {
                "flaky"
            }
        }
        let backend = FailAfterFirst {
            inner: MockBackend::new()
                .with_script(AgentRole::Builder, "For the process:\nStart -> a\na -> b"),
            calls: std::sync::atomic::AtomicU32::new(0),
        };
        let outcome = orchestrator(2).run(DOC, &backend).unwrap();
        assert!(outcome.error.is_some());
        assert!(outcome.final_dsl.contains("a -> b"));
    }
}
