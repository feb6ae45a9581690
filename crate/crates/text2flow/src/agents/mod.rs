//! Agent roles behind one backend contract.
//!
//! Every model interaction in the pipeline goes through [`AgentBackend`]:
//! the graph builder, the structural critic, the span retriever, the
//! verbalizer, the semantic judge, and the refiner each render a prompt,
//! send one request, and parse the response defensively (a malformed
//! response degrades to an empty result plus warnings, never a panic).
//!
//! Two backends ship: [`HttpBackend`] speaks a chat-completion JSON
//! protocol, and [`MockBackend`] answers deterministically offline, which
//! keeps full pipeline runs reproducible in tests and fixtures.

mod http;
mod mock;
mod parse;
pub mod templates;

use std::fmt;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{FlowClass, NodeId, NodeKind, ProceduralGraph};
use crate::prioritizer::{FeedbackItem, FeedbackKind, FeedbackOrigin};
use crate::simulator::{GatewaySegment, IssueSignature};

pub use http::{HttpBackend, HttpBackendConfig};
pub use mock::MockBackend;
pub use parse::{parse_critique, parse_verdict};
pub use templates::FewShotSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    Builder,
    StructuralCritic,
    SpanRetriever,
    Verbalizer,
    SemanticJudge,
    Refiner,
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            AgentRole::Builder => "builder",
            AgentRole::StructuralCritic => "structural_critic",
            AgentRole::SpanRetriever => "span_retriever",
            AgentRole::Verbalizer => "verbalizer",
            AgentRole::SemanticJudge => "semantic_judge",
            AgentRole::Refiner => "refiner",
        };
        f.write_str(name)
    }
}

/// One fully rendered request.
#[derive(Debug, Clone)]
pub struct AgentRequest {
    pub role: AgentRole,
    pub prompt: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl AgentRequest {
    pub fn new(role: AgentRole, prompt: String) -> Self {
        AgentRequest {
            role,
            prompt,
            temperature: 0.0,
            max_output_tokens: 4096,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AgentResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: u64,
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("document is empty")]
    EmptyDocument,
    #[error("no structure issues to critique")]
    NoIssues,
    #[error("unknown gateway node {0}")]
    UnknownGateway(NodeId),
    #[error("backend transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend returned an empty response")]
    EmptyResponse,
    #[error("API key environment variable `{0}` is not set")]
    MissingApiKey(String),
    #[error("invalid backend configuration: {0}")]
    InvalidConfig(String),
}

/// The one contract every backend implements. Implementations must be safe
/// to call from multiple threads.
pub trait AgentBackend: Send + Sync {
    fn complete(&self, request: &AgentRequest) -> Result<AgentResponse, AgentError>;
    fn name(&self) -> &str;
}

/// Wraps a backend and records every exchange, for journaling and token
/// accounting.
pub struct RecordingBackend<'a> {
    inner: &'a dyn AgentBackend,
    log: Mutex<Vec<TranscriptEntry>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub role: String,
    pub prompt: String,
    pub response: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: u64,
}

impl<'a> RecordingBackend<'a> {
    pub fn new(inner: &'a dyn AgentBackend) -> Self {
        RecordingBackend {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn drain(&self) -> Vec<TranscriptEntry> {
        std::mem::take(&mut self.log.lock().expect("transcript lock"))
    }
}

impl AgentBackend for RecordingBackend<'_> {
    fn complete(&self, request: &AgentRequest) -> Result<AgentResponse, AgentError> {
        let response = self.inner.complete(request)?;
        self.log.lock().expect("transcript lock").push(TranscriptEntry {
            role: request.role.to_string(),
            prompt: request.prompt.clone(),
            response: response.text.clone(),
            prompt_tokens: response.prompt_tokens,
            completion_tokens: response.completion_tokens,
            latency_ms: response.latency_ms,
        });
        Ok(response)
    }

    fn name(&self) -> &str {
        self.inner.name()
    }
}

/// An issue handed to the structural critic: its counting signature plus
/// the human-readable rendering that goes into the prompt.
#[derive(Debug, Clone)]
pub struct RenderedIssue {
    pub signature: IssueSignature,
    pub text: String,
}

/// Critic output: confirmed issues as feedback, everything else as
/// warnings.
#[derive(Debug, Clone, Default)]
pub struct Critique {
    pub items: Vec<FeedbackItem>,
    pub warnings: Vec<String>,
}

/// Verdict of a semantic consistency check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticVerdict {
    pub subject: String,
    pub status: VerdictStatus,
    /// Empty iff approved.
    pub suggestion: String,
    pub explanation: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerdictStatus {
    Approved,
    Wrong,
}

impl SemanticVerdict {
    pub fn approved(subject: &str) -> Self {
        SemanticVerdict {
            subject: subject.to_string(),
            status: VerdictStatus::Approved,
            suggestion: String::new(),
            explanation: String::new(),
        }
    }
}

/// Asks the builder for an initial graph. Returns the raw flow text; the
/// caller parses and diagnoses it.
pub fn build_graph(
    document: &str,
    shots: &FewShotSet,
    backend: &dyn AgentBackend,
) -> Result<String, AgentError> {
    if document.trim().is_empty() {
        return Err(AgentError::EmptyDocument);
    }
    let template = with_shots(templates::FEW_SHOT_GENERATION, shots);
    let prompt = templates::render(&template, &[("procedural_document", document)]);
    let response = backend.complete(&AgentRequest::new(AgentRole::Builder, prompt))?;
    if response.text.trim().is_empty() {
        return Err(AgentError::EmptyResponse);
    }
    Ok(response.text)
}

fn with_shots(template: &str, shots: &FewShotSet) -> String {
    let standard = templates::FEW_SHOT_EXAMPLES.trim_end();
    if shots.block() == standard {
        template.to_string()
    } else {
        template.replacen(standard, shots.block(), 1)
    }
}

/// Sends simulator findings to the structural critic and keeps what it
/// confirms. An `APPROVED` response yields no items.
pub fn structural_critique(
    graph_dsl: &str,
    document: &str,
    issues: &[RenderedIssue],
    backend: &dyn AgentBackend,
) -> Result<Critique, AgentError> {
    if issues.is_empty() {
        return Err(AgentError::NoIssues);
    }
    let issue_list = issues
        .iter()
        .enumerate()
        .map(|(i, issue)| format!("Issue {}: {}", i + 1, issue.text))
        .collect::<Vec<_>>()
        .join("\n");
    let prompt = templates::render(
        templates::STRUCTURE_CHECK,
        &[
            ("extracted_rules", templates::GRAPH_RULES.trim_end()),
            ("generated_graph", &format!("\n{}", graph_dsl.trim_end())),
            ("procedural_document", document),
            ("structure_issues", &format!("\n{issue_list}")),
        ],
    );
    let response = backend.complete(&AgentRequest::new(AgentRole::StructuralCritic, prompt))?;
    let (confirmed, warnings) = parse::parse_critique(&response.text, issues.len());
    let items = confirmed
        .into_iter()
        .map(|(idx, suggestion)| {
            FeedbackItem::new(
                FeedbackKind::Structural,
                FeedbackOrigin::issue(&issues[idx - 1].signature),
                suggestion,
            )
        })
        .collect();
    for warning in &warnings {
        log::warn!("structural critique: {warning}");
    }
    Ok(Critique { items, warnings })
}

/// What a span retrieval or verbalization request is about.
#[derive(Debug, Clone, Copy)]
pub enum Subject<'a> {
    Gateway(NodeId),
    Segment(&'a GatewaySegment),
}

impl Subject<'_> {
    pub fn gateway_id(&self) -> NodeId {
        match self {
            Subject::Gateway(id) => *id,
            Subject::Segment(seg) => seg.gateway,
        }
    }
}

fn gateway_kind_word(graph: &ProceduralGraph, id: NodeId) -> &'static str {
    match graph.node(id) {
        Some(NodeKind::Xor(_)) => "exclusive",
        Some(NodeKind::Or(_)) => "inclusive",
        Some(NodeKind::And(_)) => "parallel",
        _ => "unknown",
    }
}

/// Structured rendering of a subject's control logic, shared by the span
/// retrieval and verbalization prompts (and parsed back by the mock).
pub fn structure_block(graph: &ProceduralGraph, subject: Subject<'_>) -> String {
    let gateway = subject.gateway_id();
    let mut lines = vec![format!(
        "Gateway: {} ({})",
        graph.node_label(gateway),
        gateway_kind_word(graph, gateway)
    )];
    lines.push("Branches:".to_string());
    for (edge, target) in graph
        .successors(gateway, Some(FlowClass::Executable))
        .unwrap_or_default()
    {
        let target_label = graph.node_label(target);
        match edge.kind.condition_label() {
            Some(label) => lines.push(format!("- ({label}) -> {target_label}")),
            None => lines.push(format!("- -> {target_label}")),
        }
    }
    if let Subject::Segment(segment) = subject {
        let paths: Vec<String> = segment
            .sequence_edges
            .iter()
            .filter(|e| e.source != gateway)
            .map(|e| {
                format!(
                    "- {} -> {}",
                    graph.node_label(e.source),
                    graph.node_label(e.target)
                )
            })
            .collect();
        if !paths.is_empty() {
            lines.push("Paths:".to_string());
            lines.extend(paths);
        }
        if !segment.constraint_edges.is_empty() {
            lines.push("Constraints:".to_string());
            for e in &segment.constraint_edges {
                lines.push(format!(
                    "- {} -> {}",
                    graph.node_label(e.source),
                    graph.node_label(e.target)
                ));
            }
        }
        if !segment.boundary.is_empty() {
            let names: Vec<String> = segment
                .boundary
                .iter()
                .map(|n| graph.node_label(*n))
                .collect();
            lines.push(format!("Boundary gateways: {}", names.join(", ")));
        }
    }
    lines.join("\n")
}

/// Asks the retrieval agent for the document clause backing a gateway (or
/// a whole segment). An empty span is a legitimate answer: it means the
/// document says nothing, and the judge treats the case as ambiguous.
pub fn retrieve_span(
    subject: Subject<'_>,
    graph: &ProceduralGraph,
    document: &str,
    backend: &dyn AgentBackend,
) -> Result<String, AgentError> {
    let gateway = subject.gateway_id();
    if !graph.node(gateway).is_some_and(NodeKind::is_gateway) {
        return Err(AgentError::UnknownGateway(gateway));
    }
    let prompt = templates::render(
        templates::SPAN_RETRIEVAL,
        &[
            ("gateway_name", graph.node_label(gateway).as_str()),
            ("gateway_structure", &structure_block(graph, subject)),
            ("document", document),
        ],
    );
    let response = backend.complete(&AgentRequest::new(AgentRole::SpanRetriever, prompt))?;
    Ok(response.text.trim().to_string())
}

/// Turns a gateway (or segment) back into a plain-language description of
/// its control logic. An empty segment verbalizes to the empty string
/// without a backend call.
pub fn verbalize(
    subject: Subject<'_>,
    graph: &ProceduralGraph,
    backend: &dyn AgentBackend,
) -> Result<String, AgentError> {
    let gateway = subject.gateway_id();
    if !graph.node(gateway).is_some_and(NodeKind::is_gateway) {
        return Err(AgentError::UnknownGateway(gateway));
    }
    if let Subject::Segment(segment) = subject {
        if segment.is_empty() {
            return Ok(String::new());
        }
    }
    let prompt = templates::render(
        templates::VERBALIZE,
        &[("structure", &structure_block(graph, subject))],
    );
    let response = backend.complete(&AgentRequest::new(AgentRole::Verbalizer, prompt))?;
    Ok(response.text.trim().to_string())
}

/// Checks a description of graph logic against the retrieved document
/// span. Empty spans are approved without asking the backend; only `wrong`
/// verdicts produce feedback downstream.
pub fn judge_consistency(
    span: &str,
    description: &str,
    subject_label: &str,
    backend: &dyn AgentBackend,
) -> Result<(SemanticVerdict, Vec<String>), AgentError> {
    if span.trim().is_empty() || description.trim().is_empty() {
        return Ok((SemanticVerdict::approved(subject_label), Vec::new()));
    }
    let prompt = templates::render(
        templates::LOGIC_CHECK,
        &[
            (
                "gateway_trace_text",
                format!("{subject_label}: {description}").as_str(),
            ),
            ("original_document", span),
        ],
    );
    let response = backend.complete(&AgentRequest::new(AgentRole::SemanticJudge, prompt))?;
    let (verdict, warnings) = parse::parse_verdict(&response.text, subject_label);
    for warning in &warnings {
        log::warn!("semantic judge: {warning}");
    }
    Ok((verdict, warnings))
}

/// Asks the refiner for the next-round graph given the previous one and
/// the selected feedback. With no feedback the issues placeholder reads
/// `none` and the prompt is still sent.
pub fn refine_graph(
    previous_dsl: &str,
    feedback: &[FeedbackItem],
    document: &str,
    shots: &FewShotSet,
    backend: &dyn AgentBackend,
) -> Result<String, AgentError> {
    if document.trim().is_empty() {
        return Err(AgentError::EmptyDocument);
    }
    let issues = if feedback.is_empty() {
        "none".to_string()
    } else {
        let lines: Vec<String> = feedback
            .iter()
            .enumerate()
            .map(|(i, item)| format!("{}. {}", i + 1, item.text))
            .collect();
        format!("\n{}", lines.join("\n"))
    };
    let prompt = templates::render(
        templates::GRAPH_REFINE,
        &[
            ("few_shot_examples", shots.block()),
            ("generated_graph", &format!("\n{}", previous_dsl.trim_end())),
            ("issues_and_revisions", &issues),
            ("procedural_document", document),
        ],
    );
    let response = backend.complete(&AgentRequest::new(AgentRole::Refiner, prompt))?;
    if response.text.trim().is_empty() {
        return Err(AgentError::EmptyResponse);
    }
    Ok(response.text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl;

    #[test]
    fn build_graph_rejects_empty_document() {
        let backend = MockBackend::new();
        let err = build_graph("   ", &FewShotSet::standard(), &backend).unwrap_err();
        assert!(matches!(err, AgentError::EmptyDocument));
    }

    #[test]
    fn structural_critique_requires_issues() {
        let backend = MockBackend::new();
        let err = structural_critique("Start -> End", "doc", &[], &backend).unwrap_err();
        assert!(matches!(err, AgentError::NoIssues));
    }

    #[test]
    fn retrieve_span_rejects_non_gateway() {
        let (graph, _) = dsl::parse("Start -> a\na -> End");
        let backend = MockBackend::new();
        let id = graph.node_ids().next().unwrap();
        let err = retrieve_span(Subject::Gateway(id), &graph, "doc", &backend).unwrap_err();
        assert!(matches!(err, AgentError::UnknownGateway(_)));
    }

    #[test]
    fn judge_approves_empty_span_without_backend() {
        struct Unreachable;
        impl AgentBackend for Unreachable {
            fn complete(&self, _: &AgentRequest) -> Result<AgentResponse, AgentError> {
                panic!("must not be called");
            }
            fn name(&self) -> &str {
                "unreachable"
            }
        }
        let (verdict, warnings) =
            judge_consistency("", "If a then b.", "XOR1", &Unreachable).unwrap();
        assert_eq!(verdict.status, VerdictStatus::Approved);
        assert!(verdict.suggestion.is_empty());
        assert!(warnings.is_empty());
    }

    #[test]
    fn recording_backend_captures_exchanges() {
        let mock = MockBackend::new().with_script(AgentRole::Builder, "Start -> End");
        let recorder = RecordingBackend::new(&mock);
        build_graph("a doc", &FewShotSet::standard(), &recorder).unwrap();
        let log = recorder.drain();
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].role, "builder");
        assert!(log[0].prompt.contains("a doc"));
        assert_eq!(log[0].response, "Start -> End");
        assert!(recorder.drain().is_empty());
    }

    #[test]
    fn refine_renders_feedback_verbatim() {
        let items = vec![
            FeedbackItem::new(
                FeedbackKind::Structural,
                FeedbackOrigin::gateway("XOR1"),
                "Add an edge from pay in cash to XOR2.",
            ),
            FeedbackItem::new(
                FeedbackKind::Semantic,
                FeedbackOrigin::gateway("OR1"),
                "Change OR1 to XOR1.",
            ),
            FeedbackItem::new(
                FeedbackKind::Structural,
                FeedbackOrigin::gateway("AND1"),
                "Reconnect the unreachable node 'record the request status'.",
            ),
        ];
        struct Capture(std::sync::Mutex<String>);
        impl AgentBackend for Capture {
            fn complete(&self, request: &AgentRequest) -> Result<AgentResponse, AgentError> {
                *self.0.lock().unwrap() = request.prompt.clone();
                Ok(AgentResponse {
                    text: "Start -> End".into(),
                    prompt_tokens: 0,
                    completion_tokens: 0,
                    latency_ms: 0,
                })
            }
            fn name(&self) -> &str {
                "capture"
            }
        }
        let capture = Capture(std::sync::Mutex::new(String::new()));
        refine_graph("Start -> End", &items, "doc", &FewShotSet::standard(), &capture).unwrap();
        let prompt = capture.0.lock().unwrap().clone();
        for item in &items {
            assert!(prompt.contains(&item.text), "missing {:?}", item.text);
        }
    }
}
