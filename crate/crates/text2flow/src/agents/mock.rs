//! Deterministic offline backend.
//!
//! Responses come from two places: explicit per-role scripts (consumed in
//! order, for fixture-driven tests) and built-in heuristics that parse the
//! rendered prompt itself. Both are pure functions of the request and the
//! configured scripts, so whole pipeline runs reproduce bit-for-bit with no
//! network.
//!
//! Built-in behavior per role:
//! - builder: linear Start → sentence → … → End chain over the document
//! - structural critic: confirms every listed issue with a reconnect hint
//! - span retriever: document sentence with the highest unigram overlap
//!   against the gateway structure block; empty when nothing overlaps
//! - verbalizer: fixed sentence templates per gateway kind
//! - semantic judge: flags OR gateways whose span reads exclusively
//!   ("otherwise"/"else"/"either"), mirroring the worked example; approves
//!   everything else
//! - refiner: applies backtick-quoted `a -> b` edges from the suggestions
//!   to the previous graph; with no suggestions, rebuilds like the builder

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::sync::Mutex;

use super::{AgentBackend, AgentError, AgentRequest, AgentResponse, AgentRole};

#[derive(Default)]
pub struct MockBackend {
    scripts: Mutex<HashMap<AgentRole, VecDeque<String>>>,
}

impl MockBackend {
    pub fn new() -> Self {
        MockBackend::default()
    }

    /// Queues a scripted response for `role`; scripted responses are
    /// consumed before any built-in heuristic.
    pub fn with_script(self, role: AgentRole, response: impl Into<String>) -> Self {
        self.push_script(role, response);
        self
    }

    pub fn push_script(&self, role: AgentRole, response: impl Into<String>) {
        self.scripts
            .lock()
            .expect("script lock")
            .entry(role)
            .or_default()
            .push_back(response.into());
    }

    fn pop_script(&self, role: AgentRole) -> Option<String> {
        self.scripts
            .lock()
            .expect("script lock")
            .get_mut(&role)
            .and_then(VecDeque::pop_front)
    }
}

impl AgentBackend for MockBackend {
    fn complete(&self, request: &AgentRequest) -> Result<AgentResponse, AgentError> {
        let text = match self.pop_script(request.role) {
            Some(scripted) => scripted,
            None => builtin(request.role, &request.prompt),
        };
        Ok(AgentResponse {
            prompt_tokens: request.prompt.split_whitespace().count() as u64,
            completion_tokens: text.split_whitespace().count() as u64,
            latency_ms: 0,
            text,
        })
    }

    fn name(&self) -> &str {
        "mock"
    }
}

fn builtin(role: AgentRole, prompt: &str) -> String {
    match role {
        AgentRole::Builder => naive_builder(extract_document(prompt)),
        AgentRole::StructuralCritic => confirm_all_issues(prompt),
        AgentRole::SpanRetriever => best_overlap_sentence(prompt),
        AgentRole::Verbalizer => verbalize_structure(prompt),
        AgentRole::SemanticJudge => judge(prompt),
        AgentRole::Refiner => refine(prompt),
    }
}

fn section<'a>(text: &'a str, start_marker: &str, end_marker: Option<&str>) -> &'a str {
    let Some(at) = text.rfind(start_marker) else {
        return "";
    };
    let rest = &text[at + start_marker.len()..];
    match end_marker.and_then(|m| rest.find(m)) {
        Some(end) => &rest[..end],
        None => rest,
    }
}

fn extract_document(prompt: &str) -> &str {
    for marker in ["### Procedural document: ", "### \"Procedural Document\": "] {
        let doc = section(prompt, marker, None);
        if !doc.trim().is_empty() {
            return doc;
        }
    }
    ""
}

fn sentences(document: &str) -> Vec<String> {
    document
        .split(['.', '!', '?', ';'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

/// Linear chain over the document's sentences.
fn naive_builder(document: &str) -> String {
    let steps = sentences(document);
    let mut lines = vec!["For the process:".to_string()];
    if steps.is_empty() {
        lines.push("Start -> End".to_string());
    } else {
        lines.push(format!("Start -> {}", steps[0]));
        for pair in steps.windows(2) {
            lines.push(format!("{} -> {}", pair[0], pair[1]));
        }
        lines.push(format!("{} -> End", steps[steps.len() - 1]));
    }
    lines.join("\n")
}

fn listed_issues(prompt: &str) -> Vec<String> {
    let block = section(
        prompt,
        "detected in the graph: ",
        Some("\n\n### Structure Feedback Check"),
    );
    block
        .lines()
        .filter_map(|line| {
            let line = line.trim();
            let rest = line.strip_prefix("Issue ")?;
            let colon = rest.find(": ")?;
            Some(rest[colon + 2..].to_string())
        })
        .collect()
}

fn confirm_all_issues(prompt: &str) -> String {
    let issues = listed_issues(prompt);
    if issues.is_empty() {
        return "APPROVED".to_string();
    }
    issues
        .iter()
        .enumerate()
        .map(|(i, text)| {
            format!(
                "Issue {n}\n- Problem: {text}\n- Status: Confirmed\n- Suggestion (if confirmed): \
                 Reconnect the execution flow so this does not happen: {text}",
                n = i + 1
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn word_set(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Highest-unigram-overlap sentence against the structure block.
fn best_overlap_sentence(prompt: &str) -> String {
    let structure = section(
        prompt,
        "### Gateway structure:\n",
        Some("\n\n### Procedural Document:"),
    );
    let document = section(
        prompt,
        "### Procedural Document:\n",
        Some("\n\nReply with"),
    );
    let query = word_set(structure);
    let mut best: Option<(usize, String)> = None;
    for sentence in sentences(document) {
        let overlap = word_set(&sentence).intersection(&query).count();
        if overlap > 0 && best.as_ref().is_none_or(|(score, _)| overlap > *score) {
            best = Some((overlap, sentence));
        }
    }
    best.map(|(_, s)| s).unwrap_or_default()
}

struct Structure {
    gateway: String,
    kind_word: String,
    branches: Vec<(Option<String>, String)>,
    paths: Vec<String>,
}

fn parse_structure(block: &str) -> Structure {
    let mut s = Structure {
        gateway: String::new(),
        kind_word: String::new(),
        branches: Vec::new(),
        paths: Vec::new(),
    };
    let mut in_section = "";
    for line in block.lines() {
        let line = line.trim();
        if let Some(rest) = line.strip_prefix("Gateway: ") {
            if let Some(open) = rest.rfind(" (") {
                s.gateway = rest[..open].to_string();
                s.kind_word = rest[open + 2..].trim_end_matches(')').to_string();
            } else {
                s.gateway = rest.to_string();
            }
        } else if line == "Branches:" || line == "Paths:" || line == "Constraints:" {
            in_section = match line {
                "Branches:" => "branches",
                "Paths:" => "paths",
                _ => "other",
            };
        } else if let Some(rest) = line.strip_prefix("- ") {
            match in_section {
                "branches" => {
                    if let Some(inner) = rest.strip_prefix('(') {
                        if let Some(close) = inner.rfind(") -> ") {
                            s.branches.push((
                                Some(inner[..close].to_string()),
                                inner[close + 5..].to_string(),
                            ));
                            continue;
                        }
                    }
                    let target = rest.strip_prefix("-> ").unwrap_or(rest);
                    s.branches.push((None, target.to_string()));
                }
                "paths" => s.paths.push(rest.to_string()),
                _ => {}
            }
        }
    }
    s
}

fn verbalize_structure(prompt: &str) -> String {
    let block = section(prompt, "### Structure:\n", Some("\n\nReply with"));
    let s = parse_structure(block);
    if s.branches.is_empty() {
        return String::new();
    }
    let mut sentence = match s.kind_word.as_str() {
        "parallel" => {
            let targets: Vec<&str> = s.branches.iter().map(|(_, t)| t.as_str()).collect();
            let list = match targets.len() {
                1 => targets[0].to_string(),
                2 => format!("{} and {}", targets[0], targets[1]),
                _ => format!(
                    "{} and {}",
                    targets[..targets.len() - 1].join(", "),
                    targets[targets.len() - 1]
                ),
            };
            format!("Do {list} at the same time.")
        }
        "inclusive" => {
            let parts: Vec<String> = s
                .branches
                .iter()
                .map(|(label, target)| match label {
                    Some(l) => format!("if {l} then {target}"),
                    None => target.clone(),
                })
                .collect();
            format!(
                "One or more of the following may be taken: {}.",
                parts.join("; ")
            )
        }
        _ => {
            // exclusive
            let mut parts = Vec::new();
            for (i, (label, target)) in s.branches.iter().enumerate() {
                let last = i + 1 == s.branches.len();
                let part = match (i, label, last) {
                    (0, Some(l), _) => format!("If {l} then {target}"),
                    (0, None, _) => format!("Either {target}"),
                    (_, _, true) => format!("otherwise {target}"),
                    (_, Some(l), false) => format!("otherwise if {l} then {target}"),
                    (_, None, false) => format!("or {target}"),
                };
                parts.push(part);
            }
            format!("{}.", parts.join("; "))
        }
    };
    if !s.paths.is_empty() {
        sentence.push_str(&format!(" Afterwards: {}.", s.paths.join("; ")));
    }
    sentence
}

fn judge(prompt: &str) -> String {
    let trace_text = section(
        prompt,
        "1. text of gateway segment trace extracted from simulator: ",
        Some("\n2. original document segment:"),
    );
    let span = section(
        prompt,
        "2. original document segment: ",
        Some("\n\n### Gateway Identification Guidelines"),
    );
    let gateway = trace_text.split(':').next().unwrap_or("").trim();
    let span_lower = span.to_lowercase();
    let exclusive_signal = span_lower.contains("otherwise")
        || span_lower.contains(" else")
        || span_lower.contains("either");
    if gateway.starts_with("OR") && exclusive_signal {
        let index = gateway.trim_start_matches("OR");
        return format!(
            "{gateway}: {span}\n- Status: wrong.\n- Revision Suggestion: Change {gateway} to \
             XOR{index}.\n- Explanation: The phrase uses mutually exclusive conditions; only one \
             branch is taken at a time, so this logic requires an XOR, not an OR.",
            span = span.trim()
        );
    }
    "APPROVED".to_string()
}

fn refine(prompt: &str) -> String {
    let suggestions = section(
        prompt,
        "just refer them as references if available): ",
        Some("\n\nNow you need to generate"),
    );
    let previous = section(
        prompt,
        "### \"Previously Generated Procedural Graph\": ",
        Some("\n\n### \"Detected Issues"),
    );
    if suggestions.trim() == "none" || suggestions.trim().is_empty() {
        return naive_builder(extract_document(prompt));
    }
    let mut graph = previous.trim().to_string();
    let existing: BTreeSet<String> = graph.lines().map(|l| l.trim().to_string()).collect();
    for quoted in backtick_spans(suggestions) {
        if quoted.contains("->") && !existing.contains(quoted.trim()) {
            graph.push('\n');
            graph.push_str(quoted.trim());
        }
    }
    graph
}

fn backtick_spans(text: &str) -> Vec<&str> {
    let mut spans = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('`') {
        let after = &rest[open + 1..];
        let Some(close) = after.find('`') else { break };
        spans.push(&after[..close]);
        rest = &after[close + 1..];
    }
    spans
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::templates;
    use crate::agents::{build_graph, FewShotSet};
    use crate::dsl;

    #[test]
    fn scripted_responses_take_priority_and_are_consumed() {
        let mock = MockBackend::new()
            .with_script(AgentRole::Builder, "first")
            .with_script(AgentRole::Builder, "second");
        let req = AgentRequest::new(AgentRole::Builder, "x".into());
        assert_eq!(mock.complete(&req).unwrap().text, "first");
        assert_eq!(mock.complete(&req).unwrap().text, "second");
        // queue exhausted: builder falls back to the naive heuristic
        assert!(mock.complete(&req).unwrap().text.starts_with("For the process:"));
    }

    #[test]
    fn naive_builder_output_parses_cleanly() {
        let mock = MockBackend::new();
        let text = build_graph(
            "Receive the form. Check the signature. File the form.",
            &FewShotSet::standard(),
            &mock,
        )
        .unwrap();
        let (graph, diags) = dsl::parse(&text);
        assert!(diags.is_empty());
        assert_eq!(graph.edge_count(), 4);
        assert_eq!(graph.lanes()[0].actor, "the process");
    }

    #[test]
    fn critic_confirms_listed_issues() {
        let prompt = templates::render(
            templates::STRUCTURE_CHECK,
            &[
                ("extracted_rules", "rules"),
                ("generated_graph", "Start -> a"),
                ("procedural_document", "doc"),
                (
                    "structure_issues",
                    "\nIssue 1: dead end: node 'a' has no outgoing executable flow",
                ),
            ],
        );
        let response = builtin(AgentRole::StructuralCritic, &prompt);
        assert!(response.contains("Issue 1"));
        assert!(response.contains("- Status: Confirmed"));
        assert!(response.contains("dead end: node 'a'"));
    }

    #[test]
    fn span_retriever_picks_overlapping_sentence() {
        let prompt = templates::render(
            templates::SPAN_RETRIEVAL,
            &[
                ("gateway_name", "XOR1"),
                (
                    "gateway_structure",
                    "Gateway: XOR1 (exclusive)\nBranches:\n- (credit card is available) -> pay by credit card\n- (credit card is unavailable) -> pay in cash",
                ),
                (
                    "document",
                    "The customer finds a seat. If the credit card is available, the customer pays by credit card; else pay in cash. The meal is served.",
                ),
            ],
        );
        let response = builtin(AgentRole::SpanRetriever, &prompt);
        assert!(response.contains("credit card"));
        assert!(!response.contains("seat"));
    }

    #[test]
    fn span_retriever_returns_empty_without_overlap() {
        let prompt = templates::render(
            templates::SPAN_RETRIEVAL,
            &[
                ("gateway_name", "XOR1"),
                ("gateway_structure", "Gateway: XOR1 (exclusive)\nBranches:\n- (zzz) -> qqq"),
                ("document", "Totally unrelated words here."),
            ],
        );
        assert_eq!(builtin(AgentRole::SpanRetriever, &prompt), "");
    }

    #[test]
    fn verbalizer_templates_per_kind() {
        let xor = templates::render(
            templates::VERBALIZE,
            &[(
                "structure",
                "Gateway: XOR1 (exclusive)\nBranches:\n- (credit card is available) -> pay by credit card\n- (credit card is unavailable) -> pay in cash",
            )],
        );
        assert_eq!(
            builtin(AgentRole::Verbalizer, &xor),
            "If credit card is available then pay by credit card; otherwise pay in cash."
        );

        let and = templates::render(
            templates::VERBALIZE,
            &[(
                "structure",
                "Gateway: AND1 (parallel)\nBranches:\n- -> prepare the meal\n- -> prepare the tableware",
            )],
        );
        let text = builtin(AgentRole::Verbalizer, &and);
        assert!(text.contains("at the same time"), "{text}");
    }

    #[test]
    fn judge_flags_or_with_exclusive_span() {
        let prompt = templates::render(
            templates::LOGIC_CHECK,
            &[
                (
                    "gateway_trace_text",
                    "OR1: One or more of the following may be taken: if no old supplier info then check the deadline; continue the check.",
                ),
                (
                    "original_document",
                    "If there is no information about the old supplier, then check the deadline of 4 business days. Otherwise, continue to do the check.",
                ),
            ],
        );
        let response = builtin(AgentRole::SemanticJudge, &prompt);
        assert!(response.contains("- Status: wrong"));
        assert!(response.contains("Change OR1 to XOR1"));
    }

    #[test]
    fn judge_approves_consistent_xor() {
        let prompt = templates::render(
            templates::LOGIC_CHECK,
            &[
                ("gateway_trace_text", "XOR1: If credit card then pay by card; otherwise cash."),
                ("original_document", "If the credit card is available pay by card, otherwise pay cash."),
            ],
        );
        assert_eq!(builtin(AgentRole::SemanticJudge, &prompt), "APPROVED");
    }

    #[test]
    fn refiner_applies_backticked_edges() {
        let prompt = templates::render(
            templates::GRAPH_REFINE,
            &[
                ("few_shot_examples", "none"),
                ("generated_graph", "\nFor the process:\nStart -> a"),
                (
                    "issues_and_revisions",
                    "\n1. Add an edge `a -> End` to terminate the flow.",
                ),
                ("procedural_document", "doc"),
            ],
        );
        let out = builtin(AgentRole::Refiner, &prompt);
        assert!(out.contains("Start -> a"));
        assert!(out.ends_with("a -> End"));
    }

    #[test]
    fn refiner_with_no_feedback_behaves_like_builder() {
        let doc = "Receive the form. Check it.";
        let refine_prompt = templates::render(
            templates::GRAPH_REFINE,
            &[
                ("few_shot_examples", "none"),
                ("generated_graph", "\nStart -> something"),
                ("issues_and_revisions", "none"),
                ("procedural_document", doc),
            ],
        );
        let build_prompt =
            templates::render(templates::FEW_SHOT_GENERATION, &[("procedural_document", doc)]);
        assert_eq!(
            builtin(AgentRole::Refiner, &refine_prompt),
            builtin(AgentRole::Builder, &build_prompt)
        );
    }
}
