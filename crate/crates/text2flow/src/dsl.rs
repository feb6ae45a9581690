//! Parser and serializer for the line-oriented flow text format.
//!
//! Grammar (EBNF, one construct per physical line):
//!
//! ```text
//! document   = { line } ;
//! line       = header | flow | blank ;
//! header     = "For" SP actor ":" ;
//! flow       = node SP "->" SP [ "(" condition ")" SP ] node ;
//! node       = "Start" | "End" | gateway | aux | action-text ;
//! gateway    = ( "XOR" | "OR" | "AND" ) positive-integer ;
//! aux        = ( "DataObject" | "TextAnnotation" ) "(" text ")" ;
//! ```
//!
//! The parser is total: it never fails on any input. Lines that do not
//! match the grammar become [`ParseDiagnostic`]s and the rest of the
//! document still parses. Flows seen before any header land in an implicit
//! `the process` lane. Markdown code fences around the text are ignored.

use std::fmt;

use crate::graph::{FlowKind, LaneId, NodeKind, ProceduralGraph};

/// Classification of one physical input line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedLine {
    pub raw: String,
    pub line: usize,
    pub variant: LineVariant,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LineVariant {
    ActorHeader(String),
    Flow {
        source: String,
        condition: Option<String>,
        target: String,
    },
    Blank,
    Unrecognized(String),
}

/// Non-fatal observation produced while parsing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseDiagnostic {
    pub line: usize,
    pub kind: DiagnosticKind,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagnosticKind {
    /// The line matched no construct; it was skipped.
    Unrecognized,
    /// A condition label on an edge whose source is not a gateway.
    ConditionFromNonGateway,
    /// A parenthesized group at the end of the target, where a condition
    /// label would not be read. Parsed as action text.
    MisplacedCondition,
    /// `( )` with nothing inside; the edge degrades to a sequence flow.
    EmptyConditionLabel,
    /// `(` after the arrow with no balancing `)`.
    UnterminatedCondition,
}

impl fmt::Display for ParseDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

/// Finds `->` occurrences outside parentheses.
fn top_level_arrows(s: &str) -> Vec<usize> {
    let bytes = s.as_bytes();
    let mut depth = 0i32;
    let mut found = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'(' => depth += 1,
            b')' => depth = (depth - 1).max(0),
            b'-' if depth == 0 && i + 1 < bytes.len() && bytes[i + 1] == b'>' => {
                found.push(i);
                i += 1;
            }
            _ => {}
        }
        i += 1;
    }
    found
}

/// Span of the balanced group starting at `open` (which must index a `(`);
/// returns the index of the matching `)`.
fn balanced_close(s: &str, open: usize) -> Option<usize> {
    let bytes = s.as_bytes();
    let mut depth = 0;
    for (i, &b) in bytes.iter().enumerate().skip(open) {
        match b {
            b'(' => depth += 1,
            b')' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

/// Classifies one line. Markdown fence lines are treated as blank.
pub fn classify_line(raw: &str, line: usize) -> ParsedLine {
    let text = raw.trim();
    let mk = |variant| ParsedLine {
        raw: raw.to_string(),
        line,
        variant,
    };
    if text.is_empty() || text.starts_with("```") {
        return mk(LineVariant::Blank);
    }
    if (text.starts_with("For ") || text.starts_with("for ")) && text.ends_with(':') {
        let actor = text[4..text.len() - 1].trim();
        if !actor.is_empty() {
            return mk(LineVariant::ActorHeader(actor.to_string()));
        }
    }
    let arrows = top_level_arrows(text);
    match arrows.len() {
        0 => mk(LineVariant::Unrecognized("no `->` separator".to_string())),
        1 => {
            let at = arrows[0];
            let source = text[..at].trim().to_string();
            let mut rest = text[at + 2..].trim_start();
            let mut condition = None;
            if rest.starts_with('(') {
                if let Some(close) = balanced_close(rest, 0) {
                    condition = Some(rest[1..close].trim().to_string());
                    rest = rest[close + 1..].trim_start();
                } else {
                    return mk(LineVariant::Unrecognized(
                        "unbalanced `(` after `->`".to_string(),
                    ));
                }
            }
            let target = rest.trim().to_string();
            if source.is_empty() || target.is_empty() {
                return mk(LineVariant::Unrecognized(
                    "missing source or target node".to_string(),
                ));
            }
            mk(LineVariant::Flow {
                source,
                condition,
                target,
            })
        }
        _ => mk(LineVariant::Unrecognized(
            "more than one top-level `->`".to_string(),
        )),
    }
}

/// Maps a node token to its kind. Unknown shapes are action text.
pub fn classify_token(token: &str) -> NodeKind {
    let t = token.trim();
    if t == "Start" {
        return NodeKind::Start;
    }
    if t == "End" {
        return NodeKind::End;
    }
    for (prefix, make) in [
        ("XOR", NodeKind::Xor as fn(u32) -> NodeKind),
        ("AND", NodeKind::And as fn(u32) -> NodeKind),
        ("OR", NodeKind::Or as fn(u32) -> NodeKind),
    ] {
        if let Some(digits) = t.strip_prefix(prefix) {
            if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
                if let Ok(n) = digits.parse::<u32>() {
                    if n > 0 {
                        return make(n);
                    }
                }
            }
        }
    }
    for (prefix, make) in [
        ("DataObject(", NodeKind::DataObject as fn(String) -> NodeKind),
        (
            "TextAnnotation(",
            NodeKind::TextAnnotation as fn(String) -> NodeKind,
        ),
    ] {
        if t.starts_with(prefix) && t.ends_with(')') {
            let inner = t[prefix.len()..t.len() - 1].trim();
            if !inner.is_empty() {
                return make(inner.to_string());
            }
        }
    }
    NodeKind::Action(t.to_string())
}

/// Best-effort parse of a flow document. Never aborts; anything the grammar
/// does not cover is reported as a diagnostic and skipped.
pub fn parse(text: &str) -> (ProceduralGraph, Vec<ParseDiagnostic>) {
    let mut graph = ProceduralGraph::new();
    let mut diagnostics = Vec::new();
    let mut current: Option<LaneId> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let parsed = classify_line(raw, line_no);
        match parsed.variant {
            LineVariant::Blank => {}
            LineVariant::ActorHeader(actor) => {
                current = Some(graph.add_lane(&actor));
            }
            LineVariant::Unrecognized(reason) => {
                diagnostics.push(ParseDiagnostic {
                    line: line_no,
                    kind: DiagnosticKind::Unrecognized,
                    message: format!("unrecognized line ({reason}): {}", raw.trim()),
                });
            }
            LineVariant::Flow {
                source,
                condition,
                target,
            } => {
                let lane = *current.get_or_insert_with(|| graph.add_lane("the process"));
                let src_kind = classify_token(&source);
                let dst_kind = classify_token(&target);

                if condition.is_none()
                    && !dst_kind.is_auxiliary()
                    && target.ends_with(')')
                    && target.contains('(')
                {
                    diagnostics.push(ParseDiagnostic {
                        line: line_no,
                        kind: DiagnosticKind::MisplacedCondition,
                        message: format!(
                            "parenthesized group at end of target is not read as a \
                             condition label; conditions go right after `->`: {}",
                            raw.trim()
                        ),
                    });
                }

                let mut flow = match condition {
                    Some(label) if label.is_empty() => {
                        diagnostics.push(ParseDiagnostic {
                            line: line_no,
                            kind: DiagnosticKind::EmptyConditionLabel,
                            message: format!(
                                "empty condition label; treating as sequence flow: {}",
                                raw.trim()
                            ),
                        });
                        FlowKind::Sequence
                    }
                    Some(label) => FlowKind::Condition(label),
                    None => FlowKind::Sequence,
                };
                if matches!(flow, FlowKind::Sequence)
                    && (src_kind.is_auxiliary() || dst_kind.is_auxiliary())
                {
                    flow = FlowKind::Constraint;
                }
                if matches!(flow, FlowKind::Condition(_)) && !src_kind.is_gateway() {
                    diagnostics.push(ParseDiagnostic {
                        line: line_no,
                        kind: DiagnosticKind::ConditionFromNonGateway,
                        message: format!(
                            "condition flow from non-gateway node `{source}`: {}",
                            raw.trim()
                        ),
                    });
                }

                let src = graph.add_node(lane, src_kind);
                let dst = graph.add_node(lane, dst_kind);
                graph.add_edge(lane, src, dst, flow);
            }
        }
    }
    (graph, diagnostics)
}

/// Renders a graph back to flow text: one `For <actor>:` header per lane,
/// edges in insertion order, lanes separated by a blank line. The empty
/// graph renders as the empty string.
pub fn serialize(graph: &ProceduralGraph) -> String {
    let mut blocks = Vec::new();
    for lane in graph.lanes() {
        let mut lines = vec![format!("For {}:", lane.actor)];
        for edge in &lane.edges {
            let src = graph.node_label(edge.source);
            let dst = graph.node_label(edge.target);
            lines.push(match &edge.kind {
                FlowKind::Condition(label) => format!("{src} -> ({label}) {dst}"),
                _ => format!("{src} -> {dst}"),
            });
        }
        blocks.push(lines.join("\n"));
    }
    if blocks.is_empty() {
        String::new()
    } else {
        blocks.join("\n\n") + "\n"
    }
}

/// Canonical edge multiset used by tests and the round-trip property:
/// `(normalized actor, source key, flow tag + label, target key)` rows,
/// sorted. Two graphs are isomorphic for our purposes when these agree.
pub fn canonical_edges(graph: &ProceduralGraph) -> Vec<(String, String, String, String)> {
    use crate::graph::normalize_text;
    let mut rows = Vec::new();
    for lane in graph.lanes() {
        for e in &lane.edges {
            let kind = match &e.kind {
                FlowKind::Sequence => "seq".to_string(),
                FlowKind::Condition(l) => format!("cond:{l}"),
                FlowKind::Constraint => "constr".to_string(),
            };
            rows.push((
                normalize_text(&lane.actor),
                node_key(graph, e.source),
                kind,
                node_key(graph, e.target),
            ));
        }
    }
    rows.sort();
    rows
}

fn node_key(graph: &ProceduralGraph, id: crate::graph::NodeId) -> String {
    use crate::graph::normalize_text;
    match graph.node(id) {
        Some(NodeKind::Start) => "Start".to_string(),
        Some(NodeKind::End) => "End".to_string(),
        Some(NodeKind::Action(t)) => format!("act:{}", normalize_text(t)),
        Some(NodeKind::Xor(i)) => format!("XOR{i}"),
        Some(NodeKind::Or(i)) => format!("OR{i}"),
        Some(NodeKind::And(i)) => format!("AND{i}"),
        Some(NodeKind::DataObject(t)) => format!("data:{}", normalize_text(t)),
        Some(NodeKind::TextAnnotation(t)) => format!("note:{}", normalize_text(t)),
        None => id.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::FlowClass;

    #[test]
    fn sequence_flow_line() {
        let (g, diags) = parse("Start -> find an empty seat");
        assert!(diags.is_empty());
        assert_eq!(g.node_count(), 2);
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.lanes()[0].actor, "the process");
        let e = &g.lanes()[0].edges[0];
        assert_eq!(e.kind, FlowKind::Sequence);
        assert_eq!(g.node(e.source), Some(&NodeKind::Start));
    }

    #[test]
    fn condition_flow_line() {
        let (g, diags) = parse("XOR1 -> (credit card is available) pay by credit card");
        assert!(diags.is_empty());
        let e = &g.lanes()[0].edges[0];
        assert_eq!(
            e.kind,
            FlowKind::Condition("credit card is available".into())
        );
        assert_eq!(g.node(e.source), Some(&NodeKind::Xor(1)));
        assert_eq!(
            g.node(e.target),
            Some(&NodeKind::Action("pay by credit card".into()))
        );
    }

    #[test]
    fn constraint_flow_line() {
        let (g, diags) =
            parse("confirm the payment -> TextAnnotation(provide the receipt if the customer needs)");
        assert!(diags.is_empty());
        assert_eq!(g.lanes()[0].edges[0].kind, FlowKind::Constraint);
    }

    #[test]
    fn line_without_arrow_is_diagnosed_and_skipped() {
        let (g, diags) = parse("this line has no arrow");
        assert_eq!(g.edge_count(), 0);
        assert_eq!(g.node_count(), 0);
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].kind, DiagnosticKind::Unrecognized);
    }

    #[test]
    fn empty_input_is_empty_graph_no_diagnostics() {
        let (g, diags) = parse("");
        assert_eq!(g.node_count(), 0);
        assert!(diags.is_empty());
        assert_eq!(serialize(&g), "");
    }

    #[test]
    fn actor_header_scopes_following_flows() {
        let text = "For the customer:\nStart -> order\n\nFor the restaurant:\nStart -> serve\n";
        let (g, diags) = parse(text);
        assert!(diags.is_empty());
        assert_eq!(g.lanes().len(), 2);
        assert_eq!(g.lanes()[0].actor, "the customer");
        assert_eq!(g.lanes()[1].actor, "the restaurant");
        // each lane has its own Start
        assert_eq!(g.node_count(), 4);
    }

    #[test]
    fn condition_from_non_gateway_parses_with_diagnostic() {
        let (g, diags) = parse("submit -> (paid) ship");
        assert_eq!(g.edge_count(), 1);
        assert!(matches!(
            g.lanes()[0].edges[0].kind,
            FlowKind::Condition(_)
        ));
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].kind, DiagnosticKind::ConditionFromNonGateway);
    }

    #[test]
    fn nested_parentheses_in_condition_label() {
        let (g, diags) = parse("XOR1 -> (stock is sufficient (per table)) ship the goods");
        assert!(diags.is_empty());
        assert_eq!(
            g.lanes()[0].edges[0].kind,
            FlowKind::Condition("stock is sufficient (per table)".into())
        );
    }

    #[test]
    fn markdown_fences_are_stripped() {
        let text = "```\nStart -> a\na -> End\n```";
        let (g, diags) = parse(text);
        assert!(diags.is_empty());
        assert_eq!(g.edge_count(), 2);
    }

    #[test]
    fn trailing_parenthesized_group_is_action_text_with_diagnostic() {
        let (g, diags) = parse("XOR1 -> pay the fee (in cash)");
        assert_eq!(g.edge_count(), 1);
        assert_eq!(
            g.node(g.lanes()[0].edges[0].target),
            Some(&NodeKind::Action("pay the fee (in cash)".into()))
        );
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].kind, DiagnosticKind::MisplacedCondition);
    }

    #[test]
    fn gateway_token_requires_positive_index() {
        assert_eq!(classify_token("XOR2"), NodeKind::Xor(2));
        assert_eq!(classify_token("AND10"), NodeKind::And(10));
        assert_eq!(classify_token("OR1"), NodeKind::Or(1));
        assert_eq!(classify_token("XOR0"), NodeKind::Action("XOR0".into()));
        assert_eq!(classify_token("XOR"), NodeKind::Action("XOR".into()));
        assert_eq!(classify_token("ORDER1"), NodeKind::Action("ORDER1".into()));
    }

    #[test]
    fn serialize_single_edge() {
        let (g, _) = parse("For the clerk:\nStart -> file the form\n");
        let out = serialize(&g);
        assert_eq!(out, "For the clerk:\nStart -> file the form\n");
    }

    #[test]
    fn round_trip_preserves_structure() {
        let text = "For the customer:\nStart -> find an empty seat\nfind an empty seat -> XOR1\nXOR1 -> (hungry) order food\nXOR1 -> (thirsty) order drinks\norder food -> End\norder drinks -> End\norder food -> DataObject(menu)\n";
        let (g, diags) = parse(text);
        assert!(diags.is_empty());
        let (g2, diags2) = parse(&serialize(&g));
        assert!(diags2.is_empty());
        assert_eq!(canonical_edges(&g), canonical_edges(&g2));
    }

    #[test]
    fn successors_ordering_survives_round_trip() {
        let text = "XOR1 -> (a) first\nXOR1 -> (b) second\nXOR1 -> (c) third\n";
        let (g, _) = parse(text);
        let (g2, _) = parse(&serialize(&g));
        let x = g2
            .nodes()
            .find(|(_, k)| k.is_gateway())
            .map(|(id, _)| id)
            .unwrap();
        let succ = g2.successors(x, Some(FlowClass::Executable)).unwrap();
        let labels: Vec<_> = succ.iter().map(|(_, t)| g2.node_label(*t)).collect();
        assert_eq!(labels, vec!["first", "second", "third"]);
    }
}
