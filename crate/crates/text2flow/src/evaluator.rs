//! Scoring predicted graphs against gold graphs.
//!
//! Both graphs are flattened into edge tuples (`element -> element`, with
//! the condition text kept aside). Tuples of the same flow kind are matched
//! greedily by descending BLEU with 1:1 assignment; endpoints then gate the
//! match (`Start`/`End` need BLEU > 0.75, everything else > 0.5, condition
//! text > 0.5). Element categories use soft F1 (BLEU-matched above the
//! threshold); gateways use hard F1 (same kind and at least one correctly
//! matched neighbor). Per-category precision/recall/F1 come out in a
//! [`EvalReport`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::bleu::bleu;
use crate::dsl::{self, ParseDiagnostic};
use crate::graph::{FlowKind, GatewayKind, NodeId, NodeKind, ProceduralGraph};

/// Score above which two tuples (or two non-terminal elements) count as
/// matched.
pub const MATCH_THRESHOLD: f64 = 0.5;
/// Stricter bar for Start/End endpoints.
pub const TERMINAL_THRESHOLD: f64 = 0.75;
/// Condition text alignment reuses the tuple threshold.
pub const CONDITION_THRESHOLD: f64 = 0.5;

/// Report categories, one per scored column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Category {
    Actor,
    Action,
    ConstraintData,
    ConstraintAction,
    GatewayXor,
    GatewayOr,
    GatewayAnd,
    FlowSequence,
    FlowCondition,
    FlowConstraint,
}

impl Category {
    pub const ALL: [Category; 10] = [
        Category::Actor,
        Category::Action,
        Category::ConstraintData,
        Category::ConstraintAction,
        Category::GatewayXor,
        Category::GatewayOr,
        Category::GatewayAnd,
        Category::FlowSequence,
        Category::FlowCondition,
        Category::FlowConstraint,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Category::Actor => "Actor",
            Category::Action => "Action",
            Category::ConstraintData => "Constraint-Data",
            Category::ConstraintAction => "Constraint-Action",
            Category::GatewayXor => "XOR",
            Category::GatewayOr => "OR",
            Category::GatewayAnd => "AND",
            Category::FlowSequence => "Flow-Sequence",
            Category::FlowCondition => "Flow-Condition",
            Category::FlowConstraint => "Flow-Constraint",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One edge flattened to text: what the matcher actually compares.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalTuple {
    pub source: String,
    pub target: String,
    pub kind: TupleKind,
    pub condition: Option<String>,
    pub actor: String,
    pub source_terminal: bool,
    pub target_terminal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TupleKind {
    Sequence,
    Condition,
    Constraint,
}

impl EvalTuple {
    pub fn text(&self) -> String {
        format!("{} -> {}", self.source, self.target)
    }
}

/// Flattens every edge of a graph into a tuple.
pub fn tuples_of(graph: &ProceduralGraph) -> Vec<EvalTuple> {
    let mut tuples = Vec::new();
    for lane in graph.lanes() {
        for edge in &lane.edges {
            let terminal = |id: NodeId| {
                matches!(
                    graph.node(id),
                    Some(NodeKind::Start) | Some(NodeKind::End)
                )
            };
            tuples.push(EvalTuple {
                source: graph.node_label(edge.source),
                target: graph.node_label(edge.target),
                kind: match edge.kind {
                    FlowKind::Sequence => TupleKind::Sequence,
                    FlowKind::Condition(_) => TupleKind::Condition,
                    FlowKind::Constraint => TupleKind::Constraint,
                },
                condition: edge.kind.condition_label().map(str::to_string),
                actor: lane.actor.clone(),
                source_terminal: terminal(edge.source),
                target_terminal: terminal(edge.target),
            });
        }
    }
    tuples
}

/// One predicted-to-gold pairing with its similarity breakdown.
#[derive(Debug, Clone, Serialize)]
pub struct TupleMatch {
    pub predicted: usize,
    pub gold: usize,
    pub kind: String,
    pub score: f64,
    pub source_bleu: f64,
    pub target_bleu: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub condition_bleu: Option<f64>,
}

impl TupleMatch {
    /// Endpoint gates for flow-level correctness.
    pub fn endpoints_pass(&self, predicted: &EvalTuple, gold: &EvalTuple) -> bool {
        let src_bar = if predicted.source_terminal || gold.source_terminal {
            TERMINAL_THRESHOLD
        } else {
            MATCH_THRESHOLD
        };
        let dst_bar = if predicted.target_terminal || gold.target_terminal {
            TERMINAL_THRESHOLD
        } else {
            MATCH_THRESHOLD
        };
        self.source_bleu > src_bar && self.target_bleu > dst_bar
    }

    pub fn condition_passes(&self) -> bool {
        match self.condition_bleu {
            Some(score) => score > CONDITION_THRESHOLD,
            None => true,
        }
    }
}

/// Greedy 1:1 tuple assignment per flow kind, iterating candidate pairs in
/// descending BLEU order so input order cannot change the outcome.
pub fn match_tuples(predicted: &[EvalTuple], gold: &[EvalTuple]) -> Vec<TupleMatch> {
    let mut matches = Vec::new();
    for kind in [TupleKind::Sequence, TupleKind::Condition, TupleKind::Constraint] {
        let pred_idx: Vec<usize> = (0..predicted.len())
            .filter(|&i| predicted[i].kind == kind)
            .collect();
        let gold_idx: Vec<usize> = (0..gold.len()).filter(|&i| gold[i].kind == kind).collect();
        let mut candidates = Vec::new();
        for &p in &pred_idx {
            for &g in &gold_idx {
                let score = bleu(&predicted[p].text(), &gold[g].text());
                if score > MATCH_THRESHOLD {
                    candidates.push((p, g, score));
                }
            }
        }
        candidates.sort_by(|a, b| {
            b.2.total_cmp(&a.2)
                .then_with(|| predicted[a.0].text().cmp(&predicted[b.0].text()))
                .then_with(|| gold[a.1].text().cmp(&gold[b.1].text()))
                .then_with(|| (a.0, a.1).cmp(&(b.0, b.1)))
        });
        let mut pred_taken = BTreeSet::new();
        let mut gold_taken = BTreeSet::new();
        for (p, g, score) in candidates {
            if pred_taken.contains(&p) || gold_taken.contains(&g) {
                continue;
            }
            pred_taken.insert(p);
            gold_taken.insert(g);
            let condition_bleu = match (&predicted[p].condition, &gold[g].condition) {
                (Some(pc), Some(gc)) => Some(bleu(pc, gc)),
                (None, None) => None,
                // one side lacks a condition: score the disagreement as 0
                _ => Some(0.0),
            };
            matches.push(TupleMatch {
                predicted: p,
                gold: g,
                kind: format!("{kind:?}"),
                score,
                source_bleu: bleu(&predicted[p].source, &gold[g].source),
                target_bleu: bleu(&predicted[p].target, &gold[g].target),
                condition_bleu,
            });
        }
    }
    matches
}

/// Precision/recall/F1 for one category.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CategoryScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub matched: usize,
    pub predicted: usize,
    pub gold: usize,
    /// True when neither side has any instance of the category.
    pub no_instances: bool,
}

impl CategoryScore {
    pub fn from_counts(matched: usize, predicted: usize, gold: usize) -> Self {
        let precision = if predicted == 0 {
            0.0
        } else {
            matched as f64 / predicted as f64
        };
        let recall = if gold == 0 {
            0.0
        } else {
            matched as f64 / gold as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        CategoryScore {
            precision,
            recall,
            f1,
            matched,
            predicted,
            gold,
            no_instances: predicted == 0 && gold == 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub scores: BTreeMap<Category, CategoryScore>,
    pub ledger: Vec<TupleMatch>,
}

impl EvalReport {
    pub fn score(&self, category: Category) -> &CategoryScore {
        &self.scores[&category]
    }
}

/// An element instance extracted from a graph for soft matching.
#[derive(Debug, Clone)]
struct Element {
    node: Option<NodeId>,
    text: String,
}

fn elements_of(graph: &ProceduralGraph, category: Category) -> Vec<Element> {
    match category {
        Category::Actor => {
            let mut seen = BTreeSet::new();
            graph
                .lanes()
                .iter()
                .filter(|l| seen.insert(crate::graph::normalize_text(&l.actor)))
                .map(|l| Element {
                    node: None,
                    text: l.actor.clone(),
                })
                .collect()
        }
        _ => graph
            .nodes()
            .filter_map(|(id, kind)| {
                let text = match (category, kind) {
                    (Category::Action, NodeKind::Action(t)) => t.clone(),
                    (Category::ConstraintData, NodeKind::DataObject(t)) => t.clone(),
                    (Category::ConstraintAction, NodeKind::TextAnnotation(t)) => t.clone(),
                    _ => return None,
                };
                Some(Element {
                    node: Some(id),
                    text,
                })
            })
            .collect(),
    }
}

/// Greedy 1:1 soft matching of elements by BLEU above the threshold.
/// Returns matched (pred, gold) index pairs.
fn match_elements(pred: &[Element], gold: &[Element]) -> Vec<(usize, usize)> {
    let mut candidates = Vec::new();
    for (p, pe) in pred.iter().enumerate() {
        for (g, ge) in gold.iter().enumerate() {
            let score = bleu(&pe.text, &ge.text);
            if score > MATCH_THRESHOLD {
                candidates.push((p, g, score));
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.2.total_cmp(&a.2)
            .then_with(|| pred[a.0].text.cmp(&pred[b.0].text))
            .then_with(|| gold[a.1].text.cmp(&gold[b.1].text))
            .then_with(|| (a.0, a.1).cmp(&(b.0, b.1)))
    });
    let mut pred_taken = BTreeSet::new();
    let mut gold_taken = BTreeSet::new();
    let mut matched = Vec::new();
    for (p, g, _) in candidates {
        if pred_taken.contains(&p) || gold_taken.contains(&g) {
            continue;
        }
        pred_taken.insert(p);
        gold_taken.insert(g);
        matched.push((p, g));
    }
    matched
}

/// Non-gateway neighbors of a node via any edge.
fn neighbors(graph: &ProceduralGraph, id: NodeId) -> BTreeSet<NodeId> {
    let mut out = BTreeSet::new();
    for lane in graph.lanes() {
        for edge in &lane.edges {
            if edge.source == id {
                out.insert(edge.target);
            }
            if edge.target == id {
                out.insert(edge.source);
            }
        }
    }
    out.retain(|n| !graph.node(*n).is_some_and(NodeKind::is_gateway));
    out
}

/// Full evaluation of a predicted graph against a gold graph.
pub fn evaluate(predicted: &ProceduralGraph, gold: &ProceduralGraph) -> EvalReport {
    let pred_tuples = tuples_of(predicted);
    let gold_tuples = tuples_of(gold);
    let ledger = match_tuples(&pred_tuples, &gold_tuples);

    let mut scores = BTreeMap::new();

    // soft element categories, remembering the node-level match map for the
    // gateway neighbor rule
    let mut node_map: BTreeMap<NodeId, NodeId> = BTreeMap::new();
    for category in [
        Category::Actor,
        Category::Action,
        Category::ConstraintData,
        Category::ConstraintAction,
    ] {
        let pred = elements_of(predicted, category);
        let gold_elems = elements_of(gold, category);
        let matched = match_elements(&pred, &gold_elems);
        for (p, g) in &matched {
            if let (Some(pn), Some(gn)) = (pred[*p].node, gold_elems[*g].node) {
                node_map.insert(pn, gn);
            }
        }
        scores.insert(
            category,
            CategoryScore::from_counts(matched.len(), pred.len(), gold_elems.len()),
        );
    }

    // Start/End are not scored elements, but they do anchor gateway
    // neighbors: a terminal neighbor counts as matched when the gold
    // gateway has a terminal of the same kind next to it.
    let terminal_kind = |graph: &ProceduralGraph, id: NodeId| match graph.node(id) {
        Some(NodeKind::Start) => Some(NodeKind::Start),
        Some(NodeKind::End) => Some(NodeKind::End),
        _ => None,
    };

    for (category, gateway_kind) in [
        (Category::GatewayXor, GatewayKind::Xor),
        (Category::GatewayOr, GatewayKind::Or),
        (Category::GatewayAnd, GatewayKind::And),
    ] {
        let pred_gw: Vec<NodeId> = predicted
            .gateways()
            .filter(|(_, k)| *k == gateway_kind)
            .map(|(id, _)| id)
            .collect();
        let gold_gw: Vec<NodeId> = gold
            .gateways()
            .filter(|(_, k)| *k == gateway_kind)
            .map(|(id, _)| id)
            .collect();

        // hard rule: same kind (by construction here) plus at least one
        // correctly matched neighbor shared with the gold gateway; greedy
        // 1:1 by shared-neighbor count
        let mut candidates = Vec::new();
        for (pi, &pg) in pred_gw.iter().enumerate() {
            let pred_neighbors = neighbors(predicted, pg);
            for (gi, &gg) in gold_gw.iter().enumerate() {
                let gold_neighbors = neighbors(gold, gg);
                let mut shared = 0usize;
                for &pn in &pred_neighbors {
                    let hit = match node_map.get(&pn) {
                        Some(mapped) => gold_neighbors.contains(mapped),
                        None => match terminal_kind(predicted, pn) {
                            Some(kind) => gold_neighbors
                                .iter()
                                .any(|&gn| gold.node(gn) == Some(&kind)),
                            None => false,
                        },
                    };
                    if hit {
                        shared += 1;
                    }
                }
                if shared > 0 {
                    candidates.push((pi, gi, shared));
                }
            }
        }
        candidates.sort_by(|a, b| b.2.cmp(&a.2).then_with(|| (a.0, a.1).cmp(&(b.0, b.1))));
        let mut pred_taken = BTreeSet::new();
        let mut gold_taken = BTreeSet::new();
        let mut matched = 0usize;
        for (p, g, _) in candidates {
            if pred_taken.contains(&p) || gold_taken.contains(&g) {
                continue;
            }
            pred_taken.insert(p);
            gold_taken.insert(g);
            matched += 1;
        }
        scores.insert(
            category,
            CategoryScore::from_counts(matched, pred_gw.len(), gold_gw.len()),
        );
    }

    // flow categories from the tuple ledger
    for (category, kind) in [
        (Category::FlowSequence, TupleKind::Sequence),
        (Category::FlowCondition, TupleKind::Condition),
        (Category::FlowConstraint, TupleKind::Constraint),
    ] {
        let predicted_count = pred_tuples.iter().filter(|t| t.kind == kind).count();
        let gold_count = gold_tuples.iter().filter(|t| t.kind == kind).count();
        let correct = ledger
            .iter()
            .filter(|m| {
                pred_tuples[m.predicted].kind == kind
                    && m.endpoints_pass(&pred_tuples[m.predicted], &gold_tuples[m.gold])
                    && m.condition_passes()
            })
            .count();
        scores.insert(
            category,
            CategoryScore::from_counts(correct, predicted_count, gold_count),
        );
    }

    EvalReport { scores, ledger }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: String,
        source: std::io::Error,
    },
}

/// Loads one benchmark pair: the document text and its gold graph (parsed
/// from flow text; diagnostics are returned, not fatal).
pub fn load_paged_pair(
    document_path: &Path,
    gold_path: &Path,
) -> Result<(String, ProceduralGraph, Vec<ParseDiagnostic>), EvalError> {
    let read = |path: &Path| {
        std::fs::read_to_string(path).map_err(|source| EvalError::Unreadable {
            path: path.display().to_string(),
            source,
        })
    };
    let document = read(document_path)?;
    let gold_text = read(gold_path)?;
    let (graph, diagnostics) = dsl::parse(&gold_text);
    Ok((document, graph, diagnostics))
}
