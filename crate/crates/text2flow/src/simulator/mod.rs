//! Token-flow execution of procedural graphs.
//!
//! [`simulate`] runs the executable subgraph as a token game, one trial at a
//! time: sequence and condition flows advance a token, XOR picks one branch
//! uniformly, OR picks a uniformly random non-empty branch subset, AND forks
//! a token down every branch, and tokens synchronize at gateway nodes. Each
//! trial yields a [`SimulationTrace`] — the visited path, the gateway
//! choices taken, and the first structural failure hit, if any.
//!
//! [`enumerate_paths`] walks the same engine through every reachable
//! decision outcome of an acyclic graph, attaching exact probabilities; it
//! is the oracle the sampled frequencies are checked against.
//!
//! [`detect_static_issues`] finds defects that need no sampling
//! (unreachable nodes, missing Start/End, degenerate gateways, misused
//! auxiliary nodes), and [`extract_gateway_segments`] cuts the graph into
//! gateway-to-gateway fragments for the semantic checks.

mod analysis;
mod engine;
mod enumerate;

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::graph::{NodeId, ProceduralGraph};

pub use analysis::{detect_static_issues, extract_gateway_segments, GatewaySegment};
pub use enumerate::EnumeratedPath;

/// Knobs for [`simulate`]. Trials share one master seed; each trial derives
/// its own stream, so a run can be split across workers without changing
/// the produced trace multiset.
#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub trials: u64,
    pub max_steps: u32,
    pub seed: u64,
    pub policy: GatewayPolicy,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            trials: 10_000,
            max_steps: 512,
            seed: 0,
            policy: GatewayPolicy::Uniform,
        }
    }
}

/// Branch sampling policy at gateways.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GatewayPolicy {
    /// Equal probability over branches (XOR) or non-empty branch subsets (OR).
    #[default]
    Uniform,
}

/// One gateway decision taken during a trial: the gateway and the targets
/// its firing activated. Recorded for XOR and OR gateways (the kinds that
/// choose); AND activates everything and records nothing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GatewayChoice {
    pub gateway: NodeId,
    pub chosen: Vec<NodeId>,
}

/// Record of one execution trial.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimulationTrace {
    /// Nodes in visit order, starting at a Start node. Ends at an End node
    /// whenever `issue` is absent.
    pub path: Vec<NodeId>,
    /// Gateway selections in encounter order.
    pub choices: Vec<GatewayChoice>,
    /// First structural failure encountered, if the trial failed.
    pub issue: Option<StructuralIssue>,
}

impl SimulationTrace {
    /// JSON-lines form: `{path:[ids], choices:[...], issue:{kind,detail}|null}`.
    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::json!({
            "path": self.path.iter().map(|n| n.0).collect::<Vec<_>>(),
            "choices": self.choices.iter().map(|c| serde_json::json!({
                "gateway": c.gateway.0,
                "chosen": c.chosen.iter().map(|n| n.0).collect::<Vec<_>>(),
            })).collect::<Vec<_>>(),
            "issue": self.issue.as_ref().map(|i| serde_json::json!({
                "kind": i.kind.to_string(),
                "detail": i.detail,
            })),
        })
    }
}

/// A structural defect, localized to the graph elements involved.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StructuralIssue {
    pub kind: IssueKind,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum IssueKind {
    /// Node with no outgoing executable flow that is not an End node.
    DeadEnd(NodeId),
    /// Executable nodes a lane's Start can never reach.
    Unreachable(std::collections::BTreeSet<NodeId>),
    /// The trial ran out of steps; the graph probably loops forever.
    StepLimitExceeded,
    /// Tokens forked at this gateway were still waiting when no further
    /// progress was possible.
    UnjoinedParallelBranch(NodeId),
    /// Condition flow whose source is not a gateway.
    ConditionFromNonGateway { source: NodeId, target: NodeId },
    /// Lane (by actor) with executable nodes but no Start.
    MissingStart(String),
    /// Lane (by actor) with executable nodes but no End.
    MissingEnd(String),
    /// Gateway with one incoming and one outgoing flow: it gates nothing.
    SingleBranchGateway(NodeId),
    /// Auxiliary (DataObject/TextAnnotation) node used as a flow source.
    AuxiliaryInFlow(NodeId),
}

impl fmt::Display for IssueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IssueKind::DeadEnd(n) => write!(f, "dead_end({n})"),
            IssueKind::Unreachable(set) => {
                let ids: Vec<String> = set.iter().map(|n| n.to_string()).collect();
                write!(f, "unreachable({})", ids.join(","))
            }
            IssueKind::StepLimitExceeded => write!(f, "step_limit_exceeded"),
            IssueKind::UnjoinedParallelBranch(n) => write!(f, "unjoined_parallel_branch({n})"),
            IssueKind::ConditionFromNonGateway { source, target } => {
                write!(f, "condition_from_non_gateway({source}->{target})")
            }
            IssueKind::MissingStart(actor) => write!(f, "missing_start({actor})"),
            IssueKind::MissingEnd(actor) => write!(f, "missing_end({actor})"),
            IssueKind::SingleBranchGateway(n) => write!(f, "single_branch_gateway({n})"),
            IssueKind::AuxiliaryInFlow(n) => write!(f, "auxiliary_in_flow({n})"),
        }
    }
}

/// Human-readable description of an issue kind, with node labels resolved
/// against `graph`.
pub fn describe_issue(graph: &ProceduralGraph, kind: &IssueKind) -> String {
    let label = |n: &NodeId| graph.node_label(*n);
    match kind {
        IssueKind::DeadEnd(n) => format!(
            "dead end: node '{}' has no outgoing executable flow",
            label(n)
        ),
        IssueKind::Unreachable(set) => {
            let names: Vec<String> = set.iter().map(|n| format!("'{}'", label(n))).collect();
            format!("nodes unreachable from Start: {}", names.join(", "))
        }
        IssueKind::StepLimitExceeded => {
            "execution exceeded the step limit without reaching End (possible endless loop)"
                .to_string()
        }
        IssueKind::UnjoinedParallelBranch(n) => format!(
            "parallel branch never joined: tokens forked at '{}' were still waiting when the \
             trial ended",
            label(n)
        ),
        IssueKind::ConditionFromNonGateway { source, target } => format!(
            "condition flow from non-gateway node '{}' to '{}'",
            label(source),
            label(target)
        ),
        IssueKind::MissingStart(actor) => format!("lane 'For {actor}:' has no Start node"),
        IssueKind::MissingEnd(actor) => format!("lane 'For {actor}:' has no End node"),
        IssueKind::SingleBranchGateway(n) => format!(
            "gateway '{}' has a single incoming and a single outgoing flow; it does not branch \
             or merge anything",
            label(n)
        ),
        IssueKind::AuxiliaryInFlow(n) => format!(
            "auxiliary node '{}' is used as a flow source; DataObject/TextAnnotation nodes may \
             only be annotation targets",
            label(n)
        ),
    }
}

/// Identity of a failure for counting purposes: the issue (with its
/// localized ids) plus the canonicalized gateway choices of the trace that
/// produced it. The same defect reached through different choices counts
/// separately.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct IssueSignature {
    pub kind: IssueKind,
    pub choices: Vec<(NodeId, Vec<NodeId>)>,
}

impl IssueSignature {
    pub fn of_trace(trace: &SimulationTrace) -> Option<IssueSignature> {
        trace.issue.as_ref().map(|issue| {
            let mut choices: Vec<(NodeId, Vec<NodeId>)> = trace
                .choices
                .iter()
                .map(|c| {
                    let mut targets = c.chosen.clone();
                    targets.sort();
                    (c.gateway, targets)
                })
                .collect();
            choices.sort();
            IssueSignature {
                kind: issue.kind.clone(),
                choices,
            }
        })
    }

    /// Static issues carry no choice context.
    pub fn of_static(kind: IssueKind) -> IssueSignature {
        IssueSignature {
            kind,
            choices: Vec::new(),
        }
    }
}

impl fmt::Display for IssueSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kind)?;
        if !self.choices.is_empty() {
            let parts: Vec<String> = self
                .choices
                .iter()
                .map(|(g, ts)| {
                    let targets: Vec<String> = ts.iter().map(|t| t.to_string()).collect();
                    format!("{g}->{{{}}}", targets.join(","))
                })
                .collect();
            write!(f, " | c: {}", parts.join(" "))?;
        }
        Ok(())
    }
}

/// Prompt-facing rendering of a failure signature.
pub fn describe_signature(graph: &ProceduralGraph, sig: &IssueSignature) -> String {
    let mut text = describe_issue(graph, &sig.kind);
    if !sig.choices.is_empty() {
        let parts: Vec<String> = sig
            .choices
            .iter()
            .map(|(g, ts)| {
                let targets: Vec<String> = ts
                    .iter()
                    .map(|t| format!("'{}'", graph.node_label(*t)))
                    .collect();
                format!("{} chose {}", graph.node_label(*g), targets.join(" and "))
            })
            .collect();
        text.push_str(&format!(" [observed when {}]", parts.join("; ")));
    }
    text
}

/// Counts failing traces by signature. Successful traces are ignored; the
/// values sum to the number of failing traces.
pub fn aggregate_issue_counts(traces: &[SimulationTrace]) -> BTreeMap<IssueSignature, u64> {
    let mut counts = BTreeMap::new();
    for trace in traces {
        if let Some(sig) = IssueSignature::of_trace(trace) {
            *counts.entry(sig).or_insert(0) += 1;
        }
    }
    counts
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimulatorError {
    #[error("the executable subgraph contains a cycle; exhaustive enumeration needs an acyclic graph")]
    CycleDetected,
    #[error("path enumeration exceeded the limit of {limit} paths")]
    TooManyPaths { limit: usize },
}

/// Runs `config.trials` randomized trials. Identical `(graph, config)` pairs
/// produce identical trace lists. A graph with no executable nodes yields a
/// single trace flagged `MissingStart`.
pub fn simulate(graph: &ProceduralGraph, config: &SimulationConfig) -> Vec<SimulationTrace> {
    engine::simulate(graph, config)
}

/// Enumerates every distinct (path, choice-set) outcome of the executable
/// subgraph with its exact probability under uniform branch sampling.
/// Errors on cyclic graphs and when more than `max_paths` outcomes exist.
pub fn enumerate_paths(
    graph: &ProceduralGraph,
    max_paths: usize,
) -> Result<Vec<EnumeratedPath>, SimulatorError> {
    enumerate::enumerate_paths(graph, max_paths)
}
