//! Sampling-free structure diagnostics and gateway segment extraction.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::graph::{Edge, FlowClass, FlowKind, NodeId, NodeKind, ProceduralGraph};

use super::{describe_issue, IssueKind, StructuralIssue};

/// Finds the defects visible from the graph's shape alone: unreachable
/// nodes, missing Start/End per lane, dead ends, degenerate single-branch
/// gateways, condition flows from non-gateways, and auxiliary nodes used as
/// flow sources. Deterministic and complete.
pub fn detect_static_issues(graph: &ProceduralGraph) -> Vec<StructuralIssue> {
    let mut kinds: BTreeSet<IssueKind> = BTreeSet::new();
    let exec = graph.executable_subgraph();

    for lane in exec.lanes() {
        if lane.nodes.is_empty() {
            continue;
        }
        let mut adjacency: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        let mut in_degree: BTreeMap<NodeId, usize> = BTreeMap::new();
        for id in &lane.nodes {
            adjacency.insert(*id, Vec::new());
            in_degree.insert(*id, 0);
        }
        for edge in &lane.edges {
            adjacency.entry(edge.source).or_default().push(edge.target);
            *in_degree.entry(edge.target).or_default() += 1;
        }

        let start = lane
            .nodes
            .iter()
            .copied()
            .find(|id| exec.node(*id) == Some(&NodeKind::Start));
        let has_end = lane
            .nodes
            .iter()
            .any(|id| exec.node(*id) == Some(&NodeKind::End));
        if start.is_none() {
            kinds.insert(IssueKind::MissingStart(lane.actor.clone()));
        }
        if !has_end {
            kinds.insert(IssueKind::MissingEnd(lane.actor.clone()));
        }

        for id in &lane.nodes {
            let kind = exec.node(*id).expect("lane member in node table");
            let out = adjacency.get(id).map(Vec::len).unwrap_or(0);
            let inc = in_degree.get(id).copied().unwrap_or(0);
            if !matches!(kind, NodeKind::End) && out == 0 {
                kinds.insert(IssueKind::DeadEnd(*id));
            }
            if kind.is_gateway() && out == 1 && inc <= 1 {
                kinds.insert(IssueKind::SingleBranchGateway(*id));
            }
        }

        if let Some(start) = start {
            let mut seen = BTreeSet::new();
            seen.insert(start);
            let mut queue = VecDeque::from([start]);
            while let Some(node) = queue.pop_front() {
                for next in adjacency.get(&node).into_iter().flatten() {
                    if seen.insert(*next) {
                        queue.push_back(*next);
                    }
                }
            }
            let unreachable: BTreeSet<NodeId> = lane
                .nodes
                .iter()
                .copied()
                .filter(|id| !seen.contains(id))
                .collect();
            if !unreachable.is_empty() {
                kinds.insert(IssueKind::Unreachable(unreachable));
            }
        }
    }

    // checks that involve auxiliary nodes and edge kinds run on the full graph
    for lane in graph.lanes() {
        for edge in &lane.edges {
            if matches!(edge.kind, FlowKind::Condition(_))
                && !graph.node(edge.source).is_some_and(NodeKind::is_gateway)
            {
                kinds.insert(IssueKind::ConditionFromNonGateway {
                    source: edge.source,
                    target: edge.target,
                });
            }
            if graph.node(edge.source).is_some_and(NodeKind::is_auxiliary) {
                kinds.insert(IssueKind::AuxiliaryInFlow(edge.source));
            }
        }
    }

    kinds
        .into_iter()
        .map(|kind| StructuralIssue {
            detail: describe_issue(graph, &kind),
            kind,
        })
        .collect()
}

/// The gateway-to-gateway fragment rooted at one gateway: the flows from it
/// up to (and including the edges into) the nearest downstream gateways,
/// plus the constraint edges attached to actions inside the fragment.
#[derive(Debug, Clone)]
pub struct GatewaySegment {
    pub gateway: NodeId,
    /// Non-gateway nodes inside the fragment, in discovery order.
    pub interior: Vec<NodeId>,
    pub sequence_edges: Vec<Edge>,
    pub condition_edges: Vec<Edge>,
    pub constraint_edges: Vec<Edge>,
    /// The downstream gateways where traversal stopped.
    pub boundary: BTreeSet<NodeId>,
}

impl GatewaySegment {
    pub fn is_empty(&self) -> bool {
        self.sequence_edges.is_empty()
            && self.condition_edges.is_empty()
            && self.constraint_edges.is_empty()
    }
}

/// One segment per gateway, breadth-first from the gateway and stopping at
/// the first gateway reached on each branch.
pub fn extract_gateway_segments(graph: &ProceduralGraph) -> Vec<GatewaySegment> {
    let gateways: Vec<NodeId> = graph.gateways().map(|(id, _)| id).collect();
    let mut segments = Vec::with_capacity(gateways.len());
    for gateway in gateways {
        let mut interior = Vec::new();
        let mut boundary = BTreeSet::new();
        let mut sequence_edges = Vec::new();
        let mut condition_edges = Vec::new();
        let mut visited = BTreeSet::from([gateway]);
        let mut queue = VecDeque::from([gateway]);
        while let Some(node) = queue.pop_front() {
            for (edge, target) in graph
                .successors(node, Some(FlowClass::Executable))
                .unwrap_or_default()
            {
                match edge.kind {
                    FlowKind::Condition(_) => condition_edges.push(edge.clone()),
                    _ => sequence_edges.push(edge.clone()),
                }
                if graph.node(target).is_some_and(NodeKind::is_gateway) {
                    boundary.insert(target);
                } else if visited.insert(target) {
                    interior.push(target);
                    queue.push_back(target);
                }
            }
        }
        let mut constraint_edges = Vec::new();
        for lane in graph.lanes() {
            for edge in &lane.edges {
                if !matches!(edge.kind, FlowKind::Constraint) {
                    continue;
                }
                let anchored = [edge.source, edge.target].into_iter().any(|endpoint| {
                    !graph.node(endpoint).is_some_and(NodeKind::is_auxiliary)
                        && interior.contains(&endpoint)
                });
                if anchored {
                    constraint_edges.push(edge.clone());
                }
            }
        }
        segments.push(GatewaySegment {
            gateway,
            interior,
            sequence_edges,
            condition_edges,
            constraint_edges,
            boundary,
        });
    }
    segments
}
