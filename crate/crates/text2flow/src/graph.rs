//! Typed in-memory representation of a procedural graph.
//!
//! A graph is a list of actor [`Lane`]s over a shared node table. Node
//! identity is structural: an action (or auxiliary node) is keyed by its
//! lane plus case-folded, whitespace-collapsed text, so repeating the same
//! action text in flow lines resolves to the same node. Gateways (`XOR1`,
//! `OR2`, ...) are graph-global: the same kind + index names one node no
//! matter which lane mentions it, and each lane records membership.
//!
//! Graphs are immutable once built; construction is single-writer.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Stable handle into a graph's node table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Index of a lane within a graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LaneId(pub usize);

/// Control-logic family of a gateway node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GatewayKind {
    /// Exactly one outgoing branch is taken.
    Xor,
    /// One or more outgoing branches are taken.
    Or,
    /// All outgoing branches are taken in parallel.
    And,
}

impl fmt::Display for GatewayKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GatewayKind::Xor => write!(f, "XOR"),
            GatewayKind::Or => write!(f, "OR"),
            GatewayKind::And => write!(f, "AND"),
        }
    }
}

/// What a node is: process markers, concrete steps, control gateways, or
/// auxiliary annotation nodes that sit outside the executable flow.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeKind {
    Start,
    End,
    Action(String),
    Xor(u32),
    Or(u32),
    And(u32),
    DataObject(String),
    TextAnnotation(String),
}

impl NodeKind {
    pub fn is_gateway(&self) -> bool {
        matches!(self, NodeKind::Xor(_) | NodeKind::Or(_) | NodeKind::And(_))
    }

    pub fn gateway_kind(&self) -> Option<GatewayKind> {
        match self {
            NodeKind::Xor(_) => Some(GatewayKind::Xor),
            NodeKind::Or(_) => Some(GatewayKind::Or),
            NodeKind::And(_) => Some(GatewayKind::And),
            _ => None,
        }
    }

    /// DataObject and TextAnnotation nodes document the flow but are never
    /// part of it.
    pub fn is_auxiliary(&self) -> bool {
        matches!(self, NodeKind::DataObject(_) | NodeKind::TextAnnotation(_))
    }

    /// Token form used by the flow DSL and in diagnostics.
    pub fn label(&self) -> String {
        match self {
            NodeKind::Start => "Start".to_string(),
            NodeKind::End => "End".to_string(),
            NodeKind::Action(t) => t.clone(),
            NodeKind::Xor(i) => format!("XOR{i}"),
            NodeKind::Or(i) => format!("OR{i}"),
            NodeKind::And(i) => format!("AND{i}"),
            NodeKind::DataObject(t) => format!("DataObject({t})"),
            NodeKind::TextAnnotation(t) => format!("TextAnnotation({t})"),
        }
    }
}

/// Edge kind: plain sequencing, a labeled gateway branch, or a link to an
/// auxiliary constraint node.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FlowKind {
    Sequence,
    Condition(String),
    Constraint,
}

impl FlowKind {
    /// Sequence and condition flows move tokens; constraint flows do not.
    pub fn is_executable(&self) -> bool {
        !matches!(self, FlowKind::Constraint)
    }

    pub fn condition_label(&self) -> Option<&str> {
        match self {
            FlowKind::Condition(l) => Some(l),
            _ => None,
        }
    }
}

/// Filter classes accepted by [`ProceduralGraph::successors`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowClass {
    Sequence,
    Condition,
    Constraint,
    /// Sequence or condition flows (everything tokens can traverse).
    Executable,
}

impl FlowClass {
    fn matches(self, kind: &FlowKind) -> bool {
        match self {
            FlowClass::Sequence => matches!(kind, FlowKind::Sequence),
            FlowClass::Condition => matches!(kind, FlowKind::Condition(_)),
            FlowClass::Constraint => matches!(kind, FlowKind::Constraint),
            FlowClass::Executable => kind.is_executable(),
        }
    }
}

/// A directed flow between two nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    pub source: NodeId,
    pub target: NodeId,
    pub kind: FlowKind,
}

/// Per-actor subgraph: the nodes mentioned under one `For <actor>:` header
/// and the edges declared there, in insertion order.
#[derive(Debug, Clone)]
pub struct Lane {
    pub actor: String,
    pub nodes: Vec<NodeId>,
    pub edges: Vec<Edge>,
}

impl Lane {
    fn new(actor: &str) -> Self {
        Lane {
            actor: actor.trim().to_string(),
            nodes: Vec::new(),
            edges: Vec::new(),
        }
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.nodes.contains(&id)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("unknown lane {0:?}")]
    UnknownLane(LaneId),
}

/// Case-folds and collapses runs of whitespace; the identity key for
/// text-carrying nodes.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum IdentityKey {
    Start(LaneId),
    End(LaneId),
    Action(LaneId, String),
    DataObject(LaneId, String),
    TextAnnotation(LaneId, String),
    Gateway(GatewayKind, u32),
}

/// The procedural graph: ordered lanes plus the node table they share.
#[derive(Debug, Clone, Default)]
pub struct ProceduralGraph {
    lanes: Vec<Lane>,
    nodes: BTreeMap<NodeId, NodeKind>,
    identity: HashMap<IdentityKey, NodeId>,
    next_id: usize,
    pub provenance: Option<String>,
}

impl ProceduralGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the lane for `actor`, creating it if this actor has not been
    /// seen yet. Lookup is on normalized actor text.
    pub fn add_lane(&mut self, actor: &str) -> LaneId {
        let key = normalize_text(actor);
        for (i, lane) in self.lanes.iter().enumerate() {
            if normalize_text(&lane.actor) == key {
                return LaneId(i);
            }
        }
        self.lanes.push(Lane::new(actor));
        LaneId(self.lanes.len() - 1)
    }

    /// Registers a node in `lane`. Idempotent: inserting a node with an
    /// identity key already present returns the existing id. Gateway identity
    /// is graph-global; everything else is lane-scoped on normalized text.
    pub fn add_node(&mut self, lane: LaneId, kind: NodeKind) -> NodeId {
        let kind = match kind {
            NodeKind::Action(t) => NodeKind::Action(t.trim().to_string()),
            NodeKind::DataObject(t) => NodeKind::DataObject(t.trim().to_string()),
            NodeKind::TextAnnotation(t) => NodeKind::TextAnnotation(t.trim().to_string()),
            other => other,
        };
        let key = match &kind {
            NodeKind::Start => IdentityKey::Start(lane),
            NodeKind::End => IdentityKey::End(lane),
            NodeKind::Action(t) => IdentityKey::Action(lane, normalize_text(t)),
            NodeKind::DataObject(t) => IdentityKey::DataObject(lane, normalize_text(t)),
            NodeKind::TextAnnotation(t) => IdentityKey::TextAnnotation(lane, normalize_text(t)),
            NodeKind::Xor(i) => IdentityKey::Gateway(GatewayKind::Xor, *i),
            NodeKind::Or(i) => IdentityKey::Gateway(GatewayKind::Or, *i),
            NodeKind::And(i) => IdentityKey::Gateway(GatewayKind::And, *i),
        };
        let id = match self.identity.get(&key) {
            Some(&id) => id,
            None => {
                let id = NodeId(self.next_id);
                self.next_id += 1;
                self.identity.insert(key, id);
                self.nodes.insert(id, kind);
                id
            }
        };
        let lane_ref = &mut self.lanes[lane.0];
        if !lane_ref.nodes.contains(&id) {
            lane_ref.nodes.push(id);
        }
        id
    }

    pub fn add_edge(&mut self, lane: LaneId, source: NodeId, target: NodeId, kind: FlowKind) {
        debug_assert!(self.nodes.contains_key(&source) && self.nodes.contains_key(&target));
        self.lanes[lane.0].edges.push(Edge {
            source,
            target,
            kind,
        });
    }

    pub fn lanes(&self) -> &[Lane] {
        &self.lanes
    }

    pub fn node(&self, id: NodeId) -> Option<&NodeKind> {
        self.nodes.get(&id)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.lanes.iter().map(|l| l.edges.len()).sum()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.keys().copied()
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, &NodeKind)> {
        self.nodes.iter().map(|(id, k)| (*id, k))
    }

    /// Gateway nodes in id order.
    pub fn gateways(&self) -> impl Iterator<Item = (NodeId, GatewayKind)> + '_ {
        self.nodes
            .iter()
            .filter_map(|(id, k)| k.gateway_kind().map(|g| (*id, g)))
    }

    /// Display label for a node, or the raw id if it is unknown.
    pub fn node_label(&self, id: NodeId) -> String {
        self.nodes
            .get(&id)
            .map(|k| k.label())
            .unwrap_or_else(|| id.to_string())
    }

    /// Outgoing edges of `id` in insertion order (lane order, then edge
    /// order within a lane). `filter` restricts the flow kinds returned;
    /// without it auxiliary targets are included.
    pub fn successors(
        &self,
        id: NodeId,
        filter: Option<FlowClass>,
    ) -> Result<Vec<(&Edge, NodeId)>, GraphError> {
        if !self.nodes.contains_key(&id) {
            return Err(GraphError::UnknownNode(id));
        }
        Ok(self
            .lanes
            .iter()
            .flat_map(|l| l.edges.iter())
            .filter(|e| e.source == id && filter.is_none_or(|f| f.matches(&e.kind)))
            .map(|e| (e, e.target))
            .collect())
    }

    /// Incoming edges of `id`, same ordering rules as [`successors`].
    ///
    /// [`successors`]: ProceduralGraph::successors
    pub fn predecessors(
        &self,
        id: NodeId,
        filter: Option<FlowClass>,
    ) -> Result<Vec<(&Edge, NodeId)>, GraphError> {
        if !self.nodes.contains_key(&id) {
            return Err(GraphError::UnknownNode(id));
        }
        Ok(self
            .lanes
            .iter()
            .flat_map(|l| l.edges.iter())
            .filter(|e| e.target == id && filter.is_none_or(|f| f.matches(&e.kind)))
            .map(|e| (e, e.source))
            .collect())
    }

    /// A copy of the graph without auxiliary nodes and without any edge that
    /// touches one. Node ids are preserved, so views and the original graph
    /// can be cross-referenced. Idempotent.
    pub fn executable_subgraph(&self) -> ProceduralGraph {
        let keep = |id: &NodeId| self.nodes.get(id).map(|k| !k.is_auxiliary()).unwrap_or(false);
        let mut out = ProceduralGraph {
            lanes: Vec::with_capacity(self.lanes.len()),
            nodes: BTreeMap::new(),
            identity: HashMap::new(),
            next_id: self.next_id,
            provenance: self.provenance.clone(),
        };
        for (key, id) in &self.identity {
            if keep(id) {
                out.identity.insert(key.clone(), *id);
                out.nodes.insert(*id, self.nodes[id].clone());
            }
        }
        for lane in &self.lanes {
            out.lanes.push(Lane {
                actor: lane.actor.clone(),
                nodes: lane.nodes.iter().copied().filter(keep).collect(),
                edges: lane
                    .edges
                    .iter()
                    .filter(|e| keep(&e.source) && keep(&e.target))
                    .cloned()
                    .collect(),
            });
        }
        out
    }

    /// Canonical JSON form:
    /// `{lanes:[{actor, nodes:[{id,kind,text?,index?}], edges:[{src,dst,kind,label?}]}]}`
    /// with fixed field order and stable ids.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&JsonGraph::from(self)).expect("graph serializes")
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(JsonGraph::from(self)).expect("graph serializes")
    }
}

#[derive(Serialize)]
struct JsonGraph {
    lanes: Vec<JsonLane>,
    #[serde(skip_serializing_if = "Option::is_none")]
    provenance: Option<String>,
}

#[derive(Serialize)]
struct JsonLane {
    actor: String,
    nodes: Vec<JsonNode>,
    edges: Vec<JsonEdge>,
}

#[derive(Serialize)]
struct JsonNode {
    id: usize,
    kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    index: Option<u32>,
}

#[derive(Serialize)]
struct JsonEdge {
    src: usize,
    dst: usize,
    kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<String>,
}

impl From<&ProceduralGraph> for JsonGraph {
    fn from(g: &ProceduralGraph) -> Self {
        let lanes = g
            .lanes
            .iter()
            .map(|lane| JsonLane {
                actor: lane.actor.clone(),
                nodes: lane
                    .nodes
                    .iter()
                    .map(|id| {
                        let kind = &g.nodes[id];
                        let (tag, text, index) = match kind {
                            NodeKind::Start => ("Start", None, None),
                            NodeKind::End => ("End", None, None),
                            NodeKind::Action(t) => ("Action", Some(t.clone()), None),
                            NodeKind::Xor(i) => ("XOR", None, Some(*i)),
                            NodeKind::Or(i) => ("OR", None, Some(*i)),
                            NodeKind::And(i) => ("AND", None, Some(*i)),
                            NodeKind::DataObject(t) => ("DataObject", Some(t.clone()), None),
                            NodeKind::TextAnnotation(t) => {
                                ("TextAnnotation", Some(t.clone()), None)
                            }
                        };
                        JsonNode {
                            id: id.0,
                            kind: tag,
                            text,
                            index,
                        }
                    })
                    .collect(),
                edges: lane
                    .edges
                    .iter()
                    .map(|e| JsonEdge {
                        src: e.source.0,
                        dst: e.target.0,
                        kind: match &e.kind {
                            FlowKind::Sequence => "sequence",
                            FlowKind::Condition(_) => "condition",
                            FlowKind::Constraint => "constraint",
                        },
                        label: e.kind.condition_label().map(str::to_string),
                    })
                    .collect(),
            })
            .collect();
        JsonGraph {
            lanes,
            provenance: g.provenance.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lane_graph() -> (ProceduralGraph, LaneId) {
        let mut g = ProceduralGraph::new();
        let lane = g.add_lane("the customer");
        (g, lane)
    }

    #[test]
    fn duplicate_action_text_is_one_node() {
        let (mut g, lane) = lane_graph();
        let a = g.add_node(lane, NodeKind::Action("find an empty seat".into()));
        let b = g.add_node(lane, NodeKind::Action("find an empty seat".into()));
        assert_eq!(a, b);
        // identity key folds case and whitespace
        let c = g.add_node(lane, NodeKind::Action("Find  an empty   seat".into()));
        assert_eq!(a, c);
        assert_eq!(g.node_count(), 1);
    }

    #[test]
    fn start_and_end_are_distinct() {
        let (mut g, lane) = lane_graph();
        let s = g.add_node(lane, NodeKind::Start);
        let e = g.add_node(lane, NodeKind::End);
        assert_ne!(s, e);
        assert_eq!(g.node_count(), 2);
    }

    #[test]
    fn gateway_identity_is_kind_plus_index() {
        let (mut g, lane) = lane_graph();
        let a = g.add_node(lane, NodeKind::Xor(1));
        let b = g.add_node(lane, NodeKind::Xor(1));
        assert_eq!(a, b);
        let c = g.add_node(lane, NodeKind::Or(1));
        assert_ne!(a, c);
        // same gateway mentioned from another lane resolves to the same node
        let lane2 = g.add_lane("the restaurant");
        let d = g.add_node(lane2, NodeKind::Xor(1));
        assert_eq!(a, d);
        assert!(g.lanes()[lane2.0].contains(a));
    }

    #[test]
    fn same_action_text_in_two_lanes_is_two_nodes() {
        let mut g = ProceduralGraph::new();
        let l1 = g.add_lane("a");
        let l2 = g.add_lane("b");
        let x = g.add_node(l1, NodeKind::Action("check".into()));
        let y = g.add_node(l2, NodeKind::Action("check".into()));
        assert_ne!(x, y);
    }

    #[test]
    fn successors_order_and_filter() {
        let (mut g, lane) = lane_graph();
        let x = g.add_node(lane, NodeKind::Xor(1));
        let a = g.add_node(lane, NodeKind::Action("pay by credit card".into()));
        let b = g.add_node(lane, NodeKind::Action("pay in cash".into()));
        let note = g.add_node(lane, NodeKind::TextAnnotation("keep the receipt".into()));
        g.add_edge(lane, x, a, FlowKind::Condition("credit card is available".into()));
        g.add_edge(lane, x, b, FlowKind::Condition("credit card is unavailable".into()));
        g.add_edge(lane, x, note, FlowKind::Constraint);

        let all = g.successors(x, None).unwrap();
        assert_eq!(all.len(), 3);
        assert_eq!(all[0].1, a);
        assert_eq!(all[1].1, b);

        let exec = g.successors(x, Some(FlowClass::Executable)).unwrap();
        assert_eq!(exec.len(), 2);

        assert_eq!(g.successors(a, None).unwrap().len(), 0);
        assert!(g.successors(NodeId(999), None).is_err());
    }

    #[test]
    fn node_with_only_annotation_edge_has_no_executable_successors() {
        let (mut g, lane) = lane_graph();
        let a = g.add_node(lane, NodeKind::Action("confirm the payment".into()));
        let t = g.add_node(lane, NodeKind::TextAnnotation("provide the receipt".into()));
        g.add_edge(lane, a, t, FlowKind::Constraint);
        assert!(g
            .successors(a, Some(FlowClass::Executable))
            .unwrap()
            .is_empty());
    }

    #[test]
    fn executable_subgraph_drops_auxiliary_and_is_idempotent() {
        let (mut g, lane) = lane_graph();
        let s = g.add_node(lane, NodeKind::Start);
        let a = g.add_node(lane, NodeKind::Action("submit the order".into()));
        let d = g.add_node(lane, NodeKind::DataObject("order list".into()));
        let e = g.add_node(lane, NodeKind::End);
        g.add_edge(lane, s, a, FlowKind::Sequence);
        g.add_edge(lane, a, d, FlowKind::Constraint);
        g.add_edge(lane, a, e, FlowKind::Sequence);

        let view = g.executable_subgraph();
        assert_eq!(view.node_count(), 3);
        assert_eq!(view.edge_count(), 2);
        assert!(view.node(d).is_none());
        // original untouched
        assert_eq!(g.node_count(), 4);
        assert_eq!(g.edge_count(), 3);
        // idempotence
        let twice = view.executable_subgraph();
        assert_eq!(twice.node_count(), view.node_count());
        assert_eq!(twice.edge_count(), view.edge_count());
        assert_eq!(twice.to_json(), view.to_json());
    }

    #[test]
    fn executable_subgraph_keeps_isolated_source_node() {
        let (mut g, lane) = lane_graph();
        let a = g.add_node(lane, NodeKind::Action("archive".into()));
        let d = g.add_node(lane, NodeKind::DataObject("x".into()));
        g.add_edge(lane, a, d, FlowKind::Constraint);
        let view = g.executable_subgraph();
        assert_eq!(view.node_count(), 1);
        assert_eq!(view.edge_count(), 0);
        assert!(view.node(a).is_some());
    }

    #[test]
    fn json_shape_is_stable() {
        let (mut g, lane) = lane_graph();
        let s = g.add_node(lane, NodeKind::Start);
        let x = g.add_node(lane, NodeKind::Xor(1));
        g.add_edge(lane, s, x, FlowKind::Sequence);
        let v = g.to_json_value();
        assert_eq!(v["lanes"][0]["actor"], "the customer");
        assert_eq!(v["lanes"][0]["nodes"][0]["kind"], "Start");
        assert_eq!(v["lanes"][0]["nodes"][1]["index"], 1);
        assert_eq!(v["lanes"][0]["edges"][0]["kind"], "sequence");
        assert!(v["lanes"][0]["edges"][0].get("label").is_none());
    }
}
