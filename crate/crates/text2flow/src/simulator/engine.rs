//! The token game shared by randomized simulation and exhaustive
//! enumeration. All randomness is funneled through [`Chooser`], so the same
//! stepping code serves both.
//!
//! Lanes execute independently and in order within a trial: one token
//! starts at each lane's Start node. A token arriving at a gateway parks
//! there; the gateway fires once no other live token can still reach it,
//! merging everything that parked. Firing picks successors by gateway kind
//! and the trial fails fast on the first structural issue it hits.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::graph::{GatewayKind, NodeId, NodeKind, ProceduralGraph};

use super::{
    GatewayChoice, IssueKind, SimulationConfig, SimulationTrace, StructuralIssue,
};

/// Decision source for gateway branching.
pub(super) trait Chooser {
    /// Index of the one branch an XOR takes, in `0..n` (`n >= 2`).
    fn choose_one(&mut self, gateway: NodeId, n: usize) -> usize;
    /// Bitmask over `n` branches for an OR, non-empty (`n >= 2`, `n <= 63`
    /// where masks are used; larger fans fall back to per-branch coins).
    fn choose_subset(&mut self, gateway: NodeId, n: usize) -> u64;
}

struct RandomChooser {
    rng: ChaCha8Rng,
}

impl Chooser for RandomChooser {
    fn choose_one(&mut self, _gateway: NodeId, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    fn choose_subset(&mut self, _gateway: NodeId, n: usize) -> u64 {
        if n <= 63 {
            self.rng.random_range(1..(1u64 << n))
        } else {
            // rejection sampling keeps the subset distribution uniform
            loop {
                let mut mask = 0u64;
                let mut any = false;
                for i in 0..n.min(64) {
                    if self.rng.random::<bool>() {
                        mask |= 1 << i;
                        any = true;
                    }
                }
                if any {
                    return mask;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(super) enum NodeClass {
    Start,
    End,
    Gateway(GatewayKind),
    Step,
}

/// Pre-resolved executable view of one lane.
pub(super) struct LaneExec {
    pub actor: String,
    pub start: Option<NodeId>,
    pub members: Vec<NodeId>,
    /// Executable successors in edge insertion order.
    pub adjacency: BTreeMap<NodeId, Vec<NodeId>>,
    /// Nodes reachable from a key by one or more executable edges.
    pub reach: BTreeMap<NodeId, BTreeSet<NodeId>>,
}

pub(super) struct ExecView {
    pub lanes: Vec<LaneExec>,
    pub classes: BTreeMap<NodeId, NodeClass>,
    pub first_actor: String,
}

pub(super) fn build_view(graph: &ProceduralGraph) -> ExecView {
    let exec = graph.executable_subgraph();
    let mut classes = BTreeMap::new();
    for (id, kind) in exec.nodes() {
        let class = match kind {
            NodeKind::Start => NodeClass::Start,
            NodeKind::End => NodeClass::End,
            k => match k.gateway_kind() {
                Some(g) => NodeClass::Gateway(g),
                None => NodeClass::Step,
            },
        };
        classes.insert(id, class);
    }
    let mut lanes = Vec::new();
    for lane in exec.lanes() {
        let mut adjacency: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        for id in &lane.nodes {
            adjacency.insert(*id, Vec::new());
        }
        for edge in &lane.edges {
            adjacency.entry(edge.source).or_default().push(edge.target);
        }
        let start = lane
            .nodes
            .iter()
            .copied()
            .find(|id| classes.get(id) == Some(&NodeClass::Start));
        let reach = closure(&adjacency);
        lanes.push(LaneExec {
            actor: lane.actor.clone(),
            start,
            members: lane.nodes.clone(),
            adjacency,
            reach,
        });
    }
    let first_actor = graph
        .lanes()
        .first()
        .map(|l| l.actor.clone())
        .unwrap_or_else(|| "the process".to_string());
    ExecView {
        lanes,
        classes,
        first_actor,
    }
}

/// Transitive reachability via >= 1 edge, per node.
fn closure(adjacency: &BTreeMap<NodeId, Vec<NodeId>>) -> BTreeMap<NodeId, BTreeSet<NodeId>> {
    let mut reach = BTreeMap::new();
    for &node in adjacency.keys() {
        let mut seen = BTreeSet::new();
        let mut queue: VecDeque<NodeId> = adjacency[&node].iter().copied().collect();
        while let Some(next) = queue.pop_front() {
            if seen.insert(next) {
                if let Some(succ) = adjacency.get(&next) {
                    queue.extend(succ.iter().copied());
                }
            }
        }
        reach.insert(node, seen);
    }
    reach
}

#[derive(Debug, Clone)]
struct Token {
    at: NodeId,
    forked_by: Option<NodeId>,
}

/// Lane-local token game. Returns the issue that stopped the lane, if any.
#[allow(clippy::too_many_arguments)]
fn run_lane(
    lane: &LaneExec,
    classes: &BTreeMap<NodeId, NodeClass>,
    chooser: &mut dyn Chooser,
    max_steps: u32,
    steps: &mut u32,
    path: &mut Vec<NodeId>,
    choices: &mut Vec<GatewayChoice>,
    detail: &dyn Fn(&IssueKind) -> String,
) -> Option<StructuralIssue> {
    let issue = |kind: IssueKind| {
        Some(StructuralIssue {
            detail: detail(&kind),
            kind,
        })
    };
    let Some(start) = lane.start else {
        return issue(IssueKind::MissingStart(lane.actor.clone()));
    };

    let mut runnable: VecDeque<Token> = VecDeque::new();
    let mut waiting: BTreeMap<NodeId, Vec<Token>> = BTreeMap::new();
    path.push(start);
    runnable.push_back(Token {
        at: start,
        forked_by: None,
    });

    // deliver a token to `target`, parking it when the target is a gateway
    macro_rules! deliver {
        ($token:expr, $target:expr) => {{
            let mut token = $token;
            token.at = $target;
            match classes.get(&$target) {
                Some(NodeClass::Gateway(_)) => waiting.entry($target).or_default().push(token),
                Some(NodeClass::End) => {
                    path.push($target);
                }
                _ => {
                    path.push($target);
                    runnable.push_back(token);
                }
            }
        }};
    }

    loop {
        // fire every gateway that no other live token can still reach
        loop {
            let fireable = waiting.keys().copied().find(|g| {
                let blocked_by_running = runnable
                    .iter()
                    .any(|t| lane.reach.get(&t.at).is_some_and(|r| r.contains(g)));
                let blocked_by_waiting = waiting.keys().any(|h| {
                    h != g && lane.reach.get(h).is_some_and(|r| r.contains(g))
                });
                !blocked_by_running && !blocked_by_waiting
            });
            let Some(gateway) = fireable else { break };
            *steps += 1;
            if *steps > max_steps {
                return issue(IssueKind::StepLimitExceeded);
            }
            let parked = waiting.remove(&gateway).expect("gateway has parked tokens");
            path.push(gateway);
            let merged_fork = parked[0].forked_by;
            let successors = lane.adjacency.get(&gateway).cloned().unwrap_or_default();
            if successors.is_empty() {
                return issue(IssueKind::DeadEnd(gateway));
            }
            let kind = match classes.get(&gateway) {
                Some(NodeClass::Gateway(k)) => *k,
                _ => unreachable!("only gateways park tokens"),
            };
            let chosen: Vec<NodeId> = match kind {
                GatewayKind::Xor => {
                    let idx = if successors.len() == 1 {
                        0
                    } else {
                        chooser.choose_one(gateway, successors.len())
                    };
                    vec![successors[idx]]
                }
                GatewayKind::Or => {
                    let mask = if successors.len() == 1 {
                        1
                    } else {
                        chooser.choose_subset(gateway, successors.len())
                    };
                    successors
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| *i < 64 && mask & (1 << i) != 0)
                        .map(|(_, t)| *t)
                        .collect()
                }
                GatewayKind::And => successors.clone(),
            };
            if matches!(kind, GatewayKind::Xor | GatewayKind::Or) {
                choices.push(GatewayChoice {
                    gateway,
                    chosen: chosen.clone(),
                });
            }
            let fork = if chosen.len() > 1 {
                Some(gateway)
            } else {
                merged_fork
            };
            for target in chosen {
                deliver!(
                    Token {
                        at: gateway,
                        forked_by: fork,
                    },
                    target
                );
            }
        }

        // advance one running token by one hop
        if let Some(token) = runnable.pop_front() {
            *steps += 1;
            if *steps > max_steps {
                return issue(IssueKind::StepLimitExceeded);
            }
            let successors = lane.adjacency.get(&token.at).cloned().unwrap_or_default();
            if successors.is_empty() {
                return issue(IssueKind::DeadEnd(token.at));
            }
            for target in &successors {
                deliver!(token.clone(), *target);
            }
        } else if let Some((&stuck, tokens)) = waiting.iter().next() {
            // nothing can run and nothing can fire: a join deadlock
            let fork = tokens[0].forked_by.unwrap_or(stuck);
            return issue(IssueKind::UnjoinedParallelBranch(fork));
        } else {
            return None; // every token reached End
        }
    }
}

pub(super) fn run_trial(
    view: &ExecView,
    graph: &ProceduralGraph,
    chooser: &mut dyn Chooser,
    max_steps: u32,
) -> SimulationTrace {
    let mut path = Vec::new();
    let mut choices = Vec::new();
    let mut issue = None;
    let mut steps = 0u32;
    let detail = |kind: &IssueKind| super::describe_issue(graph, kind);
    for lane in &view.lanes {
        if lane.members.is_empty() {
            continue;
        }
        issue = run_lane(
            lane,
            &view.classes,
            chooser,
            max_steps,
            &mut steps,
            &mut path,
            &mut choices,
            &detail,
        );
        if issue.is_some() {
            break;
        }
    }
    SimulationTrace {
        path,
        choices,
        issue,
    }
}

/// Per-trial seed derivation (splitmix64 over the master seed and index),
/// so trial i is the same whether trials run serially or split.
fn trial_seed(master: u64, trial: u64) -> u64 {
    let mut z = master ^ trial.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(super) fn simulate(
    graph: &ProceduralGraph,
    config: &SimulationConfig,
) -> Vec<SimulationTrace> {
    let view = build_view(graph);
    if view.lanes.iter().all(|l| l.members.is_empty()) {
        let kind = IssueKind::MissingStart(view.first_actor.clone());
        return vec![SimulationTrace {
            path: Vec::new(),
            choices: Vec::new(),
            issue: Some(StructuralIssue {
                detail: super::describe_issue(graph, &kind),
                kind,
            }),
        }];
    }
    let mut traces = Vec::with_capacity(config.trials as usize);
    for trial in 0..config.trials {
        let mut chooser = RandomChooser {
            rng: ChaCha8Rng::seed_from_u64(trial_seed(config.seed, trial)),
        };
        traces.push(run_trial(&view, graph, &mut chooser, config.max_steps));
    }
    traces
}

/// True when every lane's executable adjacency is acyclic.
pub(super) fn is_acyclic(view: &ExecView) -> bool {
    view.lanes
        .iter()
        .all(|lane| lane.reach.iter().all(|(node, set)| !set.contains(node)))
}
