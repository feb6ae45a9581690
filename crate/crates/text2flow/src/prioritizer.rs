//! Feedback scoring and budget-constrained selection.
//!
//! Structural feedback gets a utility score (how often the underlying
//! failure showed up across failing trials) plus a repeat score (how
//! similar the suggestion is to earlier, still-unresolved suggestions, by
//! BLEU). Semantic feedback carries the repeat score alone. The unified
//! weight drives a greedy knapsack over a token budget, at most
//! `max_items` suggestions per round.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::bleu::bleu;
use crate::simulator::IssueSignature;

/// Whether a suggestion came from the simulator-grounded critic or from a
/// semantic consistency check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackKind {
    Structural,
    Semantic,
}

/// What a feedback item is about. Keys are canonical strings so journals
/// round-trip losslessly: issue signatures for structural feedback,
/// `gateway:`/`segment:` prefixed gateway labels for semantic feedback.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FeedbackOrigin(pub String);

impl FeedbackOrigin {
    pub fn issue(signature: &IssueSignature) -> Self {
        FeedbackOrigin(signature.to_string())
    }

    pub fn gateway(label: &str) -> Self {
        FeedbackOrigin(format!("gateway:{label}"))
    }

    pub fn segment(label: &str) -> Self {
        FeedbackOrigin(format!("segment:{label}"))
    }
}

impl std::fmt::Display for FeedbackOrigin {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// One natural-language revision suggestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackItem {
    pub kind: FeedbackKind,
    pub origin: FeedbackOrigin,
    pub text: String,
    /// Whitespace token count of `text`; the length the budget is charged.
    pub token_len: usize,
    /// Refinement round the item was produced in.
    pub round: usize,
}

impl FeedbackItem {
    pub fn new(kind: FeedbackKind, origin: FeedbackOrigin, text: impl Into<String>) -> Self {
        let text = text.into();
        let text = text.trim().to_string();
        debug_assert!(!text.is_empty(), "feedback text must be non-empty");
        let token_len = text.split_whitespace().count().max(1);
        FeedbackItem {
            kind,
            origin,
            text,
            token_len,
            round: 0,
        }
    }

    pub fn at_round(mut self, round: usize) -> Self {
        self.round = round;
        self
    }
}

/// Score components of one item.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackScore {
    /// Normalized failure frequency; 0 for semantic items.
    pub utility: f64,
    /// Max BLEU similarity to unresolved prior feedback.
    pub repeat: f64,
    /// `utility + repeat` for structural items, `repeat` for semantic.
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct PrioritizerConfig {
    /// Token budget shared by the selected items.
    pub token_budget: usize,
    /// Hard cap on how many suggestions go into the next prompt.
    pub max_items: usize,
}

impl Default for PrioritizerConfig {
    fn default() -> Self {
        PrioritizerConfig {
            token_budget: 400,
            max_items: 3,
        }
    }
}

/// Normalized failure frequency per signature: `count / sum(counts)`.
/// All-zero (or empty) input yields the empty map.
pub fn utility(counts: &BTreeMap<IssueSignature, u64>) -> BTreeMap<IssueSignature, f64> {
    let total: u64 = counts.values().sum();
    if total == 0 {
        return BTreeMap::new();
    }
    counts
        .iter()
        .map(|(sig, count)| (sig.clone(), *count as f64 / total as f64))
        .collect()
}

/// Max BLEU similarity of `item` to prior-round feedback whose origin is
/// still unresolved, i.e. shows up again among `current_origins`. Empty
/// history scores 0.
pub fn repeat_score(
    item: &FeedbackItem,
    history: &[FeedbackItem],
    current_origins: &BTreeSet<FeedbackOrigin>,
) -> f64 {
    history
        .iter()
        .filter(|prior| prior.round < item.round && current_origins.contains(&prior.origin))
        .map(|prior| bleu(&item.text, &prior.text))
        .fold(0.0, f64::max)
}

/// Combines the components: structural weight is `u + R`, semantic weight
/// is `R` alone (semantic checks have no trace-level frequency to lean on).
pub fn unified_score(
    item: &FeedbackItem,
    utilities: &BTreeMap<IssueSignature, f64>,
    repeat: f64,
) -> FeedbackScore {
    let utility = match item.kind {
        FeedbackKind::Structural => utilities
            .iter()
            .find(|(sig, _)| FeedbackOrigin::issue(sig) == item.origin)
            .map(|(_, u)| *u)
            .unwrap_or(0.0),
        FeedbackKind::Semantic => 0.0,
    };
    let weight = match item.kind {
        FeedbackKind::Structural => utility + repeat,
        FeedbackKind::Semantic => repeat,
    };
    FeedbackScore {
        utility,
        repeat,
        weight,
    }
}

/// Scores a whole pool: utilities looked up per-origin, repeat computed
/// against `history` with the pool's own origins as the unresolved set.
pub fn score_pool(
    items: &[FeedbackItem],
    utilities: &BTreeMap<IssueSignature, f64>,
    history: &[FeedbackItem],
) -> Vec<FeedbackScore> {
    let current_origins: BTreeSet<FeedbackOrigin> =
        items.iter().map(|i| i.origin.clone()).collect();
    items
        .iter()
        .map(|item| {
            let repeat = repeat_score(item, history, &current_origins);
            unified_score(item, utilities, repeat)
        })
        .collect()
}

/// Greedy knapsack by efficiency `weight / token_len`: walk items in
/// descending efficiency, skip anything that would blow the budget, stop at
/// `max_items`. Ties break structural-first, then higher utility, then
/// earlier position. Returns indices into `scored`, in selection order.
pub fn select(scored: &[(FeedbackItem, FeedbackScore)], config: &PrioritizerConfig) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| {
        let (item_a, score_a) = &scored[a];
        let (item_b, score_b) = &scored[b];
        let eff_a = score_a.weight / item_a.token_len as f64;
        let eff_b = score_b.weight / item_b.token_len as f64;
        eff_b
            .total_cmp(&eff_a)
            .then_with(|| item_a.kind.cmp(&item_b.kind)) // Structural < Semantic
            .then_with(|| score_b.utility.total_cmp(&score_a.utility))
            .then_with(|| a.cmp(&b))
    });
    let mut selected = Vec::new();
    let mut spent = 0usize;
    for idx in order {
        if selected.len() == config.max_items {
            break;
        }
        let len = scored[idx].0.token_len;
        if spent + len <= config.token_budget {
            spent += len;
            selected.push(idx);
        }
    }
    selected
}

/// One row of the feedback ledger journaled per round:
/// `{round, kind, origin, text, u, R, w, len, selected}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub round: usize,
    pub kind: FeedbackKind,
    pub origin: String,
    pub text: String,
    pub u: f64,
    #[serde(rename = "R")]
    pub repeat: f64,
    pub w: f64,
    pub len: usize,
    pub selected: bool,
}

impl LedgerEntry {
    pub fn new(item: &FeedbackItem, score: &FeedbackScore, selected: bool) -> Self {
        LedgerEntry {
            round: item.round,
            kind: item.kind,
            origin: item.origin.to_string(),
            text: item.text.clone(),
            u: score.utility,
            repeat: score.repeat,
            w: score.weight,
            len: item.token_len,
            selected,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::IssueKind;
    use crate::graph::NodeId;

    fn sig(node: usize) -> IssueSignature {
        IssueSignature::of_static(IssueKind::DeadEnd(NodeId(node)))
    }

    #[test]
    fn utility_normalizes_counts() {
        let counts = BTreeMap::from([(sig(1), 3), (sig(2), 1)]);
        let u = utility(&counts);
        assert!((u[&sig(1)] - 0.75).abs() < 1e-12);
        assert!((u[&sig(2)] - 0.25).abs() < 1e-12);
        assert!((u.values().sum::<f64>() - 1.0).abs() < 1e-12);

        let single = utility(&BTreeMap::from([(sig(1), 5)]));
        assert_eq!(single[&sig(1)], 1.0);

        assert!(utility(&BTreeMap::new()).is_empty());
        assert!(utility(&BTreeMap::from([(sig(1), 0)])).is_empty());
    }

    #[test]
    fn repeat_score_empty_history_is_zero() {
        let item = FeedbackItem::new(
            FeedbackKind::Structural,
            FeedbackOrigin::issue(&sig(1)),
            "add an edge",
        )
        .at_round(1);
        assert_eq!(repeat_score(&item, &[], &BTreeSet::new()), 0.0);
    }

    #[test]
    fn repeat_score_identical_unresolved_text_is_one() {
        let origin = FeedbackOrigin::issue(&sig(1));
        let prior = FeedbackItem::new(
            FeedbackKind::Structural,
            origin.clone(),
            "add an edge from pay in cash to the merge gateway",
        );
        let item = prior.clone().at_round(1);
        let current = BTreeSet::from([origin.clone()]);
        assert!((repeat_score(&item, std::slice::from_ref(&prior), &current) - 1.0).abs() < 1e-12);
        // resolved origin (absent from the current pool) does not count
        let other = BTreeSet::from([FeedbackOrigin::issue(&sig(9))]);
        assert_eq!(repeat_score(&item, &[prior], &other), 0.0);
    }

    #[test]
    fn unified_score_case_split() {
        let utilities = BTreeMap::from([(sig(1), 0.4)]);
        let structural = FeedbackItem::new(
            FeedbackKind::Structural,
            FeedbackOrigin::issue(&sig(1)),
            "reconnect the node",
        );
        let s = unified_score(&structural, &utilities, 0.3);
        assert!((s.weight - 0.7).abs() < 1e-12);

        let semantic = FeedbackItem::new(
            FeedbackKind::Semantic,
            FeedbackOrigin::gateway("OR1"),
            "Change OR1 to XOR1.",
        );
        let s = unified_score(&semantic, &utilities, 0.6);
        assert!((s.weight - 0.6).abs() < 1e-12);
        assert_eq!(s.utility, 0.0);

        let s = unified_score(&semantic, &utilities, 0.0);
        assert_eq!(s.weight, 0.0);
    }

    fn scored(kind: FeedbackKind, weight: f64, len: usize, tag: &str) -> (FeedbackItem, FeedbackScore) {
        let words = vec!["w"; len].join(" ");
        let item = FeedbackItem::new(kind, FeedbackOrigin::gateway(tag), words);
        assert_eq!(item.token_len, len);
        (
            item,
            FeedbackScore {
                utility: 0.0,
                repeat: 0.0,
                weight,
            },
        )
    }

    #[test]
    fn select_respects_budget_and_skips_oversized() {
        let pool = vec![
            scored(FeedbackKind::Structural, 0.9, 30, "a"),
            scored(FeedbackKind::Structural, 0.5, 10, "b"),
            scored(FeedbackKind::Structural, 0.4, 100, "c"),
        ];
        let cfg = PrioritizerConfig {
            token_budget: 45,
            max_items: 3,
        };
        let picked = select(&pool, &cfg);
        // efficiencies: b=0.05, a=0.03, c=0.004; c does not fit
        assert_eq!(picked, vec![1, 0]);
    }

    #[test]
    fn select_empty_when_budget_below_every_item() {
        let pool = vec![scored(FeedbackKind::Structural, 1.0, 50, "a")];
        let cfg = PrioritizerConfig {
            token_budget: 10,
            max_items: 3,
        };
        assert!(select(&pool, &cfg).is_empty());
    }

    #[test]
    fn select_single_item_within_budget() {
        let pool = vec![scored(FeedbackKind::Semantic, 0.2, 5, "a")];
        assert_eq!(select(&pool, &PrioritizerConfig::default()), vec![0]);
    }

    #[test]
    fn select_caps_at_max_items() {
        let pool: Vec<_> = (0..6)
            .map(|i| scored(FeedbackKind::Structural, 1.0, 5, &format!("t{i}")))
            .collect();
        let picked = select(&pool, &PrioritizerConfig::default());
        assert_eq!(picked.len(), 3);
    }

    #[test]
    fn structural_wins_efficiency_ties() {
        let pool = vec![
            scored(FeedbackKind::Semantic, 0.5, 10, "sem"),
            scored(FeedbackKind::Structural, 0.5, 10, "stru"),
        ];
        let cfg = PrioritizerConfig {
            token_budget: 10,
            max_items: 1,
        };
        assert_eq!(select(&pool, &cfg), vec![1]);
    }

    #[test]
    fn zero_weight_items_are_eligible_last() {
        let pool = vec![
            scored(FeedbackKind::Semantic, 0.0, 5, "zero"),
            scored(FeedbackKind::Structural, 0.1, 5, "pos"),
        ];
        let cfg = PrioritizerConfig {
            token_budget: 10,
            max_items: 2,
        };
        assert_eq!(select(&pool, &cfg), vec![1, 0]);
    }
}
