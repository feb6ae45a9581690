//! Sentence-level BLEU on whitespace tokens, used both for feedback repeat
//! detection and for tuple matching in the evaluator.
//!
//! Modified n-gram precisions for n = 1..4 with clip counting, uniform 1/4
//! weights, and add-one smoothing applied at every level:
//! `p_n = (clipped_n + 1) / (total_n + 1)`. The score is
//! `BP * exp(sum 0.25 * ln p_n)` with the usual brevity penalty
//! `exp(1 - r/c)` when the candidate is shorter than the reference.
//! Add-one keeps short revision sentences from collapsing to zero while
//! leaving `bleu(x, x) = 1` intact.

use std::collections::HashMap;

const MAX_NGRAM: usize = 4;

fn ngram_counts<'a>(tokens: &'a [&'a str], n: usize) -> HashMap<&'a [&'a str], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Smoothed sentence BLEU of `candidate` against `reference`, in `[0, 1]`.
/// An empty candidate scores 0.
pub fn bleu(candidate: &str, reference: &str) -> f64 {
    let cand: Vec<&str> = candidate.split_whitespace().collect();
    let refr: Vec<&str> = reference.split_whitespace().collect();
    if cand.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=MAX_NGRAM {
        let cand_counts = ngram_counts(&cand, n);
        let ref_counts = ngram_counts(&refr, n);
        let clipped: usize = cand_counts
            .iter()
            .map(|(gram, count)| (*count).min(ref_counts.get(gram).copied().unwrap_or(0)))
            .sum();
        let total: usize = cand_counts.values().sum();
        log_sum += 0.25 * (((clipped + 1) as f64) / ((total + 1) as f64)).ln();
    }
    let brevity = if cand.len() >= refr.len() {
        1.0
    } else {
        (1.0 - refr.len() as f64 / cand.len() as f64).exp()
    };
    brevity * log_sum.exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_strings_score_one() {
        for s in [
            "pay by credit card",
            "a",
            "the staff updates the order status and provides the information",
        ] {
            assert!((bleu(s, s) - 1.0).abs() < 1e-12, "bleu({s:?}, {s:?}) != 1");
        }
    }

    #[test]
    fn empty_candidate_scores_zero() {
        assert_eq!(bleu("", "anything at all"), 0.0);
        assert_eq!(bleu("   ", "anything"), 0.0);
    }

    #[test]
    fn disjoint_strings_land_near_the_smoothed_floor() {
        // no shared unigram at all: every precision is 1/(t+1)
        let a = (0..30).map(|i| format!("alpha{i}")).collect::<Vec<_>>().join(" ");
        let b = (0..30).map(|i| format!("beta{i}")).collect::<Vec<_>>().join(" ");
        let score = bleu(&a, &b);
        assert!(score > 0.0, "smoothed floor is not exactly 0");
        assert!(score < 0.05, "disjoint strings scored {score}");
    }

    #[test]
    fn bounded_and_brevity_penalized() {
        let long = "check the stock table and ship the goods from the warehouse";
        let short = "ship the goods";
        let s = bleu(short, long);
        assert!(s > 0.0 && s < 1.0);
        // candidate longer than reference is not length penalized
        assert!(bleu(long, long) > bleu(short, long));
    }

    #[test]
    fn clip_counting_limits_repeats() {
        // "the the the the" can only claim one "the" from the reference
        let spammy = bleu("the the the the", "the order");
        let honest = bleu("the order", "the order");
        assert!(spammy < honest);
    }
}
