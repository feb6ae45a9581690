//! Lenient parsers for the line-anchored response formats the prompts
//! demand. These never fail: drifted output degrades to fewer results and
//! a warning record.

use std::sync::OnceLock;

use regex::Regex;

use super::{SemanticVerdict, VerdictStatus};

fn issue_header() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?m)^\s*(?:\*\*)?Issue\s+(\d+)\b").expect("static regex"))
}

fn status_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?mi)^\s*-?\s*\*{0,2}Status\*{0,2}\s*:\s*(.+)$").expect("static regex"))
}

fn suggestion_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?mi)^\s*-?\s*\*{0,2}(?:Revision\s+)?Suggestion\*{0,2}[^:]*:\s*(.+)$")
            .expect("static regex")
    })
}

fn explanation_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?mi)^\s*-?\s*\*{0,2}Explanation\*{0,2}[^:]*:\s*(.+)$").expect("static regex")
    })
}

fn is_approved(response: &str) -> bool {
    response
        .lines()
        .map(str::trim)
        .any(|l| l.eq_ignore_ascii_case("approved"))
}

/// Parses the structural critic's `Issue N` blocks. Returns confirmed
/// issues as `(issue number, suggestion)` pairs (numbers are 1-based into
/// the list the prompt presented) plus warnings for anything dropped.
pub fn parse_critique(response: &str, issue_count: usize) -> (Vec<(usize, String)>, Vec<String>) {
    let mut confirmed = Vec::new();
    let mut warnings = Vec::new();
    let trimmed = response.trim();
    if trimmed.is_empty() {
        warnings.push("empty critique response".to_string());
        return (confirmed, warnings);
    }
    let headers: Vec<_> = issue_header().captures_iter(trimmed).collect();
    if headers.is_empty() {
        if !is_approved(trimmed) {
            warnings.push(format!(
                "critique response had no Issue blocks and no APPROVED: {}",
                snippet(trimmed)
            ));
        }
        return (confirmed, warnings);
    }
    let spans: Vec<(usize, usize, usize)> = headers
        .iter()
        .enumerate()
        .map(|(i, cap)| {
            let whole = cap.get(0).expect("match");
            let number: usize = cap[1].parse().unwrap_or(0);
            let end = headers
                .get(i + 1)
                .map(|next| next.get(0).expect("match").start())
                .unwrap_or(trimmed.len());
            (number, whole.start(), end)
        })
        .collect();
    for (number, start, end) in spans {
        let block = &trimmed[start..end];
        if number == 0 || number > issue_count {
            warnings.push(format!(
                "critique block references issue {number}, outside 1..={issue_count}"
            ));
            continue;
        }
        let Some(status) = status_line().captures(block).map(|c| c[1].to_lowercase()) else {
            warnings.push(format!("issue {number}: block without a Status line"));
            continue;
        };
        if status.contains("not a real issue") || status.contains("rejected") {
            continue;
        }
        if !status.contains("confirmed") {
            warnings.push(format!("issue {number}: unrecognized status `{status}`"));
            continue;
        }
        let suggestion = suggestion_line()
            .captures(block)
            .map(|c| c[1].trim().to_string())
            .unwrap_or_default();
        if suggestion.is_empty() {
            warnings.push(format!("issue {number}: confirmed but without a suggestion"));
            continue;
        }
        confirmed.push((number, suggestion));
    }
    (confirmed, warnings)
}

/// Parses a semantic judge response. Anything that does not clearly state a
/// `wrong` status is treated as approved.
pub fn parse_verdict(response: &str, subject: &str) -> (SemanticVerdict, Vec<String>) {
    let mut warnings = Vec::new();
    let trimmed = response.trim();
    if trimmed.is_empty() || is_approved(trimmed) {
        return (SemanticVerdict::approved(subject), warnings);
    }
    let Some(status) = status_line().captures(trimmed).map(|c| c[1].to_lowercase()) else {
        warnings.push(format!(
            "verdict for {subject} had no Status line; treating as approved: {}",
            snippet(trimmed)
        ));
        return (SemanticVerdict::approved(subject), warnings);
    };
    if !status.contains("wrong") {
        return (SemanticVerdict::approved(subject), warnings);
    }
    let mut suggestion = suggestion_line()
        .captures(trimmed)
        .map(|c| c[1].trim().to_string())
        .unwrap_or_default();
    if suggestion.is_empty() {
        warnings.push(format!(
            "wrong verdict for {subject} without a revision suggestion; synthesized one"
        ));
        suggestion = format!("Revise the control logic of {subject} to match the source text.");
    }
    let explanation = explanation_line()
        .captures(trimmed)
        .map(|c| c[1].trim().to_string())
        .unwrap_or_default();
    (
        SemanticVerdict {
            subject: subject.to_string(),
            status: VerdictStatus::Wrong,
            suggestion,
            explanation,
        },
        warnings,
    )
}

fn snippet(text: &str) -> String {
    let mut s: String = text.chars().take(80).collect();
    if text.chars().count() > 80 {
        s.push('…');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn approved_yields_nothing() {
        let (items, warnings) = parse_critique("APPROVED", 3);
        assert!(items.is_empty());
        assert!(warnings.is_empty());
    }

    #[test]
    fn confirmed_block_yields_item() {
        let response = "Issue 1\n- Problem: dead end at 'pay in cash'\n- Status: Confirmed\n- Suggestion (if confirmed): Add an edge from pay in cash to XOR2.\n";
        let (items, warnings) = parse_critique(response, 1);
        assert_eq!(items, vec![(1, "Add an edge from pay in cash to XOR2.".to_string())]);
        assert!(warnings.is_empty());
    }

    #[test]
    fn not_a_real_issue_is_skipped() {
        let response = "Issue 1\n- Problem: x\n- Status: Not a real issue\n- Explanation (if not a real issue): annotation dead ends are fine here\n";
        let (items, warnings) = parse_critique(response, 1);
        assert!(items.is_empty());
        assert!(warnings.is_empty());
    }

    #[test]
    fn mixed_blocks_and_out_of_range() {
        let response = "Issue 1\n- Status: Confirmed\n- Suggestion: Fix A.\nIssue 2\n- Status: Not a real issue\n- Explanation: fine\nIssue 9\n- Status: Confirmed\n- Suggestion: nope\nIssue 3\n- Status: gibberish\n";
        let (items, warnings) = parse_critique(response, 3);
        assert_eq!(items, vec![(1, "Fix A.".to_string())]);
        assert_eq!(warnings.len(), 2);
    }

    #[test]
    fn garbage_becomes_warning_not_panic() {
        let (items, warnings) = parse_critique("the model rambled instead", 2);
        assert!(items.is_empty());
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn verdict_wrong_with_suggestion() {
        let response = "OR1: If there is no information about the old supplier, then check the deadline. Otherwise, continue.\n- Status: wrong.\n- Revision Suggestion: Change OR1 to XOR1.\n- Explanation: mutually exclusive conditions.";
        let (verdict, warnings) = parse_verdict(response, "OR1");
        assert_eq!(verdict.status, VerdictStatus::Wrong);
        assert_eq!(verdict.suggestion, "Change OR1 to XOR1.");
        assert!(verdict.explanation.contains("mutually exclusive"));
        assert!(warnings.is_empty());
    }

    #[test]
    fn verdict_approved_variants() {
        assert_eq!(parse_verdict("APPROVED", "XOR1").0.status, VerdictStatus::Approved);
        assert_eq!(parse_verdict("approved", "XOR1").0.status, VerdictStatus::Approved);
        let correct = "XOR1: span\n- Status: correct\n- Explanation: fine";
        assert_eq!(parse_verdict(correct, "XOR1").0.status, VerdictStatus::Approved);
    }

    #[test]
    fn wrong_without_suggestion_synthesizes_one() {
        let response = "OR2: span\n- Status: wrong";
        let (verdict, warnings) = parse_verdict(response, "OR2");
        assert_eq!(verdict.status, VerdictStatus::Wrong);
        assert!(!verdict.suggestion.is_empty());
        assert_eq!(warnings.len(), 1);
    }
}
