//! Prompt templates and rendering.
//!
//! The four pipeline prompts (generation, structure check, logic check,
//! refine) are stored verbatim as assets and must stay byte-identical:
//! rendering only substitutes the declared `{placeholder}` tokens. The
//! rules and few-shot example blocks are the exact sub-slices of the
//! generation prompt reused by the other prompts.

pub const FEW_SHOT_GENERATION: &str = include_str!("../../templates/few_shot_generation.txt");
pub const STRUCTURE_CHECK: &str = include_str!("../../templates/structure_check.txt");
pub const LOGIC_CHECK: &str = include_str!("../../templates/logic_check.txt");
pub const GRAPH_REFINE: &str = include_str!("../../templates/graph_refine.txt");
pub const GRAPH_RULES: &str = include_str!("../../templates/graph_rules.txt");
pub const FEW_SHOT_EXAMPLES: &str = include_str!("../../templates/few_shot_examples.txt");
pub const SPAN_RETRIEVAL: &str = include_str!("../../templates/span_retrieval.txt");
pub const VERBALIZE: &str = include_str!("../../templates/verbalize.txt");

/// Replaces each `{name}` placeholder once. Anything not listed is left
/// untouched.
pub fn render(template: &str, substitutions: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (name, value) in substitutions {
        out = out.replacen(&format!("{{{name}}}"), value, 1);
    }
    out
}

/// The in-context examples handed to the builder and refiner. Defaults to
/// the three standard worked examples embedded in the generation prompt.
#[derive(Debug, Clone)]
pub struct FewShotSet {
    block: String,
    count: usize,
}

impl Default for FewShotSet {
    fn default() -> Self {
        FewShotSet::standard()
    }
}

impl FewShotSet {
    pub fn standard() -> Self {
        FewShotSet {
            block: FEW_SHOT_EXAMPLES.trim_end().to_string(),
            count: 3,
        }
    }

    /// The first `count` standard examples (capped at 3). `standard_n(3)`
    /// is byte-identical to [`FewShotSet::standard`].
    pub fn standard_n(count: usize) -> Self {
        let standard = Self::standard();
        if count >= standard.count {
            return standard;
        }
        let marker = "\n## \"Procedural Document\":";
        let mut cut = standard.block.len();
        let mut seen = 0;
        let mut from = 0;
        while let Some(at) = standard.block[from..].find(marker) {
            if seen == count {
                cut = from + at;
                break;
            }
            seen += 1;
            from += at + marker.len();
        }
        FewShotSet {
            block: standard.block[..cut].trim_end().to_string(),
            count,
        }
    }

    /// Builds a custom example block from (document, graph) pairs in the
    /// same `## "Procedural Document":` / `## "Procedural Graph":` layout.
    pub fn from_pairs(pairs: &[(String, String)]) -> Self {
        let block = pairs
            .iter()
            .map(|(doc, graph)| {
                format!(
                    "\n## \"Procedural Document\":\n{}\n\n## \"Procedural Graph\":\n\n{}",
                    doc.trim(),
                    graph.trim()
                )
            })
            .collect::<Vec<_>>()
            .join("\n");
        FewShotSet {
            block,
            count: pairs.len(),
        }
    }

    pub fn block(&self) -> &str {
        &self.block
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}
