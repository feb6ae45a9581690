//! Python bindings: parse/serialize flow text, simulate and diagnose
//! graphs, score predictions against gold graphs, compute BLEU, and run the
//! offline extraction pipeline with the deterministic mock backend.

use std::collections::BTreeMap;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use text2flow::agents::MockBackend;
use text2flow::dsl;
use text2flow::evaluator;
use text2flow::graph::ProceduralGraph;
use text2flow::orchestrator::{Orchestrator, RunConfig};
use text2flow::prioritizer::PrioritizerConfig;
use text2flow::simulator::{self, SimulationConfig};

/// A parsed procedural graph.
#[pyclass]
struct FlowGraph {
    graph: ProceduralGraph,
}

#[pymethods]
impl FlowGraph {
    /// Parse flow text. Returns the graph and a list of parse diagnostics
    /// (the parser is total: diagnostics never abort).
    #[staticmethod]
    fn parse(text: &str) -> (FlowGraph, Vec<String>) {
        let (graph, diagnostics) = dsl::parse(text);
        (
            FlowGraph { graph },
            diagnostics.iter().map(|d| d.to_string()).collect(),
        )
    }

    fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    fn edge_count(&self) -> usize {
        self.graph.edge_count()
    }

    fn actors(&self) -> Vec<String> {
        self.graph.lanes().iter().map(|l| l.actor.clone()).collect()
    }

    /// Canonical JSON form.
    fn to_json(&self) -> String {
        self.graph.to_json()
    }

    /// Flow text form; `parse(to_flow_text())` is isomorphic to this graph.
    fn to_flow_text(&self) -> String {
        dsl::serialize(&self.graph)
    }

    /// Structure defects visible without sampling.
    fn static_issues(&self) -> Vec<String> {
        simulator::detect_static_issues(&self.graph)
            .into_iter()
            .map(|issue| issue.detail)
            .collect()
    }

    /// Randomized execution. Returns a dict with `trials`, `failing`,
    /// `issue_counts` (signature -> count) and `branch_frequencies`
    /// (gateway -> {targets -> frequency}).
    #[pyo3(signature = (trials=10_000, seed=0, max_steps=512))]
    fn simulate<'py>(
        &self,
        py: Python<'py>,
        trials: u64,
        seed: u64,
        max_steps: u32,
    ) -> PyResult<Bound<'py, PyDict>> {
        if trials == 0 {
            return Err(PyValueError::new_err("trials must be at least 1"));
        }
        let config = SimulationConfig {
            trials,
            seed,
            max_steps,
            ..SimulationConfig::default()
        };
        let traces = simulator::simulate(&self.graph, &config);
        let failing = traces.iter().filter(|t| t.issue.is_some()).count();

        let issue_counts = PyDict::new(py);
        for (sig, count) in simulator::aggregate_issue_counts(&traces) {
            issue_counts.set_item(sig.to_string(), count)?;
        }

        let mut fires: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
        for trace in &traces {
            for choice in &trace.choices {
                let mut names: Vec<String> = choice
                    .chosen
                    .iter()
                    .map(|n| self.graph.node_label(*n))
                    .collect();
                names.sort();
                *fires
                    .entry(self.graph.node_label(choice.gateway))
                    .or_default()
                    .entry(names.join(" + "))
                    .or_insert(0) += 1;
            }
        }
        let branch_frequencies = PyDict::new(py);
        for (gateway, sets) in fires {
            let total: u64 = sets.values().sum();
            let per_set = PyDict::new(py);
            for (set, count) in sets {
                per_set.set_item(set, count as f64 / total as f64)?;
            }
            branch_frequencies.set_item(gateway, per_set)?;
        }

        let out = PyDict::new(py);
        out.set_item("trials", traces.len())?;
        out.set_item("failing", failing)?;
        out.set_item("issue_counts", issue_counts)?;
        out.set_item("branch_frequencies", branch_frequencies)?;
        Ok(out)
    }

    /// Every distinct execution outcome of an acyclic graph with its exact
    /// probability, as `(probability, [node labels])` pairs.
    #[pyo3(signature = (max_paths=1000))]
    fn enumerate_paths(&self, max_paths: usize) -> PyResult<Vec<(f64, Vec<String>)>> {
        let paths = simulator::enumerate_paths(&self.graph, max_paths)
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(paths
            .into_iter()
            .map(|p| {
                (
                    p.probability,
                    p.trace
                        .path
                        .iter()
                        .map(|n| self.graph.node_label(*n))
                        .collect(),
                )
            })
            .collect())
    }
}

/// Smoothed sentence-level BLEU in [0, 1].
#[pyfunction]
fn bleu(candidate: &str, reference: &str) -> f64 {
    text2flow::bleu::bleu(candidate, reference)
}

/// Score a predicted flow text against a gold flow text. Returns
/// `{category: {precision, recall, f1, matched, predicted, gold}}`.
#[pyfunction]
fn evaluate_flows<'py>(
    py: Python<'py>,
    predicted: &str,
    gold: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let (pred_graph, _) = dsl::parse(predicted);
    let (gold_graph, _) = dsl::parse(gold);
    let report = evaluator::evaluate(&pred_graph, &gold_graph);
    let out = PyDict::new(py);
    for (category, score) in &report.scores {
        let row = PyDict::new(py);
        row.set_item("precision", score.precision)?;
        row.set_item("recall", score.recall)?;
        row.set_item("f1", score.f1)?;
        row.set_item("matched", score.matched)?;
        row.set_item("predicted", score.predicted)?;
        row.set_item("gold", score.gold)?;
        row.set_item("no_instances", score.no_instances)?;
        out.set_item(category.name(), row)?;
    }
    Ok(out)
}

/// Run the full multi-round pipeline offline with the deterministic mock
/// backend. Returns `(flow_text, rounds_used)`.
#[pyfunction]
#[pyo3(signature = (document, rounds=2, trials=2000, seed=0, budget=400))]
fn extract_with_mock(
    document: &str,
    rounds: usize,
    trials: u64,
    seed: u64,
    budget: usize,
) -> PyResult<(String, usize)> {
    let config = RunConfig {
        max_rounds: rounds.max(1),
        simulation: SimulationConfig {
            trials: trials.max(1),
            seed,
            ..SimulationConfig::default()
        },
        prioritizer: PrioritizerConfig {
            token_budget: budget,
            ..PrioritizerConfig::default()
        },
        ..RunConfig::default()
    };
    let orchestrator = Orchestrator::new(config);
    let backend = MockBackend::new();
    let outcome = orchestrator
        .run(document, &backend)
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok((outcome.final_dsl, outcome.records.len()))
}

#[pymodule]
fn text2flow_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<FlowGraph>()?;
    m.add_function(wrap_pyfunction!(bleu, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_flows, m)?)?;
    m.add_function(wrap_pyfunction!(extract_with_mock, m)?)?;
    Ok(())
}
