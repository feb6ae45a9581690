//! Exhaustive outcome enumeration for acyclic graphs.
//!
//! Execution is deterministic between gateway decisions, so the decision
//! tree can be walked like an odometer: replay a prefix of recorded
//! decisions, let the engine discover the next decision point, then advance
//! the deepest counter and rerun. Every leaf is one (path, choice-set)
//! outcome whose probability is the product of its branch probabilities.

use crate::graph::{NodeId, ProceduralGraph};

use super::engine::{build_view, is_acyclic, run_trial, Chooser};
use super::{SimulationTrace, SimulatorError};

/// One enumerated outcome with its exact probability under uniform
/// sampling.
#[derive(Debug, Clone)]
pub struct EnumeratedPath {
    pub trace: SimulationTrace,
    pub probability: f64,
}

struct OdoStep {
    options: u64,
    current: u64,
    probability: f64,
}

#[derive(Default)]
struct OdometerChooser {
    script: Vec<OdoStep>,
    cursor: usize,
    overflow: bool,
}

impl OdometerChooser {
    fn step(&mut self, options: u64, probability: f64) -> u64 {
        if self.cursor == self.script.len() {
            self.script.push(OdoStep {
                options,
                current: 0,
                probability,
            });
        }
        debug_assert_eq!(self.script[self.cursor].options, options);
        let value = self.script[self.cursor].current;
        self.cursor += 1;
        value
    }

    fn probability(&self) -> f64 {
        self.script[..self.cursor]
            .iter()
            .map(|s| s.probability)
            .product()
    }

    /// Advances to the next decision assignment; false when exhausted.
    fn advance(&mut self) -> bool {
        self.script.truncate(self.cursor);
        loop {
            match self.script.last_mut() {
                None => return false,
                Some(last) => {
                    last.current += 1;
                    if last.current < last.options {
                        return true;
                    }
                    self.script.pop();
                }
            }
        }
    }
}

impl Chooser for OdometerChooser {
    fn choose_one(&mut self, _gateway: NodeId, n: usize) -> usize {
        self.step(n as u64, 1.0 / n as f64) as usize
    }

    fn choose_subset(&mut self, _gateway: NodeId, n: usize) -> u64 {
        if n > 20 {
            // 2^n - 1 subsets is beyond any sane enumeration budget
            self.overflow = true;
            return 1;
        }
        let options = (1u64 << n) - 1;
        self.step(options, 1.0 / options as f64) + 1
    }
}

pub(super) fn enumerate_paths(
    graph: &ProceduralGraph,
    max_paths: usize,
) -> Result<Vec<EnumeratedPath>, SimulatorError> {
    let view = build_view(graph);
    if !is_acyclic(&view) {
        return Err(SimulatorError::CycleDetected);
    }
    let mut chooser = OdometerChooser::default();
    let mut results = Vec::new();
    loop {
        chooser.cursor = 0;
        // acyclic graphs cannot loop; the cap only guards fork blowups
        let trace = run_trial(&view, graph, &mut chooser, u32::MAX);
        if chooser.overflow {
            return Err(SimulatorError::TooManyPaths { limit: max_paths });
        }
        if results.len() == max_paths {
            return Err(SimulatorError::TooManyPaths { limit: max_paths });
        }
        results.push(EnumeratedPath {
            probability: chooser.probability(),
            trace,
        });
        if !chooser.advance() {
            return Ok(results);
        }
    }
}
