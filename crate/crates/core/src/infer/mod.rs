//! Marginal inference: loopy belief propagation, exact enumeration, and case
//! splitting over disjunctive conclusions.

mod bp;
mod case_split;
mod exact;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub use bp::{run_bp, BpOptions, Schedule};
pub use case_split::{
    case_split, find_planning_instances, Branch, CaseSplitOptions, CaseSplitReport, PlanningInstance,
    DEFAULT_BRANCH_CAP,
};
pub use exact::{brute_force_marginals, DEFAULT_ORACLE_CAP};

use crate::factor::{BuildError, FactorGraph};
use crate::ground::GroundError;
use crate::kb::Proposition;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InferenceError {
    #[error("exact enumeration over {variables} variables exceeds the cap of {cap}")]
    CapExceeded { variables: usize, cap: usize },
    #[error("inconsistent evidence: every assignment has zero potential")]
    InconsistentEvidence,
    #[error("case split needs {required} branches, above the cap of {cap}")]
    BranchCapExceeded { required: String, cap: u64 },
    #[error("every case-split branch has inconsistent evidence")]
    NoConsistentBranch,
    #[error(transparent)]
    Ground(#[from] GroundError),
    #[error(transparent)]
    Build(#[from] BuildError),
}

/// Per-branch marginal engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Engine {
    #[default]
    Bp,
    Oracle,
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Engine::Bp => "bp",
            Engine::Oracle => "oracle",
        })
    }
}

impl FromStr for Engine {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bp" => Ok(Engine::Bp),
            "oracle" => Ok(Engine::Oracle),
            other => Err(format!("unknown engine '{other}' (expected bp or oracle)")),
        }
    }
}

/// Probability of truth per proposition, with run diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginals {
    pub propositions: Vec<Proposition>,
    pub probs: Vec<f64>,
    /// Probability of each group node being true (empty when not computed).
    pub group_probs: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub residual: f64,
    pub warnings: Vec<String>,
}

impl Marginals {
    pub fn get(&self, prop: &Proposition) -> Option<f64> {
        self.propositions.iter().position(|p| p == prop).map(|i| self.probs[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Proposition, f64)> {
        self.propositions.iter().zip(self.probs.iter().copied())
    }

    /// Largest absolute difference over shared propositions.
    pub fn max_abs_diff(&self, other: &Marginals) -> f64 {
        self.iter()
            .filter_map(|(p, x)| other.get(p).map(|y| (x - y).abs()))
            .fold(0.0, f64::max)
    }
}

/// Runs the chosen engine on a built graph.
pub fn marginals(
    fg: &FactorGraph,
    engine: Engine,
    bp: &BpOptions,
    oracle_cap: usize,
) -> Result<Marginals, InferenceError> {
    match engine {
        Engine::Bp => Ok(run_bp(fg, bp)),
        Engine::Oracle => brute_force_marginals(fg, oracle_cap),
    }
}
