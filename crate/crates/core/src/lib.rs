//! Probabilistic Horn-clause reasoning.
//!
//! A knowledge base of weighted facts and rules is compiled into an
//! implication graph, grounded lazily per query into a bipartite graph of
//! propositions and conjunction groups, and answered by loopy belief
//! propagation (or exact enumeration on small graphs). Rules with disjunctive
//! conclusions are handled by case splitting.

pub mod bench;
pub mod cli;
pub mod compile;
pub mod factor;
pub mod ground;
pub mod infer;
pub mod kb;
pub mod learn;
pub mod query;
pub mod random;
mod syntax;

pub use syntax::Pos;
