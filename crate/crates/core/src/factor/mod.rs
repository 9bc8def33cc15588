//! The bipartite factor graph over proposition nodes (`p`) and group nodes
//! (`g`).
//!
//! Every group node is tied to its member propositions by a conjunction
//! factor, every derived proposition to its licensing groups by a single
//! disjunction factor (deterministic, or log-linear when learned weights are
//! supplied), and leaves carry a unary prior. Evidence replaces the prior
//! of a leaf, or is added as an extra unary factor on derived propositions.

mod dot;
mod features;

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

pub use features::{
    active_feature, bias_feature, logistic_or_weights, pattern_feature, sigmoid, FeatureFunction, WeightVector,
};

use crate::ground::PropositionGraph;
use crate::kb::{Proposition, WeightMode};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BuildError {
    #[error("evidence on {0}, which is not in the grounded graph")]
    EvidenceNotInGraph(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeKind {
    P,
    G,
}

/// Node handle; indices are dense per kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId {
    pub kind: NodeKind,
    pub index: usize,
}

impl NodeId {
    pub fn p(index: usize) -> Self {
        NodeId {
            kind: NodeKind::P,
            index,
        }
    }

    pub fn g(index: usize) -> Self {
        NodeId {
            kind: NodeKind::G,
            index,
        }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            NodeKind::P => write!(f, "p{}", self.index),
            NodeKind::G => write!(f, "g{}", self.index),
        }
    }
}

/// Learned disjunction with its weights resolved per input.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedOr {
    pub features: FeatureFunction,
    pub pattern_weight: f64,
    pub bias: Vec<f64>,
    pub active: Vec<f64>,
}

impl LearnedOr {
    pub fn new(features: FeatureFunction, w: &WeightVector) -> Self {
        LearnedOr {
            pattern_weight: w.get(&pattern_feature(&features.pattern)),
            bias: features.links.iter().map(|l| w.get(&bias_feature(l))).collect(),
            active: features.links.iter().map(|l| w.get(&active_feature(l))).collect(),
            features,
        }
    }

    /// Log-odds of `p = 1` with all inputs false.
    pub fn base_logit(&self) -> f64 {
        self.pattern_weight + self.bias.iter().sum::<f64>()
    }

    pub fn logit(&self, inputs: &[bool]) -> f64 {
        self.base_logit()
            + self
                .active
                .iter()
                .zip(inputs)
                .filter(|(_, &g)| g)
                .map(|(a, _)| a)
                .sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FactorKind {
    And,
    OrDet,
    OrLearned(LearnedOr),
    Prior(f64),
    Evidence(bool),
}

impl FactorKind {
    pub fn name(&self) -> &'static str {
        match self {
            FactorKind::And => "and",
            FactorKind::OrDet => "or",
            FactorKind::OrLearned(_) => "or~",
            FactorKind::Prior(_) => "prior",
            FactorKind::Evidence(_) => "evidence",
        }
    }

    pub fn is_unary(&self) -> bool {
        matches!(self, FactorKind::Prior(_) | FactorKind::Evidence(_))
    }
}

/// `And` factors have a g output and p inputs, `Or*` factors a p output and
/// g inputs; unary factors have no inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    pub kind: FactorKind,
    pub output: NodeId,
    pub inputs: Vec<NodeId>,
}

impl Factor {
    /// Potential under exact (unsmoothed) semantics.
    pub fn potential(&self, out: bool, inputs: &[bool]) -> f64 {
        match &self.kind {
            FactorKind::And => psi_and(out, inputs),
            FactorKind::OrDet => psi_or_det(out, inputs),
            FactorKind::OrLearned(l) => {
                let z = l.logit(inputs);
                sigmoid(if out { z } else { -z })
            }
            FactorKind::Prior(p) => {
                if out {
                    *p
                } else {
                    1.0 - p
                }
            }
            FactorKind::Evidence(v) => f64::from(u8::from(out == *v)),
        }
    }

    /// Output first, then inputs.
    pub fn scope(&self) -> impl Iterator<Item = NodeId> + '_ {
        std::iter::once(self.output).chain(self.inputs.iter().copied())
    }
}

/// Deterministic conjunction: 1 iff `g == AND(inputs)`.
pub fn psi_and(g: bool, inputs: &[bool]) -> f64 {
    f64::from(u8::from(g == inputs.iter().all(|&x| x)))
}

/// Deterministic disjunction: 1 iff `p == OR(inputs)`.
pub fn psi_or_det(p: bool, inputs: &[bool]) -> f64 {
    f64::from(u8::from(p == inputs.iter().any(|&x| x)))
}

/// Log-linear disjunction `exp(sum_i w . phi(p, g_i))`, before normalization
/// over `p`. The factor in the graph is the normalized conditional
/// `P(p | g) = sigmoid(+-logit)`.
pub fn psi_or_learned(p: bool, inputs: &[bool], features: &FeatureFunction, w: &WeightVector) -> f64 {
    features.score(p, inputs, w).exp()
}

#[derive(Debug, Clone)]
pub struct FactorGraph {
    propositions: Vec<Proposition>,
    num_groups: usize,
    factors: Vec<Factor>,
    /// Per variable (p nodes first, then g nodes): (factor, slot) pairs.
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl FactorGraph {
    pub fn propositions(&self) -> &[Proposition] {
        &self.propositions
    }

    pub fn num_p(&self) -> usize {
        self.propositions.len()
    }

    pub fn num_g(&self) -> usize {
        self.num_groups
    }

    pub fn num_variables(&self) -> usize {
        self.propositions.len() + self.num_groups
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    /// Dense variable index: p nodes first, then g nodes.
    pub fn var(&self, node: NodeId) -> usize {
        match node.kind {
            NodeKind::P => node.index,
            NodeKind::G => self.propositions.len() + node.index,
        }
    }

    pub fn node(&self, var: usize) -> NodeId {
        if var < self.propositions.len() {
            NodeId::p(var)
        } else {
            NodeId::g(var - self.propositions.len())
        }
    }

    pub(crate) fn adjacency(&self, var: usize) -> &[(usize, usize)] {
        &self.adjacency[var]
    }

    pub fn count(&self, pred: impl Fn(&FactorKind) -> bool) -> usize {
        self.factors.iter().filter(|f| pred(&f.kind)).count()
    }

    /// True if no factor joins two nodes of the same kind.
    pub fn is_bipartite(&self) -> bool {
        self.factors.iter().all(|f| match f.kind {
            FactorKind::And => f.output.kind == NodeKind::G && f.inputs.iter().all(|n| n.kind == NodeKind::P),
            FactorKind::OrDet | FactorKind::OrLearned(_) => {
                f.output.kind == NodeKind::P && f.inputs.iter().all(|n| n.kind == NodeKind::G)
            }
            FactorKind::Prior(_) | FactorKind::Evidence(_) => f.output.kind == NodeKind::P && f.inputs.is_empty(),
        })
    }

    /// Product of all factor potentials for a full assignment (indexed by
    /// dense variable).
    pub fn joint_potential(&self, assignment: &[bool]) -> f64 {
        let mut inputs = Vec::new();
        let mut product = 1.0;
        for f in &self.factors {
            inputs.clear();
            inputs.extend(f.inputs.iter().map(|n| assignment[self.var(*n)]));
            product *= f.potential(assignment[self.var(f.output)], &inputs);
            if product == 0.0 {
                break;
            }
        }
        product
    }

    pub fn to_dot(&self) -> String {
        dot::render(self)
    }

    /// Assembles a graph from parts; used by [`build`] and by tests that need
    /// hand-made topologies.
    pub fn from_factors(propositions: Vec<Proposition>, num_groups: usize, factors: Vec<Factor>) -> Self {
        let mut adjacency = vec![Vec::new(); propositions.len() + num_groups];
        let mut g = FactorGraph {
            propositions,
            num_groups,
            factors: Vec::new(),
            adjacency: Vec::new(),
        };
        for (fi, f) in factors.iter().enumerate() {
            for (slot, node) in f.scope().enumerate() {
                adjacency[g.var(node)].push((fi, slot));
            }
        }
        g.factors = factors;
        g.adjacency = adjacency;
        g
    }
}

/// Materializes the factor graph of a proposition graph.
///
/// A proposition's disjunction is learned when `weights` is given and every
/// licensing group comes from a `learned` rule; otherwise it is
/// deterministic. Factors are ordered unary first, then from the last
/// proposition to the first, each proposition's conjunctions before its
/// disjunction, so a forward sweep runs from the leaves upward.
pub fn build(
    pg: &PropositionGraph,
    weights: Option<&WeightVector>,
    evidence: &BTreeMap<Proposition, bool>,
) -> Result<FactorGraph, BuildError> {
    let mut clamp: Vec<Option<bool>> = vec![None; pg.propositions().len()];
    for (prop, &value) in evidence {
        let i = pg
            .index_of(prop)
            .ok_or_else(|| BuildError::EvidenceNotInGraph(prop.to_string()))?;
        clamp[i] = Some(value);
    }

    let mut factors = Vec::new();
    for (i, c) in clamp.iter().enumerate() {
        match (c, pg.prior(i)) {
            (Some(v), _) => factors.push(Factor {
                kind: FactorKind::Evidence(*v),
                output: NodeId::p(i),
                inputs: Vec::new(),
            }),
            (None, Some(prior)) => factors.push(Factor {
                kind: FactorKind::Prior(prior),
                output: NodeId::p(i),
                inputs: Vec::new(),
            }),
            (None, None) => {}
        }
    }

    for i in (0..pg.propositions().len()).rev() {
        let links = pg.licensing(i);
        if links.is_empty() {
            continue;
        }
        for &g in links.iter().rev() {
            factors.push(Factor {
                kind: FactorKind::And,
                output: NodeId::g(g),
                inputs: pg.member_indices(g).into_iter().map(NodeId::p).collect(),
            });
        }
        let learned = links.iter().all(|&g| pg.groups()[g].weight_mode == WeightMode::Learned);
        let kind = match weights {
            Some(w) if learned => {
                let ff = FeatureFunction::new(
                    pg.propositions()[i].signature(),
                    links.iter().map(|&g| pg.groups()[g].source_rule.clone()).collect(),
                );
                FactorKind::OrLearned(LearnedOr::new(ff, w))
            }
            _ => FactorKind::OrDet,
        };
        factors.push(Factor {
            kind,
            output: NodeId::p(i),
            inputs: links.iter().map(|&g| NodeId::g(g)).collect(),
        });
    }

    Ok(FactorGraph::from_factors(
        pg.propositions().to_vec(),
        pg.groups().len(),
        factors,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compile::compile;
    use crate::ground::{ground, GroundOptions};
    use crate::kb::{parse_kb, parse_proposition};

    fn p(s: &str) -> Proposition {
        parse_proposition(s).unwrap()
    }

    fn jack_jill() -> PropositionGraph {
        let kb = parse_kb(
            "pred likes/2. pred date/2. likes(jack,jill). 0.9 :: likes(jill,jack).\n\
             date(X,Y) <- likes(X,Y), likes(Y,X).",
        )
        .unwrap();
        ground(&compile(&kb), &kb, &[p("date(jack,jill)")], &GroundOptions::default()).unwrap()
    }

    #[test]
    fn conjunction_truth_table() {
        assert_eq!(psi_and(true, &[true, true, true]), 1.0);
        assert_eq!(psi_and(true, &[true, false, true]), 0.0);
        assert_eq!(psi_and(false, &[true, false, true]), 1.0);
    }

    #[test]
    fn disjunction_truth_table() {
        assert_eq!(psi_or_det(true, &[false, true]), 1.0);
        assert_eq!(psi_or_det(true, &[false, false]), 0.0);
        assert_eq!(psi_or_det(false, &[false, false]), 1.0);
    }

    #[test]
    fn learned_potential_normalizes_to_logistic() {
        let links = vec!["a".to_string(), "b".to_string()];
        let ff = FeatureFunction::new("y/0", links.clone());
        let w = logistic_or_weights("y/0", &links, -0.5, 1.0);
        for inputs in [[false, false], [true, false], [true, true]] {
            let one = psi_or_learned(true, &inputs, &ff, &w);
            let zero = psi_or_learned(false, &inputs, &ff, &w);
            assert!(one > 0.0 && zero > 0.0);
            let expected = ff.prob_true(&inputs, &w);
            assert!((one / (one + zero) - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn jack_jill_counts() {
        let fg = build(&jack_jill(), None, &BTreeMap::new()).unwrap();
        assert_eq!(fg.num_p(), 3);
        assert_eq!(fg.num_g(), 1);
        assert_eq!(fg.count(|k| *k == FactorKind::And), 1);
        assert_eq!(fg.count(|k| *k == FactorKind::OrDet), 1);
        assert_eq!(fg.count(|k| matches!(k, FactorKind::Prior(_))), 2);
        assert!(fg.is_bipartite());
    }

    #[test]
    fn single_fact_graph() {
        let kb = parse_kb("pred c/1. 0.7 :: c(a).").unwrap();
        let pg = ground(&compile(&kb), &kb, &[p("c(a)")], &GroundOptions::default()).unwrap();
        let fg = build(&pg, None, &BTreeMap::new()).unwrap();
        assert_eq!(fg.num_p(), 1);
        assert_eq!(fg.factors().len(), 1);
        assert_eq!(fg.factors()[0].kind, FactorKind::Prior(0.7));
    }

    #[test]
    fn evidence_replaces_prior() {
        let mut ev = BTreeMap::new();
        ev.insert(p("likes(jill,jack)"), false);
        let fg = build(&jack_jill(), None, &ev).unwrap();
        assert_eq!(fg.count(|k| matches!(k, FactorKind::Prior(_))), 1);
        assert_eq!(fg.count(|k| *k == FactorKind::Evidence(false)), 1);

        let mut bad = BTreeMap::new();
        bad.insert(p("likes(x,y)"), true);
        assert!(matches!(
            build(&jack_jill(), None, &bad),
            Err(BuildError::EvidenceNotInGraph(_))
        ));
    }

    #[test]
    fn learned_only_when_all_sources_learned() {
        let src = "pred a/1. pred b/1. pred c/1. a(x). b(x).\n\
                   learned c(X) <- a(X). learned c(X) <- b(X).";
        let kb = parse_kb(src).unwrap();
        let pg = ground(&compile(&kb), &kb, &[p("c(x)")], &GroundOptions::default()).unwrap();
        let w = WeightVector::new();
        let fg = build(&pg, Some(&w), &BTreeMap::new()).unwrap();
        assert_eq!(fg.count(|k| matches!(k, FactorKind::OrLearned(_))), 1);
        let fg = build(&pg, None, &BTreeMap::new()).unwrap();
        assert_eq!(fg.count(|k| *k == FactorKind::OrDet), 1);

        let kb = parse_kb(&src.replace("learned c(X) <- b", "c(X) <- b")).unwrap();
        let pg = ground(&compile(&kb), &kb, &[p("c(x)")], &GroundOptions::default()).unwrap();
        let fg = build(&pg, Some(&w), &BTreeMap::new()).unwrap();
        assert_eq!(fg.count(|k| *k == FactorKind::OrDet), 1);
    }

    #[test]
    fn clamped_assignments_have_zero_potential() {
        let mut ev = BTreeMap::new();
        ev.insert(p("date(jack,jill)"), true);
        let fg = build(&jack_jill(), None, &ev).unwrap();
        let date = fg.var(NodeId::p(0));
        let n = fg.num_variables();
        for bits in 0..(1u32 << n) {
            let a: Vec<bool> = (0..n).map(|i| bits >> i & 1 == 1).collect();
            if !a[date] {
                assert_eq!(fg.joint_potential(&a), 0.0);
            }
        }
    }
}
