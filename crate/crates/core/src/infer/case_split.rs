//! Reasoning by cases over rules with disjunctive conclusions.
//!
//! A ground instance of such a rule fires when its whole premise is certain
//! under the base evidence. Each fired instance contributes one branch per
//! disjunct, in which that disjunct is clamped true; the branches of several
//! instances are combined as a Cartesian product, and each branch is solved
//! independently on the same proposition graph.

use std::collections::{BTreeMap, BTreeSet};

use super::{marginals, BpOptions, Engine, InferenceError, Marginals, DEFAULT_ORACLE_CAP};
use crate::compile::ImplicationGraph;
use crate::factor::{build, WeightVector};
use crate::ground::{ground, Builtins, GroundOptions, PropositionGraph};
use crate::kb::{Atom, Binding, KnowledgeBase, Proposition, Rule};

pub const DEFAULT_BRANCH_CAP: u64 = 1 << 16;

#[derive(Debug, Clone)]
pub struct CaseSplitOptions {
    pub engine: Engine,
    pub bp: BpOptions,
    pub oracle_cap: usize,
    pub branch_cap: u64,
    /// A premise holds, and a target is entailed, at probability ≥ 1 - tol.
    pub tol: f64,
    pub ground: GroundOptions,
}

impl Default for CaseSplitOptions {
    fn default() -> Self {
        CaseSplitOptions {
            engine: Engine::Bp,
            bp: BpOptions::default(),
            oracle_cap: DEFAULT_ORACLE_CAP,
            branch_cap: DEFAULT_BRANCH_CAP,
            tol: 1e-6,
            ground: GroundOptions::default(),
        }
    }
}

/// One ground instance of a disjunctive rule.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct PlanningInstance {
    pub rule: String,
    pub premise: Vec<Proposition>,
    pub disjuncts: Vec<Proposition>,
}

impl PlanningInstance {
    fn holds(&self, pg: &PropositionGraph, m: &Marginals, tol: f64) -> bool {
        self.premise
            .iter()
            .all(|p| pg.index_of(p).is_some_and(|i| m.probs[i] >= 1.0 - tol))
    }
}

#[derive(Debug, Clone)]
pub struct Branch {
    /// Disjuncts clamped true in this branch, one per fired instance.
    pub assumptions: Vec<Proposition>,
    /// `None` when the branch's evidence is inconsistent (weight 0).
    pub marginals: Option<Marginals>,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct CaseSplitReport {
    /// Fired instances, in the order their disjuncts vary across branches
    /// (the last instance varies fastest).
    pub instances: Vec<PlanningInstance>,
    pub branches: Vec<Branch>,
    pub combined: Marginals,
    pub explored: u64,
    /// Per target: true in every consistent branch.
    pub entailed: BTreeMap<Proposition, bool>,
    pub graph: PropositionGraph,
}

/// Extends `binding` so every relational atom in `atoms` is one of `pool`.
fn join(kb: &KnowledgeBase, atoms: &[Atom], binding: &Binding, pool: &[Proposition]) -> Vec<Binding> {
    let mut partial = vec![binding.clone()];
    for atom in atoms.iter().filter(|a| !kb.is_builtin(&a.predicate, a.arity())) {
        let mut next = Vec::new();
        for b in &partial {
            for prop in pool {
                let mut ext = b.clone();
                if atom.match_proposition(prop, &mut ext) {
                    next.push(ext);
                }
            }
        }
        partial = next;
    }
    partial
}

fn instantiate(
    kb: &KnowledgeBase,
    builtins: &Builtins,
    rule: &Rule,
    binding: &Binding,
) -> Result<Option<PlanningInstance>, InferenceError> {
    let mut premise = Vec::new();
    for atom in &rule.premise {
        let Some(prop) = atom.substitute(binding).to_proposition() else {
            return Ok(None);
        };
        if kb.is_builtin(&prop.predicate, prop.arity()) {
            if !builtins.eval(&prop)? {
                return Ok(None);
            }
        } else if !premise.contains(&prop) {
            premise.push(prop);
        }
    }
    let mut disjuncts = Vec::new();
    for atom in &rule.conclusion {
        let Some(prop) = atom.substitute(binding).to_proposition() else {
            return Ok(None);
        };
        if !disjuncts.contains(&prop) {
            disjuncts.push(prop);
        }
    }
    Ok(Some(PlanningInstance {
        rule: rule.id.clone(),
        premise,
        disjuncts,
    }))
}

/// Ground instances of the disjunctive rules that touch `pg`: some premise
/// or conclusion atom matches a graph proposition, and the remaining premise
/// atoms match graph propositions or stored facts. Sorted, without
/// duplicates.
pub fn find_planning_instances(
    ig: &ImplicationGraph,
    kb: &KnowledgeBase,
    pg: &PropositionGraph,
    builtins: &Builtins,
) -> Result<Vec<PlanningInstance>, InferenceError> {
    let mut pool: BTreeSet<Proposition> = pg.propositions().iter().cloned().collect();
    pool.extend(kb.facts().map(|f| f.proposition.clone()));
    let pool: Vec<Proposition> = pool.into_iter().collect();

    let mut found = BTreeSet::new();
    for rule in &ig.planning_rules {
        for seed in rule.conclusion.iter().chain(&rule.premise) {
            for prop in pg.propositions() {
                let mut b = Binding::new();
                if !seed.match_proposition(prop, &mut b) {
                    continue;
                }
                for full in join(kb, &rule.premise, &b, &pool) {
                    if let Some(inst) = instantiate(kb, builtins, rule, &full)? {
                        found.insert(inst);
                    }
                }
            }
        }
    }
    Ok(found.into_iter().collect())
}

fn checked_product(counts: &[usize]) -> Option<u64> {
    counts.iter().try_fold(1u64, |acc, &c| acc.checked_mul(c as u64))
}

/// Grounds `targets`, finds the disjunctive rule instances whose premises
/// hold, and solves one branch per combination of chosen disjuncts. With no
/// fired instance the result has a single branch without assumptions.
///
/// Branch weights are uniform over each rule's disjuncts; branches whose
/// evidence turns out inconsistent get weight 0 and the rest are
/// renormalized.
pub fn case_split(
    ig: &ImplicationGraph,
    kb: &KnowledgeBase,
    targets: &[Proposition],
    evidence: &BTreeMap<Proposition, bool>,
    weights: Option<&WeightVector>,
    opts: &CaseSplitOptions,
) -> Result<CaseSplitReport, InferenceError> {
    let mut wanted: Vec<Proposition> = targets.to_vec();
    for p in evidence.keys() {
        if !wanted.contains(p) {
            wanted.push(p.clone());
        }
    }

    // grow the grounding until every candidate instance is fully inside it
    let (pg, base, instances) = loop {
        let pg = ground(ig, kb, &wanted, &opts.ground)?;
        let fg = build(&pg, weights, evidence)?;
        let base = marginals(&fg, opts.engine, &opts.bp, opts.oracle_cap)?;
        let candidates = find_planning_instances(ig, kb, &pg, &opts.ground.builtins)?;
        let missing: Vec<Proposition> = candidates
            .iter()
            .flat_map(|c| c.premise.iter().chain(&c.disjuncts))
            .filter(|p| !pg.contains(p))
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if missing.is_empty() {
            let fired = candidates
                .into_iter()
                .filter(|c| c.holds(&pg, &base, opts.tol))
                .collect::<Vec<_>>();
            break (pg, base, fired);
        }
        wanted.extend(missing);
    };

    let counts: Vec<usize> = instances.iter().map(|i| i.disjuncts.len()).collect();
    let explored = match checked_product(&counts) {
        Some(n) if n <= opts.branch_cap => n,
        other => {
            let required = match other {
                Some(n) => n.to_string(),
                None => counts.iter().map(|c| c.to_string()).collect::<Vec<_>>().join("*"),
            };
            return Err(InferenceError::BranchCapExceeded {
                required,
                cap: opts.branch_cap,
            });
        }
    };

    let mut branches = Vec::with_capacity(explored as usize);
    if instances.is_empty() {
        branches.push(Branch {
            assumptions: Vec::new(),
            marginals: Some(base),
            weight: 1.0,
        });
    } else {
        let mut choice = vec![0usize; instances.len()];
        for _ in 0..explored {
            let assumptions: Vec<Proposition> = instances
                .iter()
                .zip(&choice)
                .map(|(inst, &k)| inst.disjuncts[k].clone())
                .collect();
            let mut ev = evidence.clone();
            let mut consistent = true;
            for a in &assumptions {
                if ev.insert(a.clone(), true) == Some(false) {
                    consistent = false;
                }
            }
            let result = if consistent {
                let fg = build(&pg, weights, &ev)?;
                match marginals(&fg, opts.engine, &opts.bp, opts.oracle_cap) {
                    Ok(m) => Some(m),
                    Err(InferenceError::InconsistentEvidence) => None,
                    Err(e) => return Err(e),
                }
            } else {
                None
            };
            branches.push(Branch {
                assumptions,
                weight: if result.is_some() { 1.0 / explored as f64 } else { 0.0 },
                marginals: result,
            });
            for (c, n) in choice.iter_mut().zip(&counts).rev() {
                *c += 1;
                if *c < *n {
                    break;
                }
                *c = 0;
            }
        }
        let total: f64 = branches.iter().map(|b| b.weight).sum();
        if total <= 0.0 {
            return Err(InferenceError::NoConsistentBranch);
        }
        for b in &mut branches {
            b.weight /= total;
        }
    }

    let combined = combine(&pg, &branches);
    let entailed = targets
        .iter()
        .map(|t| {
            let i = pg.index_of(t).expect("targets are grounded");
            let all = branches
                .iter()
                .filter_map(|b| b.marginals.as_ref())
                .all(|m| m.probs[i] >= 1.0 - opts.tol);
            (t.clone(), all)
        })
        .collect();

    Ok(CaseSplitReport {
        instances,
        branches,
        combined,
        explored,
        entailed,
        graph: pg,
    })
}

fn combine(pg: &PropositionGraph, branches: &[Branch]) -> Marginals {
    let n_p = pg.propositions().len();
    let n_g = pg.groups().len();
    let mut out = Marginals {
        propositions: pg.propositions().to_vec(),
        probs: vec![0.0; n_p],
        group_probs: vec![0.0; n_g],
        iterations: 0,
        converged: true,
        residual: 0.0,
        warnings: Vec::new(),
    };
    for b in branches {
        let Some(m) = &b.marginals else { continue };
        for (acc, p) in out.probs.iter_mut().zip(&m.probs) {
            *acc += b.weight * p;
        }
        if m.group_probs.len() == n_g {
            for (acc, p) in out.group_probs.iter_mut().zip(&m.group_probs) {
                *acc += b.weight * p;
            }
        }
        out.iterations = out.iterations.max(m.iterations);
        out.converged &= m.converged;
        out.residual = out.residual.max(m.residual);
        for w in &m.warnings {
            if !out.warnings.contains(w) {
                out.warnings.push(w.clone());
            }
        }
    }
    for p in out.probs.iter_mut().chain(out.group_probs.iter_mut()) {
        *p = p.clamp(0.0, 1.0);
    }
    out.warnings.extend(pg.warnings.iter().cloned());
    out
}
