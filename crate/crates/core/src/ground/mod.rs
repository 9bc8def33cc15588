//! Lazy, query-driven grounding of the implication graph into a proposition
//! graph.
//!
//! Starting from the target propositions the grounder chains backwards
//! through the compiled rules. Every satisfiable instance of a premise clause
//! becomes a [`GroundGroup`] (a conjunction node); every proposition it
//! touches becomes a node. Only propositions reachable backwards from the
//! targets are ever instantiated.
//!
//! Stored facts are answered from the fact store and are not expanded
//! further. Query clauses bind their existential variables by fact lookup
//! only. Builtins are evaluated on the spot and never become nodes.

mod builtins;

use std::collections::{BTreeSet, HashMap, HashSet};

use thiserror::Error;

pub use builtins::{eval_builtin, Builtins, Evaluator};

use crate::compile::ImplicationGraph;
use crate::kb::{Atom, Binding, KnowledgeBase, Proposition, Rule, WeightMode};

pub const DEFAULT_DEPTH_LIMIT: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GroundError {
    #[error("unregistered builtin predicate {0}")]
    UnregisteredBuiltin(String),
    #[error("builtin {atom} in rule {rule} has unbound variables at evaluation time")]
    UnboundBuiltin { rule: String, atom: String },
    #[error("undeclared predicate {0}")]
    UndeclaredPredicate(String),
    #[error("{0} is a builtin and cannot be a graph node")]
    BuiltinNode(String),
    #[error("depth limit must be at least 1")]
    InvalidDepthLimit,
}

#[derive(Debug, Clone)]
pub struct GroundOptions {
    /// Maximum number of rule expansions along one derivation path.
    pub depth_limit: usize,
    /// Prior for leaves with neither a fact nor a licensing rule.
    pub default_prior: f64,
    pub builtins: Builtins,
}

impl Default for GroundOptions {
    fn default() -> Self {
        GroundOptions {
            depth_limit: DEFAULT_DEPTH_LIMIT,
            default_prior: 0.0,
            builtins: Builtins::default(),
        }
    }
}

/// A ground rule premise: the conjunction of `members` licenses `conclusion`.
#[derive(Debug, Clone)]
pub struct GroundGroup {
    pub members: Vec<Proposition>,
    pub source_rule: String,
    pub conclusion: Proposition,
    pub weight_mode: WeightMode,
}

impl GroundGroup {
    fn key(&self) -> (&Proposition, BTreeSet<&Proposition>, &str) {
        (&self.conclusion, self.members.iter().collect(), &self.source_rule)
    }
}

impl PartialEq for GroundGroup {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for GroundGroup {}

/// Bipartite graph of propositions (p nodes) and proposition groups
/// (g nodes). Propositions without licensing groups are leaves and carry a
/// prior.
#[derive(Debug, Clone, Default)]
pub struct PropositionGraph {
    propositions: Vec<Proposition>,
    index: HashMap<Proposition, usize>,
    groups: Vec<GroundGroup>,
    or_links: Vec<Vec<usize>>,
    priors: Vec<f64>,
    pub warnings: Vec<String>,
}

impl PropositionGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a proposition (prior 0) if absent; returns its index.
    pub fn add_proposition(&mut self, prop: Proposition) -> usize {
        if let Some(&i) = self.index.get(&prop) {
            return i;
        }
        let i = self.propositions.len();
        self.index.insert(prop.clone(), i);
        self.propositions.push(prop);
        self.or_links.push(Vec::new());
        self.priors.push(0.0);
        i
    }

    pub fn add_leaf(&mut self, prop: Proposition, prior: f64) -> usize {
        let i = self.add_proposition(prop);
        self.priors[i] = prior;
        i
    }

    pub fn set_prior(&mut self, index: usize, prior: f64) {
        self.priors[index] = prior;
    }

    /// Adds a group, creating any missing member or conclusion nodes.
    /// Duplicate members are dropped; a group equal to an existing one
    /// licensing the same conclusion is not added twice.
    pub fn add_group(&mut self, mut group: GroundGroup) -> usize {
        let mut seen = HashSet::new();
        group.members.retain(|m| seen.insert(m.clone()));
        for m in &group.members {
            self.add_proposition(m.clone());
        }
        let c = self.add_proposition(group.conclusion.clone());
        if let Some(&existing) = self.or_links[c].iter().find(|&&g| self.groups[g] == group) {
            return existing;
        }
        let g = self.groups.len();
        self.groups.push(group);
        self.or_links[c].push(g);
        g
    }

    pub fn propositions(&self) -> &[Proposition] {
        &self.propositions
    }

    pub fn index_of(&self, prop: &Proposition) -> Option<usize> {
        self.index.get(prop).copied()
    }

    pub fn contains(&self, prop: &Proposition) -> bool {
        self.index.contains_key(prop)
    }

    pub fn groups(&self) -> &[GroundGroup] {
        &self.groups
    }

    /// Indices of the groups licensing proposition `index`.
    pub fn licensing(&self, index: usize) -> &[usize] {
        &self.or_links[index]
    }

    pub fn is_leaf(&self, index: usize) -> bool {
        self.or_links[index].is_empty()
    }

    /// Prior of a leaf; `None` for derived propositions.
    pub fn prior(&self, index: usize) -> Option<f64> {
        self.is_leaf(index).then(|| self.priors[index])
    }

    pub fn member_indices(&self, group: usize) -> Vec<usize> {
        self.groups[group].members.iter().map(|m| self.index[m]).collect()
    }

    /// Checks the structural invariants; returns a description of the first
    /// violation.
    pub fn check(&self) -> Result<(), String> {
        let mut licensed = vec![false; self.groups.len()];
        for (p, links) in self.or_links.iter().enumerate() {
            for &g in links {
                if g >= self.groups.len() {
                    return Err(format!("or link to missing group {g}"));
                }
                if self.groups[g].conclusion != self.propositions[p] {
                    return Err(format!("group {g} licenses the wrong proposition"));
                }
                licensed[g] = true;
            }
        }
        if let Some(g) = licensed.iter().position(|l| !l) {
            return Err(format!("group {g} licenses nothing"));
        }
        for (g, group) in self.groups.iter().enumerate() {
            if group.members.is_empty() {
                return Err(format!("group {g} is empty"));
            }
            if let Some(m) = group.members.iter().find(|m| !self.index.contains_key(*m)) {
                return Err(format!("member {m} of group {g} is not a node"));
            }
        }
        for (i, &p) in self.priors.iter().enumerate() {
            if self.is_leaf(i) && !(0.0..=1.0).contains(&p) {
                return Err(format!("prior {p} of {} outside [0, 1]", self.propositions[i]));
            }
        }
        Ok(())
    }
}

struct Frame {
    prop: usize,
    candidates: Vec<GroundGroup>,
    group: usize,
    member: usize,
    accepted: Vec<usize>,
}

struct Grounder<'a> {
    graph: &'a ImplicationGraph,
    kb: &'a KnowledgeBase,
    options: &'a GroundOptions,
}

impl Grounder<'_> {
    fn candidates(&self, prop: &Proposition) -> Result<Vec<GroundGroup>, GroundError> {
        if self.kb.fact(prop).is_some() {
            return Ok(Vec::new());
        }
        let mut found: Vec<(usize, GroundGroup)> = Vec::new();
        for link in self.graph.candidates(&prop.predicate, prop.arity()) {
            let mut binding = Binding::new();
            if !link.conclusion_pattern.match_proposition(prop, &mut binding) {
                continue;
            }
            for clause in &link.clauses {
                let bindings = if clause.existentials.is_empty() {
                    check_builtins(self.kb, &self.options.builtins, &clause.atoms, &binding, &clause.source)?
                        .then(|| binding.clone())
                        .into_iter()
                        .collect()
                } else {
                    lookup(self.kb, &self.options.builtins, &clause.atoms, &binding, &clause.source)?
                };
                for b in bindings {
                    let members = clause
                        .atoms
                        .iter()
                        .filter(|a| !self.kb.is_builtin(&a.predicate, a.arity()))
                        .map(|a| a.substitute(&b).to_proposition().expect("safe clause is ground"))
                        .collect();
                    found.push((
                        clause.source_index,
                        GroundGroup {
                            members,
                            source_rule: clause.source.clone(),
                            conclusion: prop.clone(),
                            weight_mode: clause.weight_mode,
                        },
                    ));
                }
            }
        }
        found.sort_by_key(|(i, _)| *i);
        let mut out: Vec<GroundGroup> = Vec::with_capacity(found.len());
        for (_, g) in found {
            if !out.contains(&g) {
                out.push(g);
            }
        }
        Ok(out)
    }

    fn leaf_prior(&self, prop: &Proposition) -> f64 {
        self.kb
            .fact(prop)
            .map(|f| f.prior)
            .unwrap_or(self.options.default_prior)
    }

    fn run(&self, targets: &[Proposition]) -> Result<PropositionGraph, GroundError> {
        let mut pg = PropositionGraph::new();
        let mut on_path: HashSet<usize> = HashSet::new();
        let mut stack: Vec<Frame> = Vec::new();

        for target in targets {
            if pg.contains(target) {
                continue;
            }
            self.discover(&mut pg, &mut stack, &mut on_path, target.clone())?;
            while let Some(top) = stack.last_mut() {
                if top.group == top.candidates.len() {
                    let done = stack.pop().expect("non-empty stack");
                    on_path.remove(&done.prop);
                    if done.accepted.is_empty() {
                        pg.priors[done.prop] = self.options.default_prior;
                    }
                    pg.or_links[done.prop] = done.accepted;
                    continue;
                }
                let group = &top.candidates[top.group];
                if top.member == 0
                    && group
                        .members
                        .iter()
                        .any(|m| pg.index_of(m).is_some_and(|i| on_path.contains(&i)))
                {
                    // closes a cycle on the current derivation path
                    top.group += 1;
                    continue;
                }
                if top.member < group.members.len() {
                    let m = group.members[top.member].clone();
                    top.member += 1;
                    if !pg.contains(&m) {
                        self.discover(&mut pg, &mut stack, &mut on_path, m)?;
                    }
                    continue;
                }
                let group = group.clone();
                top.group += 1;
                top.member = 0;
                let mut seen = HashSet::new();
                let mut group = group;
                group.members.retain(|m| seen.insert(m.clone()));
                let g = pg.groups.len();
                pg.groups.push(group);
                top.accepted.push(g);
            }
        }
        Ok(pg)
    }

    fn discover(
        &self,
        pg: &mut PropositionGraph,
        stack: &mut Vec<Frame>,
        on_path: &mut HashSet<usize>,
        prop: Proposition,
    ) -> Result<(), GroundError> {
        let candidates = self.candidates(&prop)?;
        let prior = self.leaf_prior(&prop);
        let idx = pg.add_proposition(prop);
        if candidates.is_empty() {
            pg.priors[idx] = prior;
        } else if stack.len() >= self.options.depth_limit {
            pg.priors[idx] = 0.0;
            pg.warnings.push(format!(
                "depth limit {} reached at {}; treated as prior 0",
                self.options.depth_limit, pg.propositions[idx]
            ));
        } else {
            on_path.insert(idx);
            stack.push(Frame {
                prop: idx,
                candidates,
                group: 0,
                member: 0,
                accepted: Vec::new(),
            });
        }
        Ok(())
    }
}

/// Backward-chaining closure of `targets`. Groups licensing a proposition are
/// ordered by source rule position, then by binding order.
pub fn ground(
    graph: &ImplicationGraph,
    kb: &KnowledgeBase,
    targets: &[Proposition],
    options: &GroundOptions,
) -> Result<PropositionGraph, GroundError> {
    if options.depth_limit == 0 {
        return Err(GroundError::InvalidDepthLimit);
    }
    for t in targets {
        check_node(kb, t)?;
    }
    Grounder { graph, kb, options }.run(targets)
}

pub(crate) fn check_node(kb: &KnowledgeBase, prop: &Proposition) -> Result<(), GroundError> {
    if kb.is_builtin(&prop.predicate, prop.arity()) {
        return Err(GroundError::BuiltinNode(prop.to_string()));
    }
    if kb.predicate(&prop.predicate, prop.arity()).is_none() {
        return Err(GroundError::UndeclaredPredicate(prop.signature()));
    }
    Ok(())
}

fn check_builtins(
    kb: &KnowledgeBase,
    builtins: &Builtins,
    atoms: &[Atom],
    binding: &Binding,
    rule: &str,
) -> Result<bool, GroundError> {
    for a in atoms.iter().filter(|a| kb.is_builtin(&a.predicate, a.arity())) {
        let ground = a.substitute(binding);
        let prop = ground.to_proposition().ok_or_else(|| GroundError::UnboundBuiltin {
            rule: rule.to_owned(),
            atom: ground.to_string(),
        })?;
        if !builtins.eval(&prop)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Extends `binding` over the remaining variables of `atoms` by looking up
/// stored facts with prior > 0, then filters by the builtins. Results are
/// sorted by the values of the newly bound variables (in variable-name order).
pub(crate) fn lookup(
    kb: &KnowledgeBase,
    builtins: &Builtins,
    atoms: &[Atom],
    binding: &Binding,
    rule: &str,
) -> Result<Vec<Binding>, GroundError> {
    let mut partial = vec![binding.clone()];
    for atom in atoms.iter().filter(|a| !kb.is_builtin(&a.predicate, a.arity())) {
        let mut next = Vec::new();
        for b in &partial {
            for fact in kb.facts_of(&atom.predicate, atom.arity()) {
                if kb.fact(fact).is_some_and(|f| f.prior > 0.0) {
                    let mut extended = b.clone();
                    if atom.match_proposition(fact, &mut extended) {
                        next.push(extended);
                    }
                }
            }
        }
        partial = next;
        if partial.is_empty() {
            return Ok(partial);
        }
    }
    let mut out = Vec::new();
    for b in partial {
        if check_builtins(kb, builtins, atoms, &b, rule)? {
            out.push(b);
        }
    }
    let fresh: Vec<&String> = out
        .first()
        .map(|b| b.keys().filter(|k| !binding.contains_key(*k)).collect())
        .unwrap_or_default();
    let sort_key = |b: &Binding| -> Vec<String> { fresh.iter().map(|k| b[*k].clone()).collect() };
    let mut keyed: Vec<(Vec<String>, Binding)> = out.iter().map(|b| (sort_key(b), b.clone())).collect();
    keyed.sort();
    keyed.dedup();
    Ok(keyed.into_iter().map(|(_, b)| b).collect())
}

/// All extensions of `binding` (covering the universals) to the existential
/// variables of a Query rule such that every premise atom is a stored fact
/// with prior > 0. No rules are applied inside the search.
pub fn eval_existential(kb: &KnowledgeBase, rule: &Rule, binding: &Binding) -> Result<Vec<Binding>, GroundError> {
    lookup(kb, &Builtins::default(), &rule.premise, binding, &rule.id)
}
