//! Fragment classification and compilation of the rule store into the
//! implication graph.
//!
//! Direct and Query rules that share a conclusion pattern (equal up to
//! variable renaming, including the equality pattern among variables) are
//! merged into one [`CompiledRule`] whose premise is in disjunctive normal
//! form, one clause per source rule. Planning rules are kept as written.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use crate::kb::{Atom, KnowledgeBase, Rule, Term, WeightMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FragmentTag {
    Direct,
    Query,
    Planning,
}

impl fmt::Display for FragmentTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FragmentTag::Direct => "direct",
            FragmentTag::Query => "query",
            FragmentTag::Planning => "planning",
        })
    }
}

pub fn classify(rule: &Rule) -> FragmentTag {
    if rule.conclusion.len() > 1 {
        FragmentTag::Planning
    } else if !rule.existentials.is_empty() {
        FragmentTag::Query
    } else {
        FragmentTag::Direct
    }
}

/// One disjunct of a compiled premise, renamed into the conclusion
/// pattern's variables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clause {
    pub atoms: Vec<Atom>,
    pub source: String,
    /// Position of the source rule in the KB, used for deterministic ordering.
    pub source_index: usize,
    pub existentials: BTreeSet<String>,
    pub weight_mode: WeightMode,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompiledRule {
    /// Canonical conclusion: variables renamed `V0, V1, ...` by first occurrence.
    pub conclusion_pattern: Atom,
    pub clauses: Vec<Clause>,
    pub fragment: FragmentTag,
}

impl CompiledRule {
    pub fn dnf_premise(&self) -> Vec<&[Atom]> {
        self.clauses.iter().map(|c| c.atoms.as_slice()).collect()
    }

    pub fn sources(&self) -> Vec<&str> {
        self.clauses.iter().map(|c| c.source.as_str()).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ImplicationGraph {
    links: Vec<CompiledRule>,
    by_pattern: HashMap<Atom, usize>,
    by_signature: HashMap<(String, usize), Vec<usize>>,
    pub planning_rules: Vec<Rule>,
}

impl ImplicationGraph {
    /// Compiled rules in order of their first source rule.
    pub fn links(&self) -> &[CompiledRule] {
        &self.links
    }

    /// Looks up the compiled rule for a conclusion pattern, up to renaming.
    pub fn get(&self, pattern: &Atom) -> Option<&CompiledRule> {
        let (canon, _) = canonical_pattern(pattern);
        self.by_pattern.get(&canon).map(|&i| &self.links[i])
    }

    /// Compiled rules whose conclusion has this predicate name and arity.
    pub fn candidates(&self, predicate: &str, arity: usize) -> impl Iterator<Item = &CompiledRule> {
        self.by_signature
            .get(&(predicate.to_owned(), arity))
            .into_iter()
            .flatten()
            .map(|&i| &self.links[i])
    }

    pub fn clause_count(&self) -> usize {
        self.links.iter().map(|l| l.clauses.len()).sum()
    }

    /// Expands back into one single-clause rule per compiled clause.
    pub fn expand(&self) -> Vec<Rule> {
        let mut rules: Vec<(usize, Rule)> = Vec::new();
        for link in &self.links {
            for c in &link.clauses {
                rules.push((
                    c.source_index,
                    Rule::new(
                        c.source.clone(),
                        c.atoms.clone(),
                        vec![link.conclusion_pattern.clone()],
                        c.weight_mode,
                    ),
                ));
            }
        }
        rules.sort_by_key(|(i, _)| *i);
        rules.into_iter().map(|(_, r)| r).collect()
    }

    /// Graphviz rendering: one box per conclusion pattern, edges from premise
    /// predicates labelled with the source rule id.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph implication {\n  rankdir=LR;\n");
        let mut preds: BTreeSet<String> = BTreeSet::new();
        for link in &self.links {
            preds.insert(link.conclusion_pattern.to_string());
            for c in &link.clauses {
                for a in &c.atoms {
                    preds.insert(format!("{}/{}", a.predicate, a.arity()));
                }
            }
        }
        for r in &self.planning_rules {
            for a in r.premise.iter().chain(&r.conclusion) {
                preds.insert(format!("{}/{}", a.predicate, a.arity()));
            }
        }
        for p in &preds {
            out.push_str(&format!("  \"{p}\" [shape=ellipse];\n"));
        }
        for link in &self.links {
            let head = link.conclusion_pattern.to_string();
            out.push_str(&format!(
                "  \"{head}\" -> \"{}/{}\" [style=dotted,arrowhead=none];\n",
                link.conclusion_pattern.predicate,
                link.conclusion_pattern.arity()
            ));
            for c in &link.clauses {
                for a in &c.atoms {
                    out.push_str(&format!(
                        "  \"{}/{}\" -> \"{head}\" [label=\"{}\"];\n",
                        a.predicate,
                        a.arity(),
                        c.source
                    ));
                }
            }
        }
        for r in &self.planning_rules {
            for p in &r.premise {
                for c in &r.conclusion {
                    out.push_str(&format!(
                        "  \"{}/{}\" -> \"{}/{}\" [label=\"{}\",style=dashed];\n",
                        p.predicate,
                        p.arity(),
                        c.predicate,
                        c.arity(),
                        r.id
                    ));
                }
            }
        }
        out.push_str("}\n");
        out
    }
}

/// Renames conclusion variables to `V0, V1, ...`; returns the canonical atom
/// and the renaming.
fn canonical_pattern(atom: &Atom) -> (Atom, BTreeMap<String, String>) {
    let mut renaming = BTreeMap::new();
    let args = atom
        .args
        .iter()
        .map(|t| match t {
            Term::Variable(v) => {
                let next = format!("V{}", renaming.len());
                Term::Variable(renaming.entry(v.clone()).or_insert(next).clone())
            }
            Term::Constant(_) => t.clone(),
        })
        .collect();
    (Atom::new(atom.predicate.clone(), args), renaming)
}

fn canonical_clause(rule: &Rule, conclusion: &Atom) -> (Atom, Vec<Atom>, BTreeSet<String>) {
    let (pattern, mut renaming) = canonical_pattern(conclusion);
    let head_vars = renaming.len();
    let mut existentials = BTreeSet::new();
    for a in &rule.premise {
        for v in a.variables() {
            if !renaming.contains_key(v) {
                let name = format!("E{}", renaming.len() - head_vars);
                existentials.insert(name.clone());
                renaming.insert(v.to_owned(), name);
            }
        }
    }
    let atoms = rule
        .premise
        .iter()
        .map(|a| {
            Atom::new(
                a.predicate.clone(),
                a.args
                    .iter()
                    .map(|t| match t {
                        Term::Variable(v) => Term::Variable(renaming[v].clone()),
                        Term::Constant(_) => t.clone(),
                    })
                    .collect(),
            )
        })
        .collect();
    (pattern, atoms, existentials)
}

/// Builds the implication graph. Expects a KB without validation diagnostics.
pub fn compile(kb: &KnowledgeBase) -> ImplicationGraph {
    compile_rules(kb.rules())
}

pub fn compile_rules(rules: &[Rule]) -> ImplicationGraph {
    let mut graph = ImplicationGraph::default();
    for (index, rule) in rules.iter().enumerate() {
        if classify(rule) == FragmentTag::Planning {
            graph.planning_rules.push(rule.clone());
            continue;
        }
        let (pattern, atoms, existentials) = canonical_clause(rule, &rule.conclusion[0]);
        let clause = Clause {
            atoms,
            source: rule.id.clone(),
            source_index: index,
            existentials,
            weight_mode: rule.weight_mode,
        };
        let slot = match graph.by_pattern.get(&pattern) {
            Some(&i) => i,
            None => {
                let i = graph.links.len();
                graph.by_pattern.insert(pattern.clone(), i);
                graph
                    .by_signature
                    .entry((pattern.predicate.clone(), pattern.arity()))
                    .or_default()
                    .push(i);
                graph.links.push(CompiledRule {
                    conclusion_pattern: pattern,
                    clauses: Vec::new(),
                    fragment: FragmentTag::Direct,
                });
                i
            }
        };
        let link = &mut graph.links[slot];
        if !clause.existentials.is_empty() {
            link.fragment = FragmentTag::Query;
        }
        link.clauses.push(clause);
    }
    graph
}
