use std::collections::BTreeSet;
use std::fmt;

use super::{Atom, KnowledgeBase, Rule};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagnosticKind {
    /// Conclusion variable absent from the premise.
    UnsafeVariable,
    /// Builtin argument variable not bound by an ordinary premise atom.
    UnboundBuiltinVariable,
    /// Premise consists of builtins only.
    NoRelationalPremise,
    UndeclaredPredicate,
    ArityMismatch,
    BuiltinFact,
    BuiltinConclusion,
    InvalidPrior,
    NonGroundFact,
    VariablePartition,
    DuplicateRoles,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    pub rule: Option<String>,
    pub variable: Option<String>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Checks safety and the declaration invariants. An empty result means the
/// KB is valid.
pub fn validate_kb(kb: &KnowledgeBase) -> Vec<Diagnostic> {
    let mut out = Vec::new();

    for p in kb.predicates() {
        if let Some(roles) = &p.roles {
            let distinct: BTreeSet<&String> = roles.iter().collect();
            if distinct.len() != roles.len() || roles.len() != p.arity {
                out.push(Diagnostic {
                    kind: DiagnosticKind::DuplicateRoles,
                    rule: None,
                    variable: None,
                    message: format!(
                        "predicate {}/{} needs {} distinct role labels",
                        p.name, p.arity, p.arity
                    ),
                });
            }
        }
    }

    for fact in kb.facts() {
        let prop = &fact.proposition;
        let atom = prop.to_atom();
        declaration(kb, &atom, None, &mut out);
        if kb.is_builtin(&prop.predicate, prop.arity()) {
            out.push(Diagnostic {
                kind: DiagnosticKind::BuiltinFact,
                rule: None,
                variable: None,
                message: format!("fact {prop} uses builtin predicate {}", prop.predicate),
            });
        }
        if !(0.0..=1.0).contains(&fact.prior) {
            out.push(Diagnostic {
                kind: DiagnosticKind::InvalidPrior,
                rule: None,
                variable: None,
                message: format!("fact {prop} has prior {} outside [0, 1]", fact.prior),
            });
        }
    }

    for rule in kb.rules() {
        check_rule(kb, rule, &mut out);
    }
    out
}

fn declaration(kb: &KnowledgeBase, atom: &Atom, rule: Option<&str>, out: &mut Vec<Diagnostic>) {
    if kb.is_declared(&atom.predicate, atom.arity()) {
        return;
    }
    let other = kb
        .predicates()
        .find(|p| p.name == atom.predicate)
        .map(|p| p.arity)
        .or_else(|| kb.builtins().find(|(n, _)| *n == atom.predicate).map(|(_, a)| a));
    let where_ = rule.map(|r| format!(" in rule {r}")).unwrap_or_default();
    let (kind, message) = match other {
        Some(expected) => (
            DiagnosticKind::ArityMismatch,
            format!(
                "arity mismatch{where_}: {atom} has {} arguments, {} is declared /{expected}",
                atom.arity(),
                atom.predicate
            ),
        ),
        None => (
            DiagnosticKind::UndeclaredPredicate,
            format!("undeclared predicate {}/{}{where_}", atom.predicate, atom.arity()),
        ),
    };
    out.push(Diagnostic {
        kind,
        rule: rule.map(str::to_owned),
        variable: None,
        message,
    });
}

fn check_rule(kb: &KnowledgeBase, rule: &Rule, out: &mut Vec<Diagnostic>) {
    let id = rule.id.as_str();
    for a in rule.premise.iter().chain(&rule.conclusion) {
        declaration(kb, a, Some(id), out);
    }

    let is_builtin = |a: &Atom| kb.is_builtin(&a.predicate, a.arity());
    for c in rule.conclusion.iter().filter(|a| is_builtin(a)) {
        out.push(Diagnostic {
            kind: DiagnosticKind::BuiltinConclusion,
            rule: Some(id.to_owned()),
            variable: None,
            message: format!("rule {id} concludes builtin atom {c}"),
        });
    }

    let premise_vars = rule.premise_variables();
    let mut reported = BTreeSet::new();
    for c in &rule.conclusion {
        for v in c.variables() {
            if !premise_vars.contains(v) && reported.insert(v) {
                out.push(Diagnostic {
                    kind: DiagnosticKind::UnsafeVariable,
                    rule: Some(id.to_owned()),
                    variable: Some(v.to_owned()),
                    message: format!("unsafe variable {v} in conclusion of rule {id}"),
                });
            }
        }
    }

    let relational: BTreeSet<&str> = rule
        .premise
        .iter()
        .filter(|a| !is_builtin(a))
        .flat_map(|a| a.variables())
        .collect();
    if rule.premise.iter().all(is_builtin) {
        out.push(Diagnostic {
            kind: DiagnosticKind::NoRelationalPremise,
            rule: Some(id.to_owned()),
            variable: None,
            message: format!("rule {id} has no non-builtin premise atom"),
        });
    }
    let mut reported = BTreeSet::new();
    for b in rule.premise.iter().filter(|a| is_builtin(a)) {
        for v in b.variables() {
            if !relational.contains(v) && reported.insert(v) {
                out.push(Diagnostic {
                    kind: DiagnosticKind::UnboundBuiltinVariable,
                    rule: Some(id.to_owned()),
                    variable: Some(v.to_owned()),
                    message: format!("variable {v} of builtin {b} in rule {id} is not bound by a premise atom"),
                });
            }
        }
    }

    let all: BTreeSet<&str> = rule
        .premise
        .iter()
        .chain(&rule.conclusion)
        .flat_map(|a| a.variables())
        .collect();
    let universals: BTreeSet<&str> = rule.universals.iter().map(String::as_str).collect();
    let existentials: BTreeSet<&str> = rule.existentials.iter().map(String::as_str).collect();
    let conclusion_vars: BTreeSet<&str> = rule.conclusion.iter().flat_map(|a| a.variables()).collect();
    if universals != conclusion_vars
        || !universals.is_disjoint(&existentials)
        || universals.union(&existentials).copied().collect::<BTreeSet<_>>() != all
    {
        out.push(Diagnostic {
            kind: DiagnosticKind::VariablePartition,
            rule: Some(id.to_owned()),
            variable: None,
            message: format!("rule {id}: universal/existential variable sets are inconsistent"),
        });
    }
}
