//! Reference evaluators shared by the integration tests. They work directly
//! on rules and constants, without the compiler or the grounder.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use hornbp::kb::{Atom, KnowledgeBase, Proposition, Rule, Term};

pub type Assignment = BTreeMap<String, String>;

pub fn constants(kb: &KnowledgeBase) -> Vec<String> {
    kb.constants().into_iter().collect()
}

/// Every ground atom of every declared predicate over `consts`.
pub fn all_ground_atoms(kb: &KnowledgeBase, consts: &[String]) -> Vec<Proposition> {
    let mut out = Vec::new();
    for p in kb.predicates() {
        let mut tuples: Vec<Vec<String>> = vec![Vec::new()];
        for _ in 0..p.arity {
            tuples = tuples
                .into_iter()
                .flat_map(|t| {
                    consts.iter().map(move |c| {
                        let mut t = t.clone();
                        t.push(c.clone());
                        t
                    })
                })
                .collect();
        }
        out.extend(tuples.into_iter().map(|args| Proposition::new(p.name.clone(), args)));
    }
    out
}

pub fn rule_variables(rule: &Rule) -> Vec<String> {
    let mut vars = BTreeSet::new();
    for a in rule.premise.iter().chain(&rule.conclusion) {
        for t in &a.args {
            if let Term::Variable(v) = t {
                vars.insert(v.clone());
            }
        }
    }
    vars.into_iter().collect()
}

/// All assignments of `vars` to `consts`.
pub fn assignments(vars: &[String], consts: &[String]) -> Vec<Assignment> {
    let mut out = vec![Assignment::new()];
    for v in vars {
        out = out
            .into_iter()
            .flat_map(|a| {
                consts.iter().map(move |c| {
                    let mut a = a.clone();
                    a.insert(v.clone(), c.clone());
                    a
                })
            })
            .collect();
    }
    out
}

pub fn instantiate(atom: &Atom, a: &Assignment) -> Proposition {
    let args: Vec<String> = atom
        .args
        .iter()
        .map(|t| match t {
            Term::Constant(c) => c.clone(),
            Term::Variable(v) => a[v].clone(),
        })
        .collect();
    Proposition::new(atom.predicate.clone(), args)
}

/// Naive bottom-up evaluation of single-conclusion rules over the KB's
/// constants, starting from the facts with prior 1.
pub fn forward_closure(kb: &KnowledgeBase) -> BTreeSet<Proposition> {
    let consts = constants(kb);
    let mut known: BTreeSet<Proposition> = kb
        .facts()
        .filter(|f| f.prior == 1.0)
        .map(|f| f.proposition.clone())
        .collect();
    let grounded: Vec<(Vec<Proposition>, Proposition)> = kb
        .rules()
        .iter()
        .filter(|r| r.conclusion.len() == 1)
        .flat_map(|r| {
            assignments(&rule_variables(r), &consts).into_iter().map(move |a| {
                let body = r.premise.iter().map(|atom| instantiate(atom, &a)).collect();
                (body, instantiate(&r.conclusion[0], &a))
            })
        })
        .collect();
    loop {
        let before = known.len();
        for (body, head) in &grounded {
            if !known.contains(head) && body.iter().all(|b| known.contains(b)) {
                known.insert(head.clone());
            }
        }
        if known.len() == before {
            return known;
        }
    }
}

/// Binds `pattern` against a ground proposition, `None` on a clash.
pub fn unify(pattern: &Atom, prop: &Proposition) -> Option<Assignment> {
    if pattern.predicate != prop.predicate || pattern.args.len() != prop.args.len() {
        return None;
    }
    let mut a = Assignment::new();
    for (t, c) in pattern.args.iter().zip(&prop.args) {
        match t {
            Term::Constant(k) if k != c => return None,
            Term::Constant(_) => {}
            Term::Variable(v) => {
                if a.get(v).is_some_and(|prev| prev != c) {
                    return None;
                }
                a.insert(v.clone(), c.clone());
            }
        }
    }
    Some(a)
}
