//! Domain types for the knowledge base: terms, atoms, propositions, weighted
//! facts and rules, plus the textual KB format.
//!
//! The text format is line-oriented Datalog:
//!
//! ```text
//! pred likes/2 (subj, dobj).
//! 0.9 :: likes(jill, jack).
//! date(X,Y) <- likes(X,Y), likes(Y,X).
//! [umbrella] learned u(X) | w(X) <- rain(X).
//! builtin sum/3.
//! ```
//!
//! Identifiers starting with an uppercase letter are variables, everything
//! else is a constant. Rules get the id `r<n>` (1-based, source order) unless
//! labelled with `[id]`.

mod parser;
mod validate;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

pub(crate) use parser::atom_from;
pub use parser::{parse_atom, parse_kb, parse_proposition, ParseError};
pub use validate::{validate_kb, Diagnostic, DiagnosticKind};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Constant(String),
    Variable(String),
}

impl Term {
    pub fn constant(name: impl Into<String>) -> Self {
        Term::Constant(name.into())
    }

    pub fn variable(name: impl Into<String>) -> Self {
        Term::Variable(name.into())
    }

    pub fn is_variable(&self) -> bool {
        matches!(self, Term::Variable(_))
    }

    pub fn name(&self) -> &str {
        match self {
            Term::Constant(s) | Term::Variable(s) => s,
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A declared relation. Roles name the argument columns (`likes(subj, dobj)`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Predicate {
    pub name: String,
    pub arity: usize,
    pub roles: Option<Vec<String>>,
}

impl Predicate {
    pub fn new(name: impl Into<String>, arity: usize) -> Self {
        Predicate {
            name: name.into(),
            arity,
            roles: None,
        }
    }

    pub fn with_roles(mut self, roles: Vec<String>) -> Self {
        self.roles = Some(roles);
        self
    }
}

/// Predicate name plus arguments; arity is the argument count.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Atom {
    pub predicate: String,
    pub args: Vec<Term>,
}

impl Atom {
    pub fn new(predicate: impl Into<String>, args: Vec<Term>) -> Self {
        Atom {
            predicate: predicate.into(),
            args,
        }
    }

    pub fn arity(&self) -> usize {
        self.args.len()
    }

    pub fn variables(&self) -> impl Iterator<Item = &str> {
        self.args.iter().filter_map(|t| match t {
            Term::Variable(v) => Some(v.as_str()),
            Term::Constant(_) => None,
        })
    }

    pub fn is_ground(&self) -> bool {
        self.args.iter().all(|t| !t.is_variable())
    }

    /// Converts to a proposition if no argument is a variable.
    pub fn to_proposition(&self) -> Option<Proposition> {
        let args = self
            .args
            .iter()
            .map(|t| match t {
                Term::Constant(c) => Some(c.clone()),
                Term::Variable(_) => None,
            })
            .collect::<Option<Vec<_>>>()?;
        Some(Proposition {
            predicate: self.predicate.clone(),
            args,
        })
    }

    /// Substitutes bound variables; unbound ones are left in place.
    pub fn substitute(&self, binding: &Binding) -> Atom {
        Atom {
            predicate: self.predicate.clone(),
            args: self
                .args
                .iter()
                .map(|t| match t {
                    Term::Variable(v) => match binding.get(v) {
                        Some(c) => Term::Constant(c.clone()),
                        None => t.clone(),
                    },
                    Term::Constant(_) => t.clone(),
                })
                .collect(),
        }
    }

    /// Extends `binding` so that this atom matches `prop`. Returns `false` and
    /// leaves `binding` untouched on mismatch.
    pub fn match_proposition(&self, prop: &Proposition, binding: &mut Binding) -> bool {
        if self.predicate != prop.predicate || self.args.len() != prop.args.len() {
            return false;
        }
        let mut added: Vec<&str> = Vec::new();
        for (term, value) in self.args.iter().zip(&prop.args) {
            let ok = match term {
                Term::Constant(c) => c == value,
                Term::Variable(v) => match binding.get(v) {
                    Some(bound) => bound == value,
                    None => {
                        binding.insert(v.clone(), value.clone());
                        added.push(v);
                        true
                    }
                },
            };
            if !ok {
                for v in added {
                    binding.remove(v);
                }
                return false;
            }
        }
        true
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_call(f, &self.predicate, self.args.iter())
    }
}

fn write_call<T: fmt::Display>(f: &mut fmt::Formatter<'_>, name: &str, args: impl Iterator<Item = T>) -> fmt::Result {
    f.write_str(name)?;
    let mut first = true;
    for a in args {
        f.write_str(if first { "(" } else { "," })?;
        first = false;
        write!(f, "{a}")?;
    }
    if !first {
        f.write_str(")")?;
    }
    Ok(())
}

/// Variable name → constant.
pub type Binding = BTreeMap<String, String>;

/// A fully ground atom; the binary random variables of the system.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Proposition {
    pub predicate: String,
    pub args: Vec<String>,
}

impl Proposition {
    pub fn new<S: Into<String>>(predicate: impl Into<String>, args: impl IntoIterator<Item = S>) -> Self {
        Proposition {
            predicate: predicate.into(),
            args: args.into_iter().map(Into::into).collect(),
        }
    }

    pub fn arity(&self) -> usize {
        self.args.len()
    }

    pub fn to_atom(&self) -> Atom {
        Atom {
            predicate: self.predicate.clone(),
            args: self.args.iter().cloned().map(Term::Constant).collect(),
        }
    }

    /// `name/arity` key used for declarations and the pattern bias feature.
    pub fn signature(&self) -> String {
        format!("{}/{}", self.predicate, self.args.len())
    }
}

impl fmt::Display for Proposition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_call(f, &self.predicate, self.args.iter())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fact {
    pub proposition: Proposition,
    pub prior: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightMode {
    #[default]
    Deterministic,
    Learned,
}

/// Quantified implication: conjunctive premise, disjunctive conclusion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    pub id: String,
    pub premise: Vec<Atom>,
    pub conclusion: Vec<Atom>,
    /// Variables of the conclusion.
    pub universals: BTreeSet<String>,
    /// Variables occurring only in the premise.
    pub existentials: BTreeSet<String>,
    pub weight_mode: WeightMode,
}

impl Rule {
    pub fn new(id: impl Into<String>, premise: Vec<Atom>, conclusion: Vec<Atom>, weight_mode: WeightMode) -> Self {
        let universals: BTreeSet<String> = conclusion
            .iter()
            .flat_map(|a| a.variables().map(str::to_owned))
            .collect();
        let existentials = premise
            .iter()
            .flat_map(|a| a.variables().map(str::to_owned))
            .filter(|v| !universals.contains(v))
            .collect();
        Rule {
            id: id.into(),
            premise,
            conclusion,
            universals,
            existentials,
            weight_mode,
        }
    }

    pub fn premise_variables(&self) -> BTreeSet<&str> {
        self.premise.iter().flat_map(|a| a.variables()).collect()
    }

    pub fn is_planning(&self) -> bool {
        self.conclusion.len() > 1
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] ", self.id)?;
        if self.weight_mode == WeightMode::Learned {
            f.write_str("learned ")?;
        }
        for (i, c) in self.conclusion.iter().enumerate() {
            if i > 0 {
                f.write_str(" | ")?;
            }
            write!(f, "{c}")?;
        }
        f.write_str(" <- ")?;
        for (i, p) in self.premise.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{p}")?;
        }
        f.write_str(".")
    }
}

/// Declared predicates, the probabilistic fact store, and the rule store.
///
/// Mutators do not enforce declarations. [`parse_kb`] rejects undeclared
/// predicates and arity clashes but leaves rule safety to [`validate_kb`].
#[derive(Debug, Clone, Default)]
pub struct KnowledgeBase {
    predicates: BTreeMap<(String, usize), Predicate>,
    facts: BTreeMap<Proposition, Fact>,
    rules: Vec<Rule>,
    builtins: BTreeSet<(String, usize)>,
    fact_index: HashMap<(String, usize), Vec<Proposition>>,
}

impl PartialEq for KnowledgeBase {
    fn eq(&self, other: &Self) -> bool {
        self.predicates == other.predicates
            && self.facts == other.facts
            && self.rules == other.rules
            && self.builtins == other.builtins
    }
}

impl KnowledgeBase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn declare(&mut self, predicate: Predicate) {
        self.predicates
            .insert((predicate.name.clone(), predicate.arity), predicate);
    }

    pub fn declare_builtin(&mut self, name: impl Into<String>, arity: usize) {
        self.builtins.insert((name.into(), arity));
    }

    /// Inserts or replaces a fact; returns the previous one.
    pub fn add_fact(&mut self, proposition: Proposition, prior: f64) -> Option<Fact> {
        let key = (proposition.predicate.clone(), proposition.arity());
        let previous = self.facts.insert(
            proposition.clone(),
            Fact {
                proposition: proposition.clone(),
                prior,
            },
        );
        if previous.is_none() {
            let bucket = self.fact_index.entry(key).or_default();
            let at = bucket.binary_search(&proposition).unwrap_or_else(|i| i);
            bucket.insert(at, proposition);
        }
        previous
    }

    pub fn add_rule(&mut self, rule: Rule) {
        self.rules.push(rule);
    }

    pub fn predicates(&self) -> impl Iterator<Item = &Predicate> {
        self.predicates.values()
    }

    pub fn predicate(&self, name: &str, arity: usize) -> Option<&Predicate> {
        self.predicates.get(&(name.to_owned(), arity))
    }

    pub fn is_declared(&self, name: &str, arity: usize) -> bool {
        self.predicate(name, arity).is_some() || self.is_builtin(name, arity)
    }

    pub fn is_builtin(&self, name: &str, arity: usize) -> bool {
        self.builtins.contains(&(name.to_owned(), arity))
    }

    pub fn builtins(&self) -> impl Iterator<Item = (&str, usize)> {
        self.builtins.iter().map(|(n, a)| (n.as_str(), *a))
    }

    pub fn facts(&self) -> impl Iterator<Item = &Fact> {
        self.facts.values()
    }

    pub fn fact(&self, prop: &Proposition) -> Option<&Fact> {
        self.facts.get(prop)
    }

    /// Facts of one predicate, sorted by proposition.
    pub fn facts_of(&self, predicate: &str, arity: usize) -> &[Proposition] {
        self.fact_index
            .get(&(predicate.to_owned(), arity))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn rule(&self, id: &str) -> Option<&Rule> {
        self.rules.iter().find(|r| r.id == id)
    }

    /// All constants mentioned in facts or rules, sorted.
    pub fn constants(&self) -> BTreeSet<String> {
        let mut out: BTreeSet<String> = self.facts.keys().flat_map(|p| p.args.iter().cloned()).collect();
        for r in &self.rules {
            for a in r.premise.iter().chain(&r.conclusion) {
                for t in &a.args {
                    if let Term::Constant(c) = t {
                        out.insert(c.clone());
                    }
                }
            }
        }
        out
    }
}

/// Serializes to the KB text format; the output reparses to an equal KB.
impl fmt::Display for KnowledgeBase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in self.predicates.values() {
            write!(f, "pred {}/{}", p.name, p.arity)?;
            if let Some(roles) = &p.roles {
                write!(f, " ({})", roles.join(", "))?;
            }
            f.write_str(".\n")?;
        }
        for (name, arity) in &self.builtins {
            writeln!(f, "builtin {name}/{arity}.")?;
        }
        for fact in self.facts.values() {
            if fact.prior == 1.0 {
                writeln!(f, "{}.", fact.proposition)?;
            } else {
                writeln!(f, "{:?} :: {}.", fact.prior, fact.proposition)?;
            }
        }
        for r in &self.rules {
            writeln!(f, "{r}")?;
        }
        Ok(())
    }
}
