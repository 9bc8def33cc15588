use std::collections::HashSet;

use thiserror::Error;

use super::{Atom, KnowledgeBase, Predicate, Proposition, Rule, Term, WeightMode};
use crate::syntax::{tokenize, Cursor, Pos, Tok};

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{pos}: {message}")]
pub struct ParseError {
    pub pos: Pos,
    pub message: String,
}

impl ParseError {
    pub(crate) fn at(pos: Pos, message: impl Into<String>) -> Self {
        ParseError {
            pos,
            message: message.into(),
        }
    }
}

impl From<(Pos, String)> for ParseError {
    fn from((pos, message): (Pos, String)) -> Self {
        ParseError { pos, message }
    }
}

struct SpannedAtom {
    atom: Atom,
    pos: Pos,
}

enum Statement {
    Decl(Predicate, Pos),
    Builtin(String, usize, Pos),
    Fact {
        atom: SpannedAtom,
        prior: f64,
    },
    Rule {
        label: Option<(String, Pos)>,
        mode: WeightMode,
        heads: Vec<SpannedAtom>,
        conjunctive_head: bool,
        body: Vec<SpannedAtom>,
        pos: Pos,
    },
}

/// Parses KB source text. Declarations may appear anywhere in the file.
pub fn parse_kb(text: &str) -> Result<KnowledgeBase, ParseError> {
    let mut cur = Cursor::new(tokenize(text)?);
    let mut statements = Vec::new();
    while !cur.at_eof() {
        statements.push(statement(&mut cur)?);
    }

    let mut kb = KnowledgeBase::new();
    for st in &statements {
        match st {
            Statement::Decl(p, pos) => {
                if kb.is_declared(&p.name, p.arity) {
                    return Err(ParseError::at(
                        *pos,
                        format!("predicate {}/{} declared twice", p.name, p.arity),
                    ));
                }
                kb.declare(p.clone());
            }
            Statement::Builtin(name, arity, pos) => {
                if kb.is_declared(name, *arity) {
                    return Err(ParseError::at(*pos, format!("predicate {name}/{arity} declared twice")));
                }
                kb.declare_builtin(name.clone(), *arity);
            }
            _ => {}
        }
    }

    let check = |kb: &KnowledgeBase, a: &SpannedAtom| -> Result<(), ParseError> {
        let (name, arity) = (&a.atom.predicate, a.atom.arity());
        if kb.is_declared(name, arity) {
            return Ok(());
        }
        let declared: Vec<usize> = kb
            .predicates()
            .filter(|p| &p.name == name)
            .map(|p| p.arity)
            .chain(kb.builtins().filter(|(n, _)| n == name).map(|(_, a)| a))
            .collect();
        if let Some(expected) = declared.first() {
            Err(ParseError::at(
                a.pos,
                format!("arity mismatch: {name} used with {arity} arguments, declared /{expected}"),
            ))
        } else {
            Err(ParseError::at(a.pos, format!("undeclared predicate {name}/{arity}")))
        }
    };

    let mut rule_no = 0usize;
    let mut ids: HashSet<String> = HashSet::new();
    for st in statements {
        match st {
            Statement::Decl(..) | Statement::Builtin(..) => {}
            Statement::Fact { atom, prior } => {
                check(&kb, &atom)?;
                if kb.is_builtin(&atom.atom.predicate, atom.atom.arity()) {
                    return Err(ParseError::at(
                        atom.pos,
                        format!("builtin predicate {} cannot have facts", atom.atom.predicate),
                    ));
                }
                let prop = atom
                    .atom
                    .to_proposition()
                    .ok_or_else(|| ParseError::at(atom.pos, format!("fact {} is not ground", atom.atom)))?;
                if kb.fact(&prop).is_some() {
                    return Err(ParseError::at(atom.pos, format!("duplicate fact {prop}")));
                }
                kb.add_fact(prop, prior);
            }
            Statement::Rule {
                label,
                mode,
                heads,
                conjunctive_head,
                body,
                pos,
            } => {
                rule_no += 1;
                for a in heads.iter().chain(&body) {
                    check(&kb, a)?;
                }
                let base = match label {
                    Some((l, _)) => l,
                    None => format!("r{rule_no}"),
                };
                let premise: Vec<Atom> = body.into_iter().map(|a| a.atom).collect();
                let heads: Vec<Atom> = heads.into_iter().map(|a| a.atom).collect();
                let rules = if conjunctive_head {
                    heads
                        .into_iter()
                        .enumerate()
                        .map(|(i, h)| Rule::new(format!("{base}_{}", i + 1), premise.clone(), vec![h], mode))
                        .collect()
                } else {
                    vec![Rule::new(base, premise, heads, mode)]
                };
                for r in rules {
                    if !ids.insert(r.id.clone()) {
                        return Err(ParseError::at(pos, format!("duplicate rule id {}", r.id)));
                    }
                    kb.add_rule(r);
                }
            }
        }
    }
    Ok(kb)
}

fn statement(cur: &mut Cursor) -> Result<Statement, ParseError> {
    let pos = cur.pos();
    let keyword_decl = |cur: &Cursor, kw: &str| {
        matches!(cur.peek(), Tok::Ident(k) if k == kw)
            && matches!(cur.peek_at(1), Tok::Ident(_))
            && matches!(cur.peek_at(2), Tok::Slash)
    };

    if keyword_decl(cur, "pred") {
        cur.next();
        let (name, arity) = signature(cur)?;
        let mut pred = Predicate::new(name, arity);
        if cur.eat(&Tok::LParen) {
            let mut roles = Vec::new();
            loop {
                let (role, rpos) = cur.ident("role label")?;
                if roles.contains(&role) {
                    return Err(ParseError::at(rpos, format!("duplicate role label {role}")));
                }
                roles.push(role);
                if !cur.eat(&Tok::Comma) {
                    break;
                }
            }
            cur.expect(&Tok::RParen)?;
            if roles.len() != arity {
                return Err(ParseError::at(
                    pos,
                    format!("{} role labels for arity {arity}", roles.len()),
                ));
            }
            pred = pred.with_roles(roles);
        }
        cur.expect(&Tok::Dot)?;
        return Ok(Statement::Decl(pred, pos));
    }
    if keyword_decl(cur, "builtin") {
        cur.next();
        let (name, arity) = signature(cur)?;
        cur.expect(&Tok::Dot)?;
        return Ok(Statement::Builtin(name, arity, pos));
    }
    if let (Tok::Number(text), Tok::DoubleColon) = (cur.peek().clone(), cur.peek_at(1)) {
        cur.next();
        cur.next();
        let prior = parse_probability(&text)
            .ok_or_else(|| ParseError::at(pos, format!("probability {text} is not in [0, 1]")))?;
        let atom = spanned_atom(cur)?;
        cur.expect(&Tok::Dot)?;
        return Ok(Statement::Fact { atom, prior });
    }

    let mut label = None;
    if cur.eat(&Tok::LBracket) {
        label = Some(cur.ident("rule id")?);
        cur.expect(&Tok::RBracket)?;
    }
    let mut mode = WeightMode::Deterministic;
    if matches!(cur.peek(), Tok::Ident(k) if k == "learned") && matches!(cur.peek_at(1), Tok::Ident(_)) {
        cur.next();
        mode = WeightMode::Learned;
    }

    let mut heads = vec![spanned_atom(cur)?];
    let mut separator: Option<Tok> = None;
    while matches!(cur.peek(), Tok::Comma | Tok::Pipe) {
        let sep = cur.peek().clone();
        let sep_pos = cur.pos();
        if separator.as_ref().is_some_and(|s| *s != sep) {
            return Err(ParseError::at(sep_pos, "cannot mix ',' and '|' in a rule head"));
        }
        separator = Some(sep);
        cur.next();
        heads.push(spanned_atom(cur)?);
    }

    if cur.eat(&Tok::Dot) {
        if label.is_some() || mode == WeightMode::Learned || heads.len() > 1 {
            return Err(ParseError::at(pos, "expected '<-' after rule head"));
        }
        let atom = heads.pop().expect("one head");
        return Ok(Statement::Fact { atom, prior: 1.0 });
    }
    cur.expect(&Tok::Arrow)?;
    let mut body = vec![spanned_atom(cur)?];
    while cur.eat(&Tok::Comma) {
        body.push(spanned_atom(cur)?);
    }
    cur.expect(&Tok::Dot)?;
    Ok(Statement::Rule {
        label,
        mode,
        heads,
        conjunctive_head: separator == Some(Tok::Comma),
        body,
        pos,
    })
}

fn signature(cur: &mut Cursor) -> Result<(String, usize), ParseError> {
    let (name, _) = cur.ident("predicate name")?;
    cur.expect(&Tok::Slash)?;
    let pos = cur.pos();
    match cur.next().tok {
        Tok::Number(n) => n
            .parse::<usize>()
            .map(|a| (name, a))
            .map_err(|_| ParseError::at(pos, format!("invalid arity {n}"))),
        other => Err(ParseError::at(pos, format!("expected arity, found {other}"))),
    }
}

fn spanned_atom(cur: &mut Cursor) -> Result<SpannedAtom, ParseError> {
    let pos = cur.pos();
    let atom = atom(cur)?;
    Ok(SpannedAtom { atom, pos })
}

fn atom(cur: &mut Cursor) -> Result<Atom, ParseError> {
    let (name, _) = cur.ident("predicate name")?;
    let mut args = Vec::new();
    if cur.eat(&Tok::LParen) && !cur.eat(&Tok::RParen) {
        loop {
            let pos = cur.pos();
            let term = match cur.next().tok {
                Tok::Ident(c) | Tok::Number(c) => Term::Constant(c),
                Tok::Var(v) => Term::Variable(v),
                other => return Err(ParseError::at(pos, format!("expected a term, found {other}"))),
            };
            args.push(term);
            if !cur.eat(&Tok::Comma) {
                break;
            }
        }
        cur.expect(&Tok::RParen)?;
    }
    Ok(Atom::new(name, args))
}

pub(crate) fn parse_probability(text: &str) -> Option<f64> {
    text.parse::<f64>().ok().filter(|p| (0.0..=1.0).contains(p))
}

/// Parses a single atom such as `likes(X, jack)`; trailing input is an error.
pub fn parse_atom(text: &str) -> Result<Atom, ParseError> {
    let mut cur = Cursor::new(tokenize(text)?);
    let a = atom(&mut cur)?;
    if !cur.at_eof() {
        return Err(ParseError::at(cur.pos(), format!("unexpected {}", cur.peek())));
    }
    Ok(a)
}

/// Parses a ground atom such as `want(j1,apple)`.
pub fn parse_proposition(text: &str) -> Result<Proposition, ParseError> {
    let a = parse_atom(text)?;
    a.to_proposition()
        .ok_or_else(|| ParseError::at(Pos { line: 1, column: 1 }, format!("{a} is not ground")))
}

/// Parses one atom from an existing cursor (shared with the query parser).
pub(crate) fn atom_from(cur: &mut Cursor) -> Result<Atom, ParseError> {
    atom(cur)
}
