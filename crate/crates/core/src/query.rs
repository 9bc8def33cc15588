//! Query files and answering.
//!
//! ```text
//! assume rain(today) = true.
//! ask carry_umbrella(today)?
//! option engine = oracle.
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compile::ImplicationGraph;
use crate::factor::{build, FactorGraph, WeightVector};
use crate::ground::{check_node, ground, GroundError, GroundOptions, PropositionGraph};
use crate::infer::{
    case_split, marginals, BpOptions, CaseSplitOptions, CaseSplitReport, Engine, InferenceError, Marginals, Schedule,
    DEFAULT_BRANCH_CAP, DEFAULT_ORACLE_CAP,
};
use crate::kb::{atom_from, KnowledgeBase, ParseError, Proposition};
use crate::syntax::{tokenize, Cursor, Tok};
use crate::Pos;

/// Engine requested for a query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EngineChoice {
    /// Belief propagation, case splitting when a disjunctive rule fires.
    #[default]
    Auto,
    Bp,
    /// Exact enumeration, case splitting when a disjunctive rule fires.
    Oracle,
    /// Always case split, with belief propagation per branch.
    CaseSplit,
}

impl fmt::Display for EngineChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EngineChoice::Auto => "auto",
            EngineChoice::Bp => "bp",
            EngineChoice::Oracle => "oracle",
            EngineChoice::CaseSplit => "case-split",
        })
    }
}

impl FromStr for EngineChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auto" => Ok(EngineChoice::Auto),
            "bp" => Ok(EngineChoice::Bp),
            "oracle" => Ok(EngineChoice::Oracle),
            "case-split" | "case_split" => Ok(EngineChoice::CaseSplit),
            other => Err(format!(
                "unknown engine '{other}' (expected bp, oracle, case-split or auto)"
            )),
        }
    }
}

/// Settings for [`answer`].
#[derive(Debug, Clone)]
pub struct AnswerOptions {
    pub engine: EngineChoice,
    pub bp: BpOptions,
    pub ground: GroundOptions,
    pub oracle_cap: usize,
    pub branch_cap: u64,
    /// Threshold for premises holding and for entailment in case splits.
    pub tol: f64,
}

impl Default for AnswerOptions {
    fn default() -> Self {
        AnswerOptions {
            engine: EngineChoice::Auto,
            bp: BpOptions::default(),
            ground: GroundOptions::default(),
            oracle_cap: DEFAULT_ORACLE_CAP,
            branch_cap: DEFAULT_BRANCH_CAP,
            tol: 1e-6,
        }
    }
}

/// Settings given inside a query file; unset fields keep the caller's value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueryOptions {
    pub engine: Option<EngineChoice>,
    pub tol: Option<f64>,
    pub max_iters: Option<usize>,
    pub depth_limit: Option<usize>,
    pub schedule: Option<Schedule>,
    pub damping: Option<f64>,
}

impl QueryOptions {
    pub fn apply(&self, opts: &mut AnswerOptions) {
        if let Some(e) = self.engine {
            opts.engine = e;
        }
        if let Some(t) = self.tol {
            opts.bp.tol = t;
        }
        if let Some(n) = self.max_iters {
            opts.bp.max_iters = n;
        }
        if let Some(d) = self.depth_limit {
            opts.ground.depth_limit = d;
        }
        if let Some(s) = self.schedule {
            opts.bp.schedule = s;
        }
        if let Some(d) = self.damping {
            opts.bp.damping = d;
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Query {
    pub assumptions: BTreeMap<Proposition, bool>,
    pub questions: Vec<Proposition>,
    pub options: QueryOptions,
    positions: BTreeMap<Proposition, Pos>,
}

impl Query {
    pub fn new(assumptions: BTreeMap<Proposition, bool>, questions: Vec<Proposition>) -> Self {
        Query {
            assumptions,
            questions,
            ..Default::default()
        }
    }

    /// Where `prop` first appears in the query text, if it was parsed.
    pub fn position(&self, prop: &Proposition) -> Option<Pos> {
        self.positions.get(prop).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QueryError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("{pos}: {source}")]
    At { pos: Pos, source: GroundError },
    #[error("{prop} is both assumed and asked")]
    Overlap { prop: String },
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

impl From<(Pos, String)> for QueryError {
    fn from(e: (Pos, String)) -> Self {
        QueryError::Parse(e.into())
    }
}

fn number<T: FromStr>(cur: &mut Cursor, key: &str) -> Result<T, ParseError> {
    let pos = cur.pos();
    match cur.next().tok {
        Tok::Number(s) => s
            .parse()
            .map_err(|_| ParseError::at(pos, format!("invalid value {s} for option {key}"))),
        other => Err(ParseError::at(
            pos,
            format!("expected a number for option {key}, found {other}"),
        )),
    }
}

fn word<T: FromStr<Err = String>>(cur: &mut Cursor) -> Result<T, ParseError> {
    let (s, pos) = cur.ident("option value")?;
    s.parse().map_err(|e| ParseError::at(pos, e))
}

fn option(cur: &mut Cursor, opts: &mut QueryOptions) -> Result<(), ParseError> {
    let (key, pos) = cur.ident("option name")?;
    cur.expect(&Tok::Equals)?;
    match key.as_str() {
        "engine" => opts.engine = Some(word(cur)?),
        "schedule" => opts.schedule = Some(word(cur)?),
        "tol" => {
            let v: f64 = number(cur, &key)?;
            if !(v > 0.0 && v.is_finite()) {
                return Err(ParseError::at(pos, "tol must be positive"));
            }
            opts.tol = Some(v);
        }
        "damping" => {
            let v: f64 = number(cur, &key)?;
            if !(0.0..1.0).contains(&v) {
                return Err(ParseError::at(pos, "damping must be in [0, 1)"));
            }
            opts.damping = Some(v);
        }
        "max_iters" => {
            let v: usize = number(cur, &key)?;
            if v == 0 {
                return Err(ParseError::at(pos, "max_iters must be at least 1"));
            }
            opts.max_iters = Some(v);
        }
        "depth_limit" => {
            let v: usize = number(cur, &key)?;
            if v == 0 {
                return Err(ParseError::at(pos, "depth_limit must be at least 1"));
            }
            opts.depth_limit = Some(v);
        }
        other => return Err(ParseError::at(pos, format!("unknown option {other}"))),
    }
    cur.expect(&Tok::Dot)?;
    Ok(())
}

fn ground_prop(cur: &mut Cursor) -> Result<(Proposition, Pos), ParseError> {
    let pos = cur.pos();
    let atom = atom_from(cur)?;
    let prop = atom
        .to_proposition()
        .ok_or_else(|| ParseError::at(pos, format!("{atom} is not ground")))?;
    Ok((prop, pos))
}

pub fn parse_query(text: &str) -> Result<Query, QueryError> {
    let mut cur = Cursor::new(tokenize(text).map_err(ParseError::from)?);
    let mut q = Query::default();
    while !cur.at_eof() {
        let (kw, pos) = cur.ident("assume, ask or option")?;
        match kw.as_str() {
            "assume" => {
                let (prop, ppos) = ground_prop(&mut cur)?;
                cur.expect(&Tok::Equals)?;
                let (v, vpos) = cur.ident("true or false")?;
                let value = match v.as_str() {
                    "true" => true,
                    "false" => false,
                    _ => return Err(ParseError::at(vpos, format!("expected true or false, found '{v}'")).into()),
                };
                cur.expect(&Tok::Dot)?;
                if let Some(&old) = q.assumptions.get(&prop) {
                    if old != value {
                        return Err(ParseError::at(ppos, format!("conflicting assumptions for {prop}")).into());
                    }
                }
                q.positions.entry(prop.clone()).or_insert(ppos);
                q.assumptions.insert(prop, value);
            }
            "ask" => {
                let (prop, ppos) = ground_prop(&mut cur)?;
                cur.expect(&Tok::Question)?;
                q.positions.entry(prop.clone()).or_insert(ppos);
                q.questions.push(prop);
            }
            "option" => option(&mut cur, &mut q.options)?,
            other => {
                return Err(ParseError::at(pos, format!("expected assume, ask or option, found '{other}'")).into())
            }
        }
    }
    if let Some(p) = q.questions.iter().find(|p| q.assumptions.contains_key(*p)) {
        return Err(QueryError::Overlap { prop: p.to_string() });
    }
    Ok(q)
}

#[derive(Debug, Clone)]
pub struct Answer {
    /// One entry per question, in query order.
    pub answers: Vec<(Proposition, f64)>,
    /// Engine actually used: `bp`, `oracle` or `case-split`.
    pub engine: String,
    pub marginals: Marginals,
    pub case_split: Option<CaseSplitReport>,
    /// The graph with the assumptions clamped (no case-split branch applied).
    pub factor_graph: FactorGraph,
    pub graph: PropositionGraph,
}

#[derive(Serialize, Deserialize)]
struct JsonProb {
    prop: String,
    p: f64,
}

#[derive(Serialize, Deserialize)]
struct JsonAnswer {
    answers: Vec<JsonProb>,
    engine: String,
    converged: bool,
    iterations: usize,
    residual: f64,
    warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    branches: Option<u64>,
}

impl Answer {
    pub fn to_json(&self) -> String {
        let out = JsonAnswer {
            answers: self
                .answers
                .iter()
                .map(|(prop, p)| JsonProb {
                    prop: prop.to_string(),
                    p: *p,
                })
                .collect(),
            engine: self.engine.clone(),
            converged: self.marginals.converged,
            iterations: self.marginals.iterations,
            residual: self.marginals.residual,
            warnings: self.marginals.warnings.clone(),
            branches: self.case_split.as_ref().map(|r| r.explored),
        };
        serde_json::to_string(&out).expect("answer serializes")
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (prop, p) in &self.answers {
            s.push_str(&format!("{prop}\t{p}\n"));
        }
        let m = &self.marginals;
        s.push_str(&format!(
            "# engine {} converged {} iterations {} residual {:e}",
            self.engine, m.converged, m.iterations, m.residual
        ));
        if let Some(r) = &self.case_split {
            s.push_str(&format!(" branches {}", r.explored));
        }
        s.push('\n');
        for w in &m.warnings {
            s.push_str(&format!("# warning: {w}\n"));
        }
        s
    }
}

/// Grounds the questions and assumptions, clamps the assumptions and runs
/// the selected engine.
pub fn answer(
    kb: &KnowledgeBase,
    ig: &ImplicationGraph,
    query: &Query,
    weights: Option<&WeightVector>,
    opts: &AnswerOptions,
) -> Result<Answer, QueryError> {
    for prop in query.questions.iter().chain(query.assumptions.keys()) {
        check_node(kb, prop).map_err(|source| QueryError::At {
            pos: query.position(prop).unwrap_or_default(),
            source,
        })?;
    }

    let inner = match opts.engine {
        EngineChoice::Oracle => Engine::Oracle,
        _ => Engine::Bp,
    };
    let split = opts.engine == EngineChoice::CaseSplit || !ig.planning_rules.is_empty();

    let (m, report, pg) = if split {
        let cs = CaseSplitOptions {
            engine: inner,
            bp: opts.bp.clone(),
            oracle_cap: opts.oracle_cap,
            branch_cap: opts.branch_cap,
            tol: opts.tol,
            ground: opts.ground.clone(),
        };
        let r = case_split(ig, kb, &query.questions, &query.assumptions, weights, &cs)?;
        let forced = opts.engine == EngineChoice::CaseSplit;
        if r.instances.is_empty() && !forced {
            let m = r.combined.clone();
            (m, None, r.graph.clone())
        } else {
            (r.combined.clone(), Some(r.clone()), r.graph)
        }
    } else {
        let mut targets = query.questions.clone();
        targets.extend(query.assumptions.keys().cloned());
        let pg = ground(ig, kb, &targets, &opts.ground).map_err(InferenceError::from)?;
        let fg = build(&pg, weights, &query.assumptions).map_err(InferenceError::from)?;
        let mut m = marginals(&fg, inner, &opts.bp, opts.oracle_cap)?;
        m.warnings.extend(pg.warnings.iter().cloned());
        (m, None, pg)
    };

    let factor_graph = build(&pg, weights, &query.assumptions).map_err(InferenceError::from)?;
    let engine = if report.is_some() {
        "case-split".to_owned()
    } else {
        inner.to_string()
    };
    let answers = query
        .questions
        .iter()
        .map(|q| (q.clone(), m.get(q).expect("questions are grounded")))
        .collect();
    Ok(Answer {
        answers,
        engine,
        marginals: m,
        case_split: report,
        factor_graph,
        graph: pg,
    })
}
