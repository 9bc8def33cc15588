//! Weight learning for learned disjunctions, and rescoring of candidate
//! parses by their logical probability.

mod data;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub use data::{parse_candidates, parse_training_data, training_data_to_jsonl, DataError};

use crate::compile::ImplicationGraph;
use crate::factor::{active_feature, bias_feature, pattern_feature, sigmoid, WeightVector};
use crate::kb::{KnowledgeBase, Proposition};
use crate::query::{answer, AnswerOptions, Query, QueryError};

/// One observation of a disjunction: the conclusion's value and the value of
/// each licensing group, keyed by the group's source rule.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub target: Proposition,
    pub value: bool,
    pub groups: Vec<(String, bool)>,
    pub weight: f64,
}

impl TrainingExample {
    pub fn new(target: Proposition, value: bool, groups: Vec<(String, bool)>) -> Self {
        TrainingExample {
            target,
            value,
            groups,
            weight: 1.0,
        }
    }

    /// Feature counts at `p = 1`; all features vanish at `p = 0`.
    fn features(&self) -> Vec<(String, f64)> {
        let mut counts: BTreeMap<String, f64> = BTreeMap::new();
        counts.insert(pattern_feature(&self.target.signature()), 1.0);
        for (link, g) in &self.groups {
            *counts.entry(bias_feature(link)).or_insert(0.0) += 1.0;
            if *g {
                *counts.entry(active_feature(link)).or_insert(0.0) += 1.0;
            }
        }
        counts.into_iter().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LearnError {
    #[error("no training examples")]
    EmptyData,
    #[error("{0}")]
    InvalidOption(String),
    #[error("training diverged (non-finite log-likelihood); try a smaller learning rate than {lr}")]
    Diverged { lr: f64 },
    #[error("no viable candidate: every candidate has zero posterior mass")]
    NoViableCandidate,
    #[error("no candidates")]
    NoCandidates,
    #[error("candidate {id}: {source}")]
    Candidate { id: String, source: QueryError },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub lr: f64,
    pub epochs: usize,
    pub l2: f64,
    /// Halve the learning rate and retry whenever a step lowers the objective.
    pub safeguard: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            lr: 0.5,
            epochs: 200,
            l2: 0.0,
            safeguard: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub weights: WeightVector,
    /// Weighted mean log-likelihood of the final weights (no penalty).
    pub log_likelihood: f64,
    /// Penalized objective before training and after each epoch.
    pub trace: Vec<f64>,
}

/// Feature counts, label and example weight.
type Row = (Vec<(usize, f64)>, bool, f64);

/// Examples with features resolved to dense indices.
struct Compiled {
    names: Vec<String>,
    rows: Vec<Row>,
    total_weight: f64,
}

impl Compiled {
    fn new(data: &[TrainingExample]) -> Self {
        let mut index: BTreeMap<String, usize> = BTreeMap::new();
        let feats: Vec<Vec<(String, f64)>> = data.iter().map(|e| e.features()).collect();
        for f in feats.iter().flatten() {
            let n = index.len();
            index.entry(f.0.clone()).or_insert(n);
        }
        let mut names = vec![String::new(); index.len()];
        for (name, &i) in &index {
            names[i] = name.clone();
        }
        let rows = data
            .iter()
            .zip(feats)
            .map(|(e, fs)| {
                let fs = fs.into_iter().map(|(n, c)| (index[&n], c)).collect();
                (fs, e.value, e.weight)
            })
            .collect();
        Compiled {
            names,
            rows,
            total_weight: data.iter().map(|e| e.weight).sum(),
        }
    }

    fn dense(&self, w: &WeightVector) -> Vec<f64> {
        self.names.iter().map(|n| w.get(n)).collect()
    }

    fn sparse(&self, w: &[f64]) -> WeightVector {
        self.names.iter().cloned().zip(w.iter().copied()).collect()
    }

    /// `ln sigmoid(z)` for `y = 1`, `ln sigmoid(-z)` for `y = 0`.
    fn log_likelihood(&self, w: &[f64]) -> f64 {
        if self.total_weight <= 0.0 {
            return 0.0;
        }
        let mut s = 0.0;
        for (fs, y, wt) in &self.rows {
            let z: f64 = fs.iter().map(|&(i, c)| w[i] * c).sum();
            let m = if *y { -z } else { z };
            // -softplus(m), stable for large |m|
            s -= wt * (m.max(0.0) + (-m.abs()).exp().ln_1p());
        }
        s / self.total_weight
    }

    fn objective(&self, w: &[f64], l2: f64) -> f64 {
        self.log_likelihood(w) - 0.5 * l2 * w.iter().map(|x| x * x).sum::<f64>()
    }

    fn gradient(&self, w: &[f64], l2: f64) -> Vec<f64> {
        let mut g = vec![0.0; w.len()];
        if self.total_weight > 0.0 {
            for (fs, y, wt) in &self.rows {
                let z: f64 = fs.iter().map(|&(i, c)| w[i] * c).sum();
                let r = wt * (f64::from(u8::from(*y)) - sigmoid(z)) / self.total_weight;
                for &(i, c) in fs {
                    g[i] += r * c;
                }
            }
        }
        for (gi, wi) in g.iter_mut().zip(w) {
            *gi -= l2 * wi;
        }
        g
    }
}

/// Full-batch gradient ascent on the weighted mean conditional
/// log-likelihood minus `l2 / 2 * |w|^2`, from all-zero weights.
pub fn fit_weights(data: &[TrainingExample], opts: &FitOptions) -> Result<FitReport, LearnError> {
    if data.is_empty() {
        return Err(LearnError::EmptyData);
    }
    if !(opts.lr > 0.0 && opts.lr.is_finite()) {
        return Err(LearnError::InvalidOption(format!(
            "learning rate {} must be positive",
            opts.lr
        )));
    }
    if !(opts.l2 >= 0.0 && opts.l2.is_finite()) {
        return Err(LearnError::InvalidOption(format!("l2 {} must be nonnegative", opts.l2)));
    }
    let c = Compiled::new(data);
    let mut w = vec![0.0; c.names.len()];
    let mut obj = c.objective(&w, opts.l2);
    let mut trace = vec![obj];
    let mut lr = opts.lr;

    'epochs: for _ in 0..opts.epochs {
        let g = c.gradient(&w, opts.l2);
        loop {
            let next: Vec<f64> = w.iter().zip(&g).map(|(wi, gi)| wi + lr * gi).collect();
            let next_obj = c.objective(&next, opts.l2);
            if !next_obj.is_finite() || next.iter().any(|x| !x.is_finite()) {
                if opts.safeguard && lr > 1e-12 {
                    lr /= 2.0;
                    continue;
                }
                return Err(LearnError::Diverged { lr: opts.lr });
            }
            if opts.safeguard && next_obj < obj {
                lr /= 2.0;
                if lr < 1e-12 {
                    // no ascent direction left at this precision
                    trace.push(obj);
                    break 'epochs;
                }
                continue;
            }
            w = next;
            obj = next_obj;
            trace.push(obj);
            break;
        }
    }

    Ok(FitReport {
        log_likelihood: c.log_likelihood(&w),
        weights: c.sparse(&w),
        trace,
    })
}

/// Weighted mean log-likelihood of `data` under `w`.
pub fn log_likelihood(data: &[TrainingExample], w: &WeightVector) -> f64 {
    let c = Compiled::new(data);
    c.log_likelihood(&c.dense(w))
}

/// Analytic gradient of [`log_likelihood`] minus the L2 penalty, over the
/// features that occur in `data`.
pub fn gradient(data: &[TrainingExample], w: &WeightVector, l2: f64) -> WeightVector {
    let c = Compiled::new(data);
    c.sparse(&c.gradient(&c.dense(w), l2))
}

/// Largest relative error between the analytic gradient of the
/// log-likelihood and central finite differences with step `h`.
pub fn grad_check(data: &[TrainingExample], w: &WeightVector, h: f64) -> f64 {
    let c = Compiled::new(data);
    let mut x = c.dense(w);
    let analytic = c.gradient(&x, 0.0);
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let up = c.log_likelihood(&x);
        x[i] = orig - h;
        let down = c.log_likelihood(&x);
        x[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}

/// A parse of the next sentence as proposed by an external parser.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseCandidate {
    pub id: String,
    /// Parser score, proportional to the parser's probability.
    pub score: f64,
    pub assume: Vec<Proposition>,
    pub ask: Vec<Proposition>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rescored {
    pub id: String,
    pub score: f64,
    /// Joint probability of the candidate's assumptions.
    pub logical_prior: f64,
    pub posterior: f64,
}

/// Joint probability that every proposition in `assume` is true, by the
/// chain rule: each factor is the marginal of one proposition with the
/// previous ones clamped true.
pub fn logical_prior(
    kb: &KnowledgeBase,
    ig: &ImplicationGraph,
    weights: Option<&WeightVector>,
    opts: &AnswerOptions,
    assume: &[Proposition],
) -> Result<f64, QueryError> {
    let mut clamped = BTreeMap::new();
    let mut joint = 1.0;
    for prop in assume {
        if clamped.contains_key(prop) {
            continue;
        }
        let q = Query::new(clamped.clone(), vec![prop.clone()]);
        joint *= answer(kb, ig, &q, weights, opts)?.answers[0].1;
        if joint == 0.0 {
            break;
        }
        clamped.insert(prop.clone(), true);
    }
    Ok(joint)
}

/// Posterior over candidates proportional to parser score times logical
/// prior, in input order.
pub fn rescore_parses(
    candidates: &[ParseCandidate],
    kb: &KnowledgeBase,
    ig: &ImplicationGraph,
    weights: Option<&WeightVector>,
    opts: &AnswerOptions,
) -> Result<Vec<Rescored>, LearnError> {
    if candidates.is_empty() {
        return Err(LearnError::NoCandidates);
    }
    let mut out = Vec::with_capacity(candidates.len());
    for c in candidates {
        let prior = logical_prior(kb, ig, weights, opts, &c.assume).map_err(|source| LearnError::Candidate {
            id: c.id.clone(),
            source,
        })?;
        out.push(Rescored {
            id: c.id.clone(),
            score: c.score,
            logical_prior: prior,
            posterior: 0.0,
        });
    }
    // scale scores by the largest so the result does not depend on their unit
    let top = out.iter().map(|r| r.score).fold(0.0, f64::max);
    let mass: Vec<f64> = out
        .iter()
        .map(|r| {
            if top > 0.0 {
                r.score / top * r.logical_prior
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = mass.iter().sum();
    if total <= 0.0 {
        return Err(LearnError::NoViableCandidate);
    }
    for (r, m) in out.iter_mut().zip(mass) {
        r.posterior = m / total;
    }
    Ok(out)
}

/// Index of the most probable candidate. Posteriors within a relative 1e-12
/// tie; ties go to the higher parser score, then the smaller id.
pub fn best(rescored: &[Rescored]) -> Option<usize> {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs());
    (0..rescored.len()).reduce(|i, j| {
        let (a, b) = (&rescored[i], &rescored[j]);
        let j_wins = if !close(a.posterior, b.posterior) {
            b.posterior > a.posterior
        } else if !close(a.score, b.score) {
            b.score > a.score
        } else {
            b.id < a.id
        };
        if j_wins {
            j
        } else {
            i
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EmMode {
    #[default]
    OneBest,
    NBest,
}

impl fmt::Display for EmMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmMode::OneBest => "1-best",
            EmMode::NBest => "n-best",
        })
    }
}

impl FromStr for EmMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "1-best" => Ok(EmMode::OneBest),
            "n-best" => Ok(EmMode::NBest),
            other => Err(format!("unknown mode '{other}' (expected 1-best or n-best)")),
        }
    }
}

/// Training examples implied by a candidate: for every assumed proposition
/// with licensing groups, the proposition is observed true and each group
/// is observed at its marginal thresholded at 0.5.
fn examples_of(
    c: &ParseCandidate,
    weight: f64,
    kb: &KnowledgeBase,
    ig: &ImplicationGraph,
    weights: Option<&WeightVector>,
    opts: &AnswerOptions,
) -> Result<Vec<TrainingExample>, LearnError> {
    let assumptions = c.assume.iter().map(|p| (p.clone(), true)).collect();
    let a = answer(kb, ig, &Query::new(assumptions, Vec::new()), weights, opts).map_err(|source| {
        LearnError::Candidate {
            id: c.id.clone(),
            source,
        }
    })?;
    let mut out = Vec::new();
    let mut seen = Vec::new();
    for prop in &c.assume {
        if seen.contains(&prop) {
            continue;
        }
        seen.push(prop);
        let Some(i) = a.graph.index_of(prop) else { continue };
        let groups: Vec<(String, bool)> = a
            .graph
            .licensing(i)
            .iter()
            .map(|&g| {
                let on = a.marginals.group_probs.get(g).is_some_and(|&p| p >= 0.5);
                (a.graph.groups()[g].source_rule.clone(), on)
            })
            .collect();
        if groups.is_empty() {
            continue;
        }
        out.push(TrainingExample {
            target: prop.clone(),
            value: true,
            groups,
            weight,
        });
    }
    Ok(out)
}

/// One expectation step: rescore each candidate list, then emit training
/// examples from the best candidate (`1-best`) or from every candidate
/// weighted by its posterior (`n-best`).
pub fn em_step(
    corpus: &[Vec<ParseCandidate>],
    mode: EmMode,
    kb: &KnowledgeBase,
    ig: &ImplicationGraph,
    weights: Option<&WeightVector>,
    opts: &AnswerOptions,
) -> Result<Vec<TrainingExample>, LearnError> {
    let mut out = Vec::new();
    for list in corpus {
        let rescored = rescore_parses(list, kb, ig, weights, opts)?;
        match mode {
            EmMode::OneBest => {
                let i = best(&rescored).expect("nonempty");
                out.extend(examples_of(&list[i], 1.0, kb, ig, weights, opts)?);
            }
            EmMode::NBest => {
                for (c, r) in list.iter().zip(&rescored) {
                    if r.posterior > 0.0 {
                        out.extend(examples_of(c, r.posterior, kb, ig, weights, opts)?);
                    }
                }
            }
        }
    }
    Ok(out)
}
