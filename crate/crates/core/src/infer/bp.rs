//! Sum-product message passing over binary variables.
//!
//! Messages are pairs `[mass at 0, mass at 1]`, normalized. Variable-to-factor
//! messages are recomputed on demand from the factor-to-variable messages, so
//! only the latter are stored. Conjunction and disjunction messages use closed
//! forms that are linear in the factor's degree.
//!
//! Deterministic potentials are used exactly. When a message or belief has
//! zero total mass (contradictory evidence), it is recomputed with every zero
//! potential raised to `epsilon` and the run is flagged `low_mass`.

use std::fmt;
use std::str::FromStr;

use super::Marginals;
use crate::factor::{sigmoid, FactorGraph, FactorKind, LearnedOr};

type Msg = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Schedule {
    /// Every factor in index order, then in reverse, updating in place.
    #[default]
    Sequential,
    /// All messages of iteration t from the snapshot of iteration t-1.
    Synchronous,
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Schedule::Sequential => "sequential",
            Schedule::Synchronous => "synchronous",
        })
    }
}

impl FromStr for Schedule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sequential" => Ok(Schedule::Sequential),
            "synchronous" => Ok(Schedule::Synchronous),
            other => Err(format!(
                "unknown schedule '{other}' (expected sequential or synchronous)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BpOptions {
    pub schedule: Schedule,
    /// Stop when the largest absolute message change falls below this.
    pub tol: f64,
    pub max_iters: usize,
    /// Weight of the previous message in each update, in `[0, 1)`.
    pub damping: f64,
    pub epsilon: f64,
}

impl Default for BpOptions {
    fn default() -> Self {
        BpOptions {
            schedule: Schedule::Sequential,
            tol: 1e-6,
            max_iters: 100,
            damping: 0.0,
            epsilon: 1e-9,
        }
    }
}

fn normalize(m: Msg) -> Option<Msg> {
    let s = m[0] + m[1];
    (s > 0.0 && s.is_finite()).then(|| [m[0] / s, m[1] / s])
}

/// Products of `xs` excluding each position in turn.
fn leave_one_out_products(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut out = vec![1.0; n];
    let mut acc = 1.0;
    for i in 0..n {
        out[i] = acc;
        acc *= xs[i];
    }
    acc = 1.0;
    for i in (0..n).rev() {
        out[i] *= acc;
        acc *= xs[i];
    }
    out
}

/// Outgoing messages of a deterministic disjunction; slot 0 is the output.
/// Unnormalized; `eps` is the floor for zero potentials.
fn or_messages(incoming: &[Msg], eps: f64, out: &mut Vec<Msg>) {
    let mu_p = incoming[0];
    let z: Vec<f64> = incoming[1..].iter().map(|m| m[0]).collect();
    let all_false: f64 = z.iter().product();
    let smooth = |m: Msg| [eps + (1.0 - eps) * m[0], eps + (1.0 - eps) * m[1]];
    out.push(smooth([all_false, 1.0 - all_false]));
    for z_rest in leave_one_out_products(&z) {
        out.push(smooth([mu_p[0] * z_rest + mu_p[1] * (1.0 - z_rest), mu_p[1]]));
    }
}

/// Outgoing messages of a conjunction; slot 0 is the group node.
fn and_messages(incoming: &[Msg], eps: f64, out: &mut Vec<Msg>) {
    let mu_g = incoming[0];
    let o: Vec<f64> = incoming[1..].iter().map(|m| m[1]).collect();
    let all_true: f64 = o.iter().product();
    let smooth = |m: Msg| [eps + (1.0 - eps) * m[0], eps + (1.0 - eps) * m[1]];
    out.push(smooth([1.0 - all_true, all_true]));
    for o_rest in leave_one_out_products(&o) {
        out.push(smooth([mu_g[0], mu_g[0] * (1.0 - o_rest) + mu_g[1] * o_rest]));
    }
}

/// Distribution of the number of true variables, variable `i` being true
/// with probability `q[i]`.
fn count_distribution(q: &[f64]) -> Vec<f64> {
    let mut d = Vec::with_capacity(q.len() + 1);
    d.push(1.0);
    for &qi in q {
        d.push(0.0);
        for k in (0..d.len()).rev() {
            let stay = if k < d.len() - 1 { d[k] * (1.0 - qi) } else { 0.0 };
            let step = if k > 0 { d[k - 1] * qi } else { 0.0 };
            d[k] = stay + step;
        }
    }
    d
}

fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Joint distribution of the logit offset `sum_l a_l * k_l` over all
/// classes except `skip`, as (offset, mass) pairs.
fn offsets(classes: &[(f64, Vec<f64>)], skip: Option<usize>) -> Vec<(f64, f64)> {
    let mut out = vec![(0.0, 1.0)];
    for (ci, (a, dist)) in classes.iter().enumerate() {
        if Some(ci) == skip {
            continue;
        }
        out = out
            .iter()
            .flat_map(|&(v, m)| dist.iter().enumerate().map(move |(k, d)| (v + a * k as f64, m * d)))
            .collect();
    }
    out
}

/// Outgoing messages of a log-linear disjunction, the conditional
/// `P(p = 1 | g) = sigmoid(c + sum_i a_i g_i)`.
///
/// The logit only depends on how many inputs of each link are true, so the
/// sum over input assignments runs over per-link count distributions.
/// Potentials are strictly positive, so no smoothing is needed.
fn learned_messages(l: &LearnedOr, incoming: &[Msg], out: &mut Vec<Msg>) {
    let mu_p = incoming[0];
    let c = l.base_logit();
    let q: Vec<f64> = incoming[1..].iter().map(|m| m[1]).collect();

    // inputs grouped by link, in order of first appearance
    let mut members: Vec<(f64, Vec<usize>)> = Vec::new();
    let mut class_of = Vec::with_capacity(q.len());
    for (i, link) in l.features.links.iter().enumerate() {
        let ci = match l.features.links[..i].iter().position(|x| x == link) {
            Some(first) => class_of[first],
            None => {
                members.push((l.active[i], Vec::new()));
                members.len() - 1
            }
        };
        members[ci].1.push(i);
        class_of.push(ci);
    }
    let classes: Vec<(f64, Vec<f64>)> = members
        .iter()
        .map(|(a, idx)| {
            let qs: Vec<f64> = idx.iter().map(|&i| q[i]).collect();
            (*a, count_distribution(&qs))
        })
        .collect();

    let mut to_p = [0.0, 0.0];
    for (v, m) in offsets(&classes, None) {
        to_p[0] += m * sigmoid(-(c + v));
        to_p[1] += m * sigmoid(c + v);
    }
    out.push(to_p);
    out.resize(incoming.len(), [0.0, 0.0]);

    for (ci, (a, idx)) in members.iter().enumerate() {
        let others = offsets(&classes, Some(ci));
        let qs: Vec<f64> = idx.iter().map(|&i| q[i]).collect();
        let n = qs.len();
        let mut prefix = vec![vec![1.0]];
        for t in 0..n {
            prefix.push(count_distribution(&qs[..=t]));
        }
        for (t, &input) in idx.iter().enumerate() {
            let rest = convolve(&prefix[t], &count_distribution(&qs[t + 1..]));
            let mut m = [0.0, 0.0];
            for (u, slot) in m.iter_mut().enumerate() {
                for (k, d) in rest.iter().enumerate() {
                    for &(v, w) in &others {
                        let x = c + v + a * (k + u) as f64;
                        *slot += d * w * (mu_p[0] * sigmoid(-x) + mu_p[1] * sigmoid(x));
                    }
                }
            }
            out[input + 1] = m;
        }
    }
}

struct State<'a> {
    fg: &'a FactorGraph,
    offsets: Vec<usize>,
    msgs: Vec<Msg>,
    eps: f64,
    damping: f64,
    low_mass: bool,
    incoming: Vec<Msg>,
    outgoing: Vec<Msg>,
}

impl<'a> State<'a> {
    fn new(fg: &'a FactorGraph, opts: &BpOptions) -> Self {
        let mut offsets = Vec::with_capacity(fg.factors().len() + 1);
        let mut msgs = Vec::new();
        for f in fg.factors() {
            offsets.push(msgs.len());
            match f.kind {
                FactorKind::Prior(p) => msgs.push([1.0 - p, p]),
                FactorKind::Evidence(v) => msgs.push(if v { [0.0, 1.0] } else { [1.0, 0.0] }),
                _ => msgs.extend(std::iter::repeat_n([0.5, 0.5], f.inputs.len() + 1)),
            }
        }
        offsets.push(msgs.len());
        State {
            fg,
            offsets,
            msgs,
            eps: opts.epsilon,
            damping: opts.damping,
            low_mass: false,
            incoming: Vec::new(),
            outgoing: Vec::new(),
        }
    }

    /// Product of all factor messages into `var` except the one from
    /// `(skip_factor, skip_slot)`.
    fn var_message(&mut self, var: usize, skip: Option<(usize, usize)>) -> Msg {
        let mut m = [1.0, 1.0];
        for &(f, s) in self.fg.adjacency(var) {
            if Some((f, s)) == skip {
                continue;
            }
            let x = self.msgs[self.offsets[f] + s];
            m = [m[0] * x[0], m[1] * x[1]];
        }
        if let Some(n) = normalize(m) {
            return n;
        }
        self.low_mass = true;
        let eps = self.eps;
        let mut m = [1.0, 1.0];
        for &(f, s) in self.fg.adjacency(var) {
            if Some((f, s)) == skip {
                continue;
            }
            let x = self.msgs[self.offsets[f] + s];
            m = [m[0] * x[0].max(eps), m[1] * x[1].max(eps)];
        }
        normalize(m).unwrap_or([0.5, 0.5])
    }

    fn gather(&mut self, f: usize) {
        let fg = self.fg;
        let factor = &fg.factors()[f];
        let mut incoming = std::mem::take(&mut self.incoming);
        incoming.clear();
        for (slot, node) in factor.scope().enumerate() {
            incoming.push(self.var_message(fg.var(node), Some((f, slot))));
        }
        self.incoming = incoming;
    }

    fn compute(&mut self, f: usize, incoming: &[Msg]) -> Vec<Msg> {
        let factor = &self.fg.factors()[f];
        let mut out = std::mem::take(&mut self.outgoing);
        let attempt = |eps: f64, out: &mut Vec<Msg>| {
            out.clear();
            match &factor.kind {
                FactorKind::And => and_messages(incoming, eps, out),
                FactorKind::OrDet => or_messages(incoming, eps, out),
                FactorKind::OrLearned(l) => learned_messages(l, incoming, out),
                FactorKind::Prior(_) | FactorKind::Evidence(_) => unreachable!("unary"),
            }
            out.iter_mut().all(|m| match normalize(*m) {
                Some(n) => {
                    *m = n;
                    true
                }
                None => false,
            })
        };
        if !attempt(0.0, &mut out) {
            self.low_mass = true;
            if !attempt(self.eps, &mut out) {
                for m in out.iter_mut() {
                    *m = normalize(*m).unwrap_or([0.5, 0.5]);
                }
            }
        }
        out
    }

    /// Writes new messages for factor `f`; returns the largest change.
    fn commit(&mut self, f: usize, new: &[Msg]) -> f64 {
        let base = self.offsets[f];
        let mut change: f64 = 0.0;
        for (s, m) in new.iter().enumerate() {
            let old = self.msgs[base + s];
            let mut m = *m;
            if self.damping > 0.0 {
                let d = self.damping;
                m = [(1.0 - d) * m[0] + d * old[0], (1.0 - d) * m[1] + d * old[1]];
            }
            change = change.max((m[0] - old[0]).abs()).max((m[1] - old[1]).abs());
            self.msgs[base + s] = m;
        }
        change
    }

    fn update(&mut self, f: usize) -> f64 {
        self.gather(f);
        let incoming = std::mem::take(&mut self.incoming);
        let out = self.compute(f, &incoming);
        let change = self.commit(f, &out);
        self.incoming = incoming;
        self.outgoing = out;
        change
    }

    fn belief(&mut self, var: usize) -> f64 {
        self.var_message(var, None)[1]
    }
}

/// Loopy belief propagation. Messages start uniform (unary factors start at
/// their potentials); iteration stops once the largest message change is
/// below `tol` or after `max_iters` iterations.
pub fn run_bp(fg: &FactorGraph, opts: &BpOptions) -> Marginals {
    let mut st = State::new(fg, opts);
    let active: Vec<usize> = (0..fg.factors().len())
        .filter(|&f| !fg.factors()[f].kind.is_unary())
        .collect();

    let mut iterations = 0;
    let mut residual = 0.0;
    let mut converged = false;
    while iterations < opts.max_iters.max(1) {
        iterations += 1;
        residual = match opts.schedule {
            Schedule::Sequential => {
                let mut r: f64 = 0.0;
                for &f in active.iter().chain(active.iter().rev()) {
                    r = r.max(st.update(f));
                }
                r
            }
            Schedule::Synchronous => {
                let snapshots: Vec<Vec<Msg>> = active
                    .iter()
                    .map(|&f| {
                        st.gather(f);
                        st.incoming.clone()
                    })
                    .collect();
                let fresh: Vec<Vec<Msg>> = active
                    .iter()
                    .zip(&snapshots)
                    .map(|(&f, inc)| {
                        let out = st.compute(f, inc);
                        let v = out.clone();
                        st.outgoing = out;
                        v
                    })
                    .collect();
                let mut r: f64 = 0.0;
                for (&f, m) in active.iter().zip(&fresh) {
                    r = r.max(st.commit(f, m));
                }
                r
            }
        };
        if residual < opts.tol {
            converged = true;
            break;
        }
    }

    let n_p = fg.num_p();
    let probs: Vec<f64> = (0..n_p).map(|v| st.belief(v)).collect();
    let group_probs: Vec<f64> = (n_p..fg.num_variables()).map(|v| st.belief(v)).collect();
    let mut warnings = Vec::new();
    if st.low_mass {
        warnings.push("low_mass: near-zero message mass, evidence may be inconsistent".to_owned());
    }
    if !converged {
        warnings.push(format!(
            "belief propagation did not converge in {iterations} iterations (residual {residual:e})"
        ));
    }
    Marginals {
        propositions: fg.propositions().to_vec(),
        probs,
        group_probs,
        iterations,
        converged,
        residual,
        warnings,
    }
}
