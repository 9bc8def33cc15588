//! Timing of grounding and inference on generated knowledge bases.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use crate::compile::compile;
use crate::factor::build;
use crate::ground::{ground, GroundOptions};
use crate::infer::{case_split, run_bp, BpOptions, CaseSplitOptions, InferenceError};
use crate::kb::{Atom, KnowledgeBase, Predicate, Proposition, Rule, Term, WeightMode};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub kind: &'static str,
    pub size: usize,
    pub propositions: usize,
    pub groups: usize,
    /// Grounding plus factor-graph construction.
    pub ground: Duration,
    pub bp: Duration,
    pub branches: u64,
}

impl BenchRow {
    pub fn total(&self) -> Duration {
        self.ground + self.bp
    }

    pub const CSV_HEADER: &'static str = "kind,size,propositions,groups,ground_ms,bp_ms,total_ms,branches";

    pub fn to_csv(&self) -> String {
        let ms = |d: Duration| d.as_secs_f64() * 1e3;
        format!(
            "{},{},{},{},{:.3},{:.3},{:.3},{}",
            self.kind,
            self.size,
            self.propositions,
            self.groups,
            ms(self.ground),
            ms(self.bp),
            ms(self.total()),
            self.branches
        )
    }
}

fn atom0(name: String) -> Atom {
    Atom::new(name, Vec::new())
}

/// `a0.` and `a<i> <- a<i-1>.` for i in 1..=n.
pub fn chain_kb(n: usize) -> KnowledgeBase {
    let mut kb = KnowledgeBase::new();
    for i in 0..=n {
        kb.declare(Predicate::new(format!("a{i}"), 0));
    }
    kb.add_fact(Proposition::new("a0", Vec::<String>::new()), 1.0);
    for i in 1..=n {
        kb.add_rule(Rule::new(
            format!("r{i}"),
            vec![atom0(format!("a{}", i - 1))],
            vec![atom0(format!("a{i}"))],
            WeightMode::Deterministic,
        ));
    }
    kb
}

/// `k` facts `rain(c<i>)` with `u(X) | w(X) <- rain(X)`, `ok(X) <- u(X)` and
/// `ok(X) <- w(X)`.
pub fn planning_kb(k: usize) -> KnowledgeBase {
    let mut kb = KnowledgeBase::new();
    for p in ["rain", "u", "w", "ok"] {
        kb.declare(Predicate::new(p, 1));
    }
    for i in 0..k {
        kb.add_fact(Proposition::new("rain", [format!("c{i}")]), 1.0);
    }
    let x = || vec![Term::variable("X")];
    kb.add_rule(Rule::new(
        "split",
        vec![Atom::new("rain", x())],
        vec![Atom::new("u", x()), Atom::new("w", x())],
        WeightMode::Deterministic,
    ));
    for (id, via) in [("ok_u", "u"), ("ok_w", "w")] {
        kb.add_rule(Rule::new(
            id,
            vec![Atom::new(via, x())],
            vec![Atom::new("ok", x())],
            WeightMode::Deterministic,
        ));
    }
    kb
}

fn median(mut xs: Vec<BenchRow>) -> BenchRow {
    xs.sort_by_key(|r| r.total());
    xs.swap_remove(xs.len() / 2)
}

/// Grounds `a<n>` in a chain of length `n` and runs one belief-propagation
/// sweep; the row with the median total time of `repeats` runs.
pub fn bench_chain(n: usize, repeats: usize) -> BenchRow {
    assert!(n > 0 && repeats > 0);
    let kb = chain_kb(n);
    let ig = compile(&kb);
    let opts = GroundOptions {
        depth_limit: n + 1,
        ..Default::default()
    };
    let target = [Proposition::new(format!("a{n}"), Vec::<String>::new())];
    let bp = BpOptions {
        max_iters: 1,
        ..Default::default()
    };
    let runs = (0..repeats)
        .map(|_| {
            let t = Instant::now();
            let pg = ground(&ig, &kb, &target, &opts).expect("chain grounds");
            let fg = build(&pg, None, &BTreeMap::new()).expect("no evidence");
            let ground_time = t.elapsed();
            let t = Instant::now();
            let m = run_bp(&fg, &bp);
            let bp_time = t.elapsed();
            debug_assert!(m.probs.iter().all(|&p| p == 1.0));
            BenchRow {
                kind: "chain",
                size: n,
                propositions: pg.propositions().len(),
                groups: pg.groups().len(),
                ground: ground_time,
                bp: bp_time,
                branches: 1,
            }
        })
        .collect();
    median(runs)
}

/// Case split over `k` independent disjunctive instances.
pub fn bench_planning(k: usize, opts: &CaseSplitOptions) -> Result<BenchRow, InferenceError> {
    let kb = planning_kb(k);
    let ig = compile(&kb);
    let targets: Vec<Proposition> = (0..k).map(|i| Proposition::new("ok", [format!("c{i}")])).collect();
    let t = Instant::now();
    let r = case_split(&ig, &kb, &targets, &BTreeMap::new(), None, opts)?;
    Ok(BenchRow {
        kind: "planning",
        size: k,
        propositions: r.graph.propositions().len(),
        groups: r.graph.groups().len(),
        ground: Duration::ZERO,
        bp: t.elapsed(),
        branches: r.explored,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::validate_kb;

    #[test]
    fn chain_shape() {
        let kb = chain_kb(5);
        assert!(validate_kb(&kb).is_empty());
        let r = bench_chain(5, 3);
        assert_eq!((r.propositions, r.groups), (6, 5));
        assert_eq!(r.to_csv().split(',').count(), BenchRow::CSV_HEADER.split(',').count());
    }

    #[test]
    fn planning_branches() {
        assert!(validate_kb(&planning_kb(3)).is_empty());
        let r = bench_planning(3, &CaseSplitOptions::default()).unwrap();
        assert_eq!(r.branches, 8);
    }
}
