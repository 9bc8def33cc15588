//! Seeded generators of random graphs and knowledge bases, for testing and
//! engine comparison.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::factor::{active_feature, bias_feature, build, pattern_feature, FactorGraph, WeightVector};
use crate::ground::{GroundGroup, PropositionGraph};
use crate::infer::{brute_force_marginals, InferenceError};
use crate::kb::{Proposition, WeightMode};

/// A proposition graph together with the weights and evidence it is meant
/// to be built with.
#[derive(Debug, Clone)]
pub struct RandomGraph {
    pub graph: PropositionGraph,
    pub weights: WeightVector,
    pub evidence: BTreeMap<Proposition, bool>,
}

impl RandomGraph {
    pub fn factor_graph(&self) -> FactorGraph {
        build(&self.graph, Some(&self.weights), &self.evidence).expect("evidence is on graph nodes")
    }

    /// Drops the evidence when it has probability zero.
    fn make_consistent(&mut self, cap: usize) {
        if matches!(
            brute_force_marginals(&self.factor_graph(), cap),
            Err(InferenceError::InconsistentEvidence)
        ) {
            self.evidence.clear();
        }
    }
}

const LINKS: usize = 4;

fn node(i: usize) -> Proposition {
    Proposition::new(format!("n{i}"), Vec::<String>::new())
}

fn random_prior(rng: &mut impl Rng) -> f64 {
    match rng.gen_range(0..10) {
        0 => 1.0,
        1 => 0.0,
        _ => rng.gen_range(0.05..0.95),
    }
}

/// Pattern weights in `±pattern`, biases in `±1`, activations in `active`.
fn random_weights(rng: &mut impl Rng, num_props: usize, pattern: f64, active: (f64, f64)) -> WeightVector {
    let mut w = WeightVector::new();
    for i in 0..num_props {
        w.set(pattern_feature(&node(i).signature()), rng.gen_range(-pattern..pattern));
    }
    for l in 0..LINKS {
        w.set(bias_feature(&format!("r{l}")), rng.gen_range(-1.0..1.0));
        w.set(active_feature(&format!("r{l}")), rng.gen_range(active.0..active.1));
    }
    w
}

fn random_evidence(rng: &mut impl Rng, pg: &PropositionGraph) -> BTreeMap<Proposition, bool> {
    let mut ev = BTreeMap::new();
    if rng.gen_bool(0.4) {
        let i = rng.gen_range(0..pg.propositions().len());
        ev.insert(pg.propositions()[i].clone(), rng.gen_bool(0.5));
    }
    ev
}

/// A graph whose factor graph is a tree: every proposition is a member of
/// at most one group. At most `max_vars` propositions and groups in total;
/// learned and deterministic disjunctions are mixed.
pub fn random_tree(rng: &mut impl Rng, max_vars: usize) -> RandomGraph {
    assert!(max_vars >= 3, "a tree needs room for one group");
    let mut leaves: BTreeMap<usize, f64> = BTreeMap::new();
    let mut groups: Vec<(usize, Vec<usize>, usize, WeightMode)> = Vec::new();
    let mut next = 1;
    let mut vars = 1;
    let mut queue = vec![0usize];
    while let Some(d) = queue.pop() {
        let mode = if rng.gen_bool(0.5) {
            WeightMode::Learned
        } else {
            WeightMode::Deterministic
        };
        let wanted = rng.gen_range(1..=2);
        let mut made = 0;
        for _ in 0..wanted {
            let m = rng.gen_range(1..=2);
            if vars + 1 + m > max_vars {
                break;
            }
            vars += 1 + m;
            let members: Vec<usize> = (next..next + m).collect();
            next += m;
            for &c in &members {
                if rng.gen_bool(0.5) && vars + 2 <= max_vars {
                    queue.push(c);
                } else {
                    leaves.insert(c, random_prior(rng));
                }
            }
            groups.push((d, members, rng.gen_range(0..LINKS), mode));
            made += 1;
        }
        if made == 0 {
            leaves.insert(d, random_prior(rng));
        }
    }

    let mut pg = PropositionGraph::new();
    for i in 0..next {
        match leaves.get(&i) {
            Some(&p) => pg.add_leaf(node(i), p),
            None => pg.add_proposition(node(i)),
        };
    }
    for (d, members, link, mode) in groups {
        pg.add_group(GroundGroup {
            members: members.into_iter().map(node).collect(),
            source_rule: format!("r{link}"),
            conclusion: node(d),
            weight_mode: mode,
        });
    }
    let mut g = RandomGraph {
        weights: random_weights(rng, next, 2.0, (-1.0, 3.0)),
        evidence: random_evidence(rng, &pg),
        graph: pg,
    };
    g.make_consistent(64);
    g
}

/// A graph with shared members, so its factor graph has cycles. At most
/// `max_vars` propositions and groups in total. Leaf priors are kept away
/// from 0 and 1; each proposition's disjunction is learned with probability
/// `learned_share` and deterministic otherwise.
pub fn random_loopy(rng: &mut impl Rng, max_vars: usize, learned_share: f64) -> RandomGraph {
    loop {
        let n_leaves = rng.gen_range(2..=4);
        let mut pg = PropositionGraph::new();
        for i in 0..n_leaves {
            pg.add_leaf(node(i), rng.gen_range(0.1..0.9));
        }
        let mut n = n_leaves;
        let mut vars = n_leaves;
        while vars + 2 <= max_vars {
            let k = rng.gen_range(1..=2).min((max_vars - vars - 1).max(1));
            if vars + 1 + k > max_vars {
                break;
            }
            let mode = if rng.gen_bool(learned_share) {
                WeightMode::Learned
            } else {
                WeightMode::Deterministic
            };
            vars += 1;
            // sibling groups draw disjoint members
            let mut pool: Vec<usize> = (0..n).collect();
            pool.shuffle(rng);
            for _ in 0..k {
                let size = rng.gen_range(1..=2).min(pool.len());
                if size == 0 {
                    break;
                }
                let members: Vec<usize> = pool.split_off(pool.len() - size);
                pg.add_group(GroundGroup {
                    members: members.into_iter().map(node).collect(),
                    source_rule: format!("r{}", rng.gen_range(0..LINKS)),
                    conclusion: node(n),
                    weight_mode: mode,
                });
                vars += 1;
            }
            n += 1;
        }
        let mut g = RandomGraph {
            weights: random_weights(rng, n, 1.5, (-1.0, 2.0)),
            evidence: random_evidence(rng, &pg),
            graph: pg,
        };
        let fg = g.factor_graph();
        if fg.num_variables() <= max_vars && has_cycle(&fg) {
            g.make_consistent(max_vars);
            return g;
        }
    }
}

/// Whether the variable/factor incidence graph contains a cycle.
pub fn has_cycle(fg: &FactorGraph) -> bool {
    let n = fg.num_variables();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for f in fg.factors() {
        let scope: Vec<usize> = f.scope().map(|v| fg.var(v)).collect();
        // a factor joins its scope; a cycle closes when two already connect
        for w in scope.windows(2) {
            let (a, b) = (find(&mut parent, w[0]), find(&mut parent, w[1]));
            if a == b {
                return true;
            }
            parent[a] = b;
        }
    }
    false
}

/// Source text of a random acyclic Datalog knowledge base with rules whose
/// premise variables all occur in the conclusion. Up to 5 constants, up to
/// 10 rules, every fact with prior 1.
pub fn random_datalog_kb(rng: &mut impl Rng) -> String {
    let n_consts = rng.gen_range(1..=5);
    let consts: Vec<String> = (0..n_consts).map(|i| format!("c{i}")).collect();
    let n_preds = rng.gen_range(3..=7);
    let preds: Vec<(String, usize)> = (0..n_preds).map(|i| (format!("q{i}"), rng.gen_range(0..=2))).collect();
    let n_base = rng.gen_range(1..=2.min(n_preds - 1));

    let mut src = String::new();
    for (name, arity) in &preds {
        src.push_str(&format!("pred {name}/{arity}.\n"));
    }
    let ground = |rng: &mut dyn rand::RngCore, arity: usize| -> Vec<String> {
        (0..arity)
            .map(|_| consts[rng.gen_range(0..consts.len())].clone())
            .collect()
    };
    let render = |name: &str, args: &[String]| {
        if args.is_empty() {
            name.to_owned()
        } else {
            format!("{name}({})", args.join(","))
        }
    };

    let mut facts = std::collections::BTreeSet::new();
    for _ in 0..rng.gen_range(1..=8) {
        // mostly base predicates, occasionally a derived one
        let i = if rng.gen_bool(0.85) {
            rng.gen_range(0..n_base)
        } else {
            rng.gen_range(0..n_preds)
        };
        let (name, arity) = &preds[i];
        facts.insert(render(name, &ground(rng, *arity)));
    }
    for f in &facts {
        src.push_str(f);
        src.push_str(".\n");
    }

    let vars = ["X", "Y", "Z"];
    for _ in 0..rng.gen_range(1..=10) {
        let head = rng.gen_range(n_base..n_preds);
        let (hname, harity) = &preds[head];
        let mut hargs: Vec<String> = (0..*harity)
            .map(|_| {
                if rng.gen_bool(0.8) {
                    vars[rng.gen_range(0..vars.len())].to_owned()
                } else {
                    consts[rng.gen_range(0..consts.len())].clone()
                }
            })
            .collect();
        let head_vars: Vec<String> = {
            let mut v: Vec<String> = hargs
                .iter()
                .filter(|a| a.starts_with(char::is_uppercase))
                .cloned()
                .collect();
            v.sort();
            v.dedup();
            v
        };
        let mut body: Vec<(String, Vec<String>)> = Vec::new();
        for _ in 0..rng.gen_range(1..=3) {
            let (bname, barity) = &preds[rng.gen_range(0..head)];
            let args = (0..*barity)
                .map(|_| {
                    if !head_vars.is_empty() && rng.gen_bool(0.7) {
                        head_vars[rng.gen_range(0..head_vars.len())].clone()
                    } else {
                        consts[rng.gen_range(0..consts.len())].clone()
                    }
                })
                .collect();
            body.push((bname.clone(), args));
        }
        // make the rule safe: every head variable must occur in the body
        let carriers: Vec<&(String, usize)> = preds[..head].iter().filter(|(_, a)| *a > 0).collect();
        for v in &head_vars {
            if body.iter().any(|(_, a)| a.contains(v)) {
                continue;
            }
            if let Some((name, arity)) = carriers.choose(rng) {
                body.push((name.clone(), vec![v.clone(); *arity]));
            } else {
                let c = consts[rng.gen_range(0..consts.len())].clone();
                for a in hargs.iter_mut().filter(|a| *a == v) {
                    *a = c.clone();
                }
            }
        }
        let body_text: Vec<String> = body.iter().map(|(n, a)| render(n, a)).collect();
        src.push_str(&format!("{} <- {}.\n", render(hname, &hargs), body_text.join(", ")));
    }
    src
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compile::compile;
    use crate::kb::{parse_kb, validate_kb};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn trees_are_trees() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let g = random_tree(&mut rng, 20);
            let fg = g.factor_graph();
            assert!(fg.num_variables() <= 20);
            assert!(!has_cycle(&fg));
            g.graph.check().unwrap();
        }
    }

    #[test]
    fn loopy_graphs_have_cycles() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..30 {
            let g = random_loopy(&mut rng, 15, 0.5);
            let fg = g.factor_graph();
            assert!(fg.num_variables() <= 15);
            assert!(has_cycle(&fg));
        }
    }

    #[test]
    fn datalog_kbs_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let src = random_datalog_kb(&mut rng);
            let kb = parse_kb(&src).unwrap_or_else(|e| panic!("{e}\n{src}"));
            assert!(validate_kb(&kb).is_empty(), "{src}\n{:?}", validate_kb(&kb));
            assert!(kb.rules().iter().all(|r| r.existentials.is_empty()), "{src}");
            let _ = compile(&kb);
        }
    }
}
