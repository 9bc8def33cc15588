mod common;

use std::collections::BTreeSet;

use hornbp::compile::compile;
use hornbp::kb::{parse_kb, Proposition};
use hornbp::learn::{best, fit_weights, rescore_parses, FitOptions, ParseCandidate, TrainingExample};
use hornbp::query::AnswerOptions;
use hornbp::random::random_datalog_kb;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_dataset(rng: &mut impl Rng) -> Vec<TrainingExample> {
    let links = ["r0", "r1", "r2", "r3"];
    (0..rng.gen_range(1..40))
        .map(|_| {
            let n = rng.gen_range(1..=3);
            let groups = (0..n)
                .map(|_| (links[rng.gen_range(0..links.len())].to_owned(), rng.gen_bool(0.5)))
                .collect();
            let target = Proposition::new(["y", "z"][rng.gen_range(0..2)], Vec::<String>::new());
            let mut ex = TrainingExample::new(target, rng.gen_bool(0.5), groups);
            ex.weight = rng.gen_range(0.1..2.0);
            ex
        })
        .collect()
}

#[test]
fn safeguarded_objective_never_decreases() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..50 {
        let data = random_dataset(&mut rng);
        let opts = FitOptions {
            lr: rng.gen_range(0.5..20.0),
            epochs: 60,
            l2: if rng.gen_bool(0.5) { 0.0 } else { 0.05 },
            safeguard: true,
        };
        let report = fit_weights(&data, &opts).unwrap();
        for w in report.trace.windows(2) {
            assert!(w[1] >= w[0], "{} -> {}", w[0], w[1]);
        }
        assert!(report.log_likelihood >= report.trace[0] - 1e-12 || opts.l2 > 0.0);
    }
}

fn candidates(rng: &mut impl Rng, atoms: &[Proposition], n: usize) -> Vec<ParseCandidate> {
    (0..n)
        .map(|i| {
            let k = rng.gen_range(1..=2);
            ParseCandidate {
                id: format!("c{i}"),
                score: rng.gen_range(0.01..1.0),
                assume: atoms.choose_multiple(rng, k).cloned().collect(),
                ask: Vec::new(),
            }
        })
        .collect()
}

#[test]
fn refuted_candidates_get_zero_posterior() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let mut refuted = 0;
    for _ in 0..60 {
        let kb = parse_kb(&random_datalog_kb(&mut rng)).unwrap();
        let ig = compile(&kb);
        let atoms = common::all_ground_atoms(&kb, &common::constants(&kb));
        let derived = common::forward_closure(&kb);
        let mut cands = candidates(&mut rng, &atoms, 4);
        // one candidate that the reference evaluator supports
        cands.push(ParseCandidate {
            id: "sure".into(),
            score: 0.5,
            assume: vec![derived.iter().next().unwrap().clone()],
            ask: Vec::new(),
        });
        let r = rescore_parses(&cands, &kb, &ig, None, &AnswerOptions::default()).unwrap();
        let total: f64 = r.iter().map(|c| c.posterior).sum();
        assert!((total - 1.0).abs() < 1e-12);
        for (c, out) in cands.iter().zip(&r) {
            let supported = c.assume.iter().all(|a| derived.contains(a));
            assert_eq!(out.posterior > 0.0, supported, "{} {:?}\n{kb}", c.id, c.assume);
            refuted += usize::from(!supported);
        }
    }
    assert!(refuted > 20);
}

#[test]
fn rescaling_scores_changes_nothing() {
    let kb =
        parse_kb("pred a/1. pred b/1. pred c/1. 0.2 :: a(x). 0.7 :: b(x). 0.5 :: a(y). c(X) <- a(X), b(X).").unwrap();
    let ig = compile(&kb);
    let atoms = common::all_ground_atoms(&kb, &common::constants(&kb));
    let mut rng = ChaCha8Rng::seed_from_u64(47);
    for _ in 0..30 {
        let cands = candidates(&mut rng, &atoms, 5);
        let Ok(base) = rescore_parses(&cands, &kb, &ig, None, &AnswerOptions::default()) else {
            continue;
        };
        for scale in [1e-6, 0.3, 7.0, 1e6] {
            let scaled: Vec<ParseCandidate> = cands
                .iter()
                .map(|c| ParseCandidate {
                    score: c.score * scale,
                    ..c.clone()
                })
                .collect();
            let r = rescore_parses(&scaled, &kb, &ig, None, &AnswerOptions::default()).unwrap();
            assert_eq!(best(&r), best(&base));
            for (a, b) in r.iter().zip(&base) {
                assert!((a.posterior - b.posterior).abs() <= 1e-12);
            }
        }
        let ids: BTreeSet<&str> = base.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids.len(), cands.len());
    }
}
