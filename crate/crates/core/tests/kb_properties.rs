use std::collections::{BTreeMap, BTreeSet};

use hornbp::kb::{
    parse_kb, validate_kb, Atom, DiagnosticKind, KnowledgeBase, Predicate, Proposition, Rule, Term, WeightMode,
};
use proptest::prelude::*;

const CONSTS: [&str; 4] = ["a", "b", "c", "d"];
const VARS: [&str; 3] = ["X", "Y", "Z"];

fn render(name: &str, args: &[String]) -> String {
    if args.is_empty() {
        name.to_owned()
    } else {
        format!("{name}({})", args.join(", "))
    }
}

#[derive(Debug, Clone)]
struct RuleSpec {
    heads: Vec<(usize, Vec<usize>)>,
    body: Vec<(usize, Vec<usize>)>,
    learned: bool,
    labelled: bool,
}

/// Term index: below 3 is a variable, otherwise a constant.
fn term(i: usize) -> String {
    if i < VARS.len() {
        VARS[i].to_owned()
    } else {
        CONSTS[i - VARS.len()].to_owned()
    }
}

fn kb_text(arities: &[usize], facts: &BTreeMap<Proposition, f64>, rules: &[RuleSpec]) -> String {
    let mut s = String::new();
    for (i, a) in arities.iter().enumerate() {
        s.push_str(&format!("pred p{i}/{a}.\n"));
    }
    for (prop, prior) in facts {
        s.push_str(&format!("{prior} :: {}.\n", render(&prop.predicate, &prop.args)));
    }
    for (k, r) in rules.iter().enumerate() {
        let body: Vec<String> = r
            .body
            .iter()
            .map(|(p, args)| {
                let args: Vec<String> = args.iter().take(arities[*p]).map(|&t| term(t)).collect();
                render(&format!("p{p}"), &args)
            })
            .collect();
        // head terms draw from the body's variables so the rule is safe
        let body_vars: Vec<String> = r
            .body
            .iter()
            .flat_map(|(p, args)| {
                args.iter()
                    .take(arities[*p])
                    .filter(|&&t| t < VARS.len())
                    .map(|&t| term(t))
            })
            .collect();
        let heads: Vec<String> = r
            .heads
            .iter()
            .map(|(p, args)| {
                let args: Vec<String> = args
                    .iter()
                    .take(arities[*p])
                    .map(|&t| {
                        if t < VARS.len() && !body_vars.is_empty() {
                            body_vars[t % body_vars.len()].clone()
                        } else {
                            CONSTS[t % CONSTS.len()].to_owned()
                        }
                    })
                    .collect();
                render(&format!("p{p}"), &args)
            })
            .collect();
        if r.labelled {
            s.push_str(&format!("[rule{k}] "));
        }
        if r.learned {
            s.push_str("learned ");
        }
        s.push_str(&format!("{} <- {}.\n", heads.join(" | "), body.join(", ")));
    }
    s
}

fn atom_spec(n_preds: usize) -> impl Strategy<Value = (usize, Vec<usize>)> {
    (0..n_preds, prop::collection::vec(0..VARS.len() + CONSTS.len(), 2))
}

fn kb_strategy() -> impl Strategy<Value = (String, BTreeMap<Proposition, f64>)> {
    prop::collection::vec(0usize..=2, 1..6)
        .prop_flat_map(|arities| {
            let n = arities.len();
            let prior = prop_oneof![Just(1.0), 0.0f64..=1.0, Just(0.0)];
            let facts = prop::collection::btree_map((0..n, prop::collection::vec(0..CONSTS.len(), 2)), prior, 0..8);
            let rule = (
                prop::collection::vec(atom_spec(n), 1..3),
                prop::collection::vec(atom_spec(n), 1..4),
                any::<bool>(),
                any::<bool>(),
            )
                .prop_map(|(heads, body, learned, labelled)| RuleSpec {
                    heads,
                    body,
                    learned,
                    labelled,
                });
            (Just(arities), facts, prop::collection::vec(rule, 0..6))
        })
        .prop_map(|(arities, facts, rules)| {
            // facts differing only past their predicate's arity collapse
            let mut priors = BTreeMap::new();
            for ((p, args), prior) in facts {
                let args: Vec<&str> = args.iter().take(arities[p]).map(|&c| CONSTS[c]).collect();
                priors.insert(Proposition::new(format!("p{p}"), args), prior);
            }
            (kb_text(&arities, &priors, &rules), priors)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn serialized_kb_reparses_equal((text, priors) in kb_strategy()) {
        let kb = parse_kb(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        prop_assert!(validate_kb(&kb).is_empty());
        let again = parse_kb(&kb.to_string()).map_err(|e| TestCaseError::fail(format!("{e}\n{kb}")))?;
        prop_assert_eq!(&kb, &again);
        for (prop, prior) in &priors {
            prop_assert_eq!(kb.fact(prop).unwrap().prior.to_bits(), prior.to_bits());
            prop_assert_eq!(again.fact(prop).unwrap().prior.to_bits(), prior.to_bits());
        }
    }

    #[test]
    fn safety_matches_variable_inclusion(
        head in prop::collection::vec(0..VARS.len() + 2, 0..3),
        body in prop::collection::vec(prop::collection::vec(0..VARS.len() + 2, 1..3), 1..3),
    ) {
        let to_term = |i: usize| if i < VARS.len() { Term::variable(VARS[i]) } else { Term::constant(CONSTS[i - VARS.len()]) };
        let mut kb = KnowledgeBase::new();
        kb.declare(Predicate::new("h", head.len()));
        let mut premise = Vec::new();
        for (k, args) in body.iter().enumerate() {
            kb.declare(Predicate::new(format!("b{k}"), args.len()));
            premise.push(Atom::new(format!("b{k}"), args.iter().map(|&i| to_term(i)).collect()));
        }
        let conclusion = Atom::new("h", head.iter().map(|&i| to_term(i)).collect());
        let head_vars: BTreeSet<usize> = head.iter().copied().filter(|&i| i < VARS.len()).collect();
        let body_vars: BTreeSet<usize> = body.iter().flatten().copied().filter(|&i| i < VARS.len()).collect();
        let missing: BTreeSet<&str> = head_vars.difference(&body_vars).map(|&i| VARS[i]).collect();
        kb.add_rule(Rule::new("r", premise, vec![conclusion], WeightMode::Deterministic));

        let flagged: BTreeSet<String> = validate_kb(&kb)
            .into_iter()
            .filter(|d| d.kind == DiagnosticKind::UnsafeVariable)
            .map(|d| d.variable.unwrap())
            .collect();
        let flagged: BTreeSet<&str> = flagged.iter().map(String::as_str).collect();
        prop_assert_eq!(flagged, missing);
    }
}

#[test]
fn decimal_priors_are_closest_floats() {
    let kb = parse_kb("pred a/1. 0.1 :: a(x). 0.3 :: a(y). 1e-3 :: a(z). 0.30000000000000004 :: a(w).").unwrap();
    let prior = |c: &str| kb.fact(&Proposition::new("a", [c])).unwrap().prior;
    assert_eq!(prior("x"), 0.1);
    assert_eq!(prior("y"), 0.3);
    assert_eq!(prior("z"), 0.001);
    assert_eq!(prior("w"), 0.1 + 0.2);
    assert_ne!(prior("w"), prior("y"));
}
