use super::{InferenceError, Marginals};
use crate::factor::{FactorGraph, FactorKind, NodeKind};

pub const DEFAULT_ORACLE_CAP: usize = 25;

/// Exact marginals by summing the product of all (unsmoothed) potentials
/// over every joint assignment.
///
/// A group node with a conjunction factor is a function of its members: any
/// other value has potential 0. Such nodes are set from their members rather
/// than enumerated, which leaves the sum unchanged.
pub fn brute_force_marginals(fg: &FactorGraph, cap: usize) -> Result<Marginals, InferenceError> {
    let n = fg.num_variables();
    if n > cap {
        return Err(InferenceError::CapExceeded { variables: n, cap });
    }

    let mut derived: Vec<Option<Vec<usize>>> = vec![None; n];
    for f in fg.factors() {
        if f.kind == FactorKind::And && f.output.kind == NodeKind::G {
            derived[fg.var(f.output)] = Some(f.inputs.iter().map(|m| fg.var(*m)).collect());
        }
    }
    let free: Vec<usize> = (0..n).filter(|&v| derived[v].is_none()).collect();
    // members of a derived node are p nodes, which are always free
    let derived: Vec<(usize, Vec<usize>)> = derived
        .into_iter()
        .enumerate()
        .filter_map(|(v, m)| m.map(|m| (v, m)))
        .collect();

    let mut assignment = vec![false; n];
    let mut z = 0.0;
    let mut mass = vec![0.0; n];
    for bits in 0u64..(1u64 << free.len()) {
        for (k, &v) in free.iter().enumerate() {
            assignment[v] = bits >> k & 1 == 1;
        }
        for (v, members) in &derived {
            assignment[*v] = members.iter().all(|&m| assignment[m]);
        }
        let w = fg.joint_potential(&assignment);
        if w == 0.0 {
            continue;
        }
        z += w;
        for (v, &on) in assignment.iter().enumerate() {
            if on {
                mass[v] += w;
            }
        }
    }
    if z <= 0.0 || !z.is_finite() {
        return Err(InferenceError::InconsistentEvidence);
    }

    let n_p = fg.num_p();
    let probs = mass.iter().map(|m| (m / z).clamp(0.0, 1.0)).collect::<Vec<_>>();
    Ok(Marginals {
        propositions: fg.propositions().to_vec(),
        probs: probs[..n_p].to_vec(),
        group_probs: probs[n_p..].to_vec(),
        iterations: 0,
        converged: true,
        residual: 0.0,
        warnings: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor::{Factor, NodeId};
    use crate::kb::Proposition;

    fn full_enumeration(fg: &FactorGraph) -> Vec<f64> {
        let n = fg.num_variables();
        let mut z = 0.0;
        let mut mass = vec![0.0; n];
        for bits in 0u64..(1 << n) {
            let a: Vec<bool> = (0..n).map(|i| bits >> i & 1 == 1).collect();
            let w = fg.joint_potential(&a);
            z += w;
            for i in 0..n {
                if a[i] {
                    mass[i] += w;
                }
            }
        }
        mass.iter().map(|m| m / z).collect()
    }

    fn jack_jill(evidence: Option<bool>) -> FactorGraph {
        let mut factors = vec![
            Factor {
                kind: FactorKind::Prior(1.0),
                output: NodeId::p(1),
                inputs: vec![],
            },
            Factor {
                kind: FactorKind::Prior(0.9),
                output: NodeId::p(2),
                inputs: vec![],
            },
            Factor {
                kind: FactorKind::And,
                output: NodeId::g(0),
                inputs: vec![NodeId::p(1), NodeId::p(2)],
            },
            Factor {
                kind: FactorKind::OrDet,
                output: NodeId::p(0),
                inputs: vec![NodeId::g(0)],
            },
        ];
        if let Some(v) = evidence {
            factors.push(Factor {
                kind: FactorKind::Evidence(v),
                output: NodeId::p(0),
                inputs: vec![],
            });
        }
        FactorGraph::from_factors(
            vec![
                Proposition::new("date", ["jack", "jill"]),
                Proposition::new("likes", ["jack", "jill"]),
                Proposition::new("likes", ["jill", "jack"]),
            ],
            1,
            factors,
        )
    }

    #[test]
    fn jack_jill_exact() {
        let m = brute_force_marginals(&jack_jill(None), DEFAULT_ORACLE_CAP).unwrap();
        // Z = 0.9 (date true) + 0.1 (date false); P(date) = 0.9 / 1.0
        assert!((m.probs[0] - 0.9).abs() < 1e-15);
        assert_eq!(m.probs[1], 1.0);
        let full = full_enumeration(&jack_jill(None));
        for (a, b) in m.probs.iter().chain(&m.group_probs).zip(&full) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn evidence_propagates_backwards() {
        let m = brute_force_marginals(&jack_jill(Some(true)), DEFAULT_ORACLE_CAP).unwrap();
        assert_eq!(m.probs[2], 1.0);
        let m = brute_force_marginals(&jack_jill(Some(false)), DEFAULT_ORACLE_CAP).unwrap();
        assert_eq!(m.probs[2], 0.0);
    }

    #[test]
    fn cap_and_inconsistency() {
        assert_eq!(
            brute_force_marginals(&jack_jill(None), 3).unwrap_err(),
            InferenceError::CapExceeded { variables: 4, cap: 3 }
        );
        let fg = FactorGraph::from_factors(
            vec![Proposition::new("a", ["x"])],
            0,
            vec![
                Factor {
                    kind: FactorKind::Prior(0.0),
                    output: NodeId::p(0),
                    inputs: vec![],
                },
                Factor {
                    kind: FactorKind::Evidence(true),
                    output: NodeId::p(0),
                    inputs: vec![],
                },
            ],
        );
        assert_eq!(
            brute_force_marginals(&fg, 25).unwrap_err(),
            InferenceError::InconsistentEvidence
        );
    }
}
