use std::fmt::Write;

use super::{FactorGraph, FactorKind};

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// p nodes as ellipses, g nodes as boxes, factors as small diamonds.
pub(super) fn render(fg: &FactorGraph) -> String {
    let mut out = String::from("graph factors {\n");
    for (i, prop) in fg.propositions().iter().enumerate() {
        let _ = writeln!(out, "  p{i} [shape=ellipse,label=\"{}\"];", escape(&prop.to_string()));
    }
    for j in 0..fg.num_g() {
        let _ = writeln!(out, "  g{j} [shape=box,label=\"g{j}\"];");
    }
    for (k, f) in fg.factors().iter().enumerate() {
        let label = match &f.kind {
            FactorKind::Prior(p) => format!("prior {p}"),
            FactorKind::Evidence(v) => format!("= {v}"),
            other => other.name().to_owned(),
        };
        let _ = writeln!(
            out,
            "  f{k} [shape=diamond,width=0.2,height=0.2,fontsize=8,label=\"{}\"];",
            escape(&label)
        );
        for node in f.scope() {
            let _ = writeln!(out, "  f{k} -- {node};");
        }
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use crate::factor::{Factor, FactorGraph, FactorKind, NodeId};
    use crate::kb::Proposition;

    #[test]
    fn shapes_and_names() {
        let fg = FactorGraph::from_factors(
            vec![Proposition::new("a", ["x"]), Proposition::new("c", ["x"])],
            1,
            vec![
                Factor {
                    kind: FactorKind::Prior(0.5),
                    output: NodeId::p(0),
                    inputs: vec![],
                },
                Factor {
                    kind: FactorKind::And,
                    output: NodeId::g(0),
                    inputs: vec![NodeId::p(0)],
                },
                Factor {
                    kind: FactorKind::OrDet,
                    output: NodeId::p(1),
                    inputs: vec![NodeId::g(0)],
                },
            ],
        );
        let dot = fg.to_dot();
        assert!(dot.contains("p0 [shape=ellipse,label=\"a(x)\"]"));
        assert!(dot.contains("g0 [shape=box"));
        assert!(dot.contains("f1 [shape=diamond"));
        assert!(dot.contains("f2 -- p1;"));
        assert!(dot.contains("f2 -- g0;"));
    }
}
