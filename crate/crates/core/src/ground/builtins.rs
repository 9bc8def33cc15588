//! Computed predicates evaluated during grounding. They never become graph
//! nodes.

use std::collections::BTreeMap;

use super::GroundError;
use crate::kb::Proposition;

pub type Evaluator = fn(&[f64]) -> bool;

#[derive(Debug, Clone)]
pub struct Builtins {
    table: BTreeMap<(String, usize), Evaluator>,
}

/// Numeric arguments; integers compare exactly, decimals within 1e-9.
fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

impl Default for Builtins {
    /// Arithmetic and comparison: `sum/3`, `diff/3`, `product/3`, `lt/2`,
    /// `le/2`, `gt/2`, `ge/2`, `eq/2`, `neq/2`.
    fn default() -> Self {
        let mut b = Builtins::empty();
        b.register("sum", 3, |x| close(x[0] + x[1], x[2]));
        b.register("diff", 3, |x| close(x[0] - x[1], x[2]));
        b.register("product", 3, |x| close(x[0] * x[1], x[2]));
        b.register("lt", 2, |x| x[0] < x[1]);
        b.register("le", 2, |x| x[0] <= x[1]);
        b.register("gt", 2, |x| x[0] > x[1]);
        b.register("ge", 2, |x| x[0] >= x[1]);
        b.register("eq", 2, |x| close(x[0], x[1]));
        b.register("neq", 2, |x| !close(x[0], x[1]));
        b
    }
}

impl Builtins {
    pub fn empty() -> Self {
        Builtins { table: BTreeMap::new() }
    }

    pub fn register(&mut self, name: &str, arity: usize, eval: Evaluator) {
        self.table.insert((name.to_owned(), arity), eval);
    }

    pub fn contains(&self, name: &str, arity: usize) -> bool {
        self.table.contains_key(&(name.to_owned(), arity))
    }

    /// Evaluates a ground builtin atom. Non-numeric arguments make it false.
    pub fn eval(&self, atom: &Proposition) -> Result<bool, GroundError> {
        let eval = self
            .table
            .get(&(atom.predicate.clone(), atom.arity()))
            .ok_or_else(|| GroundError::UnregisteredBuiltin(atom.signature()))?;
        let nums: Option<Vec<f64>> = atom.args.iter().map(|a| a.parse::<f64>().ok()).collect();
        Ok(nums.is_some_and(|n| eval(&n)))
    }
}

/// Evaluates with the default registry.
pub fn eval_builtin(atom: &Proposition) -> Result<bool, GroundError> {
    Builtins::default().eval(atom)
}
