//! Feature family and weights of the learned disjunction factor.
//!
//! The potential of a learned disjunction over groups `g_1..g_n` is
//! `exp(sum_i w . phi(p, g_i))` plus a pattern bias, where `phi` fires
//!
//! * `bias:<link>` when `p = 1`, once per group from that link,
//! * `active:<link>` when `p = 1` and the group is true,
//! * `pattern:<name>/<arity>` once when `p = 1`.
//!
//! A link is the id of the rule that produced the group. All features vanish
//! at `p = 0`, so `P(p = 1 | g)` is the logistic function of the score.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub fn pattern_feature(signature: &str) -> String {
    format!("pattern:{signature}")
}

pub fn bias_feature(link: &str) -> String {
    format!("bias:{link}")
}

pub fn active_feature(link: &str) -> String {
    format!("active:{link}")
}

/// Feature id to weight. Missing features read as 0.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(BTreeMap<String, f64>);

impl WeightVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, feature: &str) -> f64 {
        self.0.get(feature).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, feature: impl Into<String>, value: f64) {
        self.0.insert(feature.into(), value);
    }

    pub fn add(&mut self, feature: &str, delta: f64) {
        *self.0.entry(feature.to_owned()).or_insert(0.0) += delta;
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.0.values().all(|v| v.is_finite())
    }

    pub fn squared_norm(&self) -> f64 {
        self.0.values().map(|v| v * v).sum()
    }
}

impl FromIterator<(String, f64)> for WeightVector {
    fn from_iter<I: IntoIterator<Item = (String, f64)>>(iter: I) -> Self {
        WeightVector(iter.into_iter().collect())
    }
}

/// The features of one disjunction factor: the conclusion's predicate
/// signature and the link of each input group, in input order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureFunction {
    pub pattern: String,
    pub links: Vec<String>,
}

impl FeatureFunction {
    pub fn new(pattern: impl Into<String>, links: Vec<String>) -> Self {
        FeatureFunction {
            pattern: pattern.into(),
            links,
        }
    }

    /// Active features and their counts for one assignment.
    pub fn features(&self, p: bool, inputs: &[bool]) -> Vec<(String, f64)> {
        let mut counts: BTreeMap<String, f64> = BTreeMap::new();
        if p {
            counts.insert(pattern_feature(&self.pattern), 1.0);
            for (link, &g) in self.links.iter().zip(inputs) {
                *counts.entry(bias_feature(link)).or_insert(0.0) += 1.0;
                if g {
                    *counts.entry(active_feature(link)).or_insert(0.0) += 1.0;
                }
            }
        }
        counts.into_iter().collect()
    }

    /// `w . phi(1, g) - w . phi(0, g)`, the log-odds of `p = 1`.
    pub fn logit(&self, inputs: &[bool], w: &WeightVector) -> f64 {
        debug_assert_eq!(inputs.len(), self.links.len());
        self.features(true, inputs).iter().map(|(f, c)| w.get(f) * c).sum()
    }

    pub fn score(&self, p: bool, inputs: &[bool], w: &WeightVector) -> f64 {
        self.features(p, inputs).iter().map(|(f, c)| w.get(f) * c).sum()
    }

    /// Normalized conditional `P(p = 1 | inputs)`.
    pub fn prob_true(&self, inputs: &[bool], w: &WeightVector) -> f64 {
        sigmoid(self.logit(inputs, w))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Weights that make a learned disjunction a logistic regression with the
/// given intercept and per-input slope: `P(p=1|g) = sigmoid(bias + slope * sum g)`.
/// With a negative intercept above `-slope` this thresholds to logical OR.
pub fn logistic_or_weights(pattern: &str, links: &[String], intercept: f64, slope: f64) -> WeightVector {
    let mut w = WeightVector::new();
    w.set(pattern_feature(pattern), intercept);
    for link in links {
        w.set(bias_feature(link), 0.0);
        w.set(active_feature(link), slope);
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    fn or2() -> (FeatureFunction, WeightVector) {
        let links = vec!["r1".to_string(), "r2".to_string()];
        let ff = FeatureFunction::new("y/0", links.clone());
        let w = logistic_or_weights("y/0", &links, -0.5, 1.0);
        (ff, w)
    }

    #[test]
    fn logistic_or_values() {
        let (ff, w) = or2();
        // 1 / (1 + e^0.5), 1 / (1 + e^-0.5), 1 / (1 + e^-1.5)
        assert!((ff.prob_true(&[false, false], &w) - 0.377_540_668_798_145_4).abs() < 1e-12);
        assert!((ff.prob_true(&[true, false], &w) - 0.622_459_331_201_854_6).abs() < 1e-12);
        assert!((ff.prob_true(&[false, true], &w) - 0.622_459_331_201_854_6).abs() < 1e-12);
        assert!((ff.prob_true(&[true, true], &w) - 0.817_574_476_193_643_6).abs() < 1e-12);
    }

    #[test]
    fn features_vanish_when_false() {
        let (ff, w) = or2();
        assert!(ff.features(false, &[true, true]).is_empty());
        assert_eq!(ff.score(false, &[true, true], &w), 0.0);
    }

    #[test]
    fn repeated_links_count() {
        let ff = FeatureFunction::new("q/1", vec!["r".into(), "r".into()]);
        let f = ff.features(true, &[true, false]);
        assert!(f.contains(&("bias:r".to_string(), 2.0)));
        assert!(f.contains(&("active:r".to_string(), 1.0)));
    }

    #[test]
    fn weights_serialize_as_map() {
        let mut w = WeightVector::new();
        w.set("bias:r1", 0.25);
        assert_eq!(serde_json::to_string(&w).unwrap(), r#"{"bias:r1":0.25}"#);
        assert_eq!(w.get("missing"), 0.0);
    }
}
