//! Conditions, rules, the 2×2 contingency table and the scores derived
//! from it.
//!
//! For a rule predicting class `y`, the table counts instances by
//! (covered, not covered) × (model says `y`, model says something else):
//!
//! ```text
//!              class y   not y
//!   covered      n11      n12
//!   uncovered    n21      n22
//! ```
//!
//! "Class" always means the class predicted by the model under explanation,
//! never the ground truth.

use serde::{Deserialize, Serialize};

use crate::data::{Encoded, FeatureKind, Schema};
use crate::error::{Error, Result};

/// A single-feature predicate `feature ∈ values`, where values are bin
/// indices (numeric) or category indices (categorical).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Condition {
    feature: usize,
    values: Vec<u32>,
}

impl Condition {
    /// The value set must be non-empty and a strict subset of the feature's
    /// domain; a full-domain predicate would be vacuous.
    pub fn new(schema: &Schema, feature: usize, values: impl IntoIterator<Item = u32>) -> Result<Self> {
        if feature >= schema.len() {
            return Err(Error::InvalidCondition {
                feature,
                reason: "feature index out of range".into(),
            });
        }
        let mut values: Vec<u32> = values.into_iter().collect();
        values.sort_unstable();
        values.dedup();
        let domain = schema.domain_size(feature);
        if values.is_empty() {
            return Err(Error::InvalidCondition {
                feature,
                reason: "empty value set".into(),
            });
        }
        if values.iter().any(|&v| v as usize >= domain) {
            return Err(Error::InvalidCondition {
                feature,
                reason: format!("value outside domain of size {domain}"),
            });
        }
        if values.len() == domain {
            return Err(Error::InvalidCondition {
                feature,
                reason: "predicate covers the whole domain".into(),
            });
        }
        Ok(Condition { feature, values })
    }

    pub fn feature(&self) -> usize {
        self.feature
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn contains(&self, code: u32) -> bool {
        self.values.binary_search(&code).is_ok()
    }

    pub fn covers(&self, row: &[u32]) -> bool {
        self.contains(row[self.feature])
    }

    pub fn describe(&self, schema: &Schema) -> String {
        let f = schema.feature(self.feature);
        match f.kind {
            FeatureKind::Categorical => {
                let names: Vec<String> = self.values.iter().map(|&v| f.code_label(v)).collect();
                if names.len() == 1 {
                    format!("{} = {}", f.name, names[0])
                } else {
                    format!("{} ∈ {{{}}}", f.name, names.join(", "))
                }
            }
            FeatureKind::Numeric => {
                // merge runs of adjacent bins into one interval
                let mut runs: Vec<(u32, u32)> = Vec::new();
                for &v in &self.values {
                    match runs.last_mut() {
                        Some((_, hi)) if *hi + 1 == v => *hi = v,
                        _ => runs.push((v, v)),
                    }
                }
                let parts: Vec<String> = runs
                    .iter()
                    .map(|&(a, b)| {
                        let lo = f.bin_bounds(a).0;
                        let hi = f.bin_bounds(b).1;
                        match (lo.is_finite(), hi.is_finite()) {
                            (true, true) => format!("{lo} ≤ {} < {hi}", f.name),
                            (false, true) => format!("{} < {hi}", f.name),
                            (true, false) => format!("{} ≥ {lo}", f.name),
                            (false, false) => format!("{} any", f.name),
                        }
                    })
                    .collect();
                if parts.len() == 1 {
                    parts[0].clone()
                } else {
                    format!("({})", parts.join(" OR "))
                }
            }
        }
    }
}

/// Conjunction of per-feature conditions plus the predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Rule {
    clause: Vec<Condition>,
    prediction: usize,
}

impl Rule {
    /// Conditions are kept sorted by feature; at most one per feature and at
    /// least one overall.
    pub fn new(mut clause: Vec<Condition>, prediction: usize) -> Result<Self> {
        if clause.is_empty() {
            return Err(Error::InvalidRule("clause is empty".into()));
        }
        clause.sort();
        if clause.windows(2).any(|w| w[0].feature == w[1].feature) {
            return Err(Error::InvalidRule("two conditions share a feature".into()));
        }
        Ok(Rule { clause, prediction })
    }

    /// The always-true rule. Only the decision-tree baseline produces it,
    /// for a tree without splits.
    pub fn catch_all(prediction: usize) -> Self {
        Rule {
            clause: Vec::new(),
            prediction,
        }
    }

    pub fn is_catch_all(&self) -> bool {
        self.clause.is_empty()
    }

    pub fn clause(&self) -> &[Condition] {
        &self.clause
    }

    pub fn prediction(&self) -> usize {
        self.prediction
    }

    pub fn len(&self) -> usize {
        self.clause.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clause.is_empty()
    }

    pub fn covers(&self, row: &[u32]) -> bool {
        self.clause.iter().all(|c| c.covers(row))
    }

    pub fn describe(&self, schema: &Schema, classes: &[String]) -> String {
        let lhs = if self.clause.is_empty() {
            "TRUE".to_string()
        } else {
            self.clause
                .iter()
                .map(|c| c.describe(schema))
                .collect::<Vec<_>>()
                .join(" AND ")
        };
        format!("IF {lhs} THEN class = {}", classes[self.prediction])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub n11: u64,
    pub n12: u64,
    pub n21: u64,
    pub n22: u64,
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl ContingencyTable {
    pub fn new(n11: u64, n12: u64, n21: u64, n22: u64) -> Result<Self> {
        if n11 + n12 + n21 + n22 == 0 {
            return Err(Error::Empty("contingency table with N = 0".into()));
        }
        Ok(ContingencyTable { n11, n12, n21, n22 })
    }

    pub fn n(&self) -> u64 {
        self.n11 + self.n12 + self.n21 + self.n22
    }

    pub fn r1(&self) -> u64 {
        self.n11 + self.n12
    }

    pub fn r2(&self) -> u64 {
        self.n21 + self.n22
    }

    pub fn c1(&self) -> u64 {
        self.n11 + self.n21
    }

    pub fn c2(&self) -> u64 {
        self.n12 + self.n22
    }

    /// Mutual information in bits between the cover indicator and the
    /// model-class indicator. Empty cells contribute nothing; a table with an
    /// empty margin carries no information.
    pub fn mutual_information(&self) -> f64 {
        let n = self.n();
        let (r, c) = ([self.r1(), self.r2()], [self.c1(), self.c2()]);
        if r.contains(&0) || c.contains(&0) {
            return 0.0;
        }
        let cells = [[self.n11, self.n12], [self.n21, self.n22]];
        let nf = n as f64;
        let mut sum = 0.0;
        for a in 0..2 {
            for b in 0..2 {
                let nab = cells[a][b];
                if nab > 0 {
                    let nab = nab as f64;
                    sum += nab * (nab * nf / (r[a] as f64 * c[b] as f64)).log2();
                }
            }
        }
        (sum / nf).max(0.0)
    }

    /// True when `n11` reaches its expectation under independence,
    /// `r1·c1/N`.
    pub fn agrees(&self) -> bool {
        u128::from(self.n11) * u128::from(self.n()) >= u128::from(self.r1()) * u128::from(self.c1())
    }

    /// Signed mutual information: negative for rules whose cover is
    /// depleted of their own class.
    pub fn fitness(&self) -> f64 {
        let mi = self.mutual_information();
        if self.agrees() {
            mi
        } else {
            -mi
        }
    }

    /// Fraction of covered instances carrying the rule's class; 0 for an
    /// empty cover.
    pub fn precision(&self) -> f64 {
        ratio(self.n11, self.r1())
    }

    /// Fraction of all instances covered.
    pub fn coverage(&self) -> f64 {
        ratio(self.r1(), self.n())
    }

    /// Fraction of the class's instances covered.
    pub fn class_recall(&self) -> f64 {
        ratio(self.n11, self.c1())
    }

    /// Harmonic mean of precision and class recall.
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.class_recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

/// Which score guides rule evolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitnessKind {
    #[default]
    #[serde(alias = "mi")]
    MutualInformation,
    F1,
}

impl FitnessKind {
    pub fn score(self, t: &ContingencyTable) -> f64 {
        match self {
            FitnessKind::MutualInformation => t.fitness(),
            FitnessKind::F1 => t.f1(),
        }
    }
}

pub fn contingency(rule: &Rule, rows: &Encoded, labels: &[usize]) -> Result<ContingencyTable> {
    if rows.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: rows.len(),
            right: labels.len(),
        });
    }
    let mut t = [0u64; 4];
    for (row, &y) in rows.rows().zip(labels) {
        let covered = rule.covers(row);
        let same = y == rule.prediction;
        t[usize::from(!covered) * 2 + usize::from(!same)] += 1;
    }
    ContingencyTable::new(t[0], t[1], t[2], t[3])
}

/// `(precision, coverage)` of a rule over `rows`.
pub fn precision_coverage(rule: &Rule, rows: &Encoded, labels: &[usize]) -> Result<(f64, f64)> {
    let t = contingency(rule, rows, labels)?;
    Ok((t.precision(), t.coverage()))
}

/// Serialized condition: `{"feature": name, "op": "in", "values": [...]}`.
/// Numeric predicates list bin indices plus readable intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRecord {
    pub feature: String,
    pub op: String,
    pub values: PredicateValues,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intervals: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PredicateValues {
    Bins(Vec<u32>),
    Categories(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleRecord {
    pub clause: Vec<ConditionRecord>,
    pub prediction: String,
    pub precision: f64,
    pub coverage: f64,
    pub fitness: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub default_rule: bool,
}

impl ConditionRecord {
    pub fn from_condition(c: &Condition, schema: &Schema) -> Self {
        let f = schema.feature(c.feature);
        let (values, intervals) = match f.kind {
            FeatureKind::Numeric => (
                PredicateValues::Bins(c.values.clone()),
                Some(c.values.iter().map(|&b| f.code_label(b)).collect()),
            ),
            FeatureKind::Categorical => (
                PredicateValues::Categories(c.values.iter().map(|&v| f.code_label(v)).collect()),
                None,
            ),
        };
        ConditionRecord {
            feature: f.name.clone(),
            op: "in".into(),
            values,
            intervals,
        }
    }

    pub fn to_condition(&self, schema: &Schema) -> Result<Condition> {
        let bad = |reason: String| Error::Schema(format!("condition on `{}`: {reason}", self.feature));
        if self.op != "in" {
            return Err(bad(format!("unsupported op `{}`", self.op)));
        }
        let feature = schema
            .index_of(&self.feature)
            .ok_or_else(|| bad("unknown feature".into()))?;
        let f = schema.feature(feature);
        let codes: Vec<u32> = match (&self.values, f.kind) {
            (PredicateValues::Bins(b), FeatureKind::Numeric) => b.clone(),
            (PredicateValues::Categories(names), FeatureKind::Categorical) => names
                .iter()
                .map(|n| {
                    f.categories
                        .iter()
                        .position(|c| c == n)
                        .map(|i| i as u32)
                        .ok_or_else(|| bad(format!("unknown category `{n}`")))
                })
                .collect::<Result<_>>()?,
            (PredicateValues::Bins(b), FeatureKind::Categorical) if b.is_empty() => Vec::new(),
            (PredicateValues::Categories(c), FeatureKind::Numeric) if c.is_empty() => Vec::new(),
            _ => return Err(bad("value type does not match feature kind".into())),
        };
        Condition::new(schema, feature, codes)
    }
}

impl RuleRecord {
    pub fn new(
        rule: &Rule,
        schema: &Schema,
        classes: &[String],
        precision: f64,
        coverage: f64,
        fitness: f64,
    ) -> Self {
        RuleRecord {
            clause: rule
                .clause
                .iter()
                .map(|c| ConditionRecord::from_condition(c, schema))
                .collect(),
            prediction: classes[rule.prediction].clone(),
            precision,
            coverage,
            fitness,
            default_rule: rule.is_catch_all(),
        }
    }

    pub fn to_rule(&self, schema: &Schema, classes: &[String]) -> Result<Rule> {
        let prediction = classes
            .iter()
            .position(|c| *c == self.prediction)
            .ok_or_else(|| Error::Schema(format!("unknown class `{}`", self.prediction)))?;
        if self.clause.is_empty() && self.default_rule {
            return Ok(Rule::catch_all(prediction));
        }
        let clause = self
            .clause
            .iter()
            .map(|c| c.to_condition(schema))
            .collect::<Result<Vec<_>>>()?;
        Rule::new(clause, prediction)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Feature;
    use proptest::prelude::*;

    fn table(a: u64, b: u64, c: u64, d: u64) -> ContingencyTable {
        ContingencyTable::new(a, b, c, d).unwrap()
    }

    fn schema() -> Schema {
        Schema::new(vec![
            Feature::numeric("age", vec![10.0, 25.0, 40.0]),
            Feature::categorical("country", vec!["France", "India", "US"]),
            Feature::categorical("odor", vec!["almond", "foul", "none"]),
        ])
        .unwrap()
    }

    #[test]
    fn covers_follows_clause() {
        let s = schema();
        let r = Rule::new(vec![Condition::new(&s, 2, [2]).unwrap()], 0).unwrap();
        assert!(r.covers(&[0, 0, 2]));
        let r = Rule::new(vec![Condition::new(&s, 1, [1, 2]).unwrap()], 0).unwrap();
        assert!(!r.covers(&[0, 0, 0]));
        assert!(r.covers(&[0, 1, 0]));
    }

    #[test]
    fn invalid_conditions_are_rejected() {
        let s = schema();
        assert!(Condition::new(&s, 1, []).is_err());
        assert!(Condition::new(&s, 1, [0, 1, 2]).is_err());
        assert!(Condition::new(&s, 0, [4]).is_err());
        assert!(Condition::new(&s, 7, [0]).is_err());
    }

    #[test]
    fn rule_invariants() {
        let s = schema();
        assert!(Rule::new(vec![], 0).is_err());
        let a = Condition::new(&s, 1, [0]).unwrap();
        let b = Condition::new(&s, 1, [1]).unwrap();
        assert!(Rule::new(vec![a, b], 0).is_err());
    }

    #[test]
    fn describes_merged_intervals() {
        let s = schema();
        let r = Rule::new(
            vec![
                Condition::new(&s, 0, [1, 2]).unwrap(),
                Condition::new(&s, 1, [1, 2]).unwrap(),
            ],
            0,
        )
        .unwrap();
        let classes = vec!["K".to_string()];
        assert_eq!(
            r.describe(&s, &classes),
            "IF 10 ≤ age < 40 AND country ∈ {India, US} THEN class = K"
        );
        let r = Rule::new(vec![Condition::new(&s, 2, [2]).unwrap()], 0).unwrap();
        assert_eq!(r.describe(&s, &classes), "IF odor = none THEN class = K");
    }

    #[test]
    fn worked_tables() {
        let explains = table(600, 0, 1000, 400);
        let random = table(800, 200, 800, 200);
        let contradicts = table(1000, 400, 600, 0);
        for (t, mi, f1, fit) in [
            (explains, 0.118, 0.545, 0.118),
            (random, 0.0, 0.615, 0.0),
            (contradicts, 0.118, 0.667, -0.118),
        ] {
            assert!((t.mutual_information() - mi).abs() < 1e-3, "{t:?}");
            assert!((t.f1() - f1).abs() < 1e-3, "{t:?}");
            assert!((t.fitness() - fit).abs() < 1e-3, "{t:?}");
        }
        assert_eq!(explains.precision(), 1.0);
        assert!((explains.coverage() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn zero_cover_conventions() {
        let t = table(0, 0, 7, 3);
        assert_eq!(t.mutual_information(), 0.0);
        assert_eq!(t.precision(), 0.0);
        assert_eq!(t.coverage(), 0.0);
        assert_eq!(t.f1(), 0.0);
        assert!(ContingencyTable::new(0, 0, 0, 0).is_err());
    }

    #[test]
    fn contingency_counts_toy_table() {
        // Age, State; model: California -> not-default (1), Texas -> default (0)
        let s = Schema::new(vec![
            Feature::numeric("Age", vec![]),
            Feature::categorical("State", vec!["California", "Texas"]),
        ])
        .unwrap();
        let rows = Encoded::from_rows(2, &[vec![0, 0], vec![0, 1], vec![0, 0], vec![0, 1]]);
        let labels = [1, 0, 1, 0];
        let r = Rule::new(vec![Condition::new(&s, 1, [0]).unwrap()], 1).unwrap();
        // the uncovered Texas rows are predicted `default`, so they are n22
        assert_eq!(contingency(&r, &rows, &labels).unwrap(), table(2, 0, 0, 2));
        let r = Rule::new(vec![Condition::new(&s, 1, [1]).unwrap()], 1).unwrap();
        assert_eq!(contingency(&r, &rows, &labels).unwrap(), table(0, 2, 2, 0));
        assert!(contingency(&r, &rows, &labels[..3]).is_err());
        assert_eq!(precision_coverage(&r, &rows, &labels).unwrap(), (0.0, 0.5));
        let all = Rule::new(vec![Condition::new(&s, 1, [0]).unwrap()], 1).unwrap();
        let cal = Encoded::from_rows(2, &[vec![0, 0], vec![0, 0]]);
        assert_eq!(precision_coverage(&all, &cal, &[1, 1]).unwrap(), (1.0, 1.0));
    }

    #[test]
    fn record_round_trip() {
        let s = schema();
        let classes = vec!["edible".to_string(), "poisonous".to_string()];
        let r = Rule::new(
            vec![
                Condition::new(&s, 0, [1]).unwrap(),
                Condition::new(&s, 2, [2]).unwrap(),
            ],
            1,
        )
        .unwrap();
        let rec = RuleRecord::new(&r, &s, &classes, 0.9, 0.2, 0.1);
        let json = serde_json::to_string(&rec).unwrap();
        assert!(json.contains(r#""values":[1],"intervals":["10 ≤ age < 25"]"#), "{json}");
        assert!(json.contains(r#""values":["none"]"#), "{json}");
        let back: RuleRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back.to_rule(&s, &classes).unwrap(), r);
    }

    fn arb_table() -> impl Strategy<Value = ContingencyTable> {
        (0u64..500, 0u64..500, 0u64..500, 0u64..500)
            .prop_filter("N >= 1", |(a, b, c, d)| a + b + c + d > 0)
            .prop_map(|(a, b, c, d)| table(a, b, c, d))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn mi_is_non_negative(t in arb_table()) {
            prop_assert!(t.mutual_information() >= 0.0);
            prop_assert!(t.mutual_information() <= 1.0 + 1e-12);
        }

        #[test]
        fn proportional_rows_have_zero_mi(a in 0u64..60, b in 0u64..60, k in 1u64..20, j in 1u64..20) {
            prop_assume!(a + b > 0);
            let t = table(a * k, b * k, a * j, b * j);
            prop_assert!(t.mutual_information().abs() < 1e-12);
        }

        #[test]
        fn fitness_sign(t in arb_table()) {
            let (fit, mi) = (t.fitness(), t.mutual_information());
            let expected = (t.n11 as f64) < (t.r1() * t.c1()) as f64 / t.n() as f64;
            prop_assert_eq!(fit < 0.0, expected && mi > 0.0);
            if !(fit < 0.0) {
                prop_assert_eq!(fit, mi);
            }
        }

        #[test]
        fn mi_transposition_symmetry(t in arb_table()) {
            let tt = table(t.n11, t.n21, t.n12, t.n22);
            prop_assert!((t.mutual_information() - tt.mutual_information()).abs() < 1e-12);
        }

        #[test]
        fn scaling_cells(t in arb_table(), k in 2u64..50) {
            let s = table(t.n11 * k, t.n12 * k, t.n21 * k, t.n22 * k);
            prop_assert!((t.mutual_information() - s.mutual_information()).abs() < 1e-9);
            prop_assert!((t.f1() - s.f1()).abs() < 1e-12);
            prop_assert_eq!(t.fitness() < 0.0, s.fitness() < 0.0);
        }
    }
}
