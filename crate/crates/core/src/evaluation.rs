//! Set-Score and greedy selection of a fixed-size rule set.
//!
//! A rule set predicts an instance with the covering rule of highest
//! precision (ties: higher coverage, then earlier rule). Uncovered instances
//! get no prediction and count as misses.

use rayon::prelude::*;

use crate::data::{Encoded, Schema};
use crate::error::{Error, Result};
use crate::evolution::ScoredRule;
use crate::rules::{precision_coverage, Rule};

/// A rule with its precision and coverage measured on the reference split.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectedRule {
    pub rule: Rule,
    pub precision: f64,
    pub coverage: f64,
    pub fitness: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Interpretation {
    pub approach: String,
    pub seed: u64,
    pub selection_size: usize,
    pub reference_split: String,
    pub rules: Vec<SelectedRule>,
}

impl Interpretation {
    /// The first `size` rules, relabelled with that size.
    pub fn prefix(&self, size: usize) -> Interpretation {
        Interpretation {
            rules: self.rules.iter().take(size).cloned().collect(),
            selection_size: size,
            ..self.clone()
        }
    }

    /// One line per rule with its cached precision and coverage.
    pub fn to_markdown(&self, schema: &Schema, classes: &[String]) -> String {
        let mut out = String::from("| # | Rule | Precision | Coverage |\n|---|---|---|---|\n");
        for (i, r) in self.rules.iter().enumerate() {
            out.push_str(&format!(
                "| {} | {} | {:.3} | {:.3} |\n",
                i + 1,
                r.rule.describe(schema, classes).replace('|', "\\|"),
                r.precision,
                r.coverage
            ));
        }
        out
    }
}

fn beats(p: f64, c: f64, other: &SelectedRule) -> bool {
    p > other.precision || (p == other.precision && c > other.coverage)
}

pub fn predict_with_rules(rules: &[SelectedRule], row: &[u32]) -> Option<usize> {
    let mut best: Option<&SelectedRule> = None;
    for r in rules.iter().filter(|r| r.rule.covers(row)) {
        if best.is_none_or(|b| beats(r.precision, r.coverage, b)) {
            best = Some(r);
        }
    }
    best.map(|r| r.rule.prediction())
}

/// Percentage of rows whose model label the rule set reproduces.
pub fn set_score(rules: &[SelectedRule], rows: &Encoded, labels: &[usize]) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::Empty("cannot score a rule set on zero rows".into()));
    }
    if rows.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: rows.len(),
            right: labels.len(),
        });
    }
    let hits = rows
        .rows()
        .zip(labels)
        .filter(|(r, &y)| predict_with_rules(rules, r) == Some(y))
        .count();
    Ok(100.0 * hits as f64 / rows.len() as f64)
}

/// Attach precision and coverage on `rows` to each rule.
pub fn calibrate(candidates: &[ScoredRule], rows: &Encoded, labels: &[usize]) -> Result<Vec<SelectedRule>> {
    candidates
        .iter()
        .map(|s| {
            let (precision, coverage) = precision_coverage(&s.rule, rows, labels)?;
            Ok(SelectedRule {
                rule: s.rule.clone(),
                precision,
                coverage,
                fitness: s.fitness,
            })
        })
        .collect()
}

/// Forward selection of up to `k` rules maximising the Set-Score on
/// `(rows, labels)`. Each step adds the candidate with the largest gain;
/// ties go to higher fitness, then fewer conditions, then candidate order.
/// Stops early once no candidate improves the score, so shorter selections
/// are prefixes of longer ones.
pub fn greedy_select(candidates: &[ScoredRule], k: usize, rows: &Encoded, labels: &[usize]) -> Result<Vec<SelectedRule>> {
    if k == 0 {
        return Err(Error::Config("selection size must be at least 1".into()));
    }
    if candidates.is_empty() {
        return Err(Error::Empty("no candidate rules to select from".into()));
    }
    if rows.is_empty() {
        return Err(Error::Empty("cannot select rules on zero rows".into()));
    }
    let pool = calibrate(candidates, rows, labels)?;
    let covered: Vec<Vec<usize>> = pool
        .par_iter()
        .map(|r| (0..rows.len()).filter(|&i| r.rule.covers(rows.row(i))).collect())
        .collect();

    let mut chosen: Vec<usize> = Vec::new();
    let mut winner: Vec<Option<usize>> = vec![None; rows.len()];
    while chosen.len() < k {
        let gains: Vec<i64> = pool
            .par_iter()
            .enumerate()
            .map(|(ci, cand)| {
                if chosen.contains(&ci) {
                    return i64::MIN;
                }
                let mut gain = 0i64;
                for &i in &covered[ci] {
                    let takes = winner[i].is_none_or(|w| beats(cand.precision, cand.coverage, &pool[w]));
                    if takes {
                        let before = winner[i].is_some_and(|w| pool[w].rule.prediction() == labels[i]);
                        let after = cand.rule.prediction() == labels[i];
                        gain += i64::from(after) - i64::from(before);
                    }
                }
                gain
            })
            .collect();
        let best = (0..pool.len()).max_by(|&a, &b| {
            gains[a]
                .cmp(&gains[b])
                .then(pool[a].fitness.total_cmp(&pool[b].fitness))
                .then(pool[b].rule.len().cmp(&pool[a].rule.len()))
                .then(b.cmp(&a))
        });
        let Some(best) = best.filter(|&b| gains[b] > 0) else {
            break;
        };
        for &i in &covered[best] {
            if winner[i].is_none_or(|w| beats(pool[best].precision, pool[best].coverage, &pool[w])) {
                winner[i] = Some(best);
            }
        }
        chosen.push(best);
    }
    Ok(chosen.into_iter().map(|i| pool[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Feature;
    use crate::rules::Condition;

    /// The four-row loan toy: State (California, Texas) and model labels
    /// 0 = default, 1 = not-default.
    fn toy() -> (Schema, Encoded, Vec<usize>) {
        let s = Schema::new(vec![Feature::categorical("State", vec!["California", "Texas"])]).unwrap();
        let enc = Encoded::from_rows(1, &[vec![0], vec![0], vec![1], vec![1]]);
        (s, enc, vec![1, 1, 0, 0])
    }

    fn scored(s: &Schema, value: u32, pred: usize, fitness: f64) -> ScoredRule {
        ScoredRule {
            rule: Rule::new(vec![Condition::new(s, 0, [value]).unwrap()], pred).unwrap(),
            fitness,
        }
    }

    fn sel(s: &Schema, value: u32, pred: usize, precision: f64, coverage: f64) -> SelectedRule {
        SelectedRule {
            rule: scored(s, value, pred, 0.0).rule,
            precision,
            coverage,
            fitness: 0.0,
        }
    }

    #[test]
    fn toy_set_scores() {
        let (s, enc, y) = toy();
        let both = vec![sel(&s, 0, 1, 1.0, 0.5), sel(&s, 1, 0, 1.0, 0.5)];
        assert_eq!(set_score(&both, &enc, &y).unwrap(), 100.0);
        assert_eq!(set_score(&both[..1], &enc, &y).unwrap(), 50.0);
        assert_eq!(set_score(&[], &enc, &y).unwrap(), 0.0);
        assert!(set_score(&both, &Encoded::from_rows(1, &[]), &[]).is_err());
    }

    #[test]
    fn prediction_arbitration() {
        let (s, _, _) = toy();
        let rules = vec![sel(&s, 0, 0, 0.8, 0.9), sel(&s, 0, 1, 0.9, 0.1)];
        assert_eq!(predict_with_rules(&rules, &[0]), Some(1));
        assert_eq!(predict_with_rules(&rules, &[1]), None);
        let tied = vec![sel(&s, 0, 0, 0.9, 0.2), sel(&s, 0, 1, 0.9, 0.3)];
        assert_eq!(predict_with_rules(&tied, &[0]), Some(1));
        let same = vec![sel(&s, 0, 0, 0.9, 0.3), sel(&s, 0, 1, 0.9, 0.3)];
        assert_eq!(predict_with_rules(&same, &[0]), Some(0));
    }

    #[test]
    fn greedy_on_toy() {
        let (s, enc, y) = toy();
        let cands = vec![scored(&s, 0, 1, 0.5), scored(&s, 1, 0, 0.7)];
        let one = greedy_select(&cands, 1, &enc, &y).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].rule, cands[1].rule);
        let two = greedy_select(&cands, 5, &enc, &y).unwrap();
        assert_eq!(two.len(), 2);
        assert_eq!(set_score(&two, &enc, &y).unwrap(), 100.0);
        let equal_fitness = vec![scored(&s, 0, 1, 0.5), scored(&s, 1, 0, 0.5)];
        assert_eq!(greedy_select(&equal_fitness, 1, &enc, &y).unwrap()[0].rule, equal_fitness[0].rule);
    }

    #[test]
    fn duplicates_are_not_selected_twice() {
        let (s, enc, y) = toy();
        let cands = vec![scored(&s, 0, 1, 0.5), scored(&s, 0, 1, 0.5)];
        let out = greedy_select(&cands, 2, &enc, &y).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].precision, 1.0);
        assert_eq!(out[0].coverage, 0.5);
    }

    #[test]
    fn bad_inputs() {
        let (s, enc, y) = toy();
        assert!(greedy_select(&[], 1, &enc, &y).is_err());
        assert!(greedy_select(&[scored(&s, 0, 1, 0.0)], 0, &enc, &y).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn schema() -> Schema {
            Schema::new(vec![
                Feature::categorical("a", vec!["0", "1", "2"]),
                Feature::categorical("b", vec!["0", "1", "2"]),
            ])
            .unwrap()
        }

        fn arb_rule() -> impl Strategy<Value = (usize, u32, usize, f64)> {
            (0usize..2, 0u32..3, 0usize..2, -1.0f64..1.0)
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(200))]

            #[test]
            fn greedy_prefixes_never_lose_score(
                data in prop::collection::vec((0u32..3, 0u32..3, 0usize..2), 1..60),
                rules in prop::collection::vec(arb_rule(), 1..12),
                k in 1usize..8,
            ) {
                let s = schema();
                let enc = Encoded::from_rows(2, &data.iter().map(|&(a, b, _)| vec![a, b]).collect::<Vec<_>>());
                let y: Vec<usize> = data.iter().map(|d| d.2).collect();
                let cands: Vec<ScoredRule> = rules
                    .iter()
                    .map(|&(f, v, p, fit)| ScoredRule {
                        rule: Rule::new(vec![Condition::new(&s, f, [v]).unwrap()], p).unwrap(),
                        fitness: fit,
                    })
                    .collect();
                let chosen = greedy_select(&cands, k, &enc, &y).unwrap();
                prop_assert!(chosen.len() <= k);
                let mut last = 0.0;
                for n in 1..=chosen.len() {
                    let score = set_score(&chosen[..n], &enc, &y).unwrap();
                    prop_assert!(score > last);
                    prop_assert!((0.0..=100.0).contains(&score));
                    last = score;
                }
                // order-invariance of the score under row reversal
                let rev: Vec<Vec<u32>> = (0..enc.len()).rev().map(|i| enc.row(i).to_vec()).collect();
                let rev_y: Vec<usize> = y.iter().rev().copied().collect();
                prop_assert_eq!(set_score(&chosen, &Encoded::from_rows(2, &rev), &rev_y).unwrap(), last);
            }
        }
    }
}
