//! Comparison approaches: decision-tree surrogate paths and support-based
//! association rules, both learned from the model's labels.

use serde::{Deserialize, Serialize};

use crate::data::{Encoded, Schema};
use crate::error::{Error, Result};
use crate::evolution::ScoredRule;
use crate::oracle::{split_kinds, DecisionTree, Test};
use crate::rules::{contingency, Condition, ContingencyTable, FitnessKind, Rule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub dt_max_depth: Vec<usize>,
    pub apriori_support: Vec<f64>,
    pub apriori_max_len: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            dt_max_depth: (4..=10).collect(),
            apriori_support: vec![0.01, 0.02, 0.05, 0.10],
            apriori_max_len: 3,
        }
    }
}

fn score(rules: Vec<Rule>, rows: &Encoded, labels: &[usize], kind: FitnessKind) -> Result<Vec<ScoredRule>> {
    rules
        .into_iter()
        .map(|rule| {
            let fitness = kind.score(&contingency(&rule, rows, labels)?);
            Ok(ScoredRule { rule, fitness })
        })
        .collect()
}

/// Fit a tree on the discretized rows against the model labels and turn
/// every root-to-leaf path into a rule. Numeric bins split as ordered codes,
/// categories as equality tests. A tree without splits yields the single
/// catch-all rule.
pub fn dt_surrogate_rules(
    rows: &Encoded,
    labels: &[usize],
    n_classes: usize,
    schema: &Schema,
    max_depth: usize,
) -> Result<Vec<ScoredRule>> {
    if max_depth < 1 {
        return Err(Error::Config("max_depth must be at least 1".into()));
    }
    if rows.is_empty() {
        return Err(Error::Empty("no rows for the surrogate tree".into()));
    }
    let x: Vec<Vec<f64>> = rows
        .rows()
        .map(|r| r.iter().map(|&c| f64::from(c)).collect())
        .collect();
    let tree = DecisionTree::fit(&x, labels, n_classes, &split_kinds(schema), max_depth);
    let mut rules = Vec::new();
    for path in tree.leaf_paths() {
        let mut allowed: Vec<Vec<bool>> = (0..schema.len()).map(|f| vec![true; schema.domain_size(f)]).collect();
        for &(f, test, went_left) in &path.steps {
            for (code, ok) in allowed[f].iter_mut().enumerate() {
                let left = match test {
                    Test::LessThan(t) => (code as f64) < t,
                    Test::Equals(v) => code as f64 == v,
                };
                *ok &= left == went_left;
            }
        }
        let mut clause = Vec::new();
        let mut empty = false;
        for (f, ok) in allowed.iter().enumerate() {
            let values: Vec<u32> = (0..ok.len() as u32).filter(|&c| ok[c as usize]).collect();
            if values.is_empty() {
                empty = true;
            } else if values.len() < ok.len() {
                clause.push(Condition::new(schema, f, values)?);
            }
        }
        if empty {
            continue;
        }
        rules.push(if clause.is_empty() {
            Rule::catch_all(path.prediction)
        } else {
            Rule::new(clause, path.prediction)?
        });
    }
    score(rules, rows, labels, FitnessKind::MutualInformation)
}

type Bits = Vec<u64>;

fn and(a: &Bits, b: &Bits) -> Bits {
    a.iter().zip(b).map(|(x, y)| x & y).collect()
}

fn count(b: &Bits) -> usize {
    b.iter().map(|w| w.count_ones() as usize).sum()
}

/// Levelwise frequent-itemset mining over single-value items, one item per
/// feature, up to `max_len` items. Each frequent itemset becomes a rule for
/// the majority model label among the rows it covers (ties: lower class).
/// With `items`, only those conditions may appear in itemsets. Output is
/// ranked by fitness, then fewer conditions.
pub fn apriori_rules(
    rows: &Encoded,
    labels: &[usize],
    n_classes: usize,
    schema: &Schema,
    support: f64,
    max_len: usize,
    items: Option<&[Condition]>,
    kind: FitnessKind,
) -> Result<Vec<ScoredRule>> {
    if !(support > 0.0 && support < 1.0) {
        return Err(Error::Config(format!("support must lie in (0, 1), got {support}")));
    }
    if max_len < 1 {
        return Err(Error::Config("max clause length must be at least 1".into()));
    }
    if rows.is_empty() {
        return Err(Error::Empty("no rows to mine".into()));
    }
    let n = rows.len();
    let min_count = (support * n as f64).ceil() as usize;
    let words = n.div_ceil(64);

    let mut item_list: Vec<Condition> = Vec::new();
    let mut item_bits: Vec<Bits> = Vec::new();
    for f in 0..schema.len() {
        for v in 0..schema.domain_size(f) as u32 {
            let Ok(c) = Condition::new(schema, f, [v]) else {
                continue;
            };
            if items.is_some_and(|allowed| !allowed.contains(&c)) {
                continue;
            }
            let mut bits = vec![0u64; words];
            for (i, r) in rows.rows().enumerate() {
                if r[f] == v {
                    bits[i / 64] |= 1 << (i % 64);
                }
            }
            if count(&bits) >= min_count {
                item_list.push(c);
                item_bits.push(bits);
            }
        }
    }

    // itemsets are sorted lists of item indices; items are ordered by feature
    let mut level: Vec<(Vec<usize>, Bits)> = (0..item_list.len()).map(|i| (vec![i], item_bits[i].clone())).collect();
    let mut frequent: Vec<(Vec<usize>, Bits)> = level.clone();
    for _ in 1..max_len {
        let known: std::collections::HashSet<&[usize]> = level.iter().map(|(s, _)| s.as_slice()).collect();
        let mut next = Vec::new();
        for a in 0..level.len() {
            for b in a + 1..level.len() {
                let (sa, ba) = &level[a];
                let (sb, _) = &level[b];
                let k = sa.len();
                if sa[..k - 1] != sb[..k - 1] {
                    continue;
                }
                let (last_a, last_b) = (sa[k - 1], sb[k - 1]);
                if item_list[last_a].feature() == item_list[last_b].feature() {
                    continue;
                }
                let mut cand = sa.clone();
                cand.push(last_b);
                let pruned = (0..cand.len()).any(|skip| {
                    let sub: Vec<usize> = cand.iter().enumerate().filter(|&(i, _)| i != skip).map(|(_, &x)| x).collect();
                    !known.contains(sub.as_slice())
                });
                if pruned {
                    continue;
                }
                let bits = and(ba, &item_bits[last_b]);
                if count(&bits) >= min_count {
                    next.push((cand, bits));
                }
            }
        }
        if next.is_empty() {
            break;
        }
        frequent.extend(next.iter().cloned());
        level = next;
    }

    let mut class_totals = vec![0u64; n_classes];
    for &y in labels {
        class_totals[y] += 1;
    }
    let mut scored = Vec::with_capacity(frequent.len());
    for (set, bits) in frequent {
        let mut votes = vec![0u64; n_classes];
        for (i, &y) in labels.iter().enumerate() {
            if bits[i / 64] >> (i % 64) & 1 == 1 {
                votes[y] += 1;
            }
        }
        let majority = (0..n_classes).max_by(|&a, &b| votes[a].cmp(&votes[b]).then(b.cmp(&a))).unwrap_or(0);
        let r1 = count(&bits) as u64;
        let n11 = votes[majority];
        let c1 = class_totals[majority];
        let table = ContingencyTable::new(n11, r1 - n11, c1 - n11, n as u64 - r1 - (c1 - n11))?;
        let clause = set.iter().map(|&i| item_list[i].clone()).collect();
        scored.push(ScoredRule {
            rule: Rule::new(clause, majority)?,
            fitness: kind.score(&table),
        });
    }
    scored.sort_by(|a, b| {
        b.fitness
            .total_cmp(&a.fitness)
            .then(a.rule.len().cmp(&b.rule.len()))
            .then_with(|| a.rule.clause().cmp(b.rule.clause()))
            .then(a.rule.prediction().cmp(&b.rule.prediction()))
    });
    Ok(scored)
}
