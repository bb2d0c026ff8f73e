//! Candidate condition mining, per predicted class.
//!
//! The local miner repeatedly explains a random, still uncovered instance
//! of the class with a perturbation-based linear surrogate and keeps the
//! conditions that push the model towards the class. The frequent miner is
//! the support-threshold alternative.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Encoded, FeatureKind, Row, Schema, Value};
use crate::error::{Error, Result};
use crate::oracle::ModelOracle;
use crate::rules::{Condition, ConditionRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedCondition {
    pub condition: Condition,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Provenance {
    LocalSurrogate,
    Frequent { threshold: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionPool {
    pub class: usize,
    pub conditions: Vec<Condition>,
    pub provenance: Provenance,
}

impl ConditionPool {
    pub fn len(&self) -> usize {
        self.conditions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conditions.is_empty()
    }

    fn push_unique(&mut self, c: Condition) -> bool {
        if self.conditions.contains(&c) {
            false
        } else {
            self.conditions.push(c);
            true
        }
    }

    pub fn to_record(&self, schema: &Schema, classes: &[String]) -> PoolRecord {
        PoolRecord {
            class: classes[self.class].clone(),
            provenance: self.provenance,
            conditions: self
                .conditions
                .iter()
                .map(|c| ConditionRecord::from_condition(c, schema))
                .collect(),
        }
    }
}

/// JSON dump of a pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolRecord {
    pub class: String,
    pub provenance: Provenance,
    pub conditions: Vec<ConditionRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalConfig {
    pub samples: usize,
    pub top_k: usize,
    /// Kernel width; `None` means `0.75 * sqrt(feature count)`.
    pub kernel_width: Option<f64>,
    pub ridge_lambda: f64,
    /// Explanations allowed per class instance before falling back.
    pub budget_factor: usize,
}

impl Default for LocalConfig {
    fn default() -> Self {
        LocalConfig {
            samples: 5000,
            top_k: 10,
            kernel_width: None,
            ridge_lambda: 1.0,
            budget_factor: 10,
        }
    }
}

/// Empirical per-feature bin distribution of a reference set, plus the
/// observed range of every numeric feature.
#[derive(Debug, Clone)]
pub struct Background {
    bin_counts: Vec<Vec<usize>>,
    range: Vec<(f64, f64)>,
}

impl Background {
    pub fn new(schema: &Schema, rows: &[Row]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty("background set has no rows".into()));
        }
        let mut bin_counts: Vec<Vec<usize>> =
            (0..schema.len()).map(|f| vec![0; schema.domain_size(f)]).collect();
        let mut range = vec![(f64::INFINITY, f64::NEG_INFINITY); schema.len()];
        for r in rows {
            for (f, v) in r.iter().enumerate() {
                let code = schema.encode_value(f, *v) as usize;
                if let Some(c) = bin_counts[f].get_mut(code) {
                    *c += 1;
                }
                if let Value::Num(x) = v {
                    range[f].0 = range[f].0.min(*x);
                    range[f].1 = range[f].1.max(*x);
                }
            }
        }
        Ok(Background { bin_counts, range })
    }

    fn draw_bin(&self, feature: usize, rng: &mut impl Rng) -> u32 {
        let counts = &self.bin_counts[feature];
        let total: usize = counts.iter().sum();
        let mut t = rng.gen_range(0..total);
        for (b, &c) in counts.iter().enumerate() {
            if t < c {
                return b as u32;
            }
            t -= c;
        }
        unreachable!("draw within total")
    }

    /// A concrete value inside `bin`, uniform over the part of the bin that
    /// lies in the observed range.
    fn materialize(&self, schema: &Schema, feature: usize, bin: u32, rng: &mut impl Rng) -> Value {
        let f = schema.feature(feature);
        match f.kind {
            FeatureKind::Categorical => Value::Cat(bin),
            FeatureKind::Numeric => {
                let (lo, hi) = f.bin_bounds(bin);
                let (min, max) = self.range[feature];
                let lo = lo.max(min);
                let hi = hi.min(max);
                if lo < hi {
                    Value::Num(rng.gen_range(lo..hi))
                } else {
                    Value::Num(lo)
                }
            }
        }
    }
}

/// Perturbation sample around one instance: binary "same bin as the
/// instance" design matrix, one-vs-rest response, and kernel weights.
#[derive(Debug, Clone)]
pub struct LocalSample {
    pub design: Vec<Vec<f64>>,
    pub response: Vec<f64>,
    pub weights: Vec<f64>,
}

pub fn perturb_locally(
    instance: &Row,
    oracle: &ModelOracle,
    schema: &Schema,
    target_class: usize,
    background: &Background,
    cfg: &LocalConfig,
    rng: &mut ChaCha8Rng,
) -> Result<LocalSample> {
    let m = schema.len();
    let codes = schema.encode_row(instance);
    let width = cfg.kernel_width.unwrap_or(0.75 * (m as f64).sqrt());
    let mut rows = Vec::with_capacity(cfg.samples);
    let mut design = Vec::with_capacity(cfg.samples);
    rows.push(instance.clone());
    design.push(vec![1.0; m]);
    for _ in 1..cfg.samples {
        let mut row = Vec::with_capacity(m);
        let mut z = Vec::with_capacity(m);
        for f in 0..m {
            if rng.gen_bool(0.5) {
                row.push(instance[f]);
                z.push(1.0);
            } else {
                let b = background.draw_bin(f, rng);
                row.push(background.materialize(schema, f, b, rng));
                z.push(if b == codes[f] { 1.0 } else { 0.0 });
            }
        }
        rows.push(row);
        design.push(z);
    }
    let preds = oracle.predict_batch(&rows)?;
    let response = preds
        .iter()
        .map(|&p| if p == target_class { 1.0 } else { 0.0 })
        .collect();
    let weights = design
        .iter()
        .map(|z| {
            let differing = z.iter().filter(|&&v| v == 0.0).count() as f64;
            let d = differing / (m as f64).sqrt();
            (-(d * d) / (width * width)).exp()
        })
        .collect();
    Ok(LocalSample {
        design,
        response,
        weights,
    })
}

/// Weighted ridge regression with an unpenalized intercept, solved through
/// the normal equations on weighted-centered data.
pub fn fit_weighted_ridge(sample: &LocalSample, lambda: f64) -> (f64, Vec<f64>) {
    let n = sample.design.len();
    let m = sample.design.first().map_or(0, Vec::len);
    let wsum: f64 = sample.weights.iter().sum();
    let mean = |col: &dyn Fn(usize) -> f64| {
        (0..n).map(|i| sample.weights[i] * col(i)).sum::<f64>() / wsum
    };
    let y_mean = mean(&|i| sample.response[i]);
    let z_mean: Vec<f64> = (0..m).map(|j| mean(&|i| sample.design[i][j])).collect();

    let mut a = DMatrix::<f64>::zeros(m, m);
    let mut b = DVector::<f64>::zeros(m);
    let mut zc = vec![0.0; m];
    for i in 0..n {
        let w = sample.weights[i];
        for j in 0..m {
            zc[j] = sample.design[i][j] - z_mean[j];
        }
        let yc = sample.response[i] - y_mean;
        for j in 0..m {
            b[j] += w * zc[j] * yc;
            for k in j..m {
                a[(j, k)] += w * zc[j] * zc[k];
            }
        }
    }
    for j in 0..m {
        for k in 0..j {
            a[(j, k)] = a[(k, j)];
        }
        a[(j, j)] += lambda;
    }
    let coef = match a.clone().cholesky() {
        Some(ch) => ch.solve(&b),
        None => a.lu().solve(&b).unwrap_or_else(|| DVector::zeros(m)),
    };
    let coef: Vec<f64> = coef.iter().copied().collect();
    let intercept = y_mean - coef.iter().zip(&z_mean).map(|(c, z)| c * z).sum::<f64>();
    (intercept, coef)
}

/// Coefficients at or below this are treated as non-positive.
const MIN_WEIGHT: f64 = 1e-10;

/// Local linear explanation of why the model assigns `target_class` to
/// `instance`. Returns up to `top_k` conditions "feature ∈ {instance's bin}"
/// ranked by |coefficient|, keeping only positive ones.
pub fn local_explain(
    instance: &Row,
    oracle: &ModelOracle,
    schema: &Schema,
    target_class: usize,
    background: &Background,
    cfg: &LocalConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<WeightedCondition>> {
    let sample = perturb_locally(instance, oracle, schema, target_class, background, cfg, rng)?;
    if sample.response.iter().all(|&y| y == sample.response[0]) {
        return Ok(Vec::new());
    }
    let (_, coef) = fit_weighted_ridge(&sample, cfg.ridge_lambda);
    let codes = schema.encode_row(instance);
    let mut order: Vec<usize> = (0..coef.len()).collect();
    order.sort_by(|&a, &b| coef[b].abs().total_cmp(&coef[a].abs()).then(a.cmp(&b)));
    Ok(order
        .into_iter()
        .take(cfg.top_k)
        .filter(|&f| coef[f] > MIN_WEIGHT)
        .filter_map(|f| {
            Condition::new(schema, f, [codes[f]])
                .ok()
                .map(|condition| WeightedCondition {
                    condition,
                    weight: coef[f],
                })
        })
        .collect())
}

/// Rows the miners work on: raw values, their codes, and model labels.
#[derive(Debug, Clone, Copy)]
pub struct MiningSet<'a> {
    pub rows: &'a [Row],
    pub encoded: &'a Encoded,
    pub labels: &'a [usize],
}

/// Explain random uncovered instances of `class` until every instance of
/// the class satisfies some pool condition, or the explanation budget is
/// spent. Leftover instances then each get the single condition on their
/// own bin of the feature whose bin is purest for the class.
pub fn mine_conditions_local(
    class: usize,
    set: MiningSet<'_>,
    oracle: &ModelOracle,
    schema: &Schema,
    cfg: &LocalConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ConditionPool> {
    let members: Vec<usize> = (0..set.labels.len())
        .filter(|&i| set.labels[i] == class)
        .collect();
    let mut pool = ConditionPool {
        class,
        conditions: Vec::new(),
        provenance: Provenance::LocalSurrogate,
    };
    if members.is_empty() {
        return Ok(pool);
    }
    let background = Background::new(schema, set.rows)?;
    let mut uncovered = members.clone();
    let budget = cfg.budget_factor.max(1) * members.len();
    let mut calls = 0;
    while !uncovered.is_empty() && calls < budget {
        let pick = *uncovered.choose(rng).expect("non-empty");
        calls += 1;
        let explained = local_explain(
            &set.rows[pick],
            oracle,
            schema,
            class,
            &background,
            cfg,
            rng,
        )?;
        let mut added = Vec::new();
        for wc in explained {
            if pool.push_unique(wc.condition.clone()) {
                added.push(wc.condition);
            }
        }
        if !added.is_empty() {
            uncovered.retain(|&i| !added.iter().any(|c| c.covers(set.encoded.row(i))));
        }
    }

    for i in uncovered {
        let row = set.encoded.row(i);
        if pool.conditions.iter().any(|c| c.covers(row)) {
            continue;
        }
        if let Some(c) = purest_condition(class, row, set, schema) {
            pool.push_unique(c);
        }
    }
    Ok(pool)
}

fn purest_condition(class: usize, row: &[u32], set: MiningSet<'_>, schema: &Schema) -> Option<Condition> {
    let mut best: Option<(f64, usize)> = None;
    for f in 0..schema.len() {
        if schema.domain_size(f) < 2 {
            continue;
        }
        let (mut hit, mut total) = (0usize, 0usize);
        for (r, &y) in set.encoded.rows().zip(set.labels) {
            if r[f] == row[f] {
                total += 1;
                hit += usize::from(y == class);
            }
        }
        let purity = hit as f64 / total.max(1) as f64;
        if best.is_none_or(|(p, _)| purity > p) {
            best = Some((purity, f));
        }
    }
    best.and_then(|(_, f)| Condition::new(schema, f, [row[f]]).ok())
}

/// Every single-value condition whose support within `class` reaches
/// `threshold`.
pub fn mine_conditions_frequent(
    class: usize,
    encoded: &Encoded,
    labels: &[usize],
    schema: &Schema,
    threshold: f64,
) -> Result<ConditionPool> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!(
            "support threshold must lie in (0, 1), got {threshold}"
        )));
    }
    if encoded.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: encoded.len(),
            right: labels.len(),
        });
    }
    let mut counts: Vec<Vec<usize>> = (0..schema.len()).map(|f| vec![0; schema.domain_size(f)]).collect();
    let mut size = 0usize;
    for (r, &y) in encoded.rows().zip(labels) {
        if y == class {
            size += 1;
            for (f, &c) in r.iter().enumerate() {
                if let Some(n) = counts[f].get_mut(c as usize) {
                    *n += 1;
                }
            }
        }
    }
    let mut pool = ConditionPool {
        class,
        conditions: Vec::new(),
        provenance: Provenance::Frequent { threshold },
    };
    if size == 0 {
        return Ok(pool);
    }
    for (f, fc) in counts.iter().enumerate() {
        for (v, &n) in fc.iter().enumerate() {
            if n as f64 / size as f64 >= threshold {
                if let Ok(c) = Condition::new(schema, f, [v as u32]) {
                    pool.conditions.push(c);
                }
            }
        }
    }
    Ok(pool)
}
