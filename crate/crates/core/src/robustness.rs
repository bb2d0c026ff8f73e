//! Out-of-distribution scoring of rule sets and training-set augmentation.
//!
//! Three generators shift a reference set:
//! bootstrap resamples whole rows, marginal draws every feature
//! independently from its empirical distribution, and uniform draws every
//! feature uniformly over its observed range or category list. Rows are
//! generated as raw values and only discretized for scoring, so the oracle
//! always sees data in its own input space.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Row, Schema, Value};
use crate::error::{Error, Result};
use crate::evaluation::{set_score, SelectedRule};
use crate::oracle::ModelOracle;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftKind {
    Bootstrap,
    Marginal,
    Uniform,
}

impl ShiftKind {
    pub const ALL: [ShiftKind; 3] = [ShiftKind::Bootstrap, ShiftKind::Marginal, ShiftKind::Uniform];

    fn stage(self) -> &'static str {
        match self {
            ShiftKind::Bootstrap => "shift-bootstrap",
            ShiftKind::Marginal => "shift-marginal",
            ShiftKind::Uniform => "shift-uniform",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            ShiftKind::Bootstrap => "Method 1",
            ShiftKind::Marginal => "Method 2",
            ShiftKind::Uniform => "Method 3",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftMethod {
    pub kind: ShiftKind,
    pub partitions: usize,
    pub fraction: f64,
    pub seed: u64,
    /// Row count the fraction refers to; the source size when `None`.
    pub base_len: Option<usize>,
}

impl ShiftMethod {
    pub fn new(kind: ShiftKind, seed: u64) -> Self {
        ShiftMethod {
            kind,
            partitions: 10,
            fraction: 0.10,
            seed,
            base_len: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.partitions < 1 {
            return Err(Error::Config("at least one partition is required".into()));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::Config(format!("fraction must lie in (0, 1], got {}", self.fraction)));
        }
        Ok(())
    }
}

/// Per-feature sampling state of a reference set.
struct Reference<'a> {
    rows: &'a [Row],
    columns: Vec<Vec<Value>>,
    ranges: Vec<Option<(f64, f64)>>,
    categories: Vec<Vec<u32>>,
}

impl<'a> Reference<'a> {
    fn new(rows: &'a [Row]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::Empty("reference set for perturbation has no rows".into()));
        };
        let m = first.len();
        let columns: Vec<Vec<Value>> = (0..m).map(|f| rows.iter().map(|r| r[f]).collect()).collect();
        let mut ranges = Vec::with_capacity(m);
        let mut categories = Vec::with_capacity(m);
        for col in &columns {
            let nums: Vec<f64> = col
                .iter()
                .filter_map(|v| match v {
                    Value::Num(x) => Some(*x),
                    Value::Cat(_) => None,
                })
                .collect();
            ranges.push(if nums.is_empty() {
                None
            } else {
                Some(nums.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x))))
            });
            let mut cats: Vec<u32> = col
                .iter()
                .filter_map(|v| match v {
                    Value::Cat(c) => Some(*c),
                    Value::Num(_) => None,
                })
                .collect();
            cats.sort_unstable();
            cats.dedup();
            categories.push(cats);
        }
        Ok(Reference {
            rows,
            columns,
            ranges,
            categories,
        })
    }

    fn draw(&self, kind: ShiftKind, rng: &mut ChaCha8Rng) -> Row {
        match kind {
            ShiftKind::Bootstrap => self.rows.choose(rng).expect("non-empty").clone(),
            ShiftKind::Marginal => self.columns.iter().map(|c| *c.choose(rng).expect("non-empty")).collect(),
            ShiftKind::Uniform => (0..self.columns.len())
                .map(|f| match self.ranges[f] {
                    Some((lo, hi)) if lo < hi => Value::Num(rng.gen_range(lo..=hi)),
                    Some((lo, _)) => Value::Num(lo),
                    None => Value::Cat(*self.categories[f].choose(rng).expect("non-empty")),
                })
                .collect(),
        }
    }
}

fn partition_size(fraction: f64, base: usize) -> usize {
    (fraction * base as f64).ceil() as usize
}

/// `method.partitions` shifted samples of the reference rows.
pub fn perturb(method: &ShiftMethod, source: &[Row]) -> Result<Vec<Vec<Row>>> {
    method.validate()?;
    let reference = Reference::new(source)?;
    let size = partition_size(method.fraction, method.base_len.unwrap_or(source.len()));
    Ok((0..method.partitions)
        .map(|p| {
            let mut rng = seed::stage_rng(method.seed, method.kind.stage(), p as u64);
            (0..size).map(|_| reference.draw(method.kind, &mut rng)).collect()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodScore {
    pub method: ShiftKind,
    pub mean: f64,
    pub std: f64,
    pub scores: Vec<f64>,
}

impl MethodScore {
    pub fn cell(&self) -> String {
        format!("{:.2} ± {:.2}", self.mean, self.std)
    }
}

/// Set-Score of `rules` against fresh oracle labels on every partition of
/// every method; mean and population standard deviation per method.
pub fn uncertainty_analysis(
    rules: &[SelectedRule],
    oracle: &ModelOracle,
    schema: &Schema,
    source: &[Row],
    methods: &[ShiftMethod],
) -> Result<Vec<MethodScore>> {
    methods
        .iter()
        .map(|m| {
            let parts = perturb(m, source)?;
            let mut scores = Vec::with_capacity(parts.len());
            for (p, rows) in parts.iter().enumerate() {
                let labels = oracle.predict_batch(rows).map_err(|e| match e {
                    Error::Oracle { message, stderr } => Error::Oracle {
                        message: format!("{} partition {p}: {message}", m.kind.title()),
                        stderr,
                    },
                    other => other,
                })?;
                scores.push(set_score(rules, &schema.encode(rows), &labels)?);
            }
            let n = scores.len() as f64;
            let mean = scores.iter().sum::<f64>() / n;
            let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
            Ok(MethodScore {
                method: m.kind,
                mean,
                std: var.sqrt(),
                scores,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub approach: String,
    pub methods: Vec<MethodScore>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub config_hash: String,
    pub selection_size: usize,
    pub rows: Vec<ReportRow>,
}

impl RobustnessReport {
    pub fn to_markdown(&self) -> String {
        let Some(first) = self.rows.first() else {
            return String::from("(no interpretations)\n");
        };
        let titles: Vec<&str> = first.methods.iter().map(|m| m.method.title()).collect();
        let mut out = format!("| Approach | {} |\n|---|{}\n", titles.join(" | "), "---|".repeat(titles.len()));
        for row in &self.rows {
            let cells: Vec<String> = row.methods.iter().map(MethodScore::cell).collect();
            out.push_str(&format!("| {} | {} |\n", row.approach, cells.join(" | ")));
        }
        out
    }
}

/// Append oracle-labelled synthetic rows to the training rows. Each
/// `(kind, fraction)` contributes `ceil(fraction * |train|)` rows drawn from
/// the training rows; a zero fraction contributes nothing. The oracle is
/// only queried, never refit.
pub fn augment(
    train_rows: &[Row],
    train_labels: &[usize],
    oracle: &ModelOracle,
    generators: &[(ShiftKind, f64)],
    seed: u64,
) -> Result<(Vec<Row>, Vec<usize>)> {
    if train_rows.len() != train_labels.len() {
        return Err(Error::LengthMismatch {
            left: train_rows.len(),
            right: train_labels.len(),
        });
    }
    let mut rows = train_rows.to_vec();
    let mut labels = train_labels.to_vec();
    for &(kind, fraction) in generators {
        if fraction == 0.0 {
            continue;
        }
        let method = ShiftMethod {
            kind,
            partitions: 1,
            fraction,
            seed: seed::derive(seed, "augment", 0),
            base_len: None,
        };
        let synthetic = perturb(&method, train_rows)?.pop().unwrap_or_default();
        labels.extend(oracle.predict_batch(&synthetic)?);
        rows.extend(synthetic);
    }
    Ok((rows, labels))
}
