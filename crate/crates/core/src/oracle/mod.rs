//! Uniform black-box prediction interface with a prediction cache.

mod external;
mod tree;

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

pub use external::ExternalProcess;
pub use tree::{DecisionTree, Forest, ForestConfig, LeafPath, Node, SplitKind, Test};

use crate::data::{Dataset, FeatureKind, Row, Schema};
use crate::error::{Error, Result};

type PredictFn = dyn Fn(&[crate::data::Value]) -> usize + Send + Sync;

pub enum Backend {
    Tree(DecisionTree),
    Forest(Forest),
    External(ExternalProcess),
    /// In-process closure returning a class index; handy for known decision
    /// logic in experiments.
    Function(Box<PredictFn>),
}

impl std::fmt::Debug for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Backend::Tree(_) => f.write_str("Tree"),
            Backend::Forest(_) => f.write_str("Forest"),
            Backend::External(p) => write!(f, "External({:?})", p.argv()),
            Backend::Function(_) => f.write_str("Function"),
        }
    }
}

/// A black-box classifier. Predictions are class indices into
/// [`ModelOracle::classes`].
#[derive(Debug)]
pub struct ModelOracle {
    schema: Schema,
    classes: Vec<String>,
    backend: Backend,
    cache: Option<Mutex<HashMap<String, usize>>>,
    backend_calls: AtomicUsize,
}

pub fn split_kinds(schema: &Schema) -> Vec<SplitKind> {
    schema
        .features
        .iter()
        .map(|f| match f.kind {
            FeatureKind::Numeric => SplitKind::Ordinal,
            FeatureKind::Categorical => SplitKind::Nominal,
        })
        .collect()
}

fn raw_matrix(rows: &[Row]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| r.iter().map(|v| v.as_f64()).collect())
        .collect()
}

fn check_classes(classes: &[String]) -> Result<()> {
    if classes.is_empty() {
        return Err(Error::Config("oracle needs at least one class label".into()));
    }
    let mut seen = std::collections::HashSet::new();
    if !classes.iter().all(|c| seen.insert(c)) {
        return Err(Error::Config("class labels must be distinct".into()));
    }
    Ok(())
}

impl ModelOracle {
    fn with_backend(schema: Schema, classes: Vec<String>, backend: Backend) -> Result<Self> {
        check_classes(&classes)?;
        Ok(ModelOracle {
            schema,
            classes,
            backend,
            cache: Some(Mutex::new(HashMap::new())),
            backend_calls: AtomicUsize::new(0),
        })
    }

    /// Fit a single CART tree on `train` against class indices `labels`.
    pub fn fit_tree(
        train: &Dataset,
        labels: &[usize],
        classes: Vec<String>,
        max_depth: usize,
    ) -> Result<Self> {
        fit_checks(train, labels, &classes)?;
        if max_depth == 0 {
            return Err(Error::Config("max_depth must be at least 1".into()));
        }
        let tree = DecisionTree::fit(
            &raw_matrix(&train.rows),
            labels,
            classes.len(),
            &split_kinds(&train.schema),
            max_depth,
        );
        Self::with_backend(train.schema.clone(), classes, Backend::Tree(tree))
    }

    pub fn fit_forest(
        train: &Dataset,
        labels: &[usize],
        classes: Vec<String>,
        cfg: &ForestConfig,
    ) -> Result<Self> {
        fit_checks(train, labels, &classes)?;
        if cfg.max_depth == 0 {
            return Err(Error::Config("max_depth must be at least 1".into()));
        }
        let forest = Forest::fit(
            &raw_matrix(&train.rows),
            labels,
            classes.len(),
            &split_kinds(&train.schema),
            cfg,
        );
        Self::with_backend(train.schema.clone(), classes, Backend::Forest(forest))
    }

    /// Start `argv` as a long-lived child speaking the line protocol.
    pub fn connect_external(schema: Schema, argv: &[String], classes: Vec<String>) -> Result<Self> {
        check_classes(&classes)?;
        let process = ExternalProcess::spawn(argv)?;
        Self::with_backend(schema, classes, Backend::External(process))
    }

    pub fn from_fn<F>(schema: Schema, classes: Vec<String>, f: F) -> Result<Self>
    where
        F: Fn(&[crate::data::Value]) -> usize + Send + Sync + 'static,
    {
        Self::with_backend(schema, classes, Backend::Function(Box::new(f)))
    }

    pub fn without_cache(mut self) -> Self {
        self.cache = None;
        self
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    /// Number of times the backend itself has been asked for predictions.
    pub fn backend_calls(&self) -> usize {
        self.backend_calls.load(Ordering::Relaxed)
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == label)
    }

    /// Predict one class index per row, in order. The cache is consulted
    /// first; all uncached rows go to the backend in a single call.
    pub fn predict_batch(&self, rows: &[Row]) -> Result<Vec<usize>> {
        if rows.is_empty() {
            return Ok(Vec::new());
        }
        for r in rows {
            if r.len() != self.schema.len() {
                return Err(Error::Schema(format!(
                    "row has {} values, oracle expects {}",
                    r.len(),
                    self.schema.len()
                )));
            }
        }
        let Some(cache) = &self.cache else {
            return self.call_backend(rows);
        };
        let keys: Vec<String> = rows.iter().map(|r| self.schema.row_to_csv(r)).collect();
        let mut missing: Vec<usize> = Vec::new();
        {
            let cache = cache.lock().unwrap_or_else(|e| e.into_inner());
            let mut queued = std::collections::HashSet::new();
            for (i, k) in keys.iter().enumerate() {
                if !cache.contains_key(k) && queued.insert(k.as_str()) {
                    missing.push(i);
                }
            }
        }
        if !missing.is_empty() {
            let batch: Vec<Row> = missing.iter().map(|&i| rows[i].clone()).collect();
            let preds = self.call_backend(&batch)?;
            let mut cache = cache.lock().unwrap_or_else(|e| e.into_inner());
            for (&i, p) in missing.iter().zip(preds) {
                cache.insert(keys[i].clone(), p);
            }
        }
        let cache = cache.lock().unwrap_or_else(|e| e.into_inner());
        Ok(keys.iter().map(|k| cache[k]).collect())
    }

    pub fn predict_labels(&self, rows: &[Row]) -> Result<Vec<String>> {
        Ok(self
            .predict_batch(rows)?
            .into_iter()
            .map(|c| self.classes[c].clone())
            .collect())
    }

    fn call_backend(&self, rows: &[Row]) -> Result<Vec<usize>> {
        self.backend_calls.fetch_add(1, Ordering::Relaxed);
        match &self.backend {
            Backend::Tree(t) => Ok(raw_matrix(rows).iter().map(|r| t.predict(r)).collect()),
            Backend::Forest(f) => Ok(raw_matrix(rows).iter().map(|r| f.predict(r)).collect()),
            Backend::Function(f) => rows
                .iter()
                .map(|r| {
                    let c = f(r);
                    if c < self.classes.len() {
                        Ok(c)
                    } else {
                        Err(Error::oracle(format!("predicted class index {c} out of range")))
                    }
                })
                .collect(),
            Backend::External(p) => {
                let lines: Vec<String> = rows.iter().map(|r| self.schema.row_to_csv(r)).collect();
                p.round_trip(&lines)?
                    .into_iter()
                    .map(|label| {
                        self.class_index(&label)
                            .ok_or_else(|| Error::oracle(format!("unknown class label `{label}`")))
                    })
                    .collect()
            }
        }
    }
}

fn fit_checks(train: &Dataset, labels: &[usize], classes: &[String]) -> Result<()> {
    if train.row_count() != labels.len() {
        return Err(Error::LengthMismatch {
            left: train.row_count(),
            right: labels.len(),
        });
    }
    check_classes(classes)?;
    if labels.iter().any(|&l| l >= classes.len()) {
        return Err(Error::Config("label index outside the class list".into()));
    }
    Ok(())
}

/// Map text labels to indices in a sorted, de-duplicated class list.
pub fn index_labels(labels: &[String]) -> (Vec<String>, Vec<usize>) {
    let mut classes: Vec<String> = labels.to_vec();
    classes.sort();
    classes.dedup();
    let idx = labels
        .iter()
        .map(|l| classes.binary_search(l).expect("present"))
        .collect();
    (classes, idx)
}
