//! Tabular data: typed schema, raw rows, discretized codes, supervised
//! entropy binning and the train/validation/scoring split.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on the number of bins produced for a numeric feature.
pub const DEFAULT_MAX_BINS: usize = 4;

/// Code assigned to a categorical value that is not part of the schema.
pub const UNKNOWN_CODE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub kind: FeatureKind,
    /// Ordered distinct values (categorical only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
    /// Strictly increasing cut points (numeric only). `k` cuts induce `k + 1`
    /// half-open intervals `[c_{i-1}, c_i)`, the outer ones unbounded.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cuts: Vec<f64>,
}

impl Feature {
    pub fn numeric(name: impl Into<String>, cuts: Vec<f64>) -> Self {
        Feature {
            name: name.into(),
            kind: FeatureKind::Numeric,
            categories: Vec::new(),
            cuts,
        }
    }

    pub fn categorical<S: Into<String>>(name: impl Into<String>, categories: Vec<S>) -> Self {
        Feature {
            name: name.into(),
            kind: FeatureKind::Categorical,
            categories: categories.into_iter().map(Into::into).collect(),
            cuts: Vec::new(),
        }
    }

    /// Number of distinct codes the feature can take after discretization.
    pub fn domain_size(&self) -> usize {
        match self.kind {
            FeatureKind::Numeric => self.cuts.len() + 1,
            FeatureKind::Categorical => self.categories.len(),
        }
    }

    pub fn bin_of(&self, x: f64) -> u32 {
        self.cuts.partition_point(|&c| c <= x) as u32
    }

    /// Bounds of a numeric bin; the outer bins extend to infinity.
    pub fn bin_bounds(&self, bin: u32) -> (f64, f64) {
        let b = bin as usize;
        let lo = if b == 0 { f64::NEG_INFINITY } else { self.cuts[b - 1] };
        let hi = if b >= self.cuts.len() { f64::INFINITY } else { self.cuts[b] };
        (lo, hi)
    }

    /// Human readable label for one code, e.g. `"10 ≤ age < 25"` or `"US"`.
    pub fn code_label(&self, code: u32) -> String {
        match self.kind {
            FeatureKind::Categorical => self
                .categories
                .get(code as usize)
                .cloned()
                .unwrap_or_else(|| "?".to_string()),
            FeatureKind::Numeric => {
                let (lo, hi) = self.bin_bounds(code);
                format!("{} ≤ {} < {}", fmt_bound(lo), self.name, fmt_bound(hi))
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self.kind {
            FeatureKind::Numeric => {
                if self.cuts.iter().any(|c| !c.is_finite())
                    || self.cuts.windows(2).any(|w| w[0] >= w[1])
                {
                    return Err(Error::Schema(format!(
                        "cut points of `{}` must be finite and strictly increasing",
                        self.name
                    )));
                }
            }
            FeatureKind::Categorical => {
                if self.categories.is_empty() {
                    return Err(Error::Schema(format!("`{}` has no categories", self.name)));
                }
                let distinct: BTreeSet<_> = self.categories.iter().collect();
                if distinct.len() != self.categories.len() {
                    return Err(Error::Schema(format!(
                        "`{}` has duplicate categories",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }
}

fn fmt_bound(x: f64) -> String {
    if x == f64::INFINITY {
        "+inf".to_string()
    } else if x == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{x}")
    }
}

/// A raw cell. Categorical values hold the index into the feature's category
/// list; [`UNKNOWN_CODE`] marks a value outside it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    Num(f64),
    Cat(u32),
}

impl Value {
    pub fn as_f64(self) -> f64 {
        match self {
            Value::Num(x) => x,
            Value::Cat(c) => f64::from(c),
        }
    }
}

pub type Row = Vec<Value>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Schema {
    pub features: Vec<Feature>,
}

impl Schema {
    pub fn new(features: Vec<Feature>) -> Result<Self> {
        for f in &features {
            f.validate()?;
        }
        let names: BTreeSet<_> = features.iter().map(|f| f.name.as_str()).collect();
        if names.len() != features.len() {
            return Err(Error::Schema("duplicate feature names".into()));
        }
        Ok(Schema { features })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn feature(&self, index: usize) -> &Feature {
        &self.features[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn domain_size(&self, feature: usize) -> usize {
        self.features[feature].domain_size()
    }

    pub fn encode_value(&self, feature: usize, value: Value) -> u32 {
        match value {
            Value::Num(x) => self.features[feature].bin_of(x),
            Value::Cat(c) => c,
        }
    }

    pub fn encode_row(&self, row: &[Value]) -> Vec<u32> {
        row.iter()
            .enumerate()
            .map(|(f, v)| self.encode_value(f, *v))
            .collect()
    }

    pub fn encode(&self, rows: &[Row]) -> Encoded {
        let mut codes = Vec::with_capacity(rows.len() * self.len());
        for row in rows {
            codes.extend(self.encode_row(row));
        }
        Encoded {
            n_features: self.len(),
            codes,
        }
    }

    /// Canonical text form of one cell; also the wire format for external
    /// oracles.
    pub fn format_value(&self, feature: usize, value: Value) -> String {
        match value {
            Value::Num(x) => format!("{x}"),
            Value::Cat(c) => self.features[feature].code_label(c),
        }
    }

    /// Comma-joined cells in schema order, no trailing newline.
    pub fn row_to_csv(&self, row: &[Value]) -> String {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(f, v)| self.format_value(f, *v))
            .collect();
        cells.join(",")
    }

    /// Parse a cell under this schema. Unknown categories map to
    /// [`UNKNOWN_CODE`] rather than failing.
    pub fn parse_value(&self, feature: usize, text: &str) -> std::result::Result<Value, String> {
        let f = &self.features[feature];
        match f.kind {
            FeatureKind::Numeric => text
                .parse::<f64>()
                .map(Value::Num)
                .map_err(|_| format!("`{text}` is not a number (feature `{}`)", f.name)),
            FeatureKind::Categorical => Ok(Value::Cat(
                f.categories
                    .iter()
                    .position(|c| c == text)
                    .map_or(UNKNOWN_CODE, |i| i as u32),
            )),
        }
    }

    /// Copy of the schema with supervised cut points fitted on every numeric
    /// feature. `rows` and `labels` are the supervision set.
    pub fn discretize(&self, rows: &[Row], labels: &[usize], max_bins: usize) -> Result<Schema> {
        if rows.len() != labels.len() {
            return Err(Error::LengthMismatch {
                left: rows.len(),
                right: labels.len(),
            });
        }
        let mut out = self.clone();
        for (f, feature) in out.features.iter_mut().enumerate() {
            if feature.kind == FeatureKind::Numeric {
                let column: Vec<f64> = rows.iter().map(|r| r[f].as_f64()).collect();
                feature.cuts = entropy_bin(&column, labels, max_bins)?;
            }
        }
        Ok(out)
    }
}

/// Row-major matrix of discretized codes.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Encoded {
    n_features: usize,
    codes: Vec<u32>,
}

impl Encoded {
    pub fn from_rows(n_features: usize, rows: &[Vec<u32>]) -> Self {
        let mut codes = Vec::with_capacity(rows.len() * n_features);
        for r in rows {
            assert_eq!(r.len(), n_features, "row width mismatch");
            codes.extend_from_slice(r);
        }
        Encoded { n_features, codes }
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn len(&self) -> usize {
        if self.n_features == 0 {
            0
        } else {
            self.codes.len() / self.n_features
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.codes[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u32]> {
        self.codes.chunks_exact(self.n_features.max(1))
    }

    pub fn select(&self, idx: &[usize]) -> Encoded {
        let mut codes = Vec::with_capacity(idx.len() * self.n_features);
        for &i in idx {
            codes.extend_from_slice(self.row(i));
        }
        Encoded {
            n_features: self.n_features,
            codes,
        }
    }

    pub fn extend(&mut self, other: &Encoded) {
        assert_eq!(self.n_features, other.n_features, "width mismatch");
        self.codes.extend_from_slice(&other.codes);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: Schema,
    pub rows: Vec<Row>,
}

impl Dataset {
    pub fn new(schema: Schema, rows: Vec<Row>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty("dataset has no rows".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != schema.len() {
                return Err(Error::Parse {
                    row: i + 1,
                    message: format!("expected {} values, found {}", schema.len(), row.len()),
                });
            }
            for (f, v) in row.iter().enumerate() {
                let ok = match (schema.feature(f).kind, v) {
                    (FeatureKind::Numeric, Value::Num(x)) => x.is_finite(),
                    (FeatureKind::Categorical, Value::Cat(c)) => {
                        (*c as usize) < schema.feature(f).categories.len()
                    }
                    _ => false,
                };
                if !ok {
                    return Err(Error::Parse {
                        row: i + 1,
                        message: format!("invalid value for `{}`", schema.feature(f).name),
                    });
                }
            }
        }
        Ok(Dataset { schema, rows })
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn select(&self, idx: &[usize]) -> Vec<Row> {
        idx.iter().map(|&i| self.rows[i].clone()).collect()
    }

    /// Remove a column and return its cells as text, e.g. to separate the
    /// ground-truth target from the features.
    pub fn take_column(&self, name: &str) -> Result<(Dataset, Vec<String>)> {
        let col = self
            .schema
            .index_of(name)
            .ok_or_else(|| Error::Schema(format!("no column named `{name}`")))?;
        if self.schema.len() == 1 {
            return Err(Error::Schema("cannot remove the only column".into()));
        }
        let values = self
            .rows
            .iter()
            .map(|r| self.schema.format_value(col, r[col]))
            .collect();
        let mut features = self.schema.features.clone();
        features.remove(col);
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let mut r = r.clone();
                r.remove(col);
                r
            })
            .collect();
        Ok((
            Dataset {
                schema: Schema { features },
                rows,
            },
            values,
        ))
    }
}

/// Read rows of a headed CSV under an existing schema, matching columns by
/// name. Extra columns are ignored.
pub fn read_rows<R: std::io::Read>(reader: R, schema: &Schema) -> Result<Vec<Row>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse {
            row: 0,
            message: e.to_string(),
        })?
        .clone();
    let columns = schema
        .features
        .iter()
        .map(|f| {
            header
                .iter()
                .position(|h| h == f.name)
                .ok_or_else(|| Error::Schema(format!("input has no column `{}`", f.name)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        let values = columns
            .iter()
            .enumerate()
            .map(|(f, &c)| match record.get(c) {
                Some(text) if !text.is_empty() => schema.parse_value(f, text),
                _ => Err(format!("missing value for `{}`", schema.features[f].name)),
            })
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|message| Error::Parse { row, message })?;
        rows.push(values);
    }
    Ok(rows)
}

/// Load a schema-hint file: a JSON object mapping feature name to
/// `"numeric"` or `"categorical"`.
pub fn load_hints(path: &Path) -> Result<HashMap<String, FeatureKind>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(serde_json::from_str(&text)?)
}

/// Read a headed, comma separated file. Columns whose every cell parses as a
/// finite number are numeric unless a hint says otherwise; everything else
/// is categorical with its distinct values in lexicographic order.
pub fn load_csv(path: &Path, hints: Option<&HashMap<String, FeatureKind>>) -> Result<Dataset> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file, hints)
}

pub fn read_csv<R: std::io::Read>(
    reader: R,
    hints: Option<&HashMap<String, FeatureKind>>,
) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Parse {
            row: 0,
            message: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::Empty("file has no header".into()));
    }
    if let Some(hints) = hints {
        for name in hints.keys() {
            if !header.contains(name) {
                return Err(Error::Schema(format!("hint names unknown feature `{name}`")));
            }
        }
    }

    let mut cells: Vec<Vec<String>> = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        if record.len() != header.len() {
            return Err(Error::Parse {
                row,
                message: format!("expected {} cells, found {}", header.len(), record.len()),
            });
        }
        if let Some(j) = record.iter().position(str::is_empty) {
            return Err(Error::Parse {
                row,
                message: format!("missing value for `{}`", header[j]),
            });
        }
        cells.push(record.iter().map(str::to_string).collect());
    }
    if cells.is_empty() {
        return Err(Error::Empty("file has no data rows".into()));
    }

    let mut features = Vec::with_capacity(header.len());
    for (j, name) in header.iter().enumerate() {
        let parseable = cells
            .iter()
            .all(|r| r[j].parse::<f64>().is_ok_and(f64::is_finite));
        let kind = match hints.and_then(|h| h.get(name)) {
            Some(FeatureKind::Numeric) if !parseable => {
                return Err(Error::Schema(format!(
                    "`{name}` is hinted numeric but has non-numeric cells"
                )))
            }
            Some(kind) => *kind,
            None if parseable => FeatureKind::Numeric,
            None => FeatureKind::Categorical,
        };
        features.push(match kind {
            FeatureKind::Numeric => Feature::numeric(name.clone(), Vec::new()),
            FeatureKind::Categorical => {
                let distinct: BTreeSet<&str> = cells.iter().map(|r| r[j].as_str()).collect();
                Feature::categorical(name.clone(), distinct.into_iter().collect())
            }
        });
    }
    let schema = Schema::new(features)?;

    let mut rows = Vec::with_capacity(cells.len());
    for (i, r) in cells.iter().enumerate() {
        let row = r
            .iter()
            .enumerate()
            .map(|(j, text)| schema.parse_value(j, text))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|message| Error::Parse { row: i + 1, message })?;
        rows.push(row);
    }
    Dataset::new(schema, rows)
}

fn entropy(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

struct CutCandidate {
    start: usize,
    end: usize,
    /// Index of the first element of the right part.
    split_at: usize,
    cut: f64,
    /// Total entropy reduction, `N * gain`, used to order competing splits.
    priority: f64,
}

/// Best accepted boundary inside `values[start..end]`, or `None` when no cut
/// passes the Fayyad–Irani MDL test.
fn best_cut(
    values: &[f64],
    labels: &[usize],
    n_classes: usize,
    start: usize,
    end: usize,
) -> Option<CutCandidate> {
    let n = end - start;
    if n < 2 {
        return None;
    }
    let mut total = vec![0usize; n_classes];
    for &y in &labels[start..end] {
        total[y] += 1;
    }
    let ent = entropy(&total, n);
    if ent == 0.0 {
        return None;
    }

    let mut left = vec![0usize; n_classes];
    let mut best: Option<(usize, f64)> = None;
    for i in start + 1..end {
        left[labels[i - 1]] += 1;
        if values[i - 1] >= values[i] {
            continue;
        }
        let nl = i - start;
        let right: Vec<usize> = total.iter().zip(&left).map(|(t, l)| t - l).collect();
        let w = (nl as f64 * entropy(&left, nl) + (n - nl) as f64 * entropy(&right, n - nl))
            / n as f64;
        if best.is_none_or(|(_, bw)| w < bw - 1e-12) {
            best = Some((i, w));
        }
    }
    let (split_at, weighted) = best?;

    let count = |range: std::ops::Range<usize>| {
        let mut c = vec![0usize; n_classes];
        for &y in &labels[range] {
            c[y] += 1;
        }
        c
    };
    let lc = count(start..split_at);
    let rc = count(split_at..end);
    let (nl, nr) = (split_at - start, end - split_at);
    let (el, er) = (entropy(&lc, nl), entropy(&rc, nr));
    let k = total.iter().filter(|&&c| c > 0).count() as f64;
    let k1 = lc.iter().filter(|&&c| c > 0).count() as f64;
    let k2 = rc.iter().filter(|&&c| c > 0).count() as f64;
    let gain = ent - weighted;
    let delta = (3f64.powf(k) - 2.0).log2() - (k * ent - k1 * el - k2 * er);
    let threshold = (((n - 1) as f64).log2() + delta) / n as f64;
    if gain <= threshold {
        return None;
    }

    let (a, b) = (values[split_at - 1], values[split_at]);
    let mid = a + (b - a) / 2.0;
    let cut = if mid > a { mid } else { b };
    Some(CutCandidate {
        start,
        end,
        split_at,
        cut,
        priority: n as f64 * gain,
    })
}

/// Supervised entropy discretization with the Fayyad–Irani MDL stopping
/// rule. Splits are applied best-first (largest entropy reduction) until
/// none is accepted or `max_bins` bins exist.
pub fn entropy_bin(values: &[f64], labels: &[usize], max_bins: usize) -> Result<Vec<f64>> {
    if values.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: values.len(),
            right: labels.len(),
        });
    }
    if max_bins < 2 {
        return Err(Error::Config("max_bins must be at least 2".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("entropy binning needs finite values".into()));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let sv: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let sl: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
    let n_classes = sl.iter().max().map_or(0, |m| m + 1);

    let mut cuts = Vec::new();
    let mut pending: Vec<CutCandidate> = best_cut(&sv, &sl, n_classes, 0, sv.len())
        .into_iter()
        .collect();
    while cuts.len() + 1 < max_bins && !pending.is_empty() {
        let pick = pending
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| {
                a.priority
                    .total_cmp(&b.priority)
                    .then(b.start.cmp(&a.start))
            })
            .map(|(i, _)| i)
            .expect("non-empty");
        let c = pending.swap_remove(pick);
        cuts.push(c.cut);
        pending.extend(best_cut(&sv, &sl, n_classes, c.start, c.split_at));
        pending.extend(best_cut(&sv, &sl, n_classes, c.split_at, c.end));
    }
    cuts.sort_by(f64::total_cmp);
    Ok(cuts)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub score: Vec<usize>,
}

/// Seeded permutation followed by a contiguous 60/20/20 partition.
pub fn split(row_count: usize, seed: u64) -> Result<SplitAssignment> {
    if row_count < 5 {
        return Err(Error::Config(format!(
            "need at least 5 rows to split, got {row_count}"
        )));
    }
    let mut idx: Vec<usize> = (0..row_count).collect();
    idx.shuffle(&mut crate::seed::rng(seed));
    let n_train = (row_count as f64 * 0.6).round() as usize;
    let n_valid = (row_count as f64 * 0.2).round() as usize;
    let score = idx.split_off(n_train + n_valid);
    let valid = idx.split_off(n_train);
    Ok(SplitAssignment {
        train: idx,
        valid,
        score,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TOY: &str = "Age,State\n27,California\n22,Texas\n31,California\n21,Texas\n";

    #[test]
    fn loads_toy_table() {
        let ds = read_csv(TOY.as_bytes(), None).unwrap();
        assert_eq!(ds.row_count(), 4);
        assert_eq!(ds.schema.feature(0).kind, FeatureKind::Numeric);
        assert_eq!(ds.schema.feature(1).kind, FeatureKind::Categorical);
        assert_eq!(ds.schema.feature(1).categories, vec!["California", "Texas"]);
        assert_eq!(ds.rows[1], vec![Value::Num(22.0), Value::Cat(1)]);
    }

    #[test]
    fn loads_single_row() {
        let ds = read_csv("x\n1.0".as_bytes(), None).unwrap();
        assert_eq!(ds.row_count(), 1);
        assert_eq!(ds.schema.len(), 1);
        assert_eq!(ds.schema.feature(0).kind, FeatureKind::Numeric);
    }

    #[test]
    fn arity_violation_names_row() {
        let err = read_csv("a,b\n1,2,3\n".as_bytes(), None).unwrap_err();
        assert!(matches!(err, Error::Parse { row: 1, .. }), "{err}");
    }

    #[test]
    fn rejects_empty_inputs() {
        assert!(matches!(read_csv("".as_bytes(), None), Err(Error::Empty(_))));
        assert!(matches!(read_csv("a,b\n".as_bytes(), None), Err(Error::Empty(_))));
        assert!(matches!(
            read_csv("a,b\n1,\n".as_bytes(), None),
            Err(Error::Parse { row: 1, .. })
        ));
    }

    #[test]
    fn hints_override_inference() {
        let hints = HashMap::from([("Age".to_string(), FeatureKind::Categorical)]);
        let ds = read_csv(TOY.as_bytes(), Some(&hints)).unwrap();
        assert_eq!(ds.schema.feature(0).kind, FeatureKind::Categorical);
        assert_eq!(ds.schema.feature(0).categories.len(), 4);

        let bad = HashMap::from([("State".to_string(), FeatureKind::Numeric)]);
        assert!(read_csv(TOY.as_bytes(), Some(&bad)).is_err());
    }

    #[test]
    fn read_rows_matches_columns_by_name() {
        let ds = read_csv(TOY.as_bytes(), None).unwrap();
        let rows = read_rows("State,extra,Age\nTexas,1,40\nOhio,2,20\n".as_bytes(), &ds.schema).unwrap();
        assert_eq!(rows[0], vec![Value::Num(40.0), Value::Cat(1)]);
        assert_eq!(rows[1][1], Value::Cat(UNKNOWN_CODE));
        assert!(read_rows("Age\n1\n".as_bytes(), &ds.schema).is_err());
        assert!(matches!(
            read_rows("Age,State\nx,Texas\n".as_bytes(), &ds.schema),
            Err(Error::Parse { row: 1, .. })
        ));
    }

    #[test]
    fn take_column_returns_text() {
        let ds = read_csv(TOY.as_bytes(), None).unwrap();
        let (rest, col) = ds.take_column("State").unwrap();
        assert_eq!(rest.schema.len(), 1);
        assert_eq!(col, vec!["California", "Texas", "California", "Texas"]);
    }

    /// Independent check: scan every midpoint and return the one with the
    /// lowest weighted class entropy.
    fn brute_force_best_midpoint(values: &[f64], labels: &[usize]) -> (f64, f64) {
        let mut distinct: Vec<f64> = values.to_vec();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        let h = |ys: &[usize]| {
            let mut counts = HashMap::new();
            for y in ys {
                *counts.entry(*y).or_insert(0usize) += 1;
            }
            let n = ys.len() as f64;
            counts
                .values()
                .map(|&c| -(c as f64 / n) * (c as f64 / n).log2())
                .sum::<f64>()
        };
        let mut best = (f64::NAN, f64::INFINITY);
        for w in distinct.windows(2) {
            let mid = (w[0] + w[1]) / 2.0;
            let (l, r): (Vec<_>, Vec<_>) = values.iter().zip(labels).partition(|(v, _)| **v < mid);
            let l: Vec<usize> = l.into_iter().map(|(_, y)| *y).collect();
            let r: Vec<usize> = r.into_iter().map(|(_, y)| *y).collect();
            let n = values.len() as f64;
            let wh = l.len() as f64 / n * h(&l) + r.len() as f64 / n * h(&r);
            if wh < best.1 {
                best = (mid, wh);
            }
        }
        best
    }

    #[test]
    fn separable_column_gets_one_cut() {
        let v = [1.0, 2.0, 3.0, 10.0, 11.0, 12.0];
        let y = [0, 0, 0, 1, 1, 1];
        let (mid, weighted) = brute_force_best_midpoint(&v, &y);
        assert_eq!((mid, weighted), (6.5, 0.0));
        let cuts = entropy_bin(&v, &y, 4).unwrap();
        assert_eq!(cuts, vec![6.5]);
        assert!(cuts[0] > 3.0 && cuts[0] <= 10.0);
    }

    #[test]
    fn constant_column_has_no_cuts() {
        assert!(entropy_bin(&[5.0; 4], &[0, 1, 0, 1], 4).unwrap().is_empty());
    }

    #[test]
    fn mdl_rejects_alternating_labels() {
        // Brute force over the three midpoints: the best weighted entropy is
        // 0.689 bits (cut 1.5 or 3.5), a gain of 0.311 against an MDL
        // threshold of (log2(3) + log2(7) - 2 + 2*0.918) / 4 = 1.057.
        let v = [1.0, 2.0, 3.0, 4.0];
        let y = [0, 1, 0, 1];
        let (_, weighted) = brute_force_best_midpoint(&v, &y);
        assert!((1.0 - weighted - 0.311).abs() < 1e-3);
        assert!(entropy_bin(&v, &y, 2).unwrap().is_empty());
    }

    #[test]
    fn max_bins_caps_cut_count() {
        let v: Vec<f64> = (0..80).map(f64::from).collect();
        let y: Vec<usize> = (0..80).map(|i| (i / 20) % 4).collect();
        assert_eq!(entropy_bin(&v, &y, 4).unwrap(), vec![19.5, 39.5, 59.5]);
        assert_eq!(entropy_bin(&v, &y, 2).unwrap().len(), 1);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let s = split(10, 3).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.score.len()), (6, 2, 2));
        assert_eq!(s, split(10, 3).unwrap());
        let s = split(100, 9).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.score.len()), (60, 20, 20));
        assert!(split(4, 0).is_err());
    }

    proptest! {
        #[test]
        fn split_is_a_partition(n in 5usize..400, seed in any::<u64>()) {
            let s = split(n, seed).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.valid).chain(&s.score).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            let nf = n as f64;
            prop_assert!((s.train.len() as f64 - 0.6 * nf).abs() <= 1.0);
            prop_assert!((s.valid.len() as f64 - 0.2 * nf).abs() <= 1.0);
            prop_assert!((s.score.len() as f64 - 0.2 * nf).abs() <= 1.0);
        }

        #[test]
        fn binning_is_a_partition_and_idempotent(
            data in prop::collection::vec((-50i32..50, 0usize..3), 2..120),
            max_bins in 2usize..6,
        ) {
            let v: Vec<f64> = data.iter().map(|(x, _)| f64::from(*x) / 4.0).collect();
            let y: Vec<usize> = data.iter().map(|(_, c)| *c).collect();
            let cuts = entropy_bin(&v, &y, max_bins).unwrap();
            prop_assert!(cuts.len() < max_bins);
            prop_assert!(cuts.windows(2).all(|w| w[0] < w[1]));
            let f = Feature::numeric("x", cuts.clone());
            for x in &v {
                let b = f.bin_of(*x);
                let (lo, hi) = f.bin_bounds(b);
                prop_assert!(lo <= *x && *x < hi);
                // every value falls in exactly one interval
                let hits = (0..f.domain_size() as u32)
                    .filter(|&k| { let (l, h) = f.bin_bounds(k); l <= *x && *x < h })
                    .count();
                prop_assert_eq!(hits, 1);
            }
            // re-binning with the same cuts leaves codes unchanged
            let codes: Vec<u32> = v.iter().map(|x| f.bin_of(*x)).collect();
            let again: Vec<u32> = v.iter().map(|x| Feature::numeric("x", cuts.clone()).bin_of(*x)).collect();
            prop_assert_eq!(codes, again);
        }
    }
}
