//! End-to-end runs: load, split, fit or connect the model, label, discretize,
//! learn rule candidates with each approach and select fixed-size sets.
//!
//! File output lives with the command-line front end; everything here
//! returns plain values.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::baselines::{apriori_rules, dt_surrogate_rules, BaselineConfig};
use crate::data::{self, Dataset, Encoded, Row, Schema, SplitAssignment, DEFAULT_MAX_BINS};
use crate::error::{Error, Result};
use crate::evaluation::{greedy_select, set_score, Interpretation, SelectedRule};
use crate::evolution::{evolve_rules, EvolvedRuleSet, GaConfig, ScoredRule};
use crate::mining::{mine_conditions_frequent, mine_conditions_local, ConditionPool, LocalConfig, MiningSet};
use crate::oracle::{index_labels, ForestConfig, ModelOracle};
use crate::robustness::{augment, uncertainty_analysis, ReportRow, ShiftKind, ShiftMethod};
use crate::rules::{Condition, FitnessKind, RuleRecord};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OracleSpec {
    Tree {
        max_depth: usize,
    },
    Forest {
        n_trees: usize,
        max_depth: usize,
    },
    /// A child process speaking the line protocol. Without `classes` the
    /// sorted distinct target values are used.
    External {
        argv: Vec<String>,
        #[serde(default)]
        classes: Option<Vec<String>>,
    },
}

impl Default for OracleSpec {
    fn default() -> Self {
        let f = ForestConfig::default();
        OracleSpec::Forest {
            n_trees: f.n_trees,
            max_depth: f.max_depth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MinerSpec {
    Local(LocalConfig),
    Frequent { threshold: f64 },
}

impl Default for MinerSpec {
    fn default() -> Self {
        MinerSpec::Local(LocalConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub schema_hints: Option<PathBuf>,
    /// Label column; the last column when absent.
    pub target: Option<String>,
    pub oracle: OracleSpec,
    pub miner: MinerSpec,
    pub ga: GaConfig,
    pub selection_sizes: Vec<usize>,
    pub max_bins: usize,
    pub robustness: bool,
    pub robustness_size: usize,
    pub augment: bool,
    pub augment_fraction: f64,
    pub baselines: BaselineConfig,
    pub ablations: bool,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub ga_log: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: None,
            schema_hints: None,
            target: None,
            oracle: OracleSpec::default(),
            miner: MinerSpec::default(),
            ga: GaConfig::default(),
            selection_sizes: vec![5, 10, 15, 20],
            max_bins: DEFAULT_MAX_BINS,
            robustness: false,
            robustness_size: 20,
            augment: false,
            augment_fraction: 0.10,
            baselines: BaselineConfig::default(),
            ablations: false,
            seed: 0,
            output_dir: PathBuf::from("out"),
            ga_log: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dataset.is_none() {
            return Err(Error::Config("no dataset given".into()));
        }
        self.validate_settings()
    }

    /// Everything but the dataset path.
    pub fn validate_settings(&self) -> Result<()> {
        if self.selection_sizes.is_empty() || self.selection_sizes[0] == 0 {
            return Err(Error::Config("selection sizes must be positive".into()));
        }
        if self.selection_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("selection sizes must be strictly ascending".into()));
        }
        if self.max_bins < 2 {
            return Err(Error::Config("max_bins must be at least 2".into()));
        }
        if self.robustness_size == 0 {
            return Err(Error::Config("robustness size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.augment_fraction) {
            return Err(Error::Config("augment fraction must lie in [0, 1]".into()));
        }
        if let OracleSpec::External { argv, .. } = &self.oracle {
            if argv.is_empty() {
                return Err(Error::Config("external oracle needs a command".into()));
            }
        }
        self.ga.validate()
    }

    /// GA settings with the run seed.
    fn ga(&self) -> GaConfig {
        GaConfig {
            seed: seed::derive(self.seed, "ga", 0),
            ..self.ga
        }
    }
}

/// A failure tagged with the pipeline stage it happened in.
#[derive(Debug, thiserror::Error)]
#[error("{stage}: {error}")]
pub struct StageError {
    pub stage: &'static str,
    pub error: Error,
}

pub type StageResult<T> = std::result::Result<T, StageError>;

pub fn at(stage: &'static str) -> impl FnOnce(Error) -> StageError {
    move |error| StageError { stage, error }
}

/// Everything shared by the approaches of one run.
#[derive(Debug)]
pub struct Prepared {
    pub raw_schema: Schema,
    pub schema: Schema,
    pub classes: Vec<String>,
    pub rows: Vec<Row>,
    pub split: SplitAssignment,
    pub oracle: ModelOracle,
    /// Model labels of every row.
    pub labels: Vec<usize>,
    pub encoded: Encoded,
}

/// Rows, codes and model labels of one split.
#[derive(Debug, Clone)]
pub struct Part {
    pub rows: Vec<Row>,
    pub encoded: Encoded,
    pub labels: Vec<usize>,
}

impl Prepared {
    pub fn part(&self, idx: &[usize]) -> Part {
        Part {
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            encoded: self.encoded.select(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn train(&self) -> Part {
        self.part(&self.split.train)
    }

    pub fn valid(&self) -> Part {
        self.part(&self.split.valid)
    }

    pub fn scoring(&self) -> Part {
        self.part(&self.split.score)
    }
}

pub fn prepare(cfg: &RunConfig) -> StageResult<Prepared> {
    cfg.validate().map_err(at("config"))?;
    let path = cfg.dataset.as_ref().expect("validated");
    let hints = cfg
        .schema_hints
        .as_deref()
        .map(data::load_hints)
        .transpose()
        .map_err(at("load"))?;
    let full = data::load_csv(path, hints.as_ref()).map_err(at("load"))?;
    let target = match &cfg.target {
        Some(t) => t.clone(),
        None => full.schema.features.last().expect("non-empty schema").name.clone(),
    };
    let (features, target_values) = full.take_column(&target).map_err(at("load"))?;
    if features.schema.is_empty() {
        return Err(at("load")(Error::Schema("no feature columns besides the target".into())));
    }
    let split = data::split(features.row_count(), seed::derive(cfg.seed, "split", 0)).map_err(at("split"))?;
    let (target_classes, y) = index_labels(&target_values);

    let train = Dataset::new(features.schema.clone(), features.select(&split.train)).map_err(at("oracle"))?;
    let y_train: Vec<usize> = split.train.iter().map(|&i| y[i]).collect();
    let oracle = match &cfg.oracle {
        OracleSpec::Tree { max_depth } => ModelOracle::fit_tree(&train, &y_train, target_classes, *max_depth),
        OracleSpec::Forest { n_trees, max_depth } => {
            let fc = ForestConfig {
                n_trees: *n_trees,
                max_depth: *max_depth,
                seed: seed::derive(cfg.seed, "forest", 0),
            };
            ModelOracle::fit_forest(&train, &y_train, target_classes, &fc)
        }
        OracleSpec::External { argv, classes } => ModelOracle::connect_external(
            features.schema.clone(),
            argv,
            classes.clone().unwrap_or(target_classes),
        ),
    }
    .map_err(at("oracle"))?;

    finish(cfg, features, split, oracle)
}

/// Run on in-memory data with a ready oracle over its schema.
pub fn prepare_with_oracle(cfg: &RunConfig, features: Dataset, oracle: ModelOracle) -> StageResult<Prepared> {
    cfg.validate_settings().map_err(at("config"))?;
    let split = data::split(features.row_count(), seed::derive(cfg.seed, "split", 0)).map_err(at("split"))?;
    finish(cfg, features, split, oracle)
}

fn finish(cfg: &RunConfig, features: Dataset, split: SplitAssignment, oracle: ModelOracle) -> StageResult<Prepared> {
    let labels = oracle.predict_batch(&features.rows).map_err(at("label"))?;
    let train_rows = features.select(&split.train);
    let train_labels: Vec<usize> = split.train.iter().map(|&i| labels[i]).collect();
    let schema = features
        .schema
        .discretize(&train_rows, &train_labels, cfg.max_bins)
        .map_err(at("discretize"))?;
    let encoded = schema.encode(&features.rows);
    Ok(Prepared {
        raw_schema: features.schema,
        schema,
        classes: oracle.classes().to_vec(),
        rows: features.rows,
        split,
        oracle,
        labels,
        encoded,
    })
}

/// Training rows for the interpretation, optionally extended with
/// oracle-labelled marginal and uniform samples. Cut points stay those of
/// the original training split.
pub fn training_set(prep: &Prepared, cfg: &RunConfig) -> StageResult<Part> {
    let train = prep.train();
    if !cfg.augment {
        return Ok(train);
    }
    let f = cfg.augment_fraction;
    let (rows, labels) = augment(
        &train.rows,
        &train.labels,
        &prep.oracle,
        &[(ShiftKind::Marginal, f), (ShiftKind::Uniform, f)],
        seed::derive(cfg.seed, "augment", 0),
    )
    .map_err(at("augment"))?;
    Ok(Part {
        encoded: prep.schema.encode(&rows),
        rows,
        labels,
    })
}

#[derive(Debug, Clone)]
pub struct MagixOutput {
    pub pools: Vec<ConditionPool>,
    pub evolved: Vec<EvolvedRuleSet>,
    /// All evolved rules, class by class.
    pub candidates: Vec<ScoredRule>,
}

fn mine_pools(prep: &Prepared, train: &Part, miner: &MinerSpec, run_seed: u64) -> StageResult<Vec<ConditionPool>> {
    let set = MiningSet {
        rows: &train.rows,
        encoded: &train.encoded,
        labels: &train.labels,
    };
    (0..prep.classes.len())
        .filter(|c| train.labels.contains(c))
        .map(|class| match miner {
            MinerSpec::Local(lc) => {
                let mut rng = seed::stage_rng(run_seed, "mine", class as u64);
                mine_conditions_local(class, set, &prep.oracle, &prep.schema, lc, &mut rng)
            }
            MinerSpec::Frequent { threshold } => {
                mine_conditions_frequent(class, &train.encoded, &train.labels, &prep.schema, *threshold)
            }
        })
        .collect::<Result<Vec<_>>>()
        .map_err(at("mine"))
}

/// Mine a pool per predicted class and evolve rules from it.
pub fn run_magix(prep: &Prepared, train: &Part, cfg: &RunConfig) -> StageResult<MagixOutput> {
    let pools = mine_pools(prep, train, &cfg.miner, cfg.seed)?;
    let ga = cfg.ga();
    let mut evolved = Vec::new();
    for pool in pools.iter().filter(|p| !p.is_empty()) {
        let set = evolve_rules(pool, &prep.schema, &train.encoded, &train.labels, &ga, &prep.classes[pool.class])
            .map_err(at("evolve"))?;
        evolved.push(set);
    }
    let candidates = evolved.iter().flat_map(|e| e.rules.iter().cloned()).collect();
    Ok(MagixOutput {
        pools,
        evolved,
        candidates,
    })
}

/// One selected rule set with its scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub interpretation: Interpretation,
    pub parameters: BTreeMap<String, serde_json::Value>,
    pub validation: f64,
    pub scoring: f64,
}

/// Greedy selection on the validation split at the largest size; smaller
/// sizes are prefixes.
pub fn select_sizes(
    approach: &str,
    candidates: &[ScoredRule],
    sizes: &[usize],
    prep: &Prepared,
    run_seed: u64,
    parameters: BTreeMap<String, serde_json::Value>,
) -> StageResult<Vec<Selection>> {
    let valid = prep.valid();
    let scoring = prep.scoring();
    let max = *sizes.last().expect("validated sizes");
    let chosen = if candidates.is_empty() {
        Vec::new()
    } else {
        greedy_select(candidates, max, &valid.encoded, &valid.labels).map_err(at("select"))?
    };
    let full = Interpretation {
        approach: approach.to_string(),
        seed: run_seed,
        selection_size: max,
        reference_split: "validation".into(),
        rules: chosen,
    };
    sizes
        .iter()
        .map(|&k| {
            let interpretation = full.prefix(k);
            let v = set_score(&interpretation.rules, &valid.encoded, &valid.labels)?;
            let s = set_score(&interpretation.rules, &scoring.encoded, &scoring.labels)?;
            Ok(Selection {
                interpretation,
                parameters: parameters.clone(),
                validation: v,
                scoring: s,
            })
        })
        .collect::<Result<Vec<_>>>()
        .map_err(at("select"))
}

/// Per size, keep the grid point with the best validation score (ties: the
/// earlier grid point).
fn best_per_size(grid: Vec<Vec<Selection>>) -> Vec<Selection> {
    let mut best: Vec<Selection> = Vec::new();
    for run in grid {
        if best.is_empty() {
            best = run;
            continue;
        }
        for (b, s) in best.iter_mut().zip(run) {
            if s.validation > b.validation {
                *b = s;
            }
        }
    }
    best
}

pub fn run_dt(prep: &Prepared, train: &Part, cfg: &RunConfig) -> StageResult<Vec<Selection>> {
    let mut grid = Vec::new();
    for &depth in &cfg.baselines.dt_max_depth {
        let rules = dt_surrogate_rules(&train.encoded, &train.labels, prep.classes.len(), &prep.schema, depth)
            .map_err(at("dt-surrogate"))?;
        let params = BTreeMap::from([("max_depth".to_string(), json!(depth))]);
        grid.push(select_sizes("dt", &rules, &cfg.selection_sizes, prep, cfg.seed, params)?);
    }
    Ok(best_per_size(grid))
}

pub fn run_apriori(
    prep: &Prepared,
    train: &Part,
    cfg: &RunConfig,
    items: Option<&[Condition]>,
    approach: &str,
) -> StageResult<Vec<Selection>> {
    let mut grid = Vec::new();
    for &support in &cfg.baselines.apriori_support {
        let rules = apriori_rules(
            &train.encoded,
            &train.labels,
            prep.classes.len(),
            &prep.schema,
            support,
            cfg.baselines.apriori_max_len,
            items,
            FitnessKind::MutualInformation,
        )
        .map_err(at("apriori"))?;
        let params = BTreeMap::from([
            ("support".to_string(), json!(support)),
            ("max_clause_len".to_string(), json!(cfg.baselines.apriori_max_len)),
        ]);
        grid.push(select_sizes(approach, &rules, &cfg.selection_sizes, prep, cfg.seed, params)?);
    }
    Ok(best_per_size(grid))
}

pub fn magix_parameters(cfg: &RunConfig) -> BTreeMap<String, serde_json::Value> {
    BTreeMap::from([
        ("miner".to_string(), serde_json::to_value(&cfg.miner).expect("serializable")),
        ("ga".to_string(), serde_json::to_value(cfg.ga()).expect("serializable")),
        ("augmented".to_string(), json!(cfg.augment)),
    ])
}

#[derive(Debug, Clone)]
pub struct ExplainOutput {
    pub magix: MagixOutput,
    pub selections: Vec<Selection>,
    pub robustness: Option<Vec<ReportRow>>,
}

pub fn explain(prep: &Prepared, cfg: &RunConfig) -> StageResult<ExplainOutput> {
    let train = training_set(prep, cfg)?;
    let magix = run_magix(prep, &train, cfg)?;
    let selections = select_sizes("magix", &magix.candidates, &cfg.selection_sizes, prep, cfg.seed, magix_parameters(cfg))?;
    let robustness = if cfg.robustness {
        let sel = robustness_selection(&magix.candidates, prep, cfg)?;
        Some(robustness_rows(prep, &[("magix".to_string(), sel, prep.schema.clone())], cfg.seed)?)
    } else {
        None
    };
    Ok(ExplainOutput {
        magix,
        selections,
        robustness,
    })
}

fn robustness_selection(candidates: &[ScoredRule], prep: &Prepared, cfg: &RunConfig) -> StageResult<Vec<SelectedRule>> {
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let valid = prep.valid();
    greedy_select(candidates, cfg.robustness_size, &valid.encoded, &valid.labels).map_err(at("select"))
}

/// Shift methods 1 to 3 over the scoring split, each partition sized at
/// 10% of the whole dataset.
pub fn shift_methods(prep: &Prepared, run_seed: u64) -> Vec<ShiftMethod> {
    ShiftKind::ALL
        .iter()
        .map(|&k| ShiftMethod {
            base_len: Some(prep.rows.len()),
            ..ShiftMethod::new(k, seed::derive(run_seed, "robustness", 0))
        })
        .collect()
}

pub fn robustness_rows(
    prep: &Prepared,
    interpretations: &[(String, Vec<SelectedRule>, Schema)],
    run_seed: u64,
) -> StageResult<Vec<ReportRow>> {
    let source = prep.scoring().rows;
    let methods = shift_methods(prep, run_seed);
    interpretations
        .iter()
        .map(|(name, rules, schema)| {
            Ok(ReportRow {
                approach: name.clone(),
                methods: uncertainty_analysis(rules, &prep.oracle, schema, &source, &methods).map_err(at("robustness"))?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub approach: String,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub config_hash: String,
    pub augmented: bool,
    pub sizes: Vec<usize>,
    pub rows: Vec<CompareRow>,
}

impl Comparison {
    pub fn to_markdown(&self) -> String {
        let heads: Vec<String> = self.sizes.iter().map(|s| format!("{s} Rules")).collect();
        let mut out = format!("| Approach | {} |\n|---|{}\n", heads.join(" | "), "---|".repeat(heads.len()));
        for r in &self.rows {
            let cells: Vec<String> = r.scores.iter().map(|s| format!("{s:.2}")).collect();
            out.push_str(&format!("| {} | {} |\n", r.approach, cells.join(" | ")));
        }
        out
    }
}

/// All approaches on the same splits and oracle, scored on the scoring
/// split. With `cfg.ablations`, also the frequent-condition miner at 1% and
/// 5%, the F1 fitness, and Apriori over the local-surrogate pools.
pub fn compare(prep: &Prepared, cfg: &RunConfig, config_hash: &str) -> StageResult<(Comparison, Vec<Selection>)> {
    let train = training_set(prep, cfg)?;
    let mut all: Vec<(String, Vec<Selection>)> = Vec::new();

    let magix = run_magix(prep, &train, cfg)?;
    all.push((
        "magix".into(),
        select_sizes("magix", &magix.candidates, &cfg.selection_sizes, prep, cfg.seed, magix_parameters(cfg))?,
    ));
    all.push(("dt".into(), run_dt(prep, &train, cfg)?));
    all.push(("apriori".into(), run_apriori(prep, &train, cfg, None, "apriori")?));

    if cfg.ablations {
        for t in [0.01, 0.05] {
            let variant = RunConfig {
                miner: MinerSpec::Frequent { threshold: t },
                ..cfg.clone()
            };
            let out = run_magix(prep, &train, &variant)?;
            let name = format!("magix-frequent-{}%", (t * 100.0).round());
            let sel = select_sizes(&name, &out.candidates, &cfg.selection_sizes, prep, cfg.seed, magix_parameters(&variant))?;
            all.push((name, sel));
        }
        let f1 = RunConfig {
            ga: GaConfig {
                fitness: FitnessKind::F1,
                ..cfg.ga
            },
            ..cfg.clone()
        };
        let out = run_magix(prep, &train, &f1)?;
        all.push((
            "magix-f1".into(),
            select_sizes("magix-f1", &out.candidates, &cfg.selection_sizes, prep, cfg.seed, magix_parameters(&f1))?,
        ));
        let items: Vec<Condition> = magix.pools.iter().flat_map(|p| p.conditions.iter().cloned()).collect();
        all.push(("local-apriori".into(), run_apriori(prep, &train, cfg, Some(&items), "local-apriori")?));
    }

    let rows = all
        .iter()
        .map(|(name, sels)| CompareRow {
            approach: name.clone(),
            scores: sels.iter().map(|s| s.scoring).collect(),
        })
        .collect();
    let selections = all.into_iter().flat_map(|(_, s)| s).collect();
    Ok((
        Comparison {
            config_hash: config_hash.to_string(),
            augmented: cfg.augment,
            sizes: cfg.selection_sizes.clone(),
            rows,
        },
        selections,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub validation: f64,
    pub scoring: f64,
}

/// Serialized interpretation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpretationFile {
    pub approach: String,
    pub config_hash: String,
    pub seed: u64,
    pub selection_size: usize,
    pub reference_split: String,
    pub parameters: BTreeMap<String, serde_json::Value>,
    pub schema: Schema,
    pub classes: Vec<String>,
    pub rules: Vec<RuleRecord>,
    pub scores: Scores,
}

impl InterpretationFile {
    pub fn new(sel: &Selection, schema: &Schema, classes: &[String], config_hash: &str) -> Self {
        let i = &sel.interpretation;
        InterpretationFile {
            approach: i.approach.clone(),
            config_hash: config_hash.to_string(),
            seed: i.seed,
            selection_size: i.selection_size,
            reference_split: i.reference_split.clone(),
            parameters: sel.parameters.clone(),
            schema: schema.clone(),
            classes: classes.to_vec(),
            rules: i
                .rules
                .iter()
                .map(|r| RuleRecord::new(&r.rule, schema, classes, r.precision, r.coverage, r.fitness))
                .collect(),
            scores: Scores {
                validation: sel.validation,
                scoring: sel.scoring,
            },
        }
    }

    pub fn selected_rules(&self) -> Result<Vec<SelectedRule>> {
        self.rules
            .iter()
            .map(|r| {
                Ok(SelectedRule {
                    rule: r.to_rule(&self.schema, &self.classes)?,
                    precision: r.precision,
                    coverage: r.coverage,
                    fitness: r.fitness,
                })
            })
            .collect()
    }

    pub fn to_markdown(&self) -> Result<String> {
        let interp = Interpretation {
            approach: self.approach.clone(),
            seed: self.seed,
            selection_size: self.selection_size,
            reference_split: self.reference_split.clone(),
            rules: self.selected_rules()?,
        };
        Ok(format!(
            "### {} rules ({}): validation {:.2}, scoring {:.2}\n\n{}",
            self.selection_size,
            self.approach,
            self.scores.validation,
            self.scores.scoring,
            interp.to_markdown(&self.schema, &self.classes)
        ))
    }
}
