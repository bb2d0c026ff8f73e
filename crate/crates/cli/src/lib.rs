//! Command-line front end: flag parsing, config merging and report files.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use glex_core::evaluation::predict_with_rules;
use glex_core::mining::{LocalConfig, PoolRecord};
use glex_core::pipeline::{
    self, InterpretationFile, MinerSpec, OracleSpec, Prepared, RunConfig, Selection,
};
use glex_core::robustness::RobustnessReport;
use glex_core::rules::FitnessKind;
use sha2::{Digest, Sha256};

#[derive(Debug, Parser)]
#[command(name = "glex", version, about = "Global rule explanations for black-box classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn rule sets for the model and write interpretation files.
    Explain(RunArgs),
    /// Score interpretations on shifted data (bootstrap, marginal, uniform).
    Robustness {
        #[command(flatten)]
        run: RunArgs,
        /// Interpretation files to assess; without any, each approach is
        /// run at the robustness size.
        #[arg(long = "interpretation")]
        interpretations: Vec<PathBuf>,
    },
    /// Compare all approaches across selection sizes.
    Compare(RunArgs),
    /// Apply an interpretation file to a CSV.
    Predict {
        #[arg(long)]
        interpretation: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Write here instead of standard output.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OracleKind {
    Tree,
    Forest,
    External,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MinerKind {
    Local,
    Frequent,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FitnessArg {
    Mi,
    F1,
}

/// Flags mirror the JSON config; a flag wins over the file.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// JSON object mapping column name to "numeric" or "categorical".
    #[arg(long)]
    pub schema_hints: Option<PathBuf>,
    /// Label column (default: last column).
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long, value_enum)]
    pub oracle: Option<OracleKind>,
    /// Command line of an external model, split on whitespace.
    #[arg(long)]
    pub oracle_cmd: Option<String>,
    /// Comma-separated class labels of the external model.
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<String>>,
    #[arg(long)]
    pub n_trees: Option<usize>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long, value_enum)]
    pub miner: Option<MinerKind>,
    /// Support threshold of the frequent miner.
    #[arg(long)]
    pub support: Option<f64>,
    /// Perturbation samples per local explanation.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub generations: Option<usize>,
    #[arg(long)]
    pub population: Option<usize>,
    #[arg(long)]
    pub crossover: Option<f64>,
    #[arg(long)]
    pub mutation: Option<f64>,
    #[arg(long, value_enum)]
    pub fitness: Option<FitnessArg>,
    /// Comma-separated rule-set sizes.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub max_bins: Option<usize>,
    #[arg(long)]
    pub robustness: bool,
    #[arg(long)]
    pub robustness_size: Option<usize>,
    #[arg(long)]
    pub augment: bool,
    #[arg(long)]
    pub augment_fraction: Option<f64>,
    /// Also run the ablation variants in `compare`.
    #[arg(long)]
    pub ablations: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, short = 'o')]
    pub output_dir: Option<PathBuf>,
    /// Write per-generation GA statistics as JSON lines.
    #[arg(long)]
    pub ga_log: bool,
}

/// Bad or missing arguments detected after flag parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

impl RunArgs {
    pub fn to_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($field:expr, $flag:expr) => {
                if let Some(v) = $flag.clone() {
                    $field = v;
                }
            };
        }
        if self.dataset.is_some() {
            cfg.dataset = self.dataset.clone();
        }
        if self.schema_hints.is_some() {
            cfg.schema_hints = self.schema_hints.clone();
        }
        if self.target.is_some() {
            cfg.target = self.target.clone();
        }

        match self.oracle {
            Some(OracleKind::Tree) => {
                cfg.oracle = OracleSpec::Tree {
                    max_depth: self.max_depth.unwrap_or(8),
                }
            }
            Some(OracleKind::Forest) => {
                cfg.oracle = OracleSpec::Forest {
                    n_trees: self.n_trees.unwrap_or(15),
                    max_depth: self.max_depth.unwrap_or(8),
                }
            }
            Some(OracleKind::External) => {
                let cmd = self
                    .oracle_cmd
                    .as_ref()
                    .ok_or_else(|| usage("--oracle external needs --oracle-cmd"))?;
                cfg.oracle = OracleSpec::External {
                    argv: cmd.split_whitespace().map(str::to_string).collect(),
                    classes: self.classes.clone(),
                }
            }
            None => match &mut cfg.oracle {
                OracleSpec::Tree { max_depth } => set!(*max_depth, self.max_depth),
                OracleSpec::Forest { n_trees, max_depth } => {
                    set!(*n_trees, self.n_trees);
                    set!(*max_depth, self.max_depth);
                }
                OracleSpec::External { argv, classes } => {
                    if let Some(cmd) = &self.oracle_cmd {
                        *argv = cmd.split_whitespace().map(str::to_string).collect();
                    }
                    if self.classes.is_some() {
                        *classes = self.classes.clone();
                    }
                }
            },
        }

        match self.miner {
            Some(MinerKind::Local) => cfg.miner = MinerSpec::Local(LocalConfig::default()),
            Some(MinerKind::Frequent) => cfg.miner = MinerSpec::Frequent { threshold: 0.01 },
            None => {}
        }
        match &mut cfg.miner {
            MinerSpec::Local(lc) => set!(lc.samples, self.samples),
            MinerSpec::Frequent { threshold } => set!(*threshold, self.support),
        }

        set!(cfg.ga.generations, self.generations);
        set!(cfg.ga.population_size, self.population);
        set!(cfg.ga.crossover_prob, self.crossover);
        set!(cfg.ga.mutation_prob, self.mutation);
        if let Some(f) = self.fitness {
            cfg.ga.fitness = match f {
                FitnessArg::Mi => FitnessKind::MutualInformation,
                FitnessArg::F1 => FitnessKind::F1,
            };
        }
        set!(cfg.selection_sizes, self.sizes);
        set!(cfg.max_bins, self.max_bins);
        set!(cfg.robustness_size, self.robustness_size);
        set!(cfg.augment_fraction, self.augment_fraction);
        set!(cfg.seed, self.seed);
        set!(cfg.output_dir, self.output_dir);
        cfg.robustness |= self.robustness;
        cfg.augment |= self.augment;
        cfg.ablations |= self.ablations;
        cfg.ga_log |= self.ga_log;

        if cfg.dataset.is_none() {
            return Err(usage("no dataset given (use --dataset or a config file)"));
        }
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        Ok(cfg)
    }
}

/// SHA-256 of the canonical JSON form of the config. Where the results go
/// does not change them, so the output directory is left out.
pub fn config_hash(cfg: &RunConfig) -> String {
    let canonical = RunConfig {
        output_dir: PathBuf::new(),
        ..cfg.clone()
    };
    let json = serde_json::to_string(&canonical).expect("config serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, &text)
}

fn interpretation_path(dir: &Path, approach: &str, size: usize) -> PathBuf {
    dir.join(format!("interpretation_{approach}_{size}.json"))
}

fn write_selections(
    dir: &Path,
    selections: &[Selection],
    prep: &Prepared,
    hash: &str,
) -> Result<Vec<InterpretationFile>> {
    let mut files = Vec::new();
    for sel in selections {
        let file = InterpretationFile::new(sel, &prep.schema, &prep.classes, hash);
        write_json(
            &interpretation_path(dir, &file.approach, file.selection_size),
            &file,
        )?;
        files.push(file);
    }
    Ok(files)
}

fn prepare_run(cfg: &RunConfig) -> Result<Prepared> {
    fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    Ok(pipeline::prepare(cfg)?)
}

pub fn cmd_explain(args: &RunArgs) -> Result<()> {
    let cfg = args.to_config()?;
    let hash = config_hash(&cfg);
    let prep = prepare_run(&cfg)?;
    let out = pipeline::explain(&prep, &cfg)?;
    let dir = &cfg.output_dir;

    let files = write_selections(dir, &out.selections, &prep, &hash)?;
    let pools: Vec<PoolRecord> = out
        .magix
        .pools
        .iter()
        .map(|p| p.to_record(&prep.schema, &prep.classes))
        .collect();
    write_json(&dir.join("pools.json"), &pools)?;
    if cfg.ga_log {
        let mut log = String::new();
        for stat in out.magix.evolved.iter().flat_map(|e| &e.stats) {
            log.push_str(&serde_json::to_string(stat)?);
            log.push('\n');
        }
        write(&dir.join("ga_log.jsonl"), &log)?;
    }

    let mut md = format!("# Rule explanation\n\nconfig `{hash}`, seed {}\n\n", cfg.seed);
    for f in &files {
        md.push_str(&f.to_markdown()?);
        md.push('\n');
    }
    if let Some(rows) = out.robustness {
        let report = RobustnessReport {
            config_hash: hash.clone(),
            selection_size: cfg.robustness_size,
            rows,
        };
        write_json(&dir.join("robustness.json"), &report)?;
        write(&dir.join("robustness.md"), &report.to_markdown())?;
        md.push_str("## Robustness\n\n");
        md.push_str(&report.to_markdown());
    }
    write(&dir.join("report.md"), &md)?;

    for f in &files {
        println!(
            "magix {:>3} rules: validation {:6.2}  scoring {:6.2}",
            f.selection_size, f.scores.validation, f.scores.scoring
        );
    }
    Ok(())
}

fn read_interpretation(path: &Path) -> Result<InterpretationFile> {
    let text = fs::read_to_string(path).with_context(|| format!("reading interpretation {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing interpretation {}", path.display()))
}

pub fn cmd_robustness(args: &RunArgs, interpretations: &[PathBuf]) -> Result<()> {
    let cfg = args.to_config()?;
    let hash = config_hash(&cfg);
    let files = interpretations
        .iter()
        .map(|p| read_interpretation(p))
        .collect::<Result<Vec<_>>>()?;
    let prep = prepare_run(&cfg)?;

    let mut named = Vec::new();
    for (f, path) in files.iter().zip(interpretations) {
        let names: Vec<&str> = f.schema.features.iter().map(|x| x.name.as_str()).collect();
        let ours: Vec<&str> = prep.raw_schema.features.iter().map(|x| x.name.as_str()).collect();
        if names != ours {
            return Err(anyhow!("{}: features do not match the dataset", path.display()));
        }
        named.push((
            format!("{} ({} rules)", f.approach, f.selection_size),
            f.selected_rules().with_context(|| format!("{}", path.display()))?,
            f.schema.clone(),
        ));
    }
    if named.is_empty() {
        let sizes = vec![cfg.robustness_size];
        let run = RunConfig {
            selection_sizes: sizes,
            ..cfg.clone()
        };
        let train = pipeline::training_set(&prep, &run)?;
        let magix = pipeline::run_magix(&prep, &train, &run)?;
        let mut sels = pipeline::select_sizes(
            "magix",
            &magix.candidates,
            &run.selection_sizes,
            &prep,
            run.seed,
            pipeline::magix_parameters(&run),
        )?;
        sels.extend(pipeline::run_dt(&prep, &train, &run)?);
        sels.extend(pipeline::run_apriori(&prep, &train, &run, None, "apriori")?);
        write_selections(&cfg.output_dir, &sels, &prep, &hash)?;
        for s in sels {
            named.push((
                s.interpretation.approach.clone(),
                s.interpretation.rules,
                prep.schema.clone(),
            ));
        }
    }
    let rows = pipeline::robustness_rows(&prep, &named, cfg.seed)?;
    let report = RobustnessReport {
        config_hash: hash,
        selection_size: cfg.robustness_size,
        rows,
    };
    write_json(&cfg.output_dir.join("robustness.json"), &report)?;
    let md = report.to_markdown();
    write(&cfg.output_dir.join("robustness.md"), &md)?;
    print!("{md}");
    Ok(())
}

pub fn cmd_compare(args: &RunArgs) -> Result<()> {
    let cfg = args.to_config()?;
    let hash = config_hash(&cfg);
    let prep = prepare_run(&cfg)?;
    let (cmp, selections) = pipeline::compare(&prep, &cfg, &hash)?;
    write_selections(&cfg.output_dir, &selections, &prep, &hash)?;
    write_json(&cfg.output_dir.join("compare.json"), &cmp)?;
    let md = cmp.to_markdown();
    write(&cfg.output_dir.join("compare.md"), &md)?;
    print!("{md}");
    Ok(())
}

pub fn cmd_predict(interpretation: &Path, input: &Path, output: Option<&Path>) -> Result<()> {
    let file = read_interpretation(interpretation)?;
    let rules = file
        .selected_rules()
        .with_context(|| format!("{}", interpretation.display()))?;
    let reader = fs::File::open(input).with_context(|| format!("opening {}", input.display()))?;
    let rows = glex_core::data::read_rows(reader, &file.schema).with_context(|| format!("{}", input.display()))?;
    let mut text = String::from("row,prediction\n");
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for (i, row) in rows.iter().enumerate() {
        let label = match predict_with_rules(&rules, &file.schema.encode_row(row)) {
            Some(c) => file.classes[c].as_str(),
            None => "abstain",
        };
        *counts.entry(label.to_string()).or_default() += 1;
        text.push_str(&format!("{},{label}\n", i + 1));
    }
    match output {
        Some(p) => {
            write(p, &text)?;
            let summary: Vec<String> = counts.iter().map(|(k, v)| format!("{k}: {v}")).collect();
            eprintln!("{} rows ({})", rows.len(), summary.join(", "));
        }
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Explain(args) => cmd_explain(&args),
        Command::Robustness {
            run,
            interpretations,
        } => cmd_robustness(&run, &interpretations),
        Command::Compare(args) => cmd_compare(&args),
        Command::Predict {
            interpretation,
            input,
            output,
        } => cmd_predict(&interpretation, &input, output.as_deref()),
    }
}
