//! Per-class genetic search over subsets of a condition pool.
//!
//! A genome has one bit per pool condition. Selected conditions on the same
//! feature are merged by union and different features are conjoined, so
//! `1001000000` over a pool of single-bin conditions reads as
//! "age ∈ {bin a} AND country ∈ {US}".

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Encoded, Schema};
use crate::error::{Error, Result};
use crate::mining::{ConditionPool, Provenance};
use crate::rules::{Condition, ContingencyTable, FitnessKind, Rule};
use crate::seed;

/// Fitness of a genome that decodes to nothing. Every real score lies in
/// (-1, 1].
pub const EMPTY_FITNESS: f64 = -2.0;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Genome(pub Vec<bool>);

impl Genome {
    pub fn ones(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub generations: usize,
    pub population_size: usize,
    pub crossover_prob: f64,
    pub mutation_prob: f64,
    pub tournament_k: usize,
    pub fitness: FitnessKind,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            generations: 1000,
            population_size: 600,
            crossover_prob: 0.25,
            mutation_prob: 0.2,
            tournament_k: 3,
            fitness: FitnessKind::MutualInformation,
            seed: 0,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if self.generations < 1 {
            return Err(Error::Config("generations must be at least 1".into()));
        }
        if self.population_size < 2 {
            return Err(Error::Config("population_size must be at least 2".into()));
        }
        if self.tournament_k < 1 {
            return Err(Error::Config("tournament_k must be at least 1".into()));
        }
        if !prob(self.crossover_prob) || !prob(self.mutation_prob) {
            return Err(Error::Config("probabilities must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Merge the selected conditions into a clause. `None` when nothing is
/// selected or every selected feature covers its whole domain.
pub fn decode_clause(genome: &Genome, pool: &[Condition], schema: &Schema) -> Option<Vec<Condition>> {
    assert_eq!(genome.0.len(), pool.len(), "genome length must equal pool size");
    let mut by_feature: BTreeMap<usize, Vec<u32>> = BTreeMap::new();
    for (c, _) in pool.iter().zip(&genome.0).filter(|(_, &b)| b) {
        by_feature.entry(c.feature()).or_default().extend_from_slice(c.values());
    }
    let clause: Vec<Condition> = by_feature
        .into_iter()
        .filter_map(|(f, mut values)| {
            values.sort_unstable();
            values.dedup();
            if values.len() >= schema.domain_size(f) {
                None
            } else {
                Condition::new(schema, f, values).ok()
            }
        })
        .collect();
    (!clause.is_empty()).then_some(clause)
}

pub fn decode(genome: &Genome, pool: &ConditionPool, schema: &Schema) -> Option<Rule> {
    decode_clause(genome, &pool.conditions, schema)
        .map(|clause| Rule::new(clause, pool.class).expect("decoded clause is valid"))
}

/// Fitness of the decoded rule, or [`EMPTY_FITNESS`].
pub fn evaluate(
    genome: &Genome,
    pool: &ConditionPool,
    schema: &Schema,
    rows: &Encoded,
    labels: &[usize],
    kind: FitnessKind,
) -> Result<f64> {
    match decode(genome, pool, schema) {
        None => Ok(EMPTY_FITNESS),
        Some(rule) => Ok(kind.score(&crate::rules::contingency(&rule, rows, labels)?)),
    }
}

type Bits = Vec<u64>;

fn bitset_len(n: usize) -> usize {
    n.div_ceil(64)
}

/// Fast evaluation through precomputed per-condition coverage bitsets.
struct Evaluator<'a> {
    pool: &'a [Condition],
    schema: &'a Schema,
    coverage: Vec<Bits>,
    class_mask: Bits,
    n: u64,
    c1: u64,
    kind: FitnessKind,
}

impl<'a> Evaluator<'a> {
    fn new(pool: &'a ConditionPool, schema: &'a Schema, rows: &Encoded, labels: &[usize], kind: FitnessKind) -> Self {
        let words = bitset_len(rows.len());
        let mut coverage = vec![vec![0u64; words]; pool.conditions.len()];
        let mut class_mask = vec![0u64; words];
        for (i, row) in rows.rows().enumerate() {
            let bit = 1u64 << (i % 64);
            if labels[i] == pool.class {
                class_mask[i / 64] |= bit;
            }
            for (c, cov) in pool.conditions.iter().zip(coverage.iter_mut()) {
                if c.covers(row) {
                    cov[i / 64] |= bit;
                }
            }
        }
        let c1 = class_mask.iter().map(|w| u64::from(w.count_ones())).sum();
        Evaluator {
            pool: &pool.conditions,
            schema,
            coverage,
            class_mask,
            n: rows.len() as u64,
            c1,
            kind,
        }
    }

    fn score(&self, genome: &Genome) -> f64 {
        let Some(clause) = decode_clause(genome, self.pool, self.schema) else {
            return EMPTY_FITNESS;
        };
        let words = self.class_mask.len();
        let mut cover = vec![u64::MAX; words];
        if self.n % 64 != 0 {
            cover[words - 1] = (1u64 << (self.n % 64)) - 1;
        }
        for cond in &clause {
            let mut feature_cover = vec![0u64; words];
            for (c, cov) in self.pool.iter().zip(&self.coverage).zip(&genome.0).filter_map(|(p, &b)| b.then_some(p)) {
                if c.feature() == cond.feature() {
                    for (fc, w) in feature_cover.iter_mut().zip(cov) {
                        *fc |= w;
                    }
                }
            }
            for (a, b) in cover.iter_mut().zip(&feature_cover) {
                *a &= b;
            }
        }
        let r1: u64 = cover.iter().map(|w| u64::from(w.count_ones())).sum();
        let n11: u64 = cover
            .iter()
            .zip(&self.class_mask)
            .map(|(a, b)| u64::from((a & b).count_ones()))
            .sum();
        let t = ContingencyTable::new(n11, r1 - n11, self.c1 - n11, self.n - r1 - (self.c1 - n11))
            .expect("non-empty row set");
        self.kind.score(&t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRule {
    pub rule: Rule,
    pub fitness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub class: String,
    pub generation: usize,
    pub best: f64,
    pub mean: f64,
    pub archive_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolvedRuleSet {
    pub class: usize,
    pub rules: Vec<ScoredRule>,
    pub config: GaConfig,
    pub provenance: Provenance,
    pub stats: Vec<GenerationStats>,
}

/// Higher fitness first, then fewer conditions, then clause order.
fn rank(a: &ScoredRule, b: &ScoredRule) -> std::cmp::Ordering {
    b.fitness
        .total_cmp(&a.fitness)
        .then(a.rule.len().cmp(&b.rule.len()))
        .then_with(|| a.rule.clause().cmp(b.rule.clause()))
}

struct Archive {
    capacity: usize,
    entries: HashMap<Vec<Condition>, f64>,
}

impl Archive {
    fn offer(&mut self, clause: Vec<Condition>, fitness: f64) {
        self.entries.insert(clause, fitness);
    }

    fn truncate(&mut self, class: usize) {
        if self.entries.len() <= self.capacity {
            return;
        }
        let mut all = self.sorted(class);
        all.truncate(self.capacity);
        self.entries = all
            .into_iter()
            .map(|s| (s.rule.clause().to_vec(), s.fitness))
            .collect();
    }

    fn sorted(&self, class: usize) -> Vec<ScoredRule> {
        let mut v: Vec<ScoredRule> = self
            .entries
            .iter()
            .map(|(c, &f)| ScoredRule {
                rule: Rule::new(c.clone(), class).expect("archived clause is valid"),
                fitness: f,
            })
            .collect();
        v.sort_by(rank);
        v
    }

    fn best(&self) -> f64 {
        self.entries.values().copied().fold(EMPTY_FITNESS, f64::max)
    }
}

fn tournament<'p>(pop: &'p [Genome], fit: &[f64], k: usize, rng: &mut ChaCha8Rng) -> &'p Genome {
    let mut best = rng.gen_range(0..pop.len());
    for _ in 1..k {
        let c = rng.gen_range(0..pop.len());
        let better = fit[c]
            .total_cmp(&fit[best])
            .then(pop[best].ones().cmp(&pop[c].ones()))
            .then(pop[best].cmp(&pop[c]));
        if better.is_gt() {
            best = c;
        }
    }
    &pop[best]
}

fn mutate(g: &mut Genome, rng: &mut ChaCha8Rng) {
    let len = g.0.len();
    let rate = 1.0 / len as f64;
    let mut flipped = false;
    for b in g.0.iter_mut() {
        if rng.gen_bool(rate) {
            *b = !*b;
            flipped = true;
        }
    }
    if !flipped {
        let i = rng.gen_range(0..len);
        g.0[i] = !g.0[i];
    }
}

/// Evaluate every distinct genome once, in parallel, through the memo.
fn score_population(pop: &[Genome], eval: &Evaluator<'_>, memo: &mut HashMap<Genome, f64>) -> Vec<f64> {
    let mut fresh: Vec<&Genome> = pop.iter().filter(|g| !memo.contains_key(*g)).collect();
    fresh.sort();
    fresh.dedup();
    let scored: Vec<(Genome, f64)> = fresh.par_iter().map(|g| ((*g).clone(), eval.score(g))).collect();
    memo.extend(scored);
    pop.iter().map(|g| memo[g]).collect()
}

/// Run the genetic search for `pool.class` on the given rows and model
/// labels.
pub fn evolve_rules(
    pool: &ConditionPool,
    schema: &Schema,
    rows: &Encoded,
    labels: &[usize],
    cfg: &GaConfig,
    class_name: &str,
) -> Result<EvolvedRuleSet> {
    cfg.validate()?;
    if pool.is_empty() {
        return Err(Error::Empty(format!("condition pool for class `{class_name}` is empty")));
    }
    if rows.is_empty() {
        return Err(Error::Empty("no rows to evolve rules on".into()));
    }
    if rows.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: rows.len(),
            right: labels.len(),
        });
    }
    let eval = Evaluator::new(pool, schema, rows, labels, cfg.fitness);
    let mut rng = seed::stage_rng(cfg.seed, "evolve", pool.class as u64);
    let len = pool.len();
    let density = (4.0 / len as f64).min(0.5);
    let mut pop: Vec<Genome> = (0..cfg.population_size)
        .map(|_| Genome((0..len).map(|_| rng.gen_bool(density)).collect()))
        .collect();
    let mut memo = HashMap::new();
    let mut archive = Archive {
        capacity: cfg.population_size,
        entries: HashMap::new(),
    };
    let mut stats = Vec::with_capacity(cfg.generations + 1);
    let mut fit = score_population(&pop, &eval, &mut memo);

    let mut generation = 0;
    loop {
        for (g, &f) in pop.iter().zip(&fit) {
            if let Some(clause) = decode_clause(g, &pool.conditions, schema) {
                archive.offer(clause, f);
            }
        }
        archive.truncate(pool.class);
        stats.push(GenerationStats {
            class: class_name.to_string(),
            generation,
            best: archive.best(),
            mean: fit.iter().sum::<f64>() / fit.len() as f64,
            archive_size: archive.entries.len(),
        });
        if generation == cfg.generations {
            break;
        }
        generation += 1;

        let parents: Vec<Genome> = (0..cfg.population_size)
            .map(|_| tournament(&pop, &fit, cfg.tournament_k, &mut rng).clone())
            .collect();
        let mut next = Vec::with_capacity(cfg.population_size);
        let mut pairs = parents.chunks(2);
        for pair in &mut pairs {
            if let [a, b] = pair {
                let (mut a, mut b) = (a.clone(), b.clone());
                if rng.gen_bool(cfg.crossover_prob) {
                    for i in 0..len {
                        if rng.gen_bool(0.5) {
                            std::mem::swap(&mut a.0[i], &mut b.0[i]);
                        }
                    }
                }
                next.push(a);
                next.push(b);
            } else {
                next.push(pair[0].clone());
            }
        }
        for g in next.iter_mut() {
            if rng.gen_bool(cfg.mutation_prob) {
                mutate(g, &mut rng);
            }
        }
        pop = next;
        fit = score_population(&pop, &eval, &mut memo);
    }

    for (g, &f) in pop.iter().zip(&fit) {
        if let Some(clause) = decode_clause(g, &pool.conditions, schema) {
            archive.offer(clause, f);
        }
    }
    Ok(EvolvedRuleSet {
        class: pool.class,
        rules: archive.sorted(pool.class),
        config: *cfg,
        provenance: pool.provenance,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Feature;
    use crate::rules::contingency;
    use proptest::prelude::*;

    fn schema() -> Schema {
        Schema::new(vec![
            Feature::categorical("f", vec!["a", "b", "c"]),
            Feature::categorical("g", vec!["u", "v"]),
        ])
        .unwrap()
    }

    /// `blocks` of (f code, g code, label, count).
    fn rows(blocks: &[(u32, u32, usize, usize)]) -> (Encoded, Vec<usize>) {
        let mut codes = Vec::new();
        let mut labels = Vec::new();
        for &(f, g, y, n) in blocks {
            for _ in 0..n {
                codes.push(vec![f, g]);
                labels.push(y);
            }
        }
        (Encoded::from_rows(2, &codes), labels)
    }

    fn pool(s: &Schema, conds: &[(usize, u32)]) -> ConditionPool {
        ConditionPool {
            class: 0,
            conditions: conds.iter().map(|&(f, v)| Condition::new(s, f, [v]).unwrap()).collect(),
            provenance: Provenance::LocalSurrogate,
        }
    }

    fn g(bits: &str) -> Genome {
        Genome(bits.chars().map(|c| c == '1').collect())
    }

    #[test]
    fn decode_merges_and_drops() {
        let s = schema();
        let p = pool(&s, &[(0, 0), (0, 1), (1, 0), (0, 2)]);
        let r = decode(&g("1110"), &p, &s).unwrap();
        assert_eq!(
            r.clause(),
            &[Condition::new(&s, 0, [0, 1]).unwrap(), Condition::new(&s, 1, [0]).unwrap()]
        );
        assert!(decode(&g("0000"), &p, &s).is_none());
        assert!(decode(&g("1101"), &p, &s).is_none());
        let only_g = decode(&g("1111"), &p, &s).unwrap();
        assert_eq!(only_g.clause(), &[Condition::new(&s, 1, [0]).unwrap()]);
    }

    #[test]
    fn worked_table_fitness() {
        let s = schema();
        let p = pool(&s, &[(0, 0), (1, 0)]);
        // (600, 0, 1000, 400)
        let (enc, y) = rows(&[(0, 0, 0, 600), (1, 0, 0, 1000), (2, 0, 1, 400)]);
        let f = evaluate(&g("10"), &p, &s, &enc, &y, FitnessKind::MutualInformation).unwrap();
        assert!((f - 0.118).abs() < 5e-4, "{f}");
        // (1000, 400, 600, 0)
        let (enc, y) = rows(&[(0, 0, 0, 1000), (0, 0, 1, 400), (1, 0, 0, 600)]);
        let f = evaluate(&g("10"), &p, &s, &enc, &y, FitnessKind::MutualInformation).unwrap();
        assert!((f + 0.118).abs() < 5e-4, "{f}");
        assert_eq!(evaluate(&g("00"), &p, &s, &enc, &y, FitnessKind::MutualInformation).unwrap(), EMPTY_FITNESS);
    }

    fn small_cfg(seed: u64) -> GaConfig {
        GaConfig {
            generations: 200,
            population_size: 100,
            seed,
            ..GaConfig::default()
        }
    }

    #[test]
    fn single_condition_pool() {
        let s = schema();
        let p = pool(&s, &[(0, 0)]);
        let (enc, y) = rows(&[(0, 0, 0, 30), (1, 0, 1, 30), (2, 1, 1, 10)]);
        let out = evolve_rules(&p, &s, &enc, &y, &small_cfg(1), "A").unwrap();
        assert_eq!(out.rules.len(), 1);
        assert_eq!(out.rules[0].rule.clause(), &p.conditions[..]);
        assert!(out.rules[0].fitness > 0.0);
    }

    #[test]
    fn conjunction_is_found_and_run_is_reproducible() {
        let s = schema();
        let p = pool(&s, &[(0, 2), (1, 0), (0, 0), (1, 1)]);
        // class 0 iff f = c AND g = u
        let (enc, y) = rows(&[
            (2, 0, 0, 50),
            (2, 1, 1, 40),
            (0, 0, 1, 40),
            (1, 0, 1, 40),
            (0, 1, 1, 30),
            (1, 1, 1, 30),
        ]);
        let a = evolve_rules(&p, &s, &enc, &y, &small_cfg(3), "A").unwrap();
        let top = &a.rules[0];
        assert_eq!(
            top.rule.clause(),
            &[Condition::new(&s, 0, [2]).unwrap(), Condition::new(&s, 1, [0]).unwrap()]
        );
        let best = exhaustive_best(&p, &s, &enc, &y);
        assert_eq!(top.fitness, best);
        let b = evolve_rules(&p, &s, &enc, &y, &small_cfg(3), "A").unwrap();
        assert_eq!(a, b);
        for w in a.stats.windows(2) {
            assert!(w[1].best >= w[0].best);
        }
        for r in &a.rules {
            let t = contingency(&r.rule, &enc, &y).unwrap();
            assert!((t.fitness() - r.fitness).abs() < 1e-12);
        }
    }

    fn exhaustive_best(p: &ConditionPool, s: &Schema, enc: &Encoded, y: &[usize]) -> f64 {
        (1u32..1 << p.len())
            .map(|m| {
                let genome = Genome((0..p.len()).map(|i| m >> i & 1 == 1).collect());
                evaluate(&genome, p, s, enc, y, FitnessKind::MutualInformation).unwrap()
            })
            .fold(EMPTY_FITNESS, f64::max)
    }

    #[test]
    fn invalid_config_and_empty_pool() {
        let s = schema();
        let (enc, y) = rows(&[(0, 0, 0, 3)]);
        let p = pool(&s, &[(0, 0)]);
        let bad = GaConfig { population_size: 1, ..GaConfig::default() };
        assert!(evolve_rules(&p, &s, &enc, &y, &bad, "A").is_err());
        let empty = pool(&s, &[]);
        assert!(evolve_rules(&empty, &s, &enc, &y, &small_cfg(0), "A").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        /// The bitset evaluator and the direct contingency route agree.
        #[test]
        fn fast_and_direct_evaluation_agree(
            codes in prop::collection::vec((0u32..3, 0u32..2, 0usize..2), 1..80),
            bits in prop::collection::vec(any::<bool>(), 5),
        ) {
            let s = schema();
            let p = pool(&s, &[(0, 0), (0, 1), (0, 2), (1, 0), (1, 1)]);
            let enc = Encoded::from_rows(2, &codes.iter().map(|&(a, b, _)| vec![a, b]).collect::<Vec<_>>());
            let y: Vec<usize> = codes.iter().map(|c| c.2).collect();
            let genome = Genome(bits);
            for kind in [FitnessKind::MutualInformation, FitnessKind::F1] {
                let direct = evaluate(&genome, &p, &s, &enc, &y, kind).unwrap();
                let fast = Evaluator::new(&p, &s, &enc, &y, kind).score(&genome);
                prop_assert_eq!(direct, fast);
            }
        }
    }
}
