//! Whole-pipeline runs on small synthetic data.

use glex_core::data::{Dataset, Feature, Row, Schema, Value};
use glex_core::evaluation::set_score;
use glex_core::evolution::GaConfig;
use glex_core::mining::LocalConfig;
use glex_core::oracle::ModelOracle;
use glex_core::pipeline::{self, MinerSpec, OracleSpec, RunConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn quick_config(seed: u64) -> RunConfig {
    RunConfig {
        miner: MinerSpec::Local(LocalConfig {
            samples: 1000,
            ..LocalConfig::default()
        }),
        ga: GaConfig {
            generations: 100,
            population_size: 60,
            ..GaConfig::default()
        },
        seed,
        ..RunConfig::default()
    }
}

fn uniform_rows(n: usize, m: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schema = Schema::new((0..m).map(|i| Feature::numeric(format!("x{i}"), Vec::new())).collect()).unwrap();
    let rows: Vec<Row> = (0..n)
        .map(|_| (0..m).map(|_| Value::Num(rng.gen_range(0.0..1.0))).collect())
        .collect();
    Dataset::new(schema, rows).unwrap()
}

fn conjunction_oracle(schema: &Schema) -> ModelOracle {
    ModelOracle::from_fn(schema.clone(), vec!["neg".into(), "pos".into()], |r| {
        usize::from(r[0].as_f64() >= 0.5 && r[1].as_f64() >= 0.5)
    })
    .unwrap()
}

#[test]
fn small_conjunction_is_recovered() {
    let data = uniform_rows(600, 4, 1);
    let oracle = conjunction_oracle(&data.schema);
    let cfg = quick_config(3);
    let prep = pipeline::prepare_with_oracle(&cfg, data, oracle).unwrap();
    // the informative features get a cut near 0.5, the noise features none
    for f in 0..2 {
        let cuts = &prep.schema.feature(f).cuts;
        assert!(cuts.iter().any(|c| (c - 0.5).abs() < 0.02), "{cuts:?}");
    }
    let out = pipeline::explain(&prep, &cfg).unwrap();
    let five = &out.selections[0];
    assert_eq!(five.interpretation.selection_size, 5);
    assert!(five.scoring >= 95.0, "{}", five.scoring);
    let scoring = prep.scoring();
    assert_eq!(
        set_score(&five.interpretation.rules, &scoring.encoded, &scoring.labels).unwrap(),
        five.scoring
    );
}

#[test]
fn same_seed_same_result() {
    let run = |seed| {
        let data = uniform_rows(300, 3, 5);
        let oracle = conjunction_oracle(&data.schema);
        let cfg = quick_config(seed);
        let prep = pipeline::prepare_with_oracle(&cfg, data, oracle).unwrap();
        pipeline::explain(&prep, &cfg).unwrap().selections
    };
    assert_eq!(run(4), run(4));
}

#[test]
fn dt_surrogate_matches_a_depth_two_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let schema = Schema::new(vec![
        Feature::categorical("a", vec!["p", "q", "r"]),
        Feature::categorical("b", vec!["u", "v"]),
        Feature::categorical("noise", vec!["0", "1", "2", "3"]),
    ])
    .unwrap();
    let rows: Vec<Row> = (0..800)
        .map(|_| vec![Value::Cat(rng.gen_range(0..3)), Value::Cat(rng.gen_range(0..2)), Value::Cat(rng.gen_range(0..4))])
        .collect();
    let data = Dataset::new(schema.clone(), rows).unwrap();
    // a depth-two tree: split on a = p, then on b
    let oracle = ModelOracle::from_fn(schema, vec!["n".into(), "y".into()], |r| match (r[0], r[1]) {
        (Value::Cat(0), Value::Cat(0)) => 1,
        (Value::Cat(0), _) => 0,
        (_, Value::Cat(1)) => 1,
        _ => 0,
    })
    .unwrap();
    let cfg = RunConfig {
        selection_sizes: vec![2, 4, 6],
        ..quick_config(0)
    };
    let prep = pipeline::prepare_with_oracle(&cfg, data, oracle).unwrap();
    let train = pipeline::training_set(&prep, &cfg).unwrap();
    let dt = pipeline::run_dt(&prep, &train, &cfg).unwrap();
    assert_eq!(dt[1].scoring, 100.0);
    assert_eq!(dt[2].scoring, 100.0);
    assert!(dt[0].scoring < 100.0);
}

#[test]
fn augmentation_extends_training_only() {
    let data = uniform_rows(500, 3, 2);
    let oracle = conjunction_oracle(&data.schema);
    let cfg = RunConfig {
        augment: true,
        ..quick_config(1)
    };
    let prep = pipeline::prepare_with_oracle(&cfg, data, oracle).unwrap();
    let plain = prep.train();
    let aug = pipeline::training_set(&prep, &cfg).unwrap();
    assert_eq!(plain.rows.len(), 300);
    assert_eq!(aug.rows.len(), 360);
    assert_eq!(&aug.rows[..300], &plain.rows[..]);
    assert_eq!(aug.labels, prep.oracle.predict_batch(&aug.rows).unwrap());
}

#[test]
fn compare_has_every_approach_and_size() {
    let data = uniform_rows(300, 3, 6);
    let oracle = conjunction_oracle(&data.schema);
    let cfg = RunConfig {
        ablations: true,
        ..quick_config(2)
    };
    let prep = pipeline::prepare_with_oracle(&cfg, data, oracle).unwrap();
    let (cmp, selections) = pipeline::compare(&prep, &cfg, "h").unwrap();
    let names: Vec<&str> = cmp.rows.iter().map(|r| r.approach.as_str()).collect();
    assert_eq!(
        names,
        ["magix", "dt", "apriori", "magix-frequent-1%", "magix-frequent-5%", "magix-f1", "local-apriori"]
    );
    assert!(cmp.rows.iter().all(|r| r.scores.len() == 4));
    assert_eq!(selections.len(), 7 * 4);
    assert!(cmp.to_markdown().starts_with("| Approach | 5 Rules | 10 Rules | 15 Rules | 20 Rules |"));
}

#[test]
fn csv_run_with_external_model() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut text = String::from("color,size,label\n");
    for _ in 0..200 {
        let color = ["red", "blue"][rng.gen_range(0..2)];
        let size: f64 = rng.gen_range(0.0..10.0);
        text.push_str(&format!("{color},{size},{}\n", if color == "red" { "hot" } else { "cold" }));
    }
    std::fs::write(&csv, text).unwrap();
    let script = r#"
import sys
while True:
    head = sys.stdin.readline()
    if not head:
        break
    rows = [sys.stdin.readline().split(",") for _ in range(int(head))]
    sys.stdout.write("".join(("hot" if r[0] == "red" else "cold") + "\n" for r in rows))
    sys.stdout.flush()
"#;
    let cfg = RunConfig {
        dataset: Some(csv),
        oracle: OracleSpec::External {
            argv: vec!["python3".into(), "-u".into(), "-c".into(), script.into()],
            classes: None,
        },
        selection_sizes: vec![1, 2],
        ..quick_config(0)
    };
    let prep = pipeline::prepare(&cfg).unwrap();
    assert_eq!(prep.classes, ["cold", "hot"]);
    let out = pipeline::explain(&prep, &cfg).unwrap();
    assert_eq!(out.selections[1].scoring, 100.0);

    let bad = RunConfig {
        oracle: OracleSpec::External {
            argv: vec!["sh".into(), "-c".into(), "exit 4".into()],
            classes: None,
        },
        ..cfg
    };
    let err = pipeline::prepare(&bad).unwrap_err();
    assert_eq!(err.stage, "label");
}
