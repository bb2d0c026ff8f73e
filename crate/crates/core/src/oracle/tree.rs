//! Greedy CART classifier used as the built-in black box and as the
//! surrogate behind the decision-tree baseline.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// How a feature may be split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitKind {
    /// `x < t` goes left.
    Ordinal,
    /// `x == v` goes left.
    Nominal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Test {
    LessThan(f64),
    Equals(f64),
}

impl Test {
    pub fn goes_left(self, x: f64) -> bool {
        match self {
            Test::LessThan(t) => x < t,
            Test::Equals(v) => x == v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        counts: Vec<usize>,
        prediction: usize,
    },
    Split {
        feature: usize,
        test: Test,
        left: usize,
        right: usize,
    },
}

/// One root-to-leaf path: the tests taken (with the branch followed) and the
/// leaf it ends in.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafPath {
    pub steps: Vec<(usize, Test, bool)>,
    pub prediction: usize,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<Node>,
    n_classes: usize,
}

fn gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

fn majority(counts: &[usize]) -> usize {
    let mut best = 0;
    for (k, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = k;
        }
    }
    best
}

const MIN_GAIN: f64 = 1e-12;

impl DecisionTree {
    /// Fit on `x` (rows of feature values) against class indices `y`.
    /// Split gain is the Gini decrease; ties go to the lower feature index,
    /// then the lower threshold/value.
    pub fn fit(
        x: &[Vec<f64>],
        y: &[usize],
        n_classes: usize,
        kinds: &[SplitKind],
        max_depth: usize,
    ) -> Self {
        assert_eq!(x.len(), y.len(), "rows and labels must align");
        let mut tree = DecisionTree {
            nodes: Vec::new(),
            n_classes,
        };
        let idx: Vec<usize> = (0..x.len()).collect();
        tree.grow(x, y, kinds, idx, max_depth);
        tree
    }

    fn counts(&self, y: &[usize], idx: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.n_classes];
        for &i in idx {
            c[y[i]] += 1;
        }
        c
    }

    fn grow(
        &mut self,
        x: &[Vec<f64>],
        y: &[usize],
        kinds: &[SplitKind],
        idx: Vec<usize>,
        depth_left: usize,
    ) -> usize {
        let counts = self.counts(y, &idx);
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let split = if depth_left == 0 || pure || idx.len() < 2 {
            None
        } else {
            self.best_split(x, y, kinds, &idx, &counts)
        };
        let Some((feature, test)) = split else {
            self.nodes.push(Node::Leaf {
                prediction: majority(&counts),
                counts,
            });
            return self.nodes.len() - 1;
        };
        let (l, r): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| test.goes_left(x[i][feature]));
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            counts: Vec::new(),
            prediction: 0,
        });
        let left = self.grow(x, y, kinds, l, depth_left - 1);
        let right = self.grow(x, y, kinds, r, depth_left - 1);
        self.nodes[id] = Node::Split {
            feature,
            test,
            left,
            right,
        };
        id
    }

    fn best_split(
        &self,
        x: &[Vec<f64>],
        y: &[usize],
        kinds: &[SplitKind],
        idx: &[usize],
        counts: &[usize],
    ) -> Option<(usize, Test)> {
        let n = idx.len();
        let parent = gini(counts, n);
        let mut best: Option<(usize, Test, f64)> = None;
        let mut consider = |f: usize, test: Test, left: &[usize], nl: usize| {
            let right: Vec<usize> = counts.iter().zip(left).map(|(t, l)| t - l).collect();
            let w = (nl as f64 * gini(left, nl) + (n - nl) as f64 * gini(&right, n - nl)) / n as f64;
            let gain = parent - w;
            if gain > MIN_GAIN && best.is_none_or(|(_, _, g)| gain > g + MIN_GAIN) {
                best = Some((f, test, gain));
            }
        };
        for (f, kind) in kinds.iter().enumerate() {
            let mut order: Vec<usize> = idx.to_vec();
            order.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]));
            match kind {
                SplitKind::Ordinal => {
                    let mut left = vec![0; self.n_classes];
                    for k in 1..n {
                        left[y[order[k - 1]]] += 1;
                        let (a, b) = (x[order[k - 1]][f], x[order[k]][f]);
                        if a < b {
                            let mid = a + (b - a) / 2.0;
                            let t = if mid > a { mid } else { b };
                            consider(f, Test::LessThan(t), &left, k);
                        }
                    }
                }
                SplitKind::Nominal => {
                    let mut k = 0;
                    while k < n {
                        let v = x[order[k]][f];
                        let mut group = vec![0; self.n_classes];
                        let mut m = 0;
                        while k < n && x[order[k]][f] == v {
                            group[y[order[k]]] += 1;
                            m += 1;
                            k += 1;
                        }
                        if m < n {
                            consider(f, Test::Equals(v), &group, m);
                        }
                    }
                }
            }
        }
        best.map(|(f, t, _)| (f, t))
    }

    pub fn predict(&self, row: &[f64]) -> usize {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Leaf { prediction, .. } => return *prediction,
                Node::Split {
                    feature,
                    test,
                    left,
                    right,
                } => id = if test.goes_left(row[*feature]) { *left } else { *right },
            }
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Longest root-to-leaf path length in splits.
    pub fn depth(&self) -> usize {
        self.leaf_paths().iter().map(|p| p.steps.len()).max().unwrap_or(0)
    }

    pub fn leaf_paths(&self) -> Vec<LeafPath> {
        let mut out = Vec::new();
        let mut stack = vec![(0usize, Vec::new())];
        while let Some((id, steps)) = stack.pop() {
            match &self.nodes[id] {
                Node::Leaf { counts, prediction } => out.push(LeafPath {
                    steps,
                    prediction: *prediction,
                    counts: counts.clone(),
                }),
                Node::Split {
                    feature,
                    test,
                    left,
                    right,
                } => {
                    let mut r = steps.clone();
                    r.push((*feature, *test, false));
                    stack.push((*right, r));
                    let mut l = steps;
                    l.push((*feature, *test, true));
                    stack.push((*left, l));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 15,
            max_depth: 8,
            seed: 0,
        }
    }
}

/// Bagged trees with majority vote; vote ties go to the lower class index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    trees: Vec<DecisionTree>,
    n_classes: usize,
}

impl Forest {
    pub fn fit(
        x: &[Vec<f64>],
        y: &[usize],
        n_classes: usize,
        kinds: &[SplitKind],
        cfg: &ForestConfig,
    ) -> Self {
        let trees = (0..cfg.n_trees.max(1))
            .map(|t| {
                let mut rng = crate::seed::stage_rng(cfg.seed, "forest-bootstrap", t as u64);
                let n = x.len();
                let (bx, by): (Vec<Vec<f64>>, Vec<usize>) = (0..n)
                    .map(|_| {
                        let i = rng.gen_range(0..n);
                        (x[i].clone(), y[i])
                    })
                    .unzip();
                DecisionTree::fit(&bx, &by, n_classes, kinds, cfg.max_depth)
            })
            .collect();
        Forest { trees, n_classes }
    }

    pub fn predict(&self, row: &[f64]) -> usize {
        let mut votes = vec![0usize; self.n_classes];
        for t in &self.trees {
            votes[t.predict(row)] += 1;
        }
        majority(&votes)
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }
}
