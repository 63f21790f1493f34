//! CART regression trees and bagged forests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitCriterion {
    Mse,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxFeatures {
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub criterion: SplitCriterion,
    pub min_samples_leaf: usize,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            criterion: SplitCriterion::Mse,
            min_samples_leaf: 2,
            max_features: MaxFeatures::All,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Invalid("a forest needs at least one tree".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::Invalid("min_samples_leaf must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Node {
    /// `x[feature] <= threshold` goes left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
        n_samples: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    /// Node 0 is the root.
    pub nodes: Vec<Node>,
}

/// Training data stored by feature column.
struct Columns<'a> {
    cols: Vec<Vec<f64>>,
    y: &'a [f64],
}

impl RegressionTree {
    fn grow(data: &Columns, samples: Vec<usize>, min_leaf: usize) -> Self {
        let mut nodes = vec![Node::Leaf {
            value: 0.0,
            n_samples: 0,
        }];
        let mut stack = vec![(samples, 0usize)];
        while let Some((idx, slot)) = stack.pop() {
            match best_split(data, &idx, min_leaf) {
                Some((feature, threshold)) => {
                    let (l, r): (Vec<usize>, Vec<usize>) =
                        idx.iter().partition(|&&i| data.cols[feature][i] <= threshold);
                    let left = nodes.len();
                    let right = left + 1;
                    nodes.push(Node::Leaf {
                        value: 0.0,
                        n_samples: 0,
                    });
                    nodes.push(Node::Leaf {
                        value: 0.0,
                        n_samples: 0,
                    });
                    nodes[slot] = Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    };
                    stack.push((r, right));
                    stack.push((l, left));
                }
                None => {
                    let value = stable_mean(idx.iter().map(|&i| data.y[i]));
                    nodes[slot] = Node::Leaf {
                        value,
                        n_samples: idx.len(),
                    };
                }
            }
        }
        Self { nodes }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut k = 0;
        loop {
            match &self.nodes[k] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => k = if x[*feature] <= *threshold { *left } else { *right },
                Node::Leaf { value, .. } => return *value,
            }
        }
    }

    /// `(feature, threshold)` of the root, or `None` for a single leaf.
    pub fn root_split(&self) -> Option<(usize, f64)> {
        match self.nodes[0] {
            Node::Split { feature, threshold, .. } => Some((feature, threshold)),
            Node::Leaf { .. } => None,
        }
    }

    pub fn leaves(&self) -> impl Iterator<Item = (f64, usize)> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf { value, n_samples } => Some((*value, *n_samples)),
            Node::Split { .. } => None,
        })
    }
}

/// Best variance-reducing split of `idx`, scanning midpoints between
/// consecutive distinct values. Ties go to the lowest feature, then the
/// smallest threshold.
fn best_split(data: &Columns, idx: &[usize], min_leaf: usize) -> Option<(usize, f64)> {
    let n = idx.len();
    if n < 2 * min_leaf {
        return None;
    }
    let y0 = data.y[idx[0]];
    if idx.iter().all(|&i| data.y[i] == y0) {
        return None;
    }
    let total: f64 = idx.iter().map(|&i| data.y[i]).sum();
    // maximizing S_L²/n_L + S_R²/n_R is the same as minimizing child SSE
    let parent = total * total / n as f64;
    let mut best: Option<(usize, f64, f64)> = None;
    let mut order = idx.to_vec();
    for (f, col) in data.cols.iter().enumerate() {
        order.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
        let mut left_sum = 0.0;
        for k in 0..n - min_leaf {
            left_sum += data.y[order[k]];
            let nl = k + 1;
            if nl < min_leaf {
                continue;
            }
            let (a, b) = (col[order[k]], col[order[k + 1]]);
            if a == b {
                continue;
            }
            let nr = n - nl;
            let right_sum = total - left_sum;
            let score = left_sum * left_sum / nl as f64 + right_sum * right_sum / nr as f64;
            let better = match best {
                None => true,
                Some((_, _, s)) => score > s + 1e-12 * s.abs(),
            };
            if better {
                let mut t = 0.5 * (a + b);
                if t >= b {
                    t = a;
                }
                best = Some((f, t, score));
            }
        }
    }
    best.filter(|&(_, _, s)| s > parent + 1e-12 * parent.abs())
        .map(|(f, t, _)| (f, t))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub config: ForestConfig,
    pub n_features: usize,
    pub trees: Vec<RegressionTree>,
}

/// Mean accumulated as offsets from the first value and clamped to the
/// value range, so equal values average to themselves exactly.
fn stable_mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut values = values.peekable();
    let Some(&first) = values.peek() else {
        return f64::NAN;
    };
    let (mut n, mut offset, mut lo, mut hi) = (0usize, 0.0, first, first);
    for v in values {
        n += 1;
        offset += v - first;
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (first + offset / n as f64).clamp(lo, hi)
}

fn bootstrap_sample(n: usize, tree_seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(tree_seed);
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

impl Forest {
    /// Each tree `t` uses the stream `seed::derive(cfg.seed, t)`, so the
    /// forest does not depend on the order trees are grown in.
    pub fn fit(x: &[Vec<f64>], y: &[f64], cfg: &ForestConfig) -> Result<Self> {
        cfg.validate()?;
        if x.is_empty() {
            return Err(Error::Empty("forest training set"));
        }
        check_len(x.len(), y.len(), "targets per row")?;
        let n_features = x[0].len();
        if n_features == 0 {
            return Err(Error::Invalid("rows must have at least one feature".into()));
        }
        for (i, row) in x.iter().enumerate() {
            check_len(n_features, row.len(), "feature row width")?;
            if row.iter().any(|v| !v.is_finite()) || !y[i].is_finite() {
                return Err(Error::Row {
                    row: i + 1,
                    message: "non-finite value".into(),
                });
            }
        }
        let data = Columns {
            cols: (0..n_features).map(|f| x.iter().map(|r| r[f]).collect()).collect(),
            y,
        };
        let n = x.len();
        let trees = (0..cfg.n_trees)
            .map(|t| {
                let samples = if cfg.bootstrap {
                    bootstrap_sample(n, seed::derive(cfg.seed, t as u64))
                } else {
                    (0..n).collect()
                };
                RegressionTree::grow(&data, samples, cfg.min_samples_leaf)
            })
            .collect();
        Ok(Self {
            config: cfg.clone(),
            n_features,
            trees,
        })
    }

    /// Mean of the tree predictions.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        check_len(self.n_features, x.len(), "feature row width")?;
        Ok(stable_mean(self.trees.iter().map(|t| t.predict(x))))
    }

    pub fn predict_many(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        rows.iter().map(|r| self.predict(r)).collect()
    }

    /// Out-of-bag mean squared error using the first `k` trees for each
    /// `k = 1..=n_trees`. Entry `k - 1` averages over the samples that are
    /// out of bag for at least one of those trees (`NaN` if there are none).
    /// `x` and `y` must be the training data.
    pub fn oob_mse_curve(&self, x: &[Vec<f64>], y: &[f64]) -> Result<Vec<f64>> {
        if !self.config.bootstrap {
            return Err(Error::Invalid("out-of-bag error needs bootstrap sampling".into()));
        }
        check_len(x.len(), y.len(), "targets per row")?;
        let n = x.len();
        let mut sum = vec![0.0; n];
        let mut count = vec![0usize; n];
        let mut curve = Vec::with_capacity(self.trees.len());
        for (t, tree) in self.trees.iter().enumerate() {
            let mut in_bag = vec![false; n];
            for i in bootstrap_sample(n, seed::derive(self.config.seed, t as u64)) {
                in_bag[i] = true;
            }
            for i in (0..n).filter(|&i| !in_bag[i]) {
                sum[i] += tree.predict(&x[i]);
                count[i] += 1;
            }
            let (se, m) = (0..n)
                .filter(|&i| count[i] > 0)
                .fold((0.0, 0usize), |(se, m), i| (se + (sum[i] / count[i] as f64 - y[i]).powi(2), m + 1));
            curve.push(if m > 0 { se / m as f64 } else { f64::NAN });
        }
        Ok(curve)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_1d(n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|i| vec![i as f64 / (n - 1) as f64]).collect()
    }

    fn no_bootstrap(n_trees: usize) -> ForestConfig {
        ForestConfig {
            n_trees,
            bootstrap: false,
            ..ForestConfig::default()
        }
    }

    #[test]
    fn constant_targets_are_exact() {
        let x = grid_1d(30);
        let y = vec![3.7; 30];
        let f = Forest::fit(&x, &y, &ForestConfig::default()).unwrap();
        for q in [-1.0, 0.2, 0.9, 3.0] {
            assert_eq!(f.predict(&[q]).unwrap(), 3.7);
        }
    }

    #[test]
    fn step_is_found() {
        let x = grid_1d(200);
        let y: Vec<f64> = x.iter().map(|v| if v[0] > 0.5 { 1.0 } else { 0.0 }).collect();
        let f = Forest::fit(&x, &y, &ForestConfig::default()).unwrap();
        let mse = x.iter().zip(&y).map(|(r, t)| (f.predict(r).unwrap() - t).powi(2)).sum::<f64>() / 200.0;
        assert!(mse < 1e-3, "{mse}");

        // brute-force oracle over every cut position
        let mut best = (f64::INFINITY, 0.0);
        for k in 1..200 {
            let sse = |s: &[f64]| {
                let m = s.iter().sum::<f64>() / s.len() as f64;
                s.iter().map(|v| (v - m).powi(2)).sum::<f64>()
            };
            let cost = sse(&y[..k]) + sse(&y[k..]);
            if cost < best.0 {
                best = (cost, 0.5 * (x[k - 1][0] + x[k][0]));
            }
        }
        let tree = Forest::fit(&x, &y, &no_bootstrap(1)).unwrap();
        let (feat, thr) = tree.trees[0].root_split().unwrap();
        assert_eq!(feat, 0);
        assert!((thr - best.1).abs() < 1e-12);
        assert!((thr - 0.5).abs() <= 1.0 / 199.0);
    }

    #[test]
    fn seeded_forests_repeat() {
        let x: Vec<Vec<f64>> = (0..60).map(|i| vec![(i % 7) as f64, (i * i % 11) as f64]).collect();
        let y: Vec<f64> = x.iter().map(|r| (r[0] * 0.3).sin() + r[1]).collect();
        let cfg = ForestConfig {
            n_trees: 20,
            seed: 42,
            ..ForestConfig::default()
        };
        let a = Forest::fit(&x, &y, &cfg).unwrap();
        let b = Forest::fit(&x, &y, &cfg).unwrap();
        assert_eq!(a, b);
        let c = Forest::fit(&x, &y, &ForestConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn single_leaf_returns_mean() {
        let x = vec![vec![0.0], vec![1.0], vec![2.0]];
        let y = vec![1.0, 2.0, 6.0];
        let f = Forest::fit(&x, &y, &no_bootstrap(1)).unwrap();
        assert_eq!(f.trees[0].nodes.len(), 1);
        assert_eq!(f.predict(&[5.0]).unwrap(), 3.0);
    }

    #[test]
    fn leaves_respect_min_samples() {
        let x = grid_1d(41);
        let y: Vec<f64> = x.iter().map(|r| (9.0 * r[0]).sin()).collect();
        for cfg in [ForestConfig::default(), no_bootstrap(3)] {
            let f = Forest::fit(&x, &y, &ForestConfig { n_trees: 5, ..cfg }).unwrap();
            for t in &f.trees {
                assert!(t.leaves().all(|(_, n)| n >= 2));
            }
        }
    }

    #[test]
    fn matches_manual_traversal() {
        let x: Vec<Vec<f64>> = (0..50).map(|i| vec![(i as f64 * 0.37).fract(), (i as f64 * 0.71).fract()]).collect();
        let y: Vec<f64> = x.iter().map(|r| r[0] * r[1] + r[0]).collect();
        let f = Forest::fit(&x, &y, &ForestConfig { n_trees: 7, ..ForestConfig::default() }).unwrap();
        let q = [0.41, 0.66];
        let mut total = 0.0;
        for t in &f.trees {
            let mut k = 0;
            let v = loop {
                match &t.nodes[k] {
                    Node::Leaf { value, .. } => break *value,
                    Node::Split { feature, threshold, left, right } => {
                        k = if q[*feature] <= *threshold { *left } else { *right };
                    }
                }
            };
            total += v;
        }
        assert_eq!(f.predict(&q).unwrap(), total / 7.0);
        assert!(f.predict(&[0.1]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let x = grid_1d(20);
        let y: Vec<f64> = x.iter().map(|r| r[0] * r[0]).collect();
        let f = Forest::fit(&x, &y, &ForestConfig { n_trees: 3, ..ForestConfig::default() }).unwrap();
        let back: Forest = serde_json::from_str(&serde_json::to_string(&f).unwrap()).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn bad_input_is_rejected() {
        assert!(Forest::fit(&[], &[], &ForestConfig::default()).is_err());
        assert!(Forest::fit(&[vec![1.0]], &[1.0, 2.0], &ForestConfig::default()).is_err());
        let zero = ForestConfig { n_trees: 0, ..ForestConfig::default() };
        assert!(Forest::fit(&[vec![1.0]], &[1.0], &zero).is_err());
    }
}
