//! Histogram-split regression trees, bagged forests and gradient boosting.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::N_FEATURES;

const MAX_BINS: usize = 32;

/// Per-feature split candidates and the binned training matrix.
#[derive(Debug, Clone)]
pub struct BinnedFeatures {
    /// Candidate thresholds per feature; bin `b` holds values ≤ `edges[f][b]`.
    pub edges: Vec<Vec<f64>>,
    /// `codes[r][f]` is the bin of row `r` for feature `f`.
    pub codes: Vec<[u8; N_FEATURES]>,
}

impl BinnedFeatures {
    pub fn new(rows: &[[f64; N_FEATURES]]) -> Self {
        let mut edges = Vec::with_capacity(N_FEATURES);
        for f in 0..N_FEATURES {
            let mut vals: Vec<f64> = rows.iter().map(|r| r[f]).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            let e: Vec<f64> = if vals.len() <= MAX_BINS {
                vals.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
            } else {
                let mut e: Vec<f64> = (1..MAX_BINS)
                    .map(|q| {
                        let pos = q * (vals.len() - 1) / MAX_BINS;
                        0.5 * (vals[pos] + vals[pos + 1])
                    })
                    .collect();
                e.dedup();
                e
            };
            edges.push(e);
        }
        let codes = rows
            .iter()
            .map(|r| {
                let mut c = [0u8; N_FEATURES];
                for f in 0..N_FEATURES {
                    c[f] = edges[f].partition_point(|&e| e < r[f]) as u8;
                }
                c
            })
            .collect();
        Self { edges, codes }
    }

    fn n_bins(&self, f: usize) -> usize {
        self.edges[f].len() + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf(f64),
    Split { feature: u8, threshold: f64, left: u32, right: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features considered at each split.
    pub max_features: usize,
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64; N_FEATURES]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[feature as usize] <= threshold { left as usize } else { right as usize };
                }
            }
        }
    }

    /// Grows a tree on `rows` (indices into `data`, repeats allowed) with
    /// targets `y` indexed by data row.
    pub fn fit(data: &BinnedFeatures, y: &[f64], rows: &mut [usize], params: &TreeParams, rng: &mut ChaCha8Rng) -> Self {
        let mut tree = Self { nodes: Vec::new() };
        tree.grow(data, y, rows, 0, params, rng);
        tree
    }

    fn grow(
        &mut self,
        data: &BinnedFeatures,
        y: &[f64],
        rows: &mut [usize],
        depth: usize,
        params: &TreeParams,
        rng: &mut ChaCha8Rng,
    ) -> u32 {
        let id = self.nodes.len() as u32;
        let n = rows.len();
        let sum: f64 = rows.iter().map(|&r| y[r]).sum();
        let mean = sum / n as f64;
        self.nodes.push(Node::Leaf(mean));
        if depth >= params.max_depth || n < 2 * params.min_leaf {
            return id;
        }

        // Features are drawn in random order; constant ones do not count
        // towards the `max_features` budget.
        let order: Vec<usize> = if params.max_features >= N_FEATURES {
            (0..N_FEATURES).collect()
        } else {
            sample(rng, N_FEATURES, N_FEATURES).into_vec()
        };

        let mut best: Option<(f64, usize, usize)> = None;
        let mut hist_sum = [0.0; MAX_BINS + 1];
        let mut hist_cnt = [0usize; MAX_BINS + 1];
        let parent_score = sum * sum / n as f64;
        let mut evaluated = 0;
        for &f in &order {
            if evaluated == params.max_features {
                break;
            }
            let nb = data.n_bins(f);
            hist_sum[..nb].iter_mut().for_each(|v| *v = 0.0);
            hist_cnt[..nb].iter_mut().for_each(|v| *v = 0);
            for &r in rows.iter() {
                let b = data.codes[r][f] as usize;
                hist_sum[b] += y[r];
                hist_cnt[b] += 1;
            }
            if hist_cnt[..nb].iter().filter(|&&c| c > 0).count() < 2 {
                continue;
            }
            evaluated += 1;
            let (mut ls, mut lc) = (0.0, 0usize);
            for b in 0..nb - 1 {
                ls += hist_sum[b];
                lc += hist_cnt[b];
                let rc = n - lc;
                if lc < params.min_leaf || rc < params.min_leaf {
                    continue;
                }
                let rs = sum - ls;
                let gain = ls * ls / lc as f64 + rs * rs / rc as f64 - parent_score;
                if gain > 1e-12 * (1.0 + parent_score.abs()) && best.map_or(true, |(g, _, _)| gain > g) {
                    best = Some((gain, f, b));
                }
            }
        }
        let Some((_, f, b)) = best else {
            return id;
        };

        // Partition rows: bin ≤ b to the left.
        let mut split = 0;
        for i in 0..n {
            if data.codes[rows[i]][f] as usize <= b {
                rows.swap(i, split);
                split += 1;
            }
        }
        let (left_rows, right_rows) = rows.split_at_mut(split);
        let left = self.grow(data, y, left_rows, depth + 1, params, rng);
        let right = self.grow(data, y, right_rows, depth + 1, params, rng);
        self.nodes[id as usize] =
            Node::Split { feature: f as u8, threshold: data.edges[f][b], left, right };
        id
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { n_trees: 50, max_depth: 8, min_leaf: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    trees: Vec<RegressionTree>,
}

impl RandomForest {
    /// Bagged trees with √d feature subsampling, fitted on `subset` rows.
    pub fn fit(data: &BinnedFeatures, y: &[f64], subset: &[usize], params: &ForestParams, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tp = TreeParams {
            max_depth: params.max_depth,
            min_leaf: params.min_leaf,
            max_features: ((N_FEATURES as f64).sqrt().round() as usize).max(1),
        };
        let n = subset.len();
        let trees = (0..params.n_trees)
            .map(|_| {
                let mut rows: Vec<usize> = (0..n).map(|_| subset[rng.gen_range(0..n)]).collect();
                RegressionTree::fit(data, y, &mut rows, &tp, &mut rng)
            })
            .collect();
        Self { trees }
    }

    pub fn predict(&self, x: &[f64; N_FEATURES]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostingParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
}

impl Default for BoostingParams {
    fn default() -> Self {
        Self { n_trees: 100, max_depth: 3, learning_rate: 0.1, min_leaf: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientBoosting {
    base: f64,
    learning_rate: f64,
    trees: Vec<RegressionTree>,
}

impl GradientBoosting {
    /// Squared-loss boosting: each tree fits the residual of the current sum.
    pub fn fit(data: &BinnedFeatures, y: &[f64], subset: &[usize], params: &BoostingParams, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tp = TreeParams { max_depth: params.max_depth, min_leaf: params.min_leaf, max_features: N_FEATURES };
        let base = subset.iter().map(|&r| y[r]).sum::<f64>() / subset.len() as f64;
        let mut fitted = vec![base; y.len()];
        let mut resid = vec![0.0; y.len()];
        let mut trees = Vec::with_capacity(params.n_trees);
        let mut rows = subset.to_vec();
        for _ in 0..params.n_trees {
            for &r in subset {
                resid[r] = y[r] - fitted[r];
            }
            let tree = RegressionTree::fit(data, &resid, &mut rows, &tp, &mut rng);
            for &r in subset {
                fitted[r] += params.learning_rate * tree.predict_binned(data, r);
            }
            trees.push(tree);
        }
        Self { base, learning_rate: params.learning_rate, trees }
    }

    pub fn predict(&self, x: &[f64; N_FEATURES]) -> f64 {
        self.base + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }
}

impl RegressionTree {
    /// Prediction for a training row using its bin codes; agrees with
    /// [`RegressionTree::predict`] because thresholds are bin edges.
    fn predict_binned(&self, data: &BinnedFeatures, r: usize) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split { feature, threshold, left, right } => {
                    let f = feature as usize;
                    let edge = data.edges[f][data.codes[r][f] as usize..].first().copied();
                    let le = edge.map_or(false, |e| e <= threshold);
                    i = if le { left as usize } else { right as usize };
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> (Vec<[f64; N_FEATURES]>, Vec<f64>) {
        let rows: Vec<[f64; N_FEATURES]> = (0..n)
            .map(|i| {
                let mut r = [0.0; N_FEATURES];
                r[0] = (i % 17) as f64;
                r[5] = (i % 5) as f64 * 0.3;
                r[6] = (i as f64 * 0.37).sin();
                r
            })
            .collect();
        let y = rows.iter().map(|r| if r[0] > 8.0 { 2.0 } else { 0.5 } + r[5]).collect();
        (rows, y)
    }

    #[test]
    fn constant_target_is_reproduced() {
        let (rows, _) = toy(300);
        let y = vec![0.5; rows.len()];
        let data = BinnedFeatures::new(&rows);
        let all: Vec<usize> = (0..rows.len()).collect();
        let rf = RandomForest::fit(&data, &y, &all, &ForestParams::default(), 1);
        let gb = GradientBoosting::fit(&data, &y, &all, &BoostingParams::default(), 1);
        for r in &rows {
            assert_eq!(rf.predict(r), 0.5);
            assert!((gb.predict(r) - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn binned_and_raw_prediction_agree() {
        let (rows, y) = toy(500);
        let data = BinnedFeatures::new(&rows);
        let mut idx: Vec<usize> = (0..rows.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tp = TreeParams { max_depth: 6, min_leaf: 3, max_features: N_FEATURES };
        let tree = RegressionTree::fit(&data, &y, &mut idx, &tp, &mut rng);
        for (r, row) in rows.iter().enumerate() {
            assert_eq!(tree.predict(row), tree.predict_binned(&data, r));
        }
    }

    #[test]
    fn learns_step_function() {
        let (rows, y) = toy(600);
        let data = BinnedFeatures::new(&rows);
        let all: Vec<usize> = (0..rows.len()).collect();
        let gb = GradientBoosting::fit(&data, &y, &all, &BoostingParams::default(), 3);
        let rf = RandomForest::fit(&data, &y, &all, &ForestParams::default(), 3);
        let mae = |f: &dyn Fn(&[f64; N_FEATURES]) -> f64| {
            rows.iter().zip(&y).map(|(r, t)| (f(r) - t).abs()).sum::<f64>() / rows.len() as f64
        };
        assert!(mae(&|r| gb.predict(r)) < 0.05);
        assert!(mae(&|r| rf.predict(r)) < 0.15);
    }

    #[test]
    fn forest_is_deterministic_per_seed() {
        let (rows, y) = toy(400);
        let data = BinnedFeatures::new(&rows);
        let all: Vec<usize> = (0..rows.len()).collect();
        let a = RandomForest::fit(&data, &y, &all, &ForestParams::default(), 9);
        let b = RandomForest::fit(&data, &y, &all, &ForestParams::default(), 9);
        assert_eq!(a, b);
    }
}
