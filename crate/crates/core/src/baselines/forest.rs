//! Bagged regression trees.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::BaselineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// `None` grows trees until leaves are pure or `min_leaf` stops them.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    pub bootstrap: bool,
    /// Features tried per split; `None` means `ceil(sqrt(d))`.
    pub max_features: Option<usize>,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self { n_trees: 100, max_depth: None, min_leaf: 1, bootstrap: true, max_features: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf { value: f64 },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    trees: Vec<Tree>,
    n_features: usize,
}

impl RandomForest {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }
}

struct Builder<'a, R: Rng> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    config: &'a ForestConfig,
    n_try: usize,
    rng: &'a mut R,
    nodes: Vec<Node>,
}

fn mean_of(y: &[f64], idx: &[usize]) -> f64 {
    idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64
}

impl<R: Rng> Builder<'_, R> {
    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let slot = self.nodes.len();
        self.nodes.push(Node::Leaf { value: mean_of(self.y, &idx) });
        let depth_ok = self.config.max_depth.is_none_or(|d| depth < d);
        let first = self.y[idx[0]];
        let pure = idx.iter().all(|&i| self.y[i] == first);
        if !depth_ok || pure || idx.len() < 2 * self.config.min_leaf {
            return slot;
        }
        if let Some((feature, threshold)) = self.best_split(&idx) {
            let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.x[i][feature] <= threshold);
            let left = self.grow(l, depth + 1);
            let right = self.grow(r, depth + 1);
            self.nodes[slot] = Node::Split { feature, threshold, left, right };
        }
        slot
    }

    /// Best squared-error split over a random feature subset; the remaining
    /// features are tried only when the subset admits no valid split.
    fn best_split(&mut self, idx: &[usize]) -> Option<(usize, f64)> {
        let d = self.x[0].len();
        let mut features: Vec<usize> = (0..d).collect();
        features.shuffle(self.rng);
        let mut best: Option<(f64, usize, f64)> = None;
        for (k, &f) in features.iter().enumerate() {
            if k >= self.n_try && best.is_some() {
                break;
            }
            let mut pairs: Vec<(f64, f64)> = idx.iter().map(|&i| (self.x[i][f], self.y[i])).collect();
            pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
            let n = pairs.len();
            let total: f64 = pairs.iter().map(|p| p.1).sum();
            let total_sq: f64 = pairs.iter().map(|p| p.1 * p.1).sum();
            let (mut ls, mut lsq) = (0.0, 0.0);
            for s in 1..n {
                ls += pairs[s - 1].1;
                lsq += pairs[s - 1].1 * pairs[s - 1].1;
                if pairs[s].0 == pairs[s - 1].0 || s < self.config.min_leaf || n - s < self.config.min_leaf {
                    continue;
                }
                let (nl, nr) = (s as f64, (n - s) as f64);
                let rs = total - ls;
                let rsq = total_sq - lsq;
                let sse = (lsq - ls * ls / nl) + (rsq - rs * rs / nr);
                if best.is_none_or(|b| sse < b.0) {
                    best = Some((sse, f, 0.5 * (pairs[s - 1].0 + pairs[s].0)));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}

pub fn random_forest_fit<R: Rng>(
    x: &[Vec<f64>],
    y: &[f64],
    config: &ForestConfig,
    rng: &mut R,
) -> Result<RandomForest, BaselineError> {
    if x.is_empty() || y.is_empty() {
        return Err(BaselineError::NoTrainingData);
    }
    if x.len() != y.len() {
        return Err(BaselineError::Contract(format!("{} inputs but {} targets", x.len(), y.len())));
    }
    let d = x[0].len();
    if x.iter().any(|row| row.len() != d) {
        return Err(BaselineError::Contract("ragged input rows".into()));
    }
    if config.n_trees == 0 || config.min_leaf == 0 {
        return Err(BaselineError::Contract("n_trees and min_leaf must be >= 1".into()));
    }
    let n_try = config.max_features.unwrap_or_else(|| (d as f64).sqrt().ceil() as usize).clamp(1, d.max(1));
    let n = x.len();
    let mut trees = Vec::with_capacity(config.n_trees);
    for _ in 0..config.n_trees {
        let idx: Vec<usize> = if config.bootstrap {
            (0..n).map(|_| rng.random_range(0..n)).collect()
        } else {
            (0..n).collect()
        };
        let mut builder = Builder { x, y, config, n_try, rng: &mut *rng, nodes: Vec::new() };
        builder.grow(idx, 0);
        trees.push(Tree { nodes: builder.nodes });
    }
    Ok(RandomForest { trees, n_features: d })
}

pub fn random_forest_predict(forest: &RandomForest, x: &[f64]) -> Result<f64, BaselineError> {
    if x.len() != forest.n_features {
        return Err(BaselineError::Contract(format!("input has {} features, forest expects {}", x.len(), forest.n_features)));
    }
    Ok(forest.trees.iter().map(|t| t.predict(x)).sum::<f64>() / forest.trees.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_point_is_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = random_forest_fit(&[vec![0.3, 0.1]], &[0.7], &ForestConfig::default(), &mut rng).unwrap();
        assert!((random_forest_predict(&f, &[-1.0, 1.0]).unwrap() - 0.7).abs() < 1e-12);
        assert!((random_forest_predict(&f, &[0.3, 0.1]).unwrap() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn zero_points_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            random_forest_fit(&[], &[], &ForestConfig::default(), &mut rng).unwrap_err(),
            BaselineError::NoTrainingData
        );
    }

    #[test]
    fn unpruned_single_tree_interpolates() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<Vec<f64>> = (0..40).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let y: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
        let config = ForestConfig { n_trees: 1, bootstrap: false, ..Default::default() };
        let f = random_forest_fit(&x, &y, &config, &mut rng).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            assert_eq!(random_forest_predict(&f, xi).unwrap(), *yi);
        }
    }

    #[test]
    fn identity_function_sanity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<Vec<f64>> = (0..100).map(|i| vec![-1.0 + 2.0 * i as f64 / 99.0]).collect();
        let y: Vec<f64> = x.iter().map(|r| r[0]).collect();
        let f = random_forest_fit(&x, &y, &ForestConfig::default(), &mut rng).unwrap();
        let test: Vec<f64> = (0..200).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mse = test.iter().map(|&t| (random_forest_predict(&f, &[t]).unwrap() - t).powi(2)).sum::<f64>() / 200.0;
        assert!(mse.sqrt() < 0.2, "rmse {}", mse.sqrt());
    }
}
