//! A small random-forest classifier, built in-repo so that attack results
//! are reproducible bit-for-bit from a seed.
//!
//! Defaults: 100 trees, Gini impurity splits, √d candidate features per
//! split, unlimited depth, bootstrap resampling of rows. Ties — in majority
//! votes and in class counts at leaves — always break toward the lowest
//! class index, making every prediction a pure function of (data, seed).
//! Non-finite feature values sort after all finite ones and always follow
//! the right branch of a split, so tables with absent cells are handled
//! without imputation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Forest hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForestParams {
    /// Number of trees.
    pub n_trees: usize,
    /// Candidate features per split; `None` → ⌈√d⌉.
    pub mtry: Option<usize>,
    /// Maximum tree depth; `None` → unlimited.
    pub max_depth: Option<usize>,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            mtry: None,
            max_depth: None,
        }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf(u32),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, row: impl Fn(usize) -> f64) -> u32 {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf(class) => return *class,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    // NaN comparisons are false → absent values go right.
                    at = if row(*feature) <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }
}

/// A trained forest.
#[derive(Debug, Clone)]
pub struct Forest {
    trees: Vec<Tree>,
    n_classes: u32,
    n_features: usize,
}

/// Majority class among `counts`, lowest index on ties.
fn argmax_class(counts: &[usize]) -> u32 {
    let mut best = 0usize;
    for (k, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = k;
        }
    }
    best as u32
}

impl Forest {
    /// Train on column-major features (`features[f][r]`) and labels in
    /// `0..n_classes`.
    pub fn train(
        features: &[Vec<f64>],
        labels: &[u32],
        n_classes: u32,
        params: &ForestParams,
        rng: &StreamRng,
    ) -> Result<Self> {
        let d = features.len();
        let n = labels.len();
        if d == 0 || n == 0 {
            return Err(Error::SmallSample(
                "forest training needs at least one feature and one row".into(),
            ));
        }
        if features.iter().any(|c| c.len() != n) {
            return Err(Error::SchemaMismatch(
                "feature columns and labels differ in length".into(),
            ));
        }
        if n_classes == 0 || labels.iter().any(|&l| l >= n_classes) {
            return Err(Error::SpecInvalid("label outside 0..n_classes".into()));
        }
        if params.n_trees == 0 {
            return Err(Error::SpecInvalid("forest needs at least one tree".into()));
        }
        let mtry = params
            .mtry
            .unwrap_or_else(|| (d as f64).sqrt().ceil() as usize)
            .clamp(1, d);

        let trees: Vec<Tree> = (0..params.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut trng = rng.child_idx("tree", t as u64);
                grow_tree(
                    features,
                    labels,
                    n_classes as usize,
                    mtry,
                    params.max_depth,
                    &mut trng,
                )
            })
            .collect();
        Ok(Forest {
            trees,
            n_classes,
            n_features: d,
        })
    }

    /// Number of label classes.
    pub fn n_classes(&self) -> u32 {
        self.n_classes
    }

    /// Predict one row given by a feature accessor.
    pub fn predict_row(&self, row: impl Fn(usize) -> f64 + Copy) -> u32 {
        let mut votes = vec![0usize; self.n_classes as usize];
        for tree in &self.trees {
            votes[tree.predict(row) as usize] += 1;
        }
        argmax_class(&votes)
    }

    /// Predict every row of a column-major feature table.
    pub fn predict(&self, features: &[Vec<f64>]) -> Result<Vec<u32>> {
        if features.len() != self.n_features {
            return Err(Error::SchemaMismatch(format!(
                "forest expects {} features, got {}",
                self.n_features,
                features.len()
            )));
        }
        let n = features.first().map_or(0, |c| c.len());
        Ok((0..n)
            .map(|r| self.predict_row(|f| features[f][r]))
            .collect())
    }
}

/// Grow one tree on a bootstrap sample.
fn grow_tree(
    features: &[Vec<f64>],
    labels: &[u32],
    n_classes: usize,
    mtry: usize,
    max_depth: Option<usize>,
    rng: &mut StreamRng,
) -> Tree {
    use rand::Rng;
    let n = labels.len();
    let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    let mut tree = Tree { nodes: Vec::new() };
    build_node(&mut tree, features, labels, n_classes, mtry, max_depth, rows, 0, rng);
    tree
}

/// Recursively build the node for `rows`, appending to the arena and
/// returning its index.
#[allow(clippy::too_many_arguments)]
fn build_node(
    tree: &mut Tree,
    features: &[Vec<f64>],
    labels: &[u32],
    n_classes: usize,
    mtry: usize,
    max_depth: Option<usize>,
    rows: Vec<usize>,
    depth: usize,
    rng: &mut StreamRng,
) -> usize {
    let mut counts = vec![0usize; n_classes];
    for &r in &rows {
        counts[labels[r] as usize] += 1;
    }
    let majority = argmax_class(&counts);
    let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
    let depth_capped = max_depth.is_some_and(|cap| depth >= cap);
    if pure || depth_capped || rows.len() < 2 {
        let at = tree.nodes.len();
        tree.nodes.push(Node::Leaf(majority));
        return at;
    }

    match best_split(features, labels, n_classes, mtry, &rows, &counts, rng) {
        None => {
            let at = tree.nodes.len();
            tree.nodes.push(Node::Leaf(majority));
            at
        }
        Some((feature, threshold)) => {
            let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
                .into_iter()
                .partition(|&r| features[feature][r] <= threshold);
            debug_assert!(!left_rows.is_empty() && !right_rows.is_empty());
            let at = tree.nodes.len();
            tree.nodes.push(Node::Leaf(0)); // placeholder, patched below
            let left = build_node(
                tree, features, labels, n_classes, mtry, max_depth, left_rows,
                depth + 1, rng,
            );
            let right = build_node(
                tree, features, labels, n_classes, mtry, max_depth, right_rows,
                depth + 1, rng,
            );
            tree.nodes[at] = Node::Split {
                feature,
                threshold,
                left,
                right,
            };
            at
        }
    }
}

/// Best (feature, threshold) among `mtry` sampled candidate features by
/// Gini impurity decrease; `None` when no candidate separates the rows.
fn best_split(
    features: &[Vec<f64>],
    labels: &[u32],
    n_classes: usize,
    mtry: usize,
    rows: &[usize],
    parent_counts: &[usize],
    rng: &mut StreamRng,
) -> Option<(usize, f64)> {
    use rand::seq::SliceRandom;
    let d = features.len();
    let n = rows.len() as f64;
    let parent_gini = gini(parent_counts, rows.len());

    let mut candidates: Vec<usize> = (0..d).collect();
    candidates.shuffle(&mut **rng);
    candidates.truncate(mtry);

    let mut best: Option<(f64, usize, f64)> = None; // (decrease, feature, threshold)
    let mut sorted: Vec<usize> = Vec::with_capacity(rows.len());
    for &f in &candidates {
        sorted.clear();
        sorted.extend_from_slice(rows);
        sorted.sort_by(|&a, &b| features[f][a].total_cmp(&features[f][b]));

        let mut left_counts = vec![0usize; n_classes];
        let mut n_left = 0usize;
        for w in 0..sorted.len() - 1 {
            let r = sorted[w];
            left_counts[labels[r] as usize] += 1;
            n_left += 1;
            let lo = features[f][r];
            let hi = features[f][sorted[w + 1]];
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                continue; // no boundary between equal or non-finite values
            }
            let n_right = sorted.len() - n_left;
            let left_gini = gini(&left_counts, n_left);
            let right_counts: Vec<usize> = parent_counts
                .iter()
                .zip(&left_counts)
                .map(|(&p, &l)| p - l)
                .collect();
            let right_gini = gini(&right_counts, n_right);
            let decrease = parent_gini
                - (n_left as f64 / n) * left_gini
                - (n_right as f64 / n) * right_gini;
            if decrease > 1e-12 && best.map_or(true, |(b, ..)| decrease > b) {
                best = Some((decrease, f, 0.5 * (lo + hi)));
            }
        }
    }
    best.map(|(_, f, thr)| (f, thr))
}

/// Gini impurity of a class-count vector over `n` rows.
fn gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts
        .iter()
        .map(|&c| {
            let p = c as f64 / n;
            p * p
        })
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn perfectly_informative_feature_reaches_full_training_accuracy() {
        // Feature 0 equals the label.
        let n = 200;
        let labels: Vec<u32> = (0..n).map(|i| (i % 3) as u32).collect();
        let f0: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
        let mut rng = StreamRng::derived(1, "forest/info");
        let noise: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let features = vec![f0, noise];
        let forest = Forest::train(
            &features,
            &labels,
            3,
            &ForestParams::default(),
            &StreamRng::derived(2, "forest"),
        )
        .unwrap();
        let pred = forest.predict(&features).unwrap();
        let correct = pred.iter().zip(&labels).filter(|(a, b)| a == b).count();
        assert_eq!(correct, n, "training accuracy below 1 with an oracle feature");
    }

    #[test]
    fn uninformative_coarse_features_score_near_chance_out_of_sample() {
        // Two balanced classes, one 4-valued feature independent of labels;
        // fresh rows are scored, so memorization cannot help.
        let mut rng = StreamRng::derived(3, "forest/noise");
        let make = |rng: &mut StreamRng, n: usize| -> (Vec<Vec<f64>>, Vec<u32>) {
            let labels: Vec<u32> = (0..n).map(|_| rng.random_range(0..2u32)).collect();
            let f: Vec<f64> = (0..n).map(|_| rng.random_range(0..4) as f64).collect();
            (vec![f], labels)
        };
        let (train_x, train_y) = make(&mut rng, 400);
        let (test_x, test_y) = make(&mut rng, 2_000);
        let forest = Forest::train(
            &train_x,
            &train_y,
            2,
            &ForestParams::default(),
            &StreamRng::derived(4, "forest"),
        )
        .unwrap();
        let pred = forest.predict(&test_x).unwrap();
        let acc = pred.iter().zip(&test_y).filter(|(a, b)| a == b).count() as f64
            / test_y.len() as f64;
        assert!(
            (acc - 0.5).abs() < 0.05,
            "out-of-sample accuracy {acc} not near chance"
        );
    }

    #[test]
    fn learns_an_axis_aligned_boundary() {
        let mut rng = StreamRng::derived(5, "forest/axis");
        let n = 500;
        let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let labels: Vec<u32> = x.iter().map(|&v| if v > 0.6 { 1 } else { 0 }).collect();
        let forest = Forest::train(
            &[x, y],
            &labels,
            2,
            &ForestParams::default(),
            &StreamRng::derived(6, "forest"),
        )
        .unwrap();
        // Probe points away from the boundary classify correctly.
        assert_eq!(forest.predict_row(|f| [0.2, 0.5][f]), 0);
        assert_eq!(forest.predict_row(|f| [0.9, 0.5][f]), 1);
    }

    #[test]
    fn deterministic_given_seed() {
        let mut rng = StreamRng::derived(7, "forest/data");
        let n = 300;
        let features: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..n).map(|_| rng.random::<f64>()).collect())
            .collect();
        let labels: Vec<u32> = (0..n).map(|_| rng.random_range(0..3u32)).collect();
        let a = Forest::train(&features, &labels, 3, &ForestParams::default(),
            &StreamRng::derived(8, "forest")).unwrap();
        let b = Forest::train(&features, &labels, 3, &ForestParams::default(),
            &StreamRng::derived(8, "forest")).unwrap();
        assert_eq!(a.predict(&features).unwrap(), b.predict(&features).unwrap());
    }

    #[test]
    fn vote_ties_break_to_lowest_class() {
        assert_eq!(argmax_class(&[5, 5, 3]), 0);
        assert_eq!(argmax_class(&[2, 7, 7]), 1);
        assert_eq!(argmax_class(&[0, 0, 0]), 0);
    }

    #[test]
    fn absent_values_route_right_and_never_panic() {
        let features = vec![
            vec![0.1, 0.2, 0.8, 0.9, f64::NAN, f64::NAN],
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        ];
        let labels = vec![0, 0, 1, 1, 1, 0];
        let forest = Forest::train(
            &features,
            &labels,
            2,
            &ForestParams {
                n_trees: 25,
                ..ForestParams::default()
            },
            &StreamRng::derived(9, "forest"),
        )
        .unwrap();
        // Prediction with a NaN feature value is defined (routes right).
        let _ = forest.predict_row(|f| [f64::NAN, 3.0][f]);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        assert!(Forest::train(
            &[],
            &[],
            2,
            &ForestParams::default(),
            &StreamRng::derived(10, "f")
        )
        .is_err());
        assert!(Forest::train(
            &[vec![1.0, 2.0]],
            &[0, 5],
            2,
            &ForestParams::default(),
            &StreamRng::derived(11, "f")
        )
        .is_err());
        let f = Forest::train(
            &[vec![1.0, 2.0]],
            &[0, 1],
            2,
            &ForestParams::default(),
            &StreamRng::derived(12, "f"),
        )
        .unwrap();
        assert!(f.predict(&[vec![1.0], vec![2.0]]).is_err(), "feature count");
    }
}
