//! From-scratch random forest classifier with soft-voting probability
//! output, plus grid search with stratified k-fold cross-validation.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::classification_report;
use crate::windowing::LabeledWindow;
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Gini,
    Entropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxFeatures {
    Sqrt,
    Log2,
    All,
    Fraction(f64),
}

impl MaxFeatures {
    fn count(&self, n_features: usize) -> usize {
        let m = match self {
            MaxFeatures::Sqrt => (n_features as f64).sqrt().round() as usize,
            MaxFeatures::Log2 => (n_features as f64).log2().round() as usize,
            MaxFeatures::All => n_features,
            MaxFeatures::Fraction(f) => (n_features as f64 * f).round() as usize,
        };
        m.clamp(1, n_features)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub n_trees: usize,
    pub criterion: Criterion,
    pub max_features: MaxFeatures,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            criterion: Criterion::Gini,
            max_features: MaxFeatures::Sqrt,
            max_depth: None,
            min_samples_split: 2,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Argument("n_trees must be >= 1".into()));
        }
        if self.min_samples_split < 2 {
            return Err(Error::Argument("min_samples_split must be >= 2".into()));
        }
        if let MaxFeatures::Fraction(f) = self.max_features {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Argument(format!(
                    "max_features fraction must be in (0, 1], got {f}"
                )));
            }
        }
        Ok(())
    }

    /// The compact standard search grid: trees {100, 200, 400} ×
    /// criterion {gini, entropy} × max_features {sqrt, log2}.
    pub fn default_grid() -> Vec<TrainConfig> {
        let mut grid = Vec::new();
        for &n_trees in &[100usize, 200, 400] {
            for &criterion in &[Criterion::Gini, Criterion::Entropy] {
                for &max_features in &[MaxFeatures::Sqrt, MaxFeatures::Log2] {
                    grid.push(TrainConfig {
                        n_trees,
                        criterion,
                        max_features,
                        ..TrainConfig::default()
                    });
                }
            }
        }
        grid
    }
}

/// Column-major training table with integer class labels.
#[derive(Debug, Clone)]
pub struct Dataset<F> {
    pub columns: Vec<Vec<F>>,
    pub labels: Vec<usize>,
    pub classes: Vec<String>,
    pub feature_names: Vec<String>,
}

impl<F: Real> Dataset<F> {
    pub fn new(
        columns: Vec<Vec<F>>,
        labels: Vec<usize>,
        classes: Vec<String>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let n = labels.len();
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::Argument("ragged feature columns".into()));
        }
        if columns.len() != feature_names.len() {
            return Err(Error::Argument("feature name count mismatch".into()));
        }
        if labels.iter().any(|&l| l >= classes.len()) {
            return Err(Error::Argument("label index out of class range".into()));
        }
        Ok(Self {
            columns,
            labels,
            classes,
            feature_names,
        })
    }

    /// Row-major construction helper.
    pub fn from_rows(
        rows: &[Vec<F>],
        labels: Vec<usize>,
        classes: Vec<String>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let n_features = feature_names.len();
        let mut columns = vec![Vec::with_capacity(rows.len()); n_features];
        for row in rows {
            if row.len() != n_features {
                return Err(Error::Argument("ragged feature rows".into()));
            }
            for (c, &v) in columns.iter_mut().zip(row.iter()) {
                c.push(v);
            }
        }
        Self::new(columns, labels, classes, feature_names)
    }

    /// Builds the table from labeled windows. Classes appear in the fixed
    /// window-label order, restricted to labels present.
    pub fn from_windows(rows: &[LabeledWindow<F>]) -> Result<Self> {
        use crate::windowing::WindowLabel;
        if rows.is_empty() {
            return Err(Error::Training("empty window table".into()));
        }
        let present: Vec<WindowLabel> = WindowLabel::ALL
            .iter()
            .copied()
            .filter(|l| rows.iter().any(|r| r.label == *l))
            .collect();
        let classes: Vec<String> = present.iter().map(|l| l.name().to_string()).collect();
        let labels: Vec<usize> = rows
            .iter()
            .map(|r| present.iter().position(|l| *l == r.label).unwrap())
            .collect();
        let feature_names = rows[0].features.names.as_ref().clone();
        let n_features = feature_names.len();
        let mut columns = vec![Vec::with_capacity(rows.len()); n_features];
        for r in rows {
            for (c, &v) in columns.iter_mut().zip(r.features.values.iter()) {
                c.push(v);
            }
        }
        Self::new(columns, labels, classes, feature_names)
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    /// Restriction to a sample subset, preserving order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            columns: self
                .columns
                .iter()
                .map(|c| indices.iter().map(|&i| c[i]).collect())
                .collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes.clone(),
            feature_names: self.feature_names.clone(),
        }
    }

    fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.n_samples() as u64).to_le_bytes());
        hasher.update((self.n_features() as u64).to_le_bytes());
        for &l in &self.labels {
            hasher.update((l as u64).to_le_bytes());
        }
        for col in &self.columns {
            for &v in col {
                hasher.update(v.to_f64_lossy().to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node<F> {
    Split {
        feature: usize,
        threshold: F,
        left: usize,
        right: usize,
    },
    Leaf {
        dist: Vec<F>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree<F> {
    pub nodes: Vec<Node<F>>,
}

impl<F: Real> DecisionTree<F> {
    pub fn leaf_dist(&self, features: &[F]) -> &[F] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if features[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
                Node::Leaf { dist } => return dist,
            }
        }
    }
}

fn impurity(counts: &[usize], total: usize, criterion: Criterion) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    match criterion {
        Criterion::Gini => {
            let sum_sq: f64 = counts.iter().map(|&c| (c as f64 / n).powi(2)).sum();
            1.0 - sum_sq
        }
        Criterion::Entropy => counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.log2()
            })
            .sum(),
    }
}

struct TreeBuilder<'a, F> {
    data: &'a Dataset<F>,
    cfg: &'a TrainConfig,
    max_features: usize,
    nodes: Vec<Node<F>>,
}

impl<'a, F: Real> TreeBuilder<'a, F> {
    fn grow(&mut self, indices: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let n_classes = self.data.n_classes();
        let mut counts = vec![0usize; n_classes];
        for &i in &indices {
            counts[self.data.labels[i]] += 1;
        }
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let depth_capped = self.cfg.max_depth.is_some_and(|d| depth >= d);
        if pure || depth_capped || indices.len() < self.cfg.min_samples_split {
            return self.push_leaf(&counts, indices.len());
        }

        // candidate features: a seeded draw without replacement
        let mut feature_pool: Vec<usize> = (0..self.data.n_features()).collect();
        feature_pool.shuffle(rng);
        feature_pool.truncate(self.max_features);

        let parent_n = indices.len();
        let mut best: Option<(f64, usize, F)> = None;
        let mut scratch: Vec<(F, usize)> = Vec::with_capacity(parent_n);
        for &f in &feature_pool {
            let col = &self.data.columns[f];
            scratch.clear();
            scratch.extend(indices.iter().map(|&i| (col[i], self.data.labels[i])));
            scratch.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("non-finite feature"));
            let mut left_counts = vec![0usize; n_classes];
            let mut right_counts = counts.clone();
            for k in 0..parent_n - 1 {
                let (v, label) = scratch[k];
                left_counts[label] += 1;
                right_counts[label] -= 1;
                let next_v = scratch[k + 1].0;
                if next_v <= v {
                    continue;
                }
                let threshold = (v + next_v) / F::from_f64_lossy(2.0);
                let nl = k + 1;
                let nr = parent_n - nl;
                let score = nl as f64 * impurity(&left_counts, nl, self.cfg.criterion)
                    + nr as f64 * impurity(&right_counts, nr, self.cfg.criterion);
                if best.as_ref().is_none_or(|(s, _, _)| score < *s) {
                    best = Some((score, f, threshold));
                }
            }
        }

        let Some((_, feature, threshold)) = best else {
            // all sampled features constant on this node
            return self.push_leaf(&counts, indices.len());
        };
        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
            .into_iter()
            .partition(|&i| self.data.columns[feature][i] <= threshold);
        let node_slot = self.nodes.len();
        self.nodes.push(Node::Leaf { dist: Vec::new() }); // placeholder
        let left = self.grow(left_idx, depth + 1, rng);
        let right = self.grow(right_idx, depth + 1, rng);
        self.nodes[node_slot] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        node_slot
    }

    fn push_leaf(&mut self, counts: &[usize], total: usize) -> usize {
        let n = F::from_f64_lossy(total.max(1) as f64);
        let dist = counts
            .iter()
            .map(|&c| F::from_f64_lossy(c as f64) / n)
            .collect();
        self.nodes.push(Node::Leaf { dist });
        self.nodes.len() - 1
    }
}

fn tree_rng(seed: u64, tree_index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (tree_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Serialize", deserialize = "F: DeserializeOwned"))]
pub struct ForestModel<F> {
    pub version: u32,
    pub classes: Vec<String>,
    pub feature_names: Vec<String>,
    pub config: TrainConfig,
    pub dataset_fingerprint: String,
    pub single_class: bool,
    pub oob_accuracy: Option<f64>,
    pub trees: Vec<DecisionTree<F>>,
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Grows `n_trees` CART trees, each on a bootstrap resample when enabled,
/// with a per-tree generator derived from `(seed, tree index)` so the
/// result is identical regardless of worker count.
pub fn train_forest<F: Real>(data: &Dataset<F>, cfg: &TrainConfig) -> Result<ForestModel<F>> {
    cfg.validate()?;
    if data.n_samples() == 0 {
        return Err(Error::Training("empty dataset".into()));
    }
    let single_class = data
        .labels
        .iter()
        .collect::<std::collections::HashSet<_>>()
        .len()
        <= 1;
    let max_features = cfg.max_features.count(data.n_features());
    let n = data.n_samples();

    let results: Vec<(DecisionTree<F>, Vec<bool>)> = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(cfg.seed, t);
            let (indices, in_bag) = if cfg.bootstrap {
                let mut in_bag = vec![false; n];
                let indices: Vec<usize> = (0..n)
                    .map(|_| {
                        let i = rng.gen_range(0..n);
                        in_bag[i] = true;
                        i
                    })
                    .collect();
                (indices, in_bag)
            } else {
                ((0..n).collect(), vec![true; n])
            };
            let mut builder = TreeBuilder {
                data,
                cfg,
                max_features,
                nodes: Vec::new(),
            };
            let root = builder.grow(indices, 0, &mut rng);
            debug_assert_eq!(root, 0);
            (DecisionTree { nodes: builder.nodes }, in_bag)
        })
        .collect();

    let oob_accuracy = if cfg.bootstrap {
        let mut correct = 0usize;
        let mut counted = 0usize;
        let mut row = vec![F::zero(); data.n_features()];
        for i in 0..n {
            let mut acc = vec![0.0f64; data.n_classes()];
            let mut votes = 0usize;
            for (col, slot) in data.columns.iter().zip(row.iter_mut()) {
                *slot = col[i];
            }
            for (tree, in_bag) in &results {
                if !in_bag[i] {
                    for (a, &d) in acc.iter_mut().zip(tree.leaf_dist(&row)) {
                        *a += d.to_f64_lossy();
                    }
                    votes += 1;
                }
            }
            if votes > 0 {
                let pred = acc
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
                    .unwrap()
                    .0;
                counted += 1;
                if pred == data.labels[i] {
                    correct += 1;
                }
            }
        }
        (counted > 0).then(|| correct as f64 / counted as f64)
    } else {
        None
    };

    Ok(ForestModel {
        version: MODEL_FORMAT_VERSION,
        classes: data.classes.clone(),
        feature_names: data.feature_names.clone(),
        config: cfg.clone(),
        dataset_fingerprint: data.fingerprint(),
        single_class,
        oob_accuracy,
        trees: results.into_iter().map(|(t, _)| t).collect(),
    })
}

impl<F: Real> ForestModel<F> {
    /// Mean of the per-tree leaf distributions; a valid distribution.
    pub fn predict_proba(&self, features: &[F]) -> Result<Vec<F>> {
        if features.len() != self.feature_names.len() {
            return Err(Error::Argument(format!(
                "feature vector length {} does not match model dimension {}",
                features.len(),
                self.feature_names.len()
            )));
        }
        let mut acc = vec![F::zero(); self.classes.len()];
        for tree in &self.trees {
            for (a, &d) in acc.iter_mut().zip(tree.leaf_dist(features)) {
                *a = *a + d;
            }
        }
        let n = F::from_f64_lossy(self.trees.len() as f64);
        for a in &mut acc {
            *a = *a / n;
        }
        Ok(acc)
    }

    /// Predicted class index (argmax, ties toward the earlier class) and
    /// its confidence.
    pub fn predict(&self, features: &[F]) -> Result<(usize, F)> {
        let dist = self.predict_proba(features)?;
        let mut best = 0;
        for (i, &p) in dist.iter().enumerate() {
            if p > dist[best] {
                best = i;
            }
        }
        Ok((best, dist[best]))
    }
}

/// Self-describing versioned JSON model file.
pub fn save_model<F: Real + Serialize>(model: &ForestModel<F>, path: &Path) -> Result<()> {
    let text = serde_json::to_string(model)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_model<F: Real + DeserializeOwned>(path: &Path) -> Result<ForestModel<F>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let model: ForestModel<F> =
        serde_json::from_str(&text).map_err(|e| Error::Model(format!("corrupt model file: {e}")))?;
    if model.version != MODEL_FORMAT_VERSION {
        return Err(Error::Model(format!(
            "model format version {} unsupported (expected {})",
            model.version, MODEL_FORMAT_VERSION
        )));
    }
    Ok(model)
}

/// Stratified k-fold assignment: per class, a seeded shuffle distributed
/// round-robin, so every fold holds a proportional share of each class.
pub fn stratified_folds(
    labels: &[usize],
    classes: &[String],
    k: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let mut fold_of = vec![0usize; labels.len()];
    for class in 0..classes.len() {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < k {
            return Err(Error::Stratification {
                class: classes[class].clone(),
                count: members.len(),
                folds: k,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (class as u64).wrapping_mul(0x517C_C1B7_2722_0A95));
        members.shuffle(&mut rng);
        for (pos, &i) in members.iter().enumerate() {
            fold_of[i] = pos % k;
        }
    }
    Ok(fold_of)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvCell {
    pub config_index: usize,
    pub fold: usize,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: usize,
    pub configs: Vec<TrainConfig>,
    pub cells: Vec<CvCell>,
    pub mean_macro_f1: Vec<f64>,
    pub selected: usize,
}

/// Evaluates every config on every stratified fold and selects the
/// highest mean macro-F1 (ties: fewer trees, then grid order).
pub fn grid_search_cv<F: Real>(
    data: &Dataset<F>,
    grid: &[TrainConfig],
    k: usize,
    seed: u64,
) -> Result<(TrainConfig, CvReport)> {
    if grid.is_empty() {
        return Err(Error::Argument("empty hyperparameter grid".into()));
    }
    if data.n_samples() < k {
        return Err(Error::Argument(format!(
            "dataset size {} smaller than fold count {k}",
            data.n_samples()
        )));
    }
    let fold_of = stratified_folds(&data.labels, &data.classes, k, seed)?;

    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|c| (0..k).map(move |f| (c, f)))
        .collect();
    let cells: Vec<CvCell> = jobs
        .par_iter()
        .map(|&(ci, fold)| {
            let train_idx: Vec<usize> =
                (0..data.n_samples()).filter(|&i| fold_of[i] != fold).collect();
            let val_idx: Vec<usize> =
                (0..data.n_samples()).filter(|&i| fold_of[i] == fold).collect();
            let train = data.subset(&train_idx);
            let model = train_forest(&train, &grid[ci])?;
            let mut truths = Vec::with_capacity(val_idx.len());
            let mut preds = Vec::with_capacity(val_idx.len());
            let mut row = vec![F::zero(); data.n_features()];
            for &i in &val_idx {
                for (col, slot) in data.columns.iter().zip(row.iter_mut()) {
                    *slot = col[i];
                }
                truths.push(data.labels[i]);
                preds.push(model.predict(&row)?.0);
            }
            let class_ids: Vec<usize> = (0..data.n_classes()).collect();
            let report = classification_report(&truths, &preds, &class_ids)
                .expect("equal-length label sequences");
            Ok(CvCell {
                config_index: ci,
                fold,
                macro_precision: report.macro_precision,
                macro_recall: report.macro_recall,
                macro_f1: report.macro_f1,
            })
        })
        .collect::<Result<_>>()?;

    let mut mean_macro_f1 = vec![0.0f64; grid.len()];
    for cell in &cells {
        mean_macro_f1[cell.config_index] += cell.macro_f1 / k as f64;
    }
    let mut selected = 0;
    for ci in 1..grid.len() {
        let better = mean_macro_f1[ci] > mean_macro_f1[selected]
            || (mean_macro_f1[ci] == mean_macro_f1[selected]
                && grid[ci].n_trees < grid[selected].n_trees);
        if better {
            selected = ci;
        }
    }
    let report = CvReport {
        folds: k,
        configs: grid.to_vec(),
        cells,
        mean_macro_f1,
        selected,
    };
    Ok((grid[selected].clone(), report))
}

/// Seeded two-Gaussian-blob benchmark used by the sanity tests.
pub fn gaussian_blobs(n_per_class: usize, seed: u64) -> Dataset<f64> {
    use rand_distr::{Distribution, Normal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (class, center) in [(0usize, (0.0, 0.0)), (1usize, (5.0, 5.0))] {
        for _ in 0..n_per_class {
            rows.push(vec![
                center.0 + normal.sample(&mut rng),
                center.1 + normal.sample(&mut rng),
            ]);
            labels.push(class);
        }
    }
    Dataset::from_rows(
        &rows,
        labels,
        vec!["a".into(), "b".into()],
        vec!["x".into(), "y".into()],
    )
    .unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn holdout_split(data: &Dataset<f64>, seed: u64) -> (Dataset<f64>, Dataset<f64>) {
        let folds = stratified_folds(&data.labels, &data.classes, 5, seed).unwrap();
        let train: Vec<usize> = (0..data.n_samples()).filter(|&i| folds[i] != 0).collect();
        let test: Vec<usize> = (0..data.n_samples()).filter(|&i| folds[i] == 0).collect();
        (data.subset(&train), data.subset(&test))
    }

    fn accuracy(model: &ForestModel<f64>, data: &Dataset<f64>) -> f64 {
        let mut correct = 0;
        let mut row = vec![0.0; data.n_features()];
        for i in 0..data.n_samples() {
            for (col, slot) in data.columns.iter().zip(row.iter_mut()) {
                *slot = col[i];
            }
            if model.predict(&row).unwrap().0 == data.labels[i] {
                correct += 1;
            }
        }
        correct as f64 / data.n_samples() as f64
    }

    #[test]
    fn single_class_predicts_that_class() {
        let rows = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]];
        let data = Dataset::from_rows(
            &rows,
            vec![0, 0, 0],
            vec!["only".into()],
            vec!["x".into(), "y".into()],
        )
        .unwrap();
        let model = train_forest(&data, &TrainConfig::default()).unwrap();
        assert!(model.single_class);
        let dist = model.predict_proba(&[0.0, 0.0]).unwrap();
        assert_eq!(dist, vec![1.0]);
    }

    #[test]
    fn blob_benchmark_heldout_accuracy() {
        let data = gaussian_blobs(200, 42);
        let (train, test) = holdout_split(&data, 1);
        let model = train_forest(&train, &TrainConfig::default()).unwrap();
        assert!(accuracy(&model, &test) >= 0.95);
    }

    #[test]
    fn deterministic_serialization() {
        let data = gaussian_blobs(50, 7);
        let cfg = TrainConfig {
            n_trees: 20,
            ..TrainConfig::default()
        };
        let a = serde_json::to_string(&train_forest(&data, &cfg).unwrap()).unwrap();
        let b = serde_json::to_string(&train_forest(&data, &cfg).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_cart_fits_training_set_exactly() {
        let data = gaussian_blobs(100, 3);
        let cfg = TrainConfig {
            n_trees: 1,
            bootstrap: false,
            max_features: MaxFeatures::All,
            ..TrainConfig::default()
        };
        let model = train_forest(&data, &cfg).unwrap();
        assert_eq!(accuracy(&model, &data), 1.0);
    }

    #[test]
    fn duplicated_dataset_leaves_cart_unchanged() {
        let data = gaussian_blobs(40, 9);
        let doubled = {
            let idx: Vec<usize> = (0..data.n_samples()).chain(0..data.n_samples()).collect();
            data.subset(&idx)
        };
        let cfg = TrainConfig {
            n_trees: 1,
            bootstrap: false,
            max_features: MaxFeatures::All,
            ..TrainConfig::default()
        };
        let a = train_forest(&data, &cfg).unwrap();
        let b = train_forest(&doubled, &cfg).unwrap();
        let split_of = |m: &ForestModel<f64>| match &m.trees[0].nodes[0] {
            Node::Split {
                feature, threshold, ..
            } => (*feature, *threshold),
            _ => panic!("expected a split at the root"),
        };
        assert_eq!(split_of(&a), split_of(&b));
    }

    #[test]
    fn monotone_feature_transform_keeps_cart_predictions() {
        let data = gaussian_blobs(60, 11);
        // strictly monotone map on feature 0 at train and predict time
        let mut transformed = data.clone();
        transformed.columns[0] = data.columns[0].iter().map(|&v| (v * 0.3).exp()).collect();
        let cfg = TrainConfig {
            n_trees: 1,
            bootstrap: false,
            max_features: MaxFeatures::All,
            ..TrainConfig::default()
        };
        let a = train_forest(&data, &cfg).unwrap();
        let b = train_forest(&transformed, &cfg).unwrap();
        for i in 0..data.n_samples() {
            let row_a = vec![data.columns[0][i], data.columns[1][i]];
            let row_b = vec![transformed.columns[0][i], data.columns[1][i]];
            assert_eq!(
                a.predict(&row_a).unwrap().0,
                b.predict(&row_b).unwrap().0
            );
        }
    }

    #[test]
    fn predict_proba_is_distribution() {
        let data = gaussian_blobs(80, 21);
        let model = train_forest(&data, &TrainConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let row = vec![rng.gen_range(-3.0..8.0), rng.gen_range(-3.0..8.0)];
            let dist = model.predict_proba(&row).unwrap();
            assert!(dist.iter().all(|&p| p >= 0.0));
            let s: f64 = dist.iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn averaging_two_pure_trees() {
        let tree = |class: usize| DecisionTree {
            nodes: vec![Node::Leaf {
                dist: {
                    let mut d = vec![0.0; 3];
                    d[class] = 1.0;
                    d
                },
            }],
        };
        let model = ForestModel {
            version: MODEL_FORMAT_VERSION,
            classes: vec!["a".into(), "b".into(), "c".into()],
            feature_names: vec!["x".into()],
            config: TrainConfig::default(),
            dataset_fingerprint: String::new(),
            single_class: false,
            oob_accuracy: None,
            trees: vec![tree(0), tree(1)],
        };
        assert_eq!(model.predict_proba(&[0.0]).unwrap(), vec![0.5, 0.5, 0.0]);
    }

    #[test]
    fn oob_close_to_heldout() {
        let data = gaussian_blobs(200, 42);
        let (train, test) = holdout_split(&data, 2);
        let model = train_forest(&train, &TrainConfig::default()).unwrap();
        let oob = model.oob_accuracy.unwrap();
        let held = accuracy(&model, &test);
        assert!((oob - held).abs() <= 0.1, "oob {oob} vs held-out {held}");
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let data = gaussian_blobs(20, 1);
        let model = train_forest(&data, &TrainConfig::default()).unwrap();
        assert!(model.predict_proba(&[1.0]).is_err());
    }

    #[test]
    fn model_round_trip_identical_predictions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let data = gaussian_blobs(60, 13);
        let model = train_forest(&data, &TrainConfig::default()).unwrap();
        save_model(&model, &path).unwrap();
        let loaded: ForestModel<f64> = load_model(&path).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..20 {
            let row = vec![rng.gen_range(-3.0..8.0), rng.gen_range(-3.0..8.0)];
            assert_eq!(
                model.predict_proba(&row).unwrap(),
                loaded.predict_proba(&row).unwrap()
            );
        }
    }

    #[test]
    fn corrupt_model_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        std::fs::write(&path, "{not json").unwrap();
        assert!(load_model::<f64>(&path).is_err());
    }

    #[test]
    fn stratified_folds_partition_each_class() {
        let data = gaussian_blobs(50, 31);
        let folds = stratified_folds(&data.labels, &data.classes, 5, 4).unwrap();
        assert_eq!(folds.len(), 100);
        for class in 0..2 {
            for fold in 0..5 {
                let count = (0..100)
                    .filter(|&i| data.labels[i] == class && folds[i] == fold)
                    .count();
                assert_eq!(count, 10);
            }
        }
    }

    #[test]
    fn stratification_error_names_small_class() {
        let rows = vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0], vec![4.0], vec![5.0]];
        let data = Dataset::from_rows(
            &rows,
            vec![0, 0, 0, 0, 0, 1],
            vec!["big".into(), "rare".into()],
            vec!["x".into()],
        )
        .unwrap();
        let err = stratified_folds(&data.labels, &data.classes, 5, 0).unwrap_err();
        assert!(err.to_string().contains("rare"));
    }

    #[test]
    fn single_config_grid_selects_it() {
        let data = gaussian_blobs(30, 2);
        let grid = vec![TrainConfig {
            n_trees: 10,
            ..TrainConfig::default()
        }];
        let (best, report) = grid_search_cv(&data, &grid, 5, 0).unwrap();
        assert_eq!(best, grid[0]);
        assert_eq!(report.cells.len(), 5);
    }

    #[test]
    fn cv_cell_count_is_grid_times_folds() {
        let data = gaussian_blobs(30, 6);
        let grid = vec![
            TrainConfig {
                n_trees: 5,
                ..TrainConfig::default()
            },
            TrainConfig {
                n_trees: 10,
                criterion: Criterion::Entropy,
                ..TrainConfig::default()
            },
        ];
        let (_, report) = grid_search_cv(&data, &grid, 5, 0).unwrap();
        assert_eq!(report.cells.len(), 10);
    }

    #[test]
    fn depth_zero_config_loses_to_deeper() {
        let data = gaussian_blobs(50, 19);
        let grid = vec![
            TrainConfig {
                n_trees: 10,
                max_depth: Some(0),
                ..TrainConfig::default()
            },
            TrainConfig {
                n_trees: 10,
                ..TrainConfig::default()
            },
        ];
        let (best, report) = grid_search_cv(&data, &grid, 5, 0).unwrap();
        assert_eq!(report.selected, 1);
        assert!(best.max_depth.is_none());
    }
}
