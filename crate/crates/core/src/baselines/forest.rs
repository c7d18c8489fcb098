use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::types::{class_from_meters, DistanceClass, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForestMode {
    /// Gini splits, leaves hold class distributions.
    Classify,
    /// Variance-reduction splits on distance in meters, leaves hold means.
    Regress,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxFeatures {
    /// `floor(sqrt(D))` candidate features per split, at least one.
    Sqrt,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub mode: ForestMode,
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub bootstrap: bool,
    pub max_features: MaxFeatures,
    /// Fraction of the training set (seeded draw without replacement) to fit on.
    pub subset_fraction: f64,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            mode: ForestMode::Classify,
            n_trees: 100,
            max_depth: 12,
            min_leaf: 2,
            bootstrap: true,
            max_features: MaxFeatures::Sqrt,
            subset_fraction: 1.0,
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.min_leaf == 0 {
            return Err(Error::Config("forest needs n_trees >= 1 and min_leaf >= 1".into()));
        }
        if !(self.subset_fraction > 0.0 && self.subset_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "subset fraction must lie in (0, 1], got {}",
                self.subset_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    /// Samples with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// Class distribution (classify) or a single mean (regress).
    Leaf(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    /// Root at index 0.
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_value(&self, x: &[f64]) -> &[f64] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
            }
        }
        go(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub params: ForestParams,
    pub width: usize,
    pub trees: Vec<Tree>,
}

/// Training matrix view: row-major features and per-row targets.
struct Data<'a> {
    x: Vec<&'a [f64]>,
    class: Vec<usize>,
    meters: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    /// Parent impurity minus the size-weighted child impurity (total, not mean).
    pub gain: f64,
}

/// `n * gini` for a class-count vector.
pub fn weighted_gini(counts: &[usize; 4]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let sq: usize = counts.iter().map(|c| c * c).sum();
    n as f64 - sq as f64 / n as f64
}

/// Sum of squared deviations from the mean, from running sums.
pub fn weighted_variance(n: usize, sum: f64, sum_sq: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    (sum_sq - sum * sum / n as f64).max(0.0)
}

fn node_impurity(data: &Data, idx: &[usize], mode: ForestMode) -> f64 {
    match mode {
        ForestMode::Classify => {
            let mut counts = [0usize; 4];
            idx.iter().for_each(|&i| counts[data.class[i]] += 1);
            weighted_gini(&counts)
        }
        ForestMode::Regress => {
            let (s, s2) = idx
                .iter()
                .fold((0.0, 0.0), |(s, s2), &i| (s + data.meters[i], s2 + data.meters[i].powi(2)));
            weighted_variance(idx.len(), s, s2)
        }
    }
}

/// Best split of `idx` over `features`, scanning features in the given order and
/// thresholds ascending; only a strictly larger gain replaces the incumbent.
fn best_split(
    data: &Data,
    idx: &[usize],
    features: &[usize],
    mode: ForestMode,
    min_leaf: usize,
) -> Option<SplitChoice> {
    let n = idx.len();
    if n < 2 * min_leaf {
        return None;
    }
    let parent = node_impurity(data, idx, mode);
    let mut best: Option<SplitChoice> = None;
    let mut order: Vec<usize> = idx.to_vec();
    for &f in features {
        order.sort_by(|&a, &b| data.x[a][f].total_cmp(&data.x[b][f]).then(a.cmp(&b)));
        let mut left_counts = [0usize; 4];
        let mut right_counts = [0usize; 4];
        let (mut ls, mut ls2) = (0.0, 0.0);
        let (mut rs, mut rs2) = (0.0, 0.0);
        for &i in &order {
            right_counts[data.class[i]] += 1;
            rs += data.meters[i];
            rs2 += data.meters[i].powi(2);
        }
        for k in 0..n - 1 {
            let i = order[k];
            left_counts[data.class[i]] += 1;
            right_counts[data.class[i]] -= 1;
            ls += data.meters[i];
            ls2 += data.meters[i].powi(2);
            rs -= data.meters[i];
            rs2 -= data.meters[i].powi(2);
            let (a, b) = (data.x[i][f], data.x[order[k + 1]][f]);
            let n_left = k + 1;
            if a == b || n_left < min_leaf || n - n_left < min_leaf {
                continue;
            }
            let child = match mode {
                ForestMode::Classify => weighted_gini(&left_counts) + weighted_gini(&right_counts),
                ForestMode::Regress => {
                    weighted_variance(n_left, ls, ls2) + weighted_variance(n - n_left, rs, rs2)
                }
            };
            let gain = parent - child;
            if best.is_none_or(|b| gain > b.gain) {
                best = Some(SplitChoice {
                    feature: f,
                    threshold: a + (b - a) / 2.0,
                    gain,
                });
            }
        }
    }
    best.filter(|b| b.gain > 1e-12)
}

fn leaf(data: &Data, idx: &[usize], mode: ForestMode) -> Node {
    match mode {
        ForestMode::Classify => {
            let mut dist = vec![0.0; 4];
            idx.iter().for_each(|&i| dist[data.class[i]] += 1.0);
            dist.iter_mut().for_each(|d| *d /= idx.len() as f64);
            Node::Leaf(dist)
        }
        ForestMode::Regress => Node::Leaf(vec![bounded_mean(idx.iter().map(|&i| data.meters[i]))]),
    }
}

/// Arithmetic mean, kept within the range of its inputs despite rounding.
fn bounded_mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut n, mut sum, mut lo, mut hi) = (0usize, 0.0, f64::INFINITY, f64::NEG_INFINITY);
    for v in values {
        n += 1;
        sum += v;
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (sum / n as f64).clamp(lo, hi)
}

fn is_pure(data: &Data, idx: &[usize], mode: ForestMode) -> bool {
    match mode {
        ForestMode::Classify => idx.iter().all(|&i| data.class[i] == data.class[idx[0]]),
        ForestMode::Regress => idx.iter().all(|&i| data.meters[i] == data.meters[idx[0]]),
    }
}

fn grow<R: Rng>(
    data: &Data,
    idx: Vec<usize>,
    depth: usize,
    p: &ForestParams,
    width: usize,
    rng: &mut R,
    nodes: &mut Vec<Node>,
) -> usize {
    let me = nodes.len();
    nodes.push(leaf(data, &idx, p.mode));
    if depth >= p.max_depth || is_pure(data, &idx, p.mode) {
        return me;
    }
    let features: Vec<usize> = match p.max_features {
        MaxFeatures::All => (0..width).collect(),
        MaxFeatures::Sqrt => {
            let k = ((width as f64).sqrt().floor() as usize).clamp(1, width);
            let mut f = sample_indices(rng, width, k).into_vec();
            f.sort_unstable();
            f
        }
    };
    let Some(split) = best_split(data, &idx, &features, p.mode, p.min_leaf) else {
        return me;
    };
    let (l, r): (Vec<usize>, Vec<usize>) = idx
        .into_iter()
        .partition(|&i| data.x[i][split.feature] <= split.threshold);
    let left = grow(data, l, depth + 1, p, width, rng, nodes);
    let right = grow(data, r, depth + 1, p, width, rng, nodes);
    nodes[me] = Node::Split {
        feature: split.feature,
        threshold: split.threshold,
        left,
        right,
    };
    me
}

fn data_of<S: Sample>(train: &[S]) -> Result<(Data<'_>, usize)> {
    let width = train
        .first()
        .map(|s| s.features().len())
        .ok_or_else(|| Error::Config("forest needs training samples".into()))?;
    if let Some(s) = train.iter().find(|s| s.features().len() != width) {
        return Err(Error::Shape(format!("feature width {} != {width}", s.features().len())));
    }
    Ok((
        Data {
            x: train.iter().map(|s| s.features()).collect(),
            class: train.iter().map(|s| s.label().index()).collect(),
            meters: train.iter().map(|s| s.label().meters()).collect(),
        },
        width,
    ))
}

/// Fits a single CART tree on all rows with the given parameters (no bootstrap).
pub fn tree_fit<S: Sample>(train: &[S], params: &ForestParams) -> Result<Tree> {
    let (data, width) = data_of(train)?;
    let mut rng = rng::stream(params.seed, &[rng::label_hash("tree"), 0]);
    let mut nodes = Vec::new();
    grow(&data, (0..train.len()).collect(), 0, params, width, &mut rng, &mut nodes);
    Ok(Tree { nodes })
}

pub fn forest_fit<S: Sample>(train: &[S], params: &ForestParams) -> Result<ForestModel> {
    params.validate()?;
    let (data, width) = data_of(train)?;
    let n = train.len();
    let rows: Vec<usize> = if params.subset_fraction < 1.0 {
        let k = ((params.subset_fraction * n as f64).round() as usize).max(1);
        let mut r = sample_indices(&mut rng::stream(params.seed, &[rng::label_hash("subset")]), n, k).into_vec();
        r.sort_unstable();
        r
    } else {
        (0..n).collect()
    };
    let trees = (0..params.n_trees)
        .map(|t| {
            let mut rng = rng::stream(params.seed, &[rng::label_hash("tree"), t as u64]);
            let idx = if params.bootstrap {
                (0..rows.len()).map(|_| rows[rng.gen_range(0..rows.len())]).collect()
            } else {
                rows.clone()
            };
            let mut nodes = Vec::new();
            grow(&data, idx, 0, params, width, &mut rng, &mut nodes);
            Tree { nodes }
        })
        .collect();
    Ok(ForestModel {
        params: params.clone(),
        width,
        trees,
    })
}

/// Forest output for one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ForestOutput {
    Distribution([f64; 4]),
    Meters(f64),
}

impl ForestOutput {
    /// Most probable class (lowest index on ties), or the class nearest the regressed distance.
    pub fn class(&self) -> Result<DistanceClass> {
        match self {
            ForestOutput::Distribution(d) => {
                let best = (0..4).fold(0, |b, k| if d[k] > d[b] { k } else { b });
                Ok(DistanceClass::ALL[best])
            }
            ForestOutput::Meters(m) => class_from_meters(*m),
        }
    }
}

impl ForestModel {
    pub fn predict(&self, x: &[f64]) -> Result<ForestOutput> {
        if x.len() != self.width {
            return Err(Error::Shape(format!("forest fitted on width {}, got {}", self.width, x.len())));
        }
        let n = self.trees.len() as f64;
        Ok(match self.params.mode {
            ForestMode::Classify => {
                let mut d = [0.0; 4];
                for t in &self.trees {
                    for (acc, v) in d.iter_mut().zip(t.leaf_value(x)) {
                        *acc += v / n;
                    }
                }
                ForestOutput::Distribution(d)
            }
            ForestMode::Regress => {
                ForestOutput::Meters(bounded_mean(self.trees.iter().map(|t| t.leaf_value(x)[0])))
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::FlatSample;
    use proptest::prelude::{prop_assert_eq, proptest};

    fn s(v: Vec<f64>, c: DistanceClass) -> FlatSample {
        FlatSample {
            vector: v,
            label: c,
            site: "a".into(),
        }
    }

    /// Exhaustive split oracle: every feature, every midpoint, impurities recomputed from scratch.
    fn oracle_split(train: &[FlatSample], min_leaf: usize) -> Option<(usize, f64)> {
        let counts_of = |rows: &[&FlatSample]| {
            let mut c = [0usize; 4];
            rows.iter().for_each(|r| c[r.label.index()] += 1);
            c
        };
        let all: Vec<&FlatSample> = train.iter().collect();
        let parent = weighted_gini(&counts_of(&all));
        let mut best: Option<(usize, f64, f64)> = None;
        for f in 0..train[0].vector.len() {
            let mut vals: Vec<f64> = train.iter().map(|r| r.vector[f]).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            for w in vals.windows(2) {
                let thr = w[0] + (w[1] - w[0]) / 2.0;
                let (l, r): (Vec<&FlatSample>, Vec<&FlatSample>) =
                    train.iter().partition(|row| row.vector[f] <= thr);
                if l.len() < min_leaf || r.len() < min_leaf {
                    continue;
                }
                let gain = parent - (weighted_gini(&counts_of(&l)) + weighted_gini(&counts_of(&r)));
                if best.is_none_or(|b| gain > b.2) {
                    best = Some((f, thr, gain));
                }
            }
        }
        best.filter(|b| b.2 > 1e-12).map(|b| (b.0, b.1))
    }

    fn stump() -> ForestParams {
        ForestParams {
            n_trees: 1,
            max_depth: 1,
            min_leaf: 1,
            bootstrap: false,
            max_features: MaxFeatures::All,
            ..Default::default()
        }
    }

    #[test]
    fn perfectly_separable_stump() {
        let train: Vec<FlatSample> = (0..10)
            .map(|i| {
                let c = if i < 5 { DistanceClass::D1_2 } else { DistanceClass::D4_5 };
                s(vec![i as f64], c)
            })
            .collect();
        let t = tree_fit(&train, &stump()).unwrap();
        match &t.nodes[0] {
            Node::Split { feature, threshold, .. } => {
                assert_eq!((*feature, *threshold), (0, 4.5));
                assert_eq!(oracle_split(&train, 1), Some((0, 4.5)));
            }
            n => panic!("expected split, got {n:?}"),
        }
    }

    proptest! {
        #[test]
        fn stump_matches_exhaustive_oracle(
            rows in proptest::collection::vec((proptest::collection::vec(0i32..6, 3), 0usize..4), 2..50),
            min_leaf in 1usize..4,
        ) {
            let train: Vec<FlatSample> = rows
                .into_iter()
                .map(|(v, c)| s(v.into_iter().map(f64::from).collect(), DistanceClass::ALL[c]))
                .collect();
            let params = ForestParams { min_leaf, ..stump() };
            let t = tree_fit(&train, &params).unwrap();
            let got = match &t.nodes[0] {
                Node::Split { feature, threshold, .. } => Some((*feature, *threshold)),
                Node::Leaf(_) => None,
            };
            prop_assert_eq!(got, oracle_split(&train, min_leaf));
        }
    }

    #[test]
    fn pure_training_set_predicts_its_label() {
        let train: Vec<FlatSample> = (0..20).map(|i| s(vec![i as f64, -(i as f64)], DistanceClass::D3_0)).collect();
        let f = forest_fit(&train, &ForestParams { n_trees: 5, ..Default::default() }).unwrap();
        for x in [[-100.0, 3.0], [5.0, 5.0], [100.0, -1.0]] {
            assert_eq!(f.predict(&x).unwrap().class().unwrap(), DistanceClass::D3_0);
        }
    }

    #[test]
    fn regressor_stays_within_label_range() {
        let mut rng = rng::stream(2, &[]);
        let train: Vec<FlatSample> = (0..60)
            .map(|_| {
                let c = if rng.gen_bool(0.5) { DistanceClass::D1_2 } else { DistanceClass::D4_5 };
                s(vec![rng.gen_range(0.0..1.0) + c.meters(), rng.gen_range(0.0..1.0)], c)
            })
            .collect();
        let p = ForestParams {
            mode: ForestMode::Regress,
            n_trees: 10,
            ..Default::default()
        };
        let f = forest_fit(&train, &p).unwrap();
        for _ in 0..100 {
            let x = [rng.gen_range(-5.0..10.0), rng.gen_range(-5.0..5.0)];
            let ForestOutput::Meters(m) = f.predict(&x).unwrap() else { panic!() };
            assert!((1.2..=4.5).contains(&m), "{m}");
        }
    }

    #[test]
    fn single_tree_forest_is_its_cart_tree() {
        let mut rng = rng::stream(3, &[]);
        let train: Vec<FlatSample> = (0..80)
            .map(|i| s((0..4).map(|_| rng.gen_range(0.0..1.0)).collect(), DistanceClass::ALL[i % 4]))
            .collect();
        let p = ForestParams {
            n_trees: 1,
            bootstrap: false,
            max_features: MaxFeatures::All,
            ..Default::default()
        };
        let forest = forest_fit(&train, &p).unwrap();
        let tree = tree_fit(&train, &p).unwrap();
        assert_eq!(forest.trees[0], tree);
        assert!(tree.depth() <= p.max_depth);
    }

    #[test]
    fn more_trees_do_not_increase_prediction_variance() {
        let mut data_rng = rng::stream(4, &[]);
        let mut make = |n: usize| -> Vec<FlatSample> {
            (0..n)
                .map(|i| {
                    let c = DistanceClass::ALL[i % 4];
                    let v = (0..3).map(|_| c.meters() + data_rng.gen_range(-2.0..2.0)).collect();
                    s(v, c)
                })
                .collect()
        };
        let train = make(120);
        let held_out = make(40);
        let variance_for = |n_trees: usize| -> f64 {
            let preds: Vec<Vec<f64>> = (0..20)
                .map(|rep| {
                    let p = ForestParams {
                        mode: ForestMode::Regress,
                        n_trees,
                        max_depth: 6,
                        seed: rep,
                        ..Default::default()
                    };
                    let f = forest_fit(&train, &p).unwrap();
                    held_out
                        .iter()
                        .map(|h| match f.predict(&h.vector).unwrap() {
                            ForestOutput::Meters(m) => m,
                            ForestOutput::Distribution(_) => unreachable!(),
                        })
                        .collect()
                })
                .collect();
            (0..held_out.len())
                .map(|j| {
                    let m = preds.iter().map(|p| p[j]).sum::<f64>() / 20.0;
                    preds.iter().map(|p| (p[j] - m).powi(2)).sum::<f64>() / 20.0
                })
                .sum::<f64>()
                / held_out.len() as f64
        };
        let v: Vec<f64> = [1, 5, 25].into_iter().map(variance_for).collect();
        assert!(v[0] >= v[1] && v[1] >= v[2], "{v:?}");
    }

    #[test]
    fn subset_fraction_and_determinism() {
        let train: Vec<FlatSample> = (0..40).map(|i| s(vec![i as f64], DistanceClass::ALL[i / 10])).collect();
        let p = ForestParams {
            n_trees: 3,
            subset_fraction: 0.5,
            seed: 9,
            ..Default::default()
        };
        assert_eq!(forest_fit(&train, &p).unwrap(), forest_fit(&train, &p).unwrap());
        assert!(forest_fit(&train, &ForestParams { subset_fraction: 0.0, ..p }).is_err());
    }
}
