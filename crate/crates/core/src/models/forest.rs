use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::metrics::BitMatrix;
use crate::neuralcore::Tensor;
use crate::scalar::Scalar;

use super::data::Features;
use super::parallel::parallel_map;
use super::spec::BaselineParams;
use super::{ModelError, ModelResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub seed: u64,
    pub allow_dense_blowup: bool,
}

impl ForestParams {
    pub fn from_baseline(b: &BaselineParams, seed: u64) -> Self {
        ForestParams {
            n_trees: b.n_trees,
            max_depth: b.max_depth,
            min_samples_split: b.min_samples_split.max(2),
            seed,
            allow_dense_blowup: b.allow_dense_blowup,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    /// Majority vote of the samples that reached the leaf (ties vote 1).
    Leaf { positive: bool, fraction: f64 },
    /// `x[feature] ≤ threshold` goes left.
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
}

/// CART tree stored as a node arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn predict(&self, x: &[f64]) -> bool {
        let mut i = 0usize;
        loop {
            match self.nodes[i] {
                Node::Leaf { positive, .. } => return positive,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature as usize] <= threshold { left } else { right } as usize,
            }
        }
    }

    /// Longest root-to-leaf path, in edges.
    pub fn depth(&self) -> usize {
        fn go(t: &DecisionTree, i: usize) -> usize {
            match t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, left as usize).max(go(t, right as usize)),
            }
        }
        go(self, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<DecisionTree>,
    pub degenerate: bool,
}

impl RandomForest {
    /// Fraction of trees voting positive.
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        let votes = self.trees.iter().filter(|t| t.predict(x)).count();
        votes as f64 / self.trees.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestOvr {
    pub forests: Vec<RandomForest>,
}

impl ForestOvr {
    pub fn degenerate_labels(&self) -> Vec<usize> {
        (0..self.forests.len()).filter(|&j| self.forests[j].degenerate).collect()
    }

    pub fn predict_proba<F: Scalar>(&self, x: &Features<F>, allow_dense_blowup: bool) -> ModelResult<Tensor<F>> {
        let m = dense_rows(x, allow_dense_blowup)?;
        let n = m.len();
        let k = self.forests.len();
        let mut out = Tensor::zeros(&[n, k]);
        for (r, row) in m.iter().enumerate() {
            for (j, f) in self.forests.iter().enumerate() {
                out.row_mut(r)[j] = F::of(f.predict_proba(row));
            }
        }
        Ok(out)
    }
}

fn dense_rows<F: Scalar>(x: &Features<F>, allow_dense_blowup: bool) -> ModelResult<Vec<Vec<f64>>> {
    let t = match x {
        Features::Dense(t) => t.clone(),
        Features::Sparse(s) if allow_dense_blowup => s.to_dense(),
        Features::Sparse(_) => {
            return Err(ModelError::Input(
                "random forests need dense features; densifying sparse input requires allow_dense_blowup".into(),
            ))
        }
        Features::Sequence(_) => return Err(ModelError::Input("random forests cannot consume sequences".into())),
    };
    Ok((0..t.rows())
        .map(|r| t.row(r).iter().map(|v| v.to_f64_lossy()).collect())
        .collect())
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [bool],
    max_depth: usize,
    min_split: usize,
    mtry: usize,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn leaf(&mut self, idx: &[usize]) -> u32 {
        let pos = idx.iter().filter(|&&i| self.y[i]).count();
        let fraction = pos as f64 / idx.len().max(1) as f64;
        self.nodes.push(Node::Leaf {
            positive: fraction >= 0.5,
            fraction,
        });
        (self.nodes.len() - 1) as u32
    }

    /// Best `(feature, threshold, weighted child impurity)` among `mtry`
    /// non-constant features drawn at random.
    fn best_split(&self, idx: &[usize], rng: &mut ChaCha8Rng) -> Option<(usize, f64, f64)> {
        let d = self.x[0].len();
        let mut order: Vec<usize> = (0..d).collect();
        order.shuffle(rng);
        let total_pos = idx.iter().filter(|&&i| self.y[i]).count();
        let n = idx.len();
        let mut best: Option<(usize, f64, f64)> = None;
        let mut tried = 0;
        let mut vals: Vec<(f64, bool)> = Vec::with_capacity(n);
        for &f in &order {
            if tried == self.mtry {
                break;
            }
            vals.clear();
            vals.extend(idx.iter().map(|&i| (self.x[i][f], self.y[i])));
            vals.sort_by(|a, b| a.0.total_cmp(&b.0));
            if vals[0].0 == vals[n - 1].0 {
                continue;
            }
            tried += 1;
            let mut left_pos = 0;
            for s in 1..n {
                left_pos += vals[s - 1].1 as usize;
                if vals[s].0 == vals[s - 1].0 {
                    continue;
                }
                let imp = (s as f64 * gini(left_pos, s) + (n - s) as f64 * gini(total_pos - left_pos, n - s)) / n as f64;
                if best.is_none_or(|b| imp < b.2) {
                    let thr = vals[s - 1].0 + (vals[s].0 - vals[s - 1].0) / 2.0;
                    best = Some((f, thr, imp));
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: &[usize], depth: usize, rng: &mut ChaCha8Rng) -> u32 {
        let pos = idx.iter().filter(|&&i| self.y[i]).count();
        if pos == 0 || pos == idx.len() || depth >= self.max_depth || idx.len() < self.min_split {
            return self.leaf(idx);
        }
        let Some((f, thr, _)) = self.best_split(idx, rng) else {
            return self.leaf(idx);
        };
        let me = self.nodes.len();
        self.nodes.push(Node::Leaf {
            positive: false,
            fraction: 0.0,
        });
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.x[i][f] <= thr);
        let left = self.grow(&l, depth + 1, rng);
        let right = self.grow(&r, depth + 1, rng);
        self.nodes[me] = Node::Split {
            feature: f as u32,
            threshold: thr,
            left,
            right,
        };
        me as u32
    }
}

/// Grows one CART tree (Gini impurity, √d features tried per split) on the
/// given sample indices.
pub fn grow_tree(x: &[Vec<f64>], y: &[bool], idx: &[usize], max_depth: usize, min_split: usize, rng: &mut ChaCha8Rng) -> DecisionTree {
    let d = x.first().map_or(0, Vec::len);
    let mut b = Builder {
        x,
        y,
        max_depth,
        min_split: min_split.max(2),
        mtry: ((d as f64).sqrt().floor() as usize).max(1),
        nodes: Vec::new(),
    };
    b.grow(idx, 0, rng);
    DecisionTree { nodes: b.nodes }
}

/// One forest per label: `n_trees` trees, each on a bootstrap sample, with a
/// per-label random stream so results do not depend on threading.
pub fn train_random_forest_ovr<F: Scalar>(
    x: &Features<F>,
    labels: &BitMatrix,
    params: &ForestParams,
    threads: usize,
) -> ModelResult<ForestOvr> {
    let rows = dense_rows(x, params.allow_dense_blowup)?;
    if rows.is_empty() || rows[0].is_empty() {
        return Err(ModelError::Empty);
    }
    if rows.len() != labels.rows() {
        return Err(ModelError::Shape("feature and label rows differ".into()));
    }
    if params.n_trees == 0 || params.max_depth == 0 {
        return Err(ModelError::Spec("n_trees and max_depth must be positive".into()));
    }
    let n = rows.len();
    let forests = parallel_map(labels.cols(), threads, |j| -> ModelResult<RandomForest> {
        let y = labels.column(j);
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(j as u64);
        let trees = (0..params.n_trees)
            .map(|_| {
                let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                grow_tree(&rows, &y, &idx, params.max_depth, params.min_samples_split, &mut rng)
            })
            .collect();
        Ok(RandomForest {
            trees,
            degenerate: y.iter().all(|&b| b) || y.iter().all(|&b| !b),
        })
    })?;
    Ok(ForestOvr { forests })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(n_trees: usize, max_depth: usize) -> ForestParams {
        ForestParams {
            n_trees,
            max_depth,
            min_samples_split: 2,
            seed: 3,
            allow_dense_blowup: false,
        }
    }

    #[test]
    fn single_feature_split() {
        let xs: Vec<f64> = (0..30).map(|i| if i < 15 { i as f64 / 15.0 } else { 2.0 + i as f64 / 30.0 }).collect();
        let y = BitMatrix::from_rows(&(0..30).map(|i| vec![i >= 15]).collect::<Vec<_>>()).unwrap();
        let x = Features::Dense(Tensor::from_vec(&[30, 1], xs).unwrap());
        let ovr = train_random_forest_ovr(&x, &y, &params(15, 1), 1).unwrap();
        let p = ovr.predict_proba(&x, false).unwrap();
        assert_eq!(BitMatrix::threshold(&p, 0.5), y);
    }

    #[test]
    fn depth_is_honoured() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let xs: Vec<f64> = (0..200 * 4).map(|_| rng.random::<f64>()).collect();
        let y = BitMatrix::from_rows(&(0..200).map(|_| vec![rng.random::<bool>()]).collect::<Vec<_>>()).unwrap();
        let x = Features::Dense(Tensor::from_vec(&[200, 4], xs).unwrap());
        for depth in [1, 3, 5] {
            let ovr = train_random_forest_ovr(&x, &y, &params(5, depth), 2).unwrap();
            assert!(ovr.forests[0].trees.iter().all(|t| t.depth() <= depth));
        }
    }

    #[test]
    fn pure_node_is_single_leaf() {
        let x = Features::Dense(Tensor::<f64>::from_f64(&[4, 1], &[0.1, 0.2, 0.3, 0.4]).unwrap());
        let y = BitMatrix::from_rows(&[vec![true], vec![true], vec![true], vec![true]]).unwrap();
        let ovr = train_random_forest_ovr(&x, &y, &params(3, 10), 1).unwrap();
        assert!(ovr.forests[0].trees.iter().all(|t| t.nodes.len() == 1));
        assert_eq!(ovr.degenerate_labels(), [0]);
    }

    #[test]
    fn guards() {
        let y = BitMatrix::from_rows(&[vec![true]]).unwrap();
        let empty = Features::Dense(Tensor::<f64>::zeros(&[0, 3]));
        assert!(train_random_forest_ovr(&empty, &BitMatrix::zeros(0, 1), &params(1, 5), 1).is_err());
        let sparse = Features::Sparse(crate::neuralcore::SparseRows::<f64> {
            cols: 2,
            rows: vec![vec![(0, 1.0)]],
        });
        assert!(train_random_forest_ovr(&sparse, &y, &params(1, 5), 1).is_err());
        let mut p = params(1, 5);
        p.allow_dense_blowup = true;
        assert!(train_random_forest_ovr(&sparse, &y, &p, 1).is_ok());
    }

    #[test]
    fn threads_do_not_change_result() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let xs: Vec<f64> = (0..60 * 3).map(|_| rng.random::<f64>()).collect();
        let y = BitMatrix::from_rows(&(0..60).map(|_| (0..4).map(|_| rng.random::<bool>()).collect()).collect::<Vec<_>>())
            .unwrap();
        let x = Features::Dense(Tensor::from_vec(&[60, 3], xs).unwrap());
        let a = train_random_forest_ovr(&x, &y, &params(4, 6), 1).unwrap();
        let b = train_random_forest_ovr(&x, &y, &params(4, 6), 4).unwrap();
        assert_eq!(a, b);
    }
}
