//! Random regression forest: bagged CART trees with per-node random feature
//! subsets and squared-error splits. Leaves store the mean target; the forest
//! predicts the mean over trees of the leaf each tree reaches.
//!
//! # Model file layout
//!
//! All integers little-endian.
//!
//! | bytes | field |
//! |-------|-------|
//! | 4     | magic `SRFM` |
//! | u32   | format version (1) |
//! | u32   | feature count |
//! | u32   | tree count |
//! | u32   | mtry |
//! | u32   | min leaf size |
//! | u32   | max depth (0 = unlimited) |
//! | u8    | bootstrap flag |
//! | u64   | seed |
//!
//! followed by each tree in pre-order: a tag byte `0` (leaf: `f64` value,
//! `u32` sample count) or `1` (split: `u32` feature, `f64` threshold, then
//! the left and right subtrees). Samples with `x[feature] <= threshold` go left.

use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

const MAGIC: &[u8; 4] = b"SRFM";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("row {row} has {found} features, expected {expected}")]
    RowLength {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("{rows} rows but {targets} targets")]
    TargetCount { rows: usize, targets: usize },
    #[error("non-finite value in training data at row {0}")]
    NonFinite(usize),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("forest has no trees")]
    Untrained,
    #[error("query has {found} features, forest expects {expected}")]
    QueryLength { expected: usize, found: usize },
    #[error("unrecognized model file (bad magic or version {0})")]
    VersionMismatch(u32),
    #[error("model file truncated")]
    Truncated,
    #[error("malformed model file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Features drawn (without replacement) at each node.
    pub mtry: usize,
    /// Minimum number of samples in a leaf.
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
    /// Train each tree on a bootstrap resample rather than on all rows.
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 30,
            mtry: 11,
            min_leaf: 5,
            max_depth: None,
            bootstrap: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        value: f64,
        count: usize,
    },
}

impl TreeNode {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { value, .. } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn leaves(&self) -> Vec<(f64, usize)> {
        match self {
            TreeNode::Leaf { value, count } => vec![(*value, *count)],
            TreeNode::Split { left, right, .. } => {
                let mut v = left.leaves();
                v.extend(right.leaves());
                v
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Forest {
    pub n_features: usize,
    pub params: ForestParams,
    pub seed: u64,
    pub trees: Vec<TreeNode>,
}

struct Builder<'a, R> {
    rows: &'a [R],
    targets: &'a [f64],
    n_features: usize,
    params: &'a ForestParams,
}

impl<'a, R: AsRef<[f64]>> Builder<'a, R> {
    fn x(&self, i: usize, f: usize) -> f64 {
        self.rows[i].as_ref()[f]
    }

    fn leaf(&self, idx: &[usize]) -> TreeNode {
        let sum: f64 = idx.iter().map(|&i| self.targets[i]).sum();
        TreeNode::Leaf {
            value: sum / idx.len() as f64,
            count: idx.len(),
        }
    }

    fn build(&self, idx: &mut [usize], depth: usize, rng: &mut ChaCha8Rng) -> TreeNode {
        let n = idx.len();
        let min_leaf = self.params.min_leaf;
        let first = self.targets[idx[0]];
        let constant = idx.iter().all(|&i| self.targets[i] == first);
        if constant {
            return TreeNode::Leaf {
                value: first,
                count: n,
            };
        }
        if n < 2 * min_leaf || self.params.max_depth.is_some_and(|d| depth >= d) {
            return self.leaf(idx);
        }

        let mut features: Vec<usize> =
            index::sample(rng, self.n_features, self.params.mtry.min(self.n_features)).into_vec();
        features.sort_unstable();

        let (sum, sq) = idx.iter().fold((0.0, 0.0), |(s, q), &i| {
            let t = self.targets[i];
            (s + t, q + t * t)
        });
        let parent_sse = sq - sum * sum / n as f64;

        // (score, feature, threshold)
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order: Vec<usize> = idx.to_vec();
        for &f in &features {
            order.sort_by(|&a, &b| self.x(a, f).total_cmp(&self.x(b, f)));
            let (mut ls, mut lq) = (0.0, 0.0);
            for k in 1..n {
                let t = self.targets[order[k - 1]];
                ls += t;
                lq += t * t;
                let (lo, hi) = (self.x(order[k - 1], f), self.x(order[k], f));
                if lo == hi || k < min_leaf || n - k < min_leaf {
                    continue;
                }
                let (rs, rq) = (sum - ls, sq - lq);
                let score = (lq - ls * ls / k as f64) + (rq - rs * rs / (n - k) as f64);
                if best.is_none_or(|(b, _, _)| score < b) {
                    let mut threshold = lo + (hi - lo) / 2.0;
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some((score, f, threshold));
                }
            }
        }
        let Some((score, feature, threshold)) = best else {
            return self.leaf(idx);
        };
        if !(score < parent_sse) {
            return self.leaf(idx);
        }

        let split = partition(idx, |i| self.x(i, feature) <= threshold);
        let (left_idx, right_idx) = idx.split_at_mut(split);
        let left = self.build(left_idx, depth + 1, rng);
        let right = self.build(right_idx, depth + 1, rng);
        TreeNode::Split {
            feature,
            threshold,
            left: Box::new(left),
            right: Box::new(right),
        }
    }
}

/// Stable in-place partition; returns the number of elements satisfying `pred`.
fn partition(idx: &mut [usize], pred: impl Fn(usize) -> bool) -> usize {
    let (yes, no): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| pred(i));
    let k = yes.len();
    idx[..k].copy_from_slice(&yes);
    idx[k..].copy_from_slice(&no);
    k
}

/// RNG for one tree: the forest seed selects the key, the tree index the stream.
fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree as u64);
    rng
}

impl Forest {
    /// Trees are built in parallel; each tree's RNG depends only on `seed` and
    /// the tree index, so the result does not depend on the thread count.
    pub fn train<R: AsRef<[f64]> + Sync>(
        rows: &[R],
        targets: &[f64],
        params: &ForestParams,
        seed: u64,
    ) -> Result<Forest, ForestError> {
        if rows.is_empty() {
            return Err(ForestError::EmptyTrainingSet);
        }
        if rows.len() != targets.len() {
            return Err(ForestError::TargetCount {
                rows: rows.len(),
                targets: targets.len(),
            });
        }
        if params.n_trees == 0 || params.mtry == 0 || params.min_leaf == 0 {
            return Err(ForestError::InvalidParams(
                "n_trees, mtry and min_leaf must be positive".into(),
            ));
        }
        let n_features = rows[0].as_ref().len();
        if n_features == 0 {
            return Err(ForestError::InvalidParams("rows have no features".into()));
        }
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != n_features {
                return Err(ForestError::RowLength {
                    row: i,
                    expected: n_features,
                    found: r.len(),
                });
            }
            if !targets[i].is_finite() || r.iter().any(|v| !v.is_finite()) {
                return Err(ForestError::NonFinite(i));
            }
        }

        let builder = Builder {
            rows,
            targets,
            n_features,
            params,
        };
        let n = rows.len();
        let trees = (0..params.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = tree_rng(seed, t);
                let mut idx: Vec<usize> = if params.bootstrap {
                    (0..n).map(|_| rng.gen_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                builder.build(&mut idx, 0, &mut rng)
            })
            .collect();
        Ok(Forest {
            n_features,
            params: params.clone(),
            seed,
            trees,
        })
    }

    /// Mean over trees of the reached leaf values.
    pub fn predict(&self, x: &[f64]) -> Result<f64, ForestError> {
        if self.trees.is_empty() {
            return Err(ForestError::Untrained);
        }
        if x.len() != self.n_features {
            return Err(ForestError::QueryLength {
                expected: self.n_features,
                found: x.len(),
            });
        }
        Ok(self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        for v in [
            FORMAT_VERSION,
            self.n_features as u32,
            self.trees.len() as u32,
            self.params.mtry as u32,
            self.params.min_leaf as u32,
            self.params.max_depth.map_or(0, |d| d as u32),
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(self.params.bootstrap as u8);
        out.extend_from_slice(&self.seed.to_le_bytes());
        for tree in &self.trees {
            write_node(tree, &mut out);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Forest, ForestError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(ForestError::VersionMismatch(0));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(ForestError::VersionMismatch(version));
        }
        let n_features = r.u32()? as usize;
        let n_trees = r.u32()? as usize;
        let mtry = r.u32()? as usize;
        let min_leaf = r.u32()? as usize;
        let max_depth = match r.u32()? {
            0 => None,
            d => Some(d as usize),
        };
        let bootstrap = r.take(1)?[0] != 0;
        let seed = r.u64()?;
        let mut trees = Vec::with_capacity(n_trees.min(1 << 16));
        for _ in 0..n_trees {
            trees.push(r.node(n_features, 0)?);
        }
        if r.pos != bytes.len() {
            return Err(ForestError::Malformed(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Forest {
            n_features,
            params: ForestParams {
                n_trees,
                mtry,
                min_leaf,
                max_depth,
                bootstrap,
            },
            seed,
            trees,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ForestError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Forest, ForestError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn write_node(node: &TreeNode, out: &mut Vec<u8>) {
    match node {
        TreeNode::Leaf { value, count } => {
            out.push(0);
            out.extend_from_slice(&value.to_le_bytes());
            out.extend_from_slice(&(*count as u32).to_le_bytes());
        }
        TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        } => {
            out.push(1);
            out.extend_from_slice(&(*feature as u32).to_le_bytes());
            out.extend_from_slice(&threshold.to_le_bytes());
            write_node(left, out);
            write_node(right, out);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ForestError> {
        let end = self.pos.checked_add(n).ok_or(ForestError::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(ForestError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ForestError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ForestError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, ForestError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn node(&mut self, n_features: usize, depth: usize) -> Result<TreeNode, ForestError> {
        if depth > 10_000 {
            return Err(ForestError::Malformed("tree too deep".into()));
        }
        match self.take(1)?[0] {
            0 => Ok(TreeNode::Leaf {
                value: self.f64()?,
                count: self.u32()? as usize,
            }),
            1 => {
                let feature = self.u32()? as usize;
                if feature >= n_features {
                    return Err(ForestError::Malformed(format!(
                        "split feature {feature} out of range"
                    )));
                }
                let threshold = self.f64()?;
                let left = Box::new(self.node(n_features, depth + 1)?);
                let right = Box::new(self.node(n_features, depth + 1)?);
                Ok(TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                })
            }
            tag => Err(ForestError::Malformed(format!("unknown node tag {tag}"))),
        }
    }
}
