use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoostConfig {
    pub trees: usize,
    pub max_depth: usize,
    pub shrinkage: f64,
    pub min_leaf: usize,
    /// Quantile bins per feature.
    pub bins: usize,
    /// Cap on stored rows; beyond it a uniform reservoir of all rows is kept.
    pub max_rows: usize,
}

impl Default for BoostConfig {
    fn default() -> Self {
        Self {
            trees: 200,
            max_depth: 3,
            shrinkage: 0.1,
            min_leaf: 20,
            bins: 32,
            max_rows: 20_000,
        }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf(f64),
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] <= threshold { left } else { right },
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Ensemble {
    base: f64,
    shrinkage: f64,
    trees: Vec<Tree>,
}

impl Ensemble {
    fn predict(&self, x: &[f64]) -> f64 {
        self.base + self.shrinkage * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }
}

/// Squared-error gradient boosting of `y` on `[phi, z]` with histogram splits.
#[derive(Debug, Clone)]
pub struct BoostedSLearner {
    dim: usize,
    cfg: BoostConfig,
    /// Stored design rows `[phi, z]`, row-major.
    rows: Vec<f64>,
    targets: Vec<f64>,
    arm_counts: [usize; 2],
    seen: u64,
    rng: ChaCha8Rng,
    model: Option<Ensemble>,
}

impl BoostedSLearner {
    pub fn new(feature_dim: usize, cfg: BoostConfig, seed: u64) -> Self {
        Self {
            dim: feature_dim,
            cfg,
            rows: Vec::new(),
            targets: Vec::new(),
            arm_counts: [0, 0],
            seen: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            model: None,
        }
    }

    pub fn rows_stored(&self) -> usize {
        self.targets.len()
    }

    pub fn observe(&mut self, phi: ArrayView2<'_, f64>, z: &[bool], y: &[f64]) -> Result<()> {
        let n = phi.nrows();
        ensure_len("cate feature width", self.dim, phi.ncols())?;
        ensure_len("cate treatments", n, z.len())?;
        ensure_len("cate outcomes", n, y.len())?;
        let width = self.dim + 1;
        for i in 0..n {
            self.arm_counts[z[i] as usize] += 1;
            self.seen += 1;
            let slot = if self.targets.len() < self.cfg.max_rows {
                self.targets.push(y[i]);
                self.rows.resize(self.rows.len() + width, 0.0);
                self.targets.len() - 1
            } else {
                let j = self.rng.random_range(0..self.seen) as usize;
                if j >= self.cfg.max_rows {
                    continue;
                }
                self.targets[j] = y[i];
                j
            };
            let dst = &mut self.rows[slot * width..(slot + 1) * width];
            for (d, s) in dst.iter_mut().zip(phi.row(i).iter()) {
                *d = *s;
            }
            dst[self.dim] = z[i] as u8 as f64;
        }
        Ok(())
    }

    pub fn refit(&mut self) -> Result<()> {
        for (arm, &count) in self.arm_counts.iter().enumerate() {
            if count == 0 {
                return Err(Error::Fit(format!(
                    "no rows with z = {arm}; both arms are needed, so the policy must keep exploring"
                )));
            }
        }
        let width = self.dim + 1;
        let x = Array2::from_shape_vec((self.targets.len(), width), self.rows.clone()).expect("row-major store");
        self.model = Some(fit_ensemble(x.view(), &self.targets, &self.cfg));
        Ok(())
    }

    fn model(&self) -> Result<&Ensemble> {
        self.model
            .as_ref()
            .ok_or_else(|| Error::State("boosted CATE model has not been fitted".into()))
    }

    pub fn predict_outcome(&self, phi: ArrayView2<'_, f64>, z: bool) -> Result<Vec<f64>> {
        let model = self.model()?;
        ensure_len("cate feature width", self.dim, phi.ncols())?;
        let mut x = vec![0.0; self.dim + 1];
        x[self.dim] = z as u8 as f64;
        Ok(phi
            .rows()
            .into_iter()
            .map(|row| {
                x[..self.dim].iter_mut().zip(row.iter()).for_each(|(d, s)| *d = *s);
                model.predict(&x)
            })
            .collect())
    }

    pub fn predict_cate(&self, phi: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        let treated = self.predict_outcome(phi, true)?;
        let control = self.predict_outcome(phi, false)?;
        Ok(treated.iter().zip(&control).map(|(a, b)| a - b).collect())
    }
}

/// Cut points per feature; a value falls in bin `b` when it is at most `cuts[b]`.
fn quantile_cuts(x: ArrayView2<'_, f64>, bins: usize) -> Vec<Vec<f64>> {
    x.columns()
        .into_iter()
        .map(|col| {
            let mut sorted: Vec<f64> = col.to_vec();
            sorted.sort_by(f64::total_cmp);
            sorted.dedup();
            if sorted.len() <= bins {
                // every distinct value but the largest is a cut
                sorted.pop();
                return sorted;
            }
            let mut cuts: Vec<f64> = (1..bins)
                .map(|k| {
                    let pos = k * (sorted.len() - 1) / bins;
                    0.5 * (sorted[pos] + sorted[pos + 1])
                })
                .collect();
            cuts.dedup();
            cuts
        })
        .collect()
}

fn fit_ensemble(x: ArrayView2<'_, f64>, y: &[f64], cfg: &BoostConfig) -> Ensemble {
    let n = y.len();
    let cuts = quantile_cuts(x, cfg.bins.max(2));
    let binned: Vec<Vec<u8>> = cuts
        .iter()
        .enumerate()
        .map(|(f, c)| {
            x.column(f)
                .iter()
                .map(|&v| c.partition_point(|&t| t < v) as u8)
                .collect()
        })
        .collect();
    let base = y.iter().sum::<f64>() / n as f64;
    let mut pred = vec![base; n];
    let mut residual = vec![0.0; n];
    let mut trees = Vec::with_capacity(cfg.trees);
    let mut grower = Grower {
        binned: &binned,
        cuts: &cuts,
        min_leaf: cfg.min_leaf.max(1),
        max_depth: cfg.max_depth,
        sums: vec![0.0; cfg.bins + 1],
        counts: vec![0; cfg.bins + 1],
    };
    let mut leaf_of = vec![0usize; n];
    for _ in 0..cfg.trees {
        for i in 0..n {
            residual[i] = y[i] - pred[i];
        }
        let tree = grower.grow(&residual, &mut leaf_of);
        for i in 0..n {
            if let Node::Leaf(v) = tree.nodes[leaf_of[i]] {
                pred[i] += cfg.shrinkage * v;
            }
        }
        trees.push(tree);
    }
    Ensemble {
        base,
        shrinkage: cfg.shrinkage,
        trees,
    }
}

struct Grower<'a> {
    binned: &'a [Vec<u8>],
    cuts: &'a [Vec<f64>],
    min_leaf: usize,
    max_depth: usize,
    sums: Vec<f64>,
    counts: Vec<usize>,
}

struct BestSplit {
    feature: usize,
    bin: usize,
    gain: f64,
}

impl Grower<'_> {
    /// Grows one tree on `residual`; `leaf_of[i]` receives the leaf index of row `i`.
    fn grow(&mut self, residual: &[f64], leaf_of: &mut [usize]) -> Tree {
        let mut nodes = vec![Node::Leaf(0.0)];
        let mut frontier = vec![(0usize, (0..residual.len()).collect::<Vec<usize>>(), 0usize)];
        while let Some((at, members, depth)) = frontier.pop() {
            let total: f64 = members.iter().map(|&i| residual[i]).sum();
            let split = if depth < self.max_depth && members.len() >= 2 * self.min_leaf {
                self.best_split(residual, &members, total)
            } else {
                None
            };
            match split {
                Some(s) => {
                    let (left, right): (Vec<usize>, Vec<usize>) =
                        members.iter().partition(|&&i| self.binned[s.feature][i] as usize <= s.bin);
                    let l = nodes.len();
                    nodes.push(Node::Leaf(0.0));
                    nodes.push(Node::Leaf(0.0));
                    nodes[at] = Node::Split {
                        feature: s.feature,
                        threshold: self.cuts[s.feature][s.bin],
                        left: l,
                        right: l + 1,
                    };
                    frontier.push((l + 1, right, depth + 1));
                    frontier.push((l, left, depth + 1));
                }
                None => {
                    nodes[at] = Node::Leaf(total / members.len() as f64);
                    for &i in &members {
                        leaf_of[i] = at;
                    }
                }
            }
        }
        Tree { nodes }
    }

    fn best_split(&mut self, residual: &[f64], members: &[usize], total: f64) -> Option<BestSplit> {
        let n = members.len();
        let parent = total * total / n as f64;
        let mut best: Option<BestSplit> = None;
        for (feature, col) in self.binned.iter().enumerate() {
            let n_cuts = self.cuts[feature].len();
            if n_cuts == 0 {
                continue;
            }
            let sums = &mut self.sums[..=n_cuts];
            let counts = &mut self.counts[..=n_cuts];
            sums.iter_mut().for_each(|s| *s = 0.0);
            counts.iter_mut().for_each(|c| *c = 0);
            for &i in members {
                let b = col[i] as usize;
                sums[b] += residual[i];
                counts[b] += 1;
            }
            let (mut s_left, mut n_left) = (0.0, 0usize);
            for bin in 0..n_cuts {
                s_left += sums[bin];
                n_left += counts[bin];
                let n_right = n - n_left;
                if n_left < self.min_leaf || n_right < self.min_leaf {
                    continue;
                }
                let s_right = total - s_left;
                let gain = s_left * s_left / n_left as f64 + s_right * s_right / n_right as f64 - parent;
                if gain > best.as_ref().map_or(1e-12, |b| b.gain) {
                    best = Some(BestSplit { feature, bin, gain });
                }
            }
        }
        best
    }
}
