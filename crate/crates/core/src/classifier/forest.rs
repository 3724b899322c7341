//! Random forest of CART trees split on Gini impurity.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::Standardizer;
use super::model::{ClassifierModel, ModelParams, MODEL_VERSION};
use super::{check_matrix, class_weights, sample_background, ClassifierError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Node {
    /// Samples with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// Probability of "good".
    Leaf { p: f64 },
}

/// Nodes in pre-order; the root is node 0 and children follow their parent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, z: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { p } => return p,
                Node::Split { feature, threshold, left, right } => {
                    i = if z[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestOptions {
    pub trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features tried per split; `None` means `ceil(sqrt(d))`.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
    pub class_weighted: bool,
}

impl Default for ForestOptions {
    fn default() -> Self {
        Self {
            trees: 200,
            max_depth: 8,
            min_leaf: 2,
            max_features: None,
            bootstrap: true,
            class_weighted: true,
        }
    }
}

impl ForestOptions {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        if self.trees == 0 || self.min_leaf == 0 || self.max_features == Some(0) {
            return Err(ClassifierError::InvalidParams(
                "trees, min_leaf and max_features must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

struct Grower<'a> {
    z: &'a [Vec<f64>],
    y: &'a [bool],
    weight: (f64, f64),
    opts: &'a ForestOptions,
    mtry: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

struct Best {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

fn gini_mass(good: f64, bad: f64) -> f64 {
    let t = good + bad;
    if t <= 0.0 {
        0.0
    } else {
        t - (good * good + bad * bad) / t
    }
}

impl Grower<'_> {
    fn w(&self, i: usize) -> f64 {
        if self.y[i] {
            self.weight.1
        } else {
            self.weight.0
        }
    }

    fn masses(&self, samples: &[usize]) -> (f64, f64) {
        samples.iter().fold((0.0, 0.0), |(g, b), &i| {
            if self.y[i] {
                (g + self.w(i), b)
            } else {
                (g, b + self.w(i))
            }
        })
    }

    fn best_split(&mut self, samples: &[usize], parent: f64) -> Option<Best> {
        let d = self.z[0].len();
        let features = sample(&mut self.rng, d, self.mtry.min(d)).into_vec();
        let min_leaf = self.opts.min_leaf;
        let n = samples.len();
        let (tg, tb) = self.masses(samples);
        let mut best: Option<Best> = None;
        let mut order = samples.to_vec();
        for f in features {
            order.sort_by(|&a, &b| self.z[a][f].total_cmp(&self.z[b][f]).then(a.cmp(&b)));
            let (mut lg, mut lb) = (0.0, 0.0);
            for k in 0..n - 1 {
                let i = order[k];
                if self.y[i] {
                    lg += self.w(i);
                } else {
                    lb += self.w(i);
                }
                let (v, next) = (self.z[i][f], self.z[order[k + 1]][f]);
                if k + 1 < min_leaf || n - k - 1 < min_leaf || v == next {
                    continue;
                }
                let impurity = gini_mass(lg, lb) + gini_mass(tg - lg, tb - lb);
                if impurity < parent - 1e-12 && best.as_ref().is_none_or(|b| impurity < b.impurity) {
                    let mid = 0.5 * (v + next);
                    best = Some(Best {
                        feature: f,
                        threshold: if mid < next { mid } else { v },
                        impurity,
                    });
                }
            }
        }
        best
    }

    fn grow(&mut self, samples: &[usize], depth: usize) -> usize {
        let id = self.nodes.len();
        let (g, b) = self.masses(samples);
        self.nodes.push(Node::Leaf { p: g / (g + b) });
        if depth >= self.opts.max_depth || samples.len() < 2 * self.opts.min_leaf || g == 0.0 || b == 0.0 {
            return id;
        }
        let Some(best) = self.best_split(samples, gini_mass(g, b)) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) =
            samples.iter().partition(|&&i| self.z[i][best.feature] <= best.threshold);
        let left = self.grow(&l, depth + 1);
        let right = self.grow(&r, depth + 1);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        id
    }
}

fn grow_tree(z: &[Vec<f64>], y: &[bool], opts: &ForestOptions, seed: u64) -> Tree {
    let d = z[0].len();
    let mtry = opts.max_features.unwrap_or_else(|| (d as f64).sqrt().ceil() as usize);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = z.len();
    let samples: Vec<usize> = if opts.bootstrap {
        (0..n).map(|_| rng.gen_range(0..n)).collect()
    } else {
        (0..n).collect()
    };
    let mut g = Grower {
        z,
        y,
        weight: class_weights(y, opts.class_weighted),
        opts,
        mtry,
        rng,
        nodes: Vec::new(),
    };
    g.grow(&samples, 0);
    Tree { nodes: g.nodes }
}

/// Trees are grown in parallel from per-tree seeds drawn from `seed`, so the
/// forest does not depend on the thread count.
pub fn train_forest(
    names: &[String],
    x: &[Vec<f64>],
    y: &[bool],
    opts: &ForestOptions,
    seed: u64,
) -> Result<ClassifierModel, ClassifierError> {
    opts.validate()?;
    let d = check_matrix(x, y)?;
    if d != names.len() {
        return Err(ClassifierError::WrongArity { expected: names.len(), found: d });
    }
    let standardizer = Standardizer::fit(x);
    let z: Vec<Vec<f64>> = x.iter().map(|r| standardizer.transform(r)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tree_seeds: Vec<u64> = (0..opts.trees).map(|_| rng.gen()).collect();
    let trees = tree_seeds.par_iter().map(|&s| grow_tree(&z, y, opts, s)).collect();
    Ok(ClassifierModel {
        version: MODEL_VERSION,
        schema: names.to_vec(),
        standardizer,
        params: ModelParams::Forest { trees, tree_seeds },
        background: sample_background(x, seed),
    })
}
