//! Gradient-boosted regression trees on the logistic loss.

use log::debug;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{logit, sigmoid, softplus};

use super::Point;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtHyper {
    pub n_trees: usize,
    pub max_depth: usize,
    pub shrinkage: f64,
    pub min_leaf: usize,
}

impl Default for GbtHyper {
    fn default() -> Self {
        GbtHyper {
            n_trees: 100,
            max_depth: 4,
            shrinkage: 0.1,
            min_leaf: 20,
        }
    }
}

impl GbtHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.shrinkage > 0.0 && self.shrinkage <= 1.0) {
            return Err(Error::Config(format!(
                "shrinkage must lie in (0, 1], got {}",
                self.shrinkage
            )));
        }
        if self.min_leaf == 0 {
            return Err(Error::Config("min_leaf must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Nodes in preorder; `nodes[0]` is the root. Samples with
/// `z[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, z: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if z[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }

    fn validate(&self, dim: usize, max_depth: usize) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Shape("tree without nodes".into()));
        }
        // Children must come after their parent, which also rules out cycles.
        for (i, n) in self.nodes.iter().enumerate() {
            match *n {
                Node::Leaf { value } if !value.is_finite() => {
                    return Err(Error::Shape(format!("non-finite leaf value at node {i}")));
                }
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if feature >= dim {
                        return Err(Error::Shape(format!(
                            "split feature {feature} >= dimension {dim}"
                        )));
                    }
                    if !threshold.is_finite()
                        || left <= i
                        || right <= i
                        || left >= self.nodes.len()
                        || right >= self.nodes.len()
                    {
                        return Err(Error::Shape(format!("malformed split at node {i}")));
                    }
                }
                _ => {}
            }
        }
        if self.depth() > max_depth {
            return Err(Error::Shape(format!(
                "tree depth {} exceeds {max_depth}",
                self.depth()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtEnsemble {
    pub dim: usize,
    pub init: f64,
    pub shrinkage: f64,
    pub max_depth: usize,
    pub trees: Vec<Tree>,
}

impl GbtEnsemble {
    /// Log-odds score `init + shrinkage · Σ tree(z)`.
    pub fn score(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: z.len(),
            });
        }
        Ok(self.init + self.shrinkage * self.trees.iter().map(|t| t.predict(z)).sum::<f64>())
    }

    pub fn validate(&self) -> Result<()> {
        if !self.init.is_finite() || !(self.shrinkage > 0.0) {
            return Err(Error::Shape(
                "invalid ensemble base score or shrinkage".into(),
            ));
        }
        for t in &self.trees {
            t.validate(self.dim, self.max_depth)?;
        }
        Ok(())
    }
}

/// Mean logistic loss of scores against labels.
pub fn logistic_loss(scores: &[f64], labels: &[f64]) -> f64 {
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| softplus(s) - y * s)
        .sum();
    total / scores.len() as f64
}

struct Builder<'a> {
    x: &'a [&'a [f64]],
    resid: &'a [f64],
    hess: &'a [f64],
    labels: &'a [f64],
    scores: &'a [f64],
    hyper: &'a GbtHyper,
    nodes: Vec<Node>,
    /// (node index, samples) for every leaf, in creation order.
    leaves: Vec<(usize, Vec<usize>)>,
}

impl Builder<'_> {
    /// `sorted[f]` lists this node's samples ordered by feature `f`.
    fn grow(&mut self, sorted: Vec<Vec<usize>>, depth: usize) -> usize {
        let idx = self.nodes.len();
        self.nodes.push(Node::Leaf { value: 0.0 });
        let n = sorted[0].len();
        let best = if depth < self.hyper.max_depth && n >= 2 * self.hyper.min_leaf {
            self.best_split(&sorted)
        } else {
            None
        };
        match best {
            None => {
                let value = self.leaf_value(&sorted[0]);
                self.nodes[idx] = Node::Leaf { value };
                self.leaves.push((idx, sorted[0].clone()));
            }
            Some((feature, threshold)) => {
                let mut goes_left = vec![false; self.x.len()];
                for &i in &sorted[0] {
                    goes_left[i] = self.x[i][feature] <= threshold;
                }
                let (mut l, mut r) = (
                    Vec::with_capacity(sorted.len()),
                    Vec::with_capacity(sorted.len()),
                );
                for list in sorted {
                    let (a, b): (Vec<usize>, Vec<usize>) =
                        list.into_iter().partition(|&i| goes_left[i]);
                    l.push(a);
                    r.push(b);
                }
                let left = self.grow(l, depth + 1);
                let right = self.grow(r, depth + 1);
                self.nodes[idx] = Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                };
            }
        }
        idx
    }

    /// Least-squares split on the residuals honoring `min_leaf`.
    fn best_split(&self, sorted: &[Vec<usize>]) -> Option<(usize, f64)> {
        let n = sorted[0].len();
        let total: f64 = sorted[0].iter().map(|&i| self.resid[i]).sum();
        let base = total * total / n as f64;
        let mut best: Option<(f64, usize, f64)> = None;
        for (f, list) in sorted.iter().enumerate() {
            let mut left_sum = 0.0;
            for pos in 0..n - 1 {
                left_sum += self.resid[list[pos]];
                let nl = pos + 1;
                let nr = n - nl;
                if nl < self.hyper.min_leaf || nr < self.hyper.min_leaf {
                    continue;
                }
                let (a, b) = (self.x[list[pos]][f], self.x[list[pos + 1]][f]);
                if a == b {
                    continue;
                }
                let right_sum = total - left_sum;
                let gain =
                    left_sum * left_sum / nl as f64 + right_sum * right_sum / nr as f64 - base;
                if gain > 1e-12 && best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, f, a + 0.5 * (b - a)));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }

    fn leaf_value(&self, samples: &[usize]) -> f64 {
        let g: f64 = samples.iter().map(|&i| self.resid[i]).sum();
        let h: f64 = samples.iter().map(|&i| self.hess[i]).sum();
        let mut v = g / h.max(1e-12);
        // Halve the step until the leaf's own loss does not increase; leaves
        // partition the data, so the total training loss is then monotone.
        let leaf_loss = |shift: f64| -> f64 {
            samples
                .iter()
                .map(|&i| {
                    let s = self.scores[i] + shift;
                    softplus(s) - self.labels[i] * s
                })
                .sum()
        };
        let before = leaf_loss(0.0);
        let mut tries = 0;
        while leaf_loss(self.hyper.shrinkage * v) > before {
            v *= 0.5;
            tries += 1;
            if tries == 50 {
                return 0.0;
            }
        }
        v
    }
}

/// Fit a boosted ensemble. Returns the ensemble and the training loss
/// after each stage (index 0 is the base score alone).
pub fn train_gbt(points: &[Point], hyper: &GbtHyper) -> Result<(GbtEnsemble, Vec<f64>)> {
    hyper.validate()?;
    if points.is_empty() {
        return Err(Error::Empty("training points"));
    }
    let dim = points[0].embedding.len();
    if let Some(p) = points.iter().find(|p| p.embedding.len() != dim) {
        return Err(Error::Dimension {
            expected: dim,
            got: p.embedding.len(),
        });
    }
    let labels: Vec<f64> = points.iter().map(|p| p.label as f64).collect();
    let positives = labels.iter().sum::<f64>();
    let frac = positives / labels.len() as f64;
    let init = logit(frac).map_err(|_| {
        Error::Degenerate(format!(
            "boosting needs both classes; all {} points have label {}",
            points.len(),
            points[0].label
        ))
    })?;

    let x: Vec<&[f64]> = points.iter().map(|p| p.embedding.as_slice()).collect();
    let mut presorted: Vec<Vec<usize>> = Vec::with_capacity(dim);
    for f in 0..dim {
        let mut idx: Vec<usize> = (0..x.len()).collect();
        idx.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]).then(a.cmp(&b)));
        presorted.push(idx);
    }

    let mut scores = vec![init; points.len()];
    let mut losses = vec![logistic_loss(&scores, &labels)];
    let mut trees = Vec::with_capacity(hyper.n_trees);
    for stage in 0..hyper.n_trees {
        let probs: Vec<f64> = scores.iter().map(|&s| sigmoid(s)).collect();
        let resid: Vec<f64> = labels.iter().zip(&probs).map(|(y, p)| y - p).collect();
        let hess: Vec<f64> = probs.iter().map(|p| p * (1.0 - p)).collect();
        let mut b = Builder {
            x: &x,
            resid: &resid,
            hess: &hess,
            labels: &labels,
            scores: &scores,
            hyper,
            nodes: Vec::new(),
            leaves: Vec::new(),
        };
        b.grow(presorted.clone(), 0);
        let tree = Tree { nodes: b.nodes };
        for (node, samples) in &b.leaves {
            if let Node::Leaf { value } = tree.nodes[*node] {
                for &i in samples {
                    scores[i] += hyper.shrinkage * value;
                }
            }
        }
        let loss = logistic_loss(&scores, &labels);
        debug!("boosting stage {stage}: loss {loss:.6}");
        losses.push(loss);
        trees.push(tree);
    }
    Ok((
        GbtEnsemble {
            dim,
            init,
            shrinkage: hyper.shrinkage,
            max_depth: hyper.max_depth,
            trees,
        },
        losses,
    ))
}
