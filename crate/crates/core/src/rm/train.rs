//! Mini-batch Adam training with early stopping.

use log::{debug, warn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;

use super::mlp::{
    bt_pair_accumulate, bt_pair_loss, clf_point_accumulate, clf_point_loss, MlpParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// Pairwise `−log σ(r̂(z⁺) − r̂(z⁻))`.
    Bt,
    /// Pointwise binary cross-entropy.
    Clf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainHyper {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub val_fraction: f64,
    pub batch_size: usize,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            hidden: vec![64, 32],
            lr: 1e-3,
            max_epochs: 30,
            patience: 3,
            val_fraction: 0.1,
            batch_size: 256,
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation fraction must lie in (0, 1), got {}",
                self.val_fraction
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Example {
    Pair { plus: Vec<f64>, minus: Vec<f64> },
    Point { z: Vec<f64>, y: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Epochs actually run.
    pub epochs: usize,
    /// Epoch whose parameters were returned (0 = initialization).
    pub best_epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    /// `(train, validation)` mean loss after each epoch.
    pub history: Vec<(f64, Option<f64>)>,
    pub degenerate: bool,
}

/// Split `0..n` into `(train, validation)` from a seed-shuffled order. The
/// validation part is the head of the shuffled order; at least one item is
/// kept for training, and none are held out when `n == 1`.
pub fn split_indices(
    n: usize,
    val_fraction: f64,
    rng: &mut SimRng,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if n == 0 {
        return Err(Error::Empty("training records"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let n_val = if n < 2 {
        0
    } else {
        ((val_fraction * n as f64).round() as usize).clamp(1, n - 1)
    };
    let train = idx.split_off(n_val);
    Ok((train, idx))
}

fn mean_loss(params: &MlpParams, set: &[Example]) -> f64 {
    let total: f64 = set
        .iter()
        .map(|e| match e {
            Example::Pair { plus, minus } => bt_pair_loss(params, plus, minus),
            Example::Point { z, y } => clf_point_loss(params, z, *y),
        })
        .sum();
    total / set.len() as f64
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + Self::EPS);
        }
    }
}

/// Train an MLP with input width `dim` on `train`, early-stopping on `val`
/// (or on the training loss when `val` is empty). Returns the parameters of
/// the best epoch.
pub fn train_mlp(
    train: &[Example],
    val: &[Example],
    dim: usize,
    hyper: &TrainHyper,
    rng: &mut SimRng,
) -> Result<(MlpParams, TrainReport)> {
    hyper.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training examples"));
    }
    let sizes = MlpParams::sizes_for(dim, &hyper.hidden);
    let mut params = MlpParams::glorot(&sizes, rng)?;

    let mut labels = train.iter().filter_map(|e| match e {
        Example::Point { y, .. } => Some(*y),
        Example::Pair { .. } => None,
    });
    let degenerate = match labels.next() {
        Some(first) => labels.all(|y| y == first),
        None => false,
    };
    if degenerate {
        warn!("all pointwise training labels belong to one class; the classifier can only learn the base rate");
    }

    let monitor = |p: &MlpParams| -> (f64, Option<f64>) {
        let tl = mean_loss(p, train);
        let vl = (!val.is_empty()).then(|| mean_loss(p, val));
        (tl, vl)
    };
    let key = |(tl, vl): (f64, Option<f64>)| vl.unwrap_or(tl);

    let (tl0, vl0) = monitor(&params);
    let mut best = (params.clone(), 0usize, tl0, vl0);
    let mut best_key = key((tl0, vl0));
    let mut history = Vec::new();
    let mut adam = Adam::new(params.len());
    let mut grad = vec![0.0; params.len()];
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut stale = 0;
    let mut epochs = 0;

    for epoch in 1..=hyper.max_epochs {
        epochs = epoch;
        order.shuffle(rng);
        for batch in order.chunks(hyper.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let w = 1.0 / batch.len() as f64;
            for &i in batch {
                match &train[i] {
                    Example::Pair { plus, minus } => {
                        bt_pair_accumulate(&params, plus, minus, w, &mut grad)?;
                    }
                    Example::Point { z, y } => {
                        clf_point_accumulate(&params, z, *y, w, &mut grad)?;
                    }
                }
            }
            adam.step(params.flat_mut(), &grad, hyper.lr);
        }
        let (tl, vl) = monitor(&params);
        history.push((tl, vl));
        debug!("epoch {epoch}: train {tl:.5} val {vl:?}");
        let k = key((tl, vl));
        if k < best_key {
            best_key = k;
            best = (params.clone(), epoch, tl, vl);
            stale = 0;
        } else {
            stale += 1;
            if stale >= hyper.patience {
                break;
            }
        }
    }

    let (params, best_epoch, train_loss, val_loss) = best;
    Ok((
        params,
        TrainReport {
            epochs,
            best_epoch,
            train_loss,
            val_loss,
            history,
            degenerate,
        },
    ))
}
