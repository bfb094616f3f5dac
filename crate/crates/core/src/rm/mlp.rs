//! Fully connected network with ReLU hidden layers and a scalar output.
//!
//! Parameters live in one flat vector, layer by layer: the weight matrix
//! (row-major, `out × in`) followed by the bias vector.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{sigmoid, softplus};
use crate::rng::SimRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `acts[0]` is the input, `acts[l]` the post-activation of layer `l`.
    acts: Vec<Vec<f64>>,
}

fn n_params(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

fn check_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(Error::Shape(
            "network needs an input and an output layer".into(),
        ));
    }
    if sizes.contains(&0) {
        return Err(Error::Shape(format!("zero-width layer in {sizes:?}")));
    }
    if *sizes.last().unwrap() != 1 {
        return Err(Error::Shape(format!(
            "output width must be 1, got {sizes:?}"
        )));
    }
    Ok(())
}

impl MlpParams {
    /// Layer sizes `[input, hidden..., 1]`.
    pub fn sizes_for(input: usize, hidden: &[usize]) -> Vec<usize> {
        let mut s = Vec::with_capacity(hidden.len() + 2);
        s.push(input);
        s.extend_from_slice(hidden);
        s.push(1);
        s
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        check_sizes(sizes)?;
        Ok(MlpParams {
            sizes: sizes.to_vec(),
            params: vec![0.0; n_params(sizes)],
        })
    }

    /// Weights uniform in `±√(6 / (fan_in + fan_out))`, biases zero.
    pub fn glorot(sizes: &[usize], rng: &mut SimRng) -> Result<Self> {
        let mut p = MlpParams::zeros(sizes)?;
        let mut off = 0;
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for x in &mut p.params[off..off + fan_in * fan_out] {
                *x = rng.random_range(-a..a);
            }
            off += fan_in * fan_out + fan_out;
        }
        Ok(p)
    }

    pub fn from_flat(sizes: Vec<usize>, params: Vec<f64>) -> Result<Self> {
        check_sizes(&sizes)?;
        let expected = n_params(&sizes);
        if params.len() != expected {
            return Err(Error::Shape(format!(
                "layer sizes {sizes:?} need {expected} parameters, got {}",
                params.len()
            )));
        }
        if params.iter().any(|x| !x.is_finite()) {
            return Err(Error::Shape("non-finite parameter".into()));
        }
        Ok(MlpParams { sizes, params })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn flat(&self) -> &[f64] {
        &self.params
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    fn check_input(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.sizes[0] {
            return Err(Error::Dimension {
                expected: self.sizes[0],
                got: z.len(),
            });
        }
        Ok(())
    }

    /// Scalar output for one embedding.
    pub fn score(&self, z: &[f64]) -> Result<f64> {
        self.check_input(z)?;
        Ok(self.forward_unchecked(z))
    }

    fn forward_unchecked(&self, z: &[f64]) -> f64 {
        let mut cur = z.to_vec();
        let mut next = Vec::new();
        let mut off = 0;
        let n_layers = self.sizes.len() - 1;
        for l in 0..n_layers {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + fan_in * fan_out];
            let b = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            next.clear();
            for o in 0..fan_out {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                let mut a = b[o];
                for (wi, xi) in row.iter().zip(&cur) {
                    a += wi * xi;
                }
                next.push(if l + 1 < n_layers { a.max(0.0) } else { a });
            }
            std::mem::swap(&mut cur, &mut next);
            off += fan_in * fan_out + fan_out;
        }
        cur[0]
    }

    pub fn forward(&self, z: &[f64]) -> Result<(f64, ForwardCache)> {
        self.check_input(z)?;
        let n_layers = self.sizes.len() - 1;
        let mut acts = Vec::with_capacity(n_layers + 1);
        acts.push(z.to_vec());
        let mut off = 0;
        for l in 0..n_layers {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + fan_in * fan_out];
            let b = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            let x = &acts[l];
            let out: Vec<f64> = (0..fan_out)
                .map(|o| {
                    let row = &w[o * fan_in..(o + 1) * fan_in];
                    let a = row.iter().zip(x).fold(b[o], |acc, (wi, xi)| acc + wi * xi);
                    if l + 1 < n_layers {
                        a.max(0.0)
                    } else {
                        a
                    }
                })
                .collect();
            acts.push(out);
            off += fan_in * fan_out + fan_out;
        }
        let y = acts[n_layers][0];
        Ok((y, ForwardCache { acts }))
    }

    /// Add `dout · ∂output/∂params` into `grad`.
    pub fn backward(&self, cache: &ForwardCache, dout: f64, grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.params.len());
        let n_layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for l in 0..n_layers {
            offsets.push(off);
            off += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        let mut delta = vec![dout];
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let x = &cache.acts[l];
            for o in 0..fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let g_row = &mut grad[off + o * fan_in..off + (o + 1) * fan_in];
                for (g, xi) in g_row.iter_mut().zip(x) {
                    *g += d * xi;
                }
                grad[off + fan_in * fan_out + o] += d;
            }
            if l == 0 {
                break;
            }
            let w = &self.params[off..off + fan_in * fan_out];
            let mut prev = vec![0.0; fan_in];
            for o in 0..fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                for (p, wi) in prev.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                    *p += d * wi;
                }
            }
            // ReLU derivative, taken as 0 at the kink.
            for (p, a) in prev.iter_mut().zip(x) {
                if *a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }
}

/// `P̂(a ≻ b) = σ(r̂(a) − r̂(b))`. Computed so that `P̂(a ≻ b) + P̂(b ≻ a)`
/// is exactly 1.
pub fn bt_prob(params: &MlpParams, a: &[f64], b: &[f64]) -> Result<f64> {
    let d = params.score(a)? - params.score(b)?;
    Ok(antisymmetric_sigmoid(d))
}

pub(crate) fn antisymmetric_sigmoid(d: f64) -> f64 {
    if d >= 0.0 {
        sigmoid(d)
    } else {
        1.0 - sigmoid(-d)
    }
}

/// Loss `−log σ(r̂(z⁺) − r̂(z⁻))` and its gradient over the parameters.
pub fn bt_pair_loss_grad(
    params: &MlpParams,
    z_plus: &[f64],
    z_minus: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; params.len()];
    let loss = bt_pair_accumulate(params, z_plus, z_minus, 1.0, &mut grad)?;
    Ok((loss, grad))
}

/// Binary cross-entropy of `σ(r̂(z))` against `y` and its gradient.
pub fn clf_point_loss_grad(params: &MlpParams, z: &[f64], y: f64) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; params.len()];
    let loss = clf_point_accumulate(params, z, y, 1.0, &mut grad)?;
    Ok((loss, grad))
}

pub(crate) fn bt_pair_accumulate(
    params: &MlpParams,
    z_plus: &[f64],
    z_minus: &[f64],
    weight: f64,
    grad: &mut [f64],
) -> Result<f64> {
    let (sp, cp) = params.forward(z_plus)?;
    let (sm, cm) = params.forward(z_minus)?;
    let d = sp - sm;
    let dl = -sigmoid(-d) * weight;
    params.backward(&cp, dl, grad);
    params.backward(&cm, -dl, grad);
    Ok(softplus(-d))
}

pub(crate) fn clf_point_accumulate(
    params: &MlpParams,
    z: &[f64],
    y: f64,
    weight: f64,
    grad: &mut [f64],
) -> Result<f64> {
    if y != 0.0 && y != 1.0 {
        return Err(Error::Domain {
            what: "class label",
            value: y,
            reason: "must be 0 or 1",
        });
    }
    let (s, cache) = params.forward(z)?;
    params.backward(&cache, (sigmoid(s) - y) * weight, grad);
    Ok(softplus(s) - y * s)
}

pub(crate) fn bt_pair_loss(params: &MlpParams, z_plus: &[f64], z_minus: &[f64]) -> f64 {
    softplus(-(params.forward_unchecked(z_plus) - params.forward_unchecked(z_minus)))
}

pub(crate) fn clf_point_loss(params: &MlpParams, z: &[f64], y: f64) -> f64 {
    let s = params.forward_unchecked(z);
    softplus(s) - y * s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;

    fn rand_vec(n: usize, rng: &mut SimRng) -> Vec<f64> {
        (0..n).map(|_| rng.random::<f64>()).collect()
    }

    /// Independent forward pass over explicit nested matrices.
    fn naive_forward(p: &MlpParams, z: &[f64]) -> f64 {
        let sizes = p.sizes();
        let flat = p.flat();
        let mut x = z.to_vec();
        let mut k = 0;
        for l in 0..sizes.len() - 1 {
            let mut w = vec![vec![0.0; sizes[l]]; sizes[l + 1]];
            for row in w.iter_mut() {
                for v in row.iter_mut() {
                    *v = flat[k];
                    k += 1;
                }
            }
            let b: Vec<f64> = flat[k..k + sizes[l + 1]].to_vec();
            k += sizes[l + 1];
            let mut y: Vec<f64> = w
                .iter()
                .zip(&b)
                .map(|(row, bi)| row.iter().zip(&x).fold(*bi, |acc, (a, c)| acc + a * c))
                .collect();
            if l + 2 < sizes.len() {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            x = y;
        }
        x[0]
    }

    fn fd_rel_error(analytic: &[f64], f: impl Fn(&[f64]) -> f64, at: &[f64]) -> f64 {
        let h = 1e-5;
        let mut p = at.to_vec();
        let mut max_diff: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for k in 0..at.len() {
            p[k] = at[k] + h;
            let fp = f(&p);
            p[k] = at[k] - h;
            let fm = f(&p);
            p[k] = at[k];
            let fd = (fp - fm) / (2.0 * h);
            max_diff = max_diff.max((fd - analytic[k]).abs());
            scale = scale.max(fd.abs()).max(analytic[k].abs());
        }
        if scale == 0.0 {
            0.0
        } else {
            max_diff / scale
        }
    }

    #[test]
    fn zero_network_scores_zero() {
        let p = MlpParams::zeros(&[4, 8, 1]).unwrap();
        assert_eq!(p.score(&[0.3, 0.1, 0.9, 0.2]).unwrap(), 0.0);
    }

    #[test]
    fn linear_network_is_dot_product() {
        let w = vec![0.5, -1.25, 2.0];
        let mut flat = w.clone();
        flat.push(0.0);
        let p = MlpParams::from_flat(vec![3, 1], flat).unwrap();
        let z = [0.2, 0.4, 0.8];
        let expect: f64 = w.iter().zip(&z).map(|(a, b)| a * b).sum();
        assert_eq!(p.score(&z).unwrap(), expect);
    }

    #[test]
    fn forward_matches_naive_oracle() {
        let mut rng = RngState::new(5).rng();
        for _ in 0..50 {
            let p = MlpParams::glorot(&[6, 7, 5, 1], &mut rng).unwrap();
            let mut p = p.clone();
            for x in p.flat_mut().iter_mut() {
                *x += rng.random_range(-0.1..0.1);
            }
            let z = rand_vec(6, &mut rng);
            let a = p.score(&z).unwrap();
            assert!((a - naive_forward(&p, &z)).abs() < 1e-12);
            assert_eq!(p.forward(&z).unwrap().0, a);
        }
    }

    #[test]
    fn dimension_errors() {
        let p = MlpParams::zeros(&[3, 1]).unwrap();
        assert!(matches!(
            p.score(&[1.0]),
            Err(Error::Dimension {
                expected: 3,
                got: 1
            })
        ));
        assert!(MlpParams::zeros(&[3, 2]).is_err());
        assert!(MlpParams::from_flat(vec![3, 1], vec![0.0; 3]).is_err());
    }

    #[test]
    fn bt_loss_identities() {
        let mut rng = RngState::new(6).rng();
        let p = MlpParams::glorot(&[4, 5, 1], &mut rng).unwrap();
        let z = rand_vec(4, &mut rng);
        let (l, g) = bt_pair_loss_grad(&p, &z, &z).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-15);
        assert!(g.iter().all(|x| x.abs() < 1e-15));

        let a = rand_vec(4, &mut rng);
        let b = rand_vec(4, &mut rng);
        let d = p.score(&a).unwrap() - p.score(&b).unwrap();
        let (swapped, _) = bt_pair_loss_grad(&p, &b, &a).unwrap();
        assert!((swapped - (-(1.0 - sigmoid(d)).ln())).abs() < 1e-12);
        let pab = bt_prob(&p, &a, &b).unwrap();
        let pba = bt_prob(&p, &b, &a).unwrap();
        assert_eq!(pab + pba, 1.0);
        assert_eq!(pba, 1.0 - pab);
    }

    #[test]
    fn clf_loss_identities() {
        let p = MlpParams::zeros(&[2, 3, 1]).unwrap();
        for y in [0.0, 1.0] {
            let (l, _) = clf_point_loss_grad(&p, &[0.1, 0.2], y).unwrap();
            assert!((l - 2f64.ln()).abs() < 1e-15);
        }
        let p = MlpParams::from_flat(vec![1, 1], vec![0.0, 30.0]).unwrap();
        assert!(clf_point_loss_grad(&p, &[0.5], 1.0).unwrap().0 < 1e-12);
        assert!(clf_point_loss_grad(&p, &[0.5], 0.5).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = RngState::new(7).rng();
        for _ in 0..100 {
            // Random biases too: with zero biases a dead layer puts the next
            // one exactly on the ReLU kink.
            let mut p = MlpParams::glorot(&[3, 6, 4, 1], &mut rng).unwrap();
            for x in p.flat_mut().iter_mut() {
                *x += rng.random_range(-0.3..0.3);
            }
            let a = rand_vec(3, &mut rng);
            let b = rand_vec(3, &mut rng);
            let sizes = p.sizes().to_vec();
            let (_, g) = bt_pair_loss_grad(&p, &a, &b).unwrap();
            let f = |x: &[f64]| {
                let q = MlpParams::from_flat(sizes.clone(), x.to_vec()).unwrap();
                bt_pair_loss(&q, &a, &b)
            };
            let e = fd_rel_error(&g, f, p.flat());
            assert!(e < 1e-4, "bt {e}");

            let y = (rng.random::<bool>()) as u8 as f64;
            let (_, g) = clf_point_loss_grad(&p, &a, y).unwrap();
            let f = |x: &[f64]| {
                let q = MlpParams::from_flat(sizes.clone(), x.to_vec()).unwrap();
                clf_point_loss(&q, &a, y)
            };
            let e = fd_rel_error(&g, f, p.flat());
            assert!(e < 1e-4, "clf {e}");
        }
    }
}
