//! Bradley-Terry maximum likelihood for a finite set of players.

use std::io::{Read, Write};

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{sigmoid, softplus};
use crate::rng::SimRng;

/// Largest magnitude a fitted score may take.
pub const SCORE_CAP: f64 = 30.0;

/// One game between players `i` and `j`; `outcome` is 1 when `i` won.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArenaComparison {
    pub i: usize,
    pub j: usize,
    pub outcome: u8,
}

impl ArenaComparison {
    pub fn new(winner: usize, loser: usize) -> Self {
        ArenaComparison {
            i: winner,
            j: loser,
            outcome: 1,
        }
    }

    pub fn winner_loser(&self) -> (usize, usize) {
        if self.outcome == 1 {
            (self.i, self.j)
        } else {
            (self.j, self.i)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArenaScores {
    /// `scores[0]` is pinned to zero.
    pub scores: Vec<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
    /// Players whose estimate hit [`SCORE_CAP`] because they never lost or
    /// never won.
    pub capped: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArenaFitOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub initial_step: f64,
}

impl Default for ArenaFitOptions {
    fn default() -> Self {
        ArenaFitOptions {
            max_iter: 10_000,
            tol: 1e-8,
            initial_step: 1.0,
        }
    }
}

fn check(scores: &[f64], comps: &[ArenaComparison]) -> Result<()> {
    let k = scores.len();
    for c in comps {
        for idx in [c.i, c.j] {
            if idx >= k {
                return Err(Error::IndexOutOfRange { index: idx, len: k });
            }
        }
        if c.i == c.j {
            return Err(Error::Config(format!(
                "player {} compared with itself",
                c.i
            )));
        }
        if c.outcome > 1 {
            return Err(Error::Config(format!(
                "outcome must be 0 or 1, got {}",
                c.outcome
            )));
        }
    }
    Ok(())
}

/// `ℓ(S) = Σ [h (S_i − S_j) − log(1 + e^{S_i − S_j})]`.
pub fn arena_loglik(scores: &[f64], comps: &[ArenaComparison]) -> Result<f64> {
    check(scores, comps)?;
    Ok(loglik_unchecked(scores, comps))
}

fn loglik_unchecked(scores: &[f64], comps: &[ArenaComparison]) -> f64 {
    comps
        .iter()
        .map(|c| {
            let d = scores[c.i] - scores[c.j];
            c.outcome as f64 * d - softplus(d)
        })
        .sum()
}

/// Gradient of [`arena_loglik`] before the identification mask.
pub fn arena_grad_unmasked(scores: &[f64], comps: &[ArenaComparison]) -> Result<Vec<f64>> {
    check(scores, comps)?;
    Ok(grad_unchecked(scores, comps))
}

fn grad_unchecked(scores: &[f64], comps: &[ArenaComparison]) -> Vec<f64> {
    let mut g = vec![0.0; scores.len()];
    for c in comps {
        let r = c.outcome as f64 - sigmoid(scores[c.i] - scores[c.j]);
        g[c.i] += r;
        g[c.j] -= r;
    }
    g
}

/// Gradient of [`arena_loglik`] with coordinate 0 set to zero.
pub fn arena_grad(scores: &[f64], comps: &[ArenaComparison]) -> Result<Vec<f64>> {
    let mut g = arena_grad_unmasked(scores, comps)?;
    if let Some(g0) = g.first_mut() {
        *g0 = 0.0;
    }
    Ok(g)
}

/// Connected components of the comparison graph, each sorted ascending.
pub fn components(k: usize, comps: &[ArenaComparison]) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..k).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for c in comps {
        let (a, b) = (find(&mut parent, c.i), find(&mut parent, c.j));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; k];
    for v in 0..k {
        let r = find(&mut parent, v);
        if slot[r] == usize::MAX {
            slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[r]].push(v);
    }
    groups
}

fn project(s: &mut [f64]) {
    s[0] = 0.0;
    for x in s.iter_mut().skip(1) {
        *x = x.clamp(-SCORE_CAP, SCORE_CAP);
    }
}

/// Maximum-likelihood scores with `S_0 = 0`.
///
/// Uses projected gradient ascent with a Barzilai-Borwein trial step and
/// Armijo backtracking. Players that never lost (or never won) have no
/// finite MLE; their scores end at ±[`SCORE_CAP`] and a warning is logged.
pub fn fit_arena(
    comps: &[ArenaComparison],
    k: usize,
    opts: &ArenaFitOptions,
) -> Result<ArenaScores> {
    if k == 0 {
        return Err(Error::Empty("players"));
    }
    let mut s = vec![0.0; k];
    check(&s, comps)?;
    if k > 1 {
        let comp = components(k, comps);
        if comp.len() > 1 {
            return Err(Error::Disconnected { components: comp });
        }
    }

    let mut wins = vec![0usize; k];
    let mut losses = vec![0usize; k];
    // Games aggregated per unordered pair: (a, b, games, wins of a).
    let mut table = std::collections::BTreeMap::<(usize, usize), (f64, f64)>::new();
    for c in comps {
        let (w, l) = c.winner_loser();
        wins[w] += 1;
        losses[l] += 1;
        let e = table.entry((w.min(l), w.max(l))).or_insert((0.0, 0.0));
        e.0 += 1.0;
        if w < l {
            e.1 += 1.0;
        }
    }
    let pairs: Vec<(usize, usize, f64, f64)> = table
        .into_iter()
        .map(|((a, b), (n, w))| (a, b, n, w))
        .collect();
    let loglik = |s: &[f64]| -> f64 {
        pairs
            .iter()
            .map(|&(a, b, n, w)| {
                let d = s[a] - s[b];
                w * d - n * softplus(d)
            })
            .sum()
    };
    let masked_grad = |s: &[f64]| {
        let mut g = vec![0.0; k];
        for &(a, b, n, w) in &pairs {
            let r = w - n * sigmoid(s[a] - s[b]);
            g[a] += r;
            g[b] -= r;
        }
        g[0] = 0.0;
        g
    };
    // Projected gradient: zero components that push against an active bound.
    let stationarity = |s: &[f64], g: &[f64]| {
        g.iter()
            .zip(s)
            .map(|(&gi, &si)| {
                if (si >= SCORE_CAP && gi > 0.0) || (si <= -SCORE_CAP && gi < 0.0) {
                    0.0
                } else {
                    gi.abs()
                }
            })
            .fold(0.0, f64::max)
    };
    let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() };

    let mut f = loglik(&s);
    let mut g = masked_grad(&s);
    let mut step = opts.initial_step / (comps.len().max(1) as f64);
    let mut iterations = 0;
    let mut grad_norm = stationarity(&s, &g);
    while grad_norm >= opts.tol && iterations < opts.max_iter {
        iterations += 1;
        let mut t = step;
        let (s_new, f_new, g_new) = loop {
            let mut cand: Vec<f64> = s.iter().zip(&g).map(|(x, gi)| x + t * gi).collect();
            project(&mut cand);
            let fc = loglik(&cand);
            let gc = masked_grad(&cand);
            let ds: Vec<f64> = cand.iter().zip(&s).map(|(c, x)| c - x).collect();
            // Near the optimum the change in ℓ drowns in rounding; for a
            // concave ℓ, g(cand)·(cand − s) ≥ 0 certifies ℓ(cand) ≥ ℓ(s).
            if fc >= f + 1e-4 * dot(&ds, &g) || dot(&gc, &ds) >= 0.0 || t < 1e-30 {
                break (cand, fc, gc);
            }
            t *= 0.5;
        };
        let ds: Vec<f64> = s_new.iter().zip(&s).map(|(a, b)| a - b).collect();
        let dg: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&ds, &dg);
        let ss = dot(&ds, &ds);
        // Concave objective: sy < 0 along ascent, so the BB step is ss / -sy.
        step = if sy < 0.0 {
            (ss / -sy).min(1e6)
        } else {
            t * 2.0
        };
        let stalled = ss == 0.0;
        s = s_new;
        f = f_new;
        g = g_new;
        grad_norm = stationarity(&s, &g);
        if stalled {
            break;
        }
    }

    let mut capped = Vec::new();
    for p in 0..k {
        if wins[p] + losses[p] == 0 {
            continue;
        }
        if losses[p] == 0 || wins[p] == 0 {
            capped.push(p);
        }
    }
    if !capped.is_empty() {
        warn!(
            "players {capped:?} never lost or never won; their maximum-likelihood scores diverge and were capped at ±{SCORE_CAP}"
        );
    }
    let converged = grad_norm < opts.tol;
    if !converged {
        warn!("arena fit stopped after {iterations} iterations with gradient norm {grad_norm:e}");
    }
    Ok(ArenaScores {
        scores: s,
        iterations,
        grad_norm,
        converged,
        capped,
    })
}

/// Simulate `games_per_pair` games for every unordered pair of players.
pub fn simulate_round_robin(
    true_scores: &[f64],
    games_per_pair: usize,
    rng: &mut SimRng,
) -> Vec<ArenaComparison> {
    let k = true_scores.len();
    let mut out = Vec::with_capacity(k * (k.saturating_sub(1)) / 2 * games_per_pair);
    for a in 0..k {
        for b in (a + 1)..k {
            let p = sigmoid(true_scores[a] - true_scores[b]);
            for _ in 0..games_per_pair {
                let u: f64 = rng.random();
                out.push(ArenaComparison {
                    i: a,
                    j: b,
                    outcome: (u < p) as u8,
                });
            }
        }
    }
    out
}

/// Read `i,j,outcome` rows (with header).
pub fn read_comparisons_csv<R: Read>(r: R) -> Result<Vec<ArenaComparison>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

/// Write `player,score` rows.
pub fn write_scores_csv<W: Write>(scores: &[f64], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["player", "score"])?;
    for (p, s) in scores.iter().enumerate() {
        wtr.write_record([p.to_string(), format!("{s}")])?;
    }
    wtr.flush().map_err(|e| Error::io("<scores writer>", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;
    use proptest::prelude::*;
    use rand::Rng;

    fn inf_norm(v: &[f64]) -> f64 {
        v.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    fn random_instance(k: usize, n: usize, seed: u64) -> (Vec<f64>, Vec<ArenaComparison>) {
        let mut rng = RngState::new(seed).rng();
        let scores: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
        let comps = (0..n)
            .map(|_| {
                let i = rng.random_range(0..k);
                let mut j = rng.random_range(0..k - 1);
                if j >= i {
                    j += 1;
                }
                ArenaComparison {
                    i,
                    j,
                    outcome: rng.random_range(0..2u8),
                }
            })
            .collect();
        (scores, comps)
    }

    #[test]
    fn single_even_comparison() {
        let ll = arena_loglik(&[0.0, 0.0], &[ArenaComparison::new(0, 1)]).unwrap();
        assert!((ll - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn loglik_matches_product_oracle_and_is_shift_invariant() {
        let (s, comps) = random_instance(4, 50, 1);
        let oracle: f64 = comps
            .iter()
            .map(|c| {
                let p_i = (s[c.i]).exp() / ((s[c.i]).exp() + (s[c.j]).exp());
                if c.outcome == 1 {
                    p_i
                } else {
                    1.0 - p_i
                }
            })
            .product::<f64>()
            .ln();
        let ll = arena_loglik(&s, &comps).unwrap();
        assert!((ll - oracle).abs() < 1e-10, "{ll} vs {oracle}");
        let shifted: Vec<f64> = s.iter().map(|x| x + 3.7).collect();
        assert!((arena_loglik(&shifted, &comps).unwrap() - ll).abs() < 1e-10);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (s, comps) = random_instance(3, 40, 2);
        let g = arena_grad_unmasked(&s, &comps).unwrap();
        let h = 1e-5;
        let fd: Vec<f64> = (0..3)
            .map(|k| {
                let mut p = s.clone();
                let mut m = s.clone();
                p[k] += h;
                m[k] -= h;
                (arena_loglik(&p, &comps).unwrap() - arena_loglik(&m, &comps).unwrap()) / (2.0 * h)
            })
            .collect();
        let scale = inf_norm(&g).max(inf_norm(&fd));
        let err = g
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
            / scale;
        assert!(err < 1e-6, "{err}");
        assert!(g.iter().sum::<f64>().abs() < 1e-12);
        assert_eq!(arena_grad(&s, &comps).unwrap()[0], 0.0);
        assert_eq!(arena_grad(&s, &[]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn bad_indices_are_rejected() {
        let err = arena_loglik(&[0.0, 0.0], &[ArenaComparison::new(0, 2)]);
        assert!(matches!(
            err,
            Err(Error::IndexOutOfRange { index: 2, len: 2 })
        ));
    }

    #[test]
    fn two_player_closed_form() {
        let mut comps = vec![ArenaComparison::new(0, 1); 3];
        comps.push(ArenaComparison::new(1, 0));
        let fit = fit_arena(&comps, 2, &ArenaFitOptions::default()).unwrap();
        assert!(fit.converged);
        assert_eq!(fit.scores[0], 0.0);
        assert!(
            (fit.scores[0] - fit.scores[1] - 3f64.ln()).abs() < 1e-6,
            "{:?}",
            fit.scores
        );
    }

    #[test]
    fn balanced_outcomes_give_zero_scores() {
        let mut comps = Vec::new();
        for (a, b) in [(0, 1), (0, 2), (1, 2)] {
            comps.push(ArenaComparison::new(a, b));
            comps.push(ArenaComparison::new(b, a));
        }
        let fit = fit_arena(&comps, 3, &ArenaFitOptions::default()).unwrap();
        assert!(
            fit.scores.iter().all(|s| s.abs() < 1e-6),
            "{:?}",
            fit.scores
        );
    }

    #[test]
    fn disconnected_graph_names_components() {
        let comps = [ArenaComparison::new(0, 1), ArenaComparison::new(2, 3)];
        match fit_arena(&comps, 4, &ArenaFitOptions::default()) {
            Err(Error::Disconnected { components }) => {
                assert_eq!(components, vec![vec![0, 1], vec![2, 3]]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn undefeated_player_is_capped() {
        let comps = [
            ArenaComparison::new(1, 0),
            ArenaComparison::new(1, 2),
            ArenaComparison::new(0, 2),
            ArenaComparison::new(2, 0),
        ];
        let fit = fit_arena(&comps, 3, &ArenaFitOptions::default()).unwrap();
        assert_eq!(fit.capped, vec![1]);
        assert!(fit
            .scores
            .iter()
            .all(|s| s.is_finite() && s.abs() <= SCORE_CAP));
        assert!(fit.scores[1] > 10.0, "{:?}", fit.scores);
    }

    #[test]
    fn fit_is_order_invariant() {
        let truth = [0.0, 0.5, -1.0, 1.5];
        let mut comps = simulate_round_robin(&truth, 30, &mut RngState::new(3).rng());
        let a = fit_arena(&comps, 4, &ArenaFitOptions::default()).unwrap();
        comps.reverse();
        comps.swap(3, 40);
        let b = fit_arena(&comps, 4, &ArenaFitOptions::default()).unwrap();
        for (x, y) in a.scores.iter().zip(&b.scores) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn loglik_is_concave_along_lines(seed in 0u64..1000, t in 0.05f64..2.0) {
            let (s, comps) = random_instance(5, 60, seed);
            let mut rng = RngState::new(seed + 1).rng();
            let dir: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let at = |u: f64| {
                let p: Vec<f64> = s.iter().zip(&dir).map(|(a, d)| a + u * d).collect();
                arena_loglik(&p, &comps).unwrap()
            };
            let second = at(t) - 2.0 * at(0.0) + at(-t);
            prop_assert!(second <= 1e-9);
        }
    }
}
