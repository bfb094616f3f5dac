//! Order consistency, Best-of-N improvement and probability risks.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::annotate::{Label, PreferenceRecord};
use crate::error::{Error, Result};
use crate::rm::RewardModel;
use crate::rng::SimRng;
use crate::synth::{true_utility, GoldenRewardSpec, Split, SyntheticWorld};

/// Anything that maps an embedding to a real score.
pub trait Scorer {
    fn score(&self, z: &[f64]) -> Result<f64>;
}

impl Scorer for RewardModel {
    fn score(&self, z: &[f64]) -> Result<f64> {
        RewardModel::score(self, z)
    }
}

/// Adapts a closure into a [`Scorer`].
pub struct FnScorer<F>(pub F);

impl<F: Fn(&[f64]) -> f64> Scorer for FnScorer<F> {
    fn score(&self, z: &[f64]) -> Result<f64> {
        Ok((self.0)(z))
    }
}

/// Scores by the world's true utility function.
pub struct GoldenScorer<'a>(pub &'a GoldenRewardSpec);

impl Scorer for GoldenScorer<'_> {
    fn score(&self, z: &[f64]) -> Result<f64> {
        true_utility(self.0, z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reference {
    /// Sign of the golden utility difference.
    Golden,
    /// The recorded annotation.
    Annotated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcReport {
    pub value: f64,
    /// Pairs that entered the average.
    pub n_used: usize,
    /// Pairs with equal golden utility, excluded under [`Reference::Golden`].
    pub n_golden_ties: usize,
    /// Pairs with equal model scores, each counted as one half.
    pub n_score_ties: usize,
}

/// Fraction of pairs whose model ordering agrees with the reference.
pub fn order_consistency<S: Scorer + ?Sized>(
    scorer: &S,
    world: &SyntheticWorld,
    pairs: &[PreferenceRecord],
    reference: Reference,
) -> Result<OcReport> {
    if pairs.is_empty() {
        return Err(Error::Empty("evaluation pairs"));
    }
    let mut agree = 0.0;
    let mut used = 0usize;
    let mut golden_ties = 0usize;
    let mut score_ties = 0usize;
    for p in pairs {
        let l = world.item(p.left)?;
        let r = world.item(p.right)?;
        let ref_sign = match reference {
            Reference::Golden => {
                let d = l.golden_utility - r.golden_utility;
                if d == 0.0 {
                    golden_ties += 1;
                    continue;
                }
                d > 0.0
            }
            Reference::Annotated => p.h == Label::Left,
        };
        let d = scorer.score(l.embedding()?)? - scorer.score(r.embedding()?)?;
        used += 1;
        if d == 0.0 {
            score_ties += 1;
            agree += 0.5;
        } else if (d > 0.0) == ref_sign {
            agree += 1.0;
        }
    }
    if used == 0 {
        return Err(Error::Degenerate(
            "every evaluation pair is a golden tie".into(),
        ));
    }
    Ok(OcReport {
        value: agree / used as f64,
        n_used: used,
        n_golden_ties: golden_ties,
        n_score_ties: score_ties,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BonReport {
    pub n_candidates: usize,
    /// Golden utility of the selected candidate, per test prompt.
    pub selected: Vec<f64>,
    /// Mean golden utility of the sampled candidates, per test prompt.
    pub baseline: Vec<f64>,
    pub mean_improvement: f64,
    /// Standard error over prompts (`NaN` for a single prompt).
    pub se: f64,
    /// Improvement when selecting by golden utility.
    pub oracle_improvement: f64,
    pub oracle_se: f64,
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Best-of-N selection on every test prompt of `world`.
///
/// Draws `n` candidates without replacement, picks the highest model score
/// (ties to the lowest response id), and reports the selected golden
/// utility above the mean of the drawn candidates.
pub fn bon_improvement<S: Scorer + ?Sized>(
    scorer: &S,
    world: &SyntheticWorld,
    n: usize,
    rng: &mut SimRng,
) -> Result<BonReport> {
    if n == 0 {
        return Err(Error::Config("Best-of-N needs N >= 1".into()));
    }
    let groups = world.groups(Split::Test);
    if groups.is_empty() {
        return Err(Error::Empty("test prompts"));
    }
    let mut selected = Vec::with_capacity(groups.len());
    let mut baseline = Vec::with_capacity(groups.len());
    let mut gains = Vec::with_capacity(groups.len());
    let mut oracle = Vec::with_capacity(groups.len());
    for g in groups {
        if g.items.len() < n {
            return Err(Error::Config(format!(
                "Best-of-{n} needs {n} candidates but prompt {} has {}",
                g.prompt.prompt_id,
                g.items.len()
            )));
        }
        let mut drawn: Vec<usize> = sample(rng, g.items.len(), n).into_vec();
        drawn.sort_by_key(|&i| g.items[i].response_id);
        let mut best: Option<(f64, usize)> = None;
        let mut best_golden = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for &i in &drawn {
            let item = &g.items[i];
            let s = scorer.score(item.embedding()?)?;
            // Strict comparison keeps the lowest response id on ties.
            if best.is_none_or(|(b, _)| s > b) {
                best = Some((s, i));
            }
            best_golden = best_golden.max(item.golden_utility);
            sum += item.golden_utility;
        }
        let mean = sum / n as f64;
        let sel = g.items[best.unwrap().1].golden_utility;
        selected.push(sel);
        baseline.push(mean);
        gains.push(sel - mean);
        oracle.push(best_golden - mean);
    }
    let (mean_improvement, se) = mean_se(&gains);
    let (oracle_improvement, oracle_se) = mean_se(&oracle);
    Ok(BonReport {
        n_candidates: n,
        selected,
        baseline,
        mean_improvement,
        se,
        oracle_improvement,
        oracle_se,
    })
}

fn check_distribution(p: &[f64], what: &'static str) -> Result<()> {
    if p.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
        return Err(Error::Domain {
            what,
            value: p
                .iter()
                .copied()
                .find(|x| !(0.0..=1.0).contains(x))
                .unwrap(),
            reason: "entries must lie in [0, 1]",
        });
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::Domain {
            what,
            value: s,
            reason: "entries must sum to 1",
        });
    }
    Ok(())
}

fn check_pair(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::Dimension {
            expected: p.len(),
            got: q.len(),
        });
    }
    check_distribution(p, "true distribution")?;
    check_distribution(q, "estimated distribution")
}

/// `Σ_j p_j · min(B, log(p_j / q_j))` for one pair of distributions.
pub fn truncated_kl_single(p0: &[f64], phat: &[f64], b: f64) -> Result<f64> {
    if !(b >= 2.0) {
        return Err(Error::Domain {
            what: "truncation level",
            value: b,
            reason: "must be at least 2",
        });
    }
    check_pair(p0, phat)?;
    Ok(p0
        .iter()
        .zip(phat)
        .filter(|(p, _)| **p > 0.0)
        .map(|(&p, &q)| {
            let lr = if q == 0.0 {
                f64::INFINITY
            } else {
                (p / q).ln()
            };
            p * lr.min(b)
        })
        .sum())
}

/// Mean truncated KL risk over samples.
pub fn truncated_kl(p0: &[Vec<f64>], phat: &[Vec<f64>], b: f64) -> Result<f64> {
    if p0.len() != phat.len() {
        return Err(Error::Shape(format!(
            "{} true vs {} estimated distributions",
            p0.len(),
            phat.len()
        )));
    }
    if p0.is_empty() {
        return Err(Error::Empty("distributions"));
    }
    let mut total = 0.0;
    for (p, q) in p0.iter().zip(phat) {
        total += truncated_kl_single(p, q, b)?;
    }
    Ok(total / p0.len() as f64)
}

/// `Σ_j (√p_j − √q_j)²`.
pub fn hellinger_sq(p: &[f64], q: &[f64]) -> Result<f64> {
    check_pair(p, q)?;
    Ok(p.iter()
        .zip(q)
        .map(|(a, b)| (a.sqrt() - b.sqrt()).powi(2))
        .sum())
}

/// Plain KL divergence `Σ p log(p/q)`; infinite when `q` misses mass of `p`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    check_pair(p, q)?;
    Ok(p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(&a, &b)| {
            if b == 0.0 {
                f64::INFINITY
            } else {
                a * (a / b).ln()
            }
        })
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub b: f64,
    pub truncated_kl: f64,
    pub hellinger_sq: f64,
}

pub fn risk_report(p: &[f64], q: &[f64], b: f64) -> Result<RiskReport> {
    Ok(RiskReport {
        b,
        truncated_kl: truncated_kl_single(p, q, b)?,
        hellinger_sq: hellinger_sq(p, q)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotate::{annotate_dataset, build_pairs_in, AnnotatorSpec, PairingKind};
    use crate::rng::RngState;
    use crate::synth::{gen_world, WorldConfig};
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, Gamma};

    fn world(test_prompts: usize, cands: usize) -> SyntheticWorld {
        let cfg = WorldConfig {
            dim: 3,
            n_train_prompts: 2,
            n_test_prompts: test_prompts,
            k_per_prompt: 2,
            n_test_candidates: cands,
            ..WorldConfig::default()
        };
        gen_world(&cfg, &mut RngState::new(11).rng()).unwrap()
    }

    fn test_pairs(w: &SyntheticWorld, n: usize) -> Vec<PreferenceRecord> {
        let pairs = build_pairs_in(
            w.groups(Split::Test),
            PairingKind::SamePromptRandom,
            n,
            &mut RngState::new(1).rng(),
        )
        .unwrap();
        annotate_dataset(
            w,
            &pairs,
            &AnnotatorSpec::perfect(),
            &mut RngState::new(2).rng(),
        )
        .unwrap()
        .records
    }

    #[test]
    fn golden_negated_and_constant_models() {
        let w = world(5, 20);
        let pairs = test_pairs(&w, 500);
        let spec = w.reward_spec.clone();
        let golden = GoldenScorer(&spec);
        assert_eq!(
            order_consistency(&golden, &w, &pairs, Reference::Golden)
                .unwrap()
                .value,
            1.0
        );
        let neg = FnScorer(|z: &[f64]| -true_utility(&spec, z).unwrap());
        assert_eq!(
            order_consistency(&neg, &w, &pairs, Reference::Golden)
                .unwrap()
                .value,
            0.0
        );
        let constant = FnScorer(|_: &[f64]| 1.0);
        let r = order_consistency(&constant, &w, &pairs, Reference::Golden).unwrap();
        assert_eq!(r.value, 0.5);
        assert_eq!(r.n_score_ties, r.n_used);
        // A perfect annotator agrees with golden, so the references coincide.
        assert_eq!(
            order_consistency(&golden, &w, &pairs, Reference::Annotated)
                .unwrap()
                .value,
            1.0
        );
        assert!(order_consistency(&golden, &w, &[], Reference::Golden).is_err());
    }

    #[test]
    fn order_consistency_invariant_under_monotone_maps() {
        let w = world(5, 20);
        let pairs = test_pairs(&w, 500);
        let base = |z: &[f64]| z[0] - 0.7 * z[1] + 0.2 * z[2];
        let oc = |s: &dyn Scorer| {
            order_consistency(s, &w, &pairs, Reference::Golden)
                .unwrap()
                .value
        };
        let a = oc(&FnScorer(base));
        assert_eq!(a, oc(&FnScorer(|z: &[f64]| 2.0 * base(z) + 1.0)));
        assert_eq!(a, oc(&FnScorer(|z: &[f64]| base(z).powi(3))));
        assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn bon_limits() {
        let w = world(20, 16);
        let spec = w.reward_spec.clone();
        let r = bon_improvement(&GoldenScorer(&spec), &w, 1, &mut RngState::new(3).rng()).unwrap();
        assert!(r.selected.iter().zip(&r.baseline).all(|(s, b)| s == b));
        assert_eq!(r.mean_improvement, 0.0);

        let r = bon_improvement(&GoldenScorer(&spec), &w, 8, &mut RngState::new(4).rng()).unwrap();
        assert_eq!(r.mean_improvement, r.oracle_improvement);
        assert!(r.mean_improvement > 0.0);

        let base = |z: &[f64]| z[0] + z[1];
        let a = bon_improvement(&FnScorer(base), &w, 8, &mut RngState::new(5).rng()).unwrap();
        let b = bon_improvement(
            &FnScorer(|z: &[f64]| base(z).powi(3) * 4.0 - 1.0),
            &w,
            8,
            &mut RngState::new(5).rng(),
        )
        .unwrap();
        assert_eq!(a, b);
        assert!(a.mean_improvement <= a.oracle_improvement + 1e-12);

        assert!(bon_improvement(&FnScorer(base), &w, 17, &mut RngState::new(5).rng()).is_err());
    }

    #[test]
    fn constant_model_bon_is_null() {
        let w = world(10_000, 4);
        let r = bon_improvement(
            &FnScorer(|_: &[f64]| 0.0),
            &w,
            4,
            &mut RngState::new(6).rng(),
        )
        .unwrap();
        assert!(
            r.mean_improvement.abs() < 3.0 * r.se,
            "{} ± {}",
            r.mean_improvement,
            r.se
        );
    }

    #[test]
    fn risk_examples() {
        let e5 = (-5f64).exp();
        assert_eq!(
            truncated_kl(&[vec![0.3, 0.7]], &[vec![0.3, 0.7]], 2.0).unwrap(),
            0.0
        );
        assert!(
            (truncated_kl(&[vec![1.0, 0.0]], &[vec![0.5, 0.5]], 2.0).unwrap() - 2f64.ln()).abs()
                < 1e-15
        );
        assert_eq!(
            truncated_kl(&[vec![1.0, 0.0]], &[vec![e5, 1.0 - e5]], 2.0).unwrap(),
            2.0
        );
        assert!(truncated_kl(&[vec![1.0, 0.0]], &[vec![0.5, 0.5]], 1.5).is_err());
        assert!(truncated_kl(&[vec![1.0, 0.0]], &[vec![0.5, 0.5, 0.0]], 2.0).is_err());
        assert_eq!(hellinger_sq(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        assert_eq!(hellinger_sq(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 2.0);
    }

    fn dirichlet(k: usize, rng: &mut SimRng) -> Vec<f64> {
        let g = Gamma::new(1.0, 1.0).unwrap();
        let x: Vec<f64> = (0..k).map(|_| g.sample(rng)).collect();
        let s: f64 = x.iter().sum();
        x.into_iter().map(|v| v / s).collect()
    }

    proptest! {
        #[test]
        fn truncated_kl_nonnegative_and_exact_when_untruncated(seed in 0u64..10_000, k in 2usize..6) {
            let mut rng = RngState::new(seed).rng();
            let p = dirichlet(k, &mut rng);
            let q = dirichlet(k, &mut rng);
            let t = truncated_kl_single(&p, &q, 2.0).unwrap();
            prop_assert!(t >= -1e-15);
            let max_lr = p.iter().zip(&q).filter(|(a, _)| **a > 0.0).map(|(a, b)| (a / b).ln()).fold(f64::MIN, f64::max);
            if max_lr <= 2.0 {
                prop_assert!((t - kl_divergence(&p, &q).unwrap()).abs() < 1e-12);
            }
        }

        #[test]
        fn hellinger_below_truncated_kl(seed in 0u64..10_000) {
            // Σ(√p − √q)² ≤ KL_B holds; the factor ½ does not (see the
            // acceptance suite).
            let mut rng = RngState::new(seed).rng();
            let k = rng.random_range(2..6);
            let p = dirichlet(k, &mut rng);
            let q = dirichlet(k, &mut rng);
            prop_assert!(hellinger_sq(&p, &q).unwrap() <= truncated_kl_single(&p, &q, 2.0).unwrap() + 1e-12);
        }
    }
}
