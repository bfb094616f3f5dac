//! Closed-form and Monte Carlo checks of annotation-quality results.

mod quad;

use log::warn;
use rand::Rng;
use rand_distr::{Open01, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{erf, logit, sigmoid};
use crate::rng::SimRng;
use crate::synth::PromptPrior;

pub use quad::{integrate, QuadResult, QuadratureSpec};

const SQRT_PI: f64 = 1.772_453_850_905_516;

fn domain(what: &'static str, value: f64, reason: &'static str) -> Error {
    Error::Domain {
        what,
        value,
        reason,
    }
}

/// Density of `τ = σ(|ρ|)`, `ρ ~ N(0, 2b)`, at `t ∈ [0.5, 1)`, where
/// `b = β²σ²`.
pub fn f_tau_pdf(t: f64, beta_sigma_sq: f64) -> Result<f64> {
    if !(0.5..1.0).contains(&t) {
        return Err(domain("f_tau argument", t, "must lie in [0.5, 1)"));
    }
    if !(beta_sigma_sq > 0.0 && beta_sigma_sq.is_finite()) {
        return Err(domain(
            "beta^2 sigma^2",
            beta_sigma_sq,
            "must be positive and finite",
        ));
    }
    let l = logit(t)?;
    Ok((-l * l / (4.0 * beta_sigma_sq)).exp()
        / ((std::f64::consts::PI * beta_sigma_sq).sqrt() * t * (1.0 - t)))
}

/// `E[σ(|ρ|)]` for `ρ ~ N(0, v)`.
pub fn q_pair_from_diff_variance(v: f64) -> Result<f64> {
    if !(v >= 0.0 && v.is_finite()) {
        return Err(domain(
            "difference variance",
            v,
            "must be finite and non-negative",
        ));
    }
    if v == 0.0 {
        return Ok(0.5);
    }
    let s = v.sqrt();
    // 2 ∫_0^∞ σ(x) φ(x/s)/s dx, with the tail beyond 40 s below 1e-300.
    let spec = QuadratureSpec {
        tol: 1e-12,
        max_subdivisions: 10_000,
    };
    let r = integrate(
        |u: f64| 2.0 * sigmoid(s * u) * crate::math::std_normal_pdf(u),
        0.0,
        40.0,
        &spec,
    )?;
    Ok(r.value)
}

/// Same-prompt pair quality `E[σ(β|r₁ − r₂|)]` for `r ~ N(μ, σ²)`, as a
/// function of `b = β²σ²`; the difference has variance `2b`.
pub fn q_pair(beta_sigma_sq: f64) -> Result<f64> {
    if !(beta_sigma_sq >= 0.0) {
        return Err(domain(
            "beta^2 sigma^2",
            beta_sigma_sq,
            "must be non-negative",
        ));
    }
    q_pair_from_diff_variance(2.0 * beta_sigma_sq)
}

/// `E|X₁ − X₂|` for independent `X_i ~ N(μ_i, σ_i²)` (folded-normal mean).
pub fn expected_abs_gaussian_diff(mu1: f64, sigma1: f64, mu2: f64, sigma2: f64) -> Result<f64> {
    if !(sigma1 >= 0.0) {
        return Err(domain("sigma1", sigma1, "must be non-negative"));
    }
    if !(sigma2 >= 0.0) {
        return Err(domain("sigma2", sigma2, "must be non-negative"));
    }
    let s = sigma1.hypot(sigma2);
    let d = (mu1 - mu2).abs();
    if s == 0.0 {
        return Ok(d);
    }
    Ok(
        s * (2.0 / std::f64::consts::PI).sqrt() * (-d * d / (2.0 * s * s)).exp()
            + d * erf(d / (std::f64::consts::SQRT_2 * s)),
    )
}

/// Symmetric unimodal base density of a location-scale family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaseDensity {
    Gaussian,
    Logistic,
    Laplace,
}

impl BaseDensity {
    pub const ALL: [BaseDensity; 3] = [
        BaseDensity::Gaussian,
        BaseDensity::Logistic,
        BaseDensity::Laplace,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaseDensity::Gaussian => "gaussian",
            BaseDensity::Logistic => "logistic",
            BaseDensity::Laplace => "laplace",
        }
    }

    /// A draw from the base density with unit scale parameter.
    pub fn sample(self, rng: &mut SimRng) -> f64 {
        match self {
            BaseDensity::Gaussian => rng.sample(StandardNormal),
            BaseDensity::Logistic => {
                let u: f64 = rng.sample(Open01);
                (u / (1.0 - u)).ln()
            }
            BaseDensity::Laplace => {
                let u: f64 = rng.sample::<f64, _>(Open01) - 0.5;
                -u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
        }
    }
}

/// Per-prompt location and scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PromptParams {
    pub mu: f64,
    pub sigma: f64,
}

/// `n` prompts drawn from `prior`.
pub fn draw_prompts(prior: &PromptPrior, n: usize, rng: &mut SimRng) -> Result<Vec<PromptParams>> {
    prior.validate()?;
    Ok((0..n)
        .map(|_| {
            let (mu, sigma) = prior.sample(rng);
            PromptParams { mu, sigma }
        })
        .collect())
}

fn check_prompts(prompts: &[PromptParams]) -> Result<()> {
    if prompts.len() < 2 {
        return Err(Error::Config(format!(
            "need at least 2 prompts, got {}",
            prompts.len()
        )));
    }
    if let Some(p) = prompts
        .iter()
        .find(|p| !(p.sigma > 0.0 && p.sigma.is_finite() && p.mu.is_finite()))
    {
        return Err(domain(
            "prompt sigma",
            p.sigma,
            "must be positive and finite",
        ));
    }
    Ok(())
}

/// Running mean and standard error.
#[derive(Debug, Default, Clone, Copy)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    fn se(&self) -> f64 {
        if self.n < 2.0 {
            return f64::NAN;
        }
        (self.m2 / (self.n - 1.0) / self.n).sqrt()
    }
}

/// Monte Carlo estimates of `E[g(|r₁ − r₂|)]` under same-prompt and
/// cross-prompt sampling. Returns `((same, se), (cross, se))`.
fn mc_same_cross(
    family: BaseDensity,
    prompts: &[PromptParams],
    n_mc: usize,
    g: impl Fn(f64) -> f64,
    rng: &mut SimRng,
) -> ((f64, f64), (f64, f64)) {
    let mut same = Moments::default();
    let mut cross = Moments::default();
    let draw = |p: &PromptParams, rng: &mut SimRng| p.mu + p.sigma * family.sample(rng);
    for _ in 0..n_mc {
        let k = &prompts[rng.random_range(0..prompts.len())];
        let (a, b) = (draw(k, rng), draw(k, rng));
        same.push(g((a - b).abs()));
        let k = &prompts[rng.random_range(0..prompts.len())];
        let l = &prompts[rng.random_range(0..prompts.len())];
        let (a, b) = (draw(k, rng), draw(l, rng));
        cross.push(g((a - b).abs()));
    }
    ((same.mean, same.se()), (cross.mean, cross.se()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub same: f64,
    pub same_se: f64,
    pub cross: f64,
    pub cross_se: f64,
}

impl McEstimate {
    pub fn gap_se(&self) -> f64 {
        self.same_se.hypot(self.cross_se)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    /// Closed-form `E_x E|r₁ − r₂|` (Gaussian family only).
    pub same_mean_absdiff: Option<f64>,
    /// Closed-form `E_{x₁,x₂} E|r₁ − r₂|` (Gaussian family only).
    pub cross_mean_absdiff: Option<f64>,
    pub mc: Option<McEstimate>,
    pub holds: bool,
}

/// Compare mean absolute utility differences of same-prompt and
/// cross-prompt pairs. The Gaussian family is evaluated in closed form over
/// all ordered prompt pairs (including a prompt with itself); `n_mc > 0`
/// adds a Monte Carlo estimate, the only path for the other families.
pub fn verify_diversity_inequality(
    family: BaseDensity,
    prompts: &[PromptParams],
    n_mc: usize,
    rng: &mut SimRng,
) -> Result<DiversityReport> {
    check_prompts(prompts)?;
    if family != BaseDensity::Gaussian && n_mc == 0 {
        return Err(Error::Config(format!(
            "the {} family needs Monte Carlo samples",
            family.name()
        )));
    }
    let (mut same_cf, mut cross_cf) = (None, None);
    let mut holds = true;
    if family == BaseDensity::Gaussian {
        let n = prompts.len() as f64;
        let same = prompts.iter().map(|p| 2.0 * p.sigma / SQRT_PI).sum::<f64>() / n;
        let mut cross = 0.0;
        for a in prompts {
            for b in prompts {
                cross += expected_abs_gaussian_diff(a.mu, a.sigma, b.mu, b.sigma)?;
            }
        }
        cross /= n * n;
        holds &= cross >= same - 1e-12 * same.abs().max(1.0);
        same_cf = Some(same);
        cross_cf = Some(cross);
    }
    let mc = (n_mc > 0).then(|| {
        let ((s, ss), (c, cs)) = mc_same_cross(family, prompts, n_mc, |d| d, rng);
        McEstimate {
            same: s,
            same_se: ss,
            cross: c,
            cross_se: cs,
        }
    });
    if let Some(m) = &mc {
        holds &= m.cross >= m.same - 3.0 * m.gap_se();
    }
    Ok(DiversityReport {
        same_mean_absdiff: same_cf,
        cross_mean_absdiff: cross_cf,
        mc,
        holds,
    })
}

/// Check on a grid that `x ↦ σ(βx)` is non-decreasing, concave and within
/// `[0.5, 1]` on `[0, ∞)`.
pub fn check_sigmoid_xi(beta: f64) -> Result<()> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(domain(
            "annotator beta",
            beta,
            "must be finite and non-negative",
        ));
    }
    let top = if beta > 0.0 { 40.0 / beta } else { 1.0 };
    let xs: Vec<f64> = (0..=400).map(|i| top * i as f64 / 400.0).collect();
    let v: Vec<f64> = xs.iter().map(|&x| sigmoid(beta * x)).collect();
    let ok_range = v.iter().all(|&y| (0.5..=1.0).contains(&y));
    let ok_mono = v.windows(2).all(|w| w[1] >= w[0]);
    let ok_concave = v.windows(3).all(|w| w[2] - 2.0 * w[1] + w[0] <= 1e-15);
    if ok_range && ok_mono && ok_concave {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "σ({beta}·x) fails the monotone/concave/range check"
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub family: BaseDensity,
    pub beta: f64,
    pub mc: McEstimate,
    /// `Q_cross ≥ Q_same − 3 SE`.
    pub holds: bool,
}

/// Monte Carlo estimates of same-prompt and cross-prompt annotation quality
/// `E[σ(β|r₁ − r₂|)]`.
pub fn verify_cross_prompt_quality(
    family: BaseDensity,
    prompts: &[PromptParams],
    beta: f64,
    n_mc: usize,
    rng: &mut SimRng,
) -> Result<QualityReport> {
    check_prompts(prompts)?;
    if n_mc < 10_000 {
        return Err(Error::Config(format!(
            "need at least 10000 Monte Carlo samples, got {n_mc}"
        )));
    }
    check_sigmoid_xi(beta)?;
    let ((s, ss), (c, cs)) = mc_same_cross(family, prompts, n_mc, |d| sigmoid(beta * d), rng);
    let mc = McEstimate {
        same: s,
        same_se: ss,
        cross: c,
        cross_se: cs,
    };
    Ok(QualityReport {
        family,
        beta,
        mc,
        holds: mc.cross >= mc.same - 3.0 * mc.gap_se(),
    })
}

/// Largest annotator disagreement rate covered by the lower bound.
pub const OC_EPS_LIMIT: f64 = 3.0 / 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcLowerBound {
    pub value: f64,
    /// `eps ≥ 3/20`: computed, but outside the bound's stated regime.
    pub outside_regime: bool,
}

/// `(1 − ε) ξ² + ε (1 − ξ)²`.
pub fn oc_lower_bound(eps: f64, xi: f64) -> Result<OcLowerBound> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(domain("model error rate", eps, "must lie in [0, 1]"));
    }
    if !(0.5..=1.0).contains(&xi) {
        return Err(domain("annotator accuracy", xi, "must lie in [0.5, 1]"));
    }
    let outside_regime = eps >= OC_EPS_LIMIT;
    if outside_regime {
        warn!("model error rate {eps} is at or above 3/20; the order-consistency bound is outside its regime");
    }
    Ok(OcLowerBound {
        value: (1.0 - eps) * xi * xi + eps * (1.0 - xi) * (1.0 - xi),
        outside_regime,
    })
}

/// Annotator accuracy above which agreement is at least `1 − 4ε`.
pub fn strong_regime_threshold(eps: f64) -> f64 {
    (eps * eps + 1.0 - 3.0 * eps).sqrt() + eps
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcBucket {
    pub lo: f64,
    /// Infinite for the last bucket.
    pub hi: f64,
    pub n: usize,
    /// Model agreement with the golden order.
    pub agreement: f64,
    pub se: f64,
    /// Annotator agreement with the golden order.
    pub annotator_accuracy: f64,
    /// Mean of the lower bound over the bucket's draws.
    pub bound: f64,
    pub holds: bool,
    /// `σ(β·lo)` clears [`strong_regime_threshold`], so `1 − 4ε` is checked.
    pub strong_applies: bool,
    pub strong_holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcBoundReport {
    pub beta: f64,
    pub eps: f64,
    pub buckets: Vec<OcBucket>,
    /// Fraction of draws whose annotator accuracy is below the strong-regime
    /// threshold.
    pub kappa: f64,
    pub holds: bool,
}

/// Buckets with fewer draws are reported but not judged.
pub const OC_MIN_BUCKET: usize = 1000;
const OC_BUCKET_WIDTH: f64 = 0.25;
const OC_N_BUCKETS: usize = 16;

/// Simulate `Δr ~ |N(0, 2)|`, an annotator correct with probability
/// `σ(βΔr)`, and a model that disagrees with the annotator at rate `ε`;
/// compare model-vs-golden agreement with the lower bound per `Δr` bucket.
pub fn verify_oc_bound(
    beta: f64,
    eps: f64,
    n_mc: usize,
    rng: &mut SimRng,
) -> Result<OcBoundReport> {
    check_sigmoid_xi(beta)?;
    oc_lower_bound(eps, 0.5)?;
    if n_mc == 0 {
        return Err(Error::Empty("Monte Carlo draws"));
    }
    let threshold = strong_regime_threshold(eps);
    let mut model = vec![Moments::default(); OC_N_BUCKETS + 1];
    let mut annot = [0usize; OC_N_BUCKETS + 1];
    let mut bound_sum = [0.0; OC_N_BUCKETS + 1];
    let mut below = 0usize;
    for _ in 0..n_mc {
        let z: f64 = rng.sample(StandardNormal);
        let dr = (std::f64::consts::SQRT_2 * z).abs();
        let xi = sigmoid(beta * dr);
        let annot_ok = rng.random::<f64>() < xi;
        let agrees = rng.random::<f64>() >= eps;
        let model_ok = annot_ok == agrees;
        let b = ((dr / OC_BUCKET_WIDTH) as usize).min(OC_N_BUCKETS);
        model[b].push(model_ok as u8 as f64);
        annot[b] += annot_ok as usize;
        bound_sum[b] += (1.0 - eps) * xi * xi + eps * (1.0 - xi) * (1.0 - xi);
        below += (xi < threshold) as usize;
    }
    let mut buckets = Vec::new();
    let mut holds = true;
    for b in 0..=OC_N_BUCKETS {
        let m = model[b];
        let n = m.n as usize;
        if n == 0 {
            continue;
        }
        let lo = b as f64 * OC_BUCKET_WIDTH;
        let hi = if b == OC_N_BUCKETS {
            f64::INFINITY
        } else {
            lo + OC_BUCKET_WIDTH
        };
        let se = m.se();
        let bound = bound_sum[b] / m.n;
        let judged = n >= OC_MIN_BUCKET;
        // The binomial SE is zero when every draw agrees; floor it at 1/n.
        let slack = 3.0 * se.max(1.0 / m.n);
        let ok = !judged || m.mean >= bound - slack;
        let strong_applies = judged && sigmoid(beta * lo) >= threshold;
        let strong_holds = !strong_applies || m.mean >= 1.0 - 4.0 * eps - slack;
        holds &= ok && strong_holds;
        buckets.push(OcBucket {
            lo,
            hi,
            n,
            agreement: m.mean,
            se,
            annotator_accuracy: annot[b] as f64 / m.n,
            bound,
            holds: ok,
            strong_applies,
            strong_holds,
        });
    }
    Ok(OcBoundReport {
        beta,
        eps,
        buckets,
        kappa: below as f64 / n_mc as f64,
        holds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClfBtReport {
    /// Classification rewards `s_i = logit P(i wins)`.
    pub s: Vec<f64>,
    pub c: f64,
    /// `min_i (s_i − r_i + C)`.
    pub min_slack: f64,
    pub holds: bool,
}

/// Exact check of `s_i ≥ r_i − C` for Bradley-Terry players. `P(i wins)` is
/// the BT win probability against an opponent drawn uniformly from all
/// players (itself included, at ½), and `C = log mean_j e^{r_j}`.
pub fn clf_bt_bound_check(rewards: &[f64]) -> Result<ClfBtReport> {
    if rewards.len() < 2 {
        return Err(Error::Config(format!(
            "need at least 2 players, got {}",
            rewards.len()
        )));
    }
    if let Some(r) = rewards.iter().find(|r| !r.is_finite()) {
        return Err(domain("player reward", *r, "must be finite"));
    }
    let n = rewards.len() as f64;
    let m = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let c = m + (rewards.iter().map(|r| (r - m).exp()).sum::<f64>() / n).ln();
    let mut s = Vec::with_capacity(rewards.len());
    let mut min_slack = f64::INFINITY;
    for &ri in rewards {
        let p = rewards.iter().map(|&rj| sigmoid(ri - rj)).sum::<f64>() / n;
        let si = logit(p)?;
        min_slack = min_slack.min(si - ri + c);
        s.push(si);
    }
    Ok(ClfBtReport {
        s,
        c,
        min_slack,
        holds: min_slack >= -1e-9,
    })
}

/// One line of the closed-form summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub quantity: String,
    pub value: f64,
    pub reference: Option<f64>,
    pub tolerance: Option<f64>,
    pub note: String,
}

impl TableRow {
    pub fn verdict(&self) -> &'static str {
        match (self.reference, self.tolerance) {
            (Some(r), Some(t)) if (self.value - r).abs() <= t => "match",
            (Some(_), Some(_)) => "MISMATCH",
            _ => "",
        }
    }
}

/// Closed-form values with their reference numbers.
pub fn closed_form_table() -> Result<Vec<TableRow>> {
    let row = |q: String, v: f64, r: Option<f64>, t: Option<f64>, note: &str| TableRow {
        quantity: q,
        value: v,
        reference: r,
        tolerance: t,
        note: note.into(),
    };
    let mut out = Vec::new();
    out.push(row(
        "f_tau(0.5; b=1)".into(),
        f_tau_pdf(0.5, 1.0)?,
        Some(4.0 / SQRT_PI),
        Some(1e-12),
        "4/sqrt(pi)",
    ));
    for b in [0.5, 1.0, 4.0] {
        let norm = integrate(
            |t| f_tau_pdf(t, b).unwrap_or(0.0),
            0.5,
            1.0,
            &QuadratureSpec {
                tol: 1e-9,
                ..Default::default()
            },
        )?;
        out.push(row(
            format!("integral f_tau (b={b})"),
            norm.value,
            Some(1.0),
            Some(1e-5),
            "normalization",
        ));
    }
    for (b, printed) in [(1.0, 0.6749), (2.0, 0.7251), (4.0, 0.7781), (10.0, 0.8428)] {
        out.push(row(
            format!("q_pair(b={b})"),
            q_pair(b)?,
            Some(printed),
            Some(1e-3),
            "difference variance 2b",
        ));
        out.push(row(
            format!("E sigma(|rho|), Var rho = {b}"),
            q_pair_from_diff_variance(b)?,
            Some(printed),
            Some(1e-3),
            "difference variance b",
        ));
    }
    out.push(row(
        "E|N(0,1)-N(0,1)|".into(),
        expected_abs_gaussian_diff(0.0, 1.0, 0.0, 1.0)?,
        Some(2.0 / SQRT_PI),
        Some(1e-12),
        "2/sqrt(pi)",
    ));
    out.push(row(
        "E|N(5,1)-N(0,1)|".into(),
        expected_abs_gaussian_diff(5.0, 1.0, 0.0, 1.0)?,
        Some(5.0),
        Some(1e-3),
        "folded normal",
    ));
    out.push(row(
        "oc_lower_bound(0.1, 0.9)".into(),
        oc_lower_bound(0.1, 0.9)?.value,
        Some(0.73),
        Some(1e-12),
        "",
    ));
    out.push(row(
        "strong-regime xi (eps=0.05)".into(),
        strong_regime_threshold(0.05),
        None,
        None,
        "agreement >= 1-4eps above this",
    ));
    let d = verify_diversity_inequality(
        BaseDensity::Gaussian,
        &[
            PromptParams {
                mu: 0.0,
                sigma: 0.5,
            },
            PromptParams {
                mu: 0.0,
                sigma: 2.0,
            },
        ],
        0,
        &mut crate::rng::RngState::new(0).rng(),
    )?;
    out.push(row(
        "same-prompt E|dr| (sigma 0.5, 2)".into(),
        d.same_mean_absdiff.unwrap(),
        None,
        None,
        "",
    ));
    out.push(row(
        "cross-prompt E|dr| (sigma 0.5, 2)".into(),
        d.cross_mean_absdiff.unwrap(),
        None,
        None,
        if d.holds { "cross >= same" } else { "VIOLATED" },
    ));
    let c = clf_bt_bound_check(&[1.0, 0.0, -1.0])?;
    out.push(row(
        "clf-vs-BT min slack r=(1,0,-1)".into(),
        c.min_slack,
        None,
        None,
        if c.holds {
            "s_i >= r_i - C"
        } else {
            "VIOLATED"
        },
    ));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;

    #[test]
    fn f_tau_values() {
        assert!((f_tau_pdf(0.5, 1.0).unwrap() - 2.256_758_334_191_025).abs() < 1e-12);
        assert!(f_tau_pdf(1.0, 1.0).is_err());
        assert!(f_tau_pdf(0.4, 1.0).is_err());
        assert!(f_tau_pdf(0.7, 0.0).is_err());
    }

    #[test]
    fn f_tau_normalizes_and_has_q_pair_mean() {
        let spec = QuadratureSpec {
            tol: 1e-10,
            ..QuadratureSpec::default()
        };
        for b in [0.5, 1.0, 4.0] {
            let r = integrate(|t| f_tau_pdf(t, b).unwrap(), 0.5, 1.0, &spec).unwrap();
            assert!((r.value - 1.0).abs() < 1e-5, "b={b}: {}", r.value);
        }
        let mean = integrate(|t| t * f_tau_pdf(t, 1.0).unwrap(), 0.5, 1.0, &spec).unwrap();
        assert!((mean.value - q_pair(1.0).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn q_pair_matches_independent_quadrature() {
        // scipy.integrate.quad of E[σ(|ρ|)], ρ ~ N(0, v).
        for (v, expect) in [
            (0.5, 0.631_13),
            (1.0, 0.674_857),
            (2.0, 0.725_213),
            (4.0, 0.777_990),
            (8.0, 0.828_012),
            (20.0, 0.883_325),
        ] {
            let got = q_pair_from_diff_variance(v).unwrap();
            assert!((got - expect).abs() < 1e-5, "v={v}: {got}");
        }
        assert_eq!(q_pair(0.0).unwrap(), 0.5);
        assert!((q_pair(1.0).unwrap() - 0.725_213).abs() < 1e-5);
        assert!(q_pair(-1.0).is_err());
    }

    #[test]
    fn q_pair_increasing() {
        let v: Vec<f64> = (1..=20).map(|i| q_pair(i as f64 * 0.5).unwrap()).collect();
        assert!(v.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn folded_normal_mean() {
        assert!(
            (expected_abs_gaussian_diff(0.0, 1.0, 0.0, 1.0).unwrap() - 2.0 / SQRT_PI).abs() < 1e-15
        );
        assert_eq!(expected_abs_gaussian_diff(1.5, 0.0, 1.5, 0.0).unwrap(), 0.0);
        assert_eq!(
            expected_abs_gaussian_diff(1.0, 0.0, -1.0, 0.0).unwrap(),
            2.0
        );
        let a = expected_abs_gaussian_diff(0.3, 0.7, -1.1, 1.9).unwrap();
        let b = expected_abs_gaussian_diff(-1.1, 1.9, 0.3, 0.7).unwrap();
        assert_eq!(a, b);
        assert!(expected_abs_gaussian_diff(0.0, -1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn folded_normal_mean_against_monte_carlo() {
        let mut rng = RngState::new(1).rng();
        let n = 10_000_000;
        let mut m = Moments::default();
        for _ in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            m.push((5.0 + std::f64::consts::SQRT_2 * z).abs());
        }
        let cf = expected_abs_gaussian_diff(5.0, 1.0, 0.0, 1.0).unwrap();
        assert!((cf - 5.0).abs() < 1e-3);
        assert!((m.mean - cf).abs() < 3.0 * m.se(), "{} vs {cf}", m.mean);
    }

    #[test]
    fn laplace_and_logistic_samplers_have_right_variance() {
        let mut rng = RngState::new(2).rng();
        for (fam, var) in [
            (BaseDensity::Laplace, 2.0),
            (BaseDensity::Logistic, std::f64::consts::PI.powi(2) / 3.0),
        ] {
            let mut m = Moments::default();
            let mut sq = Moments::default();
            for _ in 0..400_000 {
                let x = fam.sample(&mut rng);
                m.push(x);
                sq.push(x * x);
            }
            assert!(m.mean.abs() < 3.0 * m.se(), "{fam:?}");
            assert!((sq.mean - var).abs() < 3.0 * sq.se(), "{fam:?} {}", sq.mean);
        }
    }

    fn pp(v: &[(f64, f64)]) -> Vec<PromptParams> {
        v.iter()
            .map(|&(mu, sigma)| PromptParams { mu, sigma })
            .collect()
    }

    #[test]
    fn diversity_closed_form_cases() {
        let mut rng = RngState::new(3).rng();
        let eq =
            verify_diversity_inequality(BaseDensity::Gaussian, &pp(&[(0.4, 1.3); 5]), 0, &mut rng)
                .unwrap();
        assert!((eq.same_mean_absdiff.unwrap() - eq.cross_mean_absdiff.unwrap()).abs() < 1e-12);
        let het = verify_diversity_inequality(
            BaseDensity::Gaussian,
            &pp(&[(0.0, 0.5), (0.0, 2.0)]),
            0,
            &mut rng,
        )
        .unwrap();
        assert!(het.cross_mean_absdiff.unwrap() > het.same_mean_absdiff.unwrap());
        assert!(het.holds);
        assert!(verify_diversity_inequality(
            BaseDensity::Laplace,
            &pp(&[(0.0, 1.0), (1.0, 1.0)]),
            0,
            &mut rng
        )
        .is_err());
        assert!(verify_diversity_inequality(
            BaseDensity::Gaussian,
            &pp(&[(0.0, 1.0)]),
            0,
            &mut rng
        )
        .is_err());
    }

    #[test]
    fn diversity_monte_carlo_agrees_with_closed_form() {
        let prompts = pp(&[(0.0, 0.5), (1.0, 2.0), (-0.5, 1.0)]);
        let r = verify_diversity_inequality(
            BaseDensity::Gaussian,
            &prompts,
            1_000_000,
            &mut RngState::new(4).rng(),
        )
        .unwrap();
        let mc = r.mc.unwrap();
        assert!((mc.same - r.same_mean_absdiff.unwrap()).abs() < 3.0 * mc.same_se);
        assert!((mc.cross - r.cross_mean_absdiff.unwrap()).abs() < 3.0 * mc.cross_se);
        assert!(r.holds);
    }

    #[test]
    fn cross_prompt_quality_cases() {
        let equal = pp(&[(0.2, 1.0); 4]);
        let r = verify_cross_prompt_quality(
            BaseDensity::Gaussian,
            &equal,
            1.0,
            200_000,
            &mut RngState::new(5).rng(),
        )
        .unwrap();
        assert!((r.mc.cross - r.mc.same).abs() < 3.0 * r.mc.gap_se());

        let het = pp(&[(0.0, 0.5), (0.0, 2.0)]);
        let r = verify_cross_prompt_quality(
            BaseDensity::Gaussian,
            &het,
            1.0,
            200_000,
            &mut RngState::new(6).rng(),
        )
        .unwrap();
        assert!(r.mc.cross - r.mc.same > 3.0 * r.mc.gap_se(), "{:?}", r.mc);

        let shifted = pp(&[(-1.0, 1.0), (0.0, 1.0), (1.5, 1.0)]);
        let r = verify_cross_prompt_quality(
            BaseDensity::Laplace,
            &shifted,
            1.0,
            200_000,
            &mut RngState::new(7).rng(),
        )
        .unwrap();
        assert!(r.holds);
        assert!(verify_cross_prompt_quality(
            BaseDensity::Laplace,
            &shifted,
            1.0,
            9_999,
            &mut RngState::new(7).rng()
        )
        .is_err());
    }

    #[test]
    fn oc_lower_bound_values() {
        assert_eq!(oc_lower_bound(0.0, 1.0).unwrap().value, 1.0);
        assert!((oc_lower_bound(0.1, 0.9).unwrap().value - 0.73).abs() < 1e-15);
        for eps in [0.0, 0.05, 0.1, 0.14] {
            assert!((oc_lower_bound(eps, 0.5).unwrap().value - 0.25).abs() < 1e-15);
        }
        assert!(oc_lower_bound(0.2, 0.9).unwrap().outside_regime);
        assert!(!oc_lower_bound(0.1, 0.9).unwrap().outside_regime);
        assert!(oc_lower_bound(0.1, 0.4).is_err());
    }

    #[test]
    fn oc_lower_bound_shape_on_grid() {
        for i in 0..=50 {
            let xi = 0.5 + 0.5 * i as f64 / 50.0;
            let mut last = f64::INFINITY;
            for j in 0..15 {
                let eps = j as f64 / 100.0;
                let v = oc_lower_bound(eps, xi).unwrap().value;
                assert!(v <= 1.0);
                if xi > 0.5 {
                    assert!(v < last, "xi={xi} eps={eps}");
                }
                last = v;
            }
        }
    }

    #[test]
    fn oc_bound_simulation() {
        let r = verify_oc_bound(1.0, 0.0, 200_000, &mut RngState::new(8).rng()).unwrap();
        for b in r.buckets.iter().filter(|b| b.n >= OC_MIN_BUCKET) {
            assert!((b.agreement - b.annotator_accuracy).abs() < 1e-12);
        }
        let r = verify_oc_bound(1.0, 0.1, 1_000_000, &mut RngState::new(9).rng()).unwrap();
        assert!(r.holds, "{r:?}");
        let r = verify_oc_bound(20.0, 0.05, 1_000_000, &mut RngState::new(10).rng()).unwrap();
        assert!(r.holds);
        assert!(r.buckets.iter().filter(|b| b.strong_applies).count() >= 10);
    }

    #[test]
    fn clf_bt_bound_cases() {
        let r = clf_bt_bound_check(&[0.0, 0.0, 0.0]).unwrap();
        assert!(r.s.iter().all(|s| s.abs() < 1e-15));
        assert!(r.c.abs() < 1e-15);
        assert!(r.min_slack.abs() < 1e-12);
        let r = clf_bt_bound_check(&[1.0, 0.0, -1.0]).unwrap();
        assert!(r.holds && r.min_slack > 1e-3, "{r:?}");
        let mut rng = RngState::new(11).rng();
        for _ in 0..50 {
            let k = rng.random_range(2..12);
            let v: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
            assert!(clf_bt_bound_check(&v).unwrap().holds);
        }
        assert!(clf_bt_bound_check(&[1.0]).is_err());
    }

    #[test]
    fn table_builds() {
        let t = closed_form_table().unwrap();
        assert!(t.iter().any(|r| r.quantity.starts_with("q_pair")));
        assert_eq!(t[0].verdict(), "match");
    }
}
