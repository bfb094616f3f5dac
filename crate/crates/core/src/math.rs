//! Scalar link functions shared by the simulator, the learners and the
//! analytic checks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A probability in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Probability(f64);

impl Probability {
    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(Probability(value))
        } else {
            Err(Error::Domain {
                what: "probability",
                value,
                reason: "must lie in [0, 1]",
            })
        }
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Probability {
    type Error = Error;
    fn try_from(value: f64) -> Result<Self> {
        Probability::new(value)
    }
}

impl From<Probability> for f64 {
    fn from(p: Probability) -> f64 {
        p.0
    }
}

/// Logistic function `1 / (1 + e^{-x})`, evaluated without overflow for any
/// finite `x`.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    debug_assert!(!x.is_nan(), "sigmoid of NaN");
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `log σ(x) = -softplus(-x)`.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

/// Log-odds of `p`. Fails at the boundaries, naming the one that was hit.
pub fn logit(p: f64) -> Result<f64> {
    if p.is_nan() || !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain {
            what: "logit argument",
            value: p,
            reason: "must lie in (0, 1)",
        });
    }
    if p == 0.0 {
        return Err(Error::Domain {
            what: "logit argument",
            value: p,
            reason: "lower bound 0 hit",
        });
    }
    if p == 1.0 {
        return Err(Error::Domain {
            what: "logit argument",
            value: p,
            reason: "upper bound 1 hit",
        });
    }
    Ok(p.ln() - (-p).ln_1p())
}

#[inline]
pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

#[inline]
pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

/// Standard normal CDF `Φ(x)`.
#[inline]
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal density.
#[inline]
pub fn std_normal_pdf(x: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Inverse of [`std_normal_cdf`] on the open interval `(0, 1)`.
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain {
            what: "normal quantile argument",
            value: p,
            reason: "must lie in (0, 1)",
        });
    }
    // Φ⁻¹(p) = -√2 · erfc⁻¹(2p) as a starting point (statrs is only good to
    // ~1e-9 here), then Newton steps against our own Φ.
    let mut x = -std::f64::consts::SQRT_2 * statrs::function::erf::erfc_inv(2.0 * p);
    for _ in 0..2 {
        let pdf = std_normal_pdf(x);
        if pdf < 1e-300 {
            break;
        }
        x -= (std_normal_cdf(x) - p) / pdf;
    }
    Ok(x)
}
