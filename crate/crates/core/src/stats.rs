//! Scalar statistics: the standard normal distribution, moments of the
//! tail-truncated normal, a Kolmogorov-Smirnov distance and the pooled
//! two-sample t statistic.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use serde::Serialize;

use crate::error::{Error, Result};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
pub fn std_normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal CDF, Φ(x).
///
/// Evaluated through `erfc` on both sides of zero so that the lower tail
/// keeps full relative precision.
pub fn std_normal_cdf(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::NonFinite("std_normal_cdf argument"));
    }
    Ok(cdf_unchecked(x))
}

/// Upper tail Φ(−x) = 1 − Φ(x), without cancellation for large `x`.
pub fn std_normal_sf(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::NonFinite("std_normal_sf argument"));
    }
    Ok(cdf_unchecked(-x))
}

#[inline]
pub(crate) fn cdf_unchecked(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

// Acklam's rational approximation to the normal quantile (relative error
// below 1.15e-9), polished below with one Newton step on Φ.
const ACKLAM_A: [f64; 6] = [
    -3.969_683_028_665_376e1,
    2.209_460_984_245_205e2,
    -2.759_285_104_469_687e2,
    1.383_577_518_672_69e2,
    -3.066_479_806_614_716e1,
    2.506_628_277_459_239,
];
const ACKLAM_B: [f64; 5] = [
    -5.447_609_879_822_406e1,
    1.615_858_368_580_409e2,
    -1.556_989_798_598_866e2,
    6.680_131_188_771_972e1,
    -1.328_068_155_288_572e1,
];
const ACKLAM_C: [f64; 6] = [
    -7.784_894_002_430_293e-3,
    -3.223_964_580_411_365e-1,
    -2.400_758_277_161_838,
    -2.549_732_539_343_734,
    4.374_664_141_464_968,
    2.938_163_982_698_783,
];
const ACKLAM_D: [f64; 4] = [
    7.784_695_709_041_462e-3,
    3.224_671_290_700_398e-1,
    2.445_134_137_142_996,
    3.754_408_661_907_416,
];
const ACKLAM_P_LOW: f64 = 0.02425;

/// Standard normal quantile, Φ⁻¹(p), for `p` in the open unit interval.
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::OutOfRange {
            what: "probability",
            value: p,
        });
    }
    Ok(quantile_unchecked(p))
}

#[inline]
pub(crate) fn quantile_unchecked(p: f64) -> f64 {
    // Work on the lower half; 1 - p is exact for p >= 0.5.
    if p > 0.5 {
        return -lower_quantile(1.0 - p);
    }
    lower_quantile(p)
}

fn lower_quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p <= 0.5);
    let x = if p < ACKLAM_P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        let [c0, c1, c2, c3, c4, c5] = ACKLAM_C;
        let [d0, d1, d2, d3] = ACKLAM_D;
        (((((c0 * q + c1) * q + c2) * q + c3) * q + c4) * q + c5)
            / ((((d0 * q + d1) * q + d2) * q + d3) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        let [a0, a1, a2, a3, a4, a5] = ACKLAM_A;
        let [b0, b1, b2, b3, b4] = ACKLAM_B;
        (((((a0 * r + a1) * r + a2) * r + a3) * r + a4) * r + a5) * q
            / (((((b0 * r + b1) * r + b2) * r + b3) * r + b4) * r + 1.0)
    };
    if p == 0.5 {
        return 0.0;
    }
    // Newton step: x <- x - (Φ(x) - p) / φ(x).
    let err = cdf_unchecked(x) - p;
    x - err / std_normal_pdf(x)
}

/// Mean and variance of a standard normal conditioned on `Z > τ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailMoments {
    pub mu: f64,
    pub dvar: f64,
}

/// Moments of the standard normal truncated to `[τ, ∞)`.
///
/// `mu = φ(τ)/Φ(−τ)` and `dvar = 1 + τ·mu − mu²`.
pub fn tail_moments(tau: f64) -> Result<TailMoments> {
    if !tau.is_finite() {
        return Err(Error::NonFinite("tau"));
    }
    if tau < 0.0 {
        return Err(Error::OutOfRange {
            what: "tau",
            value: tau,
        });
    }
    Ok(tail_moments_unchecked(tau))
}

#[inline]
pub(crate) fn tail_moments_unchecked(tau: f64) -> TailMoments {
    let mu = std_normal_pdf(tau) / cdf_unchecked(-tau);
    let dvar = 1.0 + tau * mu - mu * mu;
    TailMoments { mu, dvar }
}

/// Result of a one-sample Kolmogorov-Smirnov comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    /// Sup-norm distance between the empirical CDF and the reference CDF.
    pub statistic: f64,
    /// Asymptotic p-value from the Kolmogorov distribution.
    pub approx_p: f64,
}

/// Minimum sample size accepted by [`ks_distance`].
pub const KS_MIN_SAMPLES: usize = 100;

/// One-sample KS distance between sorted `samples` and `cdf`.
pub fn ks_distance<F>(samples: &[f64], cdf: F) -> Result<KsResult>
where
    F: Fn(f64) -> f64,
{
    if samples.is_empty() {
        return Err(Error::InvalidInput("empty sample".into()));
    }
    if samples.len() < KS_MIN_SAMPLES {
        return Err(Error::InvalidInput(format!(
            "KS test needs at least {KS_MIN_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|x| x.is_nan()) {
        return Err(Error::NonFinite("KS sample"));
    }
    if samples.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidInput("samples are not sorted".into()));
    }

    let n = samples.len() as f64;
    let mut d = 0.0_f64;
    for (i, &x) in samples.iter().enumerate() {
        let f = cdf(x);
        let above = (i + 1) as f64 / n - f;
        let below = f - i as f64 / n;
        d = d.max(above).max(below);
    }
    let lambda = n.sqrt() * d;
    Ok(KsResult {
        statistic: d,
        approx_p: kolmogorov_sf(lambda),
    })
}

/// Survival function of the Kolmogorov distribution,
/// `Q(λ) = 2 Σ_{k≥1} (−1)^{k−1} exp(−2k²λ²)`, truncated at 100 terms.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    // Below this the truncated series is inaccurate and Q is 1 to double precision.
    if lambda < 0.18 {
        return 1.0;
    }
    let l2 = lambda * lambda;
    let mut sum = 0.0;
    for k in 1..=100_u32 {
        let kf = f64::from(k);
        let term = (-2.0 * kf * kf * l2).exp();
        if k % 2 == 1 {
            sum += term;
        } else {
            sum -= term;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sample t statistic with pooled standard deviation
/// `S* = sqrt(((n_a−1)s_a² + (n_b−1)s_b²) / (n_a+n_b−2))`:
///
/// `t = |mean_a − mean_b| / (S*·sqrt(1/n_a + 1/n_b))`.
pub fn pooled_t_statistic(
    mean_a: f64,
    sd_a: f64,
    n_a: usize,
    mean_b: f64,
    sd_b: f64,
    n_b: usize,
) -> Result<f64> {
    for v in [mean_a, sd_a, mean_b, sd_b] {
        if !v.is_finite() {
            return Err(Error::NonFinite("t-statistic input"));
        }
    }
    if n_a < 2 || n_b < 2 {
        return Err(Error::InvalidInput(
            "each sample needs at least 2 observations".into(),
        ));
    }
    if sd_a < 0.0 || sd_b < 0.0 {
        return Err(Error::InvalidInput(
            "standard deviations must be non-negative".into(),
        ));
    }
    let (na, nb) = (n_a as f64, n_b as f64);
    let pooled = (((na - 1.0) * sd_a * sd_a + (nb - 1.0) * sd_b * sd_b) / (na + nb - 2.0)).sqrt();
    let gap = (mean_a - mean_b).abs();
    if pooled == 0.0 {
        if gap == 0.0 {
            return Ok(0.0);
        }
        return Err(Error::Degenerate(
            "zero pooled deviation with unequal means",
        ));
    }
    Ok(gap / (pooled * (1.0 / na + 1.0 / nb).sqrt()))
}

/// `sqrt(2/π)`, the mean of a standard half-normal.
pub const HALF_NORMAL_MEAN: f64 = 0.797_884_560_802_865_4;

/// `1 − 2/π`, the variance of a standard half-normal.
pub const HALF_NORMAL_VAR: f64 = 1.0 - 2.0 / PI;
