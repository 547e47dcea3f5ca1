//! Closed-form bit-error analysis of TTS decoding under AWGN, plus the
//! Monte-Carlo harness that checks it.
//!
//! With `a = √(2n/m)`, `B(τ) = φ(τ)/√Φ(−τ)` and `C(τ) = 1/√(D(τ) + σ²)`,
//! the effective SNR is `A(τ) = a·B(τ)·C(τ)` and the bit-error probability
//! is `P_e(τ) = Φ(−A(τ))`.

use std::f64::consts::PI;

use rand_chacha::rand_core::RngCore;
use rayon::prelude::*;
use serde::Serialize;

use crate::channel::ChannelSpec;
use crate::codec::{decode, encode, CodecParams, WatermarkBits};
use crate::error::{Error, Result};
use crate::keys::{MasterKey, SupportMap};
use crate::rng::task_stream;
use crate::stats::{cdf_unchecked, std_normal_pdf, tail_moments_unchecked};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BepPoint {
    pub tau: f64,
    pub sigma: f64,
    /// `√(2n/m)`
    pub a: f64,
    /// `A(τ)`
    pub big_a: f64,
    pub p_e: f64,
    /// `B(τ)`
    pub b_val: f64,
    /// `C(τ)`
    pub c_val: f64,
}

fn b_of(tau: f64) -> f64 {
    std_normal_pdf(tau) / cdf_unchecked(-tau).sqrt()
}

fn c_of(tau: f64, sigma: f64) -> f64 {
    1.0 / (tail_moments_unchecked(tau).dvar + sigma * sigma).sqrt()
}

/// Analytic bit-error probability for an `n`-dimensional, `m`-bit stage.
pub fn analytic_bep(n: usize, m: usize, tau: f64, sigma: f64) -> Result<BepPoint> {
    if !tau.is_finite() || !sigma.is_finite() {
        return Err(Error::NonFinite("tau/sigma"));
    }
    if tau < 0.0 {
        return Err(Error::OutOfRange {
            what: "tau",
            value: tau,
        });
    }
    if sigma <= 0.0 {
        return Err(Error::OutOfRange {
            what: "sigma",
            value: sigma,
        });
    }
    if m == 0 {
        return Err(Error::InvalidInput("m must be positive".into()));
    }
    let redundancy = 2.0 * cdf_unchecked(-tau) * n as f64 / m as f64;
    if redundancy < 1.0 {
        return Err(Error::OutOfRange {
            what: "2Φ(−τ)·n/m",
            value: redundancy,
        });
    }
    let a = (2.0 * n as f64 / m as f64).sqrt();
    let b_val = b_of(tau);
    let c_val = c_of(tau, sigma);
    let big_a = a * b_val * c_val;
    Ok(BepPoint {
        tau,
        sigma,
        a,
        big_a,
        p_e: cdf_unchecked(-big_a),
        b_val,
        c_val,
    })
}

/// Finite-difference derivatives at `τ = 0` next to their closed forms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivativeReport {
    pub h: f64,
    pub b_prime: f64,
    pub b_prime_exact: f64,
    pub mu_prime: f64,
    pub mu_prime_exact: f64,
    pub d_prime: f64,
    pub d_prime_exact: f64,
    pub pe_at_zero: f64,
    pub pe_at_h: f64,
    /// `P_e(h) < P_e(0)`.
    pub pe_decreases: bool,
}

impl DerivativeReport {
    /// Largest absolute gap between a finite difference and its closed form.
    pub fn max_error(&self) -> f64 {
        (self.b_prime - self.b_prime_exact)
            .abs()
            .max((self.mu_prime - self.mu_prime_exact).abs())
            .max((self.d_prime - self.d_prime_exact).abs())
    }
}

/// Derivative check on the default single-stage layout (`n = 12288`,
/// `m = 256`, `σ = 2`).
pub fn derivative_check_at_zero(h: f64) -> Result<DerivativeReport> {
    derivative_check_with(h, 12_288, 256, 2.0)
}

/// Right-sided second-order differences `(−3f(0) + 4f(h) − f(2h)) / 2h` of
/// `B`, `μ` and `D`, against `B′(0) = √2/(2π)`, `μ′(0) = 2/π` and
/// `D′(0) = √(2/π)(1 − 4/π)`.
pub fn derivative_check_with(h: f64, n: usize, m: usize, sigma: f64) -> Result<DerivativeReport> {
    if !(1e-6..=1e-2).contains(&h) {
        return Err(Error::OutOfRange {
            what: "finite-difference step",
            value: h,
        });
    }
    let fd = |f: &dyn Fn(f64) -> f64| (-3.0 * f(0.0) + 4.0 * f(h) - f(2.0 * h)) / (2.0 * h);
    let mu = |t: f64| tail_moments_unchecked(t).mu;
    let dvar = |t: f64| tail_moments_unchecked(t).dvar;
    let pe_at_zero = analytic_bep(n, m, 0.0, sigma)?.p_e;
    let pe_at_h = analytic_bep(n, m, h, sigma)?.p_e;
    Ok(DerivativeReport {
        h,
        b_prime: fd(&b_of),
        b_prime_exact: 2f64.sqrt() / (2.0 * PI),
        mu_prime: fd(&mu),
        mu_prime_exact: 2.0 / PI,
        d_prime: fd(&dvar),
        d_prime_exact: (2.0 / PI).sqrt() * (1.0 - 4.0 / PI),
        pe_at_zero,
        pe_at_h,
        pe_decreases: pe_at_h < pe_at_zero,
    })
}

/// Error count from a Monte-Carlo run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BitErrors {
    pub errors: u64,
    pub bits: u64,
}

impl BitErrors {
    pub fn rate(&self) -> f64 {
        if self.bits == 0 {
            return f64::NAN;
        }
        self.errors as f64 / self.bits as f64
    }

    /// Binomial standard error of [`Self::rate`].
    pub fn std_err(&self) -> f64 {
        let p = self.rate();
        (p * (1.0 - p) / self.bits as f64).sqrt()
    }

    fn merge(self, other: Self) -> Self {
        Self {
            errors: self.errors + other.errors,
            bits: self.bits + other.bits,
        }
    }
}

/// Encode → channel → decode for `trials` independent (key, bits) draws.
/// Trial `t` uses `task_stream(seed, [condition, t])`.
pub fn simulate_single_stage(
    params: &CodecParams,
    channel: &ChannelSpec,
    trials: usize,
    seed: u64,
    condition: u64,
) -> Result<BitErrors> {
    channel.validate()?;
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = task_stream(seed, &[condition, t as u64]);
            let key = MasterKey::random(&mut rng);
            let map = SupportMap::derive(&key.derivation_key(), params.n, params.m, params.r)?;
            let bits = WatermarkBits::random(&mut rng, params.m);
            let z = encode(params, &map, &bits, &mut rng)?;
            let noisy = channel.apply(&z, &mut rng)?;
            let decoded = decode(&map, &noisy)?;
            let errors = (params.m - decoded.agreement(&bits)) as u64;
            Ok(BitErrors {
                errors,
                bits: params.m as u64,
            })
        })
        .try_reduce(BitErrors::default, |a, b| Ok(a.merge(b)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub tau: f64,
    pub r: usize,
    pub analytic_pe: f64,
    pub empirical_ber: f64,
    pub std_err: f64,
    pub errors: u64,
    pub bits: u64,
}

/// The taus `−Φ⁻¹(j/16)` for `j = 1..=8`, in increasing order (`j = 8` is 0).
pub fn sixteenth_quantile_taus() -> Vec<f64> {
    let mut taus: Vec<f64> = (1..=8)
        .map(|j| -crate::stats::quantile_unchecked(f64::from(j) / 16.0))
        .map(|t| t.max(0.0))
        .collect();
    taus.sort_by(f64::total_cmp);
    taus
}

/// Analytic and empirical bit-error rates over `taus` under AWGN(σ), sorted by τ.
pub fn tau_sweep<R: RngCore + ?Sized>(
    n: usize,
    m: usize,
    sigma: f64,
    taus: &[f64],
    trials: usize,
    rng: &mut R,
) -> Result<Vec<SweepRow>> {
    let seed = rng.next_u64();
    let params: Vec<CodecParams> = taus
        .iter()
        .map(|&t| CodecParams::new(n, m, t))
        .collect::<Result<_>>()?;
    let channel = ChannelSpec::Awgn { sigma };
    let mut rows = Vec::with_capacity(taus.len());
    for (c, p) in params.iter().enumerate() {
        let analytic = analytic_bep(n, m, p.tau, sigma)?;
        let counts = simulate_single_stage(p, &channel, trials, seed, c as u64)?;
        rows.push(SweepRow {
            tau: p.tau,
            r: p.r,
            analytic_pe: analytic.p_e,
            empirical_ber: counts.rate(),
            std_err: counts.std_err(),
            errors: counts.errors,
            bits: counts.bits,
        });
    }
    rows.sort_by(|a, b| a.tau.total_cmp(&b.tau));
    Ok(rows)
}
