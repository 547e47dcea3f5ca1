//! Watermark presence test on the stage-1 projections.
//!
//! The statistic is `l = ‖p_k‖₁`. Under the null (a standard normal latent)
//! each `p_kj ~ N(0, r_k)`, so `l` is a sum of `m_k` half-normals of scale
//! `√r_k`; [`NullModel`] is its Gaussian approximation.

use rand_chacha::rand_core::RngCore;
use rayon::prelude::*;
use serde::Serialize;

use crate::codec::NoiseVector;
use crate::error::{Error, Result};
use crate::keys::{MasterKey, SupportMap};
use crate::rng::{standard_normal, task_stream};
use crate::stats::{quantile_unchecked, HALF_NORMAL_MEAN, HALF_NORMAL_VAR};
use crate::two_stage::{stage1_projection, TwoStageParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetectionResult {
    pub statistic: f64,
    pub threshold: f64,
    pub watermarked: bool,
    pub target_fpr: f64,
}

/// Gaussian approximation of the null distribution of `l`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NullModel {
    pub mean: f64,
    pub variance: f64,
}

impl NullModel {
    /// `mean = m_k·√(2r_k/π)`, `variance = m_k·r_k·(1 − 2/π)`.
    pub fn for_params(params: &TwoStageParams) -> Self {
        let mk = params.stage1.m as f64;
        let rk = params.stage1.r as f64;
        Self {
            mean: mk * rk.sqrt() * HALF_NORMAL_MEAN,
            variance: mk * rk * HALF_NORMAL_VAR,
        }
    }

    pub fn sd(&self) -> f64 {
        self.variance.sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMethod {
    Analytic,
    MonteCarlo,
}

impl std::str::FromStr for CalibrationMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "analytic" => Ok(Self::Analytic),
            "monte_carlo" | "monte-carlo" | "mc" => Ok(Self::MonteCarlo),
            _ => Err(Error::InvalidInput(format!(
                "unknown calibration method {s:?}"
            ))),
        }
    }
}

/// `l = Σ_j |⟨ẑ^k, v_kj⟩|` over the stage-1 vectors.
pub fn detection_statistic(
    params: &TwoStageParams,
    master: &MasterKey,
    noise: &NoiseVector,
) -> Result<f64> {
    let map1 = params.stage1_map(master)?;
    detection_statistic_with_map(params, &map1, noise)
}

pub fn detection_statistic_with_map(
    params: &TwoStageParams,
    map1: &SupportMap,
    noise: &NoiseVector,
) -> Result<f64> {
    Ok(stage1_projection(params, map1, noise.as_slice())?.l1_norm())
}

fn check_fpr(target_fpr: f64) -> Result<()> {
    if !(target_fpr > 0.0 && target_fpr <= 0.5) {
        return Err(Error::OutOfRange {
            what: "target FPR",
            value: target_fpr,
        });
    }
    Ok(())
}

/// Null statistics of `trials` standard-normal stage-1 segments. Trial `t`
/// draws from `task_stream(seed, [t])`, so the output is independent of
/// scheduling.
pub fn null_statistics(
    params: &TwoStageParams,
    map1: &SupportMap,
    trials: usize,
    seed: u64,
) -> Vec<f64> {
    let nk = params.stage1.n;
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = task_stream(seed, &[t as u64]);
            let z: Vec<f64> = (0..nk).map(|_| standard_normal(&mut rng)).collect();
            crate::codec::project_slice(map1, &z)
                .expect("stage-1 length")
                .l1_norm()
        })
        .collect()
}

/// Smallest value `d` in the sample with at most `fpr·N` samples above it.
pub fn empirical_upper_quantile(samples: &mut [f64], fpr: f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len();
    let idx = ((1.0 - fpr) * n as f64).ceil() as usize;
    samples[idx.clamp(1, n) - 1]
}

/// Threshold `d` for `target_fpr`.
///
/// Analytic: `mean + Φ⁻¹(1 − fpr)·sd` from [`NullModel`]. Monte-Carlo: the
/// empirical `(1 − fpr)` quantile of `trials` null statistics when
/// `trials ≥ 10/fpr`, otherwise a Gaussian fitted to those statistics.
pub fn calibrate_threshold<R: RngCore + ?Sized>(
    params: &TwoStageParams,
    target_fpr: f64,
    method: CalibrationMethod,
    trials: usize,
    rng: &mut R,
) -> Result<f64> {
    check_fpr(target_fpr)?;
    let z = if target_fpr == 0.5 {
        0.0
    } else {
        quantile_unchecked(1.0 - target_fpr)
    };
    match method {
        CalibrationMethod::Analytic => {
            let null = NullModel::for_params(params);
            Ok(null.mean + z * null.sd())
        }
        CalibrationMethod::MonteCarlo => {
            if trials < 2 {
                return Err(Error::InvalidInput(
                    "Monte-Carlo calibration needs at least 2 trials".into(),
                ));
            }
            let master = MasterKey::random(rng);
            let map1 = params.stage1_map(&master)?;
            let mut stats = null_statistics(params, &map1, trials, rng.next_u64());
            if trials as f64 >= (10.0 / target_fpr).ceil() {
                Ok(empirical_upper_quantile(&mut stats, target_fpr))
            } else {
                let n = stats.len() as f64;
                let mean = stats.iter().sum::<f64>() / n;
                let var = stats.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
                Ok(mean + z * var.sqrt())
            }
        }
    }
}

/// Computes the statistic and compares it with `threshold`.
pub fn detect(
    params: &TwoStageParams,
    master: &MasterKey,
    noise: &NoiseVector,
    threshold: f64,
    target_fpr: f64,
) -> Result<DetectionResult> {
    let statistic = detection_statistic(params, master, noise)?;
    Ok(DetectionResult {
        statistic,
        threshold,
        watermarked: statistic > threshold,
        target_fpr,
    })
}
