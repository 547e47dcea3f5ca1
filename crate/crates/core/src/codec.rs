//! Single-stage tail-truncated sampling (TTS) codec.
//!
//! Bit-carrying coordinates are drawn from the two tails `|z| ≥ τ` of the
//! standard normal, the rest from the central band `|z| ≤ τ`. Encoding keeps
//! the tail magnitudes and overwrites their signs with `b_j·v_{j,i}`; decoding
//! projects onto each `v_j` and reads the sign.

use rand_chacha::rand_core::RngCore;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::keys::SupportMap;
use crate::rng::word_to_open_unit;
use crate::stats::{cdf_unchecked, quantile_unchecked};

/// Layout of one codec stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CodecParams {
    /// Noise dimension.
    pub n: usize,
    /// Watermark bits.
    pub m: usize,
    /// Truncation threshold.
    pub tau: f64,
    /// Expected tail dimensions, `round(2·Φ(−τ)·n)`.
    pub k: usize,
    /// Support size per bit, `⌊k/m⌋`.
    pub r: usize,
}

impl CodecParams {
    pub fn new(n: usize, m: usize, tau: f64) -> Result<Self> {
        if !tau.is_finite() {
            return Err(Error::NonFinite("tau"));
        }
        if tau < 0.0 {
            return Err(Error::OutOfRange {
                what: "tau",
                value: tau,
            });
        }
        if n == 0 || m == 0 {
            return Err(Error::InvalidInput("n and m must be positive".into()));
        }
        let k = (2.0 * cdf_unchecked(-tau) * n as f64).round() as usize;
        let r = k / m;
        if r == 0 {
            return Err(Error::InvalidInput(format!(
                "tau = {tau} leaves {k} tail dimensions for {m} bits (r = 0)"
            )));
        }
        Ok(Self { n, m, tau, k, r })
    }

    /// Single-stage defaults: one 4×64×64 latent minus the key channel.
    pub fn default_payload() -> Self {
        Self::new(12_288, 256, DEFAULT_TAU).expect("valid defaults")
    }

    /// Coordinates that carry bits.
    pub fn masked(&self) -> usize {
        self.r * self.m
    }

    fn check_map(&self, map: &SupportMap) -> Result<()> {
        if map.n() != self.n || map.m() != self.m || map.r() != self.r {
            return Err(Error::InvalidInput(format!(
                "support map (n={}, m={}, r={}) does not match params (n={}, m={}, r={})",
                map.n(),
                map.m(),
                map.r(),
                self.n,
                self.m,
                self.r
            )));
        }
        Ok(())
    }
}

/// Default truncation threshold, `−Φ⁻¹(4/16)` to five decimals.
pub const DEFAULT_TAU: f64 = 0.67449;

/// Watermark bit vector with entries in {−1, +1}.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct WatermarkBits(Vec<i8>);

impl WatermarkBits {
    pub fn new(bits: Vec<i8>) -> Result<Self> {
        if let Some(b) = bits.iter().find(|&&b| b != 1 && b != -1) {
            return Err(Error::InvalidInput(format!("watermark bit {b} is not ±1")));
        }
        Ok(Self(bits))
    }

    /// Uniform random bits, 32 per keystream word, least-significant first.
    pub fn random<R: RngCore + ?Sized>(rng: &mut R, m: usize) -> Self {
        let mut bits = Vec::with_capacity(m);
        let mut word = 0u32;
        for i in 0..m {
            if i % 32 == 0 {
                word = rng.next_u32();
            }
            bits.push(if (word >> (i % 32)) & 1 == 1 { 1 } else { -1 });
        }
        Self(bits)
    }

    /// Parses hex, most-significant bit of each digit first; digit `d` holds
    /// bits `4d..4d+4`. 0 ↦ −1, 1 ↦ +1.
    pub fn from_hex(s: &str) -> Result<Self> {
        let s = s.trim();
        let mut bits = Vec::with_capacity(s.len() * 4);
        for c in s.chars() {
            let v = c.to_digit(16).ok_or_else(|| {
                Error::InvalidInput(format!("invalid hex character {c:?} in payload"))
            })?;
            for shift in (0..4).rev() {
                bits.push(if (v >> shift) & 1 == 1 { 1 } else { -1 });
            }
        }
        if bits.is_empty() {
            return Err(Error::InvalidInput("empty payload".into()));
        }
        Ok(Self(bits))
    }

    /// Inverse of [`Self::from_hex`]; the length must be a multiple of 4.
    pub fn to_hex(&self) -> Option<String> {
        if !self.0.len().is_multiple_of(4) {
            return None;
        }
        let digits = self.0.chunks(4).map(|c| {
            let v = c.iter().fold(0u32, |acc, &b| (acc << 1) | u32::from(b > 0));
            char::from_digit(v, 16).expect("nibble")
        });
        Some(digits.collect())
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of positions where `self` and `other` agree.
    pub fn agreement(&self, other: &WatermarkBits) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a == b).count()
    }
}

impl From<WatermarkBits> for Vec<i8> {
    fn from(b: WatermarkBits) -> Self {
        b.0
    }
}

/// Latent noise vector; all entries finite.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseVector(Vec<f64>);

impl NoiseVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("noise vector entry"));
        }
        Ok(Self(values))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    /// Standard normal vector of length `n`.
    pub fn standard_normal<R: RngCore + ?Sized>(rng: &mut R, n: usize) -> Self {
        Self((0..n).map(|_| crate::rng::standard_normal(rng)).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Splits into `[0, at)` and `[at, n)`.
    pub fn split_at(&self, at: usize) -> (NoiseVector, NoiseVector) {
        let (a, b) = self.0.split_at(at);
        (Self(a.to_vec()), Self(b.to_vec()))
    }

    /// Concatenation `self ‖ other`.
    pub fn concat(mut self, other: NoiseVector) -> NoiseVector {
        self.0.extend(other.0);
        self
    }
}

/// Per-bit projections `p_j = ⟨ẑ, v_j⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionVector(Vec<f64>);

impl ProjectionVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Sign decoding; an exact zero resolves to +1.
    pub fn signs(&self) -> WatermarkBits {
        WatermarkBits(
            self.0
                .iter()
                .map(|&p| if p >= 0.0 { 1 } else { -1 })
                .collect(),
        )
    }

    pub fn l1_norm(&self) -> f64 {
        self.0.iter().map(|p| p.abs()).sum()
    }
}

/// Draws the TTS carrier.
///
/// Each coordinate consumes one 64-bit word `x`, with `u` from its top 52
/// bits. Masked: `|z| = −Φ⁻¹(u·Φ(−τ))`, sign from the low bit of `x`.
/// Unmasked: `z = Φ⁻¹(Φ(−τ) + u·(Φ(τ) − Φ(−τ)))`, or a plain standard normal
/// when `τ = 0`.
pub fn sample_tts<R: RngCore + ?Sized>(
    params: &CodecParams,
    map: &SupportMap,
    rng: &mut R,
) -> Result<NoiseVector> {
    params.check_map(map)?;
    let mask = map.mask();
    Ok(NoiseVector(sample_with_mask(params.tau, &mask, rng)))
}

fn sample_with_mask<R: RngCore + ?Sized>(tau: f64, mask: &[bool], rng: &mut R) -> Vec<f64> {
    let lower = cdf_unchecked(-tau);
    let width = cdf_unchecked(tau) - lower;
    mask.iter()
        .map(|&masked| {
            let word = rng.next_u64();
            let u = word_to_open_unit(word);
            if masked {
                let mag = (-quantile_unchecked(u * lower)).max(tau);
                if word & 1 == 1 {
                    mag
                } else {
                    -mag
                }
            } else if tau == 0.0 {
                quantile_unchecked(u)
            } else {
                quantile_unchecked(lower + u * width).clamp(-tau, tau)
            }
        })
        .collect()
}

/// Embeds `bits`: `z^w = w⊙|z|⊙Σ b_j v_j + (1−w)⊙z` over a fresh TTS carrier.
pub fn encode<R: RngCore + ?Sized>(
    params: &CodecParams,
    map: &SupportMap,
    bits: &WatermarkBits,
    rng: &mut R,
) -> Result<NoiseVector> {
    params.check_map(map)?;
    if bits.len() != params.m {
        return Err(Error::LengthMismatch {
            expected: params.m,
            actual: bits.len(),
        });
    }
    let mut z = sample_tts(params, map, rng)?.0;
    for (j, i, sign) in map.entries() {
        let dir = f64::from(bits.0[j] * sign);
        z[i] = z[i].abs() * dir;
    }
    Ok(NoiseVector(z))
}

/// `p_j = Σ_{i ∈ supp(v_j)} v_{j,i}·noise_i`.
pub fn project(map: &SupportMap, noise: &NoiseVector) -> Result<ProjectionVector> {
    project_slice(map, &noise.0)
}

pub(crate) fn project_slice(map: &SupportMap, noise: &[f64]) -> Result<ProjectionVector> {
    if noise.len() != map.n() {
        return Err(Error::LengthMismatch {
            expected: map.n(),
            actual: noise.len(),
        });
    }
    let p = (0..map.m())
        .map(|j| {
            map.support(j)
                .iter()
                .zip(map.signs(j))
                .map(|(&i, &s)| f64::from(s) * noise[i as usize])
                .sum()
        })
        .collect();
    Ok(ProjectionVector(p))
}

/// `b̂ = sign(p)`, with `p_j = 0` read as +1.
pub fn decode(map: &SupportMap, noise: &NoiseVector) -> Result<WatermarkBits> {
    Ok(project(map, noise)?.signs())
}
