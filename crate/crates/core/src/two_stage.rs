//! Two-stage pipeline: a random session key is embedded in the first
//! segment under the master key, and the payload in the second segment
//! under the session key. Stage-1 coordinates come first.

use rand_chacha::rand_core::RngCore;
use serde::Serialize;

use crate::codec::{
    decode, encode, project_slice, CodecParams, NoiseVector, WatermarkBits, DEFAULT_TAU,
};
use crate::error::{Error, Result};
use crate::keys::{
    bits_to_session_key, sample_session_key, session_key_to_bits, MasterKey, SessionKey,
    SupportMap, SESSION_KEY_WIDTHS,
};

/// Layout of both stages. `stage1.m` is the session key width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TwoStageParams {
    pub stage1: CodecParams,
    pub stage2: CodecParams,
}

impl TwoStageParams {
    pub fn new(
        n_key: usize,
        key_bits: usize,
        n_payload: usize,
        payload_bits: usize,
        tau: f64,
    ) -> Result<Self> {
        if !SESSION_KEY_WIDTHS.contains(&(key_bits as u32)) {
            return Err(Error::SessionKeyWidth(key_bits as u32));
        }
        Ok(Self {
            stage1: CodecParams::new(n_key, key_bits, tau)?,
            stage2: CodecParams::new(n_payload, payload_bits, tau)?,
        })
    }

    /// 4×64×64 latent with the session key in the first channel.
    pub fn sd21() -> Self {
        Self::new(4096, 16, 12_288, 256, DEFAULT_TAU).expect("valid defaults")
    }

    /// 16×64×64 latent with the session key in the first four channels.
    pub fn sd35() -> Self {
        Self::new(16_384, 16, 49_152, 256, DEFAULT_TAU).expect("valid defaults")
    }

    pub fn n(&self) -> usize {
        self.stage1.n + self.stage2.n
    }

    pub fn key_bits(&self) -> u32 {
        self.stage1.m as u32
    }

    pub fn payload_bits(&self) -> usize {
        self.stage2.m
    }

    /// Stage-1 support map under `master`.
    pub fn stage1_map(&self, master: &MasterKey) -> Result<SupportMap> {
        SupportMap::derive(
            &master.derivation_key(),
            self.stage1.n,
            self.stage1.m,
            self.stage1.r,
        )
    }

    /// Stage-2 support map under `session`.
    pub fn stage2_map(&self, session: SessionKey) -> Result<SupportMap> {
        SupportMap::derive(
            &session.derivation_key(),
            self.stage2.n,
            self.stage2.m,
            self.stage2.r,
        )
    }
}

impl Default for TwoStageParams {
    fn default() -> Self {
        Self::sd21()
    }
}

#[derive(Debug, Clone)]
pub struct TwoStageEncoding {
    pub noise: NoiseVector,
    /// Exposed for tests and reports only.
    pub session_key: SessionKey,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoStageDecoding {
    pub payload: WatermarkBits,
    pub session_key: SessionKey,
}

/// Samples a session key from `rng` and embeds it and `payload`.
pub fn encode_two_stage<R: RngCore + ?Sized>(
    params: &TwoStageParams,
    master: &MasterKey,
    payload: &WatermarkBits,
    rng: &mut R,
) -> Result<TwoStageEncoding> {
    let map1 = params.stage1_map(master)?;
    encode_two_stage_with_map(params, &map1, payload, rng)
}

/// As [`encode_two_stage`] with a precomputed stage-1 map.
pub fn encode_two_stage_with_map<R: RngCore + ?Sized>(
    params: &TwoStageParams,
    map1: &SupportMap,
    payload: &WatermarkBits,
    rng: &mut R,
) -> Result<TwoStageEncoding> {
    if payload.len() != params.stage2.m {
        return Err(Error::LengthMismatch {
            expected: params.stage2.m,
            actual: payload.len(),
        });
    }
    let session_key = sample_session_key(rng, params.key_bits())?;
    let key_bits = WatermarkBits::new(session_key_to_bits(session_key))?;
    let zk = encode(&params.stage1, map1, &key_bits, rng)?;
    let map2 = params.stage2_map(session_key)?;
    let zb = encode(&params.stage2, &map2, payload, rng)?;
    Ok(TwoStageEncoding {
        noise: zk.concat(zb),
        session_key,
    })
}

/// Recovers the session key from stage 1, then the payload from stage 2.
/// Always returns a best-effort decode.
pub fn decode_two_stage(
    params: &TwoStageParams,
    master: &MasterKey,
    noise: &NoiseVector,
) -> Result<TwoStageDecoding> {
    let map1 = params.stage1_map(master)?;
    decode_two_stage_with_map(params, &map1, noise)
}

/// As [`decode_two_stage`] with a precomputed stage-1 map.
pub fn decode_two_stage_with_map(
    params: &TwoStageParams,
    map1: &SupportMap,
    noise: &NoiseVector,
) -> Result<TwoStageDecoding> {
    if noise.len() != params.n() {
        return Err(Error::LengthMismatch {
            expected: params.n(),
            actual: noise.len(),
        });
    }
    let (zk, zb) = noise.split_at(params.stage1.n);
    let key_bits = decode(map1, &zk)?;
    let session_key = bits_to_session_key(key_bits.as_slice())?;
    let map2 = params.stage2_map(session_key)?;
    let payload = decode(&map2, &zb)?;
    Ok(TwoStageDecoding {
        payload,
        session_key,
    })
}

/// Stage-1 projections of `noise` (first `stage1.n` coordinates).
pub(crate) fn stage1_projection(
    params: &TwoStageParams,
    map1: &SupportMap,
    noise: &[f64],
) -> Result<crate::codec::ProjectionVector> {
    if noise.len() != params.n() {
        return Err(Error::LengthMismatch {
            expected: params.n(),
            actual: noise.len(),
        });
    }
    project_slice(map1, &noise[..params.stage1.n])
}
