//! Noise-domain watermarking of Gaussian latents with tail-truncated sampling.
//!
//! Bits are carried by the signs of keyed, disjoint projections of the
//! initial noise vector. Bit-carrying coordinates are drawn from the tails of
//! the standard normal and the remaining coordinates from its central band,
//! so the pooled marginal stays standard normal while each projection gets a
//! larger margin. A two-stage layout embeds a random session key under the
//! master key, then the payload under the session key.
//!
//! Modules:
//! - [`stats`]: normal CDF/quantile, truncated moments, KS and t statistics
//! - [`keys`]: master/session keys and the keyed [`SupportMap`]
//! - [`codec`]: single-stage encoder and decoder
//! - [`two_stage`]: the session-key pipeline
//! - [`detector`]: L1 detection statistic and threshold calibration
//! - [`channel`]: latent corruption models
//! - [`bep`]: analytic bit-error probability and Monte-Carlo checks
//! - [`trace`]: identity registry and matching

pub mod bep;
pub mod channel;
pub mod codec;
pub mod detector;
mod error;
pub mod keys;
pub mod rng;
pub mod stats;
pub mod trace;
pub mod two_stage;

pub use bep::{analytic_bep, derivative_check_at_zero, tau_sweep, BepPoint, BitErrors, SweepRow};
pub use channel::ChannelSpec;
pub use codec::{
    decode, encode, project, sample_tts, CodecParams, NoiseVector, ProjectionVector, WatermarkBits,
    DEFAULT_TAU,
};
pub use detector::{
    calibrate_threshold, detect, detection_statistic, CalibrationMethod, DetectionResult, NullModel,
};
pub use error::{Error, Result};
pub use keys::{
    derive_support_map, sample_session_key, session_key_to_bits, DerivationKey, MasterKey,
    SessionKey, SupportMap,
};
pub use rng::RandomStream;
pub use stats::{
    ks_distance, pooled_t_statistic, std_normal_cdf, std_normal_quantile, tail_moments, KsResult,
    TailMoments,
};
pub use trace::{match_identity, MatchResult, Registry, TraceRecord};
pub use two_stage::{
    decode_two_stage, encode_two_stage, TwoStageDecoding, TwoStageEncoding, TwoStageParams,
};
