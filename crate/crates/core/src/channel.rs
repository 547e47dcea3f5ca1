//! Latent-domain corruption channels.
//!
//! Grammar: `part ('+' part)*` with `part := kind ':' number` and kind one of
//! `awgn` (σ ≥ 0), `flip` (probability), `erase` (probability) or
//! `gain` (factor > 0). Parts apply left to right.

use std::fmt;
use std::str::FromStr;

use rand_chacha::rand_core::RngCore;

use crate::codec::NoiseVector;
use crate::error::{Error, Result};
use crate::rng::{standard_normal, unit_open};

#[derive(Debug, Clone, PartialEq)]
pub enum ChannelSpec {
    /// Adds i.i.d. `N(0, σ²)`.
    Awgn {
        sigma: f64,
    },
    /// Negates each coordinate independently with probability `fraction`.
    SignFlip {
        fraction: f64,
    },
    /// Replaces each coordinate independently, with probability `fraction`,
    /// by a fresh standard normal.
    Erasure {
        fraction: f64,
    },
    /// Multiplies every coordinate by `factor`.
    Gain {
        factor: f64,
    },
    Compose(Vec<ChannelSpec>),
}

impl ChannelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ChannelSpec::Awgn { sigma } if !(sigma.is_finite() && sigma >= 0.0) => {
                Err(Error::OutOfRange {
                    what: "awgn sigma",
                    value: sigma,
                })
            }
            ChannelSpec::SignFlip { fraction } | ChannelSpec::Erasure { fraction }
                if !(0.0..=1.0).contains(&fraction) =>
            {
                Err(Error::OutOfRange {
                    what: "channel fraction",
                    value: fraction,
                })
            }
            ChannelSpec::Gain { factor } if !(factor.is_finite() && factor > 0.0) => {
                Err(Error::OutOfRange {
                    what: "gain factor",
                    value: factor,
                })
            }
            ChannelSpec::Compose(ref parts) => parts.iter().try_for_each(ChannelSpec::validate),
            _ => Ok(()),
        }
    }

    /// Applies the channel; the input length is preserved.
    pub fn apply<R: RngCore + ?Sized>(
        &self,
        noise: &NoiseVector,
        rng: &mut R,
    ) -> Result<NoiseVector> {
        self.validate()?;
        let mut v = noise.clone().into_inner();
        self.apply_in_place(&mut v, rng);
        NoiseVector::new(v)
    }

    pub(crate) fn apply_in_place<R: RngCore + ?Sized>(&self, v: &mut [f64], rng: &mut R) {
        match self {
            ChannelSpec::Awgn { sigma } => {
                if *sigma > 0.0 {
                    for x in v.iter_mut() {
                        *x += sigma * standard_normal(rng);
                    }
                }
            }
            ChannelSpec::SignFlip { fraction } => {
                for x in v.iter_mut() {
                    if unit_open(rng) < *fraction {
                        *x = -*x;
                    }
                }
            }
            ChannelSpec::Erasure { fraction } => {
                for x in v.iter_mut() {
                    if unit_open(rng) < *fraction {
                        *x = standard_normal(rng);
                    }
                }
            }
            ChannelSpec::Gain { factor } => {
                for x in v.iter_mut() {
                    *x *= factor;
                }
            }
            ChannelSpec::Compose(parts) => {
                for p in parts {
                    p.apply_in_place(v, rng);
                }
            }
        }
    }
}

/// Free-function form of [`ChannelSpec::apply`].
pub fn apply<R: RngCore + ?Sized>(
    spec: &ChannelSpec,
    noise: &NoiseVector,
    rng: &mut R,
) -> Result<NoiseVector> {
    spec.apply(noise, rng)
}

impl fmt::Display for ChannelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChannelSpec::Awgn { sigma } => write!(f, "awgn:{sigma}"),
            ChannelSpec::SignFlip { fraction } => write!(f, "flip:{fraction}"),
            ChannelSpec::Erasure { fraction } => write!(f, "erase:{fraction}"),
            ChannelSpec::Gain { factor } => write!(f, "gain:{factor}"),
            ChannelSpec::Compose(parts) => {
                for (i, p) in parts.iter().enumerate() {
                    if i > 0 {
                        f.write_str("+")?;
                    }
                    write!(f, "{p}")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for ChannelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let syntax = |position: usize, message: String| Error::ChannelSyntax { position, message };
        let mut parts = Vec::new();
        let mut offset = 0;
        for raw in s.split('+') {
            let start = offset;
            offset += raw.len() + 1;
            let lead = raw.len() - raw.trim_start().len();
            let part = raw.trim();
            if part.is_empty() {
                return Err(syntax(start, "empty channel".into()));
            }
            let Some(colon) = part.find(':') else {
                return Err(syntax(
                    start + lead,
                    format!("expected `kind:value`, got {part:?}"),
                ));
            };
            let (kind, value) = (&part[..colon], &part[colon + 1..]);
            let value_pos = start + lead + colon + 1;
            let x: f64 = value
                .parse()
                .map_err(|_| syntax(value_pos, format!("invalid number {value:?}")))?;
            let spec = match kind {
                "awgn" => ChannelSpec::Awgn { sigma: x },
                "flip" => ChannelSpec::SignFlip { fraction: x },
                "erase" => ChannelSpec::Erasure { fraction: x },
                "gain" => ChannelSpec::Gain { factor: x },
                _ => {
                    return Err(syntax(
                        start + lead,
                        format!("unknown channel {kind:?} (expected awgn, flip, erase or gain)"),
                    ))
                }
            };
            spec.validate()
                .map_err(|e| syntax(value_pos, e.to_string()))?;
            parts.push(spec);
        }
        Ok(if parts.len() == 1 {
            parts.pop().expect("one part")
        } else {
            ChannelSpec::Compose(parts)
        })
    }
}
