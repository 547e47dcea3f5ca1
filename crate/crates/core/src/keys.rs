//! Keys and the keyed watermark geometry.
//!
//! A [`SupportMap`] realizes the `m` projection vectors: vector `j` is zero
//! everywhere except on its `r` support indices, where it takes the listed
//! ±1 signs. Supports are pairwise disjoint and their union is the mask of
//! bit-carrying coordinates.
//!
//! Derivation draws from two ChaCha20 streams keyed by the same 32-byte
//! seed: stream [`PERMUTATION_STREAM`] drives a forward Fisher-Yates
//! shuffle of `0..n` whose first `r·m` entries are chunked into supports,
//! and stream [`SIGN_STREAM`] supplies one sign bit per support entry
//! (least-significant bit of each 32-bit word first).

use std::fmt;
use std::str::FromStr;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::uniform_below;

/// ChaCha20 stream id for the index permutation.
pub const PERMUTATION_STREAM: u64 = 1;
/// ChaCha20 stream id for the support signs.
pub const SIGN_STREAM: u64 = 2;

const SESSION_KEY_LABEL: &[u8] = b"t2smark/session-key/v1";

/// 256-bit seed from which a [`SupportMap`] is derived.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct DerivationKey([u8; 32]);

impl DerivationKey {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl fmt::Debug for DerivationKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("DerivationKey(..)")
    }
}

/// Long-term secret of the watermark provider.
#[derive(Clone, PartialEq, Eq)]
pub struct MasterKey([u8; 32]);

impl MasterKey {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        Self(bytes)
    }

    /// Draws a fresh key from `rng`.
    pub fn random<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut bytes = [0u8; 32];
        rng.fill_bytes(&mut bytes);
        Self(bytes)
    }

    /// Parses 64 hex characters; surrounding whitespace is ignored.
    pub fn from_hex(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.len() != 64 {
            return Err(Error::InvalidInput(format!(
                "master key must be 64 hex characters, got {}",
                s.len()
            )));
        }
        let mut bytes = [0u8; 32];
        for (i, chunk) in s.as_bytes().chunks(2).enumerate() {
            let hi = hex_val(chunk[0])?;
            let lo = hex_val(chunk[1])?;
            bytes[i] = (hi << 4) | lo;
        }
        Ok(Self(bytes))
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn derivation_key(&self) -> DerivationKey {
        DerivationKey(self.0)
    }
}

// Never print key material.
impl fmt::Debug for MasterKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("MasterKey(..)")
    }
}

impl FromStr for MasterKey {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::from_hex(s)
    }
}

fn hex_val(c: u8) -> Result<u8> {
    match c {
        b'0'..=b'9' => Ok(c - b'0'),
        b'a'..=b'f' => Ok(c - b'a' + 10),
        b'A'..=b'F' => Ok(c - b'A' + 10),
        _ => Err(Error::InvalidInput(format!(
            "invalid hex character {:?}",
            c as char
        ))),
    }
}

/// Per-image random key embedded in the first noise segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SessionKey {
    value: u32,
    width: u32,
}

/// Session key widths the codec supports.
pub const SESSION_KEY_WIDTHS: [u32; 4] = [8, 16, 24, 32];

impl SessionKey {
    pub fn new(value: u32, width: u32) -> Result<Self> {
        if !SESSION_KEY_WIDTHS.contains(&width) {
            return Err(Error::SessionKeyWidth(width));
        }
        if width < 32 && value >> width != 0 {
            return Err(Error::InvalidInput(format!(
                "session key {value} does not fit in {width} bits"
            )));
        }
        Ok(Self { value, width })
    }

    pub fn value(&self) -> u32 {
        self.value
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    /// Stretches the key to a 256-bit derivation seed:
    /// `SHA-256(label ‖ width ‖ value_le32)`.
    pub fn derivation_key(&self) -> DerivationKey {
        let mut h = Sha256::new();
        h.update(SESSION_KEY_LABEL);
        h.update([self.width as u8]);
        h.update(self.value.to_le_bytes());
        DerivationKey(h.finalize().into())
    }
}

/// Uniform session key of width `width`.
pub fn sample_session_key<R: RngCore + ?Sized>(rng: &mut R, width: u32) -> Result<SessionKey> {
    if !SESSION_KEY_WIDTHS.contains(&width) {
        return Err(Error::SessionKeyWidth(width));
    }
    let raw = rng.next_u32();
    let value = if width == 32 {
        raw
    } else {
        raw & ((1u32 << width) - 1)
    };
    SessionKey::new(value, width)
}

/// ±1 expansion of the key, least-significant bit first; 0 ↦ −1, 1 ↦ +1.
pub fn session_key_to_bits(key: SessionKey) -> Vec<i8> {
    value_to_bits(key.value, key.width)
}

/// Low `width` bits of `value` as ±1, least-significant bit first.
pub fn value_to_bits(value: u32, width: u32) -> Vec<i8> {
    (0..width)
        .map(|i| if (value >> i) & 1 == 1 { 1 } else { -1 })
        .collect()
}

/// Inverse of [`session_key_to_bits`]. Any non-negative entry reads as bit 1.
pub fn bits_to_session_key(bits: &[i8]) -> Result<SessionKey> {
    let width = bits.len() as u32;
    let value = bits.iter().enumerate().fold(
        0u32,
        |acc, (i, &b)| if b >= 0 { acc | (1 << i) } else { acc },
    );
    SessionKey::new(value, width)
}

/// Keyed, disjoint ±1 supports of the `m` projection vectors over `n` coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupportMap {
    n: usize,
    m: usize,
    r: usize,
    /// `r·m` indices; bit `j` owns `indices[j*r..(j+1)*r]`.
    indices: Vec<u32>,
    /// Sign of each listed index, ±1.
    signs: Vec<i8>,
}

impl SupportMap {
    /// Derives the support map for `key`. See the module docs for the layout.
    pub fn derive(key: &DerivationKey, n: usize, m: usize, r: usize) -> Result<Self> {
        if m == 0 || r == 0 {
            return Err(Error::InvalidInput("m and r must be at least 1".into()));
        }
        let needed = r.checked_mul(m).ok_or(Error::Capacity {
            needed: usize::MAX,
            available: n,
        })?;
        if needed > n {
            return Err(Error::Capacity {
                needed,
                available: n,
            });
        }
        if n > u32::MAX as usize {
            return Err(Error::InvalidInput(format!("dimension {n} too large")));
        }

        let mut perm_rng = ChaCha20Rng::from_seed(key.0);
        perm_rng.set_stream(PERMUTATION_STREAM);
        let mut perm: Vec<u32> = (0..n as u32).collect();
        for i in 0..needed {
            let j = i + uniform_below(&mut perm_rng, (n - i) as u32) as usize;
            perm.swap(i, j);
        }
        perm.truncate(needed);

        let mut sign_rng = ChaCha20Rng::from_seed(key.0);
        sign_rng.set_stream(SIGN_STREAM);
        let mut signs = Vec::with_capacity(needed);
        let mut word = 0u32;
        for i in 0..needed {
            if i % 32 == 0 {
                word = sign_rng.next_u32();
            }
            signs.push(if (word >> (i % 32)) & 1 == 1 { 1 } else { -1 });
        }

        Ok(Self {
            n,
            m,
            r,
            indices: perm,
            signs,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn r(&self) -> usize {
        self.r
    }

    /// Support indices of bit `j`.
    pub fn support(&self, j: usize) -> &[u32] {
        &self.indices[j * self.r..(j + 1) * self.r]
    }

    /// Signs of bit `j` on its support, aligned with [`Self::support`].
    pub fn signs(&self, j: usize) -> &[i8] {
        &self.signs[j * self.r..(j + 1) * self.r]
    }

    /// Iterates `(bit, index, sign)` over every support entry.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, i8)> + '_ {
        self.indices
            .iter()
            .zip(&self.signs)
            .enumerate()
            .map(move |(k, (&i, &s))| (k / self.r, i as usize, s))
    }

    /// 0/1 mask over `0..n` marking the union of supports.
    pub fn mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.n];
        for &i in &self.indices {
            mask[i as usize] = true;
        }
        mask
    }
}

/// Free-function form of [`SupportMap::derive`].
pub fn derive_support_map(key: &DerivationKey, n: usize, m: usize, r: usize) -> Result<SupportMap> {
    SupportMap::derive(key, n, m, r)
}
