//! Identity watermark registry and nearest-identity matching.
//!
//! Text format, one record per line: `account_id<TAB>bits`, where `bits` is
//! `m_b` characters of `0` (−1) or `1` (+1).

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::codec::WatermarkBits;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub account_id: String,
    pub bits: WatermarkBits,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchResult {
    pub account_id: String,
    /// `matches / m_b`.
    pub bit_accuracy: f64,
    /// Gap to the runner-up accuracy; equals `bit_accuracy` for a single record.
    pub margin: f64,
}

/// Packs ±1 bits into 64-bit words, +1 ↦ 1, least-significant bit first.
fn pack(bits: &[i8]) -> Vec<u64> {
    let mut words = vec![0u64; bits.len().div_ceil(64)];
    for (i, &b) in bits.iter().enumerate() {
        if b > 0 {
            words[i / 64] |= 1 << (i % 64);
        }
    }
    words
}

fn agreements(a: &[u64], b: &[u64], m: usize) -> usize {
    let differing: u32 = a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum();
    m - differing as usize
}

#[derive(Debug, Clone, Default)]
pub struct Registry {
    m: usize,
    ids: Vec<String>,
    bits: Vec<WatermarkBits>,
    packed: Vec<Vec<u64>>,
    index: HashMap<String, usize>,
}

impl Registry {
    /// Empty registry for `m`-bit identities.
    pub fn new(m: usize) -> Self {
        Self {
            m,
            ..Self::default()
        }
    }

    pub fn bit_len(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn register(&mut self, account_id: &str, bits: WatermarkBits) -> Result<()> {
        validate_id(account_id)?;
        if bits.len() != self.m {
            return Err(Error::LengthMismatch {
                expected: self.m,
                actual: bits.len(),
            });
        }
        if self.index.contains_key(account_id) {
            return Err(Error::DuplicateAccount(account_id.to_owned()));
        }
        self.index.insert(account_id.to_owned(), self.ids.len());
        self.ids.push(account_id.to_owned());
        self.packed.push(pack(bits.as_slice()));
        self.bits.push(bits);
        Ok(())
    }

    pub fn lookup(&self, account_id: &str) -> Option<&WatermarkBits> {
        self.index.get(account_id).map(|&i| &self.bits[i])
    }

    pub fn records(&self) -> impl Iterator<Item = TraceRecord> + '_ {
        self.ids
            .iter()
            .zip(&self.bits)
            .map(|(id, bits)| TraceRecord {
                account_id: id.clone(),
                bits: bits.clone(),
            })
    }

    /// Account with the most agreeing bits; ties go to the lexicographically
    /// smallest id.
    pub fn best_match(&self, extracted: &WatermarkBits) -> Result<MatchResult> {
        if self.is_empty() {
            return Err(Error::EmptyRegistry);
        }
        if extracted.len() != self.m {
            return Err(Error::LengthMismatch {
                expected: self.m,
                actual: extracted.len(),
            });
        }
        let query = pack(extracted.as_slice());
        let mut best: Option<(usize, usize)> = None;
        let mut runner_up = 0usize;
        for (i, words) in self.packed.iter().enumerate() {
            let score = agreements(&query, words, self.m);
            match best {
                None => best = Some((i, score)),
                Some((bi, bs)) => {
                    if score > bs || (score == bs && self.ids[i] < self.ids[bi]) {
                        runner_up = bs;
                        best = Some((i, score));
                    } else {
                        runner_up = runner_up.max(score);
                    }
                }
            }
        }
        let (bi, bs) = best.expect("non-empty");
        let m = self.m as f64;
        let bit_accuracy = bs as f64 / m;
        let margin = if self.len() == 1 {
            bit_accuracy
        } else {
            (bs - runner_up) as f64 / m
        };
        Ok(MatchResult {
            account_id: self.ids[bi].clone(),
            bit_accuracy,
            margin,
        })
    }

    /// Serializes to the line format.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.len() * (self.m + 16));
        for (id, bits) in self.ids.iter().zip(&self.bits) {
            out.push_str(id);
            out.push('\t');
            for &b in bits.as_slice() {
                out.push(if b > 0 { '1' } else { '0' });
            }
            out.push('\n');
        }
        out
    }

    /// Parses the line format. Blank lines are skipped.
    pub fn from_text(m: usize, text: &str) -> Result<Self> {
        let mut reg = Self::new(m);
        for (lineno, line) in text.lines().enumerate() {
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.is_empty() {
                continue;
            }
            let ctx = |msg: String| {
                let mut s = String::new();
                let _ = write!(s, "line {}: {msg}", lineno + 1);
                Error::InvalidInput(s)
            };
            let (id, bits) = line
                .split_once('\t')
                .ok_or_else(|| ctx("missing tab separator".into()))?;
            let bits = bits
                .chars()
                .map(|c| match c {
                    '0' => Ok(-1),
                    '1' => Ok(1),
                    _ => Err(ctx(format!("invalid bit character {c:?}"))),
                })
                .collect::<Result<Vec<i8>>>()?;
            reg.register(id, WatermarkBits::new(bits)?)
                .map_err(|e| ctx(e.to_string()))?;
        }
        Ok(reg)
    }
}

fn validate_id(id: &str) -> Result<()> {
    if id.is_empty() {
        return Err(Error::InvalidInput("account id must be non-empty".into()));
    }
    if id.contains(['\t', '\n', '\r']) {
        return Err(Error::InvalidInput(format!(
            "account id {id:?} contains a tab or newline"
        )));
    }
    Ok(())
}

/// Free-function form of [`Registry::best_match`].
pub fn match_identity(registry: &Registry, extracted: &WatermarkBits) -> Result<MatchResult> {
    registry.best_match(extracted)
}
