//! Privacy amplification with a public Toeplitz matrix, SHA-256 key
//! finalisation and digest-based key confirmation.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

#[allow(unused_imports)]
use crate::par::prelude::*;
use crate::reconcile::{Link, MsgType, PublicSeed, ReconcileError, Role, Transport};

pub const KEY_BITS: usize = 256;
pub const DEFAULT_SAFETY_MARGIN: usize = 64;

#[derive(Debug, Error)]
pub enum KeyError {
    #[error("{n} reconciled bits cannot cover {leaked} leaked bits, margin {margin} and a {KEY_BITS}-bit key")]
    InsufficientBits { n: usize, leaked: u64, margin: usize },
    #[error("Toeplitz seed is {m}x{n} but input has {input} bits")]
    DimensionMismatch { m: usize, n: usize, input: usize },
    #[error("invalid Toeplitz dimensions {m}x{n}")]
    InvalidDimensions { m: usize, n: usize },
    #[error("need at least {KEY_BITS} amplified bits, got {0}")]
    TooShort(usize),
    #[error(transparent)]
    Transport(#[from] ReconcileError),
    #[error("malformed key file line {line}: {reason}")]
    KeyFile { line: usize, reason: String },
    #[error("key file i/o failed: {0}")]
    Io(#[from] std::io::Error),
}

/// Number of output bits the extractor may produce.
pub fn amplification_budget(n: usize, leaked_bits: u64, safety_margin: usize) -> Result<usize, KeyError> {
    let spent = leaked_bits as u128 + safety_margin as u128 + KEY_BITS as u128;
    if (n as u128) <= spent {
        return Err(KeyError::InsufficientBits { n, leaked: leaked_bits, margin: safety_margin });
    }
    Ok((n - leaked_bits as usize - safety_margin).min(n - 1))
}

/// First column and row of an `m x n` Toeplitz matrix, `m + n - 1` bits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ToeplitzSeed {
    bits: Vec<u8>,
    m: usize,
    n: usize,
}

impl ToeplitzSeed {
    pub fn new(bits: Vec<u8>, m: usize, n: usize) -> Result<Self, KeyError> {
        if m == 0 || n == 0 || bits.len() != m + n - 1 {
            return Err(KeyError::InvalidDimensions { m, n });
        }
        Ok(ToeplitzSeed { bits: bits.into_iter().map(|b| (b != 0) as u8).collect(), m, n })
    }

    /// Expands the public seed with SHA-256 in counter mode.
    pub fn from_public(seed: &PublicSeed, m: usize, n: usize) -> Result<Self, KeyError> {
        let len = (m + n).saturating_sub(1);
        let mut bits = Vec::with_capacity(len + 255);
        let mut counter = 0u64;
        while bits.len() < len {
            let mut h = Sha256::new();
            h.update(seed.bytes());
            h.update(b"toeplitz");
            h.update(counter.to_be_bytes());
            for byte in h.finalize() {
                bits.extend((0..8).rev().map(|k| (byte >> k) & 1));
            }
            counter += 1;
        }
        bits.truncate(len);
        ToeplitzSeed::new(bits, m, n)
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Matrix entry `T[i][j]`.
    pub fn entry(&self, i: usize, j: usize) -> u8 {
        self.bits[i + self.n - 1 - j]
    }
}

fn pack_lsb(bits: impl Iterator<Item = u8>, words: usize) -> Vec<u64> {
    let mut out = vec![0u64; words];
    for (i, b) in bits.enumerate() {
        out[i / 64] |= (b as u64) << (i % 64);
    }
    out
}

/// `T * input` over GF(2).
///
/// Row `i` of `T` read right to left is `seed[i..i + n]`, so each output bit is
/// the parity of that seed window ANDed with the reversed input.
pub fn toeplitz_extract(input: &[u8], seed: &ToeplitzSeed) -> Result<Vec<u8>, KeyError> {
    let (m, n) = (seed.m, seed.n);
    if input.len() != n {
        return Err(KeyError::DimensionMismatch { m, n, input: input.len() });
    }
    let in_words = n.div_ceil(64);
    let rev = pack_lsb(input.iter().rev().map(|&b| (b != 0) as u8), in_words);
    let s = pack_lsb(seed.bits.iter().copied(), (m + n - 1).div_ceil(64) + 1);
    let window = |start: usize| -> u64 {
        let (w, off) = (start / 64, start % 64);
        if off == 0 {
            s[w]
        } else {
            (s[w] >> off) | (s[w + 1] << (64 - off))
        }
    };
    Ok(crate::maybe_par_into_iter!(0..m)
        .map(|i| {
            let ones: u32 = (0..in_words).map(|k| (window(i + 64 * k) & rev[k]).count_ones()).sum();
            (ones & 1) as u8
        })
        .collect())
}

/// Big-endian bit packing, zero padded to whole bytes.
pub fn pack_bits(bits: &[u8]) -> Vec<u8> {
    bits.chunks(8)
        .map(|c| c.iter().enumerate().fold(0u8, |acc, (k, &b)| acc | (((b != 0) as u8) << (7 - k))))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyMaterial {
    pub scenario_id: String,
    pub key: [u8; 32],
    pub verification_digest: [u8; 32],
}

impl KeyMaterial {
    pub fn key_hex(&self) -> String {
        hex::encode(self.key)
    }

    pub fn digest_hex(&self) -> String {
        hex::encode(self.verification_digest)
    }

    pub fn key_bits(&self) -> Vec<u8> {
        self.key.iter().flat_map(|&b| (0..8).rev().map(move |k| (b >> k) & 1)).collect()
    }
}

pub fn verification_digest(key: &[u8; 32], challenge: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(key);
    h.update(challenge);
    h.finalize().into()
}

/// Hashes the amplified bits into a 256-bit key and binds the session
/// challenge into the confirmation digest.
pub fn finalize_key(amplified: &[u8], challenge: &[u8], scenario_id: &str) -> Result<KeyMaterial, KeyError> {
    if amplified.len() < KEY_BITS {
        return Err(KeyError::TooShort(amplified.len()));
    }
    let key: [u8; 32] = Sha256::digest(pack_bits(amplified)).into();
    Ok(KeyMaterial {
        scenario_id: scenario_id.to_string(),
        key,
        verification_digest: verification_digest(&key, challenge),
    })
}

/// Exchanges confirmation digests. The leader speaks first.
pub fn verify_keys<T: Transport>(local: &KeyMaterial, link: &mut Link<T>, challenge: &[u8]) -> Result<bool, KeyError> {
    let digest = verification_digest(&local.key, challenge);
    let bits: Vec<u8> = digest.iter().flat_map(|&b| (0..8).rev().map(move |k| (b >> k) & 1)).collect();
    let peer = match link.role() {
        Role::Leader => {
            link.send(MsgType::Done, 0, 1, bits.clone())?;
            link.flush()?;
            link.expect(MsgType::Done, 0, 1)?
        }
        Role::Follower => {
            let m = link.expect(MsgType::Done, 0, 1)?;
            link.send(MsgType::Done, 0, 1, bits.clone())?;
            link.flush()?;
            m
        }
    };
    Ok(peer.payload == bits)
}

pub fn format_key_file(keys: &[KeyMaterial]) -> String {
    let mut s = String::new();
    for k in keys {
        let _ = writeln!(s, "{} {} {}", k.scenario_id, k.key_hex(), k.digest_hex());
    }
    s
}

pub fn write_key_file(path: impl AsRef<Path>, keys: &[KeyMaterial]) -> Result<(), KeyError> {
    fs::write(path, format_key_file(keys))?;
    Ok(())
}

pub fn parse_key_file(text: &str) -> Result<Vec<KeyMaterial>, KeyError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: &str| KeyError::KeyFile { line: i + 1, reason: reason.into() };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [id, key, digest] = fields[..] else {
            return Err(bad("expected three fields"));
        };
        let decode = |h: &str| -> Result<[u8; 32], KeyError> {
            let v = hex::decode(h).map_err(|_| bad("bad hex"))?;
            v.try_into().map_err(|_| bad("expected 64 hex characters"))
        };
        out.push(KeyMaterial { scenario_id: id.to_string(), key: decode(key)?, verification_digest: decode(digest)? });
    }
    Ok(out)
}

pub fn read_key_file(path: impl AsRef<Path>) -> Result<Vec<KeyMaterial>, KeyError> {
    parse_key_file(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reconcile::channel_pair;
    use std::time::Duration;

    #[test]
    fn budget_examples() {
        assert_eq!(amplification_budget(1000, 200, 64).unwrap(), 736);
        assert_eq!(amplification_budget(321, 0, 64).unwrap(), 257);
        assert!(matches!(amplification_budget(320, 0, 64), Err(KeyError::InsufficientBits { .. })));
        assert!(amplification_budget(100, 5000, 64).is_err());
        // zero margin still leaves one bit of compression
        assert_eq!(amplification_budget(300, 0, 0).unwrap(), 299);
    }

    #[test]
    fn toeplitz_hand_example() {
        let seed = ToeplitzSeed::new(vec![1, 0, 1, 1], 2, 3).unwrap();
        let rows: Vec<Vec<u8>> = (0..2).map(|i| (0..3).map(|j| seed.entry(i, j)).collect()).collect();
        assert_eq!(rows, vec![vec![1, 0, 1], vec![1, 1, 0]]);
        assert_eq!(toeplitz_extract(&[1, 1, 0], &seed).unwrap(), vec![1, 0]);
        assert_eq!(toeplitz_extract(&[0, 0, 0], &seed).unwrap(), vec![0, 0]);
    }

    #[test]
    fn toeplitz_rejects_wrong_sizes() {
        let seed = ToeplitzSeed::new(vec![1, 0, 1, 1], 2, 3).unwrap();
        assert!(matches!(toeplitz_extract(&[1, 1], &seed), Err(KeyError::DimensionMismatch { .. })));
        assert!(ToeplitzSeed::new(vec![1, 0], 2, 3).is_err());
    }

    #[test]
    fn seed_expansion_is_deterministic() {
        let p = PublicSeed::from_nonce(b"n");
        let a = ToeplitzSeed::from_public(&p, 300, 700).unwrap();
        assert_eq!(a.bits().len(), 999);
        assert_eq!(a, ToeplitzSeed::from_public(&p, 300, 700).unwrap());
        assert_ne!(a, ToeplitzSeed::from_public(&PublicSeed::from_nonce(b"m"), 300, 700).unwrap());
    }

    #[test]
    fn sha256_vector() {
        // "abc" as bits
        let bits: Vec<u8> = b"abc".iter().flat_map(|&b| (0..8).rev().map(move |k| (b >> k) & 1)).collect();
        assert_eq!(pack_bits(&bits), b"abc");
        let mut padded = bits.clone();
        padded.resize(256, 0);
        let k = finalize_key(&padded, b"", "t").unwrap();
        let expect: [u8; 32] = Sha256::digest([&b"abc"[..], &[0u8; 29]].concat()).into();
        assert_eq!(k.key, expect);
        assert_eq!(
            hex::encode(Sha256::digest(b"abc")),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert!(matches!(finalize_key(&bits, b"", "t"), Err(KeyError::TooShort(24))));
    }

    #[test]
    fn packing_pads_with_zeros() {
        assert_eq!(pack_bits(&[1, 0, 1]), vec![0b1010_0000]);
        assert_eq!(pack_bits(&[1; 9]), vec![0xff, 0x80]);
    }

    #[test]
    fn key_file_round_trip() {
        let k = finalize_key(&[1; 300], b"c", "LoS1").unwrap();
        let text = format_key_file(std::slice::from_ref(&k));
        assert_eq!(text.lines().next().unwrap().split(' ').nth(1).unwrap().len(), 64);
        assert_eq!(parse_key_file(&text).unwrap(), vec![k]);
        assert!(parse_key_file("x abc def").is_err());
        assert!(parse_key_file("x").is_err());
    }

    #[test]
    fn digest_differs_from_key() {
        let k = finalize_key(&[0; 256], b"challenge", "x").unwrap();
        assert_ne!(k.key, k.verification_digest);
    }

    fn verify_pair(a: KeyMaterial, b: KeyMaterial) -> (bool, bool) {
        let (ta, tb) = channel_pair(Duration::from_secs(5));
        let h = std::thread::spawn(move || verify_keys(&a, &mut Link::new(ta, Role::Leader), b"ch").unwrap());
        let f = verify_keys(&b, &mut Link::new(tb, Role::Follower), b"ch").unwrap();
        (h.join().unwrap(), f)
    }

    #[test]
    fn verification_outcomes() {
        let a = finalize_key(&[1; 256], b"ch", "x").unwrap();
        assert_eq!(verify_pair(a.clone(), a.clone()), (true, true));
        let mut other = vec![1u8; 256];
        other[7] = 0;
        let b = finalize_key(&other, b"ch", "x").unwrap();
        assert_eq!(verify_pair(a, b), (false, false));
    }
}
