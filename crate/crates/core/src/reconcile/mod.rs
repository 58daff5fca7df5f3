//! Two-party information reconciliation over an authenticated public channel.
//!
//! The follower drives the exchange and corrects its own stream; the leader
//! only answers requests about its stream. Every answer that depends on the
//! leader's bits is counted as leaked.

mod cascade;
mod hamming;
mod wire;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cascade::{cascade_reconcile, hamming_r_for, DEFAULT_MAX_PASSES};
pub use hamming::{block_len, hamming_correct, hamming_syndrome};
pub use wire::{
    channel_pair, disclosed_bits, ChannelTransport, Link, Message, MsgType, TcpTransport, Transport, WireError,
};

pub const DEFAULT_SAMPLE_FRACTION: f64 = 0.03;
const COUNT_WIDTH: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Role {
    Leader,
    Follower,
}

impl Role {
    pub fn peer(self) -> Role {
        match self {
            Role::Leader => Role::Follower,
            Role::Follower => Role::Leader,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Leader => "LEADER",
            Role::Follower => "FOLLOWER",
        }
    }

    pub fn parse(s: &str) -> Option<Role> {
        match s {
            "LEADER" => Some(Role::Leader),
            "FOLLOWER" => Some(Role::Follower),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ReconcileError {
    #[error("transport failure: {0}")]
    TransportFailure(String),
    #[error("timed out waiting for peer")]
    Timeout,
    #[error("protocol desync: {0}")]
    ProtocolDesync(String),
    #[error("block of length {len} does not fit Hamming r={r}")]
    BadBlockLength { r: u32, len: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

impl From<WireError> for ReconcileError {
    fn from(e: WireError) -> Self {
        match e {
            WireError::Malformed(m) => ReconcileError::ProtocolDesync(m),
            WireError::Timeout => ReconcileError::Timeout,
            WireError::Disconnected => ReconcileError::TransportFailure("peer disconnected".into()),
            WireError::Io(e) => ReconcileError::TransportFailure(e.to_string()),
        }
    }
}

/// Bits held by one party plus the number of bits about them made public.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BitStream {
    bits: Vec<u8>,
    pub leaked_bits: u64,
}

impl BitStream {
    /// Any nonzero entry counts as a one.
    pub fn new(bits: Vec<u8>) -> Self {
        let bits = bits.into_iter().map(|b| (b != 0) as u8).collect();
        BitStream { bits, leaked_bits: 0 }
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn into_bits(self) -> Vec<u8> {
        self.bits
    }

    /// Drops the given positions (any order, duplicates allowed).
    pub fn remove_positions(&mut self, positions: &[usize]) {
        let mut drop = vec![false; self.bits.len()];
        for &p in positions {
            if p < drop.len() {
                drop[p] = true;
            }
        }
        let mut i = 0;
        self.bits.retain(|_| {
            let keep = !drop[i];
            i += 1;
            keep
        });
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ReconciliationLedger {
    pub passes: u32,
    pub hamming_r: u32,
    /// Input positions whose value changed (follower only).
    pub corrected_positions: Vec<usize>,
    /// `(pass, block)` pairs marked uncorrectable and removed.
    pub discarded_blocks: Vec<(u32, u64)>,
    pub discarded_bits: usize,
    /// Cumulative disclosed bits about the stream, including any BDR sample.
    pub leaked_bits: u64,
    /// Filled in once the final keys have been compared.
    pub residual_bdr: Option<f64>,
}

/// Public randomness shared by both parties, derived from the session nonce.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PublicSeed([u8; 32]);

impl PublicSeed {
    pub fn from_nonce(nonce: &[u8]) -> Self {
        let mut h = Sha256::new();
        h.update(b"skg/public-seed");
        h.update(nonce);
        PublicSeed(h.finalize().into())
    }

    /// Independent seed for a retry of the same session.
    pub fn for_attempt(&self, attempt: u32) -> Self {
        let mut h = Sha256::new();
        h.update(self.0);
        h.update(b"attempt");
        h.update(attempt.to_le_bytes());
        PublicSeed(h.finalize().into())
    }

    pub fn bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn rng(&self, label: &str, index: u64) -> ChaCha20Rng {
        let mut h = Sha256::new();
        h.update(self.0);
        h.update(label.as_bytes());
        h.update(index.to_le_bytes());
        ChaCha20Rng::from_seed(h.finalize().into())
    }
}

fn count_bits(count: usize) -> Vec<u8> {
    (0..COUNT_WIDTH).rev().map(|b| ((count >> b) & 1) as u8).collect()
}

fn bits_count(bits: &[u8]) -> usize {
    bits.iter().fold(0, |acc, &b| (acc << 1) | b as usize)
}

/// Discloses a publicly chosen sample of the follower's bits; the leader
/// returns the number of disagreements. Both sides drop the sample.
pub fn estimate_bdr_probe<T: Transport>(
    local: &mut BitStream,
    link: &mut Link<T>,
    seed: &PublicSeed,
    sample_fraction: f64,
) -> Result<f64, ReconcileError> {
    if !(sample_fraction > 0.0 && sample_fraction <= 0.1) {
        return Err(ReconcileError::InvalidParameter(format!(
            "sample fraction {sample_fraction} outside (0, 0.1]"
        )));
    }
    let n = local.len();
    if n == 0 {
        return Ok(0.0);
    }
    let k = ((sample_fraction * n as f64).round() as usize).clamp(1, n);
    let mut positions = index::sample(&mut seed.rng("bdr-sample", 0), n, k).into_vec();
    positions.sort_unstable();
    let mine: Vec<u8> = positions.iter().map(|&p| local.bits[p]).collect();

    let mismatches = match link.role() {
        Role::Follower => {
            link.send(MsgType::Par, 0, 0, mine)?;
            link.flush()?;
            let reply = link.expect(MsgType::Ack, 0, 0)?;
            if reply.payload.len() != COUNT_WIDTH {
                return Err(ReconcileError::ProtocolDesync("bad sample count width".into()));
            }
            bits_count(&reply.payload)
        }
        Role::Leader => {
            let msg = link.expect(MsgType::Par, 0, 0)?;
            if msg.payload.len() != k {
                return Err(ReconcileError::ProtocolDesync(format!(
                    "sample of {} bits, expected {k}",
                    msg.payload.len()
                )));
            }
            let count = msg.payload.iter().zip(&mine).filter(|(a, b)| a != b).count();
            link.send(MsgType::Ack, 0, 0, count_bits(count))?;
            link.flush()?;
            count
        }
    };
    local.remove_positions(&positions);
    local.leaked_bits += k as u64;
    Ok(mismatches as f64 / k as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::thread;
    use std::time::Duration;

    fn probe_pair(a: Vec<u8>, b: Vec<u8>, frac: f64) -> (f64, f64, BitStream, BitStream) {
        let (ta, tb) = channel_pair(Duration::from_secs(5));
        let seed = PublicSeed::from_nonce(b"probe");
        let h = thread::spawn(move || {
            let mut s = BitStream::new(a);
            let mut link = Link::new(ta, Role::Leader);
            let e = estimate_bdr_probe(&mut s, &mut link, &seed, frac).unwrap();
            (e, s)
        });
        let mut s = BitStream::new(b);
        let mut link = Link::new(tb, Role::Follower);
        let e = estimate_bdr_probe(&mut s, &mut link, &seed, frac).unwrap();
        let (el, sl) = h.join().unwrap();
        (el, e, sl, s)
    }

    #[test]
    fn identical_and_complementary() {
        let a: Vec<u8> = (0..1000).map(|i| (i * 7 % 3 == 0) as u8).collect();
        let (el, ef, sl, sf) = probe_pair(a.clone(), a.clone(), 0.05);
        assert_eq!((el, ef), (0.0, 0.0));
        assert_eq!(sl.len(), 950);
        assert_eq!(sl, sf);
        assert_eq!(sl.leaked_bits, 50);
        let inv: Vec<u8> = a.iter().map(|b| 1 - b).collect();
        let (el, ef, _, _) = probe_pair(a, inv, 0.1);
        assert_eq!((el, ef), (1.0, 1.0));
    }

    #[test]
    fn rejects_bad_fraction() {
        let (ta, _tb) = channel_pair(Duration::from_millis(10));
        let mut link = Link::new(ta, Role::Leader);
        let mut s = BitStream::new(vec![0; 10]);
        let seed = PublicSeed::from_nonce(b"x");
        assert!(estimate_bdr_probe(&mut s, &mut link, &seed, 0.0).is_err());
        assert!(estimate_bdr_probe(&mut s, &mut link, &seed, 0.2).is_err());
    }

    #[test]
    fn remove_positions_keeps_order() {
        let mut s = BitStream::new(vec![1, 0, 1, 1, 0]);
        s.remove_positions(&[3, 0, 3]);
        assert_eq!(s.bits(), &[0, 1, 0]);
    }

    #[test]
    fn public_seed_streams_differ_by_label_and_attempt() {
        use rand::Rng;
        let s = PublicSeed::from_nonce(&[1, 2, 3]);
        let a: u64 = s.rng("x", 0).random();
        let b: u64 = s.rng("x", 1).random();
        let c: u64 = s.rng("y", 0).random();
        let d: u64 = s.for_attempt(1).rng("x", 0).random();
        assert!(a != b && a != c && a != d);
        assert_eq!(a, PublicSeed::from_nonce(&[1, 2, 3]).rng("x", 0).random::<u64>());
    }
}
