//! Hamming(2^r - 1, 2^r - 1 - r) syndromes with the canonical parity-check
//! matrix: column `i` (1-based) is the binary representation of `i`.

use super::ReconcileError;

pub const MIN_R: u32 = 3;
pub const MAX_R: u32 = 5;

pub fn block_len(r: u32) -> usize {
    (1usize << r) - 1
}

fn syndrome_value(block: &[u8]) -> usize {
    block
        .iter()
        .enumerate()
        .filter(|(_, &b)| b != 0)
        .fold(0, |acc, (i, _)| acc ^ (i + 1))
}

fn to_bits(value: usize, r: u32) -> Vec<u8> {
    (0..r).rev().map(|b| ((value >> b) & 1) as u8).collect()
}

fn from_bits(bits: &[u8]) -> usize {
    bits.iter().fold(0, |acc, &b| (acc << 1) | b as usize)
}

/// `H * block` over GF(2), `r` bits, most significant first.
pub fn hamming_syndrome(block: &[u8], r: u32) -> Result<Vec<u8>, ReconcileError> {
    if !(MIN_R..=MAX_R).contains(&r) || block.len() != block_len(r) {
        return Err(ReconcileError::BadBlockLength { r, len: block.len() });
    }
    Ok(to_bits(syndrome_value(block), r))
}

/// Flips the position named by `local XOR remote`. Exact when the blocks
/// differ in at most one position; otherwise it may flip a correct bit,
/// which later parity passes detect. Returns the 1-based flipped position.
pub fn hamming_correct(block: &mut [u8], local_syndrome: &[u8], remote_syndrome: &[u8]) -> Option<usize> {
    debug_assert_eq!(local_syndrome.len(), remote_syndrome.len());
    let s = from_bits(local_syndrome) ^ from_bits(remote_syndrome);
    if s == 0 || s > block.len() {
        return None;
    }
    block[s - 1] ^= 1;
    Some(s)
}
