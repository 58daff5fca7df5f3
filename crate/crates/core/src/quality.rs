//! Key quality: empirical entropies, a NIST SP 800-22 subset usable at a few
//! thousand bits, and key generation rates.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::checked_gamma_ur;
use thiserror::Error;

#[allow(unused_imports)]
use crate::par::prelude::*;

pub const NIST_MIN_BITS: usize = 2048;
pub const NIST_ALPHA: f64 = 0.05;
pub const BLOCK_FREQUENCY_M: usize = 128;
pub const APEN_M: usize = 2;
pub const SERIAL_M: usize = 2;
pub const TEMPLATE_BLOCKS: usize = 8;
pub const TEMPLATES: [&str; 2] = ["000000001", "111111110"];

#[derive(Debug, Error, PartialEq)]
pub enum QualityError {
    #[error("bit sequence is empty")]
    Empty,
    #[error("NIST subset needs at least {NIST_MIN_BITS} bits, got {0}")]
    TooShort(usize),
    #[error("trace duration must be positive")]
    ZeroDuration,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NistResult {
    pub name: String,
    pub p_value: f64,
    pub pass: bool,
}

impl NistResult {
    fn new(name: impl Into<String>, p_value: f64) -> Self {
        NistResult { name: name.into(), p_value, pass: p_value >= NIST_ALPHA }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub h1_per_bit: f64,
    pub hmin_per_bit: f64,
    pub effective_bits: f64,
    pub nist_results: Vec<NistResult>,
    pub bdr_initial: f64,
    pub bdr_final: f64,
    pub kgr_raw_bps: f64,
    pub kgr_net_bps: f64,
    pub leaked_bits: u64,
}

fn ones(bits: &[u8]) -> usize {
    bits.iter().filter(|&&b| b != 0).count()
}

fn h2(p: f64) -> f64 {
    [p, 1.0 - p].iter().filter(|&&q| q > 0.0).map(|&q| -q * q.log2()).sum()
}

pub fn shannon_entropy(bits: &[u8]) -> Result<f64, QualityError> {
    if bits.is_empty() {
        return Err(QualityError::Empty);
    }
    Ok(h2(ones(bits) as f64 / bits.len() as f64))
}

/// Per-bit min-entropy and the corresponding number of effective bits.
pub fn min_entropy(bits: &[u8]) -> Result<(f64, f64), QualityError> {
    if bits.is_empty() {
        return Err(QualityError::Empty);
    }
    let p1 = ones(bits) as f64 / bits.len() as f64;
    let per_bit = -p1.max(1.0 - p1).log2();
    Ok((per_bit, per_bit * bits.len() as f64))
}

/// `(raw_bps, net_bps)` over the trace duration.
pub fn kgr(key_bits: usize, raw_bits: usize, trace_duration_ms: f64) -> Result<(f64, f64), QualityError> {
    if trace_duration_ms.is_nan() || trace_duration_ms <= 0.0 {
        return Err(QualityError::ZeroDuration);
    }
    let s = trace_duration_ms / 1000.0;
    Ok((raw_bits as f64 / s, key_bits as f64 / s))
}

/// Upper regularised incomplete gamma function.
pub fn igamc(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    checked_gamma_ur(a, x).unwrap_or(f64::NAN)
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn pm(bits: &[u8]) -> impl DoubleEndedIterator<Item = f64> + '_ {
    bits.iter().map(|&b| if b != 0 { 1.0 } else { -1.0 })
}

pub fn frequency(bits: &[u8]) -> f64 {
    let s: f64 = pm(bits).sum();
    erfc(s.abs() / (bits.len() as f64).sqrt() / std::f64::consts::SQRT_2)
}

pub fn block_frequency(bits: &[u8], m: usize) -> f64 {
    let blocks = bits.len() / m;
    let chi2: f64 = 4.0
        * m as f64
        * bits
            .chunks_exact(m)
            .take(blocks)
            .map(|c| (ones(c) as f64 / m as f64 - 0.5).powi(2))
            .sum::<f64>();
    igamc(blocks as f64 / 2.0, chi2 / 2.0)
}

pub fn runs(bits: &[u8]) -> f64 {
    let n = bits.len() as f64;
    let pi = ones(bits) as f64 / n;
    if (pi - 0.5).abs() >= 2.0 / n.sqrt() {
        return 0.0;
    }
    let v = 1 + bits.windows(2).filter(|w| w[0] != w[1]).count();
    let num = (v as f64 - 2.0 * n * pi * (1.0 - pi)).abs();
    erfc(num / (2.0 * (2.0 * n).sqrt() * pi * (1.0 - pi)))
}

/// Longest run of ones in 8-bit blocks.
pub fn longest_run(bits: &[u8]) -> f64 {
    const PI: [f64; 4] = [0.2148, 0.3672, 0.2305, 0.2266];
    let blocks = bits.len() / 8;
    let mut v = [0usize; 4];
    for c in bits.chunks_exact(8).take(blocks) {
        let (mut best, mut cur) = (0, 0);
        for &b in c {
            cur = if b != 0 { cur + 1 } else { 0 };
            best = best.max(cur);
        }
        v[best.clamp(1, 4) - 1] += 1;
    }
    let nb = blocks as f64;
    let chi2: f64 = v.iter().zip(PI).map(|(&vi, p)| (vi as f64 - nb * p).powi(2) / (nb * p)).sum();
    igamc(1.5, chi2 / 2.0)
}

pub fn dft_spectral(bits: &[u8]) -> f64 {
    let n = bits.len();
    let mut x: Vec<Complex64> = pm(bits).map(|v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut x);
    let t = ((1.0f64 / 0.05).ln() * n as f64).sqrt();
    let n0 = 0.95 * n as f64 / 2.0;
    let n1 = x[..n / 2].iter().filter(|c| c.norm() < t).count() as f64;
    let d = (n1 - n0) / (n as f64 * 0.95 * 0.05 / 4.0).sqrt();
    erfc(d.abs() / std::f64::consts::SQRT_2)
}

pub fn cumulative_sums(bits: &[u8], forward: bool) -> f64 {
    let n = bits.len() as f64;
    let mut s = 0.0f64;
    let mut z = 0.0f64;
    let mut step = |v: f64| {
        s += v;
        z = z.max(s.abs());
    };
    if forward {
        pm(bits).for_each(&mut step);
    } else {
        pm(bits).rev().for_each(&mut step);
    }
    let sq = n.sqrt();
    let mut sum1 = 0.0;
    let lo = ((-n / z + 1.0) / 4.0).floor() as i64;
    let hi = ((n / z - 1.0) / 4.0).floor() as i64;
    for k in lo..=hi {
        let k = k as f64;
        sum1 += normal_cdf((4.0 * k + 1.0) * z / sq) - normal_cdf((4.0 * k - 1.0) * z / sq);
    }
    let mut sum2 = 0.0;
    let lo = ((-n / z - 3.0) / 4.0).floor() as i64;
    for k in lo..=hi {
        let k = k as f64;
        sum2 += normal_cdf((4.0 * k + 3.0) * z / sq) - normal_cdf((4.0 * k + 1.0) * z / sq);
    }
    1.0 - sum1 + sum2
}

/// Counts of every overlapping `m`-bit pattern, wrapping around the end.
fn pattern_counts(bits: &[u8], m: usize) -> Vec<usize> {
    let n = bits.len();
    let mut counts = vec![0usize; 1 << m];
    if m == 0 {
        return counts;
    }
    for i in 0..n {
        let idx = (0..m).fold(0usize, |acc, k| (acc << 1) | bits[(i + k) % n] as usize);
        counts[idx] += 1;
    }
    counts
}

pub fn approximate_entropy(bits: &[u8], m: usize) -> f64 {
    let n = bits.len() as f64;
    let phi = |m: usize| -> f64 {
        pattern_counts(bits, m)
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                p * p.ln()
            })
            .sum()
    };
    let apen = phi(m) - phi(m + 1);
    let chi2 = 2.0 * n * (std::f64::consts::LN_2 - apen);
    igamc((1u64 << (m - 1)) as f64, chi2 / 2.0)
}

/// The two serial-test p-values.
pub fn serial(bits: &[u8], m: usize) -> (f64, f64) {
    let n = bits.len() as f64;
    let psi = |m: usize| -> f64 {
        if m == 0 {
            return 0.0;
        }
        let sq: f64 = pattern_counts(bits, m).iter().map(|&c| (c as f64).powi(2)).sum();
        (1u64 << m) as f64 / n * sq - n
    };
    let (a, b, c) = (psi(m), psi(m - 1), psi(m.saturating_sub(2)));
    let d1 = a - b;
    let d2 = a - 2.0 * b + c;
    (
        igamc(2f64.powi(m as i32 - 2), d1 / 2.0),
        igamc(2f64.powi(m as i32 - 3), d2 / 2.0),
    )
}

pub fn non_overlapping_template(bits: &[u8], template: &[u8], blocks: usize) -> f64 {
    let m = template.len();
    let big_m = bits.len() / blocks;
    let mu = (big_m - m + 1) as f64 / 2f64.powi(m as i32);
    let var = big_m as f64 * (1.0 / 2f64.powi(m as i32) - (2.0 * m as f64 - 1.0) / 2f64.powi(2 * m as i32));
    let chi2: f64 = bits
        .chunks_exact(big_m)
        .take(blocks)
        .map(|block| {
            let (mut j, mut w) = (0, 0usize);
            while j + m <= big_m {
                if block[j..j + m] == *template {
                    w += 1;
                    j += m;
                } else {
                    j += 1;
                }
            }
            (w as f64 - mu).powi(2) / var
        })
        .sum();
    igamc(blocks as f64 / 2.0, chi2 / 2.0)
}

fn template_bits(t: &str) -> Vec<u8> {
    t.bytes().map(|c| c - b'0').collect()
}

/// Twelve p-values; the serial test contributes two.
pub fn nist_suite(bits: &[u8]) -> Result<Vec<NistResult>, QualityError> {
    if bits.len() < NIST_MIN_BITS {
        return Err(QualityError::TooShort(bits.len()));
    }
    let bits: Vec<u8> = bits.iter().map(|&b| (b != 0) as u8).collect();
    let bits = &bits[..];
    let jobs: Vec<usize> = (0..11).collect();
    let mut out: Vec<(usize, Vec<NistResult>)> = crate::maybe_par_iter!(jobs)
        .map(|&j| {
            let r = match j {
                0 => vec![NistResult::new("Frequency", frequency(bits))],
                1 => vec![NistResult::new("BlockFrequency", block_frequency(bits, BLOCK_FREQUENCY_M))],
                2 => vec![NistResult::new("Runs", runs(bits))],
                3 => vec![NistResult::new("LongestRun", longest_run(bits))],
                4 => vec![NistResult::new("DFT", dft_spectral(bits))],
                5 => vec![NistResult::new("CumulativeSums-Forward", cumulative_sums(bits, true))],
                6 => vec![NistResult::new("CumulativeSums-Backward", cumulative_sums(bits, false))],
                7 => vec![NistResult::new("ApproximateEntropy", approximate_entropy(bits, APEN_M))],
                8 => {
                    let (p1, p2) = serial(bits, SERIAL_M);
                    vec![NistResult::new("Serial-1", p1), NistResult::new("Serial-2", p2)]
                }
                k => {
                    let t = TEMPLATES[k - 9];
                    let p = non_overlapping_template(bits, &template_bits(t), TEMPLATE_BLOCKS);
                    vec![NistResult::new(format!("NonOverlappingTemplate-{t}"), p)]
                }
            };
            (j, r)
        })
        .collect();
    out.sort_by_key(|(j, _)| *j);
    Ok(out.into_iter().flat_map(|(_, r)| r).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(shannon_entropy(&[0; 64]).unwrap(), 0.0);
        let half: Vec<u8> = (0..256).map(|i| (i % 2) as u8).collect();
        assert_eq!(shannon_entropy(&half).unwrap(), 1.0);
        let mut b = vec![0u8; 256];
        b[..120].fill(1);
        // H(120/256) evaluated directly
        assert!(close(shannon_entropy(&b).unwrap(), 0.997_180, 1e-6));
        assert_eq!(min_entropy(&half).unwrap(), (1.0, 256.0));
        let mut b = vec![0u8; 256];
        b[..160].fill(1);
        let (h, eff) = min_entropy(&b).unwrap();
        assert!(close(h, 0.678_072, 1e-5));
        assert!(close(eff, 173.586, 1e-2));
        assert_eq!(shannon_entropy(&[]), Err(QualityError::Empty));
        assert_eq!(min_entropy(&[]), Err(QualityError::Empty));
    }

    #[test]
    fn min_entropy_band_brackets() {
        // max bit probability 0.503 and 0.556 bracket 218..253 effective bits
        assert!(close(-(0.503f64).log2() * 256.0, 253.8, 0.1));
        assert!(close(-(0.556f64).log2() * 256.0, 216.8, 0.1));
    }

    #[test]
    fn kgr_examples() {
        let (_, net) = kgr(256, 0, 12_470.0).unwrap();
        assert!(close(net, 20.53, 0.01));
        let (raw, _) = kgr(0, 6000, 1000.0).unwrap();
        assert_eq!(raw, 6000.0);
        assert_eq!(kgr(1, 1, 0.0), Err(QualityError::ZeroDuration));
    }

    #[test]
    fn frequency_formula() {
        let mut b = vec![0u8; 100];
        b[..58].fill(1);
        let expect = erfc((2.0 * 58.0 - 100.0f64).abs() / (10.0 * std::f64::consts::SQRT_2));
        assert!(close(frequency(&b), expect, 1e-12));
    }

    #[test]
    fn alternating_fails_runs() {
        let b: Vec<u8> = (0..2816).map(|i| (i % 2) as u8).collect();
        assert!(runs(&b) < 0.05);
        let suite = nist_suite(&b).unwrap();
        assert_eq!(suite.len(), 12);
        assert!(!suite.iter().find(|r| r.name == "Runs").unwrap().pass);
    }

    #[test]
    fn suite_rejects_short_input() {
        assert_eq!(nist_suite(&[0; 100]), Err(QualityError::TooShort(100)));
    }

    #[test]
    fn igamc_edges() {
        assert_eq!(igamc(1.0, 0.0), 1.0);
        assert!(close(igamc(1.0, 2.0), (-2.0f64).exp(), 1e-12));
    }
}
