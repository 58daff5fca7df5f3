use sha2::{Digest, Sha256};
use skg_core::quality::*;

/// SHA-256 counter stream, MSB first.
fn golden_bits(n: usize) -> Vec<u8> {
    let mut bits = Vec::with_capacity(n + 256);
    let mut counter = 0u64;
    while bits.len() < n {
        let mut h = Sha256::new();
        h.update(b"nist-golden");
        h.update(counter.to_be_bytes());
        for byte in h.finalize() {
            bits.extend((0..8).rev().map(|k| (byte >> k) & 1));
        }
        counter += 1;
    }
    bits.truncate(n);
    bits
}

fn digits(s: &str) -> Vec<u8> {
    s.bytes().map(|c| c - b'0').collect()
}

const PI100: &str = "1100100100001111110110101010001000100001011010001100001000110100110001001100011001100010100010111000";

// p-values from an independent numpy/scipy implementation of the reference formulas
const GOLDEN: [(&str, f64); 12] = [
    ("Frequency", 0.546493595407),
    ("BlockFrequency", 0.687307758457),
    ("Runs", 0.123903983579),
    ("LongestRun", 0.090627841366),
    ("DFT", 0.188759570541),
    ("CumulativeSums-Forward", 0.838802101975),
    ("CumulativeSums-Backward", 0.349595003546),
    ("ApproximateEntropy", 0.420291409732),
    ("Serial-1", 0.238196553545),
    ("Serial-2", 0.113436380836),
    ("NonOverlappingTemplate-000000001", 0.909443628149),
    ("NonOverlappingTemplate-111111110", 0.776416573574),
];

#[test]
fn suite_matches_reference_p_values() {
    let results = nist_suite(&golden_bits(2816)).unwrap();
    assert_eq!(results.len(), GOLDEN.len());
    for (name, p) in GOLDEN {
        let r = results.iter().find(|r| r.name == name).unwrap_or_else(|| panic!("missing {name}"));
        assert!((r.p_value - p).abs() < 1e-6, "{name}: {} vs {p}", r.p_value);
        assert_eq!(r.pass, p >= NIST_ALPHA);
    }
}

#[test]
fn hundred_bit_example() {
    let bits = digits(PI100);
    assert!((frequency(&bits) - 0.109598583).abs() < 1e-6);
    assert!((runs(&bits) - 0.500797918).abs() < 1e-6);
}

#[test]
fn frequency_formula_with_58_ones() {
    let bits: Vec<u8> = (0..100).map(|i| (i < 58) as u8).collect();
    assert!((frequency(&bits) - 0.109598583399).abs() < 1e-9);
}

#[test]
fn alternating_sequence_fails_runs() {
    let bits: Vec<u8> = (0..2816).map(|i| (i % 2) as u8).collect();
    let results = nist_suite(&bits).unwrap();
    let r = results.iter().find(|r| r.name == "Runs").unwrap();
    assert!(!r.pass && r.p_value < 0.05);
}

#[test]
fn suite_needs_2048_bits() {
    assert_eq!(nist_suite(&golden_bits(2047)), Err(QualityError::TooShort(2047)));
    assert!(nist_suite(&golden_bits(2048)).is_ok());
}

#[test]
fn seeded_generator_mostly_passes() {
    // majority over 20 streams of at most one failure
    let good = (0..20u64)
        .filter(|s| {
            let mut h = Sha256::new();
            h.update(s.to_be_bytes());
            let seed: [u8; 32] = h.finalize().into();
            let bits: Vec<u8> = (0..2816u32)
                .map(|i| {
                    let mut h = Sha256::new();
                    h.update(seed);
                    h.update((i / 256).to_be_bytes());
                    let d = h.finalize();
                    let k = (i % 256) as usize;
                    (d[k / 8] >> (7 - k % 8)) & 1
                })
                .collect();
            nist_suite(&bits).unwrap().iter().filter(|r| !r.pass).count() <= 1
        })
        .count();
    assert!(good > 10, "{good}/20");
}

#[test]
fn entropy_examples() {
    assert_eq!(shannon_entropy(&[0; 64]).unwrap(), 0.0);
    assert_eq!(shannon_entropy(&[0, 1, 1, 0]).unwrap(), 1.0);
    let k: Vec<u8> = (0..256).map(|i| (i < 120) as u8).collect();
    assert!((shannon_entropy(&k).unwrap() - 0.997180398894).abs() < 1e-9);
    let k: Vec<u8> = (0..256).map(|i| (i < 160) as u8).collect();
    let (per_bit, eff) = min_entropy(&k).unwrap();
    assert!((per_bit - 0.678071905113).abs() < 1e-9);
    assert!((eff - 173.586407709).abs() < 1e-6);
    let balanced: Vec<u8> = (0..256).map(|i| (i % 2) as u8).collect();
    assert_eq!(min_entropy(&balanced).unwrap(), (1.0, 256.0));
    assert_eq!(shannon_entropy(&[]), Err(QualityError::Empty));
    assert_eq!(min_entropy(&[]), Err(QualityError::Empty));
}

#[test]
fn kgr_examples() {
    let (_, net) = kgr(256, 0, 12_470.0).unwrap();
    assert!((net - 20.529270248).abs() < 1e-6);
    let (raw, _) = kgr(256, 60 * 100, 1000.0).unwrap();
    assert_eq!(raw, 6000.0);
    assert_eq!(kgr(256, 10, 0.0), Err(QualityError::ZeroDuration));
}
