//! Built-in simulated scenarios: eight line-of-sight and three
//! non-line-of-sight settings with fixed probe counts and target subband
//! widths.
//!
//! Each preset uses an exponentially decaying tap profile whose delays are
//! scaled so the RMS delay spread is `1 / (10 * target_width)`, which makes
//! the coherence-bandwidth rule land on the target width.

use crate::channel_sim::ScenarioConfig;
use crate::trace_model::FftOrdering;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub label: &'static str,
    pub probes: u64,
    pub target_subband_khz: f64,
    pub line_of_sight: bool,
    pub doppler_hz: f64,
    pub snr_db: f64,
}

const fn los(name: &'static str, label: &'static str, probes: u64, khz: f64, doppler_hz: f64, snr_db: f64) -> Preset {
    Preset { name, label, probes, target_subband_khz: khz, line_of_sight: true, doppler_hz, snr_db }
}

const fn nlos(name: &'static str, label: &'static str, probes: u64, khz: f64, doppler_hz: f64, snr_db: f64) -> Preset {
    Preset { name, label, probes, target_subband_khz: khz, line_of_sight: false, doppler_hz, snr_db }
}

pub const PRESETS: [Preset; 11] = [
    los("los1", "LoS 1 (static)", 1247, 1000.0, 2.0, 22.0),
    los("los2", "LoS 2 (slow walk)", 2116, 800.0, 4.0, 22.0),
    los("los3", "LoS 3 (walk)", 856, 1500.0, 8.0, 22.0),
    los("los4", "LoS 4 (corridor)", 1395, 1200.0, 4.0, 22.0),
    los("los5", "LoS 5 (open space)", 3802, 600.0, 3.0, 22.0),
    los("los6", "LoS 6 (office)", 2541, 1000.0, 3.0, 22.0),
    los("los7", "LoS 7 (lab)", 1689, 900.0, 2.0, 22.0),
    los("los8", "LoS 8 (stairwell)", 2203, 1100.0, 5.0, 22.0),
    nlos("nlos1", "NLoS 1 (through walls)", 571, 1800.0, 3.0, 2.2),
    nlos("nlos2", "NLoS 2 (two walls)", 895, 1400.0, 3.0, 1.8),
    nlos("nlos3", "NLoS 3 (basement)", 1104, 1600.0, 3.0, 1.6),
];

pub const PROBE_PERIOD_MS: u64 = 10;
const LOS_TAPS: usize = 8;
const NLOS_TAPS: usize = 10;
const LOS_K_DB: f64 = 3.0;

pub fn names() -> Vec<&'static str> {
    PRESETS.iter().map(|p| p.name).collect()
}

pub fn find(name: &str) -> Option<&'static Preset> {
    let key = name.to_ascii_lowercase().replace([' ', '_', '-'], "");
    PRESETS.iter().find(|p| p.name == key)
}

/// RMS spread of a discrete profile.
fn rms_spread(delays: &[f64], powers_db: &[f64]) -> f64 {
    let lin: Vec<f64> = powers_db.iter().map(|d| 10f64.powf(d / 10.0)).collect();
    let total: f64 = lin.iter().sum();
    let mean: f64 = delays.iter().zip(&lin).map(|(d, p)| d * p).sum::<f64>() / total;
    let second: f64 = delays.iter().zip(&lin).map(|(d, p)| d * d * p).sum::<f64>() / total;
    (second - mean * mean).max(0.0).sqrt()
}

impl Preset {
    pub fn target_rms_delay_ns(&self) -> f64 {
        1e9 / (10.0 * self.target_subband_khz * 1e3)
    }

    pub fn config(&self, seed: u64) -> ScenarioConfig {
        let taps = if self.line_of_sight { LOS_TAPS } else { NLOS_TAPS };
        // 3 dB per tap for LoS, flatter for NLoS
        let step_db = if self.line_of_sight { 3.0 } else { 1.0 };
        let powers_db: Vec<f64> = (0..taps).map(|i| -step_db * i as f64).collect();
        let unit: Vec<f64> = (0..taps).map(|i| i as f64).collect();
        let scale = self.target_rms_delay_ns() / rms_spread(&unit, &powers_db);
        ScenarioConfig {
            name: self.name.to_string(),
            seed,
            duration_ms: self.probes * PROBE_PERIOD_MS,
            probe_period_ms: PROBE_PERIOD_MS,
            tap_count: taps,
            tap_delays_ns: unit.iter().map(|u| u * scale).collect(),
            tap_powers_db: powers_db,
            rician_k_db: self.line_of_sight.then_some(LOS_K_DB),
            doppler_hz: self.doppler_hz,
            snr_db_gnb: self.snr_db,
            snr_db_ue: self.snr_db,
            ue_ordering: FftOrdering::ReversedNegative,
            eavesdropper: false,
            ..ScenarioConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eleven_presets_with_expected_counts() {
        assert_eq!(PRESETS.len(), 11);
        assert_eq!(PRESETS.iter().filter(|p| p.line_of_sight).count(), 8);
        let counts: Vec<u64> = PRESETS.iter().map(|p| p.probes).collect();
        assert_eq!(counts, vec![1247, 2116, 856, 1395, 3802, 2541, 1689, 2203, 571, 895, 1104]);
    }

    #[test]
    fn configs_validate_and_hit_spread() {
        for p in &PRESETS {
            let cfg = p.config(1);
            cfg.validate().unwrap();
            assert_eq!(cfg.probe_count() as u64, p.probes);
            let got = rms_spread(&cfg.tap_delays_ns, &cfg.tap_powers_db);
            assert!((got - p.target_rms_delay_ns()).abs() < 1e-6);
        }
    }

    #[test]
    fn lookup_is_forgiving() {
        assert_eq!(find("LoS1").unwrap().probes, 1247);
        assert_eq!(find("nlos_3").unwrap().probes, 1104);
        assert!(find("los9").is_none());
    }
}
