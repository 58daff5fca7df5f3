//! Reciprocal wideband channel simulator.
//!
//! A tapped-delay-line channel with complex Gaussian taps evolves as a
//! first-order autoregressive process. The gNB and UE observe the same
//! realization through independent noise and independent per-probe phase
//! references; an optional eavesdropper observes an independent realization
//! with the same delay profile.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[allow(unused_imports)]
use crate::par::prelude::*;
use crate::trace_model::{ChannelProbe, Endpoint, FftOrdering, ProbeTrace};

/// Scale factor between Doppler rate and the AR(1) decay exponent.
pub const AR_DOPPLER_SCALE: f64 = 0.1;

/// Bins weaker than this fraction of the strongest PDP bin are discarded.
const PDP_FLOOR_REL: f64 = 1e-2;
/// Bins weaker than this multiple of the median bin (noise floor) are discarded.
const PDP_FLOOR_MEDIAN: f64 = 4.0;

const STREAM_CHANNEL: u64 = 1;
const STREAM_GNB: u64 = 2;
const STREAM_UE: u64 = 3;
const STREAM_EVE_CHANNEL: u64 = 4;
const STREAM_EVE: u64 = 5;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario config: {0}")]
    InvalidConfig(String),
    #[error("trace has no probes")]
    EmptyTrace,
    #[error("config file i/o failed: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub duration_ms: u64,
    pub probe_period_ms: u64,
    pub subcarrier_count: usize,
    pub subcarrier_spacing_hz: f64,
    pub bandwidth_hz: f64,
    pub tap_count: usize,
    pub tap_delays_ns: Vec<f64>,
    pub tap_powers_db: Vec<f64>,
    /// Ratio of specular to diffuse power on the first tap; `None` is Rayleigh.
    pub rician_k_db: Option<f64>,
    pub doppler_hz: f64,
    pub snr_db_gnb: f64,
    pub snr_db_ue: f64,
    pub ue_ordering: FftOrdering,
    pub eavesdropper: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            name: "custom".into(),
            seed: 0,
            duration_ms: 10_000,
            probe_period_ms: 10,
            // 106 resource blocks of 12 subcarriers at 30 kHz inside 40 MHz
            subcarrier_count: 1272,
            subcarrier_spacing_hz: 30e3,
            bandwidth_hz: 40e6,
            tap_count: 1,
            tap_delays_ns: vec![0.0],
            tap_powers_db: vec![0.0],
            rician_k_db: None,
            doppler_hz: 5.0,
            snr_db_gnb: 20.0,
            snr_db_ue: 20.0,
            ue_ordering: FftOrdering::Standard,
            eavesdropper: false,
        }
    }
}

impl ScenarioConfig {
    pub fn probe_count(&self) -> usize {
        (self.duration_ms / self.probe_period_ms.max(1)) as usize
    }

    /// AR(1) coefficient between consecutive probes.
    pub fn temporal_coefficient(&self) -> f64 {
        let period_s = self.probe_period_ms as f64 * 1e-3;
        (-period_s * self.doppler_hz * 2.0 * PI * AR_DOPPLER_SCALE).exp()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if self.probe_period_ms < 1 {
            return bad("probe_period_ms must be at least 1".into());
        }
        if self.probe_count() == 0 {
            return bad("duration shorter than one probe period".into());
        }
        if self.subcarrier_count < 2 || !self.subcarrier_count.is_multiple_of(2) {
            return bad("subcarrier_count must be even and at least 2".into());
        }
        if !(self.subcarrier_spacing_hz > 0.0 && self.subcarrier_spacing_hz.is_finite()) {
            return bad("subcarrier_spacing_hz must be positive".into());
        }
        if self.subcarrier_count as f64 * self.subcarrier_spacing_hz > self.bandwidth_hz * (1.0 + 1e-9) {
            return bad("subcarriers do not fit in the bandwidth".into());
        }
        if self.tap_count == 0 {
            return bad("tap_count must be at least 1".into());
        }
        if self.tap_delays_ns.len() != self.tap_count || self.tap_powers_db.len() != self.tap_count {
            return bad(format!(
                "tap_count={} but {} delays and {} powers",
                self.tap_count,
                self.tap_delays_ns.len(),
                self.tap_powers_db.len()
            ));
        }
        if self
            .tap_delays_ns
            .iter()
            .chain(&self.tap_powers_db)
            .any(|v| !v.is_finite())
            || self.tap_delays_ns.iter().any(|&d| d < 0.0)
        {
            return bad("tap delays must be finite and nonnegative, powers finite".into());
        }
        if !self.snr_db_gnb.is_finite() || !self.snr_db_ue.is_finite() {
            return bad("snr values must be finite".into());
        }
        if !(self.doppler_hz.is_finite() && self.doppler_hz >= 0.0) {
            return bad("doppler_hz must be finite and nonnegative".into());
        }
        if let Some(k) = self.rician_k_db {
            if !k.is_finite() {
                return bad("rician_k_db must be finite".into());
            }
        }
        Ok(())
    }

    /// Flat `key=value` rendering, one key per line, lists comma-separated.
    pub fn to_config_text(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let _ = writeln!(s, "name={}", self.name);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "duration_ms={}", self.duration_ms);
        let _ = writeln!(s, "probe_period_ms={}", self.probe_period_ms);
        let _ = writeln!(s, "subcarrier_count={}", self.subcarrier_count);
        let _ = writeln!(s, "subcarrier_spacing_hz={}", self.subcarrier_spacing_hz);
        let _ = writeln!(s, "bandwidth_hz={}", self.bandwidth_hz);
        let _ = writeln!(s, "tap_count={}", self.tap_count);
        let _ = writeln!(s, "tap_delays_ns={}", list(&self.tap_delays_ns));
        let _ = writeln!(s, "tap_powers_db={}", list(&self.tap_powers_db));
        if let Some(k) = self.rician_k_db {
            let _ = writeln!(s, "rician_k_db={k}");
        }
        let _ = writeln!(s, "doppler_hz={}", self.doppler_hz);
        let _ = writeln!(s, "snr_db_gnb={}", self.snr_db_gnb);
        let _ = writeln!(s, "snr_db_ue={}", self.snr_db_ue);
        let _ = writeln!(s, "ue_ordering={}", self.ue_ordering.as_str());
        let _ = writeln!(s, "eavesdropper={}", self.eavesdropper);
        s
    }

    /// Parses the flat `key=value` format. Missing keys keep their defaults;
    /// unknown keys are rejected.
    pub fn from_config_text(text: &str) -> Result<Self, SimError> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| SimError::InvalidConfig(format!("line {}: expected key=value", i + 1)))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let mut cfg = ScenarioConfig::default();
        let num = |k: &str, v: &str| -> Result<f64, SimError> {
            v.parse().map_err(|_| SimError::InvalidConfig(format!("{k}: not a number: {v}")))
        };
        let int = |k: &str, v: &str| -> Result<u64, SimError> {
            v.parse().map_err(|_| SimError::InvalidConfig(format!("{k}: not an integer: {v}")))
        };
        let list = |k: &str, v: &str| -> Result<Vec<f64>, SimError> {
            v.split(',').filter(|s| !s.trim().is_empty()).map(|s| num(k, s.trim())).collect()
        };
        for (k, v) in &map {
            match k.as_str() {
                "name" => cfg.name = v.clone(),
                "seed" => cfg.seed = int(k, v)?,
                "duration_ms" => cfg.duration_ms = int(k, v)?,
                "probe_period_ms" => cfg.probe_period_ms = int(k, v)?,
                "subcarrier_count" => cfg.subcarrier_count = int(k, v)? as usize,
                "subcarrier_spacing_hz" => cfg.subcarrier_spacing_hz = num(k, v)?,
                "bandwidth_hz" => cfg.bandwidth_hz = num(k, v)?,
                "tap_count" => cfg.tap_count = int(k, v)? as usize,
                "tap_delays_ns" => cfg.tap_delays_ns = list(k, v)?,
                "tap_powers_db" => cfg.tap_powers_db = list(k, v)?,
                "rician_k_db" => cfg.rician_k_db = Some(num(k, v)?),
                "doppler_hz" => cfg.doppler_hz = num(k, v)?,
                "snr_db_gnb" => cfg.snr_db_gnb = num(k, v)?,
                "snr_db_ue" => cfg.snr_db_ue = num(k, v)?,
                "ue_ordering" => {
                    cfg.ue_ordering = FftOrdering::parse(v)
                        .ok_or_else(|| SimError::InvalidConfig(format!("unknown ue_ordering {v}")))?
                }
                "eavesdropper" => {
                    cfg.eavesdropper = v
                        .parse()
                        .map_err(|_| SimError::InvalidConfig(format!("eavesdropper: {v}")))?
                }
                other => return Err(SimError::InvalidConfig(format!("unknown key {other}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        Self::from_config_text(&std::fs::read_to_string(path)?)
    }
}

/// Normalized power delay profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pdp {
    pub delays_ns: Vec<f64>,
    pub powers_linear: Vec<f64>,
}

impl Pdp {
    pub fn mean_delay_ns(&self) -> f64 {
        self.delays_ns.iter().zip(&self.powers_linear).map(|(d, p)| d * p).sum()
    }

    pub fn rms_delay_spread_ns(&self) -> f64 {
        let mean = self.mean_delay_ns();
        let second: f64 = self
            .delays_ns
            .iter()
            .zip(&self.powers_linear)
            .map(|(d, p)| p * (d - mean) * (d - mean))
            .sum();
        second.max(0.0).sqrt()
    }
}

#[derive(Clone, Debug)]
pub struct SimulatedTraces {
    pub gnb: ProbeTrace,
    pub ue: ProbeTrace,
    pub eve: Option<ProbeTrace>,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(splitmix(seed ^ splitmix(stream)) ^ index))
}

fn complex_normal<R: Rng>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * s, im * s)
}

/// Baseband frequency of FFT bin `k` (positive half first).
pub fn bin_frequency_hz(k: usize, n: usize, scs_hz: f64) -> f64 {
    if k < n / 2 {
        k as f64 * scs_hz
    } else {
        (k as f64 - n as f64) * scs_hz
    }
}

/// Tap gains for every probe of one channel realization.
fn evolve_taps(cfg: &ScenarioConfig, stream: u64) -> Vec<Vec<Complex64>> {
    let lin: Vec<f64> = cfg.tap_powers_db.iter().map(|db| 10f64.powf(db / 10.0)).collect();
    let total: f64 = lin.iter().sum();
    let powers: Vec<f64> = lin.iter().map(|p| p / total).collect();
    let mut rng = stream_rng(cfg.seed, stream, 0);

    let (specular, mut diffuse_power) = match cfg.rician_k_db {
        Some(k_db) => {
            let k = 10f64.powf(k_db / 10.0);
            let phase = rng.random::<f64>() * 2.0 * PI;
            let amp = (powers[0] * k / (k + 1.0)).sqrt();
            (Complex64::from_polar(amp, phase), powers.clone())
        }
        None => (Complex64::new(0.0, 0.0), powers.clone()),
    };
    if let Some(k_db) = cfg.rician_k_db {
        let k = 10f64.powf(k_db / 10.0);
        diffuse_power[0] = powers[0] / (k + 1.0);
    }

    let rho = cfg.temporal_coefficient();
    let innovation = (1.0 - rho * rho).max(0.0).sqrt();
    let mut state: Vec<Complex64> = diffuse_power.iter().map(|&p| complex_normal(&mut rng, p)).collect();
    let count = cfg.probe_count();
    let mut out = Vec::with_capacity(count);
    for t in 0..count {
        if t > 0 {
            for (g, &p) in state.iter_mut().zip(&diffuse_power) {
                *g = *g * rho + complex_normal(&mut rng, p) * innovation;
            }
        }
        let mut taps = state.clone();
        taps[0] += specular;
        out.push(taps);
    }
    out
}

fn steering_matrix(cfg: &ScenarioConfig) -> Vec<Vec<Complex64>> {
    let n = cfg.subcarrier_count;
    (0..n)
        .map(|k| {
            let f = bin_frequency_hz(k, n, cfg.subcarrier_spacing_hz);
            cfg.tap_delays_ns
                .iter()
                .map(|&tau| Complex64::from_polar(1.0, -2.0 * PI * f * tau * 1e-9))
                .collect()
        })
        .collect()
}

fn observe(
    cfg: &ScenarioConfig,
    taps: &[Vec<Complex64>],
    steering: &[Vec<Complex64>],
    endpoint: Endpoint,
    stream: u64,
    snr_db: f64,
    ordering: FftOrdering,
) -> ProbeTrace {
    let noise_var = 10f64.powf(-snr_db / 10.0);
    let indices: Vec<usize> = (0..taps.len()).collect();
    let probes: Vec<ChannelProbe> = crate::maybe_par_iter!(indices)
        .map(|&t| {
            let mut rng = stream_rng(cfg.seed, stream, t as u64);
            let phase = Complex64::from_polar(1.0, rng.random::<f64>() * 2.0 * PI);
            let mut estimates: Vec<Complex64> = steering
                .iter()
                .map(|row| {
                    let h: Complex64 = row.iter().zip(&taps[t]).map(|(s, g)| s * g).sum();
                    h * phase + complex_normal(&mut rng, noise_var)
                })
                .collect();
            ordering.apply(&mut estimates);
            ChannelProbe {
                timestamp_ms: t as u64 * cfg.probe_period_ms,
                endpoint,
                signal: endpoint.signal(),
                estimates,
            }
        })
        .collect();
    ProbeTrace {
        endpoint,
        subcarrier_count: cfg.subcarrier_count,
        subcarrier_spacing_hz: cfg.subcarrier_spacing_hz,
        bandwidth_hz: cfg.bandwidth_hz,
        probes,
    }
}

/// Generates gNB, UE and (optionally) eavesdropper traces. Identical configs
/// produce identical traces regardless of thread count.
pub fn simulate_scenario(cfg: &ScenarioConfig) -> Result<SimulatedTraces, SimError> {
    cfg.validate()?;
    let steering = steering_matrix(cfg);
    let taps = evolve_taps(cfg, STREAM_CHANNEL);
    let gnb = observe(cfg, &taps, &steering, Endpoint::Gnb, STREAM_GNB, cfg.snr_db_gnb, FftOrdering::Standard);
    let ue = observe(cfg, &taps, &steering, Endpoint::Ue, STREAM_UE, cfg.snr_db_ue, cfg.ue_ordering);
    let eve = cfg.eavesdropper.then(|| {
        let eve_taps = evolve_taps(cfg, STREAM_EVE_CHANNEL);
        observe(cfg, &eve_taps, &steering, Endpoint::Ue, STREAM_EVE, cfg.snr_db_ue, cfg.ue_ordering)
    });
    Ok(SimulatedTraces { gnb, ue, eve })
}

/// Mean over probes of the squared inverse-DFT magnitude (the Fourier dual of
/// the frequency autocorrelation), floored and normalized to unit sum.
/// Bins above `N/2` are read as negative delays. The trace must be stored in
/// canonical bin order.
pub fn power_delay_profile(trace: &ProbeTrace) -> Result<Pdp, SimError> {
    if trace.probes.is_empty() {
        return Err(SimError::EmptyTrace);
    }
    let n = trace.subcarrier_count;
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n);
    let partial: Vec<Vec<f64>> = crate::maybe_par_iter!(trace.probes)
        .map(|probe| {
            let mut buf = probe.estimates.clone();
            ifft.process(&mut buf);
            buf.iter().map(|c| c.norm_sqr()).collect::<Vec<f64>>()
        })
        .collect();
    let mut acc = vec![0.0; n];
    for p in &partial {
        for (a, v) in acc.iter_mut().zip(p) {
            *a += v;
        }
    }
    let peak = acc.iter().cloned().fold(0.0, f64::max);
    let mut sorted = acc.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let median = sorted[n / 2];
    let floor = (peak * PDP_FLOOR_REL).max(median * PDP_FLOOR_MEDIAN);

    let bin_ns = 1e9 / (n as f64 * trace.subcarrier_spacing_hz);
    let mut bins: Vec<(f64, f64)> = acc
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0 && p >= floor)
        .map(|(k, &p)| {
            let lag = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
            (lag * bin_ns, p)
        })
        .collect();
    bins.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = bins.iter().map(|b| b.1).sum();
    if total <= 0.0 {
        return Ok(Pdp { delays_ns: vec![0.0], powers_linear: vec![1.0] });
    }
    Ok(Pdp {
        delays_ns: bins.iter().map(|b| b.0).collect(),
        powers_linear: bins.iter().map(|b| b.1 / total).collect(),
    })
}

/// `1 / (5 τ_rms)`, clamped to `full_bandwidth_hz` for zero spread.
pub fn coherence_bandwidth(pdp: &Pdp, full_bandwidth_hz: f64) -> f64 {
    let spread_s = pdp.rms_delay_spread_ns() * 1e-9;
    if spread_s <= 1e-15 {
        return full_bandwidth_hz;
    }
    (1.0 / (5.0 * spread_s)).min(full_bandwidth_hz)
}

/// Mean per-probe Pearson correlation of subcarrier magnitudes between two
/// traces stored in the same bin order.
pub fn mean_magnitude_correlation(a: &ProbeTrace, b: &ProbeTrace) -> f64 {
    let n = a.probes.len().min(b.probes.len());
    if n == 0 {
        return 0.0;
    }
    let sum: f64 = (0..n)
        .map(|i| {
            let x: Vec<f64> = a.probes[i].estimates.iter().map(|c| c.norm()).collect();
            let y: Vec<f64> = b.probes[i].estimates.iter().map(|c| c.norm()).collect();
            crate::alignment::pearson(&x, &y).unwrap_or(0.0)
        })
        .sum();
    sum / n as f64
}
