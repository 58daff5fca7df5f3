//! Channel-probe data types and the `SKGTRACE v1` text trace format.
//!
//! A trace file has one header line followed by one probe per line:
//!
//! ```text
//! SKGTRACE v1 endpoint=GNB signal=SRS nsc=4 scs_hz=30000 bw_hz=40000000
//! 0 1.00000000000e0 0.00000000000e0 ...
//! ```
//!
//! FFT bin layout: indices `0..N/2` hold positive frequencies in ascending
//! order, `N/2..N` hold negative frequencies (most negative first).

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One per-subcarrier channel estimate.
pub type ComplexSample = Complex64;

const MAGIC: &str = "SKGTRACE";
const VERSION: &str = "v1";
const BANDWIDTH_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Endpoint {
    Gnb,
    Ue,
}

impl Endpoint {
    pub fn as_str(self) -> &'static str {
        match self {
            Endpoint::Gnb => "GNB",
            Endpoint::Ue => "UE",
        }
    }

    /// The reference signal each endpoint estimates the channel from.
    pub fn signal(self) -> Signal {
        match self {
            Endpoint::Gnb => Signal::Srs,
            Endpoint::Ue => Signal::CsiRs,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Signal {
    Srs,
    CsiRs,
}

impl Signal {
    pub fn as_str(self) -> &'static str {
        match self {
            Signal::Srs => "SRS",
            Signal::CsiRs => "CSI_RS",
        }
    }
}

/// How an endpoint stores the negative-frequency half of its FFT output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FftOrdering {
    Standard,
    ReversedNegative,
}

impl FftOrdering {
    pub fn as_str(self) -> &'static str {
        match self {
            FftOrdering::Standard => "STANDARD",
            FftOrdering::ReversedNegative => "REVERSED_NEGATIVE",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "STANDARD" => Some(FftOrdering::Standard),
            "REVERSED_NEGATIVE" => Some(FftOrdering::ReversedNegative),
            _ => None,
        }
    }

    pub fn other(self) -> Self {
        match self {
            FftOrdering::Standard => FftOrdering::ReversedNegative,
            FftOrdering::ReversedNegative => FftOrdering::Standard,
        }
    }

    /// Converts between this storage convention and the canonical one.
    /// The mapping is its own inverse.
    pub fn apply<T>(self, bins: &mut [T]) {
        if self == FftOrdering::ReversedNegative {
            let half = bins.len() / 2;
            bins[half..].reverse();
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelProbe {
    pub timestamp_ms: u64,
    pub endpoint: Endpoint,
    pub signal: Signal,
    pub estimates: Vec<ComplexSample>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeTrace {
    pub endpoint: Endpoint,
    pub subcarrier_count: usize,
    pub subcarrier_spacing_hz: f64,
    pub bandwidth_hz: f64,
    pub probes: Vec<ChannelProbe>,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("line {line}: malformed probe row: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("line {line}: timestamp {timestamp_ms} does not follow {previous_ms}")]
    NonMonotonicTimestamp {
        line: usize,
        timestamp_ms: u64,
        previous_ms: u64,
    },
    #[error("line {line}: expected {expected} subcarriers, found {found}")]
    InconsistentSubcarrierCount {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: non-finite sample")]
    NonFiniteSample { line: usize },
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error("trace i/o failed: {0}")]
    IoFailure(#[from] std::io::Error),
}

impl ProbeTrace {
    pub fn signal(&self) -> Signal {
        self.endpoint.signal()
    }

    pub fn len(&self) -> usize {
        self.probes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probes.is_empty()
    }

    /// Span covered by the probes, counting one probe period per probe.
    pub fn duration_ms(&self) -> u64 {
        match (self.probes.first(), self.probes.last()) {
            (Some(a), Some(b)) if self.probes.len() > 1 => {
                let span = b.timestamp_ms - a.timestamp_ms;
                span + span / (self.probes.len() as u64 - 1)
            }
            _ => 0,
        }
    }

    /// Checks every type invariant. Line numbers in errors are 1-based file
    /// lines (header is line 1).
    pub fn validate(&self) -> Result<(), TraceError> {
        let n = self.subcarrier_count;
        if n == 0 || !n.is_multiple_of(2) {
            return Err(TraceError::InvalidTrace(format!(
                "subcarrier count {n} must be even and nonzero"
            )));
        }
        if !(self.subcarrier_spacing_hz.is_finite() && self.subcarrier_spacing_hz > 0.0) {
            return Err(TraceError::InvalidTrace("subcarrier spacing must be positive".into()));
        }
        if !(self.bandwidth_hz.is_finite() && self.bandwidth_hz > 0.0) {
            return Err(TraceError::InvalidTrace("bandwidth must be positive".into()));
        }
        let occupied = n as f64 * self.subcarrier_spacing_hz;
        if occupied > self.bandwidth_hz * (1.0 + BANDWIDTH_SLACK) {
            return Err(TraceError::InvalidTrace(format!(
                "{n} subcarriers at {} Hz exceed bandwidth {} Hz",
                self.subcarrier_spacing_hz, self.bandwidth_hz
            )));
        }
        let mut previous: Option<u64> = None;
        for (i, probe) in self.probes.iter().enumerate() {
            let line = i + 2;
            if probe.endpoint != self.endpoint || probe.signal != self.endpoint.signal() {
                return Err(TraceError::InvalidTrace(format!(
                    "probe {i} endpoint/signal does not match trace"
                )));
            }
            if probe.estimates.len() != n {
                return Err(TraceError::InconsistentSubcarrierCount {
                    line,
                    expected: n,
                    found: probe.estimates.len(),
                });
            }
            if let Some(prev) = previous {
                if probe.timestamp_ms <= prev {
                    return Err(TraceError::NonMonotonicTimestamp {
                        line,
                        timestamp_ms: probe.timestamp_ms,
                        previous_ms: prev,
                    });
                }
            }
            if probe.estimates.iter().any(|s| !s.re.is_finite() || !s.im.is_finite()) {
                return Err(TraceError::NonFiniteSample { line });
            }
            previous = Some(probe.timestamp_ms);
        }
        Ok(())
    }

    pub fn header_line(&self) -> String {
        format!(
            "{MAGIC} {VERSION} endpoint={} signal={} nsc={} scs_hz={} bw_hz={}",
            self.endpoint.as_str(),
            self.signal().as_str(),
            self.subcarrier_count,
            self.subcarrier_spacing_hz,
            self.bandwidth_hz
        )
    }
}

fn write_probe_line(out: &mut String, probe: &ChannelProbe) {
    out.clear();
    let _ = write!(out, "{}", probe.timestamp_ms);
    for s in &probe.estimates {
        let _ = write!(out, " {:.11e} {:.11e}", s.re, s.im);
    }
    out.push('\n');
}

/// Writes `trace` in `SKGTRACE v1` format. Samples are printed with 12
/// significant digits.
pub fn write_trace(trace: &ProbeTrace, path: impl AsRef<Path>) -> Result<(), TraceError> {
    trace.validate()?;
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{}", trace.header_line())?;
    let mut line = String::new();
    for probe in &trace.probes {
        write_probe_line(&mut line, probe);
        w.write_all(line.as_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_trace(path: impl AsRef<Path>) -> Result<ProbeTrace, TraceError> {
    let text = fs::read_to_string(path)?;
    parse_trace_str(&text)
}

fn header_field<'a>(token: Option<&'a str>, key: &str) -> Result<&'a str, TraceError> {
    let token = token.ok_or_else(|| TraceError::MalformedHeader(format!("missing {key}")))?;
    token
        .strip_prefix(key)
        .and_then(|rest| rest.strip_prefix('='))
        .ok_or_else(|| TraceError::MalformedHeader(format!("expected {key}=..., got {token:?}")))
}

fn parse_header(line: &str) -> Result<(Endpoint, usize, f64, f64), TraceError> {
    let mut tokens = line.split_whitespace();
    if tokens.next() != Some(MAGIC) {
        return Err(TraceError::MalformedHeader("missing SKGTRACE magic".into()));
    }
    if tokens.next() != Some(VERSION) {
        return Err(TraceError::MalformedHeader("unsupported version".into()));
    }
    let endpoint = match header_field(tokens.next(), "endpoint")? {
        "GNB" => Endpoint::Gnb,
        "UE" => Endpoint::Ue,
        other => return Err(TraceError::MalformedHeader(format!("unknown endpoint {other:?}"))),
    };
    let signal = match header_field(tokens.next(), "signal")? {
        "SRS" => Signal::Srs,
        "CSI_RS" => Signal::CsiRs,
        other => return Err(TraceError::MalformedHeader(format!("unknown signal {other:?}"))),
    };
    if signal != endpoint.signal() {
        return Err(TraceError::MalformedHeader(format!(
            "endpoint {} cannot carry signal {}",
            endpoint.as_str(),
            signal.as_str()
        )));
    }
    let nsc: usize = header_field(tokens.next(), "nsc")?
        .parse()
        .map_err(|_| TraceError::MalformedHeader("nsc is not an integer".into()))?;
    let scs: f64 = header_field(tokens.next(), "scs_hz")?
        .parse()
        .map_err(|_| TraceError::MalformedHeader("scs_hz is not a number".into()))?;
    let bw: f64 = header_field(tokens.next(), "bw_hz")?
        .parse()
        .map_err(|_| TraceError::MalformedHeader("bw_hz is not a number".into()))?;
    if tokens.next().is_some() {
        return Err(TraceError::MalformedHeader("trailing header tokens".into()));
    }
    Ok((endpoint, nsc, scs, bw))
}

/// Parses trace text. Malformed content is rejected, never repaired.
pub fn parse_trace_str(text: &str) -> Result<ProbeTrace, TraceError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| TraceError::MalformedHeader("empty file".into()))?;
    let (endpoint, nsc, scs, bw) = parse_header(header)?;
    let mut trace = ProbeTrace {
        endpoint,
        subcarrier_count: nsc,
        subcarrier_spacing_hz: scs,
        bandwidth_hz: bw,
        probes: Vec::new(),
    };
    // header-level invariants first, so row errors below are about rows
    trace.validate()?;

    let mut previous: Option<u64> = None;
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let mut tokens = raw.split_whitespace();
        let ts_token = tokens.next().unwrap_or_default();
        let timestamp_ms: u64 = ts_token.parse().map_err(|_| TraceError::MalformedRow {
            line,
            reason: format!("bad timestamp {ts_token:?}"),
        })?;
        let mut reals = Vec::with_capacity(2 * nsc);
        for tok in tokens {
            let v: f64 = tok.parse().map_err(|_| TraceError::MalformedRow {
                line,
                reason: format!("bad number {tok:?}"),
            })?;
            reals.push(v);
        }
        if reals.len() % 2 != 0 {
            return Err(TraceError::MalformedRow {
                line,
                reason: "odd number of real values".into(),
            });
        }
        if reals.len() / 2 != nsc {
            return Err(TraceError::InconsistentSubcarrierCount {
                line,
                expected: nsc,
                found: reals.len() / 2,
            });
        }
        if reals.iter().any(|v| !v.is_finite()) {
            return Err(TraceError::NonFiniteSample { line });
        }
        if let Some(prev) = previous {
            if timestamp_ms <= prev {
                return Err(TraceError::NonMonotonicTimestamp {
                    line,
                    timestamp_ms,
                    previous_ms: prev,
                });
            }
        }
        previous = Some(timestamp_ms);
        let estimates = reals
            .chunks_exact(2)
            .map(|c| Complex64::new(c[0], c[1]))
            .collect();
        trace.probes.push(ChannelProbe {
            timestamp_ms,
            endpoint,
            signal: endpoint.signal(),
            estimates,
        });
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(endpoint: Endpoint, n_probes: usize, nsc: usize) -> ProbeTrace {
        ProbeTrace {
            endpoint,
            subcarrier_count: nsc,
            subcarrier_spacing_hz: 30e3,
            bandwidth_hz: 40e6,
            probes: (0..n_probes)
                .map(|p| ChannelProbe {
                    timestamp_ms: 10 * p as u64,
                    endpoint,
                    signal: endpoint.signal(),
                    estimates: (0..nsc)
                        .map(|k| Complex64::new(0.1 * k as f64 + p as f64, -1.5e-3 * k as f64))
                        .collect(),
                })
                .collect(),
        }
    }

    fn text_of(trace: &ProbeTrace) -> String {
        let mut s = trace.header_line();
        s.push('\n');
        let mut line = String::new();
        for p in &trace.probes {
            write_probe_line(&mut line, p);
            s.push_str(&line);
        }
        s
    }

    #[test]
    fn parses_minimal_file() {
        let text = text_of(&tiny(Endpoint::Gnb, 3, 4));
        let trace = parse_trace_str(&text).unwrap();
        assert_eq!(trace.probes.len(), 3);
        assert_eq!(trace.subcarrier_count, 4);
        assert_eq!(trace.endpoint, Endpoint::Gnb);
    }

    #[test]
    fn repeated_timestamp_is_rejected() {
        let mut t = tiny(Endpoint::Gnb, 3, 4);
        t.probes[1].timestamp_ms = t.probes[0].timestamp_ms;
        let err = parse_trace_str(&text_of(&t)).unwrap_err();
        assert!(matches!(err, TraceError::NonMonotonicTimestamp { line: 3, .. }), "{err}");
    }

    #[test]
    fn short_row_among_full_rows_is_rejected() {
        let mut t = tiny(Endpoint::Ue, 3, 4);
        t.probes[2].estimates.push(Complex64::new(1.0, 0.0));
        let err = parse_trace_str(&text_of(&t)).unwrap_err();
        assert!(
            matches!(err, TraceError::InconsistentSubcarrierCount { expected: 4, found: 5, .. }),
            "{err}"
        );
    }

    #[test]
    fn non_finite_and_garbage_rows_are_rejected() {
        let text = "SKGTRACE v1 endpoint=GNB signal=SRS nsc=2 scs_hz=30000 bw_hz=40000000\n0 1 0 nan 0\n";
        assert!(matches!(parse_trace_str(text), Err(TraceError::NonFiniteSample { line: 2 })));
        let text = "SKGTRACE v1 endpoint=GNB signal=SRS nsc=2 scs_hz=30000 bw_hz=40000000\n0 1 0 x 0\n";
        assert!(matches!(parse_trace_str(text), Err(TraceError::MalformedRow { .. })));
        let text = "SKGTRACE v1 endpoint=GNB signal=CSI_RS nsc=2 scs_hz=30000 bw_hz=40000000\n";
        assert!(matches!(parse_trace_str(text), Err(TraceError::MalformedHeader(_))));
        let text = "SKGTRACE v1 endpoint=GNB signal=SRS nsc=2000 scs_hz=30000 bw_hz=40000000\n";
        assert!(matches!(parse_trace_str(text), Err(TraceError::InvalidTrace(_))));
        assert!(matches!(parse_trace_str(""), Err(TraceError::MalformedHeader(_))));
    }

    #[test]
    fn single_probe_round_trip_is_identical() {
        let dir = std::env::temp_dir().join(format!("skg-trace-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("one.trace");
        let t = tiny(Endpoint::Gnb, 1, 8);
        write_trace(&t, &path).unwrap();
        let back = parse_trace(&path).unwrap();
        assert_eq!(back.probes[0].timestamp_ms, 0);
        for (a, b) in t.probes[0].estimates.iter().zip(&back.probes[0].estimates) {
            assert!((a - b).norm() <= 1e-11 * a.norm().max(1e-300));
        }
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn unwritable_path_is_io_failure() {
        let t = tiny(Endpoint::Gnb, 1, 4);
        let err = write_trace(&t, "/nonexistent-dir/for/sure/x.trace").unwrap_err();
        assert!(matches!(err, TraceError::IoFailure(_)));
    }

    #[test]
    fn ordering_is_an_involution() {
        let orig: Vec<u32> = (0..8).collect();
        let mut v = orig.clone();
        FftOrdering::ReversedNegative.apply(&mut v);
        assert_eq!(v, vec![0, 1, 2, 3, 7, 6, 5, 4]);
        FftOrdering::ReversedNegative.apply(&mut v);
        assert_eq!(v, orig);
        FftOrdering::Standard.apply(&mut v);
        assert_eq!(v, orig);
    }

    #[test]
    fn duration_counts_one_period_per_probe() {
        assert_eq!(tiny(Endpoint::Gnb, 1247, 2).duration_ms(), 12_470);
        assert_eq!(tiny(Endpoint::Gnb, 1, 2).duration_ms(), 0);
    }
}
