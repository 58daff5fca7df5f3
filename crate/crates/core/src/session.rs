//! Two-party session: alignment, stages 1-3, reconciliation, amplification,
//! key confirmation and reporting.
//!
//! Both parties hold both traces for the deterministic preparation steps
//! (pairing, orientation, subband selection) but each quantises, reconciles
//! and hashes only its own estimates. The gNB side is the leader.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::alignment::{
    aligned_pairs, detect_orientation, pair_probes, AlignmentError, FallbackProbe, OrientationDecision, ProbePair,
    DEFAULT_ORIENTATION_PROBES,
};
use crate::channel_sim::{coherence_bandwidth, power_delay_profile, SimError};
use crate::keyderive::{
    amplification_budget, finalize_key, toeplitz_extract, verify_keys, KeyError, KeyMaterial, ToeplitzSeed,
    DEFAULT_SAFETY_MARGIN, KEY_BITS,
};
use crate::pipeline::{bdr, run_stages, Levels, PipelineError, SubbandConfig};
use crate::quality::{kgr, min_entropy, shannon_entropy, QualityReport};
use crate::reconcile::{
    cascade_reconcile, channel_pair, estimate_bdr_probe, BitStream, Link, MsgType, PublicSeed, ReconcileError,
    ReconciliationLedger, Role, TcpTransport, Transport, WireError, DEFAULT_MAX_PASSES, DEFAULT_SAMPLE_FRACTION,
};
use crate::trace_model::{FftOrdering, ProbeTrace, TraceError};

pub const NONCE_BYTES: usize = 16;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
pub const HELLO_VERSION: &str = "v1";
/// Subband widening attempts after the first budget failure.
const MAX_WIDENINGS: u32 = 1;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error(transparent)]
    Alignment(#[from] AlignmentError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("protocol error: {0}")]
    Protocol(ReconcileError),
    #[error("timed out waiting for peer")]
    Timeout,
    #[error("connection refused: {0}")]
    ConnectionRefused(String),
    #[error("bit budget exhausted ({n} reconciled bits, {leaked} leaked, margin {margin}); a longer trace is needed")]
    NeedsLongerTrace { n: usize, leaked: u64, margin: usize },
    #[error("key verification failed")]
    VerificationFailed,
    #[error(transparent)]
    Key(KeyError),
}

impl SessionError {
    /// Stable error name for reports and process output.
    pub fn name(&self) -> &'static str {
        match self {
            SessionError::Config(_) => "InvalidConfig",
            SessionError::Trace(e) => match e {
                TraceError::IoFailure(_) => "IoFailure",
                TraceError::InconsistentSubcarrierCount { .. } => "InconsistentSubcarrierCount",
                TraceError::NonMonotonicTimestamp { .. } => "NonMonotonicTimestamp",
                _ => "MalformedTrace",
            },
            SessionError::Simulation(_) => "InvalidConfig",
            SessionError::Alignment(e) => match e {
                AlignmentError::InconsistentSubcarrierCount { .. } => "InconsistentSubcarrierCount",
                AlignmentError::EndpointMismatch { .. } => "EndpointMismatch",
                AlignmentError::NoPairs => "NoPairs",
                AlignmentError::AmbiguousOrientation { .. } => "AmbiguousOrientation",
                AlignmentError::Pipeline(_) => "PipelineError",
            },
            SessionError::Pipeline(PipelineError::OverlapTooSmall { .. }) => "OverlapTooSmall",
            SessionError::Pipeline(_) => "PipelineError",
            SessionError::Protocol(ReconcileError::ProtocolDesync(_)) => "ProtocolDesync",
            SessionError::Protocol(_) => "TransportFailure",
            SessionError::Timeout => "Timeout",
            SessionError::ConnectionRefused(_) => "ConnectionRefused",
            SessionError::NeedsLongerTrace { .. } => "NeedsLongerTrace",
            SessionError::VerificationFailed => "VerificationFailed",
            SessionError::Key(_) => "KeyError",
        }
    }
}

impl From<ReconcileError> for SessionError {
    fn from(e: ReconcileError) -> Self {
        match e {
            ReconcileError::Timeout => SessionError::Timeout,
            other => SessionError::Protocol(other),
        }
    }
}

impl From<KeyError> for SessionError {
    fn from(e: KeyError) -> Self {
        match e {
            KeyError::Transport(r) => r.into(),
            KeyError::InsufficientBits { n, leaked, margin } => SessionError::NeedsLongerTrace { n, leaked, margin },
            other => SessionError::Key(other),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SessionConfig {
    pub scenario_id: String,
    pub levels: Levels,
    pub tolerance_ms: u64,
    pub max_passes: u32,
    pub safety_margin: usize,
    pub sample_fraction: f64,
    pub nonce: [u8; NONCE_BYTES],
    pub timeout: Duration,
    pub orientation_probes: usize,
    /// Skips orientation detection.
    pub forced_ordering: Option<FftOrdering>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            scenario_id: "session".into(),
            levels: Levels::Two,
            tolerance_ms: 5,
            max_passes: DEFAULT_MAX_PASSES,
            safety_margin: DEFAULT_SAFETY_MARGIN,
            sample_fraction: DEFAULT_SAMPLE_FRACTION,
            nonce: nonce_from_seed(0),
            timeout: DEFAULT_TIMEOUT,
            orientation_probes: DEFAULT_ORIENTATION_PROBES,
            forced_ordering: None,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), SessionError> {
        if self.max_passes == 0 {
            return Err(SessionError::Config("max_passes must be at least 1".into()));
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 0.1) {
            return Err(SessionError::Config("sample fraction must be in (0, 0.1]".into()));
        }
        if self.orientation_probes == 0 {
            return Err(SessionError::Config("orientation probe count must be positive".into()));
        }
        Ok(())
    }

    pub fn public_seed(&self) -> PublicSeed {
        PublicSeed::from_nonce(&self.nonce)
    }

    pub fn challenge(&self) -> Vec<u8> {
        let mut h = Sha256::new();
        h.update(b"skg/challenge");
        h.update(self.nonce);
        h.finalize().to_vec()
    }
}

/// Deterministic session nonce for reproducible runs.
pub fn nonce_from_seed(seed: u64) -> [u8; NONCE_BYTES] {
    let mut h = Sha256::new();
    h.update(b"skg/nonce");
    h.update(seed.to_be_bytes());
    let d = h.finalize();
    let mut out = [0u8; NONCE_BYTES];
    out.copy_from_slice(&d[..NONCE_BYTES]);
    out
}

/// Steps both parties compute identically from the two traces.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub orientation: OrientationDecision,
    pub pairs: Vec<ProbePair>,
    pub subband: SubbandConfig,
    pub overlap_subcarriers: usize,
    pub rms_delay_spread_ns: f64,
    pub coherence_bandwidth_hz: f64,
    pub subcarrier_spacing_hz: f64,
    pub trace_duration_ms: u64,
}

pub fn prepare(gnb: &ProbeTrace, ue: &ProbeTrace, cfg: &SessionConfig) -> Result<Prepared, SessionError> {
    cfg.validate()?;
    let raw = pair_probes(gnb, ue, cfg.tolerance_ms)?;
    if raw.is_empty() {
        return Err(AlignmentError::NoPairs.into());
    }
    let scs = gnb.subcarrier_spacing_hz;
    let overlap = gnb.subcarrier_count - gnb.subcarrier_count / 2;
    let pdp = power_delay_profile(gnb)?;
    let bc = coherence_bandwidth(&pdp, gnb.subcarrier_count as f64 * scs);
    let subband = crate::pipeline::select_subband_width(bc, scs, overlap)?;
    let orientation = match cfg.forced_ordering {
        Some(o) => OrientationDecision::fixed(o),
        None => detect_orientation(
            &raw,
            cfg.orientation_probes,
            &FallbackProbe { subband, levels: cfg.levels },
        )?,
    };
    let pairs = aligned_pairs(&raw, orientation.ordering);
    Ok(Prepared {
        orientation,
        pairs,
        subband,
        overlap_subcarriers: overlap,
        rms_delay_spread_ns: pdp.rms_delay_spread_ns(),
        coherence_bandwidth_hz: bc,
        subcarrier_spacing_hz: scs,
        trace_duration_ms: gnb.duration_ms(),
    })
}

/// What one party learned and produced.
#[derive(Clone, Debug)]
pub struct PartyOutcome {
    pub role: Role,
    pub key: KeyMaterial,
    pub ledger: ReconciliationLedger,
    pub subband: SubbandConfig,
    pub attempts: u32,
    pub raw_bits: usize,
    pub bdr_estimate: f64,
    pub reconciled: BitStream,
    pub amplified_bits: usize,
    pub audited_bits: u64,
    pub messages_sent: u64,
    /// Stage-3 BDR of the final attempt (needs both traces).
    pub bdr_initial: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SessionDetails {
    pub scenario_id: String,
    pub probe_pairs: usize,
    pub orientation: OrientationDecision,
    pub subband: SubbandConfig,
    pub levels: usize,
    pub bits_per_probe: usize,
    pub overlap_subcarriers: usize,
    pub rms_delay_spread_ns: f64,
    pub coherence_bandwidth_hz: f64,
    pub trace_duration_ms: u64,
    pub attempts: u32,
    pub raw_bits: usize,
    pub bdr_estimate: f64,
    pub hamming_r: u32,
    pub passes: u32,
    pub discarded_bits: usize,
    pub reconciled_bits: usize,
    pub amplified_bits: usize,
    pub key_bits: usize,
    pub audited_public_bits: u64,
    pub key_verified: bool,
}

/// JSON report: the quality fields plus session context.
#[derive(Clone, Debug, Serialize)]
pub struct SessionReport {
    #[serde(flatten)]
    pub quality: QualityReport,
    pub session: SessionDetails,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct SessionOutcome {
    pub prepared: Prepared,
    /// gNB (leader) side, when run locally.
    pub gnb: Option<PartyOutcome>,
    /// UE (follower) side, when run locally.
    pub ue: Option<PartyOutcome>,
    pub report: SessionReport,
}

impl SessionOutcome {
    pub fn keys(&self) -> Vec<&KeyMaterial> {
        self.gnb.iter().chain(&self.ue).map(|p| &p.key).collect()
    }

    pub fn local(&self) -> &PartyOutcome {
        self.gnb.as_ref().or(self.ue.as_ref()).expect("at least one party")
    }
}

fn send_nonce<T: Transport>(link: &mut Link<T>, nonce: &[u8; NONCE_BYTES]) -> Result<(), SessionError> {
    let bits: Vec<u8> = nonce.iter().flat_map(|&b| (0..8).rev().map(move |k| (b >> k) & 1)).collect();
    match link.role() {
        Role::Leader => {
            link.send(MsgType::Nonce, 0, 0, bits.clone())?;
            link.flush()?;
            let echo = link.expect(MsgType::Nonce, 0, 0)?;
            if echo.payload != bits {
                return Err(ReconcileError::ProtocolDesync("nonce echo differs".into()).into());
            }
        }
        Role::Follower => {
            let m = link.expect(MsgType::Nonce, 0, 0)?;
            if m.payload != bits {
                return Err(ReconcileError::ProtocolDesync("peer nonce differs from session nonce".into()).into());
            }
            link.send(MsgType::Nonce, 0, 0, bits)?;
            link.flush()?;
        }
    }
    Ok(())
}

/// One party's side of the protocol after preparation.
pub fn run_party<T: Transport>(
    role: Role,
    link: &mut Link<T>,
    prep: &Prepared,
    cfg: &SessionConfig,
) -> Result<PartyOutcome, SessionError> {
    send_nonce(link, &cfg.nonce)?;
    let base_seed = cfg.public_seed();
    let challenge = cfg.challenge();
    let mut subband = prep.subband;
    let mut attempt = 0u32;
    loop {
        let stages = run_stages(&prep.pairs, &subband, cfg.levels, true)?;
        let bdr_initial = stages.bdr();
        let mut bits = match role {
            Role::Leader => stages.gnb_bits,
            Role::Follower => stages.ue_bits,
        };
        let raw_bits = bits.len();
        let seed = base_seed.for_attempt(attempt);
        let audit_before = link.audited_bits();
        let estimate = estimate_bdr_probe(&mut bits, link, &seed, cfg.sample_fraction)?;
        let (reconciled, ledger) = cascade_reconcile(bits, role, link, &seed, estimate, cfg.max_passes)?;
        let n = reconciled.len();
        let m = match amplification_budget(n, reconciled.leaked_bits, cfg.safety_margin) {
            Ok(m) => m,
            Err(KeyError::InsufficientBits { n, leaked, margin }) => {
                match subband.widened(prep.subcarrier_spacing_hz, prep.overlap_subcarriers) {
                    Some(Ok(wider)) if attempt < MAX_WIDENINGS => {
                        subband = wider;
                        attempt += 1;
                        continue;
                    }
                    _ => return Err(SessionError::NeedsLongerTrace { n, leaked, margin }),
                }
            }
            Err(e) => return Err(e.into()),
        };
        let toeplitz = ToeplitzSeed::from_public(&seed, m, n)?;
        let amplified = toeplitz_extract(reconciled.bits(), &toeplitz)?;
        let key = finalize_key(&amplified, &challenge, &cfg.scenario_id)?;
        if !verify_keys(&key, link, &challenge)? {
            return Err(SessionError::VerificationFailed);
        }
        return Ok(PartyOutcome {
            role,
            key,
            ledger,
            subband,
            attempts: attempt + 1,
            raw_bits,
            bdr_estimate: estimate,
            reconciled,
            amplified_bits: m,
            audited_bits: link.audited_bits() - audit_before,
            messages_sent: link.messages_sent(),
            bdr_initial,
        });
    }
}

fn build_report(prep: &Prepared, party: &PartyOutcome, residual: f64, cfg: &SessionConfig) -> SessionReport {
    let key_bits = party.key.key_bits();
    let h1 = shannon_entropy(&key_bits).unwrap_or(0.0);
    let (hmin, effective) = min_entropy(&key_bits).unwrap_or((0.0, 0.0));
    let (raw_bps, net_bps) = kgr(KEY_BITS, party.raw_bits, prep.trace_duration_ms as f64).unwrap_or((0.0, 0.0));
    let mut ledger = party.ledger.clone();
    ledger.residual_bdr = Some(residual);
    let quality = QualityReport {
        h1_per_bit: h1,
        hmin_per_bit: hmin,
        effective_bits: effective,
        nist_results: Vec::new(),
        bdr_initial: party.bdr_initial,
        bdr_final: residual,
        kgr_raw_bps: raw_bps,
        kgr_net_bps: net_bps,
        leaked_bits: ledger.leaked_bits,
    };
    let mut notes = vec![
        format!("NIST subset skipped: a single key has {KEY_BITS} bits, fewer than the 2048 required"),
        "kgr_raw_bps counts quantised bits per second; kgr_net_bps counts final key bits per second".to_string(),
    ];
    if cfg.levels != Levels::Two {
        notes.push(format!(
            "{}-level quantisation yields {} bits per subband sample",
            cfg.levels.count(),
            cfg.levels.bits_per_sample()
        ));
    }
    if party.attempts > 1 {
        notes.push(format!("subbands widened to {:.0} kHz after the bit budget ran out", party.subband.width_hz / 1e3));
    }
    SessionReport {
        quality,
        session: SessionDetails {
            scenario_id: cfg.scenario_id.clone(),
            probe_pairs: prep.pairs.len(),
            orientation: prep.orientation.clone(),
            subband: party.subband,
            levels: cfg.levels.count(),
            bits_per_probe: party.subband.band_count * cfg.levels.bits_per_sample(),
            overlap_subcarriers: prep.overlap_subcarriers,
            rms_delay_spread_ns: prep.rms_delay_spread_ns,
            coherence_bandwidth_hz: prep.coherence_bandwidth_hz,
            trace_duration_ms: prep.trace_duration_ms,
            attempts: party.attempts,
            raw_bits: party.raw_bits,
            bdr_estimate: party.bdr_estimate,
            hamming_r: ledger.hamming_r,
            passes: ledger.passes,
            discarded_bits: ledger.discarded_bits,
            reconciled_bits: party.reconciled.len(),
            amplified_bits: party.amplified_bits,
            key_bits: KEY_BITS,
            audited_public_bits: party.audited_bits,
            key_verified: true,
        },
        notes,
    }
}

/// Runs both parties in this process, each on its own thread, connected by
/// an in-memory transport carrying the same framed lines as TCP mode.
pub fn run_session(gnb: &ProbeTrace, ue: &ProbeTrace, cfg: &SessionConfig) -> Result<SessionOutcome, SessionError> {
    let prep = Arc::new(prepare(gnb, ue, cfg)?);
    let (ta, tb) = channel_pair(cfg.timeout);
    let leader = {
        let prep = Arc::clone(&prep);
        let cfg = cfg.clone();
        thread::spawn(move || run_party(Role::Leader, &mut Link::new(ta, Role::Leader), &prep, &cfg))
    };
    let follower = run_party(Role::Follower, &mut Link::new(tb, Role::Follower), &prep, cfg);
    let leader = leader.join().map_err(|_| SessionError::Config("leader thread panicked".into()))?;
    // Prefer the error closest to the cause: a failure on one side shows up
    // as a disconnect on the other.
    let (g, u) = match (leader, follower) {
        (Ok(g), Ok(u)) => (g, u),
        (Err(e), Err(SessionError::Protocol(ReconcileError::TransportFailure(_)))) => return Err(e),
        (_, Err(e)) | (Err(e), _) => return Err(e),
    };
    if g.key != u.key {
        return Err(SessionError::VerificationFailed);
    }
    let residual = bdr(&g.reconciled, &u.reconciled).unwrap_or(1.0);
    let report = build_report(&prep, &g, residual, cfg);
    let prepared = Arc::try_unwrap(prep).unwrap_or_else(|a| (*a).clone());
    Ok(SessionOutcome { prepared, gnb: Some(g), ue: Some(u), report })
}

fn hello_line(nonce: &[u8; NONCE_BYTES], role: Role) -> String {
    format!("HELLO {HELLO_VERSION} nonce={} role={}", hex::encode(nonce), role.as_str())
}

fn parse_hello(line: &str) -> Result<([u8; NONCE_BYTES], Role), SessionError> {
    let bad = || SessionError::Protocol(ReconcileError::ProtocolDesync(format!("bad HELLO: {line:?}")));
    let rest = line.strip_prefix("HELLO ").ok_or_else(bad)?;
    let mut it = rest.split(' ');
    if it.next() != Some(HELLO_VERSION) {
        return Err(bad());
    }
    let nonce_hex = it.next().and_then(|f| f.strip_prefix("nonce=")).ok_or_else(bad)?;
    let role = it
        .next()
        .and_then(|f| f.strip_prefix("role="))
        .and_then(Role::parse)
        .ok_or_else(bad)?;
    if it.next().is_some() {
        return Err(bad());
    }
    let nonce: [u8; NONCE_BYTES] = hex::decode(nonce_hex).ok().and_then(|v| v.try_into().ok()).ok_or_else(bad)?;
    Ok((nonce, role))
}

fn io_err(e: std::io::Error) -> SessionError {
    match e.kind() {
        std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut => SessionError::Timeout,
        _ => SessionError::Protocol(ReconcileError::TransportFailure(e.to_string())),
    }
}

/// HELLO exchange on a fresh stream. The leader announces the nonce; the
/// follower adopts it and answers with its own HELLO.
pub fn handshake(stream: &TcpStream, role: Role, nonce: &mut [u8; NONCE_BYTES], timeout: Duration) -> Result<(), SessionError> {
    stream.set_read_timeout(Some(timeout)).map_err(io_err)?;
    let mut reader = BufReader::new(stream.try_clone().map_err(io_err)?);
    let mut writer = stream.try_clone().map_err(io_err)?;
    let mut read = || -> Result<String, SessionError> {
        let mut line = String::new();
        match reader.read_line(&mut line).map_err(io_err)? {
            0 => Err(SessionError::Protocol(ReconcileError::TransportFailure("peer closed during HELLO".into()))),
            _ => Ok(line.trim_end().to_string()),
        }
    };
    match role {
        Role::Leader => {
            writeln!(writer, "{}", hello_line(nonce, Role::Leader)).map_err(io_err)?;
            let (echo, peer) = parse_hello(&read()?)?;
            if peer != Role::Follower || echo != *nonce {
                return Err(ReconcileError::ProtocolDesync("peer HELLO mismatch".into()).into());
            }
        }
        Role::Follower => {
            let (announced, peer) = parse_hello(&read()?)?;
            if peer != Role::Leader {
                return Err(ReconcileError::ProtocolDesync("both sides claim FOLLOWER".into()).into());
            }
            *nonce = announced;
            writeln!(writer, "{}", hello_line(nonce, Role::Follower)).map_err(io_err)?;
        }
    }
    Ok(())
}

fn run_tcp_party(
    stream: TcpStream,
    role: Role,
    gnb: &ProbeTrace,
    ue: &ProbeTrace,
    cfg: &SessionConfig,
) -> Result<SessionOutcome, SessionError> {
    let mut cfg = cfg.clone();
    handshake(&stream, role, &mut cfg.nonce, cfg.timeout)?;
    let prep = prepare(gnb, ue, &cfg)?;
    let transport = TcpTransport::new(stream, cfg.timeout).map_err(|e| match e {
        WireError::Timeout => SessionError::Timeout,
        other => SessionError::from(ReconcileError::from(other)),
    })?;
    let mut link = Link::new(transport, role);
    let party = run_party(role, &mut link, &prep, &cfg)?;
    // verified keys imply identical reconciled streams
    let report = build_report(&prep, &party, 0.0, &cfg);
    let (gnb_side, ue_side) = match role {
        Role::Leader => (Some(party), None),
        Role::Follower => (None, Some(party)),
    };
    Ok(SessionOutcome { prepared: prep, gnb: gnb_side, ue: ue_side, report })
}

/// Accepts one peer on `listener` and runs the gNB (leader) side.
pub fn serve_once(
    listener: &TcpListener,
    gnb: &ProbeTrace,
    ue: &ProbeTrace,
    cfg: &SessionConfig,
) -> Result<SessionOutcome, SessionError> {
    let (stream, _) = listener.accept().map_err(io_err)?;
    run_tcp_party(stream, Role::Leader, gnb, ue, cfg)
}

/// Connects to a serving peer and runs the UE (follower) side.
pub fn connect_and_run(
    addr: impl ToSocketAddrs,
    gnb: &ProbeTrace,
    ue: &ProbeTrace,
    cfg: &SessionConfig,
) -> Result<SessionOutcome, SessionError> {
    let addrs: Vec<_> = addr.to_socket_addrs().map_err(|e| SessionError::Config(e.to_string()))?.collect();
    let mut last = None;
    for a in addrs {
        match TcpStream::connect_timeout(&a, cfg.timeout) {
            Ok(stream) => return run_tcp_party(stream, Role::Follower, gnb, ue, cfg),
            Err(e) => last = Some(e),
        }
    }
    Err(SessionError::ConnectionRefused(
        last.map(|e| e.to_string()).unwrap_or_else(|| "no address".into()),
    ))
}

/// Runs the session with one party per TCP endpoint on this host: the gNB
/// side listens on an ephemeral port and the UE side connects to it.
pub fn run_two_process(gnb: &ProbeTrace, ue: &ProbeTrace, cfg: &SessionConfig) -> Result<SessionOutcome, SessionError> {
    let listener = TcpListener::bind("127.0.0.1:0").map_err(io_err)?;
    let addr = listener.local_addr().map_err(io_err)?;
    let (g2, u2, c2) = (gnb.clone(), ue.clone(), cfg.clone());
    let server = thread::spawn(move || serve_once(&listener, &g2, &u2, &c2));
    let client = connect_and_run(addr, gnb, ue, cfg);
    let server = server.join().map_err(|_| SessionError::Config("server thread panicked".into()))?;
    let (s, c) = (server?, client?);
    Ok(SessionOutcome { prepared: s.prepared, gnb: s.gnb, ue: c.ue, report: s.report })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hello_round_trip() {
        let n = nonce_from_seed(7);
        let line = hello_line(&n, Role::Leader);
        assert!(line.starts_with("HELLO v1 nonce="));
        assert!(line.ends_with(" role=LEADER"));
        assert_eq!(parse_hello(&line).unwrap(), (n, Role::Leader));
        assert!(parse_hello("HELLO v2 nonce=00 role=LEADER").is_err());
        assert!(parse_hello("HELLO v1 nonce=zz role=LEADER").is_err());
        assert!(parse_hello("HELLO v1 nonce=00112233445566778899aabbccddeeff role=BOTH").is_err());
    }

    #[test]
    fn nonce_depends_on_seed() {
        assert_ne!(nonce_from_seed(1), nonce_from_seed(2));
        assert_eq!(nonce_from_seed(1), nonce_from_seed(1));
    }

    #[test]
    fn config_validation() {
        let mut cfg = SessionConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.max_passes = 0;
        assert!(cfg.validate().is_err());
        let cfg = SessionConfig { sample_fraction: 0.5, ..SessionConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
