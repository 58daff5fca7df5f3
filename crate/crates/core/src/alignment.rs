//! Time pairing of gNB/UE probes, UE FFT-orientation detection and
//! extraction of the shared negative-frequency region.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[allow(unused_imports)]
use crate::par::prelude::*;
use crate::pipeline::{run_stages, Levels, PipelineError, SubbandConfig};
use crate::trace_model::{ChannelProbe, ComplexSample, Endpoint, FftOrdering, ProbeTrace};

pub const DEFAULT_ORIENTATION_PROBES: usize = 64;
pub const CORRELATION_MARGIN: f64 = 0.1;
pub const FALLBACK_BDR_MARGIN: f64 = 0.02;

#[derive(Debug, Error, PartialEq)]
pub enum AlignmentError {
    #[error("expected a GNB trace and a UE trace, got {gnb:?} and {ue:?}")]
    EndpointMismatch { gnb: Endpoint, ue: Endpoint },
    #[error("gNB trace has {gnb} subcarriers but UE trace has {ue}")]
    InconsistentSubcarrierCount { gnb: usize, ue: usize },
    #[error("no aligned probe pairs")]
    NoPairs,
    #[error("orientation ambiguous: fallback BDR {bdr_standard:.4} vs {bdr_reversed:.4}")]
    AmbiguousOrientation { bdr_standard: f64, bdr_reversed: f64 },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

/// Time-matched probes, still in their stored bin order.
#[derive(Clone, Copy, Debug)]
pub struct RawPair<'a> {
    pub timestamp_ms: u64,
    pub gnb: &'a ChannelProbe,
    pub ue: &'a ChannelProbe,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbePair {
    pub timestamp_ms: u64,
    pub gnb_estimates: Vec<ComplexSample>,
    pub ue_estimates: Vec<ComplexSample>,
}

impl ProbePair {
    pub fn len(&self) -> usize {
        self.gnb_estimates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gnb_estimates.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrientationDecision {
    pub ordering: FftOrdering,
    pub corr_standard: f64,
    pub corr_reversed: f64,
    pub used_bdr_fallback: bool,
    pub bdr_standard: Option<f64>,
    pub bdr_reversed: Option<f64>,
}

impl OrientationDecision {
    pub fn fixed(ordering: FftOrdering) -> Self {
        OrientationDecision {
            ordering,
            corr_standard: 0.0,
            corr_reversed: 0.0,
            used_bdr_fallback: false,
            bdr_standard: None,
            bdr_reversed: None,
        }
    }
}

/// Stage-1..3 settings used when correlation cannot separate the hypotheses.
#[derive(Clone, Copy, Debug)]
pub struct FallbackProbe {
    pub subband: SubbandConfig,
    pub levels: Levels,
}

/// Greedy nearest-timestamp matching. Candidate pairs within `tolerance_ms`
/// are taken in order of increasing gap; each probe is used at most once.
/// Output is sorted by gNB timestamp.
pub fn pair_probes<'a>(
    gnb: &'a ProbeTrace,
    ue: &'a ProbeTrace,
    tolerance_ms: u64,
) -> Result<Vec<RawPair<'a>>, AlignmentError> {
    if gnb.endpoint != Endpoint::Gnb || ue.endpoint != Endpoint::Ue {
        return Err(AlignmentError::EndpointMismatch { gnb: gnb.endpoint, ue: ue.endpoint });
    }
    if gnb.subcarrier_count != ue.subcarrier_count {
        return Err(AlignmentError::InconsistentSubcarrierCount {
            gnb: gnb.subcarrier_count,
            ue: ue.subcarrier_count,
        });
    }
    let ue_ts: Vec<u64> = ue.probes.iter().map(|p| p.timestamp_ms).collect();
    let mut candidates: Vec<(u64, usize, usize)> = Vec::new();
    for (gi, g) in gnb.probes.iter().enumerate() {
        let lo = g.timestamp_ms.saturating_sub(tolerance_ms);
        let start = ue_ts.partition_point(|&t| t < lo);
        for (ui, &t) in ue_ts.iter().enumerate().skip(start) {
            if t > g.timestamp_ms + tolerance_ms {
                break;
            }
            candidates.push((t.abs_diff(g.timestamp_ms), gi, ui));
        }
    }
    candidates.sort_unstable();
    let mut gnb_used = vec![false; gnb.probes.len()];
    let mut ue_used = vec![false; ue.probes.len()];
    let mut chosen: Vec<(usize, usize)> = Vec::new();
    for (_, gi, ui) in candidates {
        if !gnb_used[gi] && !ue_used[ui] {
            gnb_used[gi] = true;
            ue_used[ui] = true;
            chosen.push((gi, ui));
        }
    }
    chosen.sort_unstable();
    Ok(chosen
        .into_iter()
        .map(|(gi, ui)| RawPair {
            timestamp_ms: gnb.probes[gi].timestamp_ms,
            gnb: &gnb.probes[gi],
            ue: &ue.probes[ui],
        })
        .collect())
}

/// Pearson correlation; `None` when either input has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len().min(y.len());
    if n < 2 {
        return None;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (dx, dy) = (x[i] - mx, y[i] - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

fn magnitudes(samples: &[ComplexSample]) -> Vec<f64> {
    samples.iter().map(|c| c.norm()).collect()
}

/// Mean per-pair magnitude correlation when the UE side is read under
/// `ordering`. Pairs with an undefined correlation count as zero.
pub fn orientation_correlation(pairs: &[RawPair<'_>], ordering: FftOrdering) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let sum: f64 = crate::maybe_par_iter!(pairs)
        .map(|p| {
            let g = magnitudes(&p.gnb.estimates);
            let mut u = magnitudes(&p.ue.estimates);
            ordering.apply(&mut u);
            pearson(&g, &u).unwrap_or(0.0)
        })
        .sum();
    sum / pairs.len() as f64
}

/// Reads the UE probe under the session's ordering decision.
pub fn apply_orientation(ue_probe: &ChannelProbe, decision: &OrientationDecision) -> ChannelProbe {
    let mut out = ue_probe.clone();
    decision.ordering.apply(&mut out.estimates);
    out
}

/// Keeps the negative-frequency half of both (oriented) probes.
pub fn extract_overlap(timestamp_ms: u64, gnb: &ChannelProbe, ue_oriented: &ChannelProbe) -> ProbePair {
    let half = gnb.estimates.len() / 2;
    ProbePair {
        timestamp_ms,
        gnb_estimates: gnb.estimates[half..].to_vec(),
        ue_estimates: ue_oriented.estimates[ue_oriented.estimates.len() / 2..].to_vec(),
    }
}

/// Orientation plus overlap extraction over a whole pairing.
pub fn aligned_pairs(pairs: &[RawPair<'_>], ordering: FftOrdering) -> Vec<ProbePair> {
    let decision = OrientationDecision::fixed(ordering);
    crate::maybe_par_iter!(pairs)
        .map(|p| extract_overlap(p.timestamp_ms, p.gnb, &apply_orientation(p.ue, &decision)))
        .collect()
}

/// Stage-3 BDR when the UE side is read under `ordering`.
pub fn stage_three_bdr(
    pairs: &[RawPair<'_>],
    ordering: FftOrdering,
    probe: &FallbackProbe,
) -> Result<f64, AlignmentError> {
    let aligned = aligned_pairs(pairs, ordering);
    Ok(run_stages(&aligned, &probe.subband, probe.levels, true)?.bdr())
}

/// Chooses the UE ordering from the first `probe_count` pairs: by magnitude
/// correlation when the two hypotheses differ by at least
/// [`CORRELATION_MARGIN`], otherwise by the lower stage-3 BDR.
pub fn detect_orientation(
    pairs: &[RawPair<'_>],
    probe_count: usize,
    fallback: &FallbackProbe,
) -> Result<OrientationDecision, AlignmentError> {
    if pairs.is_empty() {
        return Err(AlignmentError::NoPairs);
    }
    let window = &pairs[..probe_count.clamp(1, pairs.len())];
    let corr_standard = orientation_correlation(window, FftOrdering::Standard);
    let corr_reversed = orientation_correlation(window, FftOrdering::ReversedNegative);
    if (corr_standard - corr_reversed).abs() >= CORRELATION_MARGIN {
        let ordering = if corr_standard >= corr_reversed {
            FftOrdering::Standard
        } else {
            FftOrdering::ReversedNegative
        };
        return Ok(OrientationDecision {
            ordering,
            corr_standard,
            corr_reversed,
            used_bdr_fallback: false,
            bdr_standard: None,
            bdr_reversed: None,
        });
    }
    let bdr_standard = stage_three_bdr(window, FftOrdering::Standard, fallback)?;
    let bdr_reversed = stage_three_bdr(window, FftOrdering::ReversedNegative, fallback)?;
    if (bdr_standard - bdr_reversed).abs() < FALLBACK_BDR_MARGIN {
        return Err(AlignmentError::AmbiguousOrientation { bdr_standard, bdr_reversed });
    }
    let ordering = if bdr_standard < bdr_reversed {
        FftOrdering::Standard
    } else {
        FftOrdering::ReversedNegative
    };
    Ok(OrientationDecision {
        ordering,
        corr_standard,
        corr_reversed,
        used_bdr_fallback: true,
        bdr_standard: Some(bdr_standard),
        bdr_reversed: Some(bdr_reversed),
    })
}
