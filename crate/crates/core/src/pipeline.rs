//! Feature extraction: subband averaging, DCT-domain detrending and
//! multi-level Gray-coded quantisation.

use std::sync::Arc;

use rustdct::{DctPlanner, TransformType2And3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[allow(unused_imports)]
use crate::par::prelude::*;
use crate::alignment::ProbePair;
use crate::reconcile::BitStream;
use crate::trace_model::ComplexSample;

pub const MIN_SUBBAND_HZ: f64 = 500e3;
pub const MAX_SUBBAND_HZ: f64 = 2e6;
pub const MIN_BAND_COUNT: usize = 4;
pub const MIN_ENHANCE_ROWS: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum PipelineError {
    #[error("overlap of {overlap_len} subcarriers gives only {band_count} subbands")]
    OverlapTooSmall { overlap_len: usize, band_count: usize },
    #[error("need at least {MIN_ENHANCE_ROWS} probes, got {0}")]
    TooFewProbes(usize),
    #[error("column has fewer distinct values than quantisation levels")]
    DegenerateColumn,
    #[error("bit streams differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubbandConfig {
    pub width_hz: f64,
    pub subcarriers_per_band: usize,
    pub band_count: usize,
}

impl SubbandConfig {
    /// Builds a configuration for an explicit width, clamped to the allowed
    /// 500 kHz - 2 MHz range.
    pub fn with_width(width_hz: f64, scs_hz: f64, overlap_len: usize) -> Result<Self, PipelineError> {
        if !(width_hz > 0.0 && scs_hz > 0.0) {
            return Err(PipelineError::InvalidInput("width and spacing must be positive".into()));
        }
        let width_hz = width_hz.clamp(MIN_SUBBAND_HZ, MAX_SUBBAND_HZ);
        let subcarriers_per_band = ((width_hz / scs_hz).round() as usize).max(1);
        let band_count = overlap_len / subcarriers_per_band;
        if band_count < MIN_BAND_COUNT {
            return Err(PipelineError::OverlapTooSmall { overlap_len, band_count });
        }
        Ok(SubbandConfig { width_hz, subcarriers_per_band, band_count })
    }

    /// Doubles the width (clamped). `None` when already at the upper clamp.
    pub fn widened(&self, scs_hz: f64, overlap_len: usize) -> Option<Result<Self, PipelineError>> {
        if self.width_hz >= MAX_SUBBAND_HZ {
            return None;
        }
        Some(Self::with_width(self.width_hz * 2.0, scs_hz, overlap_len))
    }
}

/// Subband width is half the coherence bandwidth, clamped to 500 kHz - 2 MHz.
pub fn select_subband_width(bc_hz: f64, scs_hz: f64, overlap_len: usize) -> Result<SubbandConfig, PipelineError> {
    if bc_hz.is_nan() || bc_hz <= 0.0 {
        return Err(PipelineError::InvalidInput("coherence bandwidth must be positive".into()));
    }
    SubbandConfig::with_width(bc_hz / 2.0, scs_hz, overlap_len)
}

/// Row-major matrix: rows are probes (time), columns are subbands.
#[derive(Clone, Debug, PartialEq)]
pub struct MagnitudeMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl MagnitudeMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, PipelineError> {
        if data.len() != rows * cols {
            return Err(PipelineError::InvalidInput(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(PipelineError::InvalidInput("non-finite entry".into()));
        }
        Ok(MagnitudeMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, PipelineError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(PipelineError::InvalidInput("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self, PipelineError> {
        let rows = columns.first().map_or(0, Vec::len);
        let cols = columns.len();
        let mut data = vec![0.0; rows * cols];
        for (c, col) in columns.iter().enumerate() {
            if col.len() != rows {
                return Err(PipelineError::InvalidInput("ragged columns".into()));
            }
            for (r, v) in col.iter().enumerate() {
                data[r * cols + c] = *v;
            }
        }
        Self::new(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.cols).map(|c| self.column(c)).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }
}

/// Mean magnitude over each run of `subcarriers_per_band` samples; a trailing
/// partial band is dropped.
pub fn subband_magnitudes(samples: &[ComplexSample], cfg: &SubbandConfig) -> Vec<f64> {
    samples
        .chunks_exact(cfg.subcarriers_per_band)
        .take(cfg.band_count)
        .map(|band| band.iter().map(|s| s.norm()).sum::<f64>() / band.len() as f64)
        .collect()
}

/// One `(gNB row, UE row)` of subband magnitudes.
pub fn subband_average(pair: &ProbePair, cfg: &SubbandConfig) -> (Vec<f64>, Vec<f64>) {
    (
        subband_magnitudes(&pair.gnb_estimates, cfg),
        subband_magnitudes(&pair.ue_estimates, cfg),
    )
}

/// Stage-1 matrices for both endpoints.
pub fn magnitude_matrices(
    pairs: &[ProbePair],
    cfg: &SubbandConfig,
) -> Result<(MagnitudeMatrix, MagnitudeMatrix), PipelineError> {
    if let Some(short) = pairs.iter().find(|p| p.len() < cfg.band_count * cfg.subcarriers_per_band) {
        return Err(PipelineError::InvalidInput(format!(
            "pair of length {} cannot hold {} bands of {}",
            short.len(),
            cfg.band_count,
            cfg.subcarriers_per_band
        )));
    }
    let rows: Vec<(Vec<f64>, Vec<f64>)> = crate::maybe_par_iter!(pairs).map(|p| subband_average(p, cfg)).collect();
    let (g, u): (Vec<Vec<f64>>, Vec<Vec<f64>>) = rows.into_iter().unzip();
    Ok((MagnitudeMatrix::from_rows(&g)?, MagnitudeMatrix::from_rows(&u)?))
}

/// Orthonormal DCT-II / DCT-III pair of one fixed length.
pub struct OrthoDct {
    len: usize,
    plan: Arc<dyn TransformType2And3<f64>>,
}

impl OrthoDct {
    pub fn new(len: usize) -> Self {
        OrthoDct { len, plan: DctPlanner::new().plan_dct2(len) }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.len);
        let mut buf = x.to_vec();
        self.plan.process_dct2(&mut buf);
        let n = self.len as f64;
        buf[0] *= (1.0 / n).sqrt();
        for v in &mut buf[1..] {
            *v *= (2.0 / n).sqrt();
        }
        buf
    }

    pub fn inverse(&self, c: &[f64]) -> Vec<f64> {
        assert_eq!(c.len(), self.len);
        let n = self.len as f64;
        let mut buf = c.to_vec();
        // undo orthonormal scaling, then DCT-III returns N/2 times the input
        buf[0] *= n.sqrt();
        for v in &mut buf[1..] {
            *v *= (n / 2.0).sqrt();
        }
        self.plan.process_dct3(&mut buf);
        for v in &mut buf {
            *v *= 2.0 / n;
        }
        buf
    }
}

/// Per subband column: orthonormal DCT-II along time, zero the DC
/// coefficient, remove the least-squares projection onto the transform of a
/// linear time trend, inverse transform. Each endpoint applies this to its own
/// matrix without any exchange.
pub fn dct_lr_enhance(m: &MagnitudeMatrix) -> Result<MagnitudeMatrix, PipelineError> {
    let n = m.rows();
    if n < MIN_ENHANCE_ROWS {
        return Err(PipelineError::TooFewProbes(n));
    }
    let dct = OrthoDct::new(n);
    let centre = (n as f64 - 1.0) / 2.0;
    let ramp: Vec<f64> = (0..n).map(|t| t as f64 - centre).collect();
    let trend = dct.forward(&ramp);
    let trend_energy: f64 = trend.iter().map(|v| v * v).sum();

    let columns = m.columns();
    let enhanced: Vec<Vec<f64>> = crate::maybe_par_iter!(columns)
        .map(|col| {
            let mut c = dct.forward(col);
            c[0] = 0.0;
            let beta = c.iter().zip(&trend).map(|(a, b)| a * b).sum::<f64>() / trend_energy;
            for (v, t) in c.iter_mut().zip(&trend) {
                *v -= beta * t;
            }
            dct.inverse(&c)
        })
        .collect();
    MagnitudeMatrix::from_columns(&enhanced)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Levels {
    Two,
    Four,
    Eight,
}

impl Levels {
    pub fn from_count(q: u32) -> Option<Self> {
        match q {
            2 => Some(Levels::Two),
            4 => Some(Levels::Four),
            8 => Some(Levels::Eight),
            _ => None,
        }
    }

    pub fn count(self) -> usize {
        match self {
            Levels::Two => 2,
            Levels::Four => 4,
            Levels::Eight => 8,
        }
    }

    pub fn bits_per_sample(self) -> usize {
        self.count().trailing_zeros() as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantisationConfig {
    pub levels: Levels,
    /// Per subband, `levels - 1` strictly increasing boundaries.
    pub thresholds: Vec<Vec<f64>>,
}

/// Linear-interpolation empirical quantile of sorted data.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Thresholds at the empirical `k/levels` quantiles of one endpoint's own
/// column.
pub fn fit_thresholds(column_values: &[f64], levels: usize) -> Result<Vec<f64>, PipelineError> {
    if levels < 2 {
        return Err(PipelineError::InvalidInput("need at least two levels".into()));
    }
    let mut sorted = column_values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() < levels {
        return Err(PipelineError::DegenerateColumn);
    }
    let thresholds: Vec<f64> = (1..levels)
        .map(|k| quantile_sorted(&sorted, k as f64 / levels as f64))
        .collect();
    if thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(PipelineError::DegenerateColumn);
    }
    Ok(thresholds)
}

pub fn fit_quantiser(m: &MagnitudeMatrix, levels: Levels) -> Result<QuantisationConfig, PipelineError> {
    let columns = m.columns();
    let thresholds = crate::maybe_par_iter!(columns)
        .map(|col| fit_thresholds(col, levels.count()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(QuantisationConfig { levels, thresholds })
}

pub fn gray_code(level: usize) -> usize {
    level ^ (level >> 1)
}

/// Level index of `value`: the number of thresholds it exceeds.
pub fn level_of(value: f64, thresholds: &[f64]) -> usize {
    thresholds.iter().filter(|&&t| value > t).count()
}

/// Maps every entry to a Gray-coded level, most significant bit first,
/// time-major then subband.
pub fn quantise(m: &MagnitudeMatrix, qcfg: &QuantisationConfig) -> BitStream {
    assert_eq!(qcfg.thresholds.len(), m.cols(), "one threshold set per subband");
    let width = qcfg.levels.bits_per_sample();
    let mut bits = Vec::with_capacity(m.rows() * m.cols() * width);
    for r in 0..m.rows() {
        for (c, th) in qcfg.thresholds.iter().enumerate() {
            let g = gray_code(level_of(m.get(r, c), th));
            for b in (0..width).rev() {
                bits.push(((g >> b) & 1) as u8);
            }
        }
    }
    BitStream::new(bits)
}

/// Fraction of positions where the streams differ.
pub fn bdr(a: &BitStream, b: &BitStream) -> Result<f64, PipelineError> {
    if a.len() != b.len() {
        return Err(PipelineError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let diff = a.bits().iter().zip(b.bits()).filter(|(x, y)| x != y).count();
    Ok(diff as f64 / a.len() as f64)
}

/// Output of stages 1-3 for both endpoints.
#[derive(Clone, Debug)]
pub struct StageThree {
    pub gnb_bits: BitStream,
    pub ue_bits: BitStream,
    pub gnb_quantiser: QuantisationConfig,
    pub ue_quantiser: QuantisationConfig,
}

impl StageThree {
    pub fn bdr(&self) -> f64 {
        bdr(&self.gnb_bits, &self.ue_bits).expect("equal-length streams")
    }
}

/// Runs subband averaging, optional enhancement and quantisation on aligned
/// pairs. Each endpoint's bits depend only on its own estimates.
pub fn run_stages(
    pairs: &[ProbePair],
    subband: &SubbandConfig,
    levels: Levels,
    enhance: bool,
) -> Result<StageThree, PipelineError> {
    let (mut g, mut u) = magnitude_matrices(pairs, subband)?;
    if enhance {
        g = dct_lr_enhance(&g)?;
        u = dct_lr_enhance(&u)?;
    }
    let gq = fit_quantiser(&g, levels)?;
    let uq = fit_quantiser(&u, levels)?;
    Ok(StageThree {
        gnb_bits: quantise(&g, &gq),
        ue_bits: quantise(&u, &uq),
        gnb_quantiser: gq,
        ue_quantiser: uq,
    })
}
