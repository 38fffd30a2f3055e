//! Word-rate to TR-rate conversion and hemodynamic delay modeling.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureMatrix, UnitKind, WordTimeline};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LanczosConfig {
    pub lobes: usize,
    pub normalize_dc: bool,
}

impl Default for LanczosConfig {
    fn default() -> Self {
        LanczosConfig {
            lobes: 3,
            normalize_dc: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FirConfig {
    /// TR offsets, strictly increasing.
    pub delays: Vec<usize>,
    pub tr_seconds: f64,
}

impl Default for FirConfig {
    fn default() -> Self {
        FirConfig {
            delays: (1..=8).collect(),
            tr_seconds: crate::data::DEFAULT_TR_SECONDS,
        }
    }
}

impl FirConfig {
    /// Seconds spanned by the longest delay.
    pub fn window_seconds(&self) -> f64 {
        self.delays.last().copied().unwrap_or(0) as f64 * self.tr_seconds
    }
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = PI * x;
        px.sin() / px
    }
}

/// Lanczos window: sinc(x)·sinc(x/lobes) inside |x| < lobes, zero outside.
pub fn lanczos_kernel(x: f64, lobes: usize) -> f64 {
    let a = lobes as f64;
    if x.abs() >= a {
        0.0
    } else {
        sinc(x) * sinc(x / a)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Downsampled {
    pub features: FeatureMatrix,
    /// TRs that received no kernel weight and were zero-filled.
    pub empty_trs: Vec<usize>,
}

/// Resample word-level features to TR times `t · tr_seconds`, `t = 0..tr_count`.
pub fn lanczos_downsample(
    word_feats: &FeatureMatrix,
    timeline: &WordTimeline,
    tr_count: usize,
    tr_seconds: f64,
    cfg: &LanczosConfig,
) -> Result<Downsampled> {
    if cfg.lobes == 0 {
        return Err(Error::invalid("lanczos needs at least one lobe"));
    }
    if tr_count == 0 {
        return Err(Error::invalid("tr_count must be at least 1"));
    }
    if !(tr_seconds > 0.0) {
        return Err(Error::invalid("tr_seconds must be positive"));
    }
    if timeline.len() != word_feats.rows() {
        return Err(Error::dims(format!(
            "timeline has {} words, features have {}",
            timeline.len(),
            word_feats.rows()
        )));
    }
    let onsets = timeline.onsets();
    let x = word_feats.values();
    let d = x.ncols();
    let a = cfg.lobes as f64;
    let mut out = DMatrix::zeros(tr_count, d);
    let mut empty = Vec::new();
    let mut lo = 0usize;
    for t in 0..tr_count {
        let center = t as f64 * tr_seconds;
        while lo < onsets.len() && (center - onsets[lo]) / tr_seconds >= a {
            lo += 1;
        }
        let mut total = 0.0;
        let mut any = false;
        let mut w = lo;
        while w < onsets.len() {
            let u = (center - onsets[w]) / tr_seconds;
            if u <= -a {
                break;
            }
            let k = lanczos_kernel(u, cfg.lobes);
            if k != 0.0 {
                any = true;
                total += k;
                for c in 0..d {
                    out[(t, c)] += k * x[(w, c)];
                }
            }
            w += 1;
        }
        if !any || total == 0.0 {
            empty.push(t);
            out.row_mut(t).fill(0.0);
        } else if cfg.normalize_dc {
            out.row_mut(t).scale_mut(1.0 / total);
        }
    }
    if empty.len() == tr_count {
        return Err(Error::EmptyTimeline);
    }
    Ok(Downsampled {
        features: FeatureMatrix::new(out, word_feats.layer_index(), UnitKind::Tr)?,
        empty_trs: empty,
    })
}

/// Concatenate delayed copies: column block `j` at row `t` holds input row
/// `t − delays[j]`, or zeros before the scan starts.
pub fn fir_expand(tr_feats: &FeatureMatrix, cfg: &FirConfig) -> Result<FeatureMatrix> {
    let out = fir_expand_matrix(tr_feats.values(), &cfg.delays)?;
    FeatureMatrix::new(out, tr_feats.layer_index(), UnitKind::Tr)
}

pub fn fir_expand_matrix(x: &DMatrix<f64>, delays: &[usize]) -> Result<DMatrix<f64>> {
    if delays.is_empty() {
        return Err(Error::invalid("FIR needs at least one delay"));
    }
    if delays.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::invalid("FIR delays must be strictly increasing"));
    }
    let (n, d) = x.shape();
    if let Some(&bad) = delays.iter().find(|&&dl| dl >= n) {
        return Err(Error::invalid(format!("delay {bad} is not shorter than {n} TRs")));
    }
    let mut out = DMatrix::zeros(n, d * delays.len());
    for (j, &delay) in delays.iter().enumerate() {
        out.view_mut((delay, j * d), (n - delay, d))
            .copy_from(&x.view((0, 0), (n - delay, d)));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZScored {
    pub values: DMatrix<f64>,
    /// Columns with zero variance, emitted as zeros.
    pub constant_columns: Vec<usize>,
}

/// Center each column and scale to unit population variance.
pub fn zscore_columns(m: &DMatrix<f64>) -> Result<ZScored> {
    let n = m.nrows();
    if n < 2 {
        return Err(Error::invalid("z-scoring needs at least 2 rows"));
    }
    let mut values = m.clone();
    let mut constant = Vec::new();
    let nf = n as f64;
    // storage is column-major, so each chunk is one column
    for (j, col) in values.as_mut_slice().chunks_exact_mut(n).enumerate() {
        let mean = col.iter().sum::<f64>() / nf;
        col.iter_mut().for_each(|v| *v -= mean);
        let sd = (col.iter().map(|v| v * v).sum::<f64>() / nf).sqrt();
        if sd <= 1e-12 * (1.0 + mean.abs()) {
            col.fill(0.0);
            constant.push(j);
        } else {
            let inv = 1.0 / sd;
            col.iter_mut().for_each(|v| *v *= inv);
            // one refinement pass removes residual rounding in the mean
            let m2 = col.iter().sum::<f64>() / nf;
            col.iter_mut().for_each(|v| *v -= m2);
        }
    }
    Ok(ZScored {
        values,
        constant_columns: constant,
    })
}

pub fn zscore_features(m: &FeatureMatrix) -> Result<(FeatureMatrix, Vec<usize>)> {
    let z = zscore_columns(m.values())?;
    Ok((m.with_values(z.values)?, z.constant_columns))
}

/// Downsample, z-score, delay-expand, and z-score again. Centering before the
/// delays keeps the zero-padded leading rows at the feature mean.
pub fn align_features(
    word_feats: &FeatureMatrix,
    timeline: &WordTimeline,
    tr_count: usize,
    lanczos: &LanczosConfig,
    fir: &FirConfig,
) -> Result<FeatureMatrix> {
    let down = lanczos_downsample(word_feats, timeline, tr_count, fir.tr_seconds, lanczos)?;
    let (centered, _) = zscore_features(&down.features)?;
    let expanded = fir_expand(&centered, fir)?;
    Ok(zscore_features(&expanded)?.0)
}
