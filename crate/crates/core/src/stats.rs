//! Significance testing, FDR control, ROI aggregation, and layer-trend
//! correlations.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::AtlasMap;
use crate::encoding::{mean_defined, pearson, AlignmentResult, Condition};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: f64,
}

/// Two-tailed paired-sample t-test on `a − b`.
pub fn paired_ttest_two_tailed(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::dims(format!("paired samples of {} and {}", a.len(), b.len())));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::invalid("paired t-test needs at least 2 pairs"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let scale = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if var.sqrt() <= 1e-12 * scale || var == 0.0 {
        return Err(Error::DegeneratePairs);
    }
    let t = mean / (var.sqrt() / nf.sqrt());
    let df = nf - 1.0;
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::invalid(e.to_string()))?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(TTest { t, p, df })
}

/// Benjamini–Hochberg step-up rejections, in input order.
pub fn bh_fdr(pvals: &[f64], q: f64) -> Vec<bool> {
    let m = pvals.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| pvals[i].total_cmp(&pvals[j]).then(i.cmp(&j)));
    let mut cutoff = 0;
    for (rank, &i) in order.iter().enumerate() {
        let k = rank + 1;
        if pvals[i] <= k as f64 * q / m as f64 {
            cutoff = k;
        }
    }
    let mut mask = vec![false; m];
    for &i in &order[..cutoff] {
        mask[i] = true;
    }
    mask
}

/// Per-layer drops in decoding accuracy and in brain alignment.
#[derive(Debug, Clone, PartialEq)]
pub struct TrendInput {
    pub delta_decode: Vec<f64>,
    pub delta_align: Vec<f64>,
}

/// Pearson correlation across layers of the two delta series; `None` if
/// either series is constant.
pub fn layer_trend_correlation(input: &TrendInput) -> Result<Option<f64>> {
    if input.delta_decode.len() != input.delta_align.len() {
        return Err(Error::dims(format!(
            "{} decoding deltas vs {} alignment deltas",
            input.delta_decode.len(),
            input.delta_align.len()
        )));
    }
    if input.delta_decode.len() < 3 {
        return Err(Error::invalid("trend correlation needs at least 3 layers"));
    }
    pearson(&input.delta_decode, &input.delta_align)
}

/// Trend correlation for every voxel independently. `per_layer_voxel_delta`
/// is indexed `[layer][voxel]`.
pub fn voxel_trend_map(
    delta_decode: &[f64],
    per_layer_voxel_delta: &[Vec<Option<f64>>],
) -> Result<Vec<Option<f64>>> {
    if per_layer_voxel_delta.len() != delta_decode.len() {
        return Err(Error::dims("one voxel delta vector per layer is required"));
    }
    let voxels = per_layer_voxel_delta.first().map_or(0, Vec::len);
    (0..voxels)
        .map(|v| {
            let series: Option<Vec<f64>> = per_layer_voxel_delta.iter().map(|l| l[v]).collect();
            match series {
                Some(delta_align) => layer_trend_correlation(&TrendInput {
                    delta_decode: delta_decode.to_vec(),
                    delta_align,
                }),
                None => Ok(None),
            }
        })
        .collect()
}

/// Whole-brain trend: correlation of the voxel-mean deltas (not the mean of
/// per-voxel correlations).
pub fn whole_brain_trend(
    delta_decode: &[f64],
    per_layer_voxel_delta: &[Vec<Option<f64>>],
) -> Result<Option<f64>> {
    let delta_align: Option<Vec<f64>> =
        per_layer_voxel_delta.iter().map(|l| mean_defined(l)).collect();
    match delta_align {
        Some(delta_align) => layer_trend_correlation(&TrendInput {
            delta_decode: delta_decode.to_vec(),
            delta_align,
        }),
        None => Ok(None),
    }
}

/// Mean of the defined per-voxel values inside `roi`.
pub fn roi_aggregate(per_voxel: &[Option<f64>], atlas: &AtlasMap, roi: &str) -> Result<f64> {
    if per_voxel.len() != atlas.voxels() {
        return Err(Error::dims(format!(
            "{} voxel values for an atlas of {} voxels",
            per_voxel.len(),
            atlas.voxels()
        )));
    }
    let voxels = atlas.roi_voxels(roi)?;
    let values: Vec<Option<f64>> = voxels.iter().map(|&v| per_voxel[v]).collect();
    mean_defined(&values).ok_or_else(|| Error::EmptyRoi(roi.to_string()))
}

/// Mean of the defined per-voxel values inside one parcel.
pub fn parcel_aggregate(per_voxel: &[Option<f64>], atlas: &AtlasMap, parcel: &str) -> Result<f64> {
    let values: Vec<Option<f64>> = atlas
        .parcel_voxels(parcel)
        .iter()
        .map(|&v| per_voxel[v])
        .collect();
    mean_defined(&values).ok_or_else(|| Error::EmptyRoi(parcel.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignificanceRow {
    pub layer: u32,
    pub condition: Condition,
    pub subjects: usize,
    pub mean_before: f64,
    pub mean_after: f64,
    pub t: f64,
    pub p: f64,
    /// All subject differences identical; reported as t = 0, p = 1.
    pub degenerate: bool,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignificanceReport {
    pub q: f64,
    pub rows: Vec<SignificanceRow>,
}

impl SignificanceReport {
    pub fn significant_layers(&self, condition: &Condition) -> Vec<u32> {
        self.rows
            .iter()
            .filter(|r| &r.condition == condition && r.significant)
            .map(|r| r.layer)
            .collect()
    }
}

/// Paired t-tests of subject-mean alignment, before vs. each after
/// condition, per layer. BH-FDR runs over every (layer × condition) test in
/// this call.
pub fn significance_report(
    before: &[AlignmentResult],
    after: &[AlignmentResult],
    q: f64,
) -> Result<SignificanceReport> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::invalid("q must be in (0, 1)"));
    }
    let mut base: BTreeMap<u32, BTreeMap<&str, f64>> = BTreeMap::new();
    for r in before {
        base.entry(r.layer)
            .or_default()
            .insert(r.subject_id.as_str(), r.per_subject_mean);
    }
    let mut groups: BTreeMap<(Condition, u32), BTreeMap<&str, f64>> = BTreeMap::new();
    for r in after {
        groups
            .entry((r.condition.clone(), r.layer))
            .or_default()
            .insert(r.subject_id.as_str(), r.per_subject_mean);
    }

    let mut rows = Vec::with_capacity(groups.len());
    for ((condition, layer), subjects) in &groups {
        let reference = base
            .get(layer)
            .ok_or_else(|| Error::invalid(format!("no before-removal results for layer {layer}")))?;
        let a: BTreeSet<&str> = reference.keys().copied().collect();
        let b: BTreeSet<&str> = subjects.keys().copied().collect();
        if a != b {
            return Err(Error::invalid(format!(
                "mismatched subject sets at layer {layer}, condition {condition}"
            )));
        }
        let xs: Vec<f64> = reference.values().copied().collect();
        let ys: Vec<f64> = subjects.values().copied().collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (t, p, degenerate) = match paired_ttest_two_tailed(&xs, &ys) {
            Ok(tt) => (tt.t, tt.p, false),
            Err(Error::DegeneratePairs) => (0.0, 1.0, true),
            Err(e) => return Err(e),
        };
        rows.push(SignificanceRow {
            layer: *layer,
            condition: condition.clone(),
            subjects: xs.len(),
            mean_before: mean(&xs),
            mean_after: mean(&ys),
            t,
            p,
            degenerate,
            significant: false,
        });
    }
    let pvals: Vec<f64> = rows.iter().map(|r| r.p).collect();
    for (row, reject) in rows.iter_mut().zip(bh_fdr(&pvals, q)) {
        row.significant = reject;
    }
    Ok(SignificanceReport { q, rows })
}
