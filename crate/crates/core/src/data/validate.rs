use serde::Serialize;

use super::{FeatureMatrix, LabelTable, ResponseMatrix, UnitKind, WordTimeline};

/// Shape summary of a dataset; enough to check consistency without the values.
#[derive(Debug, Clone, Default)]
pub struct DatasetShape {
    /// `(layer_index, rows, cols, kind)` per feature matrix.
    pub features: Vec<(u32, usize, usize, UnitKind)>,
    pub label_words: usize,
    pub timeline_words: usize,
    pub max_onset_seconds: f64,
    pub min_onset_seconds: f64,
    /// `(subject_id, trs, voxels, tr_seconds)` per subject.
    pub responses: Vec<(String, usize, usize, f64)>,
}

impl DatasetShape {
    pub fn of(
        features: &[FeatureMatrix],
        labels: &LabelTable,
        timeline: &WordTimeline,
        responses: &[ResponseMatrix],
    ) -> Self {
        DatasetShape {
            features: features
                .iter()
                .map(|f| (f.layer_index(), f.rows(), f.cols(), f.unit_kind()))
                .collect(),
            label_words: labels.words(),
            timeline_words: timeline.len(),
            max_onset_seconds: timeline.onsets().last().copied().unwrap_or(0.0),
            min_onset_seconds: timeline.onsets().first().copied().unwrap_or(0.0),
            responses: responses
                .iter()
                .map(|r| (r.subject_id().to_string(), r.trs(), r.voxels(), r.tr_seconds()))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub issues: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.issues.is_empty()
    }
}

pub fn validate_dataset(
    features: &[FeatureMatrix],
    labels: &LabelTable,
    timeline: &WordTimeline,
    responses: &[ResponseMatrix],
) -> ValidationReport {
    validate_shape(&DatasetShape::of(features, labels, timeline, responses))
}

/// Every inconsistency in the dataset, in a stable order. Empty iff consistent.
pub fn validate_shape(shape: &DatasetShape) -> ValidationReport {
    let mut issues = Vec::new();

    if shape.features.is_empty() {
        issues.push("no feature layers".to_string());
    }
    let mut layers: Vec<u32> = shape.features.iter().map(|f| f.0).collect();
    layers.sort_unstable();
    for (i, &l) in layers.iter().enumerate() {
        let expected = i as u32 + 1;
        if l != expected {
            issues.push(format!("layer gap: expected layer {expected}, found {l}"));
            break;
        }
    }
    if let Some(&(_, rows, cols, _)) = shape.features.first() {
        for &(layer, r, c, kind) in &shape.features {
            if kind != UnitKind::Word {
                issues.push(format!("layer {layer} is not word-level"));
            }
            if r != rows {
                issues.push(format!("word count layer {layer}: {r} vs {rows}"));
            }
            if c != cols {
                issues.push(format!("dimension layer {layer}: {c} vs {cols}"));
            }
        }
        if shape.label_words != rows {
            issues.push(format!(
                "word count: labels {} vs features {rows}",
                shape.label_words
            ));
        }
        if shape.timeline_words != rows {
            issues.push(format!(
                "timeline length: {} vs features {rows}",
                shape.timeline_words
            ));
        }
    }

    if shape.responses.is_empty() {
        issues.push("no subjects".to_string());
    }
    if let Some((_, trs, voxels, tr_seconds)) = shape.responses.first() {
        for (id, t, v, s) in &shape.responses {
            if t != trs {
                issues.push(format!("TR count subject {id}: {t} vs {trs}"));
            }
            if v != voxels {
                issues.push(format!("voxel count subject {id}: {v} vs {voxels}"));
            }
            if s != tr_seconds {
                issues.push(format!("TR length subject {id}: {s} vs {tr_seconds}"));
            }
        }
        let scan = *trs as f64 * tr_seconds;
        if shape.timeline_words > 0
            && (shape.min_onset_seconds < 0.0 || shape.max_onset_seconds > scan)
        {
            issues.push(format!(
                "timeline onsets [{}, {}] outside scan [0, {scan}]",
                shape.min_onset_seconds, shape.max_onset_seconds
            ));
        }
    }

    ValidationReport { issues }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_scale_shape() -> DatasetShape {
        DatasetShape {
            features: (1..=12).map(|l| (l, 8267, 768, UnitKind::Word)).collect(),
            label_words: 8267,
            timeline_words: 8267,
            min_onset_seconds: 0.0,
            max_onset_seconds: 3300.0,
            responses: (1..=18).map(|s| (s.to_string(), 2226, 1000, 1.5)).collect(),
        }
    }

    #[test]
    fn full_scale_dimensions_are_consistent() {
        assert!(validate_shape(&full_scale_shape()).is_ok());
    }

    #[test]
    fn word_count_mismatch() {
        let mut s = full_scale_shape();
        s.features.iter_mut().for_each(|f| f.1 = 99);
        s.label_words = 100;
        s.timeline_words = 99;
        let r = validate_shape(&s);
        assert_eq!(r.issues, vec!["word count: labels 100 vs features 99"]);
    }

    #[test]
    fn tr_count_mismatch_names_subject() {
        let mut s = full_scale_shape();
        s.responses[2].1 = 2225;
        let r = validate_shape(&s);
        assert_eq!(r.issues, vec!["TR count subject 3: 2225 vs 2226"]);
    }

    #[test]
    fn layer_gap_and_idempotence() {
        let mut s = full_scale_shape();
        s.features.remove(4);
        let a = validate_shape(&s);
        let b = validate_shape(&s);
        assert_eq!(a, b);
        assert_eq!(a.issues, vec!["layer gap: expected layer 5, found 6"]);
    }
}
