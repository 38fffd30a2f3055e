//! Synthetic datasets with planted property signal, and brute-force oracles
//! that check the main numerical paths by independent routes.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::annotation::PROBING_TASKS;
use crate::data::{AtlasMap, FeatureMatrix, LabelTable, ResponseMatrix, UnitKind, WordTimeline, DEFAULT_ROIS};
use crate::error::{Error, Result};
use crate::seed::{derive_indexed, derive_seed, rng};
use crate::temporal::{fir_expand_matrix, lanczos_downsample, zscore_columns, LanczosConfig};

/// Class counts of the six built-in tasks after regrouping.
const TASK_CLASSES: [usize; 6] = [3, 3, 2, 2, 2, 2];

/// Shape of the hemodynamic response used to generate responses, at TR
/// delays 1..=8.
const HRF: [f64; 8] = [0.25, 0.7, 1.0, 0.8, 0.5, 0.25, 0.1, 0.05];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_words: usize,
    pub dims: usize,
    pub n_layers: usize,
    pub n_tasks: usize,
    pub n_subjects: usize,
    pub trs: usize,
    pub tr_seconds: f64,
    pub voxels: usize,
    /// Planted strength per layer, per task.
    pub signal_strength: Vec<Vec<f64>>,
    pub noise_sd: f64,
    /// Fraction of nuisance variance shared by all layers.
    pub shared_background: f64,
    /// Fraction of the shared background that is constant within a sentence.
    pub sentence_background: f64,
    /// Fraction of voxel signal variance driven by the property subspace.
    pub brain_coupling: f64,
    pub brain_noise_sd: f64,
    /// Fraction of voxel noise variance carried by a low-rank component
    /// shared across each subject's voxels.
    pub brain_shared_noise: f64,
    pub brain_noise_rank: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig::desk(0)
    }
}

/// Strength profile rising from `base` at the ends to `base + peak` mid-stack.
pub fn mid_peak_profile(n_layers: usize, base: f64, peak: f64) -> Vec<f64> {
    let mid = (n_layers as f64 + 1.0) / 2.0;
    let width = (n_layers as f64 / 4.0).max(1.0);
    (1..=n_layers)
        .map(|l| base + peak * (-((l as f64 - mid) / width).powi(2)).exp())
        .collect()
}

impl SynthConfig {
    /// Desk-scale defaults: 2000 words, 64 dims, 12 layers, 6 tasks,
    /// 6 subjects with 400 TRs and 500 voxels.
    pub fn desk(seed: u64) -> Self {
        let n_layers = 12;
        let n_tasks = 6;
        let profile = mid_peak_profile(n_layers, 3.5, 2.0);
        SynthConfig {
            seed,
            n_words: 2000,
            dims: 64,
            n_layers,
            n_tasks,
            n_subjects: 6,
            trs: 400,
            tr_seconds: 1.5,
            voxels: 500,
            signal_strength: profile.iter().map(|&s| vec![s; n_tasks]).collect(),
            noise_sd: 1.0,
            shared_background: 0.5,
            sentence_background: 0.5,
            brain_coupling: 0.7,
            brain_noise_sd: 1.0,
            brain_shared_noise: 0.5,
            brain_noise_rank: 3,
        }
    }

    pub fn with_uniform_strength(mut self, strength: f64) -> Self {
        self.signal_strength = vec![vec![strength; self.n_tasks]; self.n_layers];
        self
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.n_words,
            self.dims,
            self.n_layers,
            self.n_tasks,
            self.n_subjects,
            self.trs,
            self.voxels,
        ];
        if counts.contains(&0) {
            return Err(Error::invalid("synthetic counts must all be at least 1"));
        }
        if self.n_tasks > self.dims {
            return Err(Error::invalid("need at least one dimension per task"));
        }
        if self.signal_strength.len() != self.n_layers
            || self.signal_strength.iter().any(|r| r.len() != self.n_tasks)
        {
            return Err(Error::dims("signal_strength must be layers × tasks"));
        }
        if self.signal_strength.iter().flatten().any(|s| !(*s >= 0.0)) {
            return Err(Error::invalid("signal strengths must be non-negative"));
        }
        let fractions = [
            self.brain_coupling,
            self.shared_background,
            self.sentence_background,
            self.brain_shared_noise,
        ];
        if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::invalid("fractions must lie in [0, 1]"));
        }
        if self.brain_shared_noise > 0.0 && self.brain_noise_rank == 0 {
            return Err(Error::invalid("shared brain noise needs a positive rank"));
        }
        if !(self.tr_seconds > 0.0) || self.noise_sd < 0.0 || self.brain_noise_sd < 0.0 {
            return Err(Error::invalid("durations and noise levels must be positive"));
        }
        if self.trs <= HRF.len() {
            return Err(Error::invalid("synthetic scans need more TRs than HRF delays"));
        }
        Ok(())
    }

    pub fn task_names(&self) -> Vec<String> {
        (0..self.n_tasks)
            .map(|t| {
                PROBING_TASKS
                    .get(t)
                    .map_or_else(|| format!("Task{t}"), |s| s.to_string())
            })
            .collect()
    }

    fn task_classes(&self, t: usize) -> usize {
        TASK_CLASSES.get(t).copied().unwrap_or(2)
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub features: Vec<FeatureMatrix>,
    pub labels: LabelTable,
    pub timeline: WordTimeline,
    pub responses: Vec<ResponseMatrix>,
    pub atlas: AtlasMap,
    /// Orthonormal planted direction per task, dims × tasks.
    pub directions: DMatrix<f64>,
}

fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut r = rng(seed);
    DMatrix::from_fn(rows, cols, |_, _| r.sample(StandardNormal))
}

fn orthonormal_columns(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let raw = gaussian(rows, cols, seed);
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(cols);
    for c in 0..cols {
        let mut v = raw.column(c).clone_owned();
        for _ in 0..2 {
            for b in &out {
                let p = b.dot(&v);
                v.axpy(-p, b, 1.0);
            }
        }
        let n = v.norm();
        out.push(v / n);
    }
    DMatrix::from_columns(&out)
}

/// Apply the fixed HRF to TR-level drive.
fn convolve_hrf(tr_drive: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let delays: Vec<usize> = (1..=HRF.len()).collect();
    let expanded = fir_expand_matrix(tr_drive, &delays)?;
    let d = tr_drive.ncols();
    let mut out = DMatrix::zeros(tr_drive.nrows(), d);
    for (j, h) in HRF.iter().enumerate() {
        out += expanded.columns(j * d, d) * *h;
    }
    Ok(out)
}

/// Unit-variance voxel noise: an independent part plus a slow low-rank part
/// common to the subject's voxels.
fn subject_noise(cfg: &SynthConfig, subject: usize) -> Result<DMatrix<f64>> {
    let s = subject as u64;
    let own = gaussian(cfg.trs, cfg.voxels, derive_indexed(cfg.seed, "subject-noise", s));
    let g = cfg.brain_shared_noise;
    if g == 0.0 {
        return Ok(own);
    }
    let rank = cfg.brain_noise_rank;
    let factors = gaussian(cfg.trs, rank, derive_indexed(cfg.seed, "subject-noise-factors", s));
    let factors = zscore_columns(&convolve_hrf(&factors)?)?.values;
    let loadings = gaussian(rank, cfg.voxels, derive_indexed(cfg.seed, "subject-noise-loadings", s));
    let common = factors * loadings / (rank as f64).sqrt();
    Ok(own * (1.0 - g).sqrt() + common * g.sqrt())
}

pub fn generate_dataset(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let n = cfg.n_words;
    let d = cfg.dims;

    // sentences of 5–15 words, labels drawn per sentence
    let mut srng = rng(derive_seed(cfg.seed, "sentences"));
    let mut sentence_index = Vec::with_capacity(n);
    let mut sentence = 0;
    while sentence_index.len() < n {
        let len = srng.random_range(5..=15);
        for _ in 0..len {
            if sentence_index.len() < n {
                sentence_index.push(sentence);
            }
        }
        sentence += 1;
    }
    let sentences = sentence;

    let mut columns = Vec::with_capacity(cfg.n_tasks);
    for t in 0..cfg.n_tasks {
        let k = cfg.task_classes(t);
        let mut lrng = rng(derive_indexed(cfg.seed, "labels", t as u64));
        let mut per_sentence: Vec<usize> = (0..sentences).map(|_| lrng.random_range(0..k)).collect();
        // guarantee every class is used
        for c in 0..k.min(sentences) {
            if !per_sentence.contains(&c) {
                per_sentence[c] = c;
            }
        }
        columns.push(sentence_index.iter().map(|&s| per_sentence[s]).collect::<Vec<usize>>());
    }
    let labels = LabelTable::new(cfg.task_names(), columns)?;

    // onsets: regular spacing with jitter, inside the scan
    let scan = cfg.trs as f64 * cfg.tr_seconds;
    let step = scan / n as f64;
    let mut trng = rng(derive_seed(cfg.seed, "timeline"));
    let onsets: Vec<f64> = (0..n)
        .map(|w| (w as f64 + 0.5 + trng.random_range(-0.4..0.4)) * step)
        .collect();
    let timeline = WordTimeline::new(onsets, sentence_index.clone())?;

    let directions = orthonormal_columns(d, cfg.n_tasks, derive_seed(cfg.seed, "directions"));
    let label_design = DMatrix::from_fn(n, cfg.n_tasks, |r, t| labels.column(t)[r] as f64);
    let word_bg = gaussian(n, d, derive_seed(cfg.seed, "background"));
    let sentence_bg = gaussian(sentences, d, derive_seed(cfg.seed, "sentence-background"));
    let sb = cfg.sentence_background;
    let background = DMatrix::from_fn(n, d, |r, c| {
        (1.0 - sb).sqrt() * word_bg[(r, c)] + sb.sqrt() * sentence_bg[(sentence_index[r], c)]
    });
    let shared = cfg.shared_background.sqrt() * cfg.noise_sd;
    let private = (1.0 - cfg.shared_background).sqrt() * cfg.noise_sd;

    let mut features = Vec::with_capacity(cfg.n_layers);
    for layer in 0..cfg.n_layers {
        let strengths = DMatrix::from_diagonal(&DVector::from_column_slice(&cfg.signal_strength[layer]));
        let signal = &label_design * strengths * directions.transpose();
        let noise = gaussian(n, d, derive_indexed(cfg.seed, "layer-noise", layer as u64));
        let values = signal + &background * shared + noise * private;
        features.push(FeatureMatrix::new(values, layer as u32 + 1, UnitKind::Word)?);
    }

    // brain responses: property drive and background drive through the HRF
    let property_drive = &label_design * directions.transpose();
    let to_tr = |m: DMatrix<f64>| -> Result<DMatrix<f64>> {
        let fm = FeatureMatrix::new(m, 1, UnitKind::Word)?;
        let down = lanczos_downsample(&fm, &timeline, cfg.trs, cfg.tr_seconds, &LanczosConfig::default())?;
        convolve_hrf(down.features.values())
    };
    let property_tr = to_tr(property_drive)?;
    let background_tr = to_tr(background.clone())?;
    let cp = cfg.brain_coupling.sqrt();
    let cb = (1.0 - cfg.brain_coupling).sqrt();

    let mut responses = Vec::with_capacity(cfg.n_subjects);
    for s in 0..cfg.n_subjects {
        let wp = gaussian(d, cfg.voxels, derive_indexed(cfg.seed, "subject-property", s as u64));
        let wb = gaussian(d, cfg.voxels, derive_indexed(cfg.seed, "subject-background", s as u64));
        let sp = zscore_columns(&(&property_tr * wp))?.values;
        let sb = zscore_columns(&(&background_tr * wb))?.values;
        let noise = subject_noise(cfg, s)?;
        let y = sp * cp + sb * cb + noise * cfg.brain_noise_sd;
        responses.push(ResponseMatrix::new(y, format!("sub-{:02}", s + 1), cfg.tr_seconds)?);
    }

    let parcels: Vec<&str> = DEFAULT_ROIS
        .iter()
        .flat_map(|(_, ps)| ps.iter().copied())
        .chain(["SFL", "V1", "V2", "V3", "V4"])
        .collect();
    let atlas = AtlasMap::new(
        (0..cfg.voxels).map(|v| parcels[v % parcels.len()].to_string()).collect(),
        None,
    )?;

    Ok(SynthDataset {
        features,
        labels,
        timeline,
        responses,
        atlas,
        directions,
    })
}

/// Least-squares residuals of `W` on the label column (plus a constant
/// column when `intercept`), via the SVD pseudoinverse of the design.
pub fn ols_residual_oracle(w: &FeatureMatrix, labels: &[usize], intercept: bool) -> Result<FeatureMatrix> {
    if labels.len() != w.rows() {
        return Err(Error::dims(format!("{} labels for {} rows", labels.len(), w.rows())));
    }
    let cols = 1 + usize::from(intercept);
    let design = DMatrix::from_fn(labels.len(), cols, |r, c| {
        if c == 0 {
            labels[r] as f64
        } else {
            1.0
        }
    });
    let pinv = design
        .clone()
        .svd(true, true)
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::invalid(e.to_string()))?;
    let fitted = &design * (pinv * w.values());
    w.with_values(w.values() - fitted)
}

/// Textbook two-pass Pearson correlation.
pub fn naive_pearson_oracle(y: &[f64], yhat: &[f64]) -> Option<f64> {
    let n = y.len() as f64;
    let my = y.iter().sum::<f64>() / n;
    let mh = yhat.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut dy = 0.0;
    let mut dh = 0.0;
    for (a, b) in y.iter().zip(yhat) {
        num += (a - my) * (b - mh);
        dy += (a - my) * (a - my);
        dh += (b - mh) * (b - mh);
    }
    if dy == 0.0 || dh == 0.0 {
        None
    } else {
        Some(num / (dy.sqrt() * dh.sqrt()))
    }
}

/// Benjamini–Hochberg by definition: the largest k with at least k p-values
/// at or below k·q/m, then reject every p-value at or below that threshold.
pub fn naive_bh_oracle(pvals: &[f64], q: f64) -> Vec<bool> {
    let m = pvals.len();
    let mut best = 0;
    for k in 1..=m {
        let threshold = k as f64 * q / m as f64;
        let count = pvals.iter().filter(|&&p| p <= threshold).count();
        if count >= k {
            best = k;
        }
    }
    if best == 0 {
        return vec![false; m];
    }
    let threshold = best as f64 * q / m as f64;
    pvals.iter().map(|&p| p <= threshold).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probing::{probe_accuracy, train_test_split};

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            n_words: 600,
            dims: 16,
            n_layers: 2,
            n_subjects: 2,
            trs: 120,
            voxels: 20,
            ..SynthConfig::desk(seed)
        }
        .with_uniform_strength(3.0)
    }

    #[test]
    fn same_seed_same_dataset() {
        let a = generate_dataset(&small(1)).unwrap();
        let b = generate_dataset(&small(1)).unwrap();
        assert_eq!(a.features, b.features);
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.responses, b.responses);
        let c = generate_dataset(&small(2)).unwrap();
        assert_ne!(a.features[0], c.features[0]);
    }

    #[test]
    fn shapes_follow_config() {
        let cfg = small(3);
        let ds = generate_dataset(&cfg).unwrap();
        assert_eq!(ds.features.len(), 2);
        assert_eq!(ds.features[0].rows(), 600);
        assert_eq!(ds.labels.tasks(), 6);
        assert_eq!(ds.labels.class_counts(), &[3, 3, 2, 2, 2, 2]);
        assert_eq!(ds.responses[1].values().shape(), (120, 20));
        assert_eq!(ds.atlas.voxels(), 20);
        let dtd = ds.directions.tr_mul(&ds.directions);
        assert!((dtd - DMatrix::identity(6, 6)).amax() < 1e-12);
    }

    #[test]
    fn planted_signal_is_decodable_and_absent_signal_is_not() {
        let strong = generate_dataset(&small(4).with_uniform_strength(5.0)).unwrap();
        let none = generate_dataset(&small(4).with_uniform_strength(0.0)).unwrap();
        let (train, test) = train_test_split(600, 0.25, 1);
        for t in 0..6 {
            let y = strong.labels.column(t);
            let acc = probe_accuracy(strong.features[0].values(), y, &train, &test, None).unwrap();
            assert!(acc > 90.0, "task {t}: {acc}");
            let test_y: Vec<usize> = test.iter().map(|&i| y[i]).collect();
            let chance = crate::annotation::chance_rate(&test_y);
            let acc0 = probe_accuracy(none.features[0].values(), y, &train, &test, None).unwrap();
            assert!((acc0 - chance).abs() <= 10.0, "task {t}: {acc0} vs {chance}");
        }
    }

    #[test]
    fn oracle_examples() {
        let up = naive_pearson_oracle(&[0.0, 1.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
        assert!((up - 1.0).abs() < 1e-12);
        let down = naive_pearson_oracle(&[0.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((down + 1.0).abs() < 1e-12);
        assert_eq!(naive_pearson_oracle(&[1.0, 1.0], &[0.0, 1.0]), None);
        assert!(naive_bh_oracle(&[], 0.05).is_empty());
        assert_eq!(naive_bh_oracle(&[0.04], 0.05), vec![true]);
    }

    #[test]
    fn features_in_label_span_leave_no_residual() {
        let labels = vec![0usize, 1, 2, 1, 0];
        let w = FeatureMatrix::new(
            DMatrix::from_fn(5, 2, |r, c| (c + 1) as f64 * labels[r] as f64),
            1,
            UnitKind::Word,
        )
        .unwrap();
        let r = ols_residual_oracle(&w, &labels, false).unwrap();
        assert!(r.values().amax() < 1e-12);
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = small(5);
        cfg.signal_strength.pop();
        assert!(generate_dataset(&cfg).is_err());
        let cfg = SynthConfig { n_tasks: 20, dims: 4, ..small(5) };
        assert!(cfg.validate().is_err());
    }
}
