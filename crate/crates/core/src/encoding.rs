//! Voxelwise encoding models: banded ridge fits, predictions, and
//! cross-validated brain alignment scored by Pearson correlation.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{FeatureMatrix, ResponseMatrix, DEFAULT_TR_SECONDS};
use crate::error::{Error, Result};
use crate::temporal::zscore_columns;

/// Sample Pearson correlation, computed in one streaming pass.
/// `None` when either input has zero variance.
pub fn pearson(y: &[f64], yhat: &[f64]) -> Result<Option<f64>> {
    if y.len() != yhat.len() {
        return Err(Error::dims(format!("pearson on lengths {} and {}", y.len(), yhat.len())));
    }
    if y.len() < 2 {
        return Err(Error::invalid("pearson needs at least 2 points"));
    }
    let (mut mx, mut my) = (0.0f64, 0.0f64);
    let (mut sxx, mut syy, mut sxy) = (0.0f64, 0.0f64, 0.0f64);
    for (i, (&a, &b)) in y.iter().zip(yhat).enumerate() {
        let n = (i + 1) as f64;
        let dx = a - mx;
        let dy = b - my;
        mx += dx / n;
        my += dy / n;
        sxx += dx * (a - mx);
        syy += dy * (b - my);
        sxy += dx * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)))
}

/// Pearson per column pair.
pub fn column_pearson(y: &DMatrix<f64>, yhat: &DMatrix<f64>) -> Result<Vec<Option<f64>>> {
    if y.shape() != yhat.shape() {
        return Err(Error::dims(format!("{:?} vs {:?}", y.shape(), yhat.shape())));
    }
    y.column_iter()
        .zip(yhat.column_iter())
        .map(|(a, b)| pearson(a.as_slice(), b.as_slice()))
        .collect()
}

/// Contiguous column groups sharing one ridge penalty.
pub fn validate_bands(spans: &[Range<usize>], cols: usize) -> Result<()> {
    if spans.is_empty() {
        return Err(Error::invalid("at least one band is required"));
    }
    let mut next = 0;
    for s in spans {
        if s.start != next || s.end <= s.start {
            return Err(Error::invalid(format!(
                "bands must partition columns 0..{cols} in order; bad span {s:?}"
            )));
        }
        next = s.end;
    }
    if next != cols {
        return Err(Error::invalid(format!("bands cover 0..{next}, features have {cols} columns")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    /// features × voxels
    pub weights: DMatrix<f64>,
    pub lambda_per_band: Vec<f64>,
    pub band_spans: Vec<Range<usize>>,
}

/// β = (XᵀX + Λ)⁻¹XᵀY, Λ diagonal with each band's λ on its columns.
pub fn fit_ridge_encoder(
    x: &FeatureMatrix,
    y: &ResponseMatrix,
    lambda_per_band: &[f64],
    band_spans: &[Range<usize>],
) -> Result<EncoderModel> {
    let weights = banded_ridge(x.values(), y.values(), lambda_per_band, band_spans)?;
    Ok(EncoderModel {
        weights,
        lambda_per_band: lambda_per_band.to_vec(),
        band_spans: band_spans.to_vec(),
    })
}

pub fn banded_ridge(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    lambda_per_band: &[f64],
    band_spans: &[Range<usize>],
) -> Result<DMatrix<f64>> {
    if x.nrows() != y.nrows() {
        return Err(Error::dims(format!("{} feature rows vs {} TRs", x.nrows(), y.nrows())));
    }
    validate_bands(band_spans, x.ncols())?;
    if lambda_per_band.len() != band_spans.len() {
        return Err(Error::dims(format!(
            "{} lambdas for {} bands",
            lambda_per_band.len(),
            band_spans.len()
        )));
    }
    if lambda_per_band.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
        return Err(Error::invalid("ridge penalties must be positive"));
    }
    let xt = x.transpose();
    let mut gram = &xt * x;
    for (span, &lambda) in band_spans.iter().zip(lambda_per_band) {
        for i in span.clone() {
            gram[(i, i)] += lambda;
        }
    }
    let rhs = &xt * y;
    match gram.clone().cholesky() {
        Some(chol) => Ok(chol.solve(&rhs)),
        None => {
            let eig = gram.symmetric_eigenvalues();
            let (lo, hi) = (eig.min(), eig.max());
            Err(Error::NotPositiveDefinite {
                condition: if lo > 0.0 { hi / lo } else { f64::INFINITY },
            })
        }
    }
}

pub fn predict_responses(model: &EncoderModel, x: &FeatureMatrix) -> Result<ResponseMatrix> {
    if x.cols() != model.weights.nrows() {
        return Err(Error::dims(format!(
            "model expects {} features, got {}",
            model.weights.nrows(),
            x.cols()
        )));
    }
    ResponseMatrix::new(x.values() * &model.weights, "predicted", DEFAULT_TR_SECONDS)
}

/// Which representation an alignment score was computed from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Condition {
    Before,
    After(String),
    AfterAll,
    RandomBaseline,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Before => f.write_str("before"),
            Condition::After(task) => write!(f, "after:{task}"),
            Condition::AfterAll => f.write_str("after_all"),
            Condition::RandomBaseline => f.write_str("random_baseline"),
        }
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "before" => Ok(Condition::Before),
            "after_all" => Ok(Condition::AfterAll),
            "random_baseline" => Ok(Condition::RandomBaseline),
            _ => s
                .strip_prefix("after:")
                .filter(|t| !t.is_empty())
                .map(|t| Condition::After(t.to_string()))
                .ok_or_else(|| Error::invalid(format!("unknown condition {s:?}"))),
        }
    }
}

impl Serialize for Condition {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Condition {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldScheme {
    #[default]
    ContiguousBlocks,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZscoreMode {
    /// Each split is standardized with its own statistics.
    #[default]
    PerSplit,
    /// Test splits reuse the training split's mean and deviation.
    TrainStatistics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub folds: usize,
    pub lambda_grid: Vec<f64>,
    pub fold_scheme: FoldScheme,
    pub inner_validation_fraction: f64,
    /// Column spans of each band; `None` is a single band over all columns.
    pub band_spans: Option<Vec<Range<usize>>>,
    pub zscore: ZscoreMode,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            folds: 4,
            lambda_grid: vec![0.1, 0.01, 0.001],
            fold_scheme: FoldScheme::ContiguousBlocks,
            inner_validation_fraction: 0.25,
            band_spans: None,
            zscore: ZscoreMode::PerSplit,
        }
    }
}

impl CvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::invalid("cross-validation needs at least 2 folds"));
        }
        if self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::invalid("lambda grid must be nonempty and positive"));
        }
        if !(self.inner_validation_fraction > 0.0 && self.inner_validation_fraction < 1.0) {
            return Err(Error::invalid("inner validation fraction must be in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentResult {
    pub subject_id: String,
    pub layer: u32,
    pub condition: Condition,
    /// Mean held-out correlation over folds, per voxel.
    pub per_voxel_r: Vec<Option<f64>>,
    /// Mean of the defined per-voxel values.
    pub per_subject_mean: f64,
    /// Voxel-mean correlation of each outer fold.
    pub fold_mean_r: Vec<f64>,
    /// Selected λ per outer fold, one entry per band.
    pub chosen_lambda: Vec<Vec<f64>>,
    pub undefined_voxels: usize,
}

impl AlignmentResult {
    pub fn with_condition(mut self, condition: Condition) -> Self {
        self.condition = condition;
        self
    }
}

pub(crate) fn mean_defined(values: &[Option<f64>]) -> Option<f64> {
    let (sum, n) = values
        .iter()
        .flatten()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// `folds` contiguous row blocks covering `0..n`.
pub fn contiguous_folds(n: usize, folds: usize) -> Result<Vec<Range<usize>>> {
    let blocks: Vec<Range<usize>> = (0..folds).map(|f| f * n / folds..(f + 1) * n / folds).collect();
    if let Some(b) = blocks.iter().find(|b| b.len() < 2) {
        return Err(Error::invalid(format!("fold {b:?} has fewer than 2 TRs")));
    }
    Ok(blocks)
}

/// Standardize a train/test pair according to `mode`.
fn standardize_pair(
    train: &DMatrix<f64>,
    test: &DMatrix<f64>,
    mode: ZscoreMode,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    match mode {
        ZscoreMode::PerSplit => Ok((zscore_columns(train)?.values, zscore_columns(test)?.values)),
        ZscoreMode::TrainStatistics => {
            let n = train.nrows() as f64;
            let mut tr = train.clone();
            let mut te = test.clone();
            for j in 0..train.ncols() {
                let mean = train.column(j).sum() / n;
                let sd = (train.column(j).map(|v| (v - mean).powi(2)).sum() / n).sqrt();
                let scale = if sd > 1e-12 * (1.0 + mean.abs()) { 1.0 / sd } else { 0.0 };
                tr.column_mut(j).apply(|v| *v = (*v - mean) * scale);
                te.column_mut(j).apply(|v| *v = (*v - mean) * scale);
            }
            Ok((tr, te))
        }
    }
}

/// Grids at most this long are solved with one Cholesky factorization per λ;
/// longer grids share one eigendecomposition.
const DIRECT_GRID_MAX: usize = 6;

/// Predictions for a whole λ grid on one train/test split.
enum GridSolver {
    /// One eigendecomposition serves every λ: pred(λ) = A·diag(1/(d+λ))·Cᵀ·Y.
    Spectral {
        test_basis: DMatrix<f64>,
        eigenvalues: DVector<f64>,
        train_basis: DMatrix<f64>,
    },
    /// One factorization of G + λI per λ, folded into a test × train map:
    /// pred(λ) = M(λ)·Y.
    Direct { maps: Vec<(f64, DMatrix<f64>)> },
    /// Banded penalties: one Cholesky solve per λ combination.
    Banded {
        x_train: DMatrix<f64>,
        x_test: DMatrix<f64>,
        spans: Vec<Range<usize>>,
    },
}

impl GridSolver {
    fn new(
        x_train: DMatrix<f64>,
        x_test: DMatrix<f64>,
        spans: Option<&[Range<usize>]>,
        lambdas: &[f64],
    ) -> Self {
        if let Some(spans) = spans.filter(|s| s.len() > 1) {
            return GridSolver::Banded {
                x_train,
                x_test,
                spans: spans.to_vec(),
            };
        }
        let (n, p) = x_train.shape();
        let dual = p > n;
        // primal works with XᵀX, dual with XXᵀ
        let gram = if dual {
            &x_train * x_train.transpose()
        } else {
            x_train.transpose() * &x_train
        };
        if lambdas.len() <= DIRECT_GRID_MAX {
            // dual: M = Xₜ·Xᵀ·(XXᵀ + λI)⁻¹; primal: M = Xₜ·(XᵀX + λI)⁻¹·Xᵀ
            let left = if dual {
                &x_test * x_train.transpose()
            } else {
                x_test.clone()
            };
            let maps: Option<Vec<_>> = lambdas
                .iter()
                .map(|&l| {
                    let mut g = gram.clone();
                    for i in 0..g.nrows() {
                        g[(i, i)] += l;
                    }
                    let chol = g.cholesky()?;
                    // G is symmetric, so M = (G⁻¹·leftᵀ)ᵀ
                    let solved = chol.solve(&left.transpose()).transpose();
                    Some((l, if dual { solved } else { solved * x_train.transpose() }))
                })
                .collect();
            if let Some(maps) = maps {
                return GridSolver::Direct { maps };
            }
        }
        let eig = gram.symmetric_eigen();
        let eigenvalues = eig.eigenvalues.map(|v| v.max(0.0));
        if dual {
            // β = XᵀU(D+λ)⁻¹UᵀY
            GridSolver::Spectral {
                test_basis: &x_test * x_train.transpose() * &eig.eigenvectors,
                eigenvalues,
                train_basis: eig.eigenvectors,
            }
        } else {
            GridSolver::Spectral {
                test_basis: &x_test * &eig.eigenvectors,
                train_basis: &x_train * &eig.eigenvectors,
                eigenvalues,
            }
        }
    }

    /// Held-out predictions for each λ setting, in grid order.
    fn predict(&self, y_train: &DMatrix<f64>, grid: &[Vec<f64>]) -> Result<Vec<DMatrix<f64>>> {
        match self {
            GridSolver::Spectral {
                test_basis,
                eigenvalues,
                train_basis,
            } => {
                let projected = train_basis.transpose() * y_train;
                Ok(grid
                    .iter()
                    .map(|lambdas| {
                        let lambda = lambdas[0];
                        let mut scaled = projected.clone();
                        for (i, mut row) in scaled.row_iter_mut().enumerate() {
                            row *= 1.0 / (eigenvalues[i] + lambda);
                        }
                        test_basis * scaled
                    })
                    .collect())
            }
            GridSolver::Direct { maps } => grid
                .iter()
                .map(|lambdas| {
                    let (_, map) = maps
                        .iter()
                        .find(|(l, _)| *l == lambdas[0])
                        .ok_or_else(|| Error::invalid("λ outside the factored grid"))?;
                    Ok(map * y_train)
                })
                .collect(),
            GridSolver::Banded {
                x_train,
                x_test,
                spans,
            } => grid
                .iter()
                .map(|lambdas| Ok(x_test * banded_ridge(x_train, y_train, lambdas, spans)?))
                .collect(),
        }
    }
}

fn lambda_settings(grid: &[f64], bands: usize) -> Vec<Vec<f64>> {
    let mut settings = vec![Vec::new()];
    for _ in 0..bands {
        settings = settings
            .into_iter()
            .flat_map(|prefix| {
                grid.iter().map(move |&l| {
                    let mut s = prefix.clone();
                    s.push(l);
                    s
                })
            })
            .collect();
    }
    settings
}

/// Cross-validated alignment for one subject.
pub fn cross_validated_alignment(
    x: &FeatureMatrix,
    y: &ResponseMatrix,
    cfg: &CvConfig,
) -> Result<AlignmentResult> {
    Ok(cross_validated_alignment_many(x, &[y], cfg)?.remove(0))
}

/// Cross-validated alignment for several subjects sharing one stimulus.
/// Decompositions of the features are computed once per split and reused
/// across subjects and λ values; λ is selected per subject.
pub fn cross_validated_alignment_many(
    x: &FeatureMatrix,
    ys: &[&ResponseMatrix],
    cfg: &CvConfig,
) -> Result<Vec<AlignmentResult>> {
    cfg.validate()?;
    let n = x.rows();
    for y in ys {
        if y.trs() != n {
            return Err(Error::dims(format!(
                "subject {} has {} TRs, features have {n}",
                y.subject_id(),
                y.trs()
            )));
        }
    }
    let spans = cfg.band_spans.clone();
    if let Some(s) = &spans {
        validate_bands(s, x.cols())?;
    }
    let bands = spans.as_ref().map_or(1, Vec::len);
    let grid = lambda_settings(&cfg.lambda_grid, bands);
    let blocks = contiguous_folds(n, cfg.folds)?;
    let xv = x.values();

    let mut fold_r: Vec<Vec<Vec<Option<f64>>>> = vec![Vec::new(); ys.len()];
    let mut chosen: Vec<Vec<Vec<f64>>> = vec![Vec::new(); ys.len()];

    for test in &blocks {
        let train_rows: Vec<usize> = (0..n).filter(|r| !test.contains(r)).collect();
        let test_rows: Vec<usize> = test.clone().collect();
        let n_val = ((train_rows.len() as f64) * cfg.inner_validation_fraction).ceil() as usize;
        let split = train_rows.len() - n_val;
        if n_val < 2 || split < 2 {
            return Err(Error::invalid("too few TRs for the inner validation split"));
        }
        let (inner_rows, val_rows) = train_rows.split_at(split);

        // inner split: choose λ
        let (xi, xvl) = standardize_pair(
            &xv.select_rows(inner_rows),
            &xv.select_rows(val_rows),
            cfg.zscore,
        )?;
        let inner = GridSolver::new(xi, xvl, spans.as_deref(), &cfg.lambda_grid);
        let mut picks = Vec::with_capacity(ys.len());
        for y in ys {
            let (yi, yvl) = standardize_pair(
                &y.values().select_rows(inner_rows),
                &y.values().select_rows(val_rows),
                cfg.zscore,
            )?;
            let preds = inner.predict(&yi, &grid)?;
            let mut best = (0usize, f64::NEG_INFINITY);
            for (g, pred) in preds.iter().enumerate() {
                let score = mean_defined(&column_pearson(&yvl, pred)?).unwrap_or(f64::NEG_INFINITY);
                if score > best.1 {
                    best = (g, score);
                }
            }
            picks.push(best.0);
        }

        // outer split: refit on all training TRs with the chosen λ
        let (xtr, xte) = standardize_pair(
            &xv.select_rows(&train_rows),
            &xv.select_rows(&test_rows),
            cfg.zscore,
        )?;
        let outer = GridSolver::new(xtr, xte, spans.as_deref(), &cfg.lambda_grid);
        for (s, y) in ys.iter().enumerate() {
            let (ytr, yte) = standardize_pair(
                &y.values().select_rows(&train_rows),
                &y.values().select_rows(&test_rows),
                cfg.zscore,
            )?;
            let setting = grid[picks[s]].clone();
            let pred = outer.predict(&ytr, std::slice::from_ref(&setting))?.remove(0);
            fold_r[s].push(column_pearson(&yte, &pred)?);
            chosen[s].push(setting);
        }
    }

    Ok(ys
        .iter()
        .enumerate()
        .map(|(s, y)| {
            let voxels = y.voxels();
            let per_voxel_r: Vec<Option<f64>> = (0..voxels)
                .map(|v| {
                    let vals: Vec<Option<f64>> = fold_r[s].iter().map(|f| f[v]).collect();
                    mean_defined(&vals)
                })
                .collect();
            let undefined_voxels = per_voxel_r.iter().filter(|r| r.is_none()).count();
            AlignmentResult {
                subject_id: y.subject_id().to_string(),
                layer: x.layer_index(),
                condition: Condition::Before,
                per_subject_mean: mean_defined(&per_voxel_r).unwrap_or(f64::NAN),
                fold_mean_r: fold_r[s]
                    .iter()
                    .map(|f| mean_defined(f).unwrap_or(f64::NAN))
                    .collect(),
                chosen_lambda: chosen[s].clone(),
                per_voxel_r,
                undefined_voxels,
            }
        })
        .collect())
}
