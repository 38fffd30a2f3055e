use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};

/// How class labels enter the regression design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelEncoding {
    /// The class index itself is the regressor (one column per task).
    #[default]
    Scalar,
    /// One indicator column per class (the reference class is dropped when
    /// an intercept is fitted).
    OneHot,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemovalOptions {
    pub lambda: f64,
    pub encoding: LabelEncoding,
    /// Fit an unpenalized intercept alongside θ.
    pub intercept: bool,
}

impl Default for RemovalOptions {
    fn default() -> Self {
        RemovalOptions {
            lambda: 0.0,
            encoding: LabelEncoding::Scalar,
            intercept: true,
        }
    }
}

/// Fitted map from label design to representations.
#[derive(Debug, Clone, PartialEq)]
pub struct RemoverModel {
    /// design columns × dims
    pub theta: DMatrix<f64>,
    /// Per-dimension offset; zero when no intercept was fitted.
    pub offset: DVector<f64>,
    pub lambda: f64,
    pub encoding: LabelEncoding,
    pub intercept: bool,
    /// Class count per removed task, fixing the one-hot layout.
    pub classes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemovalResult {
    pub remover: RemoverModel,
    pub residuals: FeatureMatrix,
}

impl RemovalResult {
    /// `max |Tᵀr − λθ|` for the design the model was fitted with.
    pub fn identity_residual(&self, label_columns: &[&[usize]]) -> Result<f64> {
        let t = design_matrix(label_columns, &self.remover)?;
        Ok(identity_residual(
            &t,
            self.residuals.values(),
            &self.remover.theta,
            self.remover.lambda,
        ))
    }
}

pub fn identity_residual(
    design: &DMatrix<f64>,
    residuals: &DMatrix<f64>,
    theta: &DMatrix<f64>,
    lambda: f64,
) -> f64 {
    (design.transpose() * residuals - theta * lambda).amax()
}

fn design_matrix(columns: &[&[usize]], model: &RemoverModel) -> Result<DMatrix<f64>> {
    build_design(columns, &model.classes, model.encoding, model.intercept)
}

/// Label design `T`: scalar columns, or indicator blocks per task.
pub fn build_design(
    columns: &[&[usize]],
    classes: &[usize],
    encoding: LabelEncoding,
    intercept: bool,
) -> Result<DMatrix<f64>> {
    if columns.is_empty() {
        return Err(Error::NoTasks);
    }
    let n = columns[0].len();
    if columns.iter().any(|c| c.len() != n) {
        return Err(Error::dims("label columns differ in length"));
    }
    match encoding {
        LabelEncoding::Scalar => Ok(DMatrix::from_fn(n, columns.len(), |r, c| {
            columns[c][r] as f64
        })),
        LabelEncoding::OneHot => {
            let skip = usize::from(intercept);
            let widths: Vec<usize> = classes.iter().map(|k| k.saturating_sub(skip)).collect();
            let total: usize = widths.iter().sum();
            let mut t = DMatrix::zeros(n, total);
            let mut start = 0;
            for ((col, &k), &w) in columns.iter().zip(classes).zip(&widths) {
                for (r, &label) in col.iter().enumerate() {
                    if label >= k {
                        return Err(Error::invalid(format!(
                            "label {label} outside the {k} fitted classes"
                        )));
                    }
                    if label >= skip {
                        t[(r, start + label - skip)] = 1.0;
                    }
                }
                start += w;
            }
            Ok(t)
        }
    }
}

fn column_means(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows() as f64;
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() / n))
}

fn center(m: &DMatrix<f64>, means: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (mut col, mean) in out.column_iter_mut().zip(means.iter()) {
        col.add_scalar_mut(-mean);
    }
    out
}

/// θ = (TᵀT + λI)⁻¹TᵀW via a Cholesky factorization, with T and W centered
/// first when an intercept is fitted.
fn solve_design(
    design: &DMatrix<f64>,
    w: &DMatrix<f64>,
    opts: &RemovalOptions,
    classes: Vec<usize>,
) -> Result<RemoverModel> {
    if !(opts.lambda >= 0.0 && opts.lambda.is_finite()) {
        return Err(Error::invalid("lambda must be a non-negative finite number"));
    }
    if design.nrows() != w.nrows() {
        return Err(Error::dims(format!(
            "{} label rows for {} feature rows",
            design.nrows(),
            w.nrows()
        )));
    }
    let (t, wc, t_means, w_means) = if opts.intercept {
        let tm = column_means(design);
        let wm = column_means(w);
        (center(design, &tm), center(w, &wm), tm, wm)
    } else {
        (
            design.clone(),
            w.clone(),
            DVector::zeros(design.ncols()),
            DVector::zeros(w.ncols()),
        )
    };
    let k = t.ncols();
    let tt = t.transpose();
    let mut gram = &tt * &t;
    // Singularity is judged on the unregularized Gram matrix so that λ = 0
    // with a rank-deficient design is always reported, never solved.
    let eig = gram.clone().symmetric_eigen();
    let max_eig = eig.eigenvalues.amax();
    let min_eig = eig.eigenvalues.min();
    if opts.lambda == 0.0 && (max_eig == 0.0 || min_eig <= 1e-12 * max_eig * k as f64) {
        return Err(Error::SingularDesign);
    }
    for i in 0..k {
        gram[(i, i)] += opts.lambda;
    }
    let rhs = &tt * &wc;
    let chol = gram.clone().cholesky().ok_or_else(|| Error::NotPositiveDefinite {
        condition: (max_eig + opts.lambda) / (min_eig + opts.lambda),
    })?;
    let theta = chol.solve(&rhs);
    let offset = if opts.intercept {
        w_means - theta.tr_mul(&t_means)
    } else {
        DVector::zeros(w.ncols())
    };
    Ok(RemoverModel {
        theta,
        offset,
        lambda: opts.lambda,
        encoding: opts.encoding,
        intercept: opts.intercept,
        classes,
    })
}

fn class_counts(columns: &[&[usize]]) -> Vec<usize> {
    columns
        .iter()
        .map(|c| c.iter().max().map_or(0, |m| m + 1))
        .collect()
}

/// Fit the ridge map from one task's labels to the representations.
pub fn fit_property_regressor(
    labels: &[usize],
    w: &FeatureMatrix,
    opts: &RemovalOptions,
) -> Result<RemoverModel> {
    fit_columns(&[labels], w.values(), opts)
}

/// Fit one stacked map for several tasks without residualizing.
pub fn fit_multiple_regressor(
    label_columns: &[&[usize]],
    w: &FeatureMatrix,
    opts: &RemovalOptions,
) -> Result<RemoverModel> {
    if label_columns.is_empty() {
        return Err(Error::NoTasks);
    }
    fit_columns(label_columns, w.values(), opts)
}

pub(crate) fn fit_columns(
    columns: &[&[usize]],
    w: &DMatrix<f64>,
    opts: &RemovalOptions,
) -> Result<RemoverModel> {
    let classes = class_counts(columns);
    let design = build_design(columns, &classes, opts.encoding, opts.intercept)?;
    solve_design(&design, w, opts, classes)
}

/// r = W − Tθ − offset.
pub fn residualize(w: &FeatureMatrix, labels: &[usize], model: &RemoverModel) -> Result<RemovalResult> {
    residualize_columns(w, &[labels], model)
}

pub fn residualize_columns(
    w: &FeatureMatrix,
    columns: &[&[usize]],
    model: &RemoverModel,
) -> Result<RemovalResult> {
    let design = design_matrix(columns, model)?;
    if design.ncols() != model.theta.nrows() {
        return Err(Error::dims(format!(
            "design has {} columns, model expects {}",
            design.ncols(),
            model.theta.nrows()
        )));
    }
    if w.cols() != model.theta.ncols() || design.nrows() != w.rows() {
        return Err(Error::dims(format!(
            "features {}x{} do not match model ({} dims) and labels ({} rows)",
            w.rows(),
            w.cols(),
            model.theta.ncols(),
            design.nrows()
        )));
    }
    let mut r = w.values() - &design * &model.theta;
    for mut row in r.row_iter_mut() {
        row -= model.offset.transpose();
    }
    Ok(RemovalResult {
        remover: model.clone(),
        residuals: w.with_values(r)?,
    })
}

/// Fit and residualize in one step.
pub fn remove_property(
    w: &FeatureMatrix,
    labels: &[usize],
    opts: &RemovalOptions,
) -> Result<RemovalResult> {
    let model = fit_property_regressor(labels, w, opts)?;
    residualize(w, labels, &model)
}

/// Joint removal of several tasks with one stacked design.
pub fn remove_multiple(
    w: &FeatureMatrix,
    label_columns: &[&[usize]],
    opts: &RemovalOptions,
) -> Result<RemovalResult> {
    if label_columns.is_empty() {
        return Err(Error::NoTasks);
    }
    let model = fit_columns(label_columns, w.values(), opts)?;
    residualize_columns(w, label_columns, &model)
}
