//! Linear probing classifiers: multinomial logistic regression trained by
//! full-batch accelerated gradient descent with backtracking.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::data::{check_finite, FeatureMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel {
    /// dims × classes
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub l2: f64,
    pub classes: usize,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            max_iterations: 500,
            gradient_tolerance: 1e-6,
        }
    }
}

/// `1 / n`, used when no probe regularization is configured.
pub fn default_l2(n: usize) -> f64 {
    1.0 / n.max(1) as f64
}

pub fn train_probe(x: &FeatureMatrix, y: &[usize], l2: f64) -> Result<ProbeModel> {
    train_logistic(x.values(), y, l2, TrainOptions::default())
}

struct Problem<'a> {
    x: &'a DMatrix<f64>,
    xt: DMatrix<f64>,
    y: &'a [usize],
    classes: usize,
    l2: f64,
}

impl Problem<'_> {
    fn dims(&self) -> usize {
        self.x.ncols()
    }

    fn split<'p>(&self, params: &'p DVector<f64>) -> (DMatrix<f64>, &'p [f64]) {
        let d = self.dims();
        let k = self.classes;
        let w = DMatrix::from_column_slice(d, k, &params.as_slice()[..d * k]);
        (w, &params.as_slice()[d * k..])
    }

    /// Row-wise softmax probabilities and the mean negative log-likelihood.
    fn forward(&self, params: &DVector<f64>) -> (DMatrix<f64>, f64) {
        let (w, b) = self.split(params);
        let mut logits = self.x * &w;
        let n = self.x.nrows();
        let mut nll = 0.0;
        for i in 0..n {
            let mut row_max = f64::NEG_INFINITY;
            for c in 0..self.classes {
                logits[(i, c)] += b[c];
                row_max = row_max.max(logits[(i, c)]);
            }
            let mut sum = 0.0;
            for c in 0..self.classes {
                let e = (logits[(i, c)] - row_max).exp();
                logits[(i, c)] = e;
                sum += e;
            }
            for c in 0..self.classes {
                logits[(i, c)] /= sum;
            }
            nll -= logits[(i, self.y[i])].max(f64::MIN_POSITIVE).ln();
        }
        (logits, nll / n as f64)
    }

    fn objective(&self, params: &DVector<f64>) -> f64 {
        let (_, nll) = self.forward(params);
        let dk = self.dims() * self.classes;
        nll + self.l2 * params.rows(0, dk).norm_squared()
    }

    fn objective_and_gradient(&self, params: &DVector<f64>) -> (f64, DVector<f64>) {
        let (mut probs, nll) = self.forward(params);
        let n = self.x.nrows() as f64;
        for (i, &yi) in self.y.iter().enumerate() {
            probs[(i, yi)] -= 1.0;
        }
        probs /= n;
        let d = self.dims();
        let k = self.classes;
        let (w, _) = self.split(params);
        let gw = &self.xt * &probs + &w * (2.0 * self.l2);
        let mut grad = DVector::zeros(d * k + k);
        grad.rows_mut(0, d * k).copy_from_slice(gw.as_slice());
        for c in 0..k {
            grad[d * k + c] = probs.column(c).sum();
        }
        let obj = nll + self.l2 * w.norm_squared();
        (obj, grad)
    }
}

/// Fit a multinomial logistic model from zero initialization. Deterministic.
/// Returns [`Error::Diverged`] if the objective stops being finite.
pub fn train_logistic(
    x: &DMatrix<f64>,
    y: &[usize],
    l2: f64,
    opts: TrainOptions,
) -> Result<ProbeModel> {
    if y.len() != x.nrows() {
        return Err(Error::dims(format!("{} labels for {} rows", y.len(), x.nrows())));
    }
    if !(l2 >= 0.0 && l2.is_finite()) {
        return Err(Error::invalid("l2 must be non-negative"));
    }
    check_finite(x)?;
    let classes = y.iter().max().map_or(0, |m| m + 1);
    let mut present = vec![false; classes];
    y.iter().for_each(|&c| present[c] = true);
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::invalid("probe needs at least 2 classes present"));
    }

    let problem = Problem {
        x,
        xt: x.transpose(),
        y,
        classes,
        l2,
    };
    let size = x.ncols() * classes + classes;
    let mut current = DVector::<f64>::zeros(size);
    let mut current_obj = problem.objective(&current);
    let mut momentum_point = current.clone();
    let mut t = 1.0f64;
    let mut lipschitz = 1.0f64;
    let mut converged = false;
    let mut iterations = 0;

    for it in 0..opts.max_iterations {
        iterations = it + 1;
        let (f_y, g_y) = problem.objective_and_gradient(&momentum_point);
        if !f_y.is_finite() {
            return Err(Error::Diverged { iteration: it });
        }
        let g_norm2 = g_y.norm_squared();
        if g_norm2.sqrt() <= opts.gradient_tolerance {
            current = momentum_point;
            current_obj = f_y;
            converged = true;
            break;
        }
        // backtracking on the local Lipschitz estimate
        let (next, f_next) = loop {
            let candidate = &momentum_point - &g_y * (1.0 / lipschitz);
            let f_c = problem.objective(&candidate);
            if f_c.is_finite() && f_c <= f_y - 0.5 * g_norm2 / lipschitz + 1e-15 * f_y.abs() {
                break (candidate, f_c);
            }
            lipschitz *= 2.0;
            if lipschitz > 1e300 {
                return Err(Error::Diverged { iteration: it });
            }
        };
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        if f_next > current_obj {
            // adaptive restart
            momentum_point = next.clone();
            t = 1.0;
        } else {
            momentum_point = &next + (&next - &current) * ((t - 1.0) / t_next);
            t = t_next;
        }
        current = next;
        current_obj = f_next;
        lipschitz *= 0.9;
    }
    if !current_obj.is_finite() {
        return Err(Error::Diverged {
            iteration: iterations,
        });
    }

    let (weights, bias) = problem.split(&current);
    let bias = DVector::from_column_slice(bias);
    Ok(ProbeModel {
        weights,
        bias,
        l2,
        classes,
        iterations,
        converged,
    })
}

impl ProbeModel {
    pub fn dims(&self) -> usize {
        self.weights.nrows()
    }

    pub fn scores(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.dims() {
            return Err(Error::dims(format!(
                "probe expects {} dims, got {}",
                self.dims(),
                x.ncols()
            )));
        }
        let mut s = x * &self.weights;
        for mut row in s.row_iter_mut() {
            row += self.bias.transpose();
        }
        Ok(s)
    }

    /// Argmax class per row; ties go to the lowest class index.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<usize>> {
        let s = self.scores(x)?;
        Ok(s.row_iter()
            .map(|row| {
                let mut best = 0;
                for c in 1..row.len() {
                    if row[c] > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect())
    }

    /// Mean log-likelihood of `y` under the model.
    pub fn log_likelihood(&self, x: &DMatrix<f64>, y: &[usize]) -> Result<f64> {
        let s = self.scores(x)?;
        let mut total = 0.0;
        for (row, &yi) in s.row_iter().zip(y) {
            let m = row.max();
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            total += row[yi] - lse;
        }
        Ok(total / y.len() as f64)
    }
}

/// Percentage of rows classified correctly.
pub fn evaluate_probe(model: &ProbeModel, x: &FeatureMatrix, y: &[usize]) -> Result<f64> {
    accuracy(model, x.values(), y)
}

pub fn accuracy(model: &ProbeModel, x: &DMatrix<f64>, y: &[usize]) -> Result<f64> {
    if y.len() != x.nrows() {
        return Err(Error::dims(format!("{} labels for {} rows", y.len(), x.nrows())));
    }
    if y.is_empty() {
        return Err(Error::invalid("accuracy of an empty set"));
    }
    let pred = model.predict(x)?;
    let correct = pred.iter().zip(y).filter(|(p, t)| p == t).count();
    Ok(100.0 * correct as f64 / y.len() as f64)
}

/// Deterministic train/test split of `n` rows: a seeded shuffle, the first
/// `test_fraction` of which is held out. Both halves are returned sorted.
pub fn train_test_split(n: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut crate::seed::rng(seed));
    let n_test = ((n as f64) * test_fraction).round() as usize;
    let mut test = idx[..n_test].to_vec();
    let mut train = idx[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    (train, test)
}

/// Train/test split that holds out `test_fraction` of every class, so both
/// halves share the label distribution up to rounding.
pub fn stratified_split(labels: &[usize], test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    use rand::seq::SliceRandom;
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut rng = crate::seed::rng(seed);
    let mut train = Vec::with_capacity(labels.len());
    let mut test = Vec::new();
    for mut idx in by_class {
        idx.shuffle(&mut rng);
        let n_test = ((idx.len() as f64) * test_fraction).round() as usize;
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    test.sort_unstable();
    train.sort_unstable();
    (train, test)
}

pub fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    m.select_rows(rows)
}

/// One line of a probing results table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeRecord {
    pub layer: u32,
    pub task: String,
    /// `before`, `after`, or `after_other:<removed task>`
    pub condition: String,
    pub accuracy: f64,
    pub chance: f64,
}

/// Train on `train` rows, evaluate on `test` rows.
pub fn probe_accuracy(
    x: &DMatrix<f64>,
    y: &[usize],
    train: &[usize],
    test: &[usize],
    l2: Option<f64>,
) -> Result<f64> {
    let xtr = x.select_rows(train);
    let ytr: Vec<usize> = train.iter().map(|&i| y[i]).collect();
    let model = train_logistic(
        &xtr,
        &ytr,
        l2.unwrap_or_else(|| default_l2(train.len())),
        TrainOptions::default(),
    )?;
    let xte = x.select_rows(test);
    let yte: Vec<usize> = test.iter().map(|&i| y[i]).collect();
    accuracy(&model, &xte, &yte)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stratified_split_keeps_class_shares() {
        let labels: Vec<usize> = (0..1000).map(|i| if i % 10 < 6 { 0 } else if i % 10 < 9 { 1 } else { 2 }).collect();
        let (train, test) = stratified_split(&labels, 0.25, 3);
        assert_eq!(train.len() + test.len(), labels.len());
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert!(all.iter().enumerate().all(|(i, &v)| i == v));
        let count = |rows: &[usize], c: usize| rows.iter().filter(|&&i| labels[i] == c).count();
        assert_eq!([count(&test, 0), count(&test, 1), count(&test, 2)], [150, 75, 25]);
        assert_eq!(stratified_split(&labels, 0.25, 3), (train, test));
    }
    use crate::annotation::chance_rate;
    use crate::data::UnitKind;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn blobs(n: usize, seed: u64) -> (DMatrix<f64>, Vec<usize>) {
        let mut rng = crate::seed::rng(seed);
        let mut x = DMatrix::zeros(n, 2);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % 2;
            let center = if c == 0 { -3.0 } else { 3.0 };
            x[(i, 0)] = center + 0.5 * rng.sample::<f64, _>(StandardNormal);
            x[(i, 1)] = center + 0.5 * rng.sample::<f64, _>(StandardNormal);
            y.push(c);
        }
        (x, y)
    }

    #[test]
    fn separable_blobs_are_fit_exactly() {
        let (x, y) = blobs(200, 1);
        let fm = FeatureMatrix::new(x, 1, UnitKind::Word).unwrap();
        let m = train_probe(&fm, &y, default_l2(200)).unwrap();
        assert_eq!(evaluate_probe(&m, &fm, &y).unwrap(), 100.0);
    }

    #[test]
    fn training_is_bit_deterministic() {
        let (x, y) = blobs(100, 2);
        let a = train_logistic(&x, &y, 0.01, TrainOptions::default()).unwrap();
        let b = train_logistic(&x, &y, 0.01, TrainOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn independent_labels_stay_near_chance() {
        // permutation null: labels drawn without regard to features
        let n = 2000;
        let mut rng = crate::seed::rng(3);
        let x = DMatrix::from_fn(n, 16, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let (train, test) = train_test_split(n, 0.25, 9);
        let acc = probe_accuracy(&x, &y, &train, &test, None).unwrap();
        let test_y: Vec<usize> = test.iter().map(|&i| y[i]).collect();
        let chance = chance_rate(&test_y);
        assert!((acc - chance).abs() <= 5.0, "acc {acc} chance {chance}");
    }

    #[test]
    fn always_class_zero_model() {
        let m = ProbeModel {
            weights: DMatrix::zeros(1, 2),
            bias: DVector::from_vec(vec![1.0, 0.0]),
            l2: 0.0,
            classes: 2,
            iterations: 0,
            converged: true,
        };
        let x = DMatrix::from_element(3, 1, 0.3);
        let acc = accuracy(&m, &x, &[0, 0, 1]).unwrap();
        assert!((acc - 66.666_666).abs() < 1e-4);
    }

    #[test]
    fn ties_go_to_lowest_class() {
        let m = ProbeModel {
            weights: DMatrix::zeros(1, 3),
            bias: DVector::from_vec(vec![0.0, 1.0, 1.0]),
            l2: 0.0,
            classes: 3,
            iterations: 0,
            converged: true,
        };
        assert_eq!(m.predict(&DMatrix::zeros(1, 1)).unwrap(), vec![1]);
    }

    #[test]
    fn single_class_and_non_finite_rejected() {
        let x = DMatrix::from_element(3, 1, 1.0);
        assert!(train_logistic(&x, &[1, 1, 1], 0.1, TrainOptions::default()).is_err());
        let mut bad = x.clone();
        bad[(0, 0)] = f64::INFINITY;
        assert!(train_logistic(&bad, &[0, 1, 1], 0.1, TrainOptions::default()).is_err());
    }

    #[test]
    fn dim_mismatch_on_evaluate() {
        let (x, y) = blobs(20, 4);
        let m = train_logistic(&x, &y, 0.1, TrainOptions::default()).unwrap();
        assert!(accuracy(&m, &DMatrix::zeros(20, 3), &y).is_err());
    }

    #[test]
    fn stronger_l2_never_raises_training_likelihood() {
        let mut rng = crate::seed::rng(5);
        let n = 120;
        let x = DMatrix::from_fn(n, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y: Vec<usize> = (0..n)
            .map(|i| usize::from(x[(i, 0)] + 0.8 * rng.sample::<f64, _>(StandardNormal) > 0.0))
            .collect();
        let opts = TrainOptions {
            max_iterations: 5000,
            gradient_tolerance: 1e-9,
        };
        let mut prev = f64::INFINITY;
        for l2 in [0.0, 0.01, 0.1, 1.0] {
            let m = train_logistic(&x, &y, l2, opts).unwrap();
            assert!(m.converged, "l2={l2}");
            let ll = m.log_likelihood(&x, &y).unwrap();
            assert!(ll <= prev + 1e-9, "l2={l2}: {ll} > {prev}");
            prev = ll;
        }
    }

    #[test]
    fn column_permutation_invariance() {
        let mut rng = crate::seed::rng(6);
        let n = 200;
        let x = DMatrix::from_fn(n, 4, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y: Vec<usize> = (0..n).map(|i| usize::from(x[(i, 1)] - x[(i, 3)] > 0.3)).collect();
        let perm = [2usize, 0, 3, 1];
        let xp = DMatrix::from_fn(n, 4, |r, c| x[(r, perm[c])]);
        let (train, test) = train_test_split(n, 0.3, 1);
        let a = probe_accuracy(&x, &y, &train, &test, Some(0.01)).unwrap();
        let b = probe_accuracy(&xp, &y, &train, &test, Some(0.01)).unwrap();
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
}
