//! Linear SVM on LOT embeddings and its evaluation.
//!
//! Training solves the dual of
//! `min ½‖w‖² + C Σ max(0, 1 − y_i (wᵀz_i + b))` (bias unregularized) by
//! sequential minimal optimization with second-order working-set selection.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stratified train/test partition. Each class contributes
/// `round(count · test_fraction)` test samples (at most `count − 1`).
/// Both index lists are sorted.
pub fn stratified_split(labels: &[u8], test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidInput(format!("test fraction {test_fraction} not in (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [0u8, 1u8] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "class {class} has {} members; stratified split needs at least 2",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let k = ((idx.len() as f64 * test_fraction).round() as usize).min(idx.len() - 1);
        test.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::InvalidInput("labels must be 0 or 1".into()));
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub c: f64,
    /// Maximal KKT violation at termination.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            c: 1.0,
            tol: 1e-6,
            max_iter: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub w: Vec<f64>,
    pub b: f64,
    pub c: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl SvmModel {
    pub fn p(&self) -> usize {
        self.w.len()
    }
}

/// Primal objective `½‖w‖² + C Σ hinge`.
pub fn primal_objective(w: &[f64], b: f64, z: &DMatrix<f64>, y: &[f64], c: f64) -> f64 {
    let reg: f64 = 0.5 * w.iter().map(|v| v * v).sum::<f64>();
    let wv = DVector::from_column_slice(w);
    let scores = z * wv;
    let hinge: f64 = scores.iter().zip(y).map(|(s, yi)| (1.0 - yi * (s + b)).max(0.0)).sum();
    reg + c * hinge
}

const TAU: f64 = 1e-12;

/// Trains on rows of `z` with labels in {−1, +1}.
pub fn train_linear_svm(z: &DMatrix<f64>, y: &[f64], params: &SvmParams) -> Result<SvmModel> {
    let (n, p) = z.shape();
    if y.len() != n {
        return Err(Error::Dimension(format!("{} labels for {n} samples", y.len())));
    }
    if n < 2 {
        return Err(Error::InvalidInput("SVM training needs at least 2 samples".into()));
    }
    if y.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::InvalidInput("SVM labels must be -1 or +1".into()));
    }
    if !y.contains(&1.0) || !y.contains(&-1.0) {
        return Err(Error::InvalidInput("SVM training needs both classes".into()));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite feature values".into()));
    }
    if !(params.c > 0.0) {
        return Err(Error::InvalidInput(format!("C must be positive, got {}", params.c)));
    }
    let c = params.c;
    let k = z * z.transpose();
    let q = |i: usize, j: usize| y[i] * y[j] * k[(i, j)];

    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let mut iterations = 0;
    let mut converged = false;

    let in_up = |a: f64, yi: f64| (yi > 0.0 && a < c) || (yi < 0.0 && a > 0.0);
    let in_low = |a: f64, yi: f64| (yi > 0.0 && a > 0.0) || (yi < 0.0 && a < c);

    while iterations < params.max_iter {
        // i: maximal violator in I_up.
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            if in_up(alpha[t], y[t]) && -y[t] * grad[t] > gmax {
                gmax = -y[t] * grad[t];
                i = t;
            }
        }
        // j: second-order selection in I_low.
        let mut gmin = f64::INFINITY;
        let mut j = usize::MAX;
        let mut best_obj = f64::INFINITY;
        for t in 0..n {
            if !in_low(alpha[t], y[t]) {
                continue;
            }
            let v = -y[t] * grad[t];
            gmin = gmin.min(v);
            if i != usize::MAX && v < gmax {
                let b_it = gmax - v;
                let a_it = (k[(i, i)] + k[(t, t)] - 2.0 * k[(i, t)]).max(TAU);
                let obj = -(b_it * b_it) / a_it;
                if obj < best_obj {
                    best_obj = obj;
                    j = t;
                }
            }
        }
        if i == usize::MAX || j == usize::MAX || gmax - gmin < params.tol {
            converged = true;
            break;
        }
        iterations += 1;

        let (ai_old, aj_old) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let quad = (q(i, i) + q(j, j) + 2.0 * q(i, j)).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (q(i, i) + q(j, j) - 2.0 * q(i, j)).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (dai, daj) = (alpha[i] - ai_old, alpha[j] - aj_old);
        for t in 0..n {
            grad[t] += q(t, i) * dai + q(t, j) * daj;
        }
    }

    // Bias from free vectors, else the midpoint of the feasible interval.
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut free_sum = 0.0;
    let mut n_free = 0;
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            free_sum += yg;
        }
    }
    let rho = if n_free > 0 { free_sum / n_free as f64 } else { (ub + lb) / 2.0 };

    let mut w = vec![0.0; p];
    for t in 0..n {
        let coef = alpha[t] * y[t];
        if coef != 0.0 {
            for (wk, zk) in w.iter_mut().zip(z.row(t).iter()) {
                *wk += coef * zk;
            }
        }
    }
    Ok(SvmModel {
        w,
        b: -rho,
        c,
        iterations,
        converged,
    })
}

/// `Z·w + b`.
pub fn decision_function(model: &SvmModel, z: &DMatrix<f64>) -> Result<Vec<f64>> {
    if z.ncols() != model.w.len() {
        return Err(Error::Dimension(format!(
            "features have {} columns, model expects {}",
            z.ncols(),
            model.w.len()
        )));
    }
    let w = DVector::from_column_slice(&model.w);
    Ok((z * w).iter().map(|s| s + model.b).collect())
}

/// Scores at or above zero predict the positive class.
pub fn predict(scores: &[f64]) -> Vec<u8> {
    scores.iter().map(|&s| u8::from(s >= 0.0)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `[[TN, FP], [FN, TP]]` (rows: true class, columns: predicted).
    pub confusion: [[usize; 2]; 2],
    pub negative: ClassMetrics,
    pub positive: ClassMetrics,
    pub accuracy: f64,
    /// Absent when the test set holds a single class.
    pub auc: Option<f64>,
    pub roc: Vec<RocPoint>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn class_metrics(tp: usize, fp: usize, fn_: usize) -> ClassMetrics {
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    ClassMetrics {
        precision,
        recall,
        f1,
        support: tp + fn_,
    }
}

/// Mann–Whitney AUC with midranks for ties.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = mid;
        }
        i = j + 1;
    }
    let pos_rank: f64 = (0..labels.len()).filter(|&i| labels[i] == 1).map(|i| ranks[i]).sum();
    let np = n_pos as f64;
    Some((pos_rank - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// ROC points at every distinct score threshold, from (0, 0) to (1, 1).
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Vec<RocPoint> {
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < order.len() {
        let thr = scores[order[i]];
        while i < order.len() && scores[order[i]] == thr {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: thr,
            fpr: ratio(fp, n_neg),
            tpr: ratio(tp, n_pos),
        });
    }
    points
}

pub fn evaluate_scores(scores: &[f64], labels: &[u8]) -> Result<EvalReport> {
    if scores.is_empty() {
        return Err(Error::InvalidInput("empty test set".into()));
    }
    if scores.len() != labels.len() {
        return Err(Error::Dimension(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    let pred = predict(scores);
    let mut confusion = [[0usize; 2]; 2];
    for (&t, &p) in labels.iter().zip(&pred) {
        confusion[t as usize][p as usize] += 1;
    }
    let [[tn, fp], [fn_, tp]] = confusion;
    Ok(EvalReport {
        confusion,
        negative: class_metrics(tn, fn_, fp),
        positive: class_metrics(tp, fp, fn_),
        accuracy: (tp + tn) as f64 / scores.len() as f64,
        auc: roc_auc(scores, labels),
        roc: roc_curve(scores, labels),
    })
}

/// Evaluates on test rows; labels are 0/1.
pub fn evaluate(model: &SvmModel, z_test: &DMatrix<f64>, y_test: &[u8]) -> Result<EvalReport> {
    let scores = decision_function(model, z_test)?;
    evaluate_scores(&scores, y_test)
}

/// W[j][k] = w[j·d + k].
pub fn reshape_weights(model: &SvmModel, m: usize, d: usize) -> Result<DMatrix<f64>> {
    if m * d != model.w.len() {
        return Err(Error::Dimension(format!("{m} x {d} does not match p = {}", model.w.len())));
    }
    Ok(DMatrix::from_row_slice(m, d, &model.w))
}

/// Maps 0/1 labels to −1/+1.
pub fn signed_labels(labels: &[u8]) -> Vec<f64> {
    labels.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect()
}

pub fn select_rows(z: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), z.ncols(), |i, k| z[(rows[i], k)])
}

/// Picks C from `grid` by stratified k-fold CV accuracy; ties go to the
/// earlier grid entry.
pub fn select_c_by_cv(z: &DMatrix<f64>, labels: &[u8], grid: &[f64], folds: usize, base: &SvmParams, seed: u64) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::Config("empty C grid".into()));
    }
    if folds < 2 {
        return Err(Error::Config("cross-validation needs at least 2 folds".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0usize; labels.len()];
    for class in [0u8, 1u8] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for (r, &i) in idx.iter().enumerate() {
            fold_of[i] = r % folds;
        }
    }
    let mut best = (grid[0], f64::NEG_INFINITY);
    for &c in grid {
        let mut correct = 0usize;
        let mut total = 0usize;
        for f in 0..folds {
            let train: Vec<usize> = (0..labels.len()).filter(|&i| fold_of[i] != f).collect();
            let test: Vec<usize> = (0..labels.len()).filter(|&i| fold_of[i] == f).collect();
            let ytr: Vec<u8> = train.iter().map(|&i| labels[i]).collect();
            if test.is_empty() || !ytr.contains(&0) || !ytr.contains(&1) {
                continue;
            }
            let model = train_linear_svm(&select_rows(z, &train), &signed_labels(&ytr), &SvmParams { c, ..*base })?;
            let pred = predict(&decision_function(&model, &select_rows(z, &test))?);
            correct += test.iter().zip(&pred).filter(|(&i, &p)| labels[i] == p).count();
            total += test.len();
        }
        let acc = ratio(correct, total);
        if acc > best.1 {
            best = (c, acc);
        }
    }
    Ok(best.0)
}

/// Per-feature standardization fitted on training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(z: &DMatrix<f64>) -> Self {
        let n = z.nrows().max(1) as f64;
        let mean: Vec<f64> = z.column_iter().map(|c| c.sum() / n).collect();
        let scale = z
            .column_iter()
            .zip(&mean)
            .map(|(c, mu)| {
                let sd = (c.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn transform(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(z.nrows(), z.ncols(), |i, k| (z[(i, k)] - self.mean[k]) / self.scale[k])
    }

    /// Rewrites a model trained on standardized features so it acts on raw ones.
    pub fn fold_into(&self, model: &SvmModel) -> SvmModel {
        let w: Vec<f64> = model.w.iter().zip(&self.scale).map(|(w, s)| w / s).collect();
        let shift: f64 = w.iter().zip(&self.mean).map(|(w, m)| w * m).sum();
        SvmModel {
            w,
            b: model.b - shift,
            ..model.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn split_exact_proportions() {
        let labels: Vec<u8> = (0..20).map(|i| (i % 2) as u8).collect();
        let (train, test) = stratified_split(&labels, 0.2, 1).unwrap();
        assert_eq!(test.len(), 4);
        assert_eq!(test.iter().filter(|&&i| labels[i] == 1).count(), 2);
        assert_eq!(train.len() + test.len(), 20);
        assert!(train.iter().all(|i| !test.contains(i)));
        assert_eq!(stratified_split(&labels, 0.2, 1).unwrap(), (train, test));
    }

    #[test]
    fn split_of_148() {
        // 104 sick / 44 healthy.
        let labels: Vec<u8> = (0..148).map(|i| u8::from(i < 104)).collect();
        let (_, test) = stratified_split(&labels, 0.2, 0).unwrap();
        assert!((29..=31).contains(&test.len()), "{}", test.len());
        let pos = test.iter().filter(|&&i| labels[i] == 1).count() as f64;
        assert!((pos - 104.0 * test.len() as f64 / 148.0).abs() <= 1.0);
    }

    #[test]
    fn split_errors() {
        assert!(stratified_split(&[0, 0, 0, 1], 0.5, 0).is_err());
        assert!(stratified_split(&[0, 0, 1, 1], 0.0, 0).is_err());
    }

    #[test]
    fn symmetric_pair() {
        let z = DMatrix::from_row_slice(2, 1, &[-1.0, 1.0]);
        let m = train_linear_svm(&z, &[-1.0, 1.0], &SvmParams::default()).unwrap();
        let s = decision_function(&m, &z).unwrap();
        assert!(s[0] < 0.0 && s[1] > 0.0);
        let at_zero = decision_function(&m, &DMatrix::zeros(1, 1)).unwrap()[0];
        assert!(at_zero.abs() < 1e-6, "{at_zero}");
    }

    #[test]
    fn separable_blobs_train_perfectly() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z = DMatrix::from_fn(40, 2, |i, _| {
            let mu = if i < 20 { -3.0 } else { 3.0 };
            let e: f64 = StandardNormal.sample(&mut rng);
            mu + 0.5 * e
        });
        let y: Vec<f64> = (0..40).map(|i| if i < 20 { -1.0 } else { 1.0 }).collect();
        let model = train_linear_svm(&z, &y, &SvmParams { c: 100.0, ..Default::default() }).unwrap();
        let pred = predict(&decision_function(&model, &z).unwrap());
        assert!(pred.iter().zip(&y).all(|(&p, &t)| (p == 1) == (t > 0.0)));
        assert!(model.converged);
    }

    #[test]
    fn training_errors() {
        let z = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        assert!(train_linear_svm(&z, &[1.0, 1.0], &SvmParams::default()).is_err());
        let bad = DMatrix::from_row_slice(2, 1, &[f64::NAN, 1.0]);
        assert!(train_linear_svm(&bad, &[-1.0, 1.0], &SvmParams::default()).is_err());
    }

    #[test]
    fn decision_function_cases() {
        let model = SvmModel {
            w: vec![0.0; 3],
            b: 0.3,
            c: 1.0,
            iterations: 0,
            converged: true,
        };
        let z = DMatrix::from_fn(4, 3, |i, k| (i + k) as f64);
        assert!(decision_function(&model, &z).unwrap().iter().all(|&s| s == 0.3));
        let model = SvmModel {
            w: vec![2.0, 0.0, 0.0],
            b: 0.0,
            ..model
        };
        let e1 = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
        assert_eq!(decision_function(&model, &e1).unwrap(), vec![2.0]);
        assert!(decision_function(&model, &DMatrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn decision_function_matches_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = SvmModel {
            w: (0..5).map(|_| rng.random_range(-1.0..1.0)).collect(),
            b: -0.4,
            c: 1.0,
            iterations: 0,
            converged: true,
        };
        let z = DMatrix::from_fn(7, 5, |_, _| rng.random_range(-1.0..1.0));
        let s = decision_function(&model, &z).unwrap();
        for i in 0..7 {
            let mut dot = model.b;
            for k in 0..5 {
                dot += z[(i, k)] * model.w[k];
            }
            assert!((s[i] - dot).abs() < 1e-14);
        }
    }

    #[test]
    fn evaluate_cases() {
        let perfect = evaluate_scores(&[-2.0, -1.0, 1.0, 3.0], &[0, 0, 1, 1]).unwrap();
        assert_eq!(perfect.auc, Some(1.0));
        assert_eq!(perfect.accuracy, 1.0);

        let ties = evaluate_scores(&[0.5; 6], &[0, 1, 0, 1, 1, 0]).unwrap();
        assert_eq!(ties.auc, Some(0.5));

        // TP=2, FP=1, TN=2, FN=1
        let r = evaluate_scores(&[1.0, 2.0, -1.0, 0.5, -2.0, -3.0], &[1, 1, 1, 0, 0, 0]).unwrap();
        assert_eq!(r.confusion, [[2, 1], [1, 2]]);
        for v in [r.positive.precision, r.positive.recall, r.positive.f1] {
            assert!((v - 2.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(r.accuracy, 4.0 / 6.0);

        let single = evaluate_scores(&[1.0, -1.0], &[1, 1]).unwrap();
        assert_eq!(single.auc, None);
        assert_eq!(single.accuracy, 0.5);
        assert!(evaluate_scores(&[], &[]).is_err());
    }

    #[test]
    fn zero_score_predicts_positive() {
        assert_eq!(predict(&[0.0, -1e-300]), vec![1, 0]);
    }

    #[test]
    fn roc_endpoints() {
        let roc = roc_curve(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]);
        assert_eq!((roc[0].fpr, roc[0].tpr), (0.0, 0.0));
        let last = roc.last().unwrap();
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        assert_eq!(roc.len(), 5);
    }

    #[test]
    fn reshape_layout() {
        let model = SvmModel {
            w: (1..=6).map(f64::from).collect(),
            b: 0.0,
            c: 1.0,
            iterations: 0,
            converged: true,
        };
        let w = reshape_weights(&model, 3, 2).unwrap();
        assert_eq!(w, DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        assert_eq!(crate::lot::flatten(&w), model.w);
        assert!(reshape_weights(&model, 4, 2).is_err());
        let wide = SvmModel {
            w: vec![0.0; 10 * 16],
            ..model
        };
        assert_eq!(reshape_weights(&wide, 10, 16).unwrap().ncols(), 16);
    }

    #[test]
    fn standardizer_fold_preserves_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = DMatrix::from_fn(10, 3, |_, k| rng.random_range(0.0..1.0) * (k + 1) as f64 + k as f64);
        let s = Standardizer::fit(&z);
        let model = SvmModel {
            w: vec![0.5, -1.0, 2.0],
            b: 0.1,
            c: 1.0,
            iterations: 0,
            converged: true,
        };
        let a = decision_function(&model, &s.transform(&z)).unwrap();
        let b = decision_function(&s.fold_into(&model), &z).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
