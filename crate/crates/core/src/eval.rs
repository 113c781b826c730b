//! Faithfulness and robustness evaluation around a linear reference model.
//!
//! Deletion and insertion curves mask features with their training means and
//! re-evaluate the fixed model. Sufficiency and necessity retrain on the kept
//! columns. For regression tasks "accuracy" is the test R^2.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cir::{self, CirMode};
use crate::data_io::{standardize, DataMatrix, OutputBlock, OutputKind, StandardizationParams};
use crate::error::{ExcirError, Result};
use crate::group::{self, WeightVector};
use crate::lightweight::Task;
use crate::par;
use crate::stability::{self, Direction, RankAgreement, SignificanceRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub step: f64,
    /// L2 penalty for logistic regression.
    pub l2: f64,
    /// Ridge penalty (per row) for the regression closed form.
    pub ridge: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            step: 0.1,
            l2: 1e-3,
            ridge: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceModel {
    pub task: Task,
    /// Sorted distinct label values (classification).
    pub classes: Vec<f64>,
    /// `k x C` on standardized inputs; `C = 1` for binary and regression.
    pub weights: DMatrix<f64>,
    pub bias: Vec<f64>,
    pub standardization: StandardizationParams,
    pub config: TrainConfig,
}

fn distinct(labels: &[f64]) -> Vec<f64> {
    let mut c = labels.to_vec();
    c.sort_by(f64::total_cmp);
    c.dedup();
    c
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Fits the reference model. Standardization is fitted on `data` only.
pub fn train_reference(data: &DataMatrix, labels: &[f64], task: Task, config: TrainConfig) -> Result<ReferenceModel> {
    if labels.len() != data.n_rows() {
        return Err(ExcirError::mismatch("label count", data.n_rows(), labels.len()));
    }
    let standardization = StandardizationParams::fit(data);
    let x = standardize(data, &standardization)?;
    let x = x.values();
    let (n, k) = (data.n_rows() as f64, data.n_features());
    match task {
        Task::Regression => {
            let ym = labels.iter().sum::<f64>() / n;
            let mut weights = DMatrix::zeros(k, 1);
            if k > 0 {
                let mut gram = x.transpose() * x;
                for i in 0..k {
                    gram[(i, i)] += config.ridge * n;
                }
                let yc = DVector::from_iterator(labels.len(), labels.iter().map(|v| v - ym));
                let rhs = x.transpose() * yc;
                let w = gram
                    .cholesky()
                    .ok_or_else(|| ExcirError::Singular {
                        eigenvalue: 0.0,
                        context: "regression normal equations".into(),
                    })?
                    .solve(&rhs);
                weights.set_column(0, &w);
            }
            Ok(ReferenceModel {
                task,
                classes: Vec::new(),
                weights,
                bias: vec![ym],
                standardization,
                config,
            })
        }
        Task::Classification => {
            let classes = distinct(labels);
            if classes.len() < 2 {
                return Err(ExcirError::invalid("training labels contain a single class"));
            }
            let idx: Vec<usize> = labels
                .iter()
                .map(|l| classes.iter().position(|c| c == l).expect("label is a class"))
                .collect();
            let c = if classes.len() == 2 { 1 } else { classes.len() };
            let mut w = DMatrix::<f64>::zeros(k, c);
            let mut b = DVector::<f64>::zeros(c);
            let mut counts = vec![0usize; classes.len()];
            idx.iter().for_each(|&i| counts[i] += 1);
            if k == 0 {
                // majority-class predictor
                let major = (0..counts.len()).max_by_key(|&i| (counts[i], usize::MAX - i)).unwrap_or(0);
                if c == 1 {
                    b[0] = if major == 1 { 1.0 } else { -1.0 };
                } else {
                    b[major] = 1.0;
                }
            } else {
                let target = DMatrix::from_fn(labels.len(), c, |r, j| {
                    if c == 1 {
                        f64::from(u8::from(idx[r] == 1))
                    } else {
                        f64::from(u8::from(idx[r] == j))
                    }
                });
                for _ in 0..config.iterations {
                    let mut z = x * &w;
                    for mut row in z.row_iter_mut() {
                        row += b.transpose();
                    }
                    let p = probabilities(&z);
                    let err = p - &target;
                    let gw = x.transpose() * &err / n + &w * config.l2;
                    let gb = DVector::from_fn(c, |j, _| err.column(j).sum() / n);
                    w -= gw * config.step;
                    b -= gb * config.step;
                }
            }
            Ok(ReferenceModel {
                task,
                classes,
                weights: w,
                bias: b.iter().copied().collect(),
                standardization,
                config,
            })
        }
    }
}

/// Sigmoid for one column, softmax across several.
fn probabilities(z: &DMatrix<f64>) -> DMatrix<f64> {
    if z.ncols() == 1 {
        return z.map(sigmoid);
    }
    let mut p = z.clone();
    for mut row in p.row_iter_mut() {
        let m = row.max();
        row.apply(|v| *v = (*v - m).exp());
        let s = row.sum();
        row /= s;
    }
    p
}

impl ReferenceModel {
    pub fn n_features(&self) -> usize {
        self.weights.nrows()
    }

    fn standardized(&self, data: &DataMatrix) -> Result<DMatrix<f64>> {
        Ok(standardize(data, &self.standardization)?.values().clone())
    }

    /// Decision values `x w + b` on standardized inputs (`n x C`).
    pub fn decision_values(&self, data: &DataMatrix) -> Result<DMatrix<f64>> {
        let x = self.standardized(data)?;
        let mut z = x * &self.weights;
        for mut row in z.row_iter_mut() {
            for (v, b) in row.iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(z)
    }

    /// Class probabilities (positive class only for binary) or regression predictions.
    pub fn predict_output(&self, data: &DataMatrix) -> Result<OutputBlock> {
        let z = self.decision_values(data)?;
        match self.task {
            Task::Regression => OutputBlock::new(z, OutputKind::RegressionScore),
            Task::Classification => OutputBlock::new(probabilities(&z), OutputKind::Probability),
        }
    }

    /// Predicted class indices into `classes`, or regression predictions.
    pub fn predict(&self, data: &DataMatrix) -> Result<Vec<f64>> {
        let z = self.decision_values(data)?;
        Ok(match self.task {
            Task::Regression => z.column(0).iter().copied().collect(),
            Task::Classification if z.ncols() == 1 => z.column(0).iter().map(|&v| f64::from(u8::from(v >= 0.0))).collect(),
            Task::Classification => z
                .row_iter()
                .map(|row| {
                    row.iter()
                        .enumerate()
                        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                        .0 as f64
                })
                .collect(),
        })
    }

    /// Maps raw labels to class indices; unseen labels become `-1`.
    pub fn encode_labels(&self, labels: &[f64]) -> Vec<f64> {
        match self.task {
            Task::Regression => labels.to_vec(),
            Task::Classification => labels
                .iter()
                .map(|l| self.classes.iter().position(|c| c == l).map_or(-1.0, |i| i as f64))
                .collect(),
        }
    }

    /// Accuracy for classification, R^2 for regression.
    pub fn score(&self, data: &DataMatrix, labels: &[f64]) -> Result<f64> {
        if labels.len() != data.n_rows() {
            return Err(ExcirError::mismatch("label count", data.n_rows(), labels.len()));
        }
        let pred = self.predict(data)?;
        let truth = self.encode_labels(labels);
        Ok(match self.task {
            Task::Classification => {
                pred.iter().zip(&truth).filter(|(a, b)| a == b).count() as f64 / labels.len() as f64
            }
            Task::Regression => {
                let m = truth.iter().sum::<f64>() / truth.len() as f64;
                let sst: f64 = truth.iter().map(|t| (t - m).powi(2)).sum();
                let sse: f64 = truth.iter().zip(&pred).map(|(t, p)| (t - p).powi(2)).sum();
                if sst > 0.0 {
                    1.0 - sse / sst
                } else {
                    0.0
                }
            }
        })
    }

    /// Weights on the raw feature scale (`w / sd`, zero for constant columns).
    pub fn effective_weights(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.weights.nrows(), self.weights.ncols(), |i, j| {
            if self.standardization.constant[i] {
                0.0
            } else {
                self.weights[(i, j)] / self.standardization.sd[i]
            }
        })
    }
}

/// Row indices for train / validation / test.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    /// Shuffled 64/16/20 split.
    pub fn standard(n: usize, seed: u64) -> Self {
        Self::with_fractions(n, seed, 0.64, 0.16)
    }

    pub fn with_fractions(n: usize, seed: u64, train: f64, validation: f64) -> Self {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut par::stream_rng(seed, 0));
        let n_train = (train * n as f64).round() as usize;
        let n_val = ((validation * n as f64).round() as usize).min(n - n_train);
        let sorted = |v: &[usize]| {
            let mut v = v.to_vec();
            v.sort_unstable();
            v
        };
        Self {
            train: sorted(&idx[..n_train]),
            validation: sorted(&idx[n_train..n_train + n_val]),
            test: sorted(&idx[n_train + n_val..]),
        }
    }

    /// Train and validation rows together.
    pub fn pool(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.train.iter().chain(&self.validation).copied().collect();
        v.sort_unstable();
        v
    }
}

/// Training and test portions of one dataset.
#[derive(Debug, Clone)]
pub struct Split {
    pub train_x: DataMatrix,
    pub train_y: Vec<f64>,
    pub test_x: DataMatrix,
    pub test_y: Vec<f64>,
}

impl Split {
    pub fn new(data: &DataMatrix, labels: &[f64], train: &[usize], test: &[usize]) -> Result<Self> {
        if labels.len() != data.n_rows() {
            return Err(ExcirError::mismatch("label count", data.n_rows(), labels.len()));
        }
        Ok(Self {
            train_x: data.select_rows(train)?,
            train_y: train.iter().map(|&i| labels[i]).collect(),
            test_x: data.select_rows(test)?,
            test_y: test.iter().map(|&i| labels[i]).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaithfulnessCurves {
    pub fractions: Vec<f64>,
    pub deletion: Vec<f64>,
    pub insertion: Vec<f64>,
    pub aopc_insertion: f64,
    pub deletion_area: f64,
    pub baseline: f64,
}

impl FaithfulnessCurves {
    /// `(fraction, accuracy)` pairs.
    pub fn deletion_points(&self) -> Vec<(f64, f64)> {
        self.fractions.iter().copied().zip(self.deletion.iter().copied()).collect()
    }

    pub fn insertion_points(&self) -> Vec<(f64, f64)> {
        self.fractions.iter().copied().zip(self.insertion.iter().copied()).collect()
    }
}

/// Trapezoid area normalized by the span of `x`.
pub fn trapezoid_area(x: &[f64], y: &[f64]) -> f64 {
    let span = x.last().unwrap_or(&0.0) - x.first().unwrap_or(&0.0);
    if span <= 0.0 {
        return y.first().copied().unwrap_or(0.0);
    }
    x.windows(2).zip(y.windows(2)).map(|(a, b)| (a[1] - a[0]) * (b[0] + b[1]) / 2.0).sum::<f64>() / span
}

fn masked(data: &DataMatrix, columns: &[usize], means: &[f64]) -> DataMatrix {
    let mut values = data.values().clone();
    for &c in columns {
        values.column_mut(c).fill(means[c]);
    }
    DataMatrix::from_parts_unchecked(values, data.feature_names().to_vec(), data.split())
}

fn check_ranking(ranking: &[usize], k: usize) -> Result<()> {
    if ranking.is_empty() {
        return Err(ExcirError::Empty("ranking".into()));
    }
    let mut seen = vec![false; k];
    for &i in ranking {
        if i >= k || std::mem::replace(&mut seen[i], true) {
            return Err(ExcirError::invalid(format!("ranking entry {i} is out of range or repeated")));
        }
    }
    Ok(())
}

/// Deletion and insertion curves on the test rows over fractions `0, 1/steps, ..., 1`.
pub fn faithfulness_curves(
    model: &ReferenceModel,
    ranking: &[usize],
    split: &Split,
    steps: usize,
) -> Result<FaithfulnessCurves> {
    let k = split.test_x.n_features();
    check_ranking(ranking, k)?;
    if steps == 0 {
        return Err(ExcirError::invalid("steps must be at least 1"));
    }
    let means = &model.standardization.mean;
    let fractions: Vec<f64> = (0..=steps).map(|s| s as f64 / steps as f64).collect();
    let count = |f: f64| ((f * ranking.len() as f64).round() as usize).min(ranking.len());
    let evaluate = |cols: Vec<usize>| model.score(&masked(&split.test_x, &cols, means), &split.test_y);
    let points = par::map_slice(&fractions, |&f| -> Result<(f64, f64)> {
        let m = count(f);
        let deletion = evaluate(ranking[..m].to_vec())?;
        // insertion reveals the top-m ranked features; everything else is masked
        let revealed = &ranking[..m];
        let hidden: Vec<usize> = (0..k).filter(|i| !revealed.contains(i)).collect();
        let insertion = evaluate(hidden)?;
        Ok((deletion, insertion))
    });
    let points = points.into_iter().collect::<Result<Vec<_>>>()?;
    let deletion: Vec<f64> = points.iter().map(|p| p.0).collect();
    let insertion: Vec<f64> = points.iter().map(|p| p.1).collect();
    Ok(FaithfulnessCurves {
        aopc_insertion: trapezoid_area(&fractions, &insertion),
        deletion_area: trapezoid_area(&fractions, &deletion),
        baseline: model.score(&split.test_x, &split.test_y)?,
        fractions,
        deletion,
        insertion,
    })
}

fn retrain_on(split: &Split, keep: &[usize], task: Task, config: TrainConfig) -> Result<f64> {
    let mut cols = keep.to_vec();
    cols.sort_unstable();
    let train = split.train_x.select_columns(&cols)?;
    let test = split.test_x.select_columns(&cols)?;
    let model = train_reference(&train, &split.train_y, task, config)?;
    model.score(&test, &split.test_y)
}

/// Test score after retraining on only the top-`k` ranked features, per `k`.
pub fn topk_sufficiency(
    ranking: &[usize],
    split: &Split,
    ks: &[usize],
    task: Task,
    config: TrainConfig,
) -> Result<Vec<(usize, f64)>> {
    check_ranking(ranking, split.train_x.n_features())?;
    if let Some(&k) = ks.iter().find(|&&k| k > ranking.len()) {
        return Err(ExcirError::invalid(format!("k = {k} exceeds the ranking length")));
    }
    par::map_slice(ks, |&k| retrain_on(split, &ranking[..k], task, config).map(|a| (k, a)))
        .into_iter()
        .collect()
}

/// Test score after removing the top-`m` ranked features and retraining, per `m`.
pub fn necessity_curve(
    ranking: &[usize],
    split: &Split,
    ms: &[usize],
    task: Task,
    config: TrainConfig,
) -> Result<Vec<(usize, f64)>> {
    let k = split.train_x.n_features();
    check_ranking(ranking, k)?;
    if let Some(&m) = ms.iter().find(|&&m| m > ranking.len()) {
        return Err(ExcirError::invalid(format!("m = {m} exceeds the ranking length")));
    }
    par::map_slice(ms, |&m| {
        let keep: Vec<usize> = (0..k).filter(|i| !ranking[..m].contains(i)).collect();
        retrain_on(split, &keep, task, config).map(|a| (m, a))
    })
    .into_iter()
    .collect()
}

/// `|top-k ∩ truth| / k` for each `k`.
pub fn precision_at_k(ranking: &[usize], truth: &[usize], ks: &[usize]) -> Result<Vec<(usize, f64)>> {
    if truth.is_empty() {
        return Err(ExcirError::Empty("ground-truth set".into()));
    }
    Ok(ks
        .iter()
        .map(|&k| {
            let top = &ranking[..k.min(ranking.len())];
            let hits = top.iter().filter(|i| truth.contains(i)).count();
            (k, if k == 0 { 0.0 } else { hits as f64 / k as f64 })
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseLevel {
    pub sigma: f64,
    pub agreements: Vec<RankAgreement>,
    pub median_jaccard: f64,
    pub mean_tau_head: f64,
    pub mean_tau_full: f64,
}

/// Adds `N(0, sigma^2)` noise to standardized features and compares each
/// rescored ranking with the noise-free one. Level `l`, rep `r` uses RNG
/// stream `l * reps + r`.
pub fn noise_robustness(
    data: &DataMatrix,
    y: &[f64],
    sigma_levels: &[f64],
    reps: usize,
    seed: u64,
    head_k: usize,
    mode: CirMode,
) -> Result<Vec<NoiseLevel>> {
    if sigma_levels.iter().any(|s| !(*s >= 0.0)) {
        return Err(ExcirError::invalid("noise levels must be nonnegative"));
    }
    if reps == 0 {
        return Err(ExcirError::invalid("reps must be at least 1"));
    }
    let z = standardize(data, &StandardizationParams::fit(data))?;
    let k = z.n_features();
    let base = cir::eta_by_feature(&cir::score_all_features(&z, y, mode)?, k);
    let mut out = Vec::with_capacity(sigma_levels.len());
    for (l, &sigma) in sigma_levels.iter().enumerate() {
        let agreements = par::map_range(reps, |r| -> Result<RankAgreement> {
            let mut rng = par::stream_rng(seed, (l * reps + r) as u64);
            let noisy = z.values().map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal));
            let nz = DataMatrix::from_parts_unchecked(noisy, z.feature_names().to_vec(), z.split());
            let scores = cir::eta_by_feature(&cir::score_all_features(&nz, y, mode)?, k);
            stability::rank_agreement(&base, &scores, head_k)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let jac: Vec<f64> = agreements.iter().map(|a| a.jaccard_topk).collect();
        let mean = |f: fn(&RankAgreement) -> f64| agreements.iter().map(f).sum::<f64>() / reps as f64;
        out.push(NoiseLevel {
            sigma,
            median_jaccard: stability::quantile(&jac, 0.5),
            mean_tau_head: mean(|a| a.kendall_tau_head),
            mean_tau_full: mean(|a| a.kendall_tau_full),
            agreements,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftEntry {
    pub feature: usize,
    pub delta: f64,
}

/// `eta_drift - eta_base` per feature, sorted by descending `|delta|`.
pub fn drift_delta(base: &[f64], drift: &[f64]) -> Result<Vec<DriftEntry>> {
    if base.len() != drift.len() {
        return Err(ExcirError::mismatch("score vector length", base.len(), drift.len()));
    }
    let mut v: Vec<DriftEntry> = base
        .iter()
        .zip(drift)
        .enumerate()
        .map(|(feature, (b, d))| DriftEntry { feature, delta: d - b })
        .collect();
    v.sort_by(|a, b| b.delta.abs().total_cmp(&a.delta.abs()).then(a.feature.cmp(&b.feature)));
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityProbe {
    pub slopes: Vec<f64>,
    /// Spearman between slopes and scores; absent when either is constant.
    pub spearman: Option<f64>,
}

/// Mean `|g(x + d e_i) - g(x)| / |d|` over rows and `d`, where `g` is the
/// model's decision value (averaged over classes for multiclass models).
pub fn sensitivity_probe(
    model: &ReferenceModel,
    data: &DataMatrix,
    scores: &[f64],
    delta_grid: &[f64],
) -> Result<SensitivityProbe> {
    let k = data.n_features();
    if scores.len() != k {
        return Err(ExcirError::mismatch("score vector length", k, scores.len()));
    }
    if delta_grid.is_empty() || delta_grid.iter().any(|d| *d == 0.0 || !d.is_finite()) {
        return Err(ExcirError::invalid("delta grid must be nonempty, finite and nonzero"));
    }
    let base = model.decision_values(data)?;
    let slopes = par::map_range(k, |i| -> Result<f64> {
        let mut total = 0.0;
        for &d in delta_grid {
            let mut values = data.values().clone();
            values.column_mut(i).add_scalar_mut(d);
            let moved = DataMatrix::from_parts_unchecked(values, data.feature_names().to_vec(), data.split());
            let g = model.decision_values(&moved)?;
            total += (&g - &base).abs().sum() / (g.ncols() as f64 * d.abs());
        }
        Ok(total / (data.n_rows() * delta_grid.len()) as f64)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let spearman = stability::spearman(&slopes, scores);
    Ok(SensitivityProbe { slopes, spearman })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationImportance {
    pub baseline: f64,
    pub mean_drop: Vec<f64>,
    pub sd_drop: Vec<f64>,
    pub reps: usize,
}

/// Mean score drop when one column is shuffled. Feature `j`, rep `r` uses
/// RNG stream `j * reps + r`.
pub fn permutation_importance(
    model: &ReferenceModel,
    data: &DataMatrix,
    labels: &[f64],
    reps: usize,
    seed: u64,
) -> Result<PermutationImportance> {
    if reps == 0 {
        return Err(ExcirError::invalid("reps must be at least 1"));
    }
    let baseline = model.score(data, labels)?;
    let k = data.n_features();
    let drops = par::map_range(k * reps, |t| -> Result<f64> {
        let (j, r) = (t / reps, t % reps);
        let mut col: Vec<f64> = data.column(j).to_vec();
        col.shuffle(&mut par::stream_rng(seed, (j * reps + r) as u64));
        let mut values = data.values().clone();
        values.set_column(j, &DVector::from_vec(col));
        let shuffled = DataMatrix::from_parts_unchecked(values, data.feature_names().to_vec(), data.split());
        Ok(baseline - model.score(&shuffled, labels)?)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let (mut mean_drop, mut sd_drop) = (Vec::with_capacity(k), Vec::with_capacity(k));
    for j in 0..k {
        let (m, s) = crate::data_io::mean_sd(&drops[j * reps..(j + 1) * reps]);
        mean_drop.push(m);
        sd_drop.push(s);
    }
    Ok(PermutationImportance {
        baseline,
        mean_drop,
        sd_drop,
        reps,
    })
}

/// Per-feature CIR of the model's output on `data`. Multiclass models are
/// scored with uniform multi-output weights over class probabilities.
pub fn model_cir_scores(model: &ReferenceModel, data: &DataMatrix, mode: CirMode) -> Result<Vec<f64>> {
    let out = model.predict_output(data)?;
    let k = data.n_features();
    if out.n_outputs() == 1 {
        Ok(cir::eta_by_feature(&cir::score_output(data, &out, mode)?, k))
    } else {
        let mo = group::mo_excir(data, &out, &WeightVector::uniform(out.n_outputs()), mode)?;
        let mut v = vec![0.0; k];
        mo.iter().for_each(|s| v[s.feature] = s.eta);
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub seed: u64,
    /// Independent split seeds compared in the significance tests.
    pub replicates: usize,
    pub steps: usize,
    pub head_k: usize,
    pub mode: CirMode,
    pub task: Task,
    pub train: TrainConfig,
    pub permutation_reps: usize,
    pub sigma_levels: Vec<f64>,
    pub noise_reps: usize,
    pub q: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            replicates: 5,
            steps: 8,
            head_k: 8,
            mode: CirMode::MidMean,
            task: Task::Classification,
            train: TrainConfig::default(),
            permutation_reps: 5,
            sigma_levels: vec![0.0, 0.05, 0.2, 1.0],
            noise_reps: 20,
            q: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub ranking: Vec<usize>,
    pub scores: Vec<f64>,
    pub curves: FaithfulnessCurves,
    pub sufficiency: Vec<(usize, f64)>,
    pub necessity: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub seed: u64,
    pub baseline: f64,
    pub cir: MethodResult,
    pub permutation: MethodResult,
    pub sensitivity: SensitivityProbe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub replicates: Vec<ReplicateResult>,
    pub noise: Vec<NoiseLevel>,
    pub significance: Vec<SignificanceRecord>,
}

fn method_result(scores: Vec<f64>, model: &ReferenceModel, split: &Split, cfg: &ProtocolConfig) -> Result<MethodResult> {
    let ranking = stability::rank_order(&scores);
    let k = ranking.len();
    let ks: Vec<usize> = [1, 3, cfg.head_k, k].into_iter().filter(|&v| v <= k).collect();
    Ok(MethodResult {
        curves: faithfulness_curves(model, &ranking, split, cfg.steps)?,
        sufficiency: topk_sufficiency(&ranking, split, &ks, cfg.task, cfg.train)?,
        necessity: necessity_curve(&ranking, split, &ks, cfg.task, cfg.train)?,
        ranking,
        scores,
    })
}

/// CIR against the permutation-importance baseline over several split
/// seeds, with Mann-Whitney tests and BH adjustment across metrics.
pub fn run_protocol(data: &DataMatrix, labels: &[f64], cfg: &ProtocolConfig) -> Result<EvalReport> {
    if cfg.replicates < 5 {
        return Err(ExcirError::invalid("the protocol needs at least 5 replicates"));
    }
    let replicates = (0..cfg.replicates)
        .map(|r| -> Result<ReplicateResult> {
            let seed = cfg.seed.wrapping_add(r as u64);
            let idx = SplitIndices::standard(data.n_rows(), seed);
            let split = Split::new(data, labels, &idx.pool(), &idx.test)?;
            let model = train_reference(&split.train_x, &split.train_y, cfg.task, cfg.train)?;
            let cir_scores = model_cir_scores(&model, &split.train_x, cfg.mode)?;
            let perm = permutation_importance(&model, &split.train_x, &split.train_y, cfg.permutation_reps, seed)?;
            let sensitivity = sensitivity_probe(&model, &split.test_x, &cir_scores, &[-0.5, 0.5])?;
            Ok(ReplicateResult {
                seed,
                baseline: model.score(&split.test_x, &split.test_y)?,
                cir: method_result(cir_scores, &model, &split, cfg)?,
                permutation: method_result(perm.mean_drop, &model, &split, cfg)?,
                sensitivity,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let idx = SplitIndices::standard(data.n_rows(), cfg.seed);
    let pool = data.select_rows(&idx.pool())?;
    let pool_y: Vec<f64> = idx.pool().iter().map(|&i| labels[i]).collect();
    let model = train_reference(&pool, &pool_y, cfg.task, cfg.train)?;
    let out = model.predict_output(&pool)?;
    let head = cfg.head_k.min(data.n_features());
    let noise = noise_robustness(&pool, out.column(0), &cfg.sigma_levels, cfg.noise_reps, cfg.seed, head, cfg.mode)?;

    let pick = |f: &dyn Fn(&MethodResult) -> f64| -> (Vec<f64>, Vec<f64>) {
        (
            replicates.iter().map(|r| f(&r.cir)).collect(),
            replicates.iter().map(|r| f(&r.permutation)).collect(),
        )
    };
    let at = |v: &[(usize, f64)], k: usize| v.iter().find(|p| p.0 == k).map_or(f64::NAN, |p| p.1);
    let metrics: Vec<(&str, (Vec<f64>, Vec<f64>), Direction)> = vec![
        ("deletion_area", pick(&|m| m.curves.deletion_area), Direction::LowerBetter),
        ("aopc_insertion", pick(&|m| m.curves.aopc_insertion), Direction::HigherBetter),
        ("sufficiency_at_head", pick(&|m| at(&m.sufficiency, head)), Direction::HigherBetter),
        ("necessity_at_head", pick(&|m| at(&m.necessity, head)), Direction::LowerBetter),
    ];
    let mut significance = metrics
        .into_iter()
        .map(|(name, (a, b), dir)| stability::nonparametric_compare(name, &a, &b, dir))
        .collect::<Result<Vec<_>>>()?;
    stability::apply_bh(&mut significance, cfg.q)?;
    Ok(EvalReport {
        replicates,
        noise,
        significance,
    })
}
