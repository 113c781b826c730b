//! Lightweight environments: row subsampling, similarity gates and the
//! sample-size window.
//!
//! The projection and risk gates compare the full and lightweight models on a
//! common evaluation set. MMD and KL compare the two models' output
//! distributions on that same set.

use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data_io::{mean_sd, DataMatrix, OutputBlock, OutputKind};
use crate::error::{ExcirError, Result};
use crate::eval::{train_reference, TrainConfig};
use crate::par;

/// Draws a row subsample, keeping every feature.
///
/// With `strata` the sample is proportionate per distinct stratum value
/// (largest-remainder rounding). Rows come back in ascending index order.
pub fn subsample(
    data: &DataMatrix,
    y: &OutputBlock,
    fraction: f64,
    seed: u64,
    strata: Option<&[f64]>,
) -> Result<(DataMatrix, OutputBlock)> {
    let rows = subsample_rows(data.n_rows(), fraction, seed, strata)?;
    y.check_rows(data)?;
    Ok((data.select_rows(&rows)?, y.select_rows(&rows)?))
}

/// Row indices of a subsample; see [`subsample`].
pub fn subsample_rows(n: usize, fraction: f64, seed: u64, strata: Option<&[f64]>) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(ExcirError::invalid(format!("fraction must lie in (0, 1], got {fraction}")));
    }
    let target = (fraction * n as f64).round() as usize;
    if target < 2 {
        return Err(ExcirError::invalid(format!(
            "fraction {fraction} of {n} rows leaves fewer than 2 rows"
        )));
    }
    if target == n {
        return Ok((0..n).collect());
    }
    let mut rng = par::stream_rng(seed, 0);
    let mut rows = match strata {
        None => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            idx.truncate(target);
            idx
        }
        Some(labels) => {
            if labels.len() != n {
                return Err(ExcirError::mismatch("strata length", n, labels.len()));
            }
            let mut keys: Vec<f64> = labels.to_vec();
            keys.sort_by(f64::total_cmp);
            keys.dedup();
            let groups: Vec<Vec<usize>> = keys
                .iter()
                .map(|k| (0..n).filter(|&i| labels[i] == *k).collect())
                .collect();
            let exact: Vec<f64> = groups.iter().map(|g| g.len() as f64 * target as f64 / n as f64).collect();
            let mut take: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
            let mut order: Vec<usize> = (0..groups.len()).collect();
            order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
            let short = target - take.iter().sum::<usize>();
            for &g in order.iter().take(short) {
                take[g] += 1;
            }
            let mut out = Vec::with_capacity(target);
            for (g, members) in groups.into_iter().enumerate() {
                let mut m = members;
                m.shuffle(&mut rng);
                out.extend_from_slice(&m[..take[g]]);
            }
            out
        }
    };
    rows.sort_unstable();
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionFit {
    pub alpha_star: f64,
    pub beta_star: f64,
    pub d_proj: f64,
}

/// Affine least-squares alignment of `y_lw` onto `y_ref` and the relative
/// residual `|y - a y' - b| / |y|`.
pub fn projection_distance(y_ref: &[f64], y_lw: &[f64]) -> Result<ProjectionFit> {
    if y_ref.len() != y_lw.len() {
        return Err(ExcirError::mismatch("evaluation set length", y_ref.len(), y_lw.len()));
    }
    if y_ref.is_empty() {
        return Err(ExcirError::Empty("evaluation set".into()));
    }
    let norm = y_ref.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(ExcirError::Degenerate("reference output has zero norm".into()));
    }
    let n = y_ref.len() as f64;
    let (my, mx) = (y_ref.iter().sum::<f64>() / n, y_lw.iter().sum::<f64>() / n);
    let sxx: f64 = y_lw.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = y_lw.iter().zip(y_ref).map(|(x, y)| (x - mx) * (y - my)).sum();
    let alpha = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let beta = my - alpha * mx;
    let resid = y_ref
        .iter()
        .zip(y_lw)
        .map(|(y, x)| (y - alpha * x - beta).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(ProjectionFit {
        alpha_star: alpha,
        beta_star: beta,
        d_proj: resid / norm,
    })
}

/// Multi-output analogue: best affine map `Y' A + 1 b'` in Frobenius norm.
/// Returns `d_proj = |Y - fit|_F / |Y|_F`.
pub fn projection_distance_multi(y_ref: &DMatrix<f64>, y_lw: &DMatrix<f64>) -> Result<f64> {
    if y_ref.shape() != y_lw.shape() {
        return Err(ExcirError::mismatch("evaluation set rows", y_ref.nrows(), y_lw.nrows()));
    }
    let norm = y_ref.norm();
    if norm == 0.0 {
        return Err(ExcirError::Degenerate("reference output has zero norm".into()));
    }
    let (n, p) = y_lw.shape();
    let mut design = DMatrix::from_element(n, p + 1, 1.0);
    design.view_mut((0, 0), (n, p)).copy_from(y_lw);
    let svd = design.clone().svd(true, true);
    let coef = svd
        .solve(y_ref, 1e-12 * svd.singular_values.max())
        .map_err(|e| ExcirError::Degenerate(e.to_string()))?;
    Ok((y_ref - design * coef).norm() / norm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    #[default]
    MedianHeuristic,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmdOptions {
    pub bandwidth: Bandwidth,
    pub permutations: usize,
    pub seed: u64,
    /// Points kept per side (seeded subsample) before building the kernel matrix.
    pub max_points: Option<usize>,
}

impl Default for MmdOptions {
    fn default() -> Self {
        Self {
            bandwidth: Bandwidth::MedianHeuristic,
            permutations: 200,
            seed: 42,
            max_points: Some(1000),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmdResult {
    pub mmd2_unbiased: f64,
    pub mmd2_biased: f64,
    pub p_value: f64,
    pub bandwidth: f64,
}

fn sq_dist(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn median_bandwidth(points: &[&[f64]]) -> f64 {
    let n = points.len();
    let mut d: Vec<f64> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d.push(sq_dist(points[i], points[j]).sqrt());
        }
    }
    let nonzero: Vec<f64> = d.into_iter().filter(|&v| v > 0.0).collect();
    if nonzero.is_empty() {
        log::warn!("all pairwise distances are zero; falling back to bandwidth 1");
        return 1.0;
    }
    crate::data_io::median(&nonzero)
}

fn cap_rows<'a>(rows: Vec<&'a [f64]>, cap: Option<usize>, seed: u64, stream: u64) -> Vec<&'a [f64]> {
    match cap {
        Some(c) if rows.len() > c => {
            let mut idx: Vec<usize> = (0..rows.len()).collect();
            idx.shuffle(&mut par::stream_rng(seed, stream));
            idx.truncate(c);
            idx.sort_unstable();
            idx.into_iter().map(|i| rows[i]).collect()
        }
        _ => rows,
    }
}

/// Two-sample MMD with a Gaussian kernel. Each inner slice is one sample point.
pub fn mmd_gate(a: &[Vec<f64>], b: &[Vec<f64>], opts: &MmdOptions) -> Result<MmdResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(ExcirError::invalid("MMD needs at least 2 points per side"));
    }
    if opts.permutations < 20 {
        return Err(ExcirError::invalid("MMD needs at least 20 permutations"));
    }
    let dim = a[0].len();
    if a.iter().chain(b).any(|p| p.len() != dim) {
        return Err(ExcirError::invalid("MMD samples have inconsistent dimensions"));
    }
    let a = cap_rows(a.iter().map(Vec::as_slice).collect(), opts.max_points, opts.seed, 1);
    let b = cap_rows(b.iter().map(Vec::as_slice).collect(), opts.max_points, opts.seed, 2);
    let pooled: Vec<&[f64]> = a.iter().chain(&b).copied().collect();
    let h = match opts.bandwidth {
        Bandwidth::MedianHeuristic => median_bandwidth(&pooled),
        Bandwidth::Fixed(h) if h > 0.0 && h.is_finite() => h,
        Bandwidth::Fixed(h) => return Err(ExcirError::invalid(format!("bandwidth must be > 0, got {h}"))),
    };
    let n = pooled.len();
    let inv = 1.0 / (2.0 * h * h);
    let rows: Vec<Vec<f64>> = par::map_range(n, |i| {
        (0..n).map(|j| (-sq_dist(pooled[i], pooled[j]) * inv).exp()).collect()
    });
    let kernel = Kernel { rows, m: a.len() };
    let labels: Vec<bool> = (0..n).map(|i| i < a.len()).collect();
    let (unbiased, biased) = kernel.statistics(&labels);

    let exceed: usize = par::map_range(opts.permutations, |r| {
        let mut perm = labels.clone();
        perm.shuffle(&mut par::stream_rng(opts.seed, 100 + r as u64));
        usize::from(kernel.statistics(&perm).0 >= unbiased)
    })
    .into_iter()
    .sum();
    Ok(MmdResult {
        mmd2_unbiased: unbiased,
        mmd2_biased: biased,
        p_value: (1 + exceed) as f64 / (opts.permutations + 1) as f64,
        bandwidth: h,
    })
}

struct Kernel {
    rows: Vec<Vec<f64>>,
    m: usize,
}

impl Kernel {
    /// (unbiased, biased) MMD^2 for a labelling where `true` marks the first sample.
    fn statistics(&self, in_a: &[bool]) -> (f64, f64) {
        let (mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0);
        let (mut daa, mut dbb) = (0.0, 0.0);
        for (i, row) in self.rows.iter().enumerate() {
            let (mut ra, mut rb) = (0.0, 0.0);
            for (j, &k) in row.iter().enumerate() {
                if in_a[j] {
                    ra += k;
                } else {
                    rb += k;
                }
            }
            if in_a[i] {
                saa += ra;
                sab += rb;
                daa += row[i];
            } else {
                sbb += rb;
                dbb += row[i];
            }
        }
        let m = self.m as f64;
        let n = (self.rows.len() - self.m) as f64;
        let unbiased = (saa - daa) / (m * (m - 1.0)) + (sbb - dbb) / (n * (n - 1.0)) - 2.0 * sab / (m * n);
        let biased = saa / (m * m) + sbb / (n * n) - 2.0 * sab / (m * n);
        (unbiased, biased)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlOptions {
    pub grid_points: usize,
    pub bandwidth_scale: f64,
}

impl Default for KlOptions {
    fn default() -> Self {
        Self {
            grid_points: 512,
            bandwidth_scale: 1.06,
        }
    }
}

/// KL(p_a || p_b) between Gaussian KDEs of two one-dimensional samples,
/// evaluated on a shared grid after pooled standardization.
pub fn kl_gate(a: &[f64], b: &[f64], opts: &KlOptions) -> Result<f64> {
    if a.len() < 5 || b.len() < 5 {
        return Err(ExcirError::invalid("KL gate needs at least 5 samples per side"));
    }
    if opts.grid_points < 64 {
        return Err(ExcirError::invalid("KL gate needs at least 64 grid points"));
    }
    if !(opts.bandwidth_scale > 0.0) {
        return Err(ExcirError::invalid("bandwidth scale must be positive"));
    }
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (mu, sd) = mean_sd(&pooled);
    if sd == 0.0 {
        return Ok(0.0);
    }
    let za: Vec<f64> = a.iter().map(|v| (v - mu) / sd).collect();
    let zb: Vec<f64> = b.iter().map(|v| (v - mu) / sd).collect();
    let h = opts.bandwidth_scale * (a.len().min(b.len()) as f64).powf(-0.2);
    let g = opts.grid_points;
    let step = 8.0 / (g - 1) as f64;
    let grid: Vec<f64> = (0..g).map(|i| -4.0 + step * i as f64).collect();
    let p = kde(&za, &grid, h, step);
    let q = kde(&zb, &grid, h, step);
    let kl = p
        .iter()
        .zip(&q)
        .map(|(pi, qi)| pi * (pi / qi).ln())
        .sum::<f64>()
        * step;
    Ok(kl.max(0.0))
}

fn kde(sample: &[f64], grid: &[f64], h: f64, step: f64) -> Vec<f64> {
    let norm = 1.0 / (sample.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let mut dens: Vec<f64> = par::map_slice(grid, |&x| {
        let s: f64 = sample.iter().map(|v| (-0.5 * ((x - v) / h).powi(2)).exp()).sum();
        (s * norm).max(1e-12)
    });
    let mass: f64 = dens.iter().sum::<f64>() * step;
    dens.iter_mut().for_each(|d| *d /= mass);
    dens
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    Classification,
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskGap {
    pub risk_full: f64,
    pub risk_lw: f64,
    /// Accuracy ratio `acc_lw / acc_full` (classification) or `|risk_lw - risk_full|` (regression).
    pub ratio: f64,
}

/// Decision labels from an output block: argmax for several columns; for one
/// column, probabilities are cut at 0.5 and logits at 0.
pub fn decisions(pred: &OutputBlock) -> Vec<f64> {
    let v = pred.values();
    (0..pred.n_rows())
        .map(|r| {
            if pred.n_outputs() == 1 {
                let cut = if pred.kind() == OutputKind::Logit { 0.0 } else { 0.5 };
                f64::from(u8::from(v[(r, 0)] >= cut))
            } else {
                let row = v.row(r);
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
                    .0 as f64
            }
        })
        .collect()
}

fn risk(y_true: &[f64], pred: &OutputBlock, task: Task) -> f64 {
    match task {
        Task::Classification => {
            let d = decisions(pred);
            let wrong = d.iter().zip(y_true).filter(|(a, b)| a != b).count();
            wrong as f64 / y_true.len() as f64
        }
        Task::Regression => {
            pred.column(0).iter().zip(y_true).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / y_true.len() as f64
        }
    }
}

pub fn risk_gap(y_true: &[f64], pred_full: &OutputBlock, pred_lw: &OutputBlock, task: Task) -> Result<RiskGap> {
    if pred_full.n_rows() != y_true.len() || pred_lw.n_rows() != y_true.len() {
        return Err(ExcirError::mismatch("prediction rows", y_true.len(), pred_lw.n_rows().min(pred_full.n_rows())));
    }
    if y_true.is_empty() {
        return Err(ExcirError::Empty("evaluation labels".into()));
    }
    let risk_full = risk(y_true, pred_full, task);
    let risk_lw = risk(y_true, pred_lw, task);
    let ratio = match task {
        Task::Classification if risk_full < 1.0 => (1.0 - risk_lw) / (1.0 - risk_full),
        Task::Classification => 1.0,
        Task::Regression => (risk_lw - risk_full).abs(),
    };
    Ok(RiskGap { risk_full, risk_lw, ratio })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateThresholds {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub eps_acc: f64,
}

impl Default for GateThresholds {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.05,
            gamma: 0.1,
            eps_acc: 0.03,
        }
    }
}

impl GateThresholds {
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.gamma, self.eps_acc];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(ExcirError::invalid("thresholds must be finite and nonnegative"));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(ExcirError::invalid(format!("beta must lie in (0, 1), got {}", self.beta)));
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let t: Self = serde_json::from_str(s)?;
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateFlags {
    pub projection: bool,
    pub mmd: bool,
    pub kl: bool,
    pub risk: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LightweightReport {
    pub d_proj: f64,
    pub mmd2: f64,
    pub mmd_p: f64,
    pub kl: f64,
    pub risk_full: f64,
    pub risk_lw: f64,
    pub risk_ratio: f64,
    pub task: Task,
    pub passes: GateFlags,
    pub verdict: Verdict,
    pub thresholds: GateThresholds,
}

impl LightweightReport {
    /// Applies `thresholds` to already-computed statistics.
    pub fn judge(&self, thresholds: GateThresholds) -> (GateFlags, Verdict) {
        let risk = match self.task {
            Task::Classification => self.risk_ratio >= 1.0 - thresholds.eps_acc,
            Task::Regression => self.risk_ratio <= thresholds.eps_acc,
        };
        let flags = GateFlags {
            projection: self.d_proj <= thresholds.alpha,
            mmd: self.mmd_p >= thresholds.beta,
            kl: self.kl <= thresholds.gamma,
            risk,
        };
        let accept = flags.projection && flags.mmd && flags.kl && flags.risk;
        (flags, if accept { Verdict::Accept } else { Verdict::Reject })
    }

    pub fn accepted(&self) -> bool {
        self.verdict == Verdict::Accept
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct GateOptions {
    pub mmd: MmdOptions,
    pub kl: KlOptions,
    pub task: Task,
}

/// Runs every gate on full-model and lightweight-model outputs over a common
/// evaluation set. All statistics are always computed.
pub fn gate_check(
    y_true: &[f64],
    pred_full: &OutputBlock,
    pred_lw: &OutputBlock,
    thresholds: GateThresholds,
    opts: &GateOptions,
) -> Result<LightweightReport> {
    thresholds.validate()?;
    if pred_full.n_outputs() != pred_lw.n_outputs() {
        return Err(ExcirError::mismatch("output columns", pred_full.n_outputs(), pred_lw.n_outputs()));
    }
    let p = pred_full.n_outputs();
    let d_proj = if p == 1 {
        projection_distance(pred_full.column(0), pred_lw.column(0))?.d_proj
    } else {
        projection_distance_multi(pred_full.values(), pred_lw.values())?
    };
    let rows = |b: &OutputBlock| -> Vec<Vec<f64>> {
        (0..b.n_rows()).map(|r| b.values().row(r).iter().copied().collect()).collect()
    };
    let mmd = mmd_gate(&rows(pred_full), &rows(pred_lw), &opts.mmd)?;
    let mut kl = 0.0;
    for l in 0..p {
        kl += kl_gate(pred_full.column(l), pred_lw.column(l), &opts.kl)?;
    }
    let rg = risk_gap(y_true, pred_full, pred_lw, opts.task)?;
    let mut report = LightweightReport {
        d_proj,
        mmd2: mmd.mmd2_unbiased,
        mmd_p: mmd.p_value,
        kl,
        risk_full: rg.risk_full,
        risk_lw: rg.risk_lw,
        risk_ratio: rg.ratio,
        task: opts.task,
        passes: GateFlags {
            projection: false,
            mmd: false,
            kl: false,
            risk: false,
        },
        verdict: Verdict::Reject,
        thresholds,
    };
    let (flags, verdict) = report.judge(thresholds);
    report.passes = flags;
    report.verdict = verdict;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub c_proj: f64,
    pub k: f64,
    pub c_kl: f64,
}

impl Default for BoundConstants {
    fn default() -> Self {
        Self {
            c_proj: 1.0,
            k: 1.0,
            c_kl: 1.0,
        }
    }
}

/// Optional generalization term `C_gen h log(1/delta) / eps_gen^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationTerm {
    pub c_gen: f64,
    pub capacity: f64,
    pub eps_gen: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateRequirements {
    pub proj: u64,
    pub mmd: u64,
    pub kl: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generalization: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSizeBounds {
    pub per_gate: GateRequirements,
    pub n_lb: u64,
    pub n_ub: Option<u64>,
    pub window: Option<(u64, u64)>,
    /// Chosen size: the top of the window.
    pub selected: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constants: Option<BoundConstants>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<usize>,
}

impl SampleSizeBounds {
    /// Combines externally supplied per-gate requirements.
    pub fn from_requirements(per_gate: GateRequirements) -> Self {
        let n_lb = [per_gate.proj, per_gate.mmd, per_gate.kl, per_gate.generalization.unwrap_or(0)]
            .into_iter()
            .max()
            .unwrap_or(1)
            .max(1);
        Self {
            per_gate,
            n_lb,
            n_ub: None,
            window: None,
            selected: None,
            constants: None,
            delta: None,
            q: None,
        }
    }

    /// Sets the budget cap and the resulting feasible window.
    pub fn with_upper_bound(mut self, n_ub: u64) -> Self {
        self.n_ub = Some(n_ub);
        self.window = (self.n_lb <= n_ub).then_some((self.n_lb, n_ub));
        self.selected = self.window.map(|w| w.1);
        self
    }

    pub fn is_feasible(&self) -> bool {
        self.window.is_some()
    }
}

fn ceil_u64(v: f64) -> u64 {
    v.ceil().max(1.0) as u64
}

/// Closed-form sufficient sizes for each gate and their maximum. A zero or
/// infinite epsilon disables nothing; all three terms are always evaluated.
pub fn sample_size_lower_bound(
    eps_proj: f64,
    eps_mmd: f64,
    eps_kl: f64,
    delta: f64,
    q: usize,
    constants: BoundConstants,
    generalization: Option<GeneralizationTerm>,
) -> Result<SampleSizeBounds> {
    if [eps_proj, eps_mmd, eps_kl].iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(ExcirError::invalid("all epsilons must be positive"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(ExcirError::invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    if q == 0 {
        return Err(ExcirError::invalid("output dimension q must be at least 1"));
    }
    let BoundConstants { c_proj, k, c_kl } = constants;
    if [c_proj, k, c_kl].iter().any(|c| !(*c > 0.0 && c.is_finite())) {
        return Err(ExcirError::invalid("bound constants must be positive"));
    }
    let proj = ceil_u64(c_proj * c_proj * (3.0 / delta).ln() / (eps_proj * eps_proj));
    let mmd = ceil_u64(16.0 * k * k * (6.0 / delta).ln() / eps_mmd);
    let kl = ceil_u64((c_kl * (3.0 / delta).ln() / eps_kl).powf((4.0 + q as f64) / 4.0));
    let gen = match generalization {
        None => None,
        Some(g) => {
            if !(g.c_gen > 0.0 && g.capacity > 0.0 && g.eps_gen > 0.0) {
                return Err(ExcirError::invalid("generalization term parameters must be positive"));
            }
            Some(ceil_u64(g.c_gen * g.capacity * (1.0 / delta).ln() / (g.eps_gen * g.eps_gen)))
        }
    };
    let mut b = SampleSizeBounds::from_requirements(GateRequirements {
        proj,
        mmd,
        kl,
        generalization: gen,
    });
    b.constants = Some(constants);
    b.delta = Some(delta);
    b.q = Some(q);
    Ok(b)
}

/// Largest profiled size whose measured time fits in `t_max`; 0 if none does.
pub fn budget_upper_bound(profile: &[(u64, f64)], t_max: f64) -> Result<u64> {
    if profile.is_empty() {
        return Err(ExcirError::Empty("runtime profile".into()));
    }
    for w in profile.windows(2) {
        if w[1].0 <= w[0].0 || w[1].1 < w[0].1 {
            return Err(ExcirError::invalid(
                "profile sizes must increase strictly and times must not decrease",
            ));
        }
    }
    Ok(profile
        .iter()
        .filter(|(_, t)| *t <= t_max)
        .map(|(n, _)| *n)
        .max()
        .unwrap_or(0))
}

/// A subsample that passed (or, after `max_attempts`, last failed) the gates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptedSubsample {
    /// Row indices into the pool.
    pub rows: Vec<usize>,
    pub seed: u64,
    pub attempts: usize,
    pub report: LightweightReport,
}

/// Reference models trained on the full pool and on each candidate subsample,
/// compared on a common evaluation set.
pub struct GateSetup<'a> {
    pub pool_x: &'a DataMatrix,
    pub pool_labels: &'a [f64],
    pub eval_x: &'a DataMatrix,
    pub eval_labels: &'a [f64],
    pub train: TrainConfig,
    pub thresholds: GateThresholds,
    pub gates: GateOptions,
}

impl GateSetup<'_> {
    /// Draws subsamples with seeds `seed, seed + 1, ...` until one is accepted.
    pub fn accepted_subsample(
        &self,
        fraction: f64,
        seed: u64,
        strata: Option<&[f64]>,
        max_attempts: usize,
    ) -> Result<AcceptedSubsample> {
        if max_attempts == 0 {
            return Err(ExcirError::invalid("max_attempts must be at least 1"));
        }
        let task = self.gates.task;
        let full = train_reference(self.pool_x, self.pool_labels, task, self.train)?;
        let pred_full = full.predict_output(self.eval_x)?;
        let y_eval = full.encode_labels(self.eval_labels);
        let mut last = None;
        for attempt in 0..max_attempts {
            let s = seed.wrapping_add(attempt as u64);
            let rows = subsample_rows(self.pool_x.n_rows(), fraction, s, strata)?;
            let lw_x = self.pool_x.select_rows(&rows)?;
            let lw_y: Vec<f64> = rows.iter().map(|&r| self.pool_labels[r]).collect();
            let lw = match train_reference(&lw_x, &lw_y, task, self.train) {
                Ok(m) => m,
                Err(e) if !e.is_numerical() && attempt + 1 < max_attempts => continue,
                Err(e) => return Err(e),
            };
            let pred_lw = lw.predict_output(self.eval_x)?;
            let report = gate_check(&y_eval, &pred_full, &pred_lw, self.thresholds, &self.gates)?;
            let accepted = report.accepted();
            last = Some(AcceptedSubsample {
                rows,
                seed: s,
                attempts: attempt + 1,
                report,
            });
            if accepted {
                break;
            }
        }
        last.ok_or_else(|| ExcirError::Degenerate("no subsample could be trained".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_identity_and_affine() {
        let y = [1.0, 2.0, 4.0, 3.5];
        assert_eq!(projection_distance(&y, &y).unwrap().d_proj, 0.0);
        let z: Vec<f64> = y.iter().map(|v| 3.0 * v - 7.0).collect();
        assert!(projection_distance(&y, &z).unwrap().d_proj < 1e-14);
        assert!(projection_distance(&[0.0, 0.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn budget_bound_edges() {
        let prof = [(3000, 4.0), (5000, 7.0), (6000, 9.0), (8000, 12.0)];
        assert_eq!(budget_upper_bound(&prof, 10.0).unwrap(), 6000);
        assert_eq!(budget_upper_bound(&prof, 12.0).unwrap(), 8000);
        assert_eq!(budget_upper_bound(&prof, 3.0).unwrap(), 0);
        assert!(budget_upper_bound(&[(5, 1.0), (4, 2.0)], 3.0).is_err());
    }

    #[test]
    fn empty_window_when_lb_exceeds_ub() {
        let b = SampleSizeBounds::from_requirements(GateRequirements {
            proj: 10,
            mmd: 20,
            kl: 5,
            generalization: None,
        })
        .with_upper_bound(15);
        assert!(!b.is_feasible());
        assert_eq!(b.selected, None);
    }

    #[test]
    fn risk_gap_arithmetic() {
        let y = vec![1.0; 10];
        let full = OutputBlock::scalar([1.0; 7].into_iter().chain([0.0; 3]).collect(), OutputKind::Probability).unwrap();
        let lw = OutputBlock::scalar([1.0; 6].into_iter().chain([0.0; 4]).collect(), OutputKind::Probability).unwrap();
        let g = risk_gap(&y, &full, &lw, Task::Classification).unwrap();
        assert!((g.ratio - 0.6 / 0.7).abs() < 1e-12);
        let g = risk_gap(&y, &full, &full, Task::Classification).unwrap();
        assert_eq!(g.ratio, 1.0);
    }

    #[test]
    fn thresholds_validation() {
        assert!(GateThresholds::from_json(r#"{"alpha":0.5,"beta":0.05,"gamma":0.1,"eps_acc":0.03}"#).is_ok());
        assert!(GateThresholds::from_json(r#"{"alpha":0.5,"beta":1.5,"gamma":0.1,"eps_acc":0.03}"#).is_err());
        assert!(GateThresholds::from_json(r#"{"alpha":-1,"beta":0.5,"gamma":0.1,"eps_acc":0.03}"#).is_err());
    }

    #[test]
    fn subsample_sizes() {
        let rows = subsample_rows(4800, 0.2, 1, None).unwrap();
        assert_eq!(rows.len(), 960);
        assert_eq!(subsample_rows(10, 1.0, 1, None).unwrap(), (0..10).collect::<Vec<_>>());
        assert!(subsample_rows(10, 0.0, 1, None).is_err());
        assert!(subsample_rows(10, 0.1, 1, None).is_err());
    }
}
