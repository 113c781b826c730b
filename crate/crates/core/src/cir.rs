//! Scalar Correlation Impact Ratio.
//!
//! Two forms are provided:
//!
//! * **mid-mean** (default): both vectors are centred on the shared pivot
//!   `m = (mean(f) + mean(y)) / 2` and
//!   `eta = n [(mean(f) - m)^2 + (mean(y) - m)^2] / (sum (f_j - m)^2 + sum (y_j - m)^2)`.
//!   Equivalently `eta = (n/2) d^2 / (S_f + S_y + (n/2) d^2)` with
//!   `d = mean(f) - mean(y)` and `S_f`, `S_y` the own-mean scatters, which is
//!   how the streaming path evaluates it from running sums.
//! * **correlation**: `eta = r^2 / (1 + r^2)` with `r` the Pearson
//!   correlation; it lies in `[0, 1/2]` and orders features exactly as `r^2`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data_io::{DataMatrix, OutputBlock};
use crate::error::{ExcirError, Result};
use crate::par;

/// Rows per shard when building a [`MomentAccumulator`] from a matrix.
const SHARD_ROWS: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CirMode {
    #[default]
    MidMean,
    Correlation,
}

impl std::str::FromStr for CirMode {
    type Err = ExcirError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "midmean" => Ok(CirMode::MidMean),
            "correlation" | "corr" => Ok(CirMode::Correlation),
            _ => Err(ExcirError::invalid(format!("unknown CIR mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreFlag {
    /// The feature column has zero spread.
    Constant,
    /// The score is undefined for another reason (e.g. constant output in
    /// correlation mode).
    Degenerate,
}

/// Intermediate quantities of the mid-mean form, all about the pivot `m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct CirDiagnostics {
    pub feature_mean: f64,
    pub output_mean: f64,
    pub mid_mean: f64,
    /// `feature_mean - output_mean`.
    pub delta: f64,
    /// Scatter of the feature about `mid_mean`.
    pub scatter_x: f64,
    /// Scatter of the output about `mid_mean`.
    pub scatter_y: f64,
    pub numerator: f64,
    pub denominator: f64,
    /// Pearson correlation, filled in correlation mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correlation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CirScore {
    pub feature: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub eta: f64,
    pub mode: CirMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flag: Option<ScoreFlag>,
    pub diagnostics: CirDiagnostics,
}

impl CirScore {
    fn flagged(feature: usize, mode: CirMode, flag: ScoreFlag) -> Self {
        Self {
            feature,
            name: None,
            eta: 0.0,
            mode,
            flag: Some(flag),
            diagnostics: CirDiagnostics::default(),
        }
    }
}

/// Running first and second moments of every feature and of a scalar output.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentAccumulator {
    pub n: usize,
    pub sum_x: Vec<f64>,
    pub sumsq_x: Vec<f64>,
    pub sum_y: f64,
    pub sumsq_y: f64,
}

impl MomentAccumulator {
    pub fn new(k: usize) -> Self {
        Self {
            n: 0,
            sum_x: vec![0.0; k],
            sumsq_x: vec![0.0; k],
            sum_y: 0.0,
            sumsq_y: 0.0,
        }
    }

    pub fn n_features(&self) -> usize {
        self.sum_x.len()
    }

    /// Adds one observation.
    pub fn push(&mut self, row: &[f64], output: f64) -> Result<()> {
        if row.len() != self.n_features() {
            return Err(ExcirError::mismatch("row length", self.n_features(), row.len()));
        }
        if !output.is_finite() || row.iter().any(|v| !v.is_finite()) {
            return Err(ExcirError::NonFinite {
                row: self.n,
                column: "accumulator input".into(),
            });
        }
        for (i, &v) in row.iter().enumerate() {
            self.sum_x[i] += v;
            self.sumsq_x[i] += v * v;
        }
        self.sum_y += output;
        self.sumsq_y += output * output;
        self.n += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &MomentAccumulator) -> Result<()> {
        if other.n_features() != self.n_features() {
            return Err(ExcirError::mismatch(
                "accumulator width",
                self.n_features(),
                other.n_features(),
            ));
        }
        for i in 0..self.n_features() {
            self.sum_x[i] += other.sum_x[i];
            self.sumsq_x[i] += other.sumsq_x[i];
        }
        self.sum_y += other.sum_y;
        self.sumsq_y += other.sumsq_y;
        self.n += other.n;
        Ok(())
    }

    /// One scan over the rows of `data`, sharded into fixed row ranges that
    /// are merged in order, so the sums do not depend on the thread count.
    pub fn from_data(data: &DataMatrix, y: &[f64]) -> Result<Self> {
        if y.len() != data.n_rows() {
            return Err(ExcirError::mismatch("output rows", data.n_rows(), y.len()));
        }
        let n = data.n_rows();
        let k = data.n_features();
        let shards = n.div_ceil(SHARD_ROWS);
        let parts = par::map_range(shards, |s| {
            let lo = s * SHARD_ROWS;
            let hi = (lo + SHARD_ROWS).min(n);
            let mut acc = MomentAccumulator::new(k);
            for i in 0..k {
                let col = &data.column(i)[lo..hi];
                let (mut s1, mut s2) = (0.0, 0.0);
                for &v in col {
                    s1 += v;
                    s2 += v * v;
                }
                acc.sum_x[i] = s1;
                acc.sumsq_x[i] = s2;
            }
            for &v in &y[lo..hi] {
                acc.sum_y += v;
                acc.sumsq_y += v * v;
            }
            acc.n = hi - lo;
            acc
        });
        let mut total = MomentAccumulator::new(k);
        for p in &parts {
            total.merge(p)?;
        }
        Ok(total)
    }

    /// Mid-mean CIR of feature `i` from the running sums alone.
    pub fn midmean(&self, i: usize) -> Result<CirScore> {
        let mut s = midmean_from_sums(
            self.n,
            self.sum_x[i],
            self.sumsq_x[i],
            self.sum_y,
            self.sumsq_y,
        )?;
        s.feature = i;
        Ok(s)
    }
}

/// Own-mean scatter `sum (x - mean)^2` from `sum x` and `sum x^2`.
fn own_scatter(n: f64, s: f64, q: f64) -> f64 {
    (q - s * s / n).max(0.0)
}

fn is_degenerate_denominator(den: f64, n: usize, scale: f64) -> bool {
    let tol = n as f64 * (16.0 * f64::EPSILON * scale.max(1.0)).powi(2);
    den <= tol
}

pub(crate) fn midmean_from_sums(n: usize, sx: f64, qx: f64, sy: f64, qy: f64) -> Result<CirScore> {
    if n < 2 {
        return Err(ExcirError::invalid("CIR requires at least 2 observations"));
    }
    let nf = n as f64;
    let fm = sx / nf;
    let ym = sy / nf;
    let m = 0.5 * (fm + ym);
    let delta = fm - ym;
    let sf = own_scatter(nf, sx, qx);
    let syy = own_scatter(nf, sy, qy);
    let numerator = 0.5 * nf * delta * delta;
    let denominator = sf + syy + numerator;
    if is_degenerate_denominator(denominator, n, fm.abs().max(ym.abs())) {
        return Err(ExcirError::Degenerate(
            "feature and output are constant and equal; CIR denominator is zero".into(),
        ));
    }
    let eta = (numerator / denominator).clamp(0.0, 1.0);
    Ok(CirScore {
        feature: 0,
        name: None,
        eta,
        mode: CirMode::MidMean,
        flag: None,
        diagnostics: CirDiagnostics {
            feature_mean: fm,
            output_mean: ym,
            mid_mean: m,
            delta,
            scatter_x: sf + nf * (fm - m).powi(2),
            scatter_y: syy + nf * (ym - m).powi(2),
            numerator,
            denominator,
            correlation: None,
        },
    })
}

fn check_pair(f: &[f64], y: &[f64]) -> Result<()> {
    if f.len() != y.len() {
        return Err(ExcirError::mismatch("paired vector length", f.len(), y.len()));
    }
    if f.len() < 2 {
        return Err(ExcirError::invalid("CIR requires at least 2 observations"));
    }
    if f.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(ExcirError::NonFinite {
            row: 0,
            column: "CIR input".into(),
        });
    }
    Ok(())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Mid-mean CIR computed directly (two passes: means, then scatter about the pivot).
pub fn cir_midmean(f: &[f64], y: &[f64]) -> Result<CirScore> {
    check_pair(f, y)?;
    let n = f.len();
    let nf = n as f64;
    let fm = mean(f);
    let ym = mean(y);
    let m = 0.5 * (fm + ym);
    let numerator = nf * ((fm - m).powi(2) + (ym - m).powi(2));
    let scatter_x: f64 = f.iter().map(|v| (v - m) * (v - m)).sum();
    let scatter_y: f64 = y.iter().map(|v| (v - m) * (v - m)).sum();
    let denominator = scatter_x + scatter_y;
    if is_degenerate_denominator(denominator, n, fm.abs().max(ym.abs())) {
        return Err(ExcirError::Degenerate(
            "feature and output are constant and equal; CIR denominator is zero".into(),
        ));
    }
    Ok(CirScore {
        feature: 0,
        name: None,
        eta: (numerator / denominator).clamp(0.0, 1.0),
        mode: CirMode::MidMean,
        flag: None,
        diagnostics: CirDiagnostics {
            feature_mean: fm,
            output_mean: ym,
            mid_mean: m,
            delta: fm - ym,
            scatter_x,
            scatter_y,
            numerator,
            denominator,
            correlation: None,
        },
    })
}

/// Population Pearson correlation; `None` if either side has zero spread.
pub fn pearson(f: &[f64], y: &[f64]) -> Option<f64> {
    let fm = mean(f);
    let ym = mean(y);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in f.iter().zip(y) {
        let (da, db) = (a - fm, b - ym);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    let tiny = |ss: f64, m: f64| ss <= f.len() as f64 * (1e-14 * m.abs().max(1.0)).powi(2);
    if tiny(sxx, fm) || tiny(syy, ym) {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Correlation-form CIR `r^2 / (1 + r^2)`.
pub fn cir_correlation(f: &[f64], y: &[f64]) -> Result<CirScore> {
    check_pair(f, y)?;
    let r = pearson(f, y).ok_or_else(|| {
        ExcirError::Degenerate("zero-variance input in correlation-mode CIR".into())
    })?;
    // The mid-mean diagnostics are still reported for inspection.
    let mut score = cir_midmean(f, y).unwrap_or_else(|_| CirScore::flagged(0, CirMode::MidMean, ScoreFlag::Degenerate));
    score.flag = None;
    score.mode = CirMode::Correlation;
    score.eta = r * r / (1.0 + r * r);
    score.diagnostics.correlation = Some(r);
    Ok(score)
}

pub fn cir(f: &[f64], y: &[f64], mode: CirMode) -> Result<CirScore> {
    match mode {
        CirMode::MidMean => cir_midmean(f, y),
        CirMode::Correlation => cir_correlation(f, y),
    }
}

/// Sorts descending by `eta`, breaking ties by ascending feature index.
pub fn sort_scores(scores: &mut [CirScore]) {
    scores.sort_by(|a, b| b.eta.total_cmp(&a.eta).then(a.feature.cmp(&b.feature)));
}

/// Feature indices ordered by descending `eta` (ties by index).
pub fn ranking(scores: &[CirScore]) -> Vec<usize> {
    let mut s = scores.to_vec();
    sort_scores(&mut s);
    s.iter().map(|s| s.feature).collect()
}

/// `eta` values indexed by feature (inverse of the sorted order).
pub fn eta_by_feature(scores: &[CirScore], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; k];
    for s in scores {
        out[s.feature] = s.eta;
    }
    out
}

fn column_is_constant(x: &[f64]) -> bool {
    let first = x[0];
    x.iter().all(|&v| v == first)
}

/// Scores every column of `data` against the scalar output `y` and returns
/// the list sorted by descending `eta`.
///
/// Constant columns get `eta = 0` with [`ScoreFlag::Constant`] instead of
/// failing the batch. In mid-mean mode the scores come from a single
/// [`MomentAccumulator`] pass.
pub fn score_all_features(data: &DataMatrix, y: &[f64], mode: CirMode) -> Result<Vec<CirScore>> {
    if y.len() != data.n_rows() {
        return Err(ExcirError::mismatch("output rows", data.n_rows(), y.len()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(ExcirError::NonFinite {
            row: 0,
            column: "output".into(),
        });
    }
    let k = data.n_features();
    let mut scores: Vec<CirScore> = match mode {
        CirMode::MidMean => {
            let acc = MomentAccumulator::from_data(data, y)?;
            (0..k)
                .map(|i| {
                    if column_is_constant(data.column(i)) {
                        return CirScore::flagged(i, mode, ScoreFlag::Constant);
                    }
                    acc.midmean(i)
                        .unwrap_or_else(|_| CirScore::flagged(i, mode, ScoreFlag::Degenerate))
                })
                .collect()
        }
        CirMode::Correlation => par::map_range(k, |i| {
            let col = data.column(i);
            if column_is_constant(col) {
                return CirScore::flagged(i, mode, ScoreFlag::Constant);
            }
            match cir_correlation(col, y) {
                Ok(mut s) => {
                    s.feature = i;
                    s
                }
                Err(_) => CirScore::flagged(i, mode, ScoreFlag::Degenerate),
            }
        }),
    };
    for s in &mut scores {
        s.name = Some(data.feature_names()[s.feature].clone());
    }
    sort_scores(&mut scores);
    Ok(scores)
}

/// [`score_all_features`] against a `p = 1` output block.
pub fn score_output(data: &DataMatrix, y: &OutputBlock, mode: CirMode) -> Result<Vec<CirScore>> {
    y.check_rows(data)?;
    if y.n_outputs() != 1 {
        return Err(ExcirError::mismatch("output columns", 1, y.n_outputs()));
    }
    score_all_features(data, y.column(0), mode)
}

/// Largest change of mid-mean `eta` when one output entry is moved by
/// `+perturbation` or `-perturbation`, over `trials` uniformly drawn positions.
pub fn one_point_sensitivity(
    f: &[f64],
    y: &[f64],
    perturbation: f64,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    if trials == 0 {
        return Err(ExcirError::invalid("trials must be at least 1"));
    }
    if !perturbation.is_finite() {
        return Err(ExcirError::invalid("perturbation must be finite"));
    }
    let base = SensitivityBase::new(f, y)?;
    let mut rng = par::stream_rng(seed, 0);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let j = rng.random_range(0..y.len());
        worst = worst.max(base.max_change_at(y, j, perturbation)?);
    }
    Ok(worst)
}

/// Same as [`one_point_sensitivity`] but visiting every position once.
pub fn one_point_sensitivity_exhaustive(f: &[f64], y: &[f64], perturbation: f64) -> Result<f64> {
    let base = SensitivityBase::new(f, y)?;
    let mut worst = 0.0f64;
    for j in 0..y.len() {
        worst = worst.max(base.max_change_at(y, j, perturbation)?);
    }
    Ok(worst)
}

struct SensitivityBase {
    n: usize,
    sx: f64,
    qx: f64,
    sy: f64,
    qy: f64,
    eta: f64,
}

impl SensitivityBase {
    fn new(f: &[f64], y: &[f64]) -> Result<Self> {
        check_pair(f, y)?;
        let (sx, qx) = (f.iter().sum(), f.iter().map(|v| v * v).sum());
        let (sy, qy) = (y.iter().sum(), y.iter().map(|v| v * v).sum());
        // Base and edited scores go through the same running-sum formula.
        let eta = midmean_from_sums(f.len(), sx, qx, sy, qy)?.eta;
        Ok(Self {
            n: f.len(),
            sx,
            qx,
            sy,
            qy,
            eta,
        })
    }

    fn max_change_at(&self, y: &[f64], j: usize, delta: f64) -> Result<f64> {
        let mut worst = 0.0f64;
        for s in [delta, -delta] {
            let yj = y[j];
            let sy = self.sy + s;
            // (y_j + s)^2 - y_j^2, written so that s = 0 leaves the sums untouched.
            let qy = self.qy + s * (2.0 * yj + s);
            let eta = midmean_from_sums(self.n, self.sx, self.qx, sy, qy)?.eta;
            worst = worst.max((eta - self.eta).abs());
        }
        Ok(worst)
    }
}

/// Gaussian mutual-information link for a correlation `rho`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiLinkValues {
    pub rho: f64,
    /// `-1/2 ln(1 - rho^2)` in nats.
    pub mutual_information: f64,
    /// `1 - exp(-2 I)`, equal to `rho^2`.
    pub nmi: f64,
    /// `rho^2 / (2 - rho^2)`, equal to `nmi / (2 - nmi)`.
    pub upper_bound: f64,
}

pub fn mi_link(rho: f64) -> Result<MiLinkValues> {
    if !rho.is_finite() || rho.abs() >= 1.0 {
        return Err(ExcirError::invalid(format!("|rho| must be < 1, got {rho}")));
    }
    let r2 = rho * rho;
    let mi = -0.5 * (-r2).ln_1p();
    let nmi = -(-2.0 * mi).exp_m1();
    Ok(MiLinkValues {
        rho,
        mutual_information: mi,
        nmi,
        upper_bound: nmi / (2.0 - nmi),
    })
}

/// Upper bound `(1 - e^{-2I}) / (1 + e^{-2I})` expressed directly in the
/// mutual information; tends to 1 as `I` grows.
pub fn mi_upper_bound_from_information(mi: f64) -> f64 {
    let e = (-2.0 * mi).exp();
    (1.0 - e) / (1.0 + e)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiBoundCheck {
    pub rho: f64,
    pub n: usize,
    pub reps: usize,
    pub mean_eta: f64,
    /// Standard error of `mean_eta` across replicates.
    pub std_error: f64,
    pub bound: f64,
    /// `mean_eta <= bound + 3 * std_error`.
    pub holds: bool,
}

/// Monte-Carlo check of the mid-mean score against `rho^2 / (2 - rho^2)` on
/// standard bivariate Gaussian samples with correlation `rho`.
pub fn mi_bound_check(rho: f64, n: usize, reps: usize, seed: u64) -> Result<MiBoundCheck> {
    let link = mi_link(rho)?;
    if n < 4 {
        return Err(ExcirError::invalid("n must be at least 4"));
    }
    if reps < 2 {
        return Err(ExcirError::invalid("reps must be at least 2"));
    }
    // Cholesky factor of [[1, rho], [rho, 1]].
    let c = (1.0 - rho * rho).sqrt();
    let etas: Vec<f64> = par::map_range(reps, |r| {
        let mut rng = par::stream_rng(seed, r as u64);
        let mut f = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            f.push(a);
            y.push(rho * a + c * b);
        }
        cir_midmean(&f, &y).map(|s| s.eta).unwrap_or(0.0)
    });
    let m = etas.iter().sum::<f64>() / reps as f64;
    let var = etas.iter().map(|e| (e - m).powi(2)).sum::<f64>() / reps as f64;
    let se = (var / reps as f64).sqrt();
    Ok(MiBoundCheck {
        rho,
        n,
        reps,
        mean_eta: m,
        std_error: se,
        bound: link.upper_bound,
        holds: m <= link.upper_bound + 3.0 * se,
    })
}
