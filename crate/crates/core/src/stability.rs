//! Bootstrap confidence intervals, rank agreement and significance tests.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cir::{self, CirMode};
use crate::data_io::{mean_sd, DataMatrix, OutputBlock};
use crate::error::{ExcirError, Result};
use crate::group::{self, BlockOptions, BlockSpec};
use crate::par;

/// Feature order by descending score, ties by ascending index.
pub fn rank_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Scorer {
    PerFeature,
    Block(BlockSpec, BlockOptions),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct BootstrapOptions {
    /// Resample within quartiles of the first output column.
    pub stratified: bool,
    /// Also report 2.5%/97.5% percentile intervals.
    pub percentile: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureInterval {
    pub label: String,
    pub mean: f64,
    pub sd: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub width: f64,
    /// `width / |mean|`; absent when the mean is zero.
    pub relative_width: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub percentile: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub b: usize,
    /// Replicates dropped because the scorer failed on them.
    pub excluded: usize,
    pub intervals: Vec<FeatureInterval>,
    /// Kept replicates, one row of `k` scores each, in replicate order.
    pub replicates: Vec<Vec<f64>>,
}

impl BootstrapSummary {
    pub fn means(&self) -> Vec<f64> {
        self.intervals.iter().map(|i| i.mean).collect()
    }
}

fn quartile_strata(y: &[f64]) -> Vec<Vec<usize>> {
    let order = rank_order(y);
    let n = y.len();
    let mut strata = vec![Vec::new(); 4];
    // descending order, so the top quarter lands in stratum 0
    for (pos, &i) in order.iter().enumerate() {
        strata[(pos * 4 / n).min(3)].push(i);
    }
    strata.into_iter().filter(|s| !s.is_empty()).collect()
}

fn score_vector(
    data: &DataMatrix,
    y: &OutputBlock,
    mode: CirMode,
    scorer: &Scorer,
) -> Result<(Vec<String>, Vec<f64>)> {
    match scorer {
        Scorer::PerFeature => {
            let scores = cir::score_output(data, y, mode)?;
            Ok((data.feature_names().to_vec(), cir::eta_by_feature(&scores, data.n_features())))
        }
        Scorer::Block(spec, opts) => {
            let opts = BlockOptions { mode, ..*opts };
            let mut g = group::block_cir(data, y, spec, &opts)?;
            g.sort_by(|a, b| a.name.cmp(&b.name));
            Ok((g.iter().map(|s| s.name.clone()).collect(), g.iter().map(|s| s.eta.eta).collect()))
        }
    }
}

/// `b` bootstrap replicates of the scores with normal-approximation 95% CIs.
/// Replicate `r` draws from RNG stream `r`, so results do not depend on the
/// thread count.
pub fn bootstrap_scores(
    data: &DataMatrix,
    y: &OutputBlock,
    b: usize,
    seed: u64,
    mode: CirMode,
    scorer: &Scorer,
    opts: BootstrapOptions,
) -> Result<BootstrapSummary> {
    if b < 2 {
        return Err(ExcirError::invalid("bootstrap needs at least 2 replicates"));
    }
    y.check_rows(data)?;
    let n = data.n_rows();
    let (labels, _) = score_vector(data, y, mode, scorer)?;
    let strata = opts.stratified.then(|| quartile_strata(y.column(0)));
    let results = par::map_range(b, |r| {
        let mut rng = par::stream_rng(seed, r as u64);
        let rows: Vec<usize> = match &strata {
            None => (0..n).map(|_| rng.random_range(0..n)).collect(),
            Some(groups) => groups
                .iter()
                .flat_map(|g| (0..g.len()).map(|_| g[rng.random_range(0..g.len())]).collect::<Vec<_>>())
                .collect(),
        };
        let d = data.select_rows(&rows)?;
        let yy = y.select_rows(&rows)?;
        score_vector(&d, &yy, mode, scorer).map(|(_, v)| v)
    });
    let replicates: Vec<Vec<f64>> = results.into_iter().filter_map(|r| r.ok()).collect();
    let excluded = b - replicates.len();
    if excluded > 0 {
        log::warn!("{excluded} of {b} bootstrap replicates were degenerate and excluded");
    }
    if replicates.len() < 2 {
        return Err(ExcirError::Degenerate("fewer than 2 usable bootstrap replicates".into()));
    }
    let intervals = labels
        .into_iter()
        .enumerate()
        .map(|(j, label)| {
            let col: Vec<f64> = replicates.iter().map(|r| r[j]).collect();
            let (mean, sd) = mean_sd(&col);
            let (ci_lo, ci_hi) = (mean - 1.96 * sd, mean + 1.96 * sd);
            let width = ci_hi - ci_lo;
            FeatureInterval {
                label,
                mean,
                sd,
                ci_lo,
                ci_hi,
                width,
                relative_width: (mean != 0.0).then(|| width / mean.abs()),
                percentile: opts.percentile.then(|| (quantile(&col, 0.025), quantile(&col, 0.975))),
            }
        })
        .collect();
    Ok(BootstrapSummary {
        b,
        excluded,
        intervals,
        replicates,
    })
}

/// Linear-interpolation quantile.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankAgreement {
    pub kendall_tau_full: f64,
    pub kendall_tau_head: f64,
    pub head_k: usize,
    pub jaccard_topk: f64,
    pub spearman_rho: f64,
}

/// Kendall tau-b with tie correction; `None` when either side is all tied.
pub fn kendall_tau_b(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len();
    let (mut conc, mut disc, mut ties_a, mut ties_b) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let da = a[i].total_cmp(&a[j]) as i64;
            let db = b[i].total_cmp(&b[j]) as i64;
            match (da, db) {
                (0, 0) => {}
                (0, _) => ties_a += 1,
                (_, 0) => ties_b += 1,
                _ if da == db => conc += 1,
                _ => disc += 1,
            }
        }
    }
    let n0 = (conc + disc) as f64;
    let denom = ((n0 + ties_a as f64) * (n0 + ties_b as f64)).sqrt();
    (denom > 0.0).then(|| (conc - disc) as f64 / denom)
}

/// Average ranks (1-based) with ties sharing the mean rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &t in &idx[i..=j] {
            ranks[t] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman correlation on average ranks; `None` when either side is all tied.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    // ranks are half-integers around (n+1)/2, so these sums are exact
    let centre = (a.len() as f64 + 1.0) / 2.0;
    let ra: Vec<f64> = average_ranks(a).into_iter().map(|r| r - centre).collect();
    let rb: Vec<f64> = average_ranks(b).into_iter().map(|r| r - centre).collect();
    let sab: f64 = ra.iter().zip(&rb).map(|(x, y)| x * y).sum();
    let saa: f64 = ra.iter().map(|x| x * x).sum();
    let sbb: f64 = rb.iter().map(|x| x * x).sum();
    (saa > 0.0 && sbb > 0.0).then(|| (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let sa: std::collections::BTreeSet<_> = a.iter().collect();
    let sb: std::collections::BTreeSet<_> = b.iter().collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        return 1.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}

/// Kendall tau over the union of both top-`k` sets. A feature missing from
/// one top-`k` list takes rank `k` there, tied behind every listed feature.
pub fn head_kendall_tau(a: &[f64], b: &[f64], k: usize) -> f64 {
    let ta: Vec<usize> = rank_order(a).into_iter().take(k).collect();
    let tb: Vec<usize> = rank_order(b).into_iter().take(k).collect();
    let mut union: Vec<usize> = ta.iter().chain(&tb).copied().collect();
    union.sort_unstable();
    union.dedup();
    let pos = |list: &[usize], f: usize| list.iter().position(|&x| x == f).unwrap_or(k) as f64;
    let ra: Vec<f64> = union.iter().map(|&f| -pos(&ta, f)).collect();
    let rb: Vec<f64> = union.iter().map(|&f| -pos(&tb, f)).collect();
    kendall_tau_b(&ra, &rb).unwrap_or(1.0)
}

pub fn rank_agreement(a: &[f64], b: &[f64], head_k: usize) -> Result<RankAgreement> {
    if a.len() != b.len() {
        return Err(ExcirError::mismatch("score vector length", a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(ExcirError::invalid("rank agreement needs at least 2 features"));
    }
    if head_k == 0 || head_k > a.len() {
        return Err(ExcirError::invalid(format!("head_k must lie in 1..={}, got {head_k}", a.len())));
    }
    let degenerate = || ExcirError::Degenerate("degenerate ranking: all scores tied".into());
    let kendall_tau_full = kendall_tau_b(a, b).ok_or_else(degenerate)?;
    let spearman_rho = spearman(a, b).ok_or_else(degenerate)?;
    let ta: Vec<usize> = rank_order(a).into_iter().take(head_k).collect();
    let tb: Vec<usize> = rank_order(b).into_iter().take(head_k).collect();
    Ok(RankAgreement {
        kendall_tau_full,
        kendall_tau_head: head_kendall_tau(a, b, head_k),
        head_k,
        jaccard_topk: jaccard(&ta, &tb),
        spearman_rho,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BhResult {
    pub p_value: f64,
    pub q_bh: f64,
    pub significant: bool,
}

/// Benjamini-Hochberg step-up adjusted values; significant iff `q_bh < q`.
pub fn bh_fdr(p_values: &[f64], q: f64) -> Result<Vec<BhResult>> {
    if p_values.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(ExcirError::invalid("p-values must lie in [0, 1]"));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for (pos, &i) in order.iter().enumerate().rev() {
        running = running.min(m as f64 * p_values[i] / (pos + 1) as f64);
        adjusted[i] = running.min(1.0);
    }
    Ok(p_values
        .iter()
        .zip(adjusted)
        .map(|(&p_value, q_bh)| BhResult {
            p_value,
            q_bh,
            significant: q_bh < q,
        })
        .collect())
}

/// `(#{a > b} - #{a < b}) / (|a| |b|)`.
pub fn cliffs_delta(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(ExcirError::Empty("Cliff's delta sample".into()));
    }
    let mut s = 0i64;
    for x in a {
        for y in b {
            s += (x > y) as i64 - (x < y) as i64;
        }
    }
    Ok(s as f64 / (a.len() * b.len()) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    HigherBetter,
    LowerBetter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceRecord {
    pub metric: String,
    /// Mean difference, positive when `a` is better.
    pub delta: f64,
    /// Cliff's delta, positive when `a` is better.
    pub cliffs_delta: f64,
    pub p_value: f64,
    pub q_bh: Option<f64>,
    pub significant: Option<bool>,
}

/// Mann-Whitney U statistic of `a` against `b` (ties count one half).
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> f64 {
    let mut u = 0.0;
    for x in a {
        for y in b {
            u += if x > y { 1.0 } else if x == y { 0.5 } else { 0.0 };
        }
    }
    u
}

/// Number of arrangements giving each U value for sizes (m, n), no ties.
pub fn exact_u_counts(m: usize, n: usize) -> Vec<f64> {
    // f[i][j][u]: arrangements of i a's and j b's with statistic u
    let max = m * n;
    let mut f = vec![vec![vec![0.0f64; max + 1]; n + 1]; m + 1];
    for j in 0..=n {
        f[0][j][0] = 1.0;
    }
    for i in 1..=m {
        f[i][0][0] = 1.0;
        for j in 1..=n {
            for u in 0..=i * j {
                // largest element is an a (beats all j b's) or a b
                let with_a = if u >= j { f[i - 1][j][u - j] } else { 0.0 };
                let with_b = f[i][j - 1][u];
                f[i][j][u] = with_a + with_b;
            }
        }
    }
    f[m][n].clone()
}

/// Two-sided Mann-Whitney p-value. Exact when both sizes are at most 12 and
/// there are no ties; otherwise the normal approximation with tie and
/// continuity corrections.
pub fn mann_whitney_p(a: &[f64], b: &[f64]) -> f64 {
    let (m, n) = (a.len(), b.len());
    let u = mann_whitney_u(a, b);
    let mut pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    pooled.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j + 1 < pooled.len() && pooled[j + 1] == pooled[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    if m <= 12 && n <= 12 && tie_term == 0.0 {
        let counts = exact_u_counts(m, n);
        let total: f64 = counts.iter().sum();
        let u = u.round() as usize;
        let lower: f64 = counts[..=u].iter().sum::<f64>() / total;
        let upper: f64 = counts[u..].iter().sum::<f64>() / total;
        return (2.0 * lower.min(upper)).min(1.0);
    }
    let (mf, nf) = (m as f64, n as f64);
    let big_n = mf + nf;
    let var = mf * nf / 12.0 * ((big_n + 1.0) - tie_term / (big_n * (big_n - 1.0)));
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((u - mf * nf / 2.0).abs() - 0.5).max(0.0) / var.sqrt();
    libm::erfc(z / std::f64::consts::SQRT_2).min(1.0)
}

pub fn nonparametric_compare(
    metric: &str,
    a: &[f64],
    b: &[f64],
    direction: Direction,
) -> Result<SignificanceRecord> {
    if a.len() < 5 || b.len() < 5 {
        return Err(ExcirError::invalid("significance test needs at least 5 replicates per side"));
    }
    let sign = match direction {
        Direction::HigherBetter => 1.0,
        Direction::LowerBetter => -1.0,
    };
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(SignificanceRecord {
        metric: metric.to_owned(),
        delta: sign * (mean(a) - mean(b)),
        cliffs_delta: sign * cliffs_delta(a, b)?,
        p_value: mann_whitney_p(a, b),
        q_bh: None,
        significant: None,
    })
}

/// Fills `q_bh` and the verdict on a batch of records.
pub fn apply_bh(records: &mut [SignificanceRecord], q: f64) -> Result<()> {
    let p: Vec<f64> = records.iter().map(|r| r.p_value).collect();
    for (r, bh) in records.iter_mut().zip(bh_fdr(&p, q)?) {
        r.q_bh = Some(bh.q_bh);
        r.significant = Some(bh.significant);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdjacentRank {
    pub rank: usize,
    pub feature: usize,
    pub next_feature: usize,
    pub probability: f64,
}

/// For consecutive features in the mean-score ranking, the fraction of
/// replicates in which the higher-ranked one scores strictly above the next.
pub fn adjacent_rank_probability(replicates: &[Vec<f64>]) -> Result<Vec<AdjacentRank>> {
    let first = replicates.first().ok_or_else(|| ExcirError::Empty("replicate matrix".into()))?;
    let k = first.len();
    if replicates.iter().any(|r| r.len() != k) {
        return Err(ExcirError::invalid("replicate rows have different lengths"));
    }
    let b = replicates.len() as f64;
    let means: Vec<f64> = (0..k).map(|j| replicates.iter().map(|r| r[j]).sum::<f64>() / b).collect();
    let order = rank_order(&means);
    Ok(order
        .windows(2)
        .enumerate()
        .map(|(rank, w)| AdjacentRank {
            rank: rank + 1,
            feature: w[0],
            next_feature: w[1],
            probability: replicates.iter().filter(|r| r[w[0]] > r[w[1]]).count() as f64 / b,
        })
        .collect())
}
