//! Block, class-conditioned and multi-output scores.
//!
//! A block of correlated features is scored through its leading canonical
//! variate, so credit is not split between near-duplicate columns. Members
//! are standardized before the canonical direction is fitted.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cca::{self, Aggregation, CanonicalPair, Ridge};
use crate::cir::{self, CirMode, CirScore, ScoreFlag};
use crate::data_io::{standardize, DataMatrix, OutputBlock, OutputKind, StandardizationParams};
use crate::error::{ExcirError, Result};
use crate::par;

/// Named, disjoint feature groups. Features not listed in any group are
/// scored as singleton blocks named after the feature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct BlockSpec {
    pub blocks: BTreeMap<String, Vec<usize>>,
}

impl BlockSpec {
    pub fn new(blocks: BTreeMap<String, Vec<usize>>) -> Self {
        Self { blocks }
    }

    /// Parses `{"blocks": {"name": [indices...]}}`.
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (name, members) in &self.blocks {
            if members.is_empty() {
                return Err(ExcirError::invalid(format!("block `{name}` is empty")));
            }
            for &i in members {
                if i >= k {
                    return Err(ExcirError::invalid(format!(
                        "block `{name}` references feature {i}, but there are only {k}"
                    )));
                }
                if !seen.insert(i) {
                    return Err(ExcirError::invalid(format!(
                        "feature {i} appears in more than one block"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Explicit blocks in name order, then implicit singletons by feature index.
    pub fn resolve(&self, names: &[String]) -> Result<Vec<(String, Vec<usize>)>> {
        self.validate(names.len())?;
        let grouped: BTreeSet<usize> = self.blocks.values().flatten().copied().collect();
        let mut out: Vec<(String, Vec<usize>)> =
            self.blocks.iter().map(|(n, m)| (n.clone(), m.clone())).collect();
        for (i, name) in names.iter().enumerate() {
            if !grouped.contains(&i) {
                out.push((name.clone(), vec![i]));
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockOptions {
    pub mode: CirMode,
    pub ridge: Ridge,
    /// Number of canonical pairs retained; `1` is the plain block score.
    pub top_r: usize,
    pub aggregation: Aggregation,
}

impl Default for BlockOptions {
    fn default() -> Self {
        Self {
            mode: CirMode::MidMean,
            ridge: Ridge::Auto,
            top_r: 1,
            aggregation: Aggregation::Sum,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupScore {
    pub name: String,
    pub members: Vec<usize>,
    /// CIR of the block variate against the output (or output variate).
    pub eta: CirScore,
    pub canonical: CanonicalPair,
    /// Per-member CIR of the standardized columns against the same target.
    pub member_etas: Vec<CirScore>,
    /// Aggregated score over the top-r canonical pairs when `top_r > 1`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_r_score: Option<f64>,
}

fn flagged_score(feature: usize, mode: CirMode) -> CirScore {
    CirScore {
        feature,
        name: None,
        eta: 0.0,
        mode,
        flag: Some(ScoreFlag::Degenerate),
        diagnostics: Default::default(),
    }
}

fn score_or_flag(f: &[f64], y: &[f64], feature: usize, mode: CirMode) -> CirScore {
    match cir::cir(f, y, mode) {
        Ok(mut s) => {
            s.feature = feature;
            s
        }
        Err(_) => flagged_score(feature, mode),
    }
}

/// Standardized copy of the listed columns.
fn standardized_block(data: &DataMatrix, members: &[usize]) -> Result<DataMatrix> {
    let block = data.select_columns(members)?;
    let params = StandardizationParams::fit(&block);
    standardize(&block, &params)
}

/// Scores each block (explicit or singleton) and returns them ranked by
/// descending block `eta`.
///
/// For a scalar output the block direction is the closed form
/// `(Sigma_b + ridge I)^{-1} gamma_b`; for `p > 1` both sides use the leading
/// canonical pair and the score is `CIR(z_b, s_b)`.
pub fn block_cir(
    data: &DataMatrix,
    y: &OutputBlock,
    blocks: &BlockSpec,
    opts: &BlockOptions,
) -> Result<Vec<GroupScore>> {
    y.check_rows(data)?;
    if opts.top_r == 0 {
        return Err(ExcirError::invalid("top_r must be at least 1"));
    }
    let resolved = blocks.resolve(data.feature_names())?;
    let results = par::map_slice(&resolved, |(name, members)| {
        score_block(data, y, name, members, opts)
    });
    let mut scores = results.into_iter().collect::<Result<Vec<_>>>()?;
    scores.sort_by(|a, b| b.eta.eta.total_cmp(&a.eta.eta).then(a.name.cmp(&b.name)));
    Ok(scores)
}

fn score_block(
    data: &DataMatrix,
    y: &OutputBlock,
    name: &str,
    members: &[usize],
    opts: &BlockOptions,
) -> Result<GroupScore> {
    let xb = standardized_block(data, members)?;
    let cov = cca::covariance_blocks(xb.values(), y.values(), opts.ridge)?;
    let pairs = cca::canonical_pairs(&cov, opts.top_r)?;
    let mut canonical = pairs
        .first()
        .cloned()
        .ok_or_else(|| ExcirError::Empty("no canonical pair".into()))?;

    let (z, target): (Vec<f64>, Vec<f64>) = if y.n_outputs() == 1 {
        let w = cca::scalar_output_direction(&cov)?;
        canonical.w_star = w.clone();
        (cca::variate(xb.values(), &w), y.column(0).to_vec())
    } else {
        (
            cca::variate(xb.values(), &canonical.w_star),
            cca::variate(y.values(), &canonical.u_star),
        )
    };

    let mut eta = score_or_flag(&z, &target, members[0], opts.mode);
    eta.name = Some(name.to_owned());
    let member_etas = members
        .iter()
        .enumerate()
        .map(|(j, &feat)| {
            let mut s = score_or_flag(xb.column(j), &target, feat, opts.mode);
            s.name = Some(data.feature_names()[feat].clone());
            s
        })
        .collect();

    let top_r_score = (opts.top_r > 1).then(|| {
        let etas: Vec<f64> = pairs
            .iter()
            .map(|p| {
                let zi = cca::variate(xb.values(), &p.w_star);
                let si = cca::variate(y.values(), &p.u_star);
                score_or_flag(&zi, &si, 0, opts.mode).eta
            })
            .collect();
        opts.aggregation.apply(&etas)
    });

    Ok(GroupScore {
        name: name.to_owned(),
        members: members.to_vec(),
        eta,
        canonical,
        member_etas,
        top_r_score,
    })
}

/// How the class-conditioned output direction is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClassSelector {
    /// The raw class logit, `v_c = Y e_c`.
    #[default]
    UnitAxis,
    /// Per-feature ridge projection `v = Y (Sigma_Y + ridge I)^{-1} cov(Y, f)`.
    CcaConstrained,
}

fn output_ridge(sigma_y: &DMatrix<f64>, ridge: Ridge) -> Result<f64> {
    match ridge {
        Ridge::Auto => Ok(1e-6 * sigma_y.trace() / sigma_y.nrows() as f64),
        Ridge::Fixed(l) if l >= 0.0 && l.is_finite() => Ok(l),
        Ridge::Fixed(l) => Err(ExcirError::invalid(format!("ridge must be >= 0, got {l}"))),
    }
}

/// Ridge projection of the outputs onto the direction best aligned with each
/// feature. Returns one projected output vector per feature.
fn ridge_projections(data: &DataMatrix, y: &OutputBlock, ridge: Ridge) -> Result<Vec<Vec<f64>>> {
    let sigma_y = cca::covariance(y.values(), y.values());
    let lambda = output_ridge(&sigma_y, ridge)?;
    let mut reg = sigma_y.clone();
    for i in 0..reg.nrows() {
        reg[(i, i)] += lambda;
    }
    let chol = reg.clone().cholesky().ok_or_else(|| ExcirError::Singular {
        eigenvalue: reg.clone().symmetric_eigenvalues().min(),
        context: "output covariance".into(),
    })?;
    let ymeans = cca::column_means(y.values());
    let n = data.n_rows() as f64;
    Ok(par::map_range(data.n_features(), |i| {
        let f = data.column(i);
        let fm = f.iter().sum::<f64>() / n;
        let c = DVector::from_fn(y.n_outputs(), |l, _| {
            y.column(l)
                .iter()
                .zip(f)
                .map(|(a, b)| (a - ymeans[l]) * (b - fm))
                .sum::<f64>()
                / n
        });
        let w = chol.solve(&c);
        (y.values() * w).iter().copied().collect()
    }))
}

/// Class-conditioned CIR of every feature for class `class`, sorted descending.
pub fn cc_cir(
    data: &DataMatrix,
    y: &OutputBlock,
    class: usize,
    selector: ClassSelector,
    mode: CirMode,
    ridge: Ridge,
) -> Result<Vec<CirScore>> {
    y.check_rows(data)?;
    if class >= y.n_outputs() {
        return Err(ExcirError::invalid(format!(
            "class index {class} out of range for {} outputs",
            y.n_outputs()
        )));
    }
    match selector {
        ClassSelector::UnitAxis => {
            let v = y.column(class);
            if v.iter().all(|&x| x == v[0]) && mode == CirMode::Correlation {
                return Err(ExcirError::Degenerate(format!("logit column {class} is constant")));
            }
            cir::score_all_features(data, v, mode)
        }
        ClassSelector::CcaConstrained => {
            let projections = ridge_projections(data, y, ridge)?;
            let mut scores: Vec<CirScore> = projections
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let mut s = score_or_flag(data.column(i), v, i, mode);
                    s.name = Some(data.feature_names()[i].clone());
                    s
                })
                .collect();
            cir::sort_scores(&mut scores);
            Ok(scores)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    /// `alpha_l = 1/p`.
    Uniform,
    /// Caller-supplied convex weights.
    Fixed,
    /// Per feature, `alpha_l ∝ corr(f, y_l)^2`, renormalized.
    PerOutputCorr,
    /// Score against the ridge projection of the outputs instead of a
    /// convex combination.
    CanonicalProjection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub alpha: Vec<f64>,
    pub scheme: WeightScheme,
}

impl WeightVector {
    pub fn uniform(p: usize) -> Self {
        Self {
            alpha: vec![1.0 / p as f64; p],
            scheme: WeightScheme::Uniform,
        }
    }

    pub fn fixed(alpha: Vec<f64>) -> Result<Self> {
        let w = Self {
            alpha,
            scheme: WeightScheme::Fixed,
        };
        w.validate(w.alpha.len())?;
        Ok(w)
    }

    pub fn per_output_corr(p: usize) -> Self {
        Self {
            scheme: WeightScheme::PerOutputCorr,
            ..Self::uniform(p)
        }
    }

    pub fn canonical_projection(p: usize) -> Self {
        Self {
            scheme: WeightScheme::CanonicalProjection,
            ..Self::uniform(p)
        }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if self.alpha.len() != p {
            return Err(ExcirError::mismatch("weight vector length", p, self.alpha.len()));
        }
        if self.alpha.iter().any(|&a| !(a >= 0.0)) {
            return Err(ExcirError::invalid("weights must be nonnegative"));
        }
        let sum: f64 = self.alpha.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(ExcirError::invalid(format!("weights sum to {sum}, not 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiOutputScore {
    pub feature: usize,
    pub name: String,
    pub eta: f64,
    pub mode: CirMode,
    pub scheme: WeightScheme,
    /// Weights actually used for this feature (empty for the projection scheme).
    pub alpha: Vec<f64>,
    /// `CIR(f, y_l)` for each output column.
    pub per_output: Vec<f64>,
}

/// Multi-output score of every feature, sorted descending.
pub fn mo_excir(
    data: &DataMatrix,
    y: &OutputBlock,
    weights: &WeightVector,
    mode: CirMode,
) -> Result<Vec<MultiOutputScore>> {
    y.check_rows(data)?;
    let p = y.n_outputs();
    weights.validate(p)?;
    let projections = match weights.scheme {
        WeightScheme::CanonicalProjection => Some(ridge_projections(data, y, Ridge::Auto)?),
        _ => None,
    };
    let mut out: Vec<MultiOutputScore> = par::map_range(data.n_features(), |i| {
        let f = data.column(i);
        let per_output: Vec<f64> = (0..p).map(|l| score_or_flag(f, y.column(l), i, mode).eta).collect();
        let (eta, alpha) = match weights.scheme {
            WeightScheme::Uniform | WeightScheme::Fixed => {
                (dot(&weights.alpha, &per_output), weights.alpha.clone())
            }
            WeightScheme::PerOutputCorr => {
                let mut a: Vec<f64> = (0..p)
                    .map(|l| cir::pearson(f, y.column(l)).map_or(0.0, |r| r * r))
                    .collect();
                let s: f64 = a.iter().sum();
                if s > 0.0 {
                    a.iter_mut().for_each(|v| *v /= s);
                } else {
                    a = vec![1.0 / p as f64; p];
                }
                (dot(&a, &per_output), a)
            }
            WeightScheme::CanonicalProjection => {
                let v = &projections.as_ref().expect("projections computed above")[i];
                (score_or_flag(f, v, i, mode).eta, Vec::new())
            }
        };
        MultiOutputScore {
            feature: i,
            name: data.feature_names()[i].clone(),
            eta,
            mode,
            scheme: weights.scheme,
            alpha,
            per_output,
        }
    });
    out.sort_by(|a, b| b.eta.total_cmp(&a.eta).then(a.feature.cmp(&b.feature)));
    Ok(out)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Largest condition number accepted for an output remix.
pub const MAX_REMIX_CONDITION: f64 = 1e6;

/// `Y M`, tagged as a plain regression score.
pub fn remix_outputs(y: &OutputBlock, m: &DMatrix<f64>) -> Result<OutputBlock> {
    let p = y.n_outputs();
    if m.nrows() != p || m.ncols() != p {
        return Err(ExcirError::mismatch("remix matrix size", p, m.nrows().max(m.ncols())));
    }
    let cond = cca::condition_number(m);
    if !(cond < MAX_REMIX_CONDITION) {
        return Err(ExcirError::Singular {
            eigenvalue: 1.0 / cond,
            context: format!("remix matrix condition number {cond:e}"),
        });
    }
    OutputBlock::new(y.values() * m, OutputKind::RegressionScore)
}

/// `M = Sigma^{-1/2} Q Sigma^{1/2}` for orthogonal `Q`, so that
/// `M' Sigma M = Sigma`.
pub fn sigma_orthonormal_remix(sigma_y: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = sigma_y.nrows();
    if q.nrows() != p || q.ncols() != p {
        return Err(ExcirError::mismatch("orthogonal matrix size", p, q.nrows()));
    }
    let err = (q.transpose() * q - DMatrix::<f64>::identity(p, p)).amax();
    if err > 1e-8 {
        return Err(ExcirError::invalid(format!("Q is not orthogonal (max error {err:e})")));
    }
    let inv_half = cca::sym_inv_sqrt(sigma_y)?;
    let half = cca::sym_sqrt(sigma_y)?;
    Ok(inv_half * q * half)
}

/// Counts of features whose score against a convex mix of output columns
/// falls outside the hull of their per-column scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemixConvexityReport {
    pub checked: usize,
    pub violations: usize,
}

/// Empirical check of convexity under class remixing. Logged, not enforced.
pub fn class_remix_convexity(
    data: &DataMatrix,
    y: &OutputBlock,
    mixes: &[Vec<f64>],
    mode: CirMode,
) -> Result<RemixConvexityReport> {
    y.check_rows(data)?;
    let p = y.n_outputs();
    let per_class: Vec<Vec<f64>> = (0..p)
        .map(|l| {
            (0..data.n_features())
                .map(|i| score_or_flag(data.column(i), y.column(l), i, mode).eta)
                .collect()
        })
        .collect();
    let mut checked = 0;
    let mut violations = 0;
    for alpha in mixes {
        WeightVector::fixed(alpha.clone())?;
        let mixed: Vec<f64> = (0..data.n_rows())
            .map(|r| (0..p).map(|l| alpha[l] * y.values()[(r, l)]).sum())
            .collect();
        for i in 0..data.n_features() {
            let eta = score_or_flag(data.column(i), &mixed, i, mode).eta;
            let (lo, hi) = (0..p)
                .filter(|&l| alpha[l] > 0.0)
                .map(|l| per_class[l][i])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            checked += 1;
            if eta < lo - 1e-12 || eta > hi + 1e-12 {
                violations += 1;
            }
        }
    }
    log::info!("class-remix convexity: {violations} of {checked} feature/mix pairs outside the hull");
    Ok(RemixConvexityReport { checked, violations })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data2() -> (DataMatrix, OutputBlock) {
        let f0 = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let f1 = vec![2.0, 1.0, 4.0, 3.0, 6.0, 5.0];
        let y = vec![1.1, 1.9, 3.2, 3.9, 5.1, 6.2];
        (
            DataMatrix::from_columns(&[f0, f1], None).unwrap(),
            OutputBlock::scalar(y, OutputKind::RegressionScore).unwrap(),
        )
    }

    #[test]
    fn block_spec_json_and_validation() {
        let spec = BlockSpec::from_json(r#"{"blocks": {"a": [0, 2], "b": [1]}}"#).unwrap();
        assert!(spec.validate(3).is_ok());
        assert!(spec.validate(2).is_err());
        let overlap = BlockSpec::from_json(r#"{"blocks": {"a": [0], "b": [0]}}"#).unwrap();
        assert!(overlap.validate(3).is_err());
        let empty = BlockSpec::from_json(r#"{"blocks": {"a": []}}"#).unwrap();
        assert!(empty.validate(3).is_err());
        let names: Vec<String> = ["p", "q", "r", "s"].iter().map(|s| s.to_string()).collect();
        let r = spec.resolve(&names).unwrap();
        assert_eq!(r.last().unwrap(), &("s".to_string(), vec![3]));
    }

    #[test]
    fn singleton_blocks_match_standardized_scores() {
        let (data, y) = data2();
        let opts = BlockOptions {
            mode: CirMode::Correlation,
            ..Default::default()
        };
        let g = block_cir(&data, &y, &BlockSpec::default(), &opts).unwrap();
        for gs in &g {
            let i = gs.members[0];
            let direct = cir::cir_correlation(data.column(i), y.column(0)).unwrap().eta;
            assert!((gs.eta.eta - direct).abs() < 1e-9, "{} vs {direct}", gs.eta.eta);
        }
    }

    #[test]
    fn fixed_weights_validation() {
        assert!(WeightVector::fixed(vec![0.5, 0.5]).is_ok());
        assert!(WeightVector::fixed(vec![0.5, 0.6]).is_err());
        assert!(WeightVector::fixed(vec![1.5, -0.5]).is_err());
    }

    #[test]
    fn cc_cir_rejects_bad_class() {
        let (data, y) = data2();
        assert!(cc_cir(&data, &y, 1, ClassSelector::UnitAxis, CirMode::MidMean, Ridge::Auto).is_err());
    }

    #[test]
    fn remix_identity_and_singular() {
        let (_, y) = data2();
        let i = DMatrix::identity(1, 1);
        assert_eq!(remix_outputs(&y, &i).unwrap().values(), y.values());
        let z = DMatrix::zeros(1, 1);
        assert!(remix_outputs(&y, &z).is_err());
    }

    #[test]
    fn sigma_remix_rejects_non_orthogonal() {
        let s = DMatrix::identity(2, 2);
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(sigma_orthonormal_remix(&s, &q).is_err());
        let m = sigma_orthonormal_remix(&s, &DMatrix::identity(2, 2)).unwrap();
        assert!((m - DMatrix::<f64>::identity(2, 2)).amax() < 1e-12);
    }
}
