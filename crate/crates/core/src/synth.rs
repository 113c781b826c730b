//! Seeded synthetic benchmarks: a vehicular sensor set with correlated
//! blocks, a linear family and a nonlinear family, plus the feature-space
//! score used for the nonlinear one.
//!
//! Rows are generated in chunks; chunk `c` draws from RNG stream `c`, so the
//! output is identical for any thread count.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data_io::{DataMatrix, OutputBlock, OutputKind};
use crate::error::{ExcirError, Result};
use crate::par;

const CHUNK: usize = 4096;

pub const VEHICULAR_BLOCKS: [(&str, [&str; 4]); 5] = [
    ("control", ["brake_pressure", "throttle", "steering_angle", "brake_temp"]),
    ("environment", ["road_wetness", "visibility", "ambient_temp", "wind_speed"]),
    ("dynamics", ["lateral_accel", "yaw_rate", "engine_rpm", "longitudinal_accel"]),
    ("tires", ["tire_pressure_fl", "tire_pressure_fr", "tire_pressure_rl", "tire_pressure_rr"]),
    ("speed", ["speed", "wheel_speed_avg", "speed_variance", "gps_speed"]),
];

/// Logit coefficients on the standardized channels, block by block.
pub const VEHICULAR_BETA: [[f64; 4]; 5] = [
    [1.5, 0.9, 0.5, 0.1],
    [1.0, 0.45, 0.15, 0.0],
    [0.25, 0.0, 0.0, 0.0],
    [-0.1, 0.0, 0.0, 0.0],
    [0.08, 0.0, 0.0, 0.0],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    Vehicular { rho_block: f64, event_rate: f64 },
    Linear { weights: Vec<f64>, noise_sd: f64 },
    Nonlinear { noise_sd: f64 },
}

impl Family {
    pub fn vehicular() -> Self {
        Family::Vehicular {
            rho_block: 0.5,
            event_rate: 0.15,
        }
    }

    /// Twelve features with weights 1, 11/12, ..., 1/12.
    pub fn linear() -> Self {
        Family::Linear {
            weights: (0..12).map(|j| (12 - j) as f64 / 12.0).collect(),
            noise_sd: 0.3,
        }
    }

    pub fn nonlinear() -> Self {
        Family::Nonlinear { noise_sd: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub seed: u64,
    #[serde(flatten)]
    pub family: Family,
}

impl SynthConfig {
    pub fn new(n: usize, seed: u64, family: Family) -> Self {
        Self { n, seed, family }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(ExcirError::invalid("synthetic data needs at least 2 rows"));
        }
        match &self.family {
            Family::Vehicular { rho_block, event_rate } => {
                if !(0.0..1.0).contains(rho_block) {
                    return Err(ExcirError::invalid(format!("rho_block must lie in [0, 1), got {rho_block}")));
                }
                if !(*event_rate > 0.0 && *event_rate < 1.0) {
                    return Err(ExcirError::invalid(format!("event_rate must lie in (0, 1), got {event_rate}")));
                }
            }
            Family::Linear { weights, noise_sd } => {
                if weights.is_empty() || weights.iter().any(|w| !w.is_finite()) {
                    return Err(ExcirError::invalid("linear weights must be finite and nonempty"));
                }
                if !(*noise_sd >= 0.0) {
                    return Err(ExcirError::invalid("noise sd must be nonnegative"));
                }
            }
            Family::Nonlinear { noise_sd } => {
                if !(*noise_sd >= 0.0) {
                    return Err(ExcirError::invalid("noise sd must be nonnegative"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Indices of the features that carry signal, strongest first.
    pub drivers: Vec<usize>,
    /// Named feature groups (vehicular only).
    pub blocks: BTreeMap<String, Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intercept: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub positive_rate: Option<f64>,
    pub config: SynthConfig,
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub data: DataMatrix,
    /// Risk probability (vehicular) or regression target.
    pub output: OutputBlock,
    /// Binary event labels (vehicular only).
    pub labels: Option<Vec<f64>>,
    pub truth: GroundTruth,
}

/// Standard normal draws for `n` rows of `width` values, chunked by stream.
fn normal_rows(n: usize, width: usize, seed: u64) -> Vec<Vec<f64>> {
    let chunks = n.div_ceil(CHUNK);
    par::map_range(chunks, |c| {
        let mut rng = par::stream_rng(seed, c as u64);
        let rows = CHUNK.min(n - c * CHUNK);
        (0..rows)
            .map(|_| (0..width).map(|_| rng.sample::<f64, _>(StandardNormal)).collect::<Vec<f64>>())
            .collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect()
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

pub fn generate(config: &SynthConfig) -> Result<SynthData> {
    config.validate()?;
    match &config.family {
        Family::Vehicular { rho_block, event_rate } => vehicular(config, *rho_block, *event_rate),
        Family::Linear { weights, noise_sd } => linear(config, weights, *noise_sd),
        Family::Nonlinear { noise_sd } => nonlinear(config, *noise_sd),
    }
}

fn vehicular(config: &SynthConfig, rho: f64, event_rate: f64) -> Result<SynthData> {
    let n = config.n;
    // per row: 20 channel noises, 5 block factors, 1 label uniform
    let draws = normal_rows(n, 26, config.seed);
    let (a, b) = (rho.sqrt(), (1.0 - rho).sqrt());
    let x = DMatrix::from_fn(n, 20, |r, j| a * draws[r][20 + j / 4] + b * draws[r][j]);
    let beta: Vec<f64> = VEHICULAR_BETA.iter().flatten().copied().collect();
    let logits: Vec<f64> = (0..n).map(|r| (0..20).map(|j| x[(r, j)] * beta[j]).sum()).collect();

    let mean_risk = |c: f64| logits.iter().map(|l| sigmoid(l + c)).sum::<f64>() / n as f64;
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mean_risk(mid) > event_rate {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let intercept = 0.5 * (lo + hi);
    let risk: Vec<f64> = logits.iter().map(|l| sigmoid(l + intercept)).collect();
    // the spare normal becomes a uniform through the normal CDF
    let labels: Vec<f64> = (0..n)
        .map(|r| {
            let u = 0.5 * libm::erfc(-draws[r][25] / std::f64::consts::SQRT_2);
            f64::from(u8::from(u < risk[r]))
        })
        .collect();
    let positive_rate = labels.iter().sum::<f64>() / n as f64;

    let names: Vec<String> = VEHICULAR_BLOCKS
        .iter()
        .flat_map(|(_, chans)| chans.iter().map(|c| c.to_string()))
        .collect();
    let blocks = VEHICULAR_BLOCKS
        .iter()
        .enumerate()
        .map(|(bi, (name, _))| (name.to_string(), (4 * bi..4 * bi + 4).collect()))
        .collect();
    Ok(SynthData {
        data: DataMatrix::new(x, names)?,
        output: OutputBlock::scalar(risk, OutputKind::Probability)?,
        labels: Some(labels),
        truth: GroundTruth {
            drivers: (0..8).collect(),
            blocks,
            intercept: Some(intercept),
            positive_rate: Some(positive_rate),
            config: config.clone(),
        },
    })
}

fn linear(config: &SynthConfig, weights: &[f64], noise_sd: f64) -> Result<SynthData> {
    let (n, k) = (config.n, weights.len());
    let draws = normal_rows(n, k + 1, config.seed);
    let x = DMatrix::from_fn(n, k, |r, j| draws[r][j]);
    let y: Vec<f64> = (0..n)
        .map(|r| (0..k).map(|j| weights[j] * x[(r, j)]).sum::<f64>() + noise_sd * draws[r][k])
        .collect();
    let mut drivers: Vec<usize> = (0..k).filter(|&j| weights[j] != 0.0).collect();
    drivers.sort_by(|&p, &q| weights[q].abs().total_cmp(&weights[p].abs()).then(p.cmp(&q)));
    Ok(SynthData {
        data: DataMatrix::new(x, crate::data_io::default_names(k))?,
        output: OutputBlock::scalar(y, OutputKind::RegressionScore)?,
        labels: None,
        truth: GroundTruth {
            drivers,
            blocks: BTreeMap::new(),
            intercept: None,
            positive_rate: None,
            config: config.clone(),
        },
    })
}

/// `y = sin(2 pi x0) + x1^2 + 1{x2 > 0} + noise`, with nine distractors.
fn nonlinear(config: &SynthConfig, noise_sd: f64) -> Result<SynthData> {
    let n = config.n;
    let k = 12;
    let draws = normal_rows(n, k + 1, config.seed);
    let x = DMatrix::from_fn(n, k, |r, j| draws[r][j]);
    let y: Vec<f64> = (0..n)
        .map(|r| {
            (2.0 * std::f64::consts::PI * x[(r, 0)]).sin()
                + x[(r, 1)].powi(2)
                + f64::from(u8::from(x[(r, 2)] > 0.0))
                + noise_sd * draws[r][k]
        })
        .collect();
    Ok(SynthData {
        data: DataMatrix::new(x, crate::data_io::default_names(k))?,
        output: OutputBlock::scalar(y, OutputKind::RegressionScore)?,
        labels: None,
        truth: GroundTruth {
            drivers: vec![0, 1, 2],
            blocks: BTreeMap::new(),
            intercept: None,
            positive_rate: None,
            config: config.clone(),
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMap {
    /// `[x, sin 2 pi x, cos 2 pi x]`
    Sinusoid,
    /// `[x, x^2, x^3]`
    Polynomial3,
    Identity,
}

impl FeatureMap {
    pub fn dim(self) -> usize {
        match self {
            FeatureMap::Identity => 1,
            _ => 3,
        }
    }

    pub fn apply(self, x: f64) -> Vec<f64> {
        let t = 2.0 * std::f64::consts::PI * x;
        match self {
            FeatureMap::Sinusoid => vec![x, t.sin(), t.cos()],
            FeatureMap::Polynomial3 => vec![x, x * x, x * x * x],
            FeatureMap::Identity => vec![x],
        }
    }
}

/// R^2 of the least-squares fit of `y` on `[1, phi(x)]`, clipped at 0.
pub fn feature_space_score(x: &[f64], y: &[f64], map: FeatureMap) -> Result<f64> {
    if x.len() != y.len() {
        return Err(ExcirError::mismatch("feature length", y.len(), x.len()));
    }
    let n = x.len();
    let d = map.dim();
    if n <= d + 1 {
        return Err(ExcirError::invalid(format!("need more than {} rows for this map", d + 1)));
    }
    let mut design = DMatrix::from_element(n, d + 1, 1.0);
    for (r, &v) in x.iter().enumerate() {
        for (c, phi) in map.apply(v).into_iter().enumerate() {
            design[(r, c + 1)] = phi;
        }
    }
    // centre the mapped columns so the conditioning check sees spread, not offset
    for c in 1..=d {
        let m = design.column(c).mean();
        design.column_mut(c).add_scalar_mut(-m);
    }
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.min() <= 1e-10 * smax.max(1.0) {
        return Err(ExcirError::Degenerate("rank-deficient feature-map design".into()));
    }
    let yv = DVector::from_column_slice(y);
    let coef = svd.solve(&yv, 0.0).map_err(|e| ExcirError::Degenerate(e.to_string()))?;
    let resid = &yv - &design * coef;
    let ym = yv.mean();
    let sst: f64 = y.iter().map(|v| (v - ym).powi(2)).sum();
    if sst == 0.0 {
        return Err(ExcirError::Degenerate("target has zero variance".into()));
    }
    Ok((1.0 - resid.norm_squared() / sst).max(0.0))
}

/// Highest feature-space score over the sinusoid and cubic maps.
pub fn best_feature_space_score(x: &[f64], y: &[f64]) -> Result<(f64, FeatureMap)> {
    let s = feature_space_score(x, y, FeatureMap::Sinusoid)?;
    let p = feature_space_score(x, y, FeatureMap::Polynomial3)?;
    Ok(if p > s { (p, FeatureMap::Polynomial3) } else { (s, FeatureMap::Sinusoid) })
}

/// Correlation-form CIR of the best feature-space fit: `R^2 / (1 + R^2)`,
/// since the squared correlation of an OLS fit with its target is its `R^2`.
pub fn feature_space_cir(x: &[f64], y: &[f64]) -> Result<f64> {
    let (r2, _) = best_feature_space_score(x, y)?;
    Ok(r2 / (1.0 + r2))
}
