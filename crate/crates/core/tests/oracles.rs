//! Independent reference computations checked against the library.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use excir::cir::{self, CirMode};
use excir::data_io::{DataMatrix, OutputBlock, OutputKind};
use excir::eval::{self, TrainConfig};
use excir::lightweight::{self, Bandwidth, KlOptions, MmdOptions, Task};
use excir::stability::{self, BootstrapOptions, Scorer};

fn normals(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.sample(StandardNormal)).collect()
}

#[test]
fn mmd_matches_explicit_kernel_sums() {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let a: Vec<Vec<f64>> = (0..15).map(|_| normals(&mut r, 2)).collect();
    let b: Vec<Vec<f64>> = (0..11).map(|_| normals(&mut r, 2).iter().map(|v| v + 0.4).collect()).collect();
    let h = 0.8;
    let k = |u: &[f64], v: &[f64]| {
        let d: f64 = u.iter().zip(v).map(|(x, y)| (x - y).powi(2)).sum();
        (-d / (2.0 * h * h)).exp()
    };
    let (m, n) = (a.len() as f64, b.len() as f64);
    let mut xx = 0.0;
    for i in 0..a.len() {
        for j in 0..a.len() {
            if i != j {
                xx += k(&a[i], &a[j]);
            }
        }
    }
    let mut yy = 0.0;
    for i in 0..b.len() {
        for j in 0..b.len() {
            if i != j {
                yy += k(&b[i], &b[j]);
            }
        }
    }
    let xy: f64 = a.iter().flat_map(|u| b.iter().map(move |v| k(u, v))).sum();
    let expected = xx / (m * (m - 1.0)) + yy / (n * (n - 1.0)) - 2.0 * xy / (m * n);
    let opts = MmdOptions {
        bandwidth: Bandwidth::Fixed(h),
        ..Default::default()
    };
    let res = lightweight::mmd_gate(&a, &b, &opts).unwrap();
    assert!((res.mmd2_unbiased - expected).abs() < 1e-12);
    assert!(res.p_value > 0.0 && res.p_value <= 1.0);
    // 200 permutations: p is a multiple of 1/201
    let scaled = res.p_value * 201.0;
    assert!((scaled - scaled.round()).abs() < 1e-9);
}

#[test]
fn mmd_median_heuristic_uses_pooled_distances() {
    let a = vec![vec![0.0], vec![1.0]];
    let b = vec![vec![3.0], vec![7.0]];
    // pooled distances 1, 3, 7, 2, 6, 4 -> median 3.5
    let res = lightweight::mmd_gate(&a, &b, &MmdOptions::default()).unwrap();
    assert!((res.bandwidth - 3.5).abs() < 1e-12);
}

#[test]
fn kl_matches_direct_quadrature() {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let a = normals(&mut r, 80);
    let b: Vec<f64> = normals(&mut r, 60).iter().map(|v| 1.3 * v + 0.5).collect();
    let pooled: Vec<f64> = a.iter().chain(&b).copied().collect();
    let mu = pooled.iter().sum::<f64>() / pooled.len() as f64;
    let sd = (pooled.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / pooled.len() as f64).sqrt();
    let h = 1.06 * 60f64.powf(-0.2);
    let grid: Vec<f64> = (0..512).map(|i| -4.0 + 8.0 * i as f64 / 511.0).collect();
    let dx = 8.0 / 511.0;
    let density = |s: &[f64]| -> Vec<f64> {
        let z: Vec<f64> = s.iter().map(|v| (v - mu) / sd).collect();
        let raw: Vec<f64> = grid
            .iter()
            .map(|x| {
                let v = z.iter().map(|t| (-(x - t).powi(2) / (2.0 * h * h)).exp()).sum::<f64>()
                    / (z.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
                v.max(1e-12)
            })
            .collect();
        let mass: f64 = raw.iter().sum::<f64>() * dx;
        raw.iter().map(|v| v / mass).collect()
    };
    let (p, q) = (density(&a), density(&b));
    let expected: f64 = p.iter().zip(&q).map(|(x, y)| x * (x / y).ln()).sum::<f64>() * dx;
    let got = lightweight::kl_gate(&a, &b, &KlOptions::default()).unwrap();
    assert!((got - expected.max(0.0)).abs() < 1e-10);
    assert!(lightweight::kl_gate(&a, &a, &KlOptions::default()).unwrap().abs() < 1e-12);
}

#[test]
fn ridge_regression_solves_normal_equations() {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let (n, k) = (200, 4);
    let x = DMatrix::from_fn(n, k, |_, j| r.sample::<f64, _>(StandardNormal) * (j + 1) as f64 + j as f64);
    let y: Vec<f64> = (0..n)
        .map(|i| 1.0 + 0.5 * x[(i, 0)] - 0.2 * x[(i, 2)] + 0.1 * r.sample::<f64, _>(StandardNormal))
        .collect();
    let data = DataMatrix::new(x.clone(), (0..k).map(|j| format!("x{j}")).collect()).unwrap();
    let model = eval::train_reference(&data, &y, Task::Regression, TrainConfig::default()).unwrap();
    // ordinary least squares with an intercept column
    let design = DMatrix::from_fn(n, k + 1, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] });
    let beta = (design.transpose() * &design)
        .lu()
        .solve(&(design.transpose() * DVector::from_vec(y.clone())))
        .unwrap();
    let fitted = &design * beta;
    let pred = model.decision_values(&data).unwrap();
    for i in 0..n {
        assert!((pred[(i, 0)] - fitted[i]).abs() < 1e-6, "row {i}");
    }
}

#[test]
fn bootstrap_matches_explicit_loop() {
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let n = 60;
    let cols: Vec<Vec<f64>> = (0..3).map(|_| normals(&mut r, n)).collect();
    let y: Vec<f64> = (0..n).map(|i| cols[0][i] * 0.7 + 0.2).collect();
    let data = DataMatrix::from_columns(&cols, None).unwrap();
    let out = OutputBlock::scalar(y.clone(), OutputKind::RegressionScore).unwrap();
    let b = 25;
    let summary = stability::bootstrap_scores(
        &data,
        &out,
        b,
        9,
        CirMode::MidMean,
        &Scorer::PerFeature,
        BootstrapOptions::default(),
    )
    .unwrap();
    let mut reps = Vec::new();
    for rep in 0..b {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        rng.set_stream(rep as u64);
        let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let yy: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
        let etas: Vec<f64> = (0..3)
            .map(|j| {
                let f: Vec<f64> = rows.iter().map(|&i| cols[j][i]).collect();
                cir::cir_midmean(&f, &yy).unwrap().eta
            })
            .collect();
        reps.push(etas);
    }
    for j in 0..3 {
        let col: Vec<f64> = reps.iter().map(|r| r[j]).collect();
        let mean = col.iter().sum::<f64>() / b as f64;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / b as f64).sqrt();
        let iv = &summary.intervals[j];
        assert!((iv.mean - mean).abs() < 1e-12);
        assert!((iv.sd - sd).abs() < 1e-12);
        assert!((iv.ci_lo - (mean - 1.96 * sd)).abs() < 1e-12);
        assert!((iv.ci_hi - (mean + 1.96 * sd)).abs() < 1e-12);
    }
}

/// Two-sided exact p-value by enumerating every split of the pooled ranks.
fn brute_force_mw(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (m, total) = (a.len(), pooled.len());
    let u_obs = stability::mann_whitney_u(a, b);
    let centre = (m * b.len()) as f64 / 2.0;
    let (mut hits, mut count) = (0u64, 0u64);
    for mask in 0u32..(1 << total) {
        if mask.count_ones() as usize != m {
            continue;
        }
        let (xa, xb): (Vec<f64>, Vec<f64>) = {
            let mut xa = Vec::new();
            let mut xb = Vec::new();
            for (i, &v) in pooled.iter().enumerate() {
                if mask >> i & 1 == 1 {
                    xa.push(v)
                } else {
                    xb.push(v)
                }
            }
            (xa, xb)
        };
        let u = stability::mann_whitney_u(&xa, &xb);
        count += 1;
        if (u - centre).abs() >= (u_obs - centre).abs() - 1e-12 {
            hits += 1;
        }
    }
    hits as f64 / count as f64
}

#[test]
fn exact_mann_whitney_matches_enumeration() {
    let mut r = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let a: Vec<f64> = normals(&mut r, 6).iter().map(|v| v + 0.8).collect();
        let b = normals(&mut r, 7);
        let p = stability::mann_whitney_p(&a, &b);
        // the U distribution is symmetric, so doubling the smaller tail is the
        // same as counting splits at least as far from the centre
        assert!((p - brute_force_mw(&a, &b)).abs() < 1e-12);
    }
}

#[test]
fn block_of_one_matches_single_feature() {
    let mut r = ChaCha8Rng::seed_from_u64(6);
    let n = 100;
    let cols: Vec<Vec<f64>> = (0..3).map(|_| normals(&mut r, n)).collect();
    let y: Vec<f64> = (0..n).map(|i| cols[1][i] + 0.5 * r.sample::<f64, _>(StandardNormal)).collect();
    let data = DataMatrix::from_columns(&cols, None).unwrap();
    let out = OutputBlock::scalar(y.clone(), OutputKind::RegressionScore).unwrap();
    let spec = excir::group::BlockSpec::from_json(r#"{"blocks": {}}"#).unwrap();
    let opts = excir::group::BlockOptions {
        mode: CirMode::Correlation,
        ridge: excir::cca::Ridge::Fixed(0.0),
        ..Default::default()
    };
    let groups = excir::group::block_cir(&data, &out, &spec, &opts).unwrap();
    assert_eq!(groups.len(), 3);
    for g in &groups {
        let j = g.members[0];
        let single = cir::cir_correlation(&cols[j], &y).unwrap().eta;
        assert!((g.eta.eta - single).abs() < 1e-10, "{}", g.name);
    }
}
