//! One runner per subcommand. Each builds a JSON report that embeds the
//! [`RunConfig`] it was produced from.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Map, Value};

use excir::cca::{Aggregation, Ridge};
use excir::cir::{self, CirMode};
use excir::data_io::{self, CsvOptions, DataMatrix, OutputBlock, OutputKind};
use excir::eval::{self, ProtocolConfig, Split, SplitIndices, TrainConfig};
use excir::group::{self, BlockOptions, BlockSpec, ClassSelector, WeightVector};
use excir::lightweight::{
    self, BoundConstants, GateOptions, GateSetup, GateThresholds, MmdOptions, Task,
};
use excir::stability::{self, BootstrapOptions, Scorer};
use excir::synth::{self, Family, SynthConfig};

use crate::args::*;

/// Everything needed to rerun a command. Thread count is left out because
/// results do not depend on it.
#[derive(Debug, Serialize)]
pub struct RunConfig {
    pub command: &'static str,
    pub inputs: Vec<PathBuf>,
    pub target: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<CirMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub block_spec: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fraction: Option<f64>,
    #[serde(rename = "B", skip_serializing_if = "Option::is_none")]
    pub b: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub head_k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// The full argument set, defaults included.
    pub options: Value,
}

impl RunConfig {
    fn new(command: &'static str, data: Option<&DataArgs>, options: &impl Serialize) -> Result<Self> {
        Ok(Self {
            command,
            inputs: data.map(|d| vec![d.input.clone()]).unwrap_or_default(),
            target: data.map(|d| d.target.clone()).unwrap_or_default(),
            mode: None,
            block_spec: None,
            thresholds: None,
            seed: None,
            fraction: None,
            b: None,
            head_k: None,
            output: None,
            options: serde_json::to_value(options)?,
        })
    }
}

fn mode(m: ModeArg) -> CirMode {
    match m {
        ModeArg::Midmean => CirMode::MidMean,
        ModeArg::Correlation => CirMode::Correlation,
    }
}

fn task(t: TaskArg) -> Task {
    match t {
        TaskArg::Classification => Task::Classification,
        TaskArg::Regression => Task::Regression,
    }
}

fn kind(k: KindArg) -> OutputKind {
    match k {
        KindArg::Regression => OutputKind::RegressionScore,
        KindArg::Logit => OutputKind::Logit,
        KindArg::Probability => OutputKind::Probability,
    }
}

fn ridge(s: &str) -> Result<Ridge> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(Ridge::Auto);
    }
    let v: f64 = s.parse().map_err(|_| anyhow!("--ridge must be `auto` or a number, got `{s}`"))?;
    if !(v >= 0.0 && v.is_finite()) {
        bail!("--ridge must be nonnegative, got {v}");
    }
    Ok(Ridge::Fixed(v))
}

fn aggregation(s: &str) -> Result<Aggregation> {
    match s.to_ascii_lowercase().as_str() {
        "sum" => Ok(Aggregation::Sum),
        "max" => Ok(Aggregation::Max),
        _ => bail!("--aggregation must be `sum` or `max`, got `{s}`"),
    }
}

/// Features and output columns of one CSV.
struct Loaded {
    features: DataMatrix,
    targets: Vec<Vec<f64>>,
}

impl Loaded {
    fn output_block(&self, kind: OutputKind) -> Result<OutputBlock> {
        let n = self.features.n_rows();
        let m = DMatrix::from_fn(n, self.targets.len(), |r, c| self.targets[c][r]);
        Ok(OutputBlock::new(m, kind)?)
    }

    fn single_target(&self, what: &str) -> Result<&[f64]> {
        match self.targets.as_slice() {
            [t] => Ok(t),
            _ => bail!("{what} takes exactly one --target column, got {}", self.targets.len()),
        }
    }
}

fn load(args: &DataArgs, path: &Path) -> Result<Loaded> {
    let opts = CsvOptions {
        has_header: true,
        target: None,
        impute_median: args.impute == ImputeArg::Median,
    };
    let (all, _) = data_io::load_csv_with(path, &opts).with_context(|| format!("reading {}", path.display()))?;
    let names = all.feature_names();
    let index = |name: &String| -> Result<usize> {
        names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| anyhow!("column `{name}` not found in {}", path.display()))
    };
    let target_idx = args.target.iter().map(index).collect::<Result<Vec<_>>>()?;
    let mut dropped: BTreeSet<usize> = target_idx.iter().copied().collect();
    for e in &args.exclude {
        dropped.insert(index(e)?);
    }
    let keep: Vec<usize> = (0..names.len()).filter(|i| !dropped.contains(i)).collect();
    if keep.is_empty() {
        bail!("no feature columns left after removing targets and exclusions");
    }
    Ok(Loaded {
        features: all.select_columns(&keep)?,
        targets: target_idx.iter().map(|&i| all.column(i).to_vec()).collect(),
    })
}

fn emit(report: Value, out: &OutArgs) -> Result<()> {
    let text = data_io::render_report(&report)?;
    match &out.output {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn with_config(config: RunConfig, body: Value) -> Result<Value> {
    let mut obj = Map::new();
    obj.insert("config".into(), serde_json::to_value(config)?);
    match body {
        Value::Object(m) => obj.extend(m),
        other => {
            obj.insert("result".into(), other);
        }
    }
    Ok(Value::Object(obj))
}

pub fn score(a: &ScoreArgs) -> Result<()> {
    let d = load(&a.data, &a.data.input)?;
    let y = d.single_target("score")?;
    let m = mode(a.mode);
    let scores = cir::score_all_features(&d.features, y, m)?;
    let head: Vec<&str> = scores.iter().take(a.head_k).filter_map(|s| s.name.as_deref()).collect();
    let mut cfg = RunConfig::new("score", Some(&a.data), a)?;
    cfg.mode = Some(m);
    cfg.head_k = Some(a.head_k);
    cfg.output = a.out.output.clone();
    let body = json!({
        "n_rows": d.features.n_rows(),
        "n_features": d.features.n_features(),
        "scores": scores,
        "top_k": head,
    });
    emit(with_config(cfg, body)?, &a.out)
}

fn block_spec(path: &Option<PathBuf>) -> Result<BlockSpec> {
    match path {
        Some(p) => BlockSpec::load(p).with_context(|| format!("reading block spec {}", p.display())),
        None => Ok(BlockSpec::new(Default::default())),
    }
}

pub fn block(a: &BlockArgs) -> Result<()> {
    let d = load(&a.data, &a.data.input)?;
    let y = d.output_block(OutputKind::RegressionScore)?;
    let spec = block_spec(&a.blocks)?;
    let opts = BlockOptions {
        mode: mode(a.mode),
        ridge: ridge(&a.ridge)?,
        top_r: a.top_r,
        aggregation: aggregation(&a.aggregation)?,
    };
    let groups = group::block_cir(&d.features, &y, &spec, &opts)?;
    let mut cfg = RunConfig::new("block", Some(&a.data), a)?;
    cfg.mode = Some(opts.mode);
    cfg.block_spec = a.blocks.clone();
    cfg.output = a.out.output.clone();
    let body = json!({
        "n_rows": d.features.n_rows(),
        "feature_names": d.features.feature_names(),
        "groups": groups,
    });
    emit(with_config(cfg, body)?, &a.out)
}

pub fn ccir(a: &CcirArgs) -> Result<()> {
    let d = load(&a.data, &a.data.input)?;
    let y = d.output_block(kind(a.kind))?;
    let m = mode(a.mode);
    let body = match a.class {
        Some(class) => {
            let selector = match a.selector {
                SelectorArg::UnitAxis => ClassSelector::UnitAxis,
                SelectorArg::Cca => ClassSelector::CcaConstrained,
            };
            let scores = group::cc_cir(&d.features, &y, class, selector, m, ridge(&a.ridge)?)?;
            json!({ "class": class, "class_name": a.data.target.get(class), "scores": scores })
        }
        None => {
            let p = y.n_outputs();
            let weights = if !a.alpha.is_empty() {
                WeightVector::fixed(a.alpha.clone())?
            } else {
                match a.weights {
                    SchemeArg::Uniform => WeightVector::uniform(p),
                    SchemeArg::PerOutputCorr => WeightVector::per_output_corr(p),
                    SchemeArg::CanonicalProjection => WeightVector::canonical_projection(p),
                }
            };
            let scores = group::mo_excir(&d.features, &y, &weights, m)?;
            json!({ "weights": weights, "scores": scores })
        }
    };
    let mut cfg = RunConfig::new("ccir", Some(&a.data), a)?;
    cfg.mode = Some(m);
    cfg.output = a.out.output.clone();
    emit(with_config(cfg, body)?, &a.out)
}

fn parse_profile(s: &str) -> Result<Vec<(u64, f64)>> {
    s.split(',')
        .map(|pair| {
            let (n, t) = pair
                .split_once(':')
                .ok_or_else(|| anyhow!("profile entries look like `n:seconds`, got `{pair}`"))?;
            Ok((n.trim().parse()?, t.trim().parse()?))
        })
        .collect()
}

pub fn lw_check(a: &LwCheckArgs) -> Result<()> {
    let d = load(&a.data, &a.data.input)?;
    let labels = d.single_target("lw-check")?;
    let thresholds = match &a.thresholds {
        Some(p) => GateThresholds::load(p).with_context(|| format!("reading thresholds {}", p.display()))?,
        None => GateThresholds::default(),
    };
    let t = task(a.task);
    let idx = SplitIndices::standard(d.features.n_rows(), a.seed);
    let pool_rows = idx.pool();
    let pool_x = d.features.select_rows(&pool_rows)?;
    let pool_labels: Vec<f64> = pool_rows.iter().map(|&i| labels[i]).collect();
    let eval_x = d.features.select_rows(&idx.test)?;
    let eval_labels: Vec<f64> = idx.test.iter().map(|&i| labels[i]).collect();
    let setup = GateSetup {
        pool_x: &pool_x,
        pool_labels: &pool_labels,
        eval_x: &eval_x,
        eval_labels: &eval_labels,
        train: TrainConfig::default(),
        thresholds,
        gates: GateOptions {
            mmd: MmdOptions {
                permutations: a.permutations,
                seed: a.seed,
                ..Default::default()
            },
            task: t,
            ..Default::default()
        },
    };
    let strata = a.stratify.then_some(pool_labels.as_slice());
    let acc = setup.accepted_subsample(a.fraction, a.seed, strata, a.max_attempts)?;

    let m = mode(a.mode);
    let full = eval::train_reference(&pool_x, &pool_labels, t, TrainConfig::default())?;
    let lw_x = pool_x.select_rows(&acc.rows)?;
    let lw_labels: Vec<f64> = acc.rows.iter().map(|&r| pool_labels[r]).collect();
    let lw = eval::train_reference(&lw_x, &lw_labels, t, TrainConfig::default())?;
    let full_scores = eval::model_cir_scores(&full, &pool_x, m)?;
    let lw_scores = eval::model_cir_scores(&lw, &lw_x, m)?;
    let k = a.head_k.min(full_scores.len());
    let agreement = stability::rank_agreement(&full_scores, &lw_scores, k)?;

    let bounds = match (a.eps_proj, a.eps_mmd, a.eps_kl) {
        (Some(p), Some(mm), Some(kl)) => {
            let q = full.predict_output(&eval_x)?.n_outputs();
            let constants = BoundConstants {
                c_proj: a.c_proj,
                k: a.kernel_bound,
                c_kl: a.c_kl,
            };
            let mut b = lightweight::sample_size_lower_bound(p, mm, kl, a.delta, q, constants, None)?;
            if let (Some(profile), Some(t_max)) = (&a.profile, a.t_max) {
                b = b.with_upper_bound(lightweight::budget_upper_bound(&parse_profile(profile)?, t_max)?);
            }
            Some(serde_json::to_value(b)?)
        }
        (None, None, None) => match (&a.profile, a.t_max) {
            (Some(profile), Some(t_max)) => {
                Some(json!({ "n_ub": lightweight::budget_upper_bound(&parse_profile(profile)?, t_max)? }))
            }
            _ => None,
        },
        _ => bail!("--eps-proj, --eps-mmd and --eps-kl must be given together"),
    };

    let mut cfg = RunConfig::new("lw-check", Some(&a.data), a)?;
    cfg.mode = Some(m);
    cfg.thresholds = a.thresholds.clone();
    cfg.seed = Some(a.seed);
    cfg.fraction = Some(a.fraction);
    cfg.head_k = Some(a.head_k);
    cfg.output = a.out.output.clone();
    let names = pool_x.feature_names();
    let body = json!({
        "n_pool": pool_x.n_rows(),
        "n_eval": eval_x.n_rows(),
        "subsample": { "rows": acc.rows.len(), "seed": acc.seed, "attempts": acc.attempts },
        "verdict": acc.report.verdict,
        "gates": acc.report,
        "rank_agreement": agreement,
        "full_scores": labelled(names, &full_scores),
        "lightweight_scores": labelled(names, &lw_scores),
        "bounds": bounds,
    });
    emit(with_config(cfg, body)?, &a.out)
}

fn labelled(names: &[String], scores: &[f64]) -> Value {
    let rows: Vec<Value> = stability::rank_order(scores)
        .into_iter()
        .map(|i| json!({ "feature": i, "name": names[i], "eta": scores[i] }))
        .collect();
    Value::Array(rows)
}

pub fn bootstrap(a: &BootstrapArgs) -> Result<()> {
    let d = load(&a.data, &a.data.input)?;
    let y = d.output_block(OutputKind::RegressionScore)?;
    let m = mode(a.mode);
    let scorer = match &a.blocks {
        Some(_) => Scorer::Block(block_spec(&a.blocks)?, BlockOptions { mode: m, ..Default::default() }),
        None => {
            d.single_target("bootstrap without --blocks")?;
            Scorer::PerFeature
        }
    };
    let opts = BootstrapOptions {
        stratified: a.stratified,
        percentile: a.percentile,
    };
    let summary = stability::bootstrap_scores(&d.features, &y, a.b, a.seed, m, &scorer, opts)?;
    let full: Vec<f64> = match &scorer {
        Scorer::PerFeature => cir::eta_by_feature(&cir::score_output(&d.features, &y, m)?, d.features.n_features()),
        Scorer::Block(spec, o) => {
            let mut g = group::block_cir(&d.features, &y, spec, o)?;
            g.sort_by(|x, z| x.name.cmp(&z.name));
            g.iter().map(|s| s.eta.eta).collect()
        }
    };
    let labels: Vec<&str> = summary.intervals.iter().map(|i| i.label.as_str()).collect();
    let k = a.head_k.min(full.len());

    let per_rep: Vec<_> = summary
        .replicates
        .iter()
        .filter_map(|r| stability::rank_agreement(&full, r, k).ok())
        .collect();
    if per_rep.is_empty() {
        return Err(excir::ExcirError::Degenerate("every bootstrap ranking is fully tied".into()).into());
    }
    let avg = |f: fn(&stability::RankAgreement) -> f64| per_rep.iter().map(f).sum::<f64>() / per_rep.len() as f64;
    let mut stab = Map::new();
    stab.insert("head_k".into(), json!(k));
    stab.insert(format!("O_{k}"), json!(avg(|r| r.jaccard_topk)));
    stab.insert("kendall_tau_head".into(), json!(avg(|r| r.kendall_tau_head)));
    stab.insert("kendall_tau_full".into(), json!(avg(|r| r.kendall_tau_full)));
    stab.insert("spearman_rho".into(), json!(avg(|r| r.spearman_rho)));
    stab.insert("replicates_compared".into(), json!(per_rep.len()));

    let adjacent: Vec<Value> = stability::adjacent_rank_probability(&summary.replicates)?
        .into_iter()
        .map(|r| {
            json!({
                "rank": r.rank,
                "feature": labels[r.feature],
                "next_feature": labels[r.next_feature],
                "probability": r.probability,
            })
        })
        .collect();

    let mut cfg = RunConfig::new("bootstrap", Some(&a.data), a)?;
    cfg.mode = Some(m);
    cfg.block_spec = a.blocks.clone();
    cfg.seed = Some(a.seed);
    cfg.b = Some(a.b);
    cfg.head_k = Some(a.head_k);
    cfg.output = a.out.output.clone();
    let mut body = json!({
        "B": summary.b,
        "excluded": summary.excluded,
        "intervals": summary.intervals,
        "full_scores": labels.iter().zip(&full).map(|(l, v)| json!({ "label": l, "eta": v })).collect::<Vec<_>>(),
        "mean_ranking_agreement": stability::rank_agreement(&full, &summary.means(), k).ok(),
        "rank_stability": stab,
        "adjacent_rank_probability": adjacent,
    });
    if a.keep_replicates {
        body["replicates"] = json!(summary.replicates);
    }
    emit(with_config(cfg, body)?, &a.out)
}

fn write_curve(path: &Path, header: (&str, &str), points: &[(f64, f64)]) -> Result<()> {
    let mut s = format!("{},{}\n", header.0, header.1);
    for (x, y) in points {
        s.push_str(&format!("{x},{y}\n"));
    }
    std::fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let d = load(&a.data, &a.data.input)?;
    let labels = d.single_target("eval")?;
    let cfg = ProtocolConfig {
        seed: a.seed,
        replicates: a.replicates,
        steps: a.steps,
        head_k: a.head_k,
        mode: mode(a.mode),
        task: task(a.task),
        train: TrainConfig::default(),
        permutation_reps: a.permutation_reps,
        sigma_levels: a.sigma.clone(),
        noise_reps: a.noise_reps,
        q: a.q,
    };
    let report = eval::run_protocol(&d.features, labels, &cfg)?;

    let drift = match &a.drift_input {
        None => None,
        Some(p) => {
            let other = load(&a.data, p)?;
            if other.features.feature_names() != d.features.feature_names() {
                bail!("{} does not have the same feature columns as the input", p.display());
            }
            let idx = SplitIndices::standard(d.features.n_rows(), a.seed);
            let split = Split::new(&d.features, labels, &idx.pool(), &idx.test)?;
            let model = eval::train_reference(&split.train_x, &split.train_y, cfg.task, cfg.train)?;
            let base = eval::model_cir_scores(&model, &split.train_x, cfg.mode)?;
            let moved = eval::model_cir_scores(&model, &other.features, cfg.mode)?;
            let names = d.features.feature_names();
            let entries: Vec<Value> = eval::drift_delta(&base, &moved)?
                .into_iter()
                .map(|e| json!({ "feature": e.feature, "name": names[e.feature], "delta": e.delta }))
                .collect();
            Some(entries)
        }
    };

    let curve_dir = a
        .curves_dir
        .clone()
        .or_else(|| a.out.output.as_ref().map(|p| p.parent().map(Path::to_path_buf).unwrap_or_default()));
    let mut curve_files = Vec::new();
    if let Some(dir) = curve_dir {
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let stem = a
            .out
            .output
            .as_ref()
            .and_then(|p| p.file_stem())
            .map_or_else(|| "eval".to_owned(), |s| s.to_string_lossy().into_owned());
        let mut put = |name: String, header: (&str, &str), pts: &[(f64, f64)]| -> Result<()> {
            let path = dir.join(format!("{stem}.{name}.csv"));
            write_curve(&path, header, pts)?;
            curve_files.push(path);
            Ok(())
        };
        for r in &report.replicates {
            for (method, res) in [("cir", &r.cir), ("permutation", &r.permutation)] {
                put(format!("{method}.seed{}.deletion", r.seed), ("fraction_removed", "score"), &res.curves.deletion_points())?;
                put(format!("{method}.seed{}.insertion", r.seed), ("fraction_inserted", "score"), &res.curves.insertion_points())?;
                let suff: Vec<(f64, f64)> = res.sufficiency.iter().map(|&(k, v)| (k as f64, v)).collect();
                put(format!("{method}.seed{}.sufficiency", r.seed), ("k", "score"), &suff)?;
                let nec: Vec<(f64, f64)> = res.necessity.iter().map(|&(k, v)| (k as f64, v)).collect();
                put(format!("{method}.seed{}.necessity", r.seed), ("k", "score"), &nec)?;
            }
        }
        let noise: Vec<(f64, f64)> = report.noise.iter().map(|l| (l.sigma, l.median_jaccard)).collect();
        put("noise".into(), ("sigma", "median_jaccard"), &noise)?;
        log::info!("wrote {} curve files", curve_files.len());
    }

    let mut run = RunConfig::new("eval", Some(&a.data), a)?;
    if let Some(p) = &a.drift_input {
        run.inputs.push(p.clone());
    }
    run.mode = Some(cfg.mode);
    run.seed = Some(a.seed);
    run.head_k = Some(a.head_k);
    run.output = a.out.output.clone();
    let mut body = serde_json::to_value(&report)?;
    body["feature_names"] = json!(d.features.feature_names());
    body["drift"] = json!(drift);
    body["curve_files"] = json!(curve_files);
    emit(with_config(run, body)?, &a.out)
}

pub fn synth_gen(a: &SynthArgs) -> Result<()> {
    let family = match a.family {
        FamilyArg::Vehicular => match Family::vehicular() {
            Family::Vehicular { rho_block, event_rate } => Family::Vehicular {
                rho_block: a.rho_block.unwrap_or(rho_block),
                event_rate: a.event_rate.unwrap_or(event_rate),
            },
            f => f,
        },
        FamilyArg::Linear => match Family::linear() {
            Family::Linear { weights, noise_sd } => Family::Linear {
                weights,
                noise_sd: a.noise_sd.unwrap_or(noise_sd),
            },
            f => f,
        },
        FamilyArg::Nonlinear => Family::Nonlinear {
            noise_sd: a.noise_sd.unwrap_or(0.5),
        },
    };
    if a.family != FamilyArg::Vehicular && (a.rho_block.is_some() || a.event_rate.is_some()) {
        bail!("--rho-block and --event-rate apply to the vehicular family only");
    }
    if a.family == FamilyArg::Vehicular && a.noise_sd.is_some() {
        bail!("--noise-sd does not apply to the vehicular family");
    }
    let config = SynthConfig::new(a.n, a.seed, family);
    let s = synth::generate(&config)?;

    let mut cols: Vec<Vec<f64>> = (0..s.data.n_features()).map(|i| s.data.column(i).to_vec()).collect();
    let mut names: Vec<String> = s.data.feature_names().to_vec();
    let outputs: Vec<&str> = match &s.labels {
        Some(l) => {
            cols.push(l.clone());
            cols.push(s.output.column(0).to_vec());
            vec!["label", "risk"]
        }
        None => {
            cols.push(s.output.column(0).to_vec());
            vec!["y"]
        }
    };
    names.extend(outputs.iter().map(|s| s.to_string()));
    let table = DataMatrix::from_columns(&cols, Some(names))?;
    data_io::write_csv(&a.output, &table, None).with_context(|| format!("writing {}", a.output.display()))?;

    let sidecar = a.output.with_extension("truth.json");
    let mut run = RunConfig::new("synth-gen", None, a)?;
    run.seed = Some(a.seed);
    run.output = Some(a.output.clone());
    let body = json!({
        "csv": a.output,
        "feature_names": s.data.feature_names(),
        "output_columns": outputs,
        "truth": s.truth,
    });
    data_io::write_report(&with_config(run, body)?, &sidecar)
        .with_context(|| format!("writing {}", sidecar.display()))?;
    Ok(())
}
