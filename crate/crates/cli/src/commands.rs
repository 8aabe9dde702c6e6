//! Subcommand implementations.

use std::collections::BTreeMap;

use anyhow::{bail, Context, Result};
use explagg::aggregate::{
    aggregate_mean, aggregate_median, lower_complexity_descent, lower_complexity_region,
    optimize_convex_weight, ExplanationSet,
};
use explagg::ava::{Ava, AvaConfig};
use explagg::data::{baseline, Baseline, BaselineKind, Dataset, NeighborhoodSpec};
use explagg::explain::{Call, Explainer};
use explagg::metrics::{
    addition_score, compatibility_at, complexity, conviction_score, deletion_score, faithfulness,
    identity_at, remove_and_retrain, separability_score, CriterionConfig, DensityEstimator,
    FaithfulnessConfig, RetrainConfig, RetrainMode, SensitivityEvaluator,
};
use explagg::model::{train, Model};
use explagg::report::{
    atomic_write, evaluate_points, mean_std, AttributionDump, BatchOutcome, CriterionReport,
    DumpRow, PointValue, SkippedPoint,
};
use explagg::Error;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::{BaselineChoice, Method, RunConfig};
use crate::explainers::{parse_all, CliExplainer};

/// Tolerance of the in-run descent guarantee check.
const DESCENT_CHECK_TOLERANCE: f64 = 1e-9;

/// Data, model and baseline shared by the subcommands.
struct Setup {
    train: Dataset<f64>,
    test: Dataset<f64>,
    model: Model<f64>,
    baseline: Baseline<f64>,
}

impl Setup {
    fn points(&self) -> Vec<(usize, &[f64])> {
        (0..self.test.len())
            .map(|i| (self.test.ids()[i], self.test.row(i)))
            .collect()
    }
}

fn log(cfg: &RunConfig, msg: impl FnOnce() -> String) {
    if cfg.verbosity > 0 {
        eprintln!("{}", msg());
    }
}

fn load_split(cfg: &RunConfig) -> Result<(Dataset<f64>, Dataset<f64>)> {
    let path = cfg.require_data()?;
    let data = Dataset::<f64>::load_csv(path, &cfg.label_col, false)?;
    let (train, test) = match &cfg.test_data {
        Some(p) => (data, Dataset::load_csv(p, &cfg.label_col, false)?),
        None => data.train_test_split(cfg.test_fraction, cfg.seed),
    };
    if train.is_empty() || test.is_empty() {
        bail!(
            "train/test split left an empty side ({} / {} rows)",
            train.len(),
            test.len()
        );
    }
    if train.dim() != test.dim() {
        return Err(Error::DimensionMismatch {
            expected: train.dim(),
            got: test.dim(),
        }
        .into());
    }
    if !cfg.normalize {
        return Ok((train, test));
    }
    let train = train.normalized();
    let stats = train
        .normalization()
        .expect("normalized data carries stats")
        .to_vec();
    let test = test.normalized_with(&stats)?;
    Ok((train, test))
}

fn setup(cfg: &RunConfig) -> Result<Setup> {
    let (train_set, test) = load_split(cfg)?;
    let model = match &cfg.model {
        Some(p) => {
            let m = Model::load(p).with_context(|| format!("loading model {}", p.display()))?;
            if m.input_dim() != train_set.dim() {
                return Err(Error::DimensionMismatch {
                    expected: train_set.dim(),
                    got: m.input_dim(),
                }
                .into());
            }
            m
        }
        None => {
            log(cfg, || format!("training on {} rows", train_set.len()));
            train(&train_set, &cfg.train)?.model
        }
    };
    let kind = match cfg.baseline {
        BaselineChoice::Zero => BaselineKind::Zero,
        BaselineChoice::Mean => BaselineKind::TrainingMean,
    };
    let baseline = baseline(&train_set, &kind)?;
    Ok(Setup {
        train: train_set,
        test,
        model,
        baseline,
    })
}

fn criterion_config(cfg: &RunConfig) -> CriterionConfig {
    CriterionConfig {
        metric: cfg.metric_d,
        neighborhood: NeighborhoodSpec {
            radius: cfg.radius,
            metric: cfg.rho,
            require_same_prediction: cfg.require_same_prediction,
        },
        faithfulness: FaithfulnessConfig {
            subset_size: cfg.subset_size,
            num_subsets: cfg.num_subsets,
            ..FaithfulnessConfig::default()
        },
        normalize: cfg.normalize_explanations,
        seed: cfg.seed,
    }
}

fn explainer_seed(e: &CliExplainer) -> u64 {
    match e {
        CliExplainer::Builtin { config, .. } => config.seed,
        CliExplainer::Random { seed, .. } => *seed,
        CliExplainer::Constant { .. } => 0,
    }
}

fn write_json(path: &std::path::Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    atomic_write(path, text.as_bytes())?;
    Ok(())
}

fn fmt_stat(mean: Option<f64>, std: Option<f64>) -> String {
    match (mean, std) {
        (Some(m), Some(s)) => format!("{m:.4} ± {s:.4}"),
        _ => "n/a".into(),
    }
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let out = cfg.require_out()?;
    let (train_set, test) = load_split(cfg)?;
    let outcome = train(&train_set, &cfg.train)?;
    let test_accuracy = outcome.model.accuracy(&test)?;
    let provenance = json!({ "config": cfg.to_json() });
    atomic_write(
        out,
        outcome
            .model
            .to_text_with_provenance(&provenance)
            .as_bytes(),
    )?;
    println!("train accuracy: {:.4}", outcome.train_accuracy);
    println!("test accuracy: {test_accuracy:.4}");
    println!("model written to {}", out.display());
    Ok(())
}

pub fn cmd_explain(cfg: &RunConfig) -> Result<()> {
    let out = cfg.require_out()?;
    let s = setup(cfg)?;
    let explainers = parse_all(&cfg.explainers, &s.baseline, cfg.target, cfg.seed)?;
    let points = s.points();
    let per_point: Vec<Vec<DumpRow>> = points
        .par_iter()
        .map(|&(id, x)| {
            explainers
                .iter()
                .map(|e| {
                    Ok(DumpRow {
                        input_id: id,
                        explainer: e.name(),
                        seed: explainer_seed(e),
                        values: e.explain(&s.model, x, Call::id(id))?,
                    })
                })
                .collect::<explagg::Result<Vec<_>>>()
        })
        .collect::<explagg::Result<_>>()?;
    let dump = AttributionDump {
        provenance: vec![json!({
            "config": cfg.to_json(),
            "feature_names": s.test.feature_names(),
        })],
        rows: per_point.into_iter().flatten().collect(),
    };
    dump.save(out)?;
    println!(
        "{} rows ({} inputs x {} explainers) written to {}",
        dump.rows.len(),
        points.len(),
        explainers.len(),
        out.display()
    );
    Ok(())
}

/// Canonical criterion name for an accepted alias.
fn criterion_name(name: &str) -> Result<&'static str> {
    Ok(match name {
        "max_sensitivity" | "max_sens" | "mu_m" => "max_sensitivity",
        "avg_sensitivity" | "avg_sens" | "mu_a" => "avg_sensitivity",
        "faithfulness" | "mu_f" => "faithfulness",
        "complexity" | "mu_c" => "complexity",
        "identity" => "identity",
        "separability" => "separability",
        "conviction" => "conviction",
        "conditional_conviction" => "conditional_conviction",
        "compatibility" => "compatibility",
        "deletion" => "deletion",
        "addition" => "addition",
        "roar" => "roar",
        "kar" => "kar",
        other => bail!("unknown criterion `{other}`"),
    })
}

fn evaluate_criterion(
    criterion: &'static str,
    e: &CliExplainer,
    s: &Setup,
    cfg: &RunConfig,
    crit: &CriterionConfig,
) -> Result<CriterionReport> {
    let model = &s.model;
    let points = s.points();
    let k = cfg.k;
    let mut config = json!({ "criterion": crit });
    let mut details = Value::Null;
    let outcome = match criterion {
        "max_sensitivity" | "avg_sensitivity" => {
            let ev = SensitivityEvaluator::new(model, e, &s.train, crit)?;
            evaluate_points(&points, |id, x| {
                let r = ev.evaluate(x, Call::id(id))?;
                Ok(if criterion == "max_sensitivity" {
                    r.max
                } else {
                    r.avg
                })
            })?
        }
        "faithfulness" => evaluate_points(&points, |id, x| {
            Ok(faithfulness(model, e, x, Call::id(id), &s.baseline, crit)?.value)
        })?,
        "complexity" => evaluate_points(&points, |id, x| {
            complexity(&e.explain(model, x, Call::id(id))?)
        })?,
        "identity" => evaluate_points(&points, |id, x| {
            Ok(identity_at(model, e, x, Some(id))? as f64)
        })?,
        "separability" => {
            let score = separability_score(model, e, &s.test, cfg.seed)?;
            details = json!({ "score": score });
            BatchOutcome::default()
        }
        "conviction" => {
            let density = DensityEstimator::fit_explanations(model, e, &s.train, None);
            evaluate_points(&points, |id, x| match &density {
                Ok(d) => conviction_score(model, e, x, Call::id(id), d),
                Err(err) => Err(err.clone()),
            })?
        }
        "conditional_conviction" => {
            let classes: Vec<usize> = points
                .iter()
                .map(|&(_, x)| model.predicted_class(x))
                .collect::<explagg::Result<_>>()?;
            let mut densities = BTreeMap::new();
            for &c in &classes {
                densities.entry(c).or_insert_with(|| {
                    DensityEstimator::fit_explanations(model, e, &s.train, Some(c))
                });
            }
            let class_of: BTreeMap<usize, usize> =
                points.iter().map(|p| p.0).zip(classes).collect();
            evaluate_points(&points, |id, x| match &densities[&class_of[&id]] {
                Ok(d) => conviction_score(model, e, x, Call::id(id), d),
                Err(err) => Err(err.clone()),
            })?
        }
        "compatibility" => {
            let target = e.target(cfg.target);
            config["target"] = json!(target);
            evaluate_points(&points, |id, x| {
                compatibility_at(model, e, x, Call::id(id), target)
            })?
        }
        "deletion" | "addition" => {
            config["k"] = json!(k);
            config["baseline"] = json!(s.baseline.values);
            evaluate_points(&points, |id, x| {
                if criterion == "deletion" {
                    deletion_score(model, e, x, Call::id(id), k, &s.baseline)
                } else {
                    addition_score(model, e, x, Call::id(id), k, &s.baseline)
                }
            })?
        }
        "roar" | "kar" => {
            let retrain = RetrainConfig {
                train: cfg.train.clone(),
                seeds: cfg.retrain_seeds.clone(),
                eval_fraction: cfg.eval_fraction,
            };
            config["k"] = json!(k);
            config["retrain"] = json!(retrain);
            config["baseline"] = json!(s.baseline.values);
            let mode = if criterion == "roar" {
                RetrainMode::Roar
            } else {
                RetrainMode::Kar
            };
            let report = remove_and_retrain(model, e, &s.train, k, &s.baseline, &retrain, mode)?;
            details = json!({ "score": report.score, "retrain": report });
            BatchOutcome::default()
        }
        other => unreachable!("criterion `{other}` resolved above"),
    };
    Ok(CriterionReport::new(criterion, e.name(), outcome, config).with_details(details))
}

fn summary_cell(r: &CriterionReport) -> String {
    match r.details.get("score").and_then(Value::as_f64) {
        Some(score) if r.count == 0 => format!("{score:.4} (dataset)"),
        _ => fmt_stat(r.mean, r.std),
    }
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<()> {
    let out = cfg.require_out()?;
    let s = setup(cfg)?;
    let explainers = parse_all(&cfg.explainers, &s.baseline, cfg.target, cfg.seed)?;
    let criteria = cfg
        .criteria
        .iter()
        .map(|c| criterion_name(c))
        .collect::<Result<Vec<_>>>()?;
    let crit = criterion_config(cfg);
    let mut reports = Vec::new();
    for &c in &criteria {
        for e in &explainers {
            log(cfg, || format!("{c} / {}", e.name()));
            reports.push(evaluate_criterion(c, e, &s, cfg, &crit)?);
        }
    }
    write_json(out, &json!({ "config": cfg.to_json(), "reports": reports }))?;
    println!(
        "{:<24} {:<32} {:>24} {:>6} {:>8}",
        "criterion", "explainer", "mean ± std", "count", "skipped"
    );
    for r in &reports {
        println!(
            "{:<24} {:<32} {:>24} {:>6} {:>8}",
            r.criterion,
            r.explainer,
            summary_cell(r),
            r.count,
            r.skipped
        );
    }
    Ok(())
}

/// One aggregated input: member complexities and the aggregate.
struct AggregatedPoint {
    input_id: usize,
    member_complexity: Vec<Option<f64>>,
    values: Vec<f64>,
    complexity: f64,
}

fn aggregate_point(
    method: Method,
    members: Vec<Vec<f64>>,
    cfg: &RunConfig,
) -> explagg::Result<(Vec<f64>, f64)> {
    let set = ExplanationSet::new(members)?.normalized()?;
    let values = match method {
        Method::Mean => aggregate_mean(&set).values,
        Method::Median => aggregate_median(&set).values,
        Method::Descent => lower_complexity_descent(&set, &cfg.lowering)?.result.values,
        Method::Region => lower_complexity_region(&set, &cfg.lowering)?.result.values,
        Method::Convex => unreachable!("convex handled separately"),
    };
    let c = complexity(&values)?;
    Ok((values, c))
}

pub fn cmd_aggregate(cfg: &RunConfig) -> Result<()> {
    let out = cfg.require_out()?;
    let s = setup(cfg)?;
    let explainers = parse_all(&cfg.explainers, &s.baseline, cfg.target, cfg.seed)?;
    if explainers.is_empty() {
        bail!("aggregate needs at least one explainer");
    }
    if cfg.method == Method::Convex {
        return aggregate_convex(cfg, &s, &explainers, out);
    }
    let points = s.points();
    let results: Vec<explagg::Result<AggregatedPoint>> = points
        .par_iter()
        .map(|&(id, x)| {
            let members = explainers
                .iter()
                .map(|e| e.explain(&s.model, x, Call::id(id)))
                .collect::<explagg::Result<Vec<_>>>()?;
            let member_complexity = members.iter().map(|m| complexity(m).ok()).collect();
            let (values, c) = aggregate_point(cfg.method, members, cfg)?;
            Ok(AggregatedPoint {
                input_id: id,
                member_complexity,
                values,
                complexity: c,
            })
        })
        .collect();
    let mut done = Vec::new();
    let mut skipped = Vec::new();
    for (&(id, _), r) in points.iter().zip(results) {
        match r {
            Ok(p) => done.push(p),
            Err(Error::ZeroAttribution) => skipped.push(SkippedPoint {
                input_id: id,
                reason: Error::ZeroAttribution.to_string(),
            }),
            Err(e) => return Err(e.into()),
        }
    }
    if cfg.method == Method::Descent {
        for p in &done {
            let best = p
                .member_complexity
                .iter()
                .flatten()
                .copied()
                .fold(f64::INFINITY, f64::min);
            if p.complexity > best + DESCENT_CHECK_TOLERANCE {
                bail!(
                    "descent raised complexity at input {}: {} > {}",
                    p.input_id,
                    p.complexity,
                    best
                );
            }
        }
    }
    let agg_name = format!("agg:{}", cfg.method.name());
    let mut rows_summary = Vec::new();
    for (j, e) in explainers.iter().enumerate() {
        let (mean, std) = mean_std(done.iter().filter_map(|p| p.member_complexity[j]));
        rows_summary
            .push(json!({ "explainer": e.name(), "complexity_mean": mean, "complexity_std": std }));
    }
    let (mean, std) = mean_std(done.iter().map(|p| p.complexity));
    rows_summary
        .push(json!({ "explainer": agg_name, "complexity_mean": mean, "complexity_std": std }));
    let summary = json!({
        "method": cfg.method.name(),
        "members": explainers.iter().map(|e| e.name()).collect::<Vec<_>>(),
        "points": done.len(),
        "skipped": skipped,
        "rows": rows_summary,
    });
    let dump = AttributionDump {
        provenance: vec![
            json!({ "config": cfg.to_json() }),
            json!({ "summary": summary }),
        ],
        rows: done
            .iter()
            .map(|p| DumpRow {
                input_id: p.input_id,
                explainer: agg_name.clone(),
                seed: cfg.seed,
                values: p.values.clone(),
            })
            .collect(),
    };
    dump.save(out)?;
    print_table("complexity", &summary);
    Ok(())
}

fn aggregate_convex(
    cfg: &RunConfig,
    s: &Setup,
    explainers: &[CliExplainer],
    out: &std::path::Path,
) -> Result<()> {
    let [g1, g2] = explainers else {
        bail!(
            "method convex needs exactly two explainers, got {}",
            explainers.len()
        );
    };
    let crit = criterion_config(cfg);
    let outcome = optimize_convex_weight(g1, g2, &s.model, &s.train, &s.test, &crit)?;
    let agg_name = format!("agg:convex:w={}", outcome.weight);
    let (at_zero, at_one) = outcome.endpoint_objectives;
    let summary = json!({
        "method": "convex",
        "members": [g1.name(), g2.name()],
        "points": outcome.evaluated_points,
        "skipped": outcome.skipped_points,
        "weight": outcome.weight,
        "is_vertex": outcome.is_vertex,
        "rows": [
            { "explainer": g1.name(), "avg_sensitivity_mean": at_one },
            { "explainer": g2.name(), "avg_sensitivity_mean": at_zero },
            { "explainer": agg_name, "avg_sensitivity_mean": outcome.objective },
        ],
    });
    let dump = AttributionDump {
        provenance: vec![
            json!({ "config": cfg.to_json() }),
            json!({ "summary": summary }),
        ],
        rows: outcome
            .explanations
            .iter()
            .map(|(id, v)| DumpRow {
                input_id: *id,
                explainer: agg_name.clone(),
                seed: cfg.seed,
                values: v.clone(),
            })
            .collect(),
    };
    dump.save(out)?;
    print_table("avg_sensitivity", &summary);
    Ok(())
}

fn print_table(quantity: &str, summary: &Value) {
    println!(
        "method: {} (points: {})",
        summary["method"].as_str().unwrap_or(""),
        summary["points"]
    );
    println!("{:<40} {:>24}", "explainer", quantity);
    for row in summary["rows"].as_array().into_iter().flatten() {
        let name = row["explainer"].as_str().unwrap_or("");
        let cell = match (row.get("complexity_mean"), row.get("avg_sensitivity_mean")) {
            (Some(m), _) => fmt_stat(m.as_f64(), row["complexity_std"].as_f64()),
            (_, Some(m)) => m.as_f64().map_or("n/a".into(), |v| format!("{v:.4}")),
            _ => "n/a".into(),
        };
        println!("{name:<40} {cell:>24}");
    }
}

pub fn cmd_ava(cfg: &RunConfig) -> Result<()> {
    let out = cfg.require_out()?;
    let s = setup(cfg)?;
    let explainers = parse_all(&cfg.explainers, &s.baseline, cfg.target, cfg.seed)?;
    let backend = explainers
        .iter()
        .find_map(|e| e.builtin().filter(|c| c.kind.is_shapley()))
        .cloned()
        .context("ava needs a Shapley explainer (ss, shap or exact)")?;
    let shap = CliExplainer::Builtin {
        name: explainers
            .iter()
            .find(|e| e.builtin() == Some(&backend))
            .map(|e| e.name())
            .expect("backend comes from the list"),
        config: backend.clone(),
    };
    let ava = Ava::new(
        &s.train,
        AvaConfig {
            k: cfg.k,
            metric: cfg.rho,
            backend,
            normalize_weights: cfg.ava_normalize_weights,
            cache: true,
        },
    )?;
    let crit = criterion_config(cfg);
    let points = s.points();
    let mut reports = Vec::new();
    let mut summary = serde_json::Map::new();
    let methods: [(&str, &dyn Explainer<f64>); 2] = [("shap", &shap), ("ava", &ava)];
    for (label, e) in methods {
        log(cfg, || format!("evaluating {}", e.name()));
        let ev = SensitivityEvaluator::new(&s.model, e, &s.train, &crit)?;
        let sens: Vec<explagg::Result<(f64, f64)>> = points
            .par_iter()
            .map(|&(id, x)| ev.evaluate(x, Call::id(id)).map(|r| (r.avg, r.max)))
            .collect();
        let mut avg = BatchOutcome::default();
        let mut max = BatchOutcome::default();
        for (&(id, _), r) in points.iter().zip(sens) {
            match r {
                Ok((a, m)) => {
                    avg.values.push(PointValue {
                        input_id: id,
                        value: a,
                    });
                    max.values.push(PointValue {
                        input_id: id,
                        value: m,
                    });
                }
                Err(err) if explagg::report::is_skippable(&err) => {
                    let skip = SkippedPoint {
                        input_id: id,
                        reason: err.to_string(),
                    };
                    avg.skipped.push(skip.clone());
                    max.skipped.push(skip);
                }
                Err(err) => return Err(err.into()),
            }
        }
        let cx = evaluate_points(&points, |id, x| {
            complexity(&e.explain(&s.model, x, Call::id(id))?)
        })?;
        let config = json!({ "criterion": crit, "k": cfg.k });
        let mut cells = serde_json::Map::new();
        for (name, outcome) in [
            ("avg_sensitivity", avg),
            ("max_sensitivity", max),
            ("complexity", cx),
        ] {
            let r = CriterionReport::new(name, e.name(), outcome, config.clone());
            cells.insert(
                name.into(),
                json!({ "mean": r.mean, "std": r.std, "count": r.count, "skipped": r.skipped }),
            );
            reports.push(r);
        }
        summary.insert(label.into(), Value::Object(cells));
    }
    if let Some(dump_path) = &cfg.dump {
        let rows: Vec<Vec<DumpRow>> = points
            .par_iter()
            .map(|&(id, x)| {
                methods
                    .iter()
                    .map(|(_, e)| {
                        Ok(DumpRow {
                            input_id: id,
                            explainer: e.name(),
                            seed: explainer_seed(&shap),
                            values: e.explain(&s.model, x, Call::id(id))?,
                        })
                    })
                    .collect::<explagg::Result<Vec<_>>>()
            })
            .collect::<explagg::Result<_>>()?;
        AttributionDump {
            provenance: vec![json!({ "config": cfg.to_json() })],
            rows: rows.into_iter().flatten().collect(),
        }
        .save(dump_path)?;
    }
    let summary = Value::Object(summary);
    write_json(
        out,
        &json!({ "config": cfg.to_json(), "summary": summary, "reports": reports }),
    )?;
    println!(
        "{:<8} {:>22} {:>22} {:>22}",
        "", "avg_sensitivity", "max_sensitivity", "complexity"
    );
    for (label, name) in [("shap", "SHAP"), ("ava", "AVA")] {
        let cell = |c: &str| {
            fmt_stat(
                summary[label][c]["mean"].as_f64(),
                summary[label][c]["std"].as_f64(),
            )
        };
        println!(
            "{:<8} {:>22} {:>22} {:>22}",
            name,
            cell("avg_sensitivity"),
            cell("max_sensitivity"),
            cell("complexity")
        );
    }
    Ok(())
}
