//! Command bodies. Each resolves its settings, claims its output files, does
//! the work and writes everything at the end.

use std::io::Write;
use std::path::{Path, PathBuf};

use ndgg::analysis::{self, BucketAccuracy};
use ndgg::dataset::{load_container, row_normalized, Dataset};
use ndgg::graph::connected_components;
use ndgg::model::{GraphInputs, ModelConfig};
use ndgg::train::{train_with_inputs, EpochRecord, MetricsReport, TrainConfig, TrainOutcome};
use ndgg::Tensor;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::output::{cell, mean_std, Csv, Outputs};
use crate::{CliError, RunConfig};

const DEFAULT_MDCN_KMAX: usize = 20;
const DEFAULT_LIMIT_KMAX: usize = 200;

pub fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    if !path.is_file() {
        return Err(CliError::Usage(format!("dataset not found: {}", path.display())));
    }
    Ok(load_container(path)?)
}

fn dataset_echo(run: &RunConfig) -> Value {
    json!(run.dataset.as_ref().map(|p| p.display().to_string()))
}

/// Effective settings of one training run.
pub fn train_echo(run: &RunConfig, model: &ModelConfig, train: &TrainConfig) -> Value {
    json!({ "dataset": dataset_echo(run), "model": model, "train": train })
}

/// Trains one run per seed, in parallel, results in seed order.
pub fn train_seeds(
    dataset: &Dataset,
    model_cfg: &ModelConfig,
    run: &RunConfig,
    seeds: &[u64],
) -> Result<Vec<TrainOutcome>, CliError> {
    let inputs = GraphInputs::new(dataset, model_cfg)?;
    let train_cfgs = seeds
        .iter()
        .map(|&s| run.train_config(s))
        .collect::<Result<Vec<_>, _>>()?;
    let outcomes = train_cfgs
        .par_iter()
        .map(|tc| {
            let mut o = train_with_inputs(dataset, &inputs, model_cfg, tc)?;
            o.report.config = train_echo(run, model_cfg, tc);
            Ok(o)
        })
        .collect::<Result<Vec<_>, ndgg::Error>>()?;
    Ok(outcomes)
}

pub fn history_csv(config: &Value, history: &[EpochRecord]) -> String {
    let mut csv = Csv::new(config, &["epoch", "train_loss", "val_acc", "test_acc", "lr"]);
    for r in history {
        csv.row(&[
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.val_acc.to_string(),
            r.test_acc.to_string(),
            r.lr.to_string(),
        ]);
    }
    csv.finish()
}

#[derive(Debug, Serialize)]
struct Summary {
    mean: f64,
    std: f64,
}

#[derive(Debug, Serialize)]
struct SeedLine {
    seed: u64,
    epoch: usize,
    val_acc: f64,
    test_acc: f64,
}

#[derive(Debug, Serialize)]
struct Aggregate {
    runs: Vec<SeedLine>,
    val_acc: Summary,
    test_acc: Summary,
    config: Value,
}

fn summary(values: &[f64]) -> Summary {
    let (mean, std) = mean_std(values).unwrap_or((f64::NAN, f64::NAN));
    Summary { mean, std }
}

pub fn train(run: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let kind = run.single_model()?;
    let model_cfg = run.model_config(kind)?;
    let seeds = run.seed_list()?;
    run.train_config(0)?;
    let single = seeds.len() == 1;
    let seed_dir = |s: u64| if single { PathBuf::new() } else { PathBuf::from(format!("seed-{s}")) };

    let mut planned = Vec::new();
    for &s in &seeds {
        planned.push(seed_dir(s).join("metrics.json"));
        planned.push(seed_dir(s).join("history.csv"));
    }
    if !single {
        planned.push(PathBuf::from("aggregate.json"));
    }
    let mut outputs = Outputs::new(run.out_dir(), run.force);
    outputs.claim(&planned)?;

    let dataset = load_dataset(run.dataset_path()?)?;
    let outcomes = train_seeds(&dataset, &model_cfg, run, &seeds)?;
    for o in &outcomes {
        let dir = seed_dir(o.report.seed);
        outputs.add_json(dir.join("metrics.json"), &o.report)?;
        outputs.add(dir.join("history.csv"), history_csv(&o.report.config, &o.history));
        let _ = writeln!(
            out,
            "seed {}: test_acc {:.4} val_acc {:.4} (epoch {})",
            o.report.seed, o.report.test_acc, o.report.val_acc, o.report.epoch
        );
    }
    if !single {
        let reports: Vec<&MetricsReport> = outcomes.iter().map(|o| &o.report).collect();
        let test: Vec<f64> = reports.iter().map(|r| r.test_acc).collect();
        let val: Vec<f64> = reports.iter().map(|r| r.val_acc).collect();
        let mut config = train_echo(run, &model_cfg, &run.train_config(seeds[0])?);
        config["train"]["seed"] = json!(seeds);
        let agg = Aggregate {
            runs: reports
                .iter()
                .map(|r| SeedLine {
                    seed: r.seed,
                    epoch: r.epoch,
                    val_acc: r.val_acc,
                    test_acc: r.test_acc,
                })
                .collect(),
            val_acc: summary(&val),
            test_acc: summary(&test),
            config,
        };
        let _ = writeln!(
            out,
            "{} seeds: test_acc {:.4} ± {:.4}",
            seeds.len(),
            agg.test_acc.mean,
            agg.test_acc.std
        );
        outputs.add_json("aggregate.json", &agg)?;
    }
    outputs.write()?;
    Ok(())
}

/// Overall accuracy under the bucket name `all`, then one entry per bucket.
pub fn bucket_rows(outcome: &TrainOutcome, dataset: &Dataset, spec: &analysis::BucketSpec) -> Result<Vec<BucketAccuracy>, CliError> {
    let inputs = GraphInputs::new(dataset, &outcome.model.config)?;
    let logits = outcome.model.logits(&inputs)?;
    let test = &dataset.masks().test;
    let correct = test
        .iter()
        .filter(|&&i| dataset.labels()[i] == Some(logits.argmax_row(i)))
        .count();
    let mut rows = vec![BucketAccuracy {
        bucket: "all".into(),
        lo: 0,
        hi: None,
        count: test.len(),
        correct,
        accuracy: Some(correct as f64 / test.len() as f64),
    }];
    rows.extend(analysis::degree_bucket_accuracy(&logits, dataset, spec)?);
    Ok(rows)
}

pub fn sweep_depth(run: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let kinds = run.models()?;
    let depths = run.depth_list()?;
    let seeds = run.seed_list()?;
    let spec = run.bucket_spec()?;
    let mut jobs = Vec::new();
    for &kind in &kinds {
        for &depth in &depths {
            let cfg = RunConfig {
                layers: Some(depth),
                ..run.clone()
            }
            .model_config(kind)?;
            for &seed in &seeds {
                jobs.push((cfg.clone(), run.train_config(seed)?));
            }
        }
    }
    let mut outputs = Outputs::new(run.out_dir(), run.force);
    outputs.claim(&[PathBuf::from("sweep.csv")])?;

    let dataset = load_dataset(run.dataset_path()?)?;
    let results = jobs
        .par_iter()
        .map(|(mc, tc)| {
            let inputs = GraphInputs::new(&dataset, mc)?;
            let o = train_with_inputs(&dataset, &inputs, mc, tc)?;
            let rows = bucket_rows(&o, &dataset, &spec)?;
            Ok::<_, CliError>(rows)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut model_echo = json!(run.model_config(kinds[0])?);
    model_echo["kind"] = json!(kinds.iter().map(|k| k.as_str()).collect::<Vec<_>>());
    model_echo["layers"] = json!(depths);
    let mut train_part = json!(run.train_config(seeds[0])?);
    train_part["seed"] = json!(seeds);
    let config = json!({
        "dataset": dataset_echo(run),
        "buckets": spec.to_string(),
        "model": model_echo,
        "train": train_part,
    });
    let mut csv = Csv::new(&config, &["model", "depth", "seed", "bucket", "count", "correct", "accuracy", "std"]);
    let mut result_iter = results.iter();
    for &kind in &kinds {
        for &depth in &depths {
            let per_seed: Vec<&Vec<BucketAccuracy>> = result_iter.by_ref().take(seeds.len()).collect();
            for (seed, rows) in seeds.iter().zip(&per_seed) {
                for r in rows.iter() {
                    csv.row(&[
                        kind.to_string(),
                        depth.to_string(),
                        seed.to_string(),
                        r.bucket.clone(),
                        r.count.to_string(),
                        r.correct.to_string(),
                        cell(r.accuracy),
                        String::new(),
                    ]);
                }
            }
            for b in 0..per_seed[0].len() {
                let accs: Vec<f64> = per_seed.iter().filter_map(|rows| rows[b].accuracy).collect();
                let agg = mean_std(&accs);
                let r = &per_seed[0][b];
                csv.row(&[
                    kind.to_string(),
                    depth.to_string(),
                    "mean".into(),
                    r.bucket.clone(),
                    r.count.to_string(),
                    String::new(),
                    cell(agg.map(|a| a.0)),
                    cell(agg.map(|a| a.1)),
                ]);
                if b == 0 {
                    let (m, s) = agg.unwrap_or((f64::NAN, f64::NAN));
                    let _ = writeln!(out, "{kind} depth {depth}: test_acc {m:.4} ± {s:.4}");
                }
            }
        }
    }
    outputs.add("sweep.csv", csv.finish());
    outputs.write()?;
    Ok(())
}

/// Features as the models see them.
fn analysis_features(run: &RunConfig, dataset: &Dataset) -> Tensor {
    if run.row_normalize.unwrap_or(true) {
        row_normalized(dataset.features())
    } else {
        dataset.features().clone()
    }
}

fn analysis_echo(run: &RunConfig, extra: Value) -> Value {
    let mut v = json!({
        "dataset": dataset_echo(run),
        "row-normalize": run.row_normalize.unwrap_or(true),
    });
    if let (Value::Object(base), Value::Object(more)) = (&mut v, extra) {
        base.extend(more);
    }
    v
}

fn write_single(run: &RunConfig, name: &str, contents: String, out: &mut dyn Write) -> Result<(), CliError> {
    let mut outputs = Outputs::new(run.out_dir(), run.force);
    outputs.add(name, contents);
    for p in outputs.write()? {
        let _ = writeln!(out, "wrote {}", p.display());
    }
    Ok(())
}

pub fn mdcn(run: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let kmax = run.kmax.unwrap_or(DEFAULT_MDCN_KMAX);
    Outputs::new(run.out_dir(), run.force).claim(&[PathBuf::from("mdcn.csv")])?;
    let dataset = load_dataset(run.dataset_path()?)?;
    let x = analysis_features(run, &dataset);
    let curve = analysis::mdcn_vs_depth(dataset.graph(), &x, kmax)?;
    let config = analysis_echo(run, json!({ "kmax": kmax }));
    write_single(run, "mdcn.csv", curve_with_config(&config, &curve), out)
}

fn curve_with_config(config: &Value, curve: &[f64]) -> String {
    crate::output::config_comment(config) + &analysis::curve_csv(curve)
}

pub fn kbound(run: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = run.kbound_config()?;
    Outputs::new(run.out_dir(), run.force).claim(&[PathBuf::from("kbound.json")])?;
    let dataset = load_dataset(run.dataset_path()?)?;
    let l2 = analysis::lambda2(dataset.graph())?;
    let kb = analysis::k_bound(dataset.graph(), &cfg, l2)?;
    let _ = writeln!(out, "lambda2 {l2}{}", if kb.degenerate { " (degenerate)" } else { "" });
    let mut value = serde_json::to_value(&kb).map_err(|e| CliError::Run(ndgg::Error::InvalidArgument(e.to_string())))?;
    value["config"] = analysis_echo(run, json!({ "eps": cfg.eps }));
    let mut outputs = Outputs::new(run.out_dir(), run.force);
    outputs.add_json("kbound.json", &value)?;
    outputs.write()?;
    Ok(())
}

pub fn limit(run: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let kmax = run.kmax.unwrap_or(DEFAULT_LIMIT_KMAX);
    Outputs::new(run.out_dir(), run.force).claim(&[PathBuf::from("limit.csv")])?;
    let dataset = load_dataset(run.dataset_path()?)?;
    let x = analysis_features(run, &dataset);
    let comps = connected_components(dataset.graph());
    let members = comps.members(comps.largest());
    let curve = analysis::smoothing_limit_oracle(dataset.graph(), &x, &members, kmax)?;
    let config = analysis_echo(run, json!({ "kmax": kmax, "component-size": members.len() }));
    write_single(run, "limit.csv", curve_with_config(&config, &curve), out)
}

pub fn buckets(run: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let kind = run.single_model()?;
    let model_cfg = run.model_config(kind)?;
    let seeds = run.seed_list()?;
    let spec = run.bucket_spec()?;
    run.train_config(0)?;
    Outputs::new(run.out_dir(), run.force).claim(&[PathBuf::from("buckets.csv")])?;
    let dataset = load_dataset(run.dataset_path()?)?;
    let outcomes = train_seeds(&dataset, &model_cfg, run, &seeds)?;

    let mut config = train_echo(run, &model_cfg, &run.train_config(seeds[0])?);
    config["train"]["seed"] = json!(seeds);
    config["buckets"] = json!(spec.to_string());
    let mut csv = Csv::new(&config, &["seed", "bucket", "lo", "hi", "count", "correct", "accuracy"]);
    for o in &outcomes {
        for r in bucket_rows(o, &dataset, &spec)? {
            csv.row(&[
                o.report.seed.to_string(),
                r.bucket,
                r.lo.to_string(),
                cell(r.hi),
                r.count.to_string(),
                r.correct.to_string(),
                cell(r.accuracy),
            ]);
        }
    }
    write_single(run, "buckets.csv", csv.finish(), out)
}
