use std::fs;
use std::path::{Path, PathBuf};

use ndgg::analysis::{degree_bucket_accuracy, lambda2, BucketSpec};
use ndgg::dataset::{save_container, Dataset};
use ndgg::model::{GraphInputs, ModelConfig, ModelKind};
use ndgg::synthetic::PlantedPartition;
use ndgg::train::{train, TrainConfig};
use serde_json::Value;
use tempfile::TempDir;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn ndgg(args: &[&str]) -> Run {
    let mut argv = vec!["ndgg".to_string()];
    argv.extend(args.iter().map(|a| a.to_string()));
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = ndgg_cli::run(argv, &mut out, &mut err);
    Run {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn planted() -> Dataset {
    PlantedPartition::default().generate(11).unwrap()
}

fn workspace() -> (TempDir, String) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("planted.ndgg");
    save_container(&planted(), &path).unwrap();
    let p = path.to_str().unwrap().to_string();
    (dir, p)
}

fn out(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_str().unwrap().to_string()
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Data rows of one of our CSV files (config comment and header dropped).
fn rows(path: impl AsRef<Path>) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    assert!(text.starts_with("# config: {"));
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes())
        .records()
        .map(|r| r.unwrap().iter().map(str::to_string).collect())
        .collect()
}

#[test]
fn missing_dataset_is_a_usage_error() {
    let r = ndgg(&["train", "--dataset", "/no/such/file.ndgg", "--model", "gcn", "--out", "/tmp/unused-ndgg"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("dataset not found"), "{}", r.stderr);
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(ndgg(&["analyze", "spectrum"]).code, 2);
    assert_eq!(ndgg(&["fly"]).code, 2);
    assert_eq!(ndgg(&["train", "--layers", "many"]).code, 2);
    assert_eq!(ndgg(&["train", "--seed", "1", "--seeds", "1..3"]).code, 2);
    let (dir, data) = workspace();
    let r = ndgg(&["sweep-depth", "--dataset", &data, "--model", "gcn", "--depths", "", "--out", &out(&dir, "s")]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("empty depth list"));
    let r = ndgg(&["train", "--dataset", &data, "--model", "gat", "--out", &out(&dir, "t")]);
    assert_eq!(r.code, 2);
    let r = ndgg(&["analyze", "kbound", "--dataset", &data, "--eps", "2", "--out", &out(&dir, "k")]);
    assert_eq!(r.code, 2);
}

#[test]
fn help_exits_cleanly() {
    let r = ndgg(&["--help"]);
    assert_eq!(r.code, 0);
    assert!(r.stdout.contains("sweep-depth"));
}

#[test]
fn corrupt_dataset_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.ndgg");
    fs::write(&bad, b"NDGG1 not really").unwrap();
    let r = ndgg(&["train", "--dataset", bad.to_str().unwrap(), "--model", "gcn", "--out", &out(&dir, "o")]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.starts_with("error:"));
}

#[test]
fn train_writes_reports_and_refuses_to_overwrite() {
    let (dir, data) = workspace();
    let o = out(&dir, "run");
    let args = ["train", "--dataset", &data, "--model", "gcn", "--seed", "4", "--epochs", "30", "--out", &o];
    assert_eq!(ndgg(&args).code, 0);
    let m = json(Path::new(&o).join("metrics.json"));
    assert_eq!(m["seed"], 4);
    assert_eq!(m["epochs_run"], 30);
    assert_eq!(m["config"]["model"]["kind"], "gcn");
    assert_eq!(m["config"]["train"]["max_epochs"], 30);
    assert_eq!(rows(Path::new(&o).join("history.csv")).len(), 30);

    let before = fs::read(Path::new(&o).join("metrics.json")).unwrap();
    let again = ndgg(&args);
    assert_eq!(again.code, 2);
    assert!(again.stderr.contains("--force"));
    assert_eq!(fs::read(Path::new(&o).join("metrics.json")).unwrap(), before);

    let mut forced = args.to_vec();
    forced.push("--force");
    assert_eq!(ndgg(&forced).code, 0);
}

#[test]
fn metrics_match_library_training() {
    let (dir, data) = workspace();
    let o = out(&dir, "run");
    assert_eq!(
        ndgg(&["train", "--dataset", &data, "--model", "ndggnet", "--layers", "3", "--seed", "2", "--epochs", "25", "--out", &o]).code,
        0
    );
    let m = json(Path::new(&o).join("metrics.json"));
    let cfg = ModelConfig::new(ModelKind::Ndggnet).with_layers(3);
    let tc = TrainConfig {
        seed: 2,
        max_epochs: 25,
        ..TrainConfig::default()
    };
    let lib = train(&planted(), &cfg, &tc).unwrap();
    assert_eq!(m["test_acc"].as_f64().unwrap(), lib.report.test_acc);
    assert_eq!(m["epoch"].as_u64().unwrap() as usize, lib.report.epoch);
    assert_eq!(m["train_loss"].as_f64().unwrap(), lib.report.train_loss);
}

#[test]
fn seed_list_writes_per_seed_reports_and_aggregate() {
    let (dir, data) = workspace();
    let o = out(&dir, "seeds");
    let r = ndgg(&["train", "--dataset", &data, "--model", "sgc", "--seeds", "1..4", "--epochs", "20", "--out", &o]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let accs: Vec<f64> = (1..=4)
        .map(|s| json(Path::new(&o).join(format!("seed-{s}/metrics.json")))["test_acc"].as_f64().unwrap())
        .collect();
    let mean = accs.iter().sum::<f64>() / 4.0;
    let var = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 3.0;
    let agg = json(Path::new(&o).join("aggregate.json"));
    assert!((agg["test_acc"]["mean"].as_f64().unwrap() - mean).abs() < 1e-15);
    assert!((agg["test_acc"]["std"].as_f64().unwrap() - var.sqrt()).abs() < 1e-15);
    assert_eq!(agg["runs"].as_array().unwrap().len(), 4);
    assert_eq!(agg["config"]["train"]["seed"], serde_json::json!([1, 2, 3, 4]));
}

#[test]
fn flags_override_config_file_which_overrides_defaults() {
    let (dir, data) = workspace();
    let cfg = dir.path().join("run.json");
    fs::write(
        &cfg,
        format!(r#"{{"dataset": "{data}", "model": "ndggnet", "layers": 3, "hidden": 8, "epochs": 5, "weight-decay": 0.001}}"#),
    )
    .unwrap();
    let o = out(&dir, "cfg");
    let r = ndgg(&["train", "--config", cfg.to_str().unwrap(), "--hidden", "4", "--out", &o]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let m = json(Path::new(&o).join("metrics.json"));
    assert_eq!(m["config"]["model"]["layers"], 3);
    assert_eq!(m["config"]["model"]["hidden"], 4);
    assert_eq!(m["config"]["model"]["degree_dim"], 16);
    assert_eq!(m["config"]["train"]["weight_decay"], 0.001);
    assert_eq!(m["config"]["train"]["init_lr"], 0.01);

    fs::write(&cfg, r#"{"layers": 3, "hiden": 8}"#).unwrap();
    let r = ndgg(&["train", "--config", cfg.to_str().unwrap(), "--out", &out(&dir, "bad")]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("hiden"));
}

#[test]
fn single_depth_sweep_equals_train_plus_bucket_accuracy() {
    let (dir, data) = workspace();
    let o = out(&dir, "sweep");
    let r = ndgg(&[
        "sweep-depth", "--dataset", &data, "--model", "gcn,ndggnet", "--depths", "3", "--seeds", "5", "--epochs", "20",
        "--buckets", "0,4,8", "--out", &o,
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let table = rows(Path::new(&o).join("sweep.csv"));
    let spec: BucketSpec = "0,4,8".parse().unwrap();
    let d = planted();
    for kind in [ModelKind::Gcn, ModelKind::Ndggnet] {
        let cfg = ModelConfig::new(kind).with_layers(3);
        let tc = TrainConfig {
            seed: 5,
            max_epochs: 20,
            ..TrainConfig::default()
        };
        let o = train(&d, &cfg, &tc).unwrap();
        let logits = o.model.logits(&GraphInputs::new(&d, &cfg).unwrap()).unwrap();
        let buckets = degree_bucket_accuracy(&logits, &d, &spec).unwrap();
        let mine: Vec<&Vec<String>> = table.iter().filter(|r| r[0] == kind.as_str() && r[2] == "5").collect();
        assert_eq!(mine.len(), 1 + spec.len());
        assert_eq!(mine[0][3], "all");
        assert_eq!(mine[0][6].parse::<f64>().unwrap(), o.report.test_acc);
        for (row, b) in mine[1..].iter().zip(&buckets) {
            assert_eq!(row[3], b.bucket);
            assert_eq!(row[4].parse::<usize>().unwrap(), b.count);
            assert_eq!(row[5].parse::<usize>().unwrap(), b.correct);
        }
        let means: Vec<&Vec<String>> = table.iter().filter(|r| r[0] == kind.as_str() && r[2] == "mean").collect();
        assert_eq!(means.len(), 1 + spec.len());
        assert_eq!(means[0][7], "0");
    }
}

#[test]
fn sweep_table_has_a_row_per_model_depth_bucket_seed() {
    let (dir, data) = workspace();
    let o = out(&dir, "sweep");
    let r = ndgg(&[
        "sweep-depth", "--dataset", &data, "--model", "gcn,ndggnet-star", "--depths", "1,2", "--seeds", "1,2", "--epochs", "5",
        "--out", &o,
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let table = rows(Path::new(&o).join("sweep.csv"));
    // (all + 4 buckets) x (2 seeds + mean) x 2 depths x 2 models
    assert_eq!(table.len(), 5 * 3 * 2 * 2);
}

#[test]
fn analyze_outputs() {
    let (dir, data) = workspace();
    let d = planted();

    let o = out(&dir, "mdcn");
    assert_eq!(ndgg(&["analyze", "mdcn", "--dataset", &data, "--kmax", "20", "--out", &o]).code, 0);
    let m = rows(Path::new(&o).join("mdcn.csv"));
    assert_eq!(m.len(), 21);
    assert!(m[0][1].parse::<f64>().unwrap() > 0.0);

    let o = out(&dir, "kbound");
    assert_eq!(ndgg(&["analyze", "kbound", "--dataset", &data, "--eps", "1e-3", "--out", &o]).code, 0);
    let k = json(Path::new(&o).join("kbound.json"));
    assert_eq!(k["lambda2"].as_f64().unwrap(), lambda2(d.graph()).unwrap());
    assert_eq!(k["k"].as_array().unwrap().len(), d.num_nodes());
    assert_eq!(k["config"]["eps"], 1e-3);

    let o = out(&dir, "limit");
    assert_eq!(ndgg(&["analyze", "limit", "--dataset", &data, "--kmax", "50", "--out", &o]).code, 0);
    let l = rows(Path::new(&o).join("limit.csv"));
    assert_eq!(l.len(), 51);
    assert!(l[50][1].parse::<f64>().unwrap() < l[0][1].parse::<f64>().unwrap());

    let o = out(&dir, "buckets");
    let r = ndgg(&["analyze", "buckets", "--dataset", &data, "--model", "gcn", "--epochs", "10", "--out", &o]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let b = rows(Path::new(&o).join("buckets.csv"));
    assert_eq!(b.len(), 5);
    let total: usize = b[1..].iter().map(|r| r[4].parse::<usize>().unwrap()).sum();
    assert_eq!(total, d.masks().test.len());
}

#[test]
fn analysis_outputs_are_byte_identical_across_runs() {
    let (dir, data) = workspace();
    let files: Vec<PathBuf> = (0..2)
        .map(|i| {
            let o = out(&dir, &format!("k{i}"));
            assert_eq!(ndgg(&["analyze", "kbound", "--dataset", &data, "--out", &o]).code, 0);
            Path::new(&o).join("kbound.json")
        })
        .collect();
    assert_eq!(fs::read(&files[0]).unwrap(), fs::read(&files[1]).unwrap());
}
