//! Run configuration: flags, JSON config files and their merge.

use std::path::{Path, PathBuf};

use clap::Args;
use ndgg::analysis::{BucketSpec, KBoundConfig};
use ndgg::model::{ModelConfig, ModelKind};
use ndgg::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Every option any command understands. Flags and config-file keys share
/// names (`weight-decay` in both places).
#[derive(Args, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct RunConfig {
    /// JSON file with flat keys named like the flags.
    #[arg(long, value_name = "FILE")]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// NDGG1 dataset container.
    #[arg(long, value_name = "FILE")]
    pub dataset: Option<PathBuf>,
    /// gcn, sgc, ndggnet or ndggnet-star; sweeps accept a comma list.
    #[arg(long)]
    pub model: Option<String>,
    /// Propagation depth k_max.
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub degree_dim: Option<usize>,
    #[arg(long)]
    pub degree_cap: Option<usize>,
    #[arg(long)]
    pub gate_hidden_layers: Option<usize>,
    #[arg(long)]
    pub gate_uses_raw_x: Option<bool>,
    #[arg(long)]
    pub row_normalize: Option<bool>,
    #[arg(long)]
    pub dropout: Option<f64>,

    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// `3`, `1,4,9` or an inclusive range `1..10`.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_decay_step: Option<usize>,
    #[arg(long)]
    pub lr_decay_rate: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,

    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Overwrite existing output files.
    #[arg(long)]
    #[serde(default)]
    pub force: bool,

    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub kmax: Option<usize>,
    /// Lower degree-bucket edges, e.g. `0,2,4,8`.
    #[arg(long)]
    pub buckets: Option<String>,
    /// Depth list for sweeps, e.g. `2,4,8,16`.
    #[arg(long)]
    pub depths: Option<String>,
}

macro_rules! prefer {
    ($a:expr, $b:expr, $($field:ident),*) => {
        RunConfig {
            config: $a.config.or($b.config),
            force: $a.force || $b.force,
            $($field: $a.$field.or($b.$field),)*
        }
    };
}

impl RunConfig {
    /// Flags win over `file`.
    pub fn over(self, file: RunConfig) -> RunConfig {
        prefer!(
            self,
            file,
            dataset,
            model,
            layers,
            hidden,
            degree_dim,
            degree_cap,
            gate_hidden_layers,
            gate_uses_raw_x,
            row_normalize,
            dropout,
            seed,
            seeds,
            epochs,
            lr,
            lr_decay_step,
            lr_decay_rate,
            weight_decay,
            patience,
            out,
            eps,
            kmax,
            buckets,
            depths
        )
    }

    pub fn from_json(text: &str) -> Result<RunConfig, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Usage(format!("config file: {e}")))
    }

    /// Merges in the `--config` file, if any.
    pub fn resolve(self) -> Result<RunConfig, CliError> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let file = RunConfig::from_json(&text)?;
        if file.seed.is_some() && file.seeds.is_some() {
            return Err(CliError::Usage("config sets both seed and seeds".into()));
        }
        let flag_seed = self.seed.is_some();
        let mut merged = self.over(file);
        // a seed on the command line replaces a seed list from the file and vice versa
        if merged.seed.is_some() && merged.seeds.is_some() {
            if flag_seed {
                merged.seeds = None;
            } else {
                merged.seed = None;
            }
        }
        Ok(merged)
    }

    pub fn dataset_path(&self) -> Result<&Path, CliError> {
        self.dataset
            .as_deref()
            .ok_or_else(|| CliError::Usage("--dataset is required".into()))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn models(&self) -> Result<Vec<ModelKind>, CliError> {
        let text = self
            .model
            .as_deref()
            .ok_or_else(|| CliError::Usage("--model is required".into()))?;
        let kinds = text
            .split(',')
            .map(|s| s.trim().parse::<ModelKind>().map_err(|e| CliError::Usage(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(kinds)
    }

    pub fn single_model(&self) -> Result<ModelKind, CliError> {
        match self.models()?.as_slice() {
            [one] => Ok(*one),
            _ => Err(CliError::Usage("this command takes exactly one --model".into())),
        }
    }

    pub fn seed_list(&self) -> Result<Vec<u64>, CliError> {
        match (&self.seed, &self.seeds) {
            (Some(s), _) => Ok(vec![*s]),
            (None, Some(list)) => parse_seed_list(list),
            (None, None) => Ok(vec![0]),
        }
    }

    pub fn depth_list(&self) -> Result<Vec<usize>, CliError> {
        let text = self
            .depths
            .as_deref()
            .ok_or_else(|| CliError::Usage("--depths is required".into()))?;
        parse_depth_list(text)
    }

    pub fn bucket_spec(&self) -> Result<BucketSpec, CliError> {
        match &self.buckets {
            Some(s) => s.parse().map_err(|e: ndgg::Error| CliError::Usage(e.to_string())),
            None => Ok(BucketSpec::default()),
        }
    }

    pub fn kbound_config(&self) -> Result<KBoundConfig, CliError> {
        let cfg = KBoundConfig {
            eps: self.eps.unwrap_or(KBoundConfig::default().eps),
        };
        if !(cfg.eps > 0.0 && cfg.eps < 1.0) {
            return Err(CliError::Usage(format!("--eps must lie in (0, 1), got {}", cfg.eps)));
        }
        Ok(cfg)
    }

    pub fn model_config(&self, kind: ModelKind) -> Result<ModelConfig, CliError> {
        let mut c = ModelConfig::new(kind);
        if let Some(v) = self.layers {
            c.layers = v;
        }
        if let Some(v) = self.hidden {
            c.hidden = v;
        }
        if let Some(v) = self.degree_dim {
            c.degree_dim = v;
        }
        if let Some(v) = self.degree_cap {
            c.degree_cap = v;
        }
        if let Some(v) = self.gate_hidden_layers {
            c.gate_hidden_layers = v;
        }
        if let Some(v) = self.gate_uses_raw_x {
            c.gate_uses_raw_x = v;
        }
        if let Some(v) = self.row_normalize {
            c.row_normalize = v;
        }
        if let Some(v) = self.dropout {
            c.dropout = v;
        }
        c.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(c)
    }

    pub fn train_config(&self, seed: u64) -> Result<TrainConfig, CliError> {
        let d = TrainConfig::default();
        let c = TrainConfig {
            init_lr: self.lr.unwrap_or(d.init_lr),
            lr_decay_step: self.lr_decay_step.unwrap_or(d.lr_decay_step),
            lr_decay_rate: self.lr_decay_rate.unwrap_or(d.lr_decay_rate),
            weight_decay: self.weight_decay.unwrap_or(d.weight_decay),
            max_epochs: self.epochs.unwrap_or(d.max_epochs),
            seed,
            patience: self.patience.or(d.patience),
        };
        c.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(c)
    }
}

/// `7`, `1,4,9`, `1..10` (inclusive) or a mix such as `1..3,8`.
pub fn parse_seed_list(text: &str) -> Result<Vec<u64>, CliError> {
    let bad = || CliError::Usage(format!("bad seed list `{text}`"));
    let mut out = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        if let Some((lo, hi)) = part.split_once("..") {
            let lo: u64 = lo.trim().parse().map_err(|_| bad())?;
            let hi: u64 = hi.trim().parse().map_err(|_| bad())?;
            if hi < lo || hi - lo >= 100_000 {
                return Err(bad());
            }
            out.extend(lo..=hi);
        } else {
            out.push(part.parse().map_err(|_| bad())?);
        }
    }
    let mut seen = std::collections::BTreeSet::new();
    if out.iter().any(|s| !seen.insert(*s)) {
        return Err(CliError::Usage(format!("duplicate seed in `{text}`")));
    }
    Ok(out)
}

/// Comma-separated positive depths.
pub fn parse_depth_list(text: &str) -> Result<Vec<usize>, CliError> {
    if text.trim().is_empty() {
        return Err(CliError::Usage("empty depth list".into()));
    }
    text.split(',')
        .map(|p| match p.trim().parse::<usize>() {
            Ok(d) if d >= 1 => Ok(d),
            _ => Err(CliError::Usage(format!("bad depth `{}`", p.trim()))),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seed_list("3").unwrap(), vec![3]);
        assert_eq!(parse_seed_list("1..4").unwrap(), vec![1, 2, 3, 4]);
        assert_eq!(parse_seed_list("1..2, 9").unwrap(), vec![1, 2, 9]);
        for bad in ["", "a", "4..1", "1,1", "1..", "..3", "1..2..3", "0..100000"] {
            assert!(parse_seed_list(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn depth_lists() {
        assert_eq!(parse_depth_list("2,4, 8").unwrap(), vec![2, 4, 8]);
        assert!(parse_depth_list("").is_err());
        assert!(parse_depth_list("0").is_err());
        assert!(parse_depth_list("2,,4").is_err());
    }

    #[test]
    fn flags_override_file() {
        let flags = RunConfig {
            layers: Some(4),
            ..RunConfig::default()
        };
        let file = RunConfig::from_json(r#"{"layers": 8, "hidden": 32, "weight-decay": 0.001}"#).unwrap();
        let merged = flags.over(file);
        assert_eq!(merged.layers, Some(4));
        assert_eq!(merged.hidden, Some(32));
        assert_eq!(merged.weight_decay, Some(0.001));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json(r#"{"layer": 2}"#).is_err());
        assert!(RunConfig::from_json(r#"{"config": "x.json"}"#).is_err());
        assert!(RunConfig::from_json(r#"{"layers": "two"}"#).is_err());
    }

    #[test]
    fn model_config_validation_is_a_usage_error() {
        let c = RunConfig {
            dropout: Some(1.5),
            ..RunConfig::default()
        };
        assert!(matches!(c.model_config(ModelKind::Gcn), Err(CliError::Usage(_))));
        let c = RunConfig {
            model: Some("gcn,ndggnet".into()),
            ..RunConfig::default()
        };
        assert_eq!(c.models().unwrap(), vec![ModelKind::Gcn, ModelKind::Ndggnet]);
        assert!(c.single_model().is_err());
    }
}
