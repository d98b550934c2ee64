//! Output files: overwrite guard, CSV and JSON writers.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::CliError;

/// Files a command is about to write, checked all at once so a refused run
/// leaves nothing behind.
pub struct Outputs {
    dir: PathBuf,
    force: bool,
    files: Vec<(PathBuf, String)>,
}

impl Outputs {
    pub fn new(dir: impl Into<PathBuf>, force: bool) -> Self {
        Outputs {
            dir: dir.into(),
            force,
            files: Vec::new(),
        }
    }

    pub fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.dir.join(rel)
    }

    /// Fails before any work if a target exists and `--force` is absent.
    pub fn claim(&self, rels: &[PathBuf]) -> Result<(), CliError> {
        if self.force {
            return Ok(());
        }
        for rel in rels {
            let p = self.path(rel);
            if p.exists() {
                return Err(CliError::Usage(format!(
                    "{} exists; pass --force to overwrite",
                    p.display()
                )));
            }
        }
        Ok(())
    }

    pub fn add(&mut self, rel: impl AsRef<Path>, contents: String) {
        self.files.push((rel.as_ref().to_path_buf(), contents));
    }

    pub fn add_json(&mut self, rel: impl AsRef<Path>, value: &impl Serialize) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Run(ndgg::Error::InvalidArgument(e.to_string())))?;
        text.push('\n');
        self.add(rel, text);
        Ok(())
    }

    pub fn write(self) -> Result<Vec<PathBuf>, CliError> {
        let rels: Vec<PathBuf> = self.files.iter().map(|(r, _)| r.clone()).collect();
        self.claim(&rels)?;
        let mut written = Vec::new();
        for (rel, contents) in &self.files {
            let p = self.path(rel);
            if let Some(parent) = p.parent() {
                fs::create_dir_all(parent).map_err(ndgg::Error::from)?;
            }
            fs::write(&p, contents).map_err(ndgg::Error::from)?;
            written.push(p);
        }
        Ok(written)
    }
}

/// Leading comment line carrying the effective configuration.
pub fn config_comment(config: &serde_json::Value) -> String {
    format!("# config: {config}\n")
}

pub struct Csv {
    head: String,
    writer: csv::Writer<Vec<u8>>,
}

impl Csv {
    pub fn new(config: &serde_json::Value, header: &[&str]) -> Self {
        let mut csv = Csv {
            head: config_comment(config),
            writer: csv::Writer::from_writer(Vec::new()),
        };
        csv.row(header);
        csv
    }

    pub fn row<S: AsRef<[u8]>>(&mut self, cells: &[S]) {
        self.writer.write_record(cells).expect("writing to memory");
    }

    pub fn finish(self) -> String {
        let body = self.writer.into_inner().expect("writing to memory");
        self.head + &String::from_utf8(body).expect("cells are UTF-8")
    }
}

pub fn cell<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Mean and sample standard deviation; the deviation of a single value is 0.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Some((mean, var.sqrt()))
}
