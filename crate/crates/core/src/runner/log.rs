use crate::error::{EtherError, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

/// One JSONL row. Field order is the on-disk key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricRecord {
    pub step: u64,
    pub name: String,
    pub value: f64,
    pub seed: u64,
    /// Seconds since the Unix epoch.
    pub wall_time: f64,
}

/// Rejects a step that goes backwards for its `(name, seed)`.
#[derive(Debug, Default, Clone)]
pub struct MonotoneSteps {
    last: HashMap<(String, u64), u64>,
}

impl MonotoneSteps {
    pub fn check(&mut self, r: &MetricRecord) -> Result<()> {
        let key = (r.name.clone(), r.seed);
        if let Some(&prev) = self.last.get(&key) {
            if r.step < prev {
                return Err(EtherError::Domain(format!(
                    "metric `{}` (seed {}) goes back from step {prev} to {}",
                    r.name, r.seed, r.step
                )));
            }
        }
        self.last.insert(key, r.step);
        Ok(())
    }
}

/// Append-only metric log; every row is flushed as written.
pub struct MetricLog {
    path: PathBuf,
    out: BufWriter<File>,
    steps: MonotoneSteps,
}

impl MetricLog {
    /// Open for appending, replaying existing rows so monotonicity holds
    /// across restarts.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut steps = MonotoneSteps::default();
        if path.exists() {
            for r in read_metric_log(&path)? {
                steps.check(&r)?;
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| EtherError::from(e).context(format!("opening {}", path.display())))?;
        Ok(Self {
            path,
            out: BufWriter::new(file),
            steps,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, record: &MetricRecord) -> Result<()> {
        if !record.value.is_finite() {
            return Err(EtherError::NonFinite(format!("metric `{}` at step {}", record.name, record.step)));
        }
        self.steps.check(record)?;
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }

    /// Append with the current wall time.
    pub fn record(&mut self, step: u64, name: &str, value: f64, seed: u64) -> Result<()> {
        self.append(&MetricRecord {
            step,
            name: name.to_string(),
            value,
            seed,
            wall_time: wall_time(),
        })
    }
}

pub fn wall_time() -> f64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Every row of a log, checked for shape and step monotonicity. Blank lines
/// are skipped.
pub fn read_metric_log(path: impl AsRef<Path>) -> Result<Vec<MetricRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| EtherError::from(e).context(format!("opening {}", path.display())))?;
    let mut out = Vec::new();
    let mut steps = MonotoneSteps::default();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ctx = |e: EtherError| e.context(format!("{}:{}", path.display(), i + 1));
        let r: MetricRecord = serde_json::from_str(&line).map_err(|e| ctx(e.into()))?;
        steps.check(&r).map_err(ctx)?;
        out.push(r);
    }
    Ok(out)
}
