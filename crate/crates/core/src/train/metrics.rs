//! Append-only per-epoch TSV log.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::fit::EpochStats;

pub const METRICS_HEADER: &str = "epoch\ttrain_loss\ttrain_clip_acc\tval_loss\tval_clip_acc\tlr";

/// Values use the shortest representation that parses back exactly.
pub fn format_metrics_line(s: &EpochStats) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}",
        s.epoch, s.train_loss, s.train_acc, s.val_loss, s.val_acc, s.lr
    )
}

pub fn parse_metrics(text: &str) -> Result<Vec<EpochStats>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != METRICS_HEADER {
                return Err(Error::Format(format!("unexpected metrics header {line:?}")));
            }
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let bad = || Error::Format(format!("metrics line {}: {line:?}", i + 1));
        if f.len() != 6 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        out.push(EpochStats {
            epoch: f[0].parse().map_err(|_| bad())?,
            train_loss: num(f[1])?,
            train_acc: num(f[2])?,
            val_loss: num(f[3])?,
            val_acc: num(f[4])?,
            lr: num(f[5])?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct MetricsLog {
    path: PathBuf,
}

impl MetricsLog {
    /// Opens for appending, writing the header if the file is new or empty.
    pub fn open(path: &Path) -> Result<Self> {
        let empty = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        if empty {
            std::fs::write(path, format!("{METRICS_HEADER}\n"))?;
        }
        Ok(MetricsLog {
            path: path.to_path_buf(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, stats: &EpochStats) -> Result<()> {
        let mut f = std::fs::OpenOptions::new().append(true).open(&self.path)?;
        writeln!(f, "{}", format_metrics_line(stats))?;
        Ok(())
    }
}
