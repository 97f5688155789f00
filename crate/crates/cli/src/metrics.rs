use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use bcdnet_core::data::Split;

pub const METRICS_HEADER: &str = "epoch,split,loss,accuracy,lr,epoch_wall_time_s,peak_rss_bytes";

/// One row of `metrics.csv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRecord {
    pub epoch: u32,
    pub split: Split,
    pub loss: f64,
    pub accuracy: f64,
    pub lr: f64,
    pub epoch_wall_time_s: f64,
    pub peak_rss_bytes: u64,
}

impl MetricsRecord {
    /// Floats use the shortest representation that parses back exactly.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{},{},{},{},{},{},{}",
            self.epoch, self.split, self.loss, self.accuracy, self.lr, self.epoch_wall_time_s, self.peak_rss_bytes
        );
        s
    }

    pub fn parse(line: &str) -> Result<Self> {
        let cols: Vec<&str> = line.split(',').collect();
        let [epoch, split, loss, accuracy, lr, wall, rss] = cols[..] else {
            bail!("expected 7 columns, got {}: {line:?}", cols.len());
        };
        Ok(Self {
            epoch: epoch.parse()?,
            split: split.parse()?,
            loss: loss.parse()?,
            accuracy: accuracy.parse()?,
            lr: lr.parse()?,
            epoch_wall_time_s: wall.parse()?,
            peak_rss_bytes: rss.parse()?,
        })
    }
}

/// Parse a whole `metrics.csv`, checking the header.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        bail!("{} does not start with the metrics header", path.display());
    }
    lines.map(MetricsRecord::parse).collect()
}

/// Append-only CSV writer, flushed after every row.
pub struct MetricsWriter {
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path, header: &str) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
        writeln!(out, "{header}")?;
        out.flush()?;
        Ok(Self { out })
    }

    pub fn row(&mut self, line: &str) -> Result<()> {
        writeln!(self.out, "{line}")?;
        self.out.flush()?;
        Ok(())
    }
}

/// Peak resident set size of this process in bytes (`VmHWM`), or 0 where
/// `/proc` is unavailable.
pub fn peak_rss_bytes() -> u64 {
    let Ok(status) = std::fs::read_to_string("/proc/self/status") else {
        return 0;
    };
    status
        .lines()
        .find_map(|l| l.strip_prefix("VmHWM:"))
        .and_then(|v| v.trim().trim_end_matches("kB").trim().parse::<u64>().ok())
        .map_or(0, |kb| kb * 1024)
}
