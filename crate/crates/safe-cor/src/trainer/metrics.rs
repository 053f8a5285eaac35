//! Per-batch training metrics and their CSV round-trip. Floats are written
//! with the shortest representation that parses back to the same bits, with
//! '.' decimals and LF endings, so identical runs produce identical files.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str =
    "batch,steps,avg_reward_return,avg_cost_return,cost_rate,cv,total_cv,multiplier,kl,cor_mean";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainMetricsRow {
    pub batch: u64,
    pub steps: u64,
    pub avg_reward_return: f64,
    pub avg_cost_return: f64,
    pub cost_rate: f64,
    pub cv: f64,
    pub total_cv: f64,
    pub multiplier: f64,
    pub kl: f64,
    pub cor_mean: f64,
}

impl TrainMetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.batch,
            self.steps,
            self.avg_reward_return,
            self.avg_cost_return,
            self.cost_rate,
            self.cv,
            self.total_cv,
            self.multiplier,
            self.kl,
            self.cor_mean
        )
    }

    pub fn from_csv(line: &str, path: &str, lineno: usize) -> Result<Self> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 10 {
            return Err(Error::Parse {
                path: path.to_string(),
                line: lineno,
                why: format!("expected 10 fields, got {}", fields.len()),
            });
        }
        let int = |i: usize| -> Result<u64> {
            fields[i].parse().map_err(|e| Error::Parse {
                path: path.to_string(),
                line: lineno,
                why: format!("bad integer `{}`: {e}", fields[i]),
            })
        };
        let num = |i: usize| -> Result<f64> {
            fields[i].parse().map_err(|e| Error::Parse {
                path: path.to_string(),
                line: lineno,
                why: format!("bad float `{}`: {e}", fields[i]),
            })
        };
        Ok(TrainMetricsRow {
            batch: int(0)?,
            steps: int(1)?,
            avg_reward_return: num(2)?,
            avg_cost_return: num(3)?,
            cost_rate: num(4)?,
            cv: num(5)?,
            total_cv: num(6)?,
            multiplier: num(7)?,
            kl: num(8)?,
            cor_mean: num(9)?,
        })
    }
}

pub fn write_metrics_csv(path: &Path, rows: &[TrainMetricsRow]) -> Result<()> {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.to_csv());
        out.push('\n');
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<TrainMetricsRow>> {
    let file = std::fs::File::open(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
    let display = path.display().to_string();
    let mut lines = BufReader::new(file).lines();
    let header = lines.next().ok_or_else(|| Error::Parse {
        path: display.clone(),
        line: 1,
        why: "empty file".into(),
    })??;
    if header != METRICS_HEADER {
        return Err(Error::Parse {
            path: display,
            line: 1,
            why: format!("unexpected header `{header}`"),
        });
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        rows.push(TrainMetricsRow::from_csv(&line, &display, i + 2)?);
    }
    Ok(rows)
}
