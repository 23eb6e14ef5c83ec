//! Report files. Everything is rendered into memory first and written in
//! one serialized pass at the end of a run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::svg::{self, Plot};
use crate::CliError;

/// Identity of a run, stamped into every artifact.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    /// Unix seconds for SVG metadata; `None` under `--no-timestamp`.
    pub timestamp: Option<u64>,
}

/// Wrapper written around every JSON result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub result: T,
}

/// Shortest round-trip decimal form, in scientific notation outside
/// `[1e-4, 1e7)` to keep columns readable.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e7).contains(&a) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

pub fn nums(xs: &[f64]) -> String {
    xs.iter().map(|&x| num(x)).collect::<Vec<_>>().join(";")
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

#[derive(Debug)]
pub struct Artifacts {
    pub ctx: RunContext,
    files: Vec<(String, Vec<u8>)>,
    /// The primary JSON document, echoed under `--json`.
    pub primary_json: Option<String>,
    /// Human-readable one-liners.
    pub summary: Vec<String>,
    /// Invariant failures; any entry makes the run exit with code 4.
    pub violations: Vec<String>,
}

impl Artifacts {
    pub fn new(ctx: RunContext) -> Self {
        Artifacts { ctx, files: Vec::new(), primary_json: None, summary: Vec::new(), violations: Vec::new() }
    }

    pub fn header_comment(&self) -> String {
        format!("config_hash={},seed={}", self.ctx.config_hash, self.ctx.seed)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, result: &T) -> Result<(), CliError> {
        let env = Envelope {
            command: self.ctx.command.clone(),
            config_hash: self.ctx.config_hash.clone(),
            seed: self.ctx.seed,
            result,
        };
        let mut text = serde_json::to_string_pretty(&env).map_err(|e| CliError::Io(e.to_string()))?;
        text.push('\n');
        if self.primary_json.is_none() {
            self.primary_json = Some(text.clone());
        }
        self.files.push((name.to_string(), text.into_bytes()));
        Ok(())
    }

    /// A CSV file whose first line is `# config_hash=…,seed=…`.
    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
        let mut buf = format!("# {}\n", self.header_comment()).into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            let io = |e: csv::Error| CliError::Io(e.to_string());
            w.write_record(header).map_err(io)?;
            for r in rows {
                w.write_record(r).map_err(io)?;
            }
            w.flush().map_err(|e| CliError::Io(e.to_string()))?;
        }
        self.files.push((name.to_string(), buf));
        Ok(())
    }

    /// Adds the plot unless it is empty.
    pub fn svg(&mut self, name: &str, plot: &Plot) {
        if let Some(text) = svg::render(plot, &self.header_comment(), self.ctx.timestamp) {
            self.files.push((name.to_string(), text.into_bytes()));
        }
    }

    pub fn files(&self) -> &[(String, Vec<u8>)] {
        &self.files
    }

    pub fn file(&self, name: &str) -> Option<&[u8]> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, b)| b.as_slice())
    }

    pub fn write_all(&self, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        let mut out = Vec::with_capacity(self.files.len());
        for (name, bytes) in &self.files {
            let p = dir.join(name);
            std::fs::write(&p, bytes).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            out.push(p);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx() -> RunContext {
        RunContext { command: "t".into(), config_hash: "abc".into(), seed: 9, timestamp: None }
    }

    #[test]
    fn number_format_round_trips() {
        for x in [0.0, 1.0, -2.5, 1e-300, 123456789.0, 0.1 + 0.2, f64::MIN_POSITIVE, 1e-4, 9.99e6] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(num(1e-9), "1e-9");
        assert_eq!(num(0.5), "0.5");
    }

    #[test]
    fn empty_csv_keeps_header() {
        let mut a = Artifacts::new(ctx());
        a.csv("x.csv", &["s", "beta"], &[]).unwrap();
        assert_eq!(std::str::from_utf8(a.file("x.csv").unwrap()).unwrap(), "# config_hash=abc,seed=9\ns,beta\n");
    }

    #[test]
    fn envelope_round_trips() {
        let mut a = Artifacts::new(ctx());
        let v = vec![0.1 + 0.2, 1e-300, std::f64::consts::PI];
        a.json("r.json", &v).unwrap();
        let back: Envelope<Vec<f64>> = serde_json::from_slice(a.file("r.json").unwrap()).unwrap();
        assert_eq!(back.result, v);
        assert_eq!(back.seed, 9);
    }
}
