//! CSV artifacts: fixed number formats and atomic file replacement.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::CliError;

/// Times in years.
pub fn fmt_time(t: f64) -> String {
    unsigned_zero(format!("{t:.9}"))
}

/// Probabilities and other dimensionless quantities.
pub fn fmt_prob(p: f64) -> String {
    unsigned_zero(format!("{p:.12}"))
}

/// Prices and stock levels.
pub fn fmt_money(x: f64) -> String {
    unsigned_zero(format!("{x:.9}"))
}

/// Rounding noise below the last digit must not print as `-0.000`.
fn unsigned_zero(s: String) -> String {
    match s.strip_prefix('-') {
        Some(rest) if rest.bytes().all(|b| b == b'0' || b == b'.') => rest.to_string(),
        _ => s,
    }
}

/// Parses a formatted cell back; used when a column is derived from others so
/// that recomputing it from the file reproduces it exactly.
pub fn reparse(cell: &str) -> f64 {
    cell.parse().expect("formatted by this module")
}

/// Collects the files written into one output directory.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }

    /// Writes `bytes` to `name` through a temporary file and a rename.
    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.root.join(name);
        let tmp = self.root.join(format!(".{name}.tmp"));
        let mut file = fs::File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
        file.write_all(bytes).map_err(|e| CliError::io(&tmp, e))?;
        file.sync_all().map_err(|e| CliError::io(&tmp, e))?;
        drop(file);
        fs::rename(&tmp, &path).map_err(|e| CliError::io(&path, e))?;
        self.written.push(name.to_string());
        Ok(path)
    }

    /// RFC 4180 CSV with a mandatory header row.
    pub fn write_csv(&mut self, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<PathBuf, CliError> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(header)?;
        for row in rows {
            writer.write_record(row)?;
        }
        let bytes = writer
            .into_inner()
            .map_err(|e| CliError::Config(format!("csv buffer: {e}")))?;
        self.write_bytes(name, &bytes)
    }
}

pub fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|c| c.to_string()).collect()
}

/// Plot script for the CSVs of an output directory.
pub const PLOT_SCRIPT: &str = r#"#!/usr/bin/env python3
"""Plots the CSV artifacts in this directory (requires matplotlib)."""
import csv
import glob
import os
from collections import defaultdict

import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))


def rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def plot_stock():
    files = sorted(glob.glob(os.path.join(HERE, "scenario_*_stock.csv")))
    if not files:
        return
    fig, ax = plt.subplots()
    for path in files:
        data = rows(path)
        ax.plot([float(r["t"]) for r in data], [float(r["stock"]) for r in data], label=os.path.basename(path))
    ax.axhline(float(data[0]["barrier_stock"]), linestyle="--", color="k")
    ax.set_xlabel("t")
    ax.set_ylabel("stock")
    ax.legend()
    fig.savefig(os.path.join(HERE, "stock.png"))


def plot_fundamental():
    for path in sorted(glob.glob(os.path.join(HERE, "scenario_*_fundamental.csv"))):
        data = rows(path)
        fig, ax = plt.subplots()
        t = [float(r["t"]) for r in data]
        for col in data[0]:
            if col.startswith("u_rho_"):
                ax.plot(t, [float(r[col]) for r in data], label=col[2:])
        ax.axhline(float(data[0]["barrier"]), linestyle="--", color="k")
        ax.set_xlabel("t")
        ax.set_ylabel("U")
        ax.legend()
        fig.savefig(path.replace(".csv", ".png"))


def plot_by_rho(pattern, column, ylabel):
    for path in sorted(glob.glob(os.path.join(HERE, pattern))):
        series = defaultdict(list)
        for r in rows(path):
            series[r["rho"]].append((float(r["t"]), float(r[column])))
        fig, ax = plt.subplots()
        for rho, points in series.items():
            ax.plot([p[0] for p in points], [p[1] for p in points], label="rho=" + rho)
        ax.set_xlabel("t")
        ax.set_ylabel(ylabel)
        ax.legend()
        fig.savefig(path.replace(".csv", ".png"))


if __name__ == "__main__":
    plot_stock()
    plot_fundamental()
    plot_by_rho("scenario_*_survival.csv", "p_survive_star", "P*(tau > T_1 | G_t)")
    plot_by_rho("scenario_*_price.csv", "pi", "price")
    plot_by_rho("scenario_*_compensator.csv", "A", "compensator A")
"#;
