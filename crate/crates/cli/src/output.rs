//! Files written into a run directory.
//!
//! CFN checkpoint layout (`cfn_checkpoint.txt`, plain text):
//!
//! ```text
//! copo-cfn 1
//! sizes <d_state> <hidden...> <d_coin>
//! <one parameter per line>
//! ```
//!
//! Parameters are listed layer by layer; within a layer the weight matrix
//! comes first in row-major order (one row per output unit), then the bias.
//! Values use the shortest decimal form that parses back to the same `f64`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use copo_core::{CoinFlipNet, RngHandle};

use crate::error::{CliError, Result};

pub const CONFIG_FILE: &str = "config_resolved.txt";
pub const RESULTS_FILE: &str = "results.csv";
pub const PLOT_FILE: &str = "plot.py";
pub const CHECKPOINT_FILE: &str = "cfn_checkpoint.txt";
pub const SUMMARY_FILE: &str = "summary.csv";

pub const COPO_COLUMNS: [&str; 7] = [
    "t",
    "dataset_size",
    "dpo_loss",
    "mean_bonus",
    "true_value",
    "subopt_gap",
    "wall_ms",
];

/// A cell of a results table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Int(u64),
    Real(f64),
}

impl Cell {
    fn render(self) -> String {
        match self {
            Self::Int(v) => v.to_string(),
            // 12 significant digits
            Self::Real(v) => format!("{v:.11e}"),
        }
    }
}

pub fn render_csv(columns: &[&str], rows: &[Vec<Cell>]) -> String {
    let mut s = columns.join(",");
    s.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|c| c.render()).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

/// Parses a CSV written by [`render_csv`] into its header and numeric rows.
pub fn parse_csv(text: &str) -> std::result::Result<(Vec<String>, Vec<Vec<f64>>), String> {
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or("empty csv")?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row: Vec<f64> = line
            .split(',')
            .map(|c| c.parse::<f64>().map_err(|e| format!("row {}: `{c}`: {e}", i + 1)))
            .collect::<std::result::Result<_, _>>()?;
        if row.len() != header.len() {
            return Err(format!("row {} has {} cells, header has {}", i + 1, row.len(), header.len()));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| CliError::Output {
        path: dir.to_path_buf(),
        source,
    })
}

pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| CliError::Output {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// Matplotlib script that plots every column of `csv` against its first one.
pub fn plot_script(csv: &str, title: &str) -> String {
    format!(
        r#"#!/usr/bin/env python3
"""Plot {csv} ({title}). Usage: python3 plot.py [output.png]"""
import csv
import os
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))
with open(os.path.join(here, "{csv}")) as f:
    reader = csv.reader(f)
    header = next(reader)
    rows = [[float(v) for v in row] for row in reader]

x = [r[0] for r in rows]
series = header[1:]
fig, axes = plt.subplots(len(series), 1, figsize=(6, 2.2 * len(series)), sharex=True, squeeze=False)
for i, name in enumerate(series):
    ax = axes[i][0]
    ax.plot(x, [r[i + 1] for r in rows], marker="o" if len(rows) <= 20 else None)
    ax.set_ylabel(name)
axes[-1][0].set_xlabel(header[0])
fig.suptitle("{title}")
fig.tight_layout()
out = sys.argv[1] if len(sys.argv) > 1 else os.path.join(here, "plot.png")
fig.savefig(out, dpi=120)
print("wrote", out)
"#
    )
}

pub fn checkpoint_text(net: &CoinFlipNet) -> String {
    let mut s = String::from("copo-cfn 1\nsizes");
    for n in net.sizes() {
        let _ = write!(s, " {n}");
    }
    s.push('\n');
    for p in net.parameters() {
        let _ = writeln!(s, "{p:e}");
    }
    s
}

pub fn parse_checkpoint(text: &str) -> std::result::Result<CoinFlipNet, String> {
    let mut lines = text.lines();
    if lines.next() != Some("copo-cfn 1") {
        return Err("missing `copo-cfn 1` header".into());
    }
    let sizes: Vec<usize> = lines
        .next()
        .and_then(|l| l.strip_prefix("sizes "))
        .ok_or("missing `sizes` line")?
        .split_whitespace()
        .map(|v| v.parse::<usize>().map_err(|e| format!("bad size `{v}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    if sizes.len() < 2 {
        return Err("need at least input and output sizes".into());
    }
    let params: Vec<f64> = lines
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("bad parameter `{v}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    let hidden = &sizes[1..sizes.len() - 1];
    let mut net = CoinFlipNet::new(sizes[0], hidden, sizes[sizes.len() - 1], true, &mut RngHandle::new(0))
        .map_err(|e| e.to_string())?;
    net.set_parameters(&params).map_err(|e| e.to_string())?;
    Ok(net)
}

pub fn load_checkpoint(path: &Path) -> Result<CoinFlipNet> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Input {
        path: path.to_path_buf(),
        source,
    })?;
    parse_checkpoint(&text).map_err(|m| CliError::config(path.display().to_string(), m))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_uses_twelve_significant_digits() {
        let text = render_csv(&["t", "v"], &[vec![Cell::Int(1), Cell::Real(std::f64::consts::PI)]]);
        assert_eq!(text, "t,v\n1,3.14159265359e0\n");
        let (header, rows) = parse_csv(&text).unwrap();
        assert_eq!(header, ["t", "v"]);
        assert!((rows[0][1] - std::f64::consts::PI).abs() < 1e-11);
        assert!(parse_csv("a,b\n1\n").is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = RngHandle::new(3);
        let net = CoinFlipNet::new(5, &[4, 3], 2, false, &mut rng).unwrap();
        let text = checkpoint_text(&net);
        assert!(text.starts_with("copo-cfn 1\nsizes 5 4 3 2\n"));
        assert_eq!(text.lines().count(), 2 + net.n_params());
        assert_eq!(parse_checkpoint(&text).unwrap(), net);
        assert!(parse_checkpoint("copo-cfn 1\nsizes 5 4 3 2\n1.0\n").is_err());
        assert!(parse_checkpoint("nope").is_err());
    }
}
