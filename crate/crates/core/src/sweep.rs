//! One-parameter sweeps.
//!
//! Each value gets its own run with seed `cfg.seed + index`, so the first
//! value of a sweep reproduces a plain run. Per-value metrics land in
//! `sweep_<param>_<value>.csv`; `sweep_<param>_summary.csv` holds one row
//! per value with the final per-group accuracies.

use std::collections::BTreeSet;
use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::config::{parse_split, RunConfig};
use crate::error::{Error, Result};
use crate::trainer::{run_experiment, ExperimentOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Beta,
    SplitDims,
    Fusion,
    Topology,
    Alpha,
    Strategy,
}

impl SweepParam {
    pub const ALL: [SweepParam; 6] = [
        SweepParam::Beta,
        SweepParam::SplitDims,
        SweepParam::Fusion,
        SweepParam::Topology,
        SweepParam::Alpha,
        SweepParam::Strategy,
    ];

    pub fn key(self) -> &'static str {
        match self {
            SweepParam::Beta => "beta",
            SweepParam::SplitDims => "split_dims",
            SweepParam::Fusion => "fusion",
            SweepParam::Topology => "topology",
            SweepParam::Alpha => "alpha",
            SweepParam::Strategy => "strategy",
        }
    }

    /// `cfg` with this parameter set to `value`. Split values are relative
    /// to the split of `cfg`.
    pub fn apply(self, cfg: &RunConfig, value: &str) -> Result<RunConfig> {
        let mut out = cfg.clone();
        match self {
            SweepParam::SplitDims => out.split = parse_split(value, cfg.split)?,
            _ => out.set(self.key(), value)?,
        }
        out.validate()?;
        Ok(out)
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        SweepParam::ALL
            .into_iter()
            .find(|p| p.key() == s || (s == "split" && *p == SweepParam::SplitDims))
            .ok_or_else(|| {
                Error::config(format!(
                    "unsupported sweep parameter {s:?} (expected beta, split_dims, fusion, topology, alpha, strategy)"
                ))
            })
    }
}

/// File-name-safe form of a sweep value.
pub fn value_slug(value: &str) -> String {
    value
        .trim()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SweepRun {
    pub value: String,
    pub seed: u64,
    pub output: ExperimentOutput,
}

/// Runs every value and writes the per-value metrics and the summary into
/// `out_dir`.
pub fn run_sweep(
    cfg: &RunConfig,
    param: SweepParam,
    values: &[String],
    out_dir: &Path,
    threads: Option<usize>,
) -> Result<Vec<SweepRun>> {
    if values.is_empty() {
        return Err(Error::config("a sweep needs at least one value"));
    }
    // Reject bad values before spending time on any run.
    let configs = values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let mut c = param.apply(cfg, v)?;
            c.seed = cfg.seed.wrapping_add(i as u64);
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut runs = Vec::with_capacity(values.len());
    for (value, c) in values.iter().zip(configs) {
        log::info!("sweep {param} = {value} (seed {})", c.seed);
        let output = run_experiment(&c, threads)?;
        let path = out_dir.join(format!("sweep_{param}_{}.csv", value_slug(value)));
        std::fs::write(&path, output.metrics_csv()).map_err(|e| Error::io(&path, e))?;
        runs.push(SweepRun {
            value: value.trim().to_string(),
            seed: c.seed,
            output,
        });
    }
    let path = out_dir.join(format!("sweep_{param}_summary.csv"));
    std::fs::write(&path, summary_csv(param, &runs)).map_err(|e| Error::io(&path, e))?;
    Ok(runs)
}

/// `param,seed,<group>...` with one row per value of final accuracies.
pub fn summary_csv(param: SweepParam, runs: &[SweepRun]) -> String {
    let finals: Vec<_> = runs.iter().map(|r| r.output.final_accuracy()).collect();
    let groups: BTreeSet<&String> = finals.iter().flat_map(|f| f.keys()).collect();
    let mut s = format!("{param},seed");
    for g in &groups {
        let _ = write!(s, ",{g}");
    }
    s.push('\n');
    for (run, acc) in runs.iter().zip(&finals) {
        let _ = write!(s, "\"{}\",{}", run.value, run.seed);
        for g in &groups {
            match acc.get(*g) {
                Some(v) => {
                    let _ = write!(s, ",{v}");
                }
                None => s.push(','),
            }
        }
        s.push('\n');
    }
    s
}
