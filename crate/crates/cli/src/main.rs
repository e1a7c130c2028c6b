//! `parse-dfl` command-line interface.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use parse_dfl::config::RunConfig;
use parse_dfl::pid::pid_decompose;
use parse_dfl::sweep::{run_sweep, SweepParam};
use parse_dfl::synthdata::{generate_dataset, save_dataset};
use parse_dfl::trainer::{run_to_dir, METRICS_FILE};
use parse_dfl::{JointDistribution, SyntheticSpec};

#[derive(Parser, Debug)]
#[command(name = "parse-dfl", version, about = "Multimodal decentralized federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a synthetic dataset and write it as CSV.
    GenerateData {
        /// Config-style file with the synthetic keys and an optional `seed`.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one experiment.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads; PARSE_DFL_THREADS takes precedence.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run one experiment per value of a parameter.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// beta, split_dims, fusion, topology, alpha or strategy.
        #[arg(long)]
        param: String,
        /// Comma-separated values; use `;` to separate `r,s,u` split triples.
        #[arg(long)]
        values: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Decompose the information a joint distribution CSV carries about its label.
    Pid {
        #[arg(long)]
        dist: PathBuf,
    },
}

fn threads(flag: Option<usize>) -> Result<Option<usize>> {
    match std::env::var("PARSE_DFL_THREADS") {
        Ok(v) if !v.trim().is_empty() => {
            let n: usize = v
                .trim()
                .parse()
                .with_context(|| format!("PARSE_DFL_THREADS must be a positive integer, got {v:?}"))?;
            anyhow::ensure!(n > 0, "PARSE_DFL_THREADS must be a positive integer, got 0");
            Ok(Some(n))
        }
        _ => Ok(flag),
    }
}

/// Reads a synthetic spec from `key = value` lines. Accepts the synthetic
/// keys of the run config plus `seed`.
fn read_spec(path: &Path) -> Result<(SyntheticSpec, u64)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg = RunConfig::with_agents(parse_dfl::config::DatasetSource::Synthetic, vec![]);
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .with_context(|| format!("{}:{}: expected `key = value`", path.display(), i + 1))?;
        let k = k.trim();
        anyhow::ensure!(
            matches!(
                k,
                "seed"
                    | "n_modalities"
                    | "n_classes"
                    | "dim_per_modality"
                    | "strength_redundant"
                    | "strength_unique"
                    | "strength_synergy"
                    | "noise_std"
                    | "n_samples"
            ),
            "{}:{}: unknown key `{k}`",
            path.display(),
            i + 1
        );
        cfg.set(k, v.trim())
            .with_context(|| format!("{}:{}", path.display(), i + 1))?;
    }
    cfg.synthetic.validate_informative()?;
    Ok((cfg.synthetic, cfg.seed))
}

fn split_values(param: SweepParam, values: &str) -> Vec<String> {
    let sep = if param == SweepParam::SplitDims && values.contains(';') { ';' } else { ',' };
    values
        .split(sep)
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateData { spec, out } => {
            let (spec, seed) = read_spec(&spec)?;
            let data = generate_dataset(&spec, seed)?;
            save_dataset(&data, &out)?;
            println!("wrote {} samples to {}", data.len(), out.display());
        }
        Command::Run { config, out, threads: t } => {
            let cfg = RunConfig::read(&config)?;
            print!("{}", cfg.to_config_string());
            let result = run_to_dir(&cfg, &out, threads(t)?)?;
            for (group, acc) in result.final_accuracy() {
                println!("final accuracy {group}: {acc:.4}");
            }
            println!("metrics: {}", out.join(METRICS_FILE).display());
        }
        Command::Sweep {
            config,
            param,
            values,
            out,
            threads: t,
        } => {
            let cfg = RunConfig::read(&config)?;
            let param: SweepParam = param.parse()?;
            let values = split_values(param, &values);
            let runs = run_sweep(&cfg, param, &values, &out, threads(t)?)?;
            for r in &runs {
                let all = r.output.final_accuracy().get("all").copied().unwrap_or(f64::NAN);
                println!("{param} = {}: final accuracy {all:.4}", r.value);
            }
        }
        Command::Pid { dist } => {
            let d = JointDistribution::read_csv(&dist)?;
            let result = pid_decompose(&d)?;
            println!("{}", serde_json::to_string_pretty(&result)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
