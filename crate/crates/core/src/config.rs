//! Run configuration files.
//!
//! A config is a flat list of `key = value` lines. `#` starts a comment,
//! blank lines are ignored, and every key may appear at most once.
//!
//! ```text
//! dataset = synthetic          # or a path to a dataset CSV
//! agents = 10:10:10            # unimodal counts per modality, then multimodal
//! strategy = parse             # parse | dsgd_modality | dsgd_task | dsgd_hybrid
//! topology = ring              # ring | chordal_ring | random_gossip
//! rounds = 200
//! lr = 0.05
//! batch_size = 32
//! beta = 0.2
//! tau = 0.2
//! split_dims = 16,16,16        # redundant, synergistic, unique widths
//! hidden = 64
//! fusion = mean                # mean | concat_linear | sum_linear | hadamard
//! alpha = 0.5
//! seed = 0
//! eval_every = 10
//! grad_probe_rounds = 50       # comma-separated, empty for none
//! nce_include_positive_in_denominator = false
//!
//! # synthetic dataset only
//! n_modalities = 2
//! n_classes = 4
//! dim_per_modality = 12
//! strength_redundant = 0.3
//! strength_unique = 0.3
//! strength_synergy = 1.0
//! noise_std = 1.0
//! n_samples = 6000
//! ```
//!
//! `dataset` and `agents` are required; everything else has the default
//! shown. Relative dataset paths resolve against the config file's
//! directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{FusionOp, SplitDims, Strategy};
use crate::network::TopologyKind;
use crate::objectives::{DEFAULT_BETA, DEFAULT_TAU};
use crate::synthdata::SyntheticSpec;

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Synthetic,
    Csv(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    /// Used when `dataset` is synthetic.
    pub synthetic: SyntheticSpec,
    /// Agent counts: one per single modality, then the full modality set.
    pub agents: Vec<usize>,
    pub strategy: Strategy,
    pub topology: TopologyKind,
    pub rounds: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub beta: f64,
    pub tau: f64,
    pub split: SplitDims,
    pub hidden: usize,
    pub fusion: FusionOp,
    pub alpha: f64,
    pub seed: u64,
    pub eval_every: usize,
    pub grad_probe_rounds: Vec<usize>,
    pub nce_include_positive: bool,
}

pub const KEYS: &[&str] = &[
    "dataset",
    "agents",
    "strategy",
    "topology",
    "rounds",
    "lr",
    "batch_size",
    "beta",
    "tau",
    "split_dims",
    "hidden",
    "fusion",
    "alpha",
    "seed",
    "eval_every",
    "grad_probe_rounds",
    "nce_include_positive_in_denominator",
    "n_modalities",
    "n_classes",
    "dim_per_modality",
    "strength_redundant",
    "strength_unique",
    "strength_synergy",
    "noise_std",
    "n_samples",
];

impl RunConfig {
    /// Defaults for everything except the agent mix.
    pub fn with_agents(dataset: DatasetSource, agents: Vec<usize>) -> Self {
        RunConfig {
            dataset,
            synthetic: SyntheticSpec::default(),
            agents,
            strategy: Strategy::Parse,
            topology: TopologyKind::Ring,
            rounds: 200,
            lr: 0.05,
            batch_size: 32,
            beta: DEFAULT_BETA,
            tau: DEFAULT_TAU,
            split: SplitDims::equal(16),
            hidden: 64,
            fusion: FusionOp::Mean,
            alpha: 0.5,
            seed: 0,
            eval_every: 10,
            grad_probe_rounds: Vec::new(),
            nce_include_positive: false,
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, path, base)
    }

    /// Parses config text; `origin` names it in errors and `base` anchors
    /// relative dataset paths.
    pub fn parse(text: &str, origin: &Path, base: &Path) -> Result<Self> {
        let mut cfg = RunConfig::with_agents(DatasetSource::Synthetic, Vec::new());
        let mut seen: Vec<(String, usize)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| {
                Error::parse(origin, line, format!("expected `key = value`, got {content:?}"))
            })?;
            let key = key.trim();
            let value = value.trim();
            if let Some((_, first)) = seen.iter().find(|(k, _)| k == key) {
                return Err(Error::parse(
                    origin,
                    line,
                    format!("duplicate key `{key}` (first set on line {first})"),
                ));
            }
            if key == "dataset" {
                cfg.dataset = parse_dataset(value, base);
            } else {
                cfg.set(key, value)
                    .map_err(|e| Error::parse(origin, line, message_of(e)))?;
            }
            seen.push((key.to_string(), line));
        }
        for required in ["dataset", "agents"] {
            if !seen.iter().any(|(k, _)| k == required) {
                return Err(Error::parse(origin, 0, format!("missing required key `{required}`")));
            }
        }
        cfg.validate().map_err(|e| Error::parse(origin, 0, message_of(e)))?;
        Ok(cfg)
    }

    /// Sets one key from its textual value. `dataset` paths are taken as
    /// given.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "dataset" => self.dataset = parse_dataset(value, Path::new("")),
            "agents" => self.agents = parse_agents(value)?,
            "strategy" => self.strategy = keyed(key, value.parse())?,
            "topology" => self.topology = keyed(key, value.parse())?,
            "rounds" => self.rounds = at_least(key, value, 1)?,
            "lr" => self.lr = positive(key, value)?,
            "batch_size" => self.batch_size = at_least(key, value, 1)?,
            "beta" => self.beta = non_negative(key, value)?,
            "tau" => self.tau = positive(key, value)?,
            "split_dims" => self.split = parse_split(value, self.split)?,
            "hidden" => self.hidden = at_least(key, value, 1)?,
            "fusion" => self.fusion = keyed(key, value.parse())?,
            "alpha" => self.alpha = positive(key, value)?,
            "seed" => self.seed = number(key, value, "an unsigned 64-bit integer")?,
            "eval_every" => self.eval_every = at_least(key, value, 1)?,
            "grad_probe_rounds" => {
                self.grad_probe_rounds = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| at_least(key, s, 1))
                    .collect::<Result<_>>()?
            }
            "nce_include_positive_in_denominator" => {
                self.nce_include_positive = number(key, value, "true or false")?
            }
            "n_modalities" => self.synthetic.n_modalities = at_least(key, value, 1)?,
            "n_classes" => self.synthetic.n_classes = at_least(key, value, 2)?,
            "dim_per_modality" => self.synthetic.dim_per_modality = at_least(key, value, 3)?,
            "strength_redundant" => self.synthetic.strength_redundant = non_negative(key, value)?,
            "strength_unique" => self.synthetic.strength_unique = non_negative(key, value)?,
            "strength_synergy" => self.synthetic.strength_synergy = non_negative(key, value)?,
            "noise_std" => self.synthetic.noise_std = non_negative(key, value)?,
            "n_samples" => self.synthetic.n_samples = at_least(key, value, 1)?,
            _ => return Err(Error::config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.agents.iter().sum::<usize>() < 2 {
            return Err(Error::config(format!(
                "`agents` must total at least 2, got {}",
                self.agents.iter().sum::<usize>()
            )));
        }
        if self.dataset == DatasetSource::Synthetic {
            self.synthetic.validate_informative()?;
            self.check_agent_mix(self.synthetic.n_modalities)?;
        }
        let s = self.split;
        if s.redundant == 0 || s.synergistic == 0 || s.unique == 0 {
            return Err(Error::config(format!("`split_dims` widths must all be >= 1, got {s}")));
        }
        Ok(())
    }

    /// The agent mix must list one count per modality plus one for the
    /// multimodal set.
    pub fn check_agent_mix(&self, n_modalities: usize) -> Result<()> {
        let expected = if n_modalities == 1 { 1 } else { n_modalities + 1 };
        if self.agents.len() != expected {
            return Err(Error::config(format!(
                "`agents` needs {expected} colon-separated counts for {n_modalities} modalities, got {}",
                self.agents.len()
            )));
        }
        Ok(())
    }

    /// Modality set of every agent, ids assigned by cycling through the
    /// signatures so that neighbouring ids have different modality sets.
    pub fn agent_modalities(&self, n_modalities: usize) -> Result<Vec<Vec<usize>>> {
        self.check_agent_mix(n_modalities)?;
        let signatures: Vec<Vec<usize>> = if n_modalities == 1 {
            vec![vec![0]]
        } else {
            (0..n_modalities)
                .map(|m| vec![m])
                .chain(std::iter::once((0..n_modalities).collect()))
                .collect()
        };
        let mut left = self.agents.clone();
        let mut out = Vec::with_capacity(left.iter().sum());
        while left.iter().any(|&c| c > 0) {
            for (sig, count) in signatures.iter().zip(left.iter_mut()) {
                if *count > 0 {
                    out.push(sig.clone());
                    *count -= 1;
                }
            }
        }
        Ok(out)
    }

    /// Every key with its resolved value, in canonical order.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let dataset = match &self.dataset {
            DatasetSource::Synthetic => "synthetic".to_string(),
            DatasetSource::Csv(p) => p.display().to_string(),
        };
        let agents = self
            .agents
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(":");
        let probes = self
            .grad_probe_rounds
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(",");
        let syn = &self.synthetic;
        let rows: Vec<(&str, String)> = vec![
            ("dataset", dataset),
            ("agents", agents),
            ("strategy", self.strategy.to_string()),
            ("topology", self.topology.to_string()),
            ("rounds", self.rounds.to_string()),
            ("lr", self.lr.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("beta", self.beta.to_string()),
            ("tau", self.tau.to_string()),
            ("split_dims", self.split.to_string()),
            ("hidden", self.hidden.to_string()),
            ("fusion", self.fusion.to_string()),
            ("alpha", self.alpha.to_string()),
            ("seed", self.seed.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("grad_probe_rounds", probes),
            ("nce_include_positive_in_denominator", self.nce_include_positive.to_string()),
            ("n_modalities", syn.n_modalities.to_string()),
            ("n_classes", syn.n_classes.to_string()),
            ("dim_per_modality", syn.dim_per_modality.to_string()),
            ("strength_redundant", syn.strength_redundant.to_string()),
            ("strength_unique", syn.strength_unique.to_string()),
            ("strength_synergy", syn.strength_synergy.to_string()),
            ("noise_std", syn.noise_std.to_string()),
            ("n_samples", syn.n_samples.to_string()),
        ];
        for (k, v) in rows {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

fn message_of(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}

fn parse_dataset(value: &str, base: &Path) -> DatasetSource {
    if value.eq_ignore_ascii_case("synthetic") {
        DatasetSource::Synthetic
    } else {
        DatasetSource::Csv(base.join(value))
    }
}

fn keyed<T>(key: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::config(format!("`{key}`: {}", message_of(e))))
}

fn number<T: FromStr>(key: &str, value: &str, expected: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("`{key}` must be {expected}, got {value:?}")))
}

fn at_least(key: &str, value: &str, min: usize) -> Result<usize> {
    let expected = format!("an integer >= {min}");
    let v: usize = number(key, value, &expected)?;
    if v < min {
        return Err(Error::config(format!("`{key}` must be {expected}, got {v}")));
    }
    Ok(v)
}

fn finite(key: &str, value: &str, expected: &str) -> Result<f64> {
    let v: f64 = number(key, value, expected)?;
    if !v.is_finite() {
        return Err(Error::config(format!("`{key}` must be {expected}, got {value:?}")));
    }
    Ok(v)
}

fn positive(key: &str, value: &str) -> Result<f64> {
    let v = finite(key, value, "a number > 0")?;
    if v <= 0.0 {
        return Err(Error::config(format!("`{key}` must be a number > 0, got {v}")));
    }
    Ok(v)
}

fn non_negative(key: &str, value: &str) -> Result<f64> {
    let v = finite(key, value, "a number >= 0")?;
    if v < 0.0 {
        return Err(Error::config(format!("`{key}` must be a number >= 0, got {v}")));
    }
    Ok(v)
}

fn parse_agents(value: &str) -> Result<Vec<usize>> {
    value
        .split(':')
        .map(|c| number("agents", c.trim(), "colon-separated non-negative counts such as 10:10:10"))
        .collect()
}

/// Accepts `r,s,u`, a bare synergistic width, or `r=`, `s=`, `u=` to fix one
/// branch. In the short forms the total width of `current` is kept and the
/// other two branches share the remainder equally (the first takes the
/// floor).
pub fn parse_split(value: &str, current: SplitDims) -> Result<SplitDims> {
    let bad = || {
        Error::config(format!(
            "`split_dims` must be `r,s,u`, a synergistic width, or `r=`/`s=`/`u=` a width, got {value:?}"
        ))
    };
    let value = value.trim();
    if value.contains(',') {
        let parts: Vec<usize> = value
            .split(',')
            .map(|p| p.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        if let [r, s, u] = parts[..] {
            return Ok(SplitDims {
                redundant: r,
                synergistic: s,
                unique: u,
            });
        }
        return Err(bad());
    }
    let (branch, width) = match value.split_once('=') {
        Some((b, w)) => (b.trim(), w.trim()),
        None => ("s", value),
    };
    let width: usize = width.parse().map_err(|_| bad())?;
    let total = current.total();
    if width >= total {
        return Err(Error::config(format!(
            "`split_dims` width {width} leaves nothing of the total {total} for the other branches"
        )));
    }
    let rest = total - width;
    let (a, b) = (rest / 2, rest - rest / 2);
    Ok(match branch {
        "r" => SplitDims {
            redundant: width,
            synergistic: a,
            unique: b,
        },
        "s" => SplitDims {
            redundant: a,
            synergistic: width,
            unique: b,
        },
        "u" => SplitDims {
            redundant: a,
            synergistic: b,
            unique: width,
        },
        _ => return Err(bad()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig> {
        RunConfig::parse(text, Path::new("test.cfg"), Path::new("/data"))
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse("dataset = synthetic\nagents = 10:10:10\n").unwrap();
        assert_eq!(cfg.lr, 0.05);
        assert_eq!(cfg.batch_size, 32);
        assert_eq!(cfg.beta, 0.2);
        assert_eq!(cfg.tau, 0.2);
        assert_eq!(cfg.topology, TopologyKind::Ring);
        assert_eq!(cfg.strategy, Strategy::Parse);
        assert_eq!(cfg.rounds, 200);
        assert_eq!(cfg.alpha, 0.5);
        assert_eq!(cfg.split, SplitDims::equal(16));
    }

    #[test]
    fn unknown_key_is_named() {
        let err = parse("dataset = synthetic\nagents = 1:1:1\nbetaa = 0.2\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("betaa") && msg.contains(":3:"), "{msg}");
    }

    #[test]
    fn invalid_value_states_range() {
        let msg = parse("dataset = synthetic\nagents = 1:1:1\nlr = -1\n")
            .unwrap_err()
            .to_string();
        assert!(msg.contains("lr") && msg.contains("> 0"), "{msg}");
        let msg = parse("dataset = synthetic\nagents = 1:0:0\n").unwrap_err().to_string();
        assert!(msg.contains("at least 2"), "{msg}");
    }

    #[test]
    fn missing_and_duplicate_keys() {
        assert!(parse("agents = 1:1:1\n").unwrap_err().to_string().contains("dataset"));
        let msg = parse("dataset = synthetic\nagents = 1:1:1\nagents = 2:2:2\n")
            .unwrap_err()
            .to_string();
        assert!(msg.contains("duplicate"), "{msg}");
    }

    #[test]
    fn comments_paths_and_echo_round_trip() {
        let cfg = parse("# header\ndataset = d.csv  # trailing\nagents = 3:4:5\nfusion = hadamard\n")
            .unwrap();
        assert_eq!(cfg.dataset, DatasetSource::Csv(PathBuf::from("/data/d.csv")));
        let again = parse(&cfg.to_config_string()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn agent_ids_interleave_signatures() {
        let cfg = parse("dataset = synthetic\nagents = 2:1:3\n").unwrap();
        let mods = cfg.agent_modalities(2).unwrap();
        assert_eq!(
            mods,
            vec![vec![0], vec![1], vec![0, 1], vec![0], vec![0, 1], vec![0, 1]]
        );
    }

    #[test]
    fn split_short_forms_share_the_remainder() {
        let base = SplitDims::equal(16);
        for (s, expected) in [(8, (20, 20)), (16, (16, 16)), (24, (12, 12)), (32, (8, 8))] {
            let d = parse_split(&s.to_string(), base).unwrap();
            assert_eq!((d.synergistic, d.redundant, d.unique), (s, expected.0, expected.1));
            assert_eq!(d.total(), 48);
        }
        let d = parse_split("u=9", base).unwrap();
        assert_eq!((d.redundant, d.synergistic, d.unique), (19, 20, 9));
        assert!(parse_split("48", base).is_err());
        assert!(parse_split("1,2", base).is_err());
    }
}
