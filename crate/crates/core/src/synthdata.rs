//! Synthetic multimodal classification data with a controllable mix of
//! redundant, unique and synergistic label information, plus non-IID
//! Dirichlet partitioning across agents and a plain CSV file format.
//!
//! Each modality's feature vector is laid out as three contiguous blocks:
//!
//! ```text
//! [ redundant | unique | synergy ]
//! ```
//!
//! * the redundant block carries the label's binary code, identical in every
//!   modality;
//! * the unique block carries a modality-specific re-encoding of the code;
//! * the synergy block carries one XOR share of the code. Shares are uniform
//!   and individually independent of the label; only all shares together
//!   recover it.

use std::fmt::Write as _;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::seed::{self, Stream};

/// Fraction of samples held out for testing.
pub const TEST_FRACTION_DENOM: usize = 5;

/// Redraws allowed before a partition is declared infeasible.
pub const PARTITION_RETRIES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyntheticSpec {
    pub n_modalities: usize,
    pub n_classes: usize,
    pub dim_per_modality: usize,
    pub strength_redundant: f64,
    pub strength_unique: f64,
    pub strength_synergy: f64,
    pub noise_std: f64,
    pub n_samples: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_modalities: 2,
            n_classes: 4,
            dim_per_modality: 12,
            strength_redundant: 0.3,
            strength_unique: 0.3,
            strength_synergy: 1.0,
            noise_std: 1.0,
            n_samples: 6000,
        }
    }
}

impl SyntheticSpec {
    /// Structural checks. All-zero strengths pass here (a label-free
    /// control dataset); [`SyntheticSpec::validate_informative`] rejects it.
    pub fn validate(&self) -> Result<()> {
        if self.n_modalities == 0 {
            return Err(Error::config("n_modalities must be at least 1"));
        }
        if self.n_classes < 2 {
            return Err(Error::config("n_classes must be at least 2"));
        }
        if self.dim_per_modality < 3 {
            return Err(Error::config("dim_per_modality must be at least 3"));
        }
        for (name, s) in [
            ("strength_redundant", self.strength_redundant),
            ("strength_unique", self.strength_unique),
            ("strength_synergy", self.strength_synergy),
        ] {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::config(format!("{name} must be in [0, 1], got {s}")));
            }
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::config("noise_std must be finite and >= 0"));
        }
        if self.n_samples == 0 {
            return Err(Error::config("n_samples must be positive"));
        }
        Ok(())
    }

    pub fn validate_informative(&self) -> Result<()> {
        self.validate()?;
        if self.strength_redundant <= 0.0
            && self.strength_unique <= 0.0
            && self.strength_synergy <= 0.0
        {
            return Err(Error::config("at least one strength must be positive"));
        }
        Ok(())
    }

    /// Width of the (redundant, unique, synergy) blocks.
    pub fn block_dims(&self) -> (usize, usize, usize) {
        let r = self.dim_per_modality / 3;
        let u = self.dim_per_modality / 3;
        (r, u, self.dim_per_modality - r - u)
    }

    fn code_bits(&self) -> usize {
        let mut bits = 1;
        while (1usize << bits) < self.n_classes {
            bits += 1;
        }
        bits
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// One feature vector per modality.
    pub features: Vec<Vec<f64>>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub modality_dims: Vec<usize>,
    pub n_classes: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, modality_dims: Vec<usize>, n_classes: usize) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            if s.features.len() != modality_dims.len()
                || s.features.iter().zip(&modality_dims).any(|(f, &d)| f.len() != d)
            {
                return Err(Error::config(format!("sample {i} does not match modality dims")));
            }
            if s.label >= n_classes {
                return Err(Error::config(format!("sample {i} label {} out of range", s.label)));
            }
        }
        Ok(Dataset {
            samples,
            modality_dims,
            n_classes,
        })
    }

    pub fn n_modalities(&self) -> usize {
        self.modality_dims.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> impl Iterator<Item = usize> + '_ {
        self.samples.iter().map(|s| s.label)
    }
}

fn signed(bit: usize, strength: f64) -> f64 {
    if bit == 1 {
        strength
    } else {
        -strength
    }
}

/// Draws a dataset; identical `(spec, seed)` give identical output.
pub fn generate_dataset(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = seed::rng(seed, Stream::Data, &[]);
    let (dr, du, ds) = spec.block_dims();
    let bits = spec.code_bits();
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::config(e.to_string()))?;
    let n = spec.n_modalities;

    let mut samples = Vec::with_capacity(spec.n_samples);
    for _ in 0..spec.n_samples {
        let label = rng.random_range(0..spec.n_classes);
        let code = |b: usize| (label >> b) & 1;

        let mut shares: Vec<Vec<usize>> = (0..n.saturating_sub(1))
            .map(|_| (0..bits).map(|_| rng.random_range(0..2)).collect())
            .collect();
        let last: Vec<usize> = (0..bits)
            .map(|b| shares.iter().fold(code(b), |acc, s| acc ^ s[b]))
            .collect();
        shares.push(last);

        let features = (0..n)
            .map(|m| {
                let mut v = Vec::with_capacity(spec.dim_per_modality);
                v.extend((0..dr).map(|k| signed(code(k % bits), spec.strength_redundant)));
                v.extend((0..du).map(|k| {
                    let s = signed(code((k + m) % bits), spec.strength_unique);
                    if m % 2 == 1 {
                        -s
                    } else {
                        s
                    }
                }));
                v.extend((0..ds).map(|k| signed(shares[m][k % bits], spec.strength_synergy)));
                for x in &mut v {
                    *x += noise.sample(&mut rng);
                }
                v
            })
            .collect();
        samples.push(Sample { features, label });
    }
    Dataset::new(
        samples,
        vec![spec.dim_per_modality; n],
        spec.n_classes,
    )
}

/// Seeded 80/20 split of `0..n` into `(train, test)`.
pub fn train_test_split(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(seed, Stream::Split, &[]));
    let n_test = n / TEST_FRACTION_DENOM;
    let test = idx.split_off(n - n_test);
    (idx, test)
}

/// Per-agent sample shards plus the class-by-agent proportions that
/// produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionAssignment {
    pub agent_shards: Vec<Vec<usize>>,
    pub alpha: f64,
    /// `proportions[class][agent]`, each row summing to one.
    pub proportions: Vec<Vec<f64>>,
}

fn draw_dirichlet<R: Rng>(rng: &mut R, alpha: f64, k: usize) -> Result<Vec<f64>> {
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::config(e.to_string()))?;
    loop {
        let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 && total.is_finite() {
            return Ok(draws.into_iter().map(|g| g / total).collect());
        }
    }
}

/// Splits `indices` of one class into consecutive runs sized by
/// `proportions`, rounding cumulative boundaries.
fn split_by_proportions(indices: &[usize], proportions: &[f64], shards: &mut [Vec<usize>]) {
    let n = indices.len();
    let mut cum = 0.0;
    let mut start = 0;
    let last = proportions.len() - 1;
    for (agent, p) in proportions.iter().enumerate() {
        cum += p;
        let end = if agent == last {
            n
        } else {
            ((cum * n as f64).round() as usize).clamp(start, n)
        };
        shards[agent].extend_from_slice(&indices[start..end]);
        start = end;
    }
}

fn indices_by_class(dataset: &Dataset, indices: &[usize]) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); dataset.n_classes];
    for &i in indices {
        by_class[dataset.samples[i].label].push(i);
    }
    by_class
}

/// Label-skewed partition of `indices` over `n_agents`: for each class,
/// agent proportions are drawn from a symmetric Dirichlet(`alpha`). Any
/// draw leaving an agent with fewer than `min_shard` samples is redrawn.
pub fn dirichlet_partition(
    dataset: &Dataset,
    indices: &[usize],
    n_agents: usize,
    alpha: f64,
    min_shard: usize,
    seed: u64,
) -> Result<PartitionAssignment> {
    if n_agents == 0 {
        return Err(Error::config("n_agents must be at least 1"));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::config(format!("alpha must be positive, got {alpha}")));
    }
    let mut rng = seed::rng(seed, Stream::Partition, &[]);
    let mut by_class = indices_by_class(dataset, indices);
    for class in &mut by_class {
        class.shuffle(&mut rng);
    }

    for _ in 0..PARTITION_RETRIES {
        let proportions = (0..dataset.n_classes)
            .map(|_| draw_dirichlet(&mut rng, alpha, n_agents))
            .collect::<Result<Vec<_>>>()?;
        let mut shards = vec![Vec::new(); n_agents];
        for (class, props) in by_class.iter().zip(&proportions) {
            split_by_proportions(class, props, &mut shards);
        }
        if shards.iter().all(|s| s.len() >= min_shard) {
            for s in &mut shards {
                s.sort_unstable();
            }
            return Ok(PartitionAssignment {
                agent_shards: shards,
                alpha,
                proportions,
            });
        }
    }
    Err(Error::InfeasiblePartition(format!(
        "{PARTITION_RETRIES} Dirichlet draws all left an agent below {min_shard} samples \
         ({} samples, {n_agents} agents, alpha {alpha})",
        indices.len()
    )))
}

/// Distributes `indices` with previously drawn class proportions, so held-out
/// shards follow each agent's training label mix.
pub fn apply_partition(
    dataset: &Dataset,
    indices: &[usize],
    proportions: &[Vec<f64>],
    seed: u64,
) -> Vec<Vec<usize>> {
    let n_agents = proportions.first().map_or(0, Vec::len);
    let mut rng = seed::rng(seed, Stream::Partition, &[1]);
    let mut shards = vec![Vec::new(); n_agents];
    for (mut class, props) in indices_by_class(dataset, indices).into_iter().zip(proportions) {
        class.shuffle(&mut rng);
        split_by_proportions(&class, props, &mut shards);
    }
    for s in &mut shards {
        s.sort_unstable();
    }
    shards
}

fn header(dims: &[usize]) -> String {
    let mut h = String::from("label");
    for (m, &d) in dims.iter().enumerate() {
        for k in 0..d {
            let _ = write!(h, ",m{m}_{k}");
        }
    }
    h
}

/// Writes the dataset as CSV with 17 significant digits per value, which
/// round-trips every f64 exactly.
pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", header(&dataset.modality_dims)).map_err(io)?;
    let mut line = String::new();
    for s in &dataset.samples {
        line.clear();
        let _ = write!(line, "{}", s.label);
        for v in s.features.iter().flatten() {
            let _ = write!(line, ",{v:.16e}");
        }
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(std::io::BufReader::new(file), path)
}

fn parse_header(line: &str, path: &Path) -> Result<Vec<usize>> {
    let mut cols = line.split(',').map(str::trim);
    if cols.next() != Some("label") {
        return Err(Error::parse(path, 1, "first column must be `label`"));
    }
    let mut dims: Vec<usize> = Vec::new();
    for col in cols {
        let parsed = col
            .strip_prefix('m')
            .and_then(|rest| rest.split_once('_'))
            .and_then(|(m, k)| Some((m.parse::<usize>().ok()?, k.parse::<usize>().ok()?)));
        let Some((m, k)) = parsed else {
            return Err(Error::parse(path, 1, format!("bad column name {col:?}")));
        };
        if m == dims.len() && k == 0 {
            dims.push(1);
        } else if m + 1 == dims.len() && k == dims[m] {
            dims[m] += 1;
        } else {
            return Err(Error::parse(path, 1, format!("column {col:?} out of order")));
        }
    }
    if dims.is_empty() {
        return Err(Error::parse(path, 1, "no modality columns"));
    }
    Ok(dims)
}

pub fn parse_dataset<R: BufRead>(reader: R, path: &Path) -> Result<Dataset> {
    let mut lines = reader.lines();
    let first = match lines.next() {
        None => return Err(Error::parse(path, 1, "empty dataset file")),
        Some(l) => l.map_err(|e| Error::io(path, e))?,
    };
    let dims = parse_header(&first, path)?;
    let width: usize = dims.iter().sum();

    let mut samples = Vec::new();
    let mut max_label = 0;
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width + 1 {
            // Name the modality whose columns are missing.
            let have = fields.len().saturating_sub(1);
            let mut seen = 0;
            let missing = dims
                .iter()
                .position(|&d| {
                    seen += d;
                    have < seen
                })
                .map_or_else(|| "extra columns".to_string(), |m| format!("missing modality m{m} columns"));
            return Err(Error::parse(
                path,
                lineno,
                format!("expected {} fields, found {} ({missing})", width + 1, fields.len()),
            ));
        }
        let label: usize = fields[0]
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad label {:?}", fields[0])))?;
        max_label = max_label.max(label);
        let mut values = fields[1..].iter().map(|f| {
            f.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(path, lineno, format!("bad value {f:?}")))
        });
        let mut features = Vec::with_capacity(dims.len());
        for &d in &dims {
            features.push((0..d).map(|_| values.next().expect("width checked")).collect::<Result<Vec<f64>>>()?);
        }
        samples.push(Sample { features, label });
    }
    if samples.is_empty() {
        return Err(Error::parse(path, 2, "dataset has no samples"));
    }
    let n_classes = (max_label + 1).max(2);
    Dataset::new(samples, dims, n_classes)
}
