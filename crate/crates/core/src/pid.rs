//! Partial information decomposition of a discrete joint distribution
//! `p(x_1, …, x_n, y)` into redundant, unique and synergistic parts.
//!
//! Redundancy and synergy use the `I_min` / `I_max` constructions built on
//! Williams–Beer specific information:
//!
//! ```text
//! R      = Σ_y p(y) min_i I(X_i; Y=y)
//! S      = I(X_1..X_n; Y) − Σ_y p(y) max_i I(X_i; Y=y)
//! U_i    = I(X_i; Y) − I_min({X_j : j ≠ i}; Y)
//! ```
//!
//! The unique term is computed exactly as written even when it goes
//! negative; `residual` reports how far `R + S + ΣU` is from the total.

use std::io::BufRead;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// Probabilities below this are treated as exact zeros inside logarithms.
pub const PROB_FLOOR: f64 = 1e-15;

const SUM_TOL: f64 = 1e-12;
const CSV_SUM_TOL: f64 = 1e-9;

/// Dense table over `(x_1, …, x_n, y)`, row-major with `y` varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDistribution {
    modality_cardinalities: Vec<usize>,
    label_cardinality: usize,
    probs: Vec<f64>,
}

/// Decomposition of `I(X_1..X_n; Y)`, all values in bits.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PidResult {
    pub total_mi: f64,
    pub redundant: f64,
    pub synergistic: f64,
    pub unique: Vec<f64>,
    pub residual: f64,
}

impl JointDistribution {
    pub fn new(
        modality_cardinalities: Vec<usize>,
        label_cardinality: usize,
        probs: Vec<f64>,
    ) -> Result<Self> {
        Self::validated(modality_cardinalities, label_cardinality, probs, SUM_TOL)
    }

    fn validated(
        modality_cardinalities: Vec<usize>,
        label_cardinality: usize,
        probs: Vec<f64>,
        tol: f64,
    ) -> Result<Self> {
        if modality_cardinalities.is_empty() {
            return Err(Error::config("joint distribution needs at least one modality"));
        }
        if label_cardinality == 0 || modality_cardinalities.contains(&0) {
            return Err(Error::config("cardinalities must be positive"));
        }
        let cells = modality_cardinalities.iter().product::<usize>() * label_cardinality;
        if probs.len() != cells {
            return Err(Error::config(format!(
                "probability table has {} cells, expected {cells}",
                probs.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::config(format!("invalid probability {p}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > tol {
            return Err(Error::config(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(JointDistribution {
            modality_cardinalities,
            label_cardinality,
            probs,
        })
    }

    /// Empirical joint from observed `(x, y)` tuples.
    pub fn from_samples<'a, I>(
        modality_cardinalities: Vec<usize>,
        label_cardinality: usize,
        samples: I,
    ) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a [usize], usize)>,
    {
        let cells = modality_cardinalities.iter().product::<usize>() * label_cardinality;
        let mut counts = vec![0.0; cells];
        let mut n = 0usize;
        for (xs, y) in samples {
            let idx = cell_index(&modality_cardinalities, label_cardinality, xs, y)?;
            counts[idx] += 1.0;
            n += 1;
        }
        if n == 0 {
            return Err(Error::config("no samples"));
        }
        let probs = counts.into_iter().map(|c| c / n as f64).collect();
        Self::validated(modality_cardinalities, label_cardinality, probs, 1e-9)
    }

    /// Reads `x_1,…,x_n,y,p` rows. The header is required; unlisted cells
    /// have probability zero.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(std::io::BufReader::new(file), path)
    }

    pub fn parse_csv<R: BufRead>(reader: R, origin: &Path) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let header = loop {
            match lines.next() {
                None => return Err(Error::parse(origin, 1, "empty distribution file")),
                Some((i, line)) => {
                    let line = line.map_err(|e| Error::io(origin, e))?;
                    if !line.trim().is_empty() {
                        break (i + 1, line);
                    }
                }
            }
        };
        let cols: Vec<String> = header.1.split(',').map(|c| c.trim().to_string()).collect();
        let n = cols.len().saturating_sub(2);
        let expected: Vec<String> = (1..=n)
            .map(|i| format!("x_{i}"))
            .chain(["y".to_string(), "p".to_string()])
            .collect();
        if n == 0 || cols != expected {
            return Err(Error::parse(
                origin,
                header.0,
                format!("header must be {}", expected.join(",")),
            ));
        }

        let mut rows: Vec<(Vec<usize>, usize, f64, usize)> = Vec::new();
        for (i, line) in lines {
            let lineno = i + 1;
            let line = line.map_err(|e| Error::io(origin, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != n + 2 {
                return Err(Error::parse(
                    origin,
                    lineno,
                    format!("expected {} fields, found {}", n + 2, fields.len()),
                ));
            }
            let mut xs = Vec::with_capacity(n);
            for f in &fields[..n + 1] {
                xs.push(f.parse::<usize>().map_err(|_| {
                    Error::parse(origin, lineno, format!("not a non-negative integer: {f:?}"))
                })?);
            }
            let y = xs.pop().expect("n + 1 values");
            let p: f64 = fields[n + 1]
                .parse()
                .map_err(|_| Error::parse(origin, lineno, "bad probability"))?;
            if !(p.is_finite() && p >= 0.0) {
                return Err(Error::parse(origin, lineno, format!("invalid probability {p}")));
            }
            rows.push((xs, y, p, lineno));
        }
        if rows.is_empty() {
            return Err(Error::parse(origin, header.0, "no probability rows"));
        }

        let mut cards = vec![0usize; n];
        let mut label_card = 0usize;
        for (xs, y, _, _) in &rows {
            for (c, &x) in cards.iter_mut().zip(xs) {
                *c = (*c).max(x + 1);
            }
            label_card = label_card.max(y + 1);
        }
        let cells = cards.iter().product::<usize>() * label_card;
        let mut probs = vec![0.0; cells];
        let mut seen = vec![false; cells];
        for (xs, y, p, lineno) in rows {
            let idx = cell_index(&cards, label_card, &xs, y)?;
            if seen[idx] {
                return Err(Error::parse(origin, lineno, "duplicate cell"));
            }
            seen[idx] = true;
            probs[idx] = p;
        }
        Self::validated(cards, label_card, probs, CSV_SUM_TOL)
    }

    pub fn n_modalities(&self) -> usize {
        self.modality_cardinalities.len()
    }

    pub fn modality_cardinalities(&self) -> &[usize] {
        &self.modality_cardinalities
    }

    pub fn label_cardinality(&self) -> usize {
        self.label_cardinality
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Iterates `(x, y, p)` over every cell.
    fn cells(&self) -> impl Iterator<Item = (Vec<usize>, usize, f64)> + '_ {
        let n = self.n_modalities();
        self.probs.iter().enumerate().map(move |(idx, &p)| {
            let y = idx % self.label_cardinality;
            let mut rest = idx / self.label_cardinality;
            let mut xs = vec![0; n];
            for i in (0..n).rev() {
                xs[i] = rest % self.modality_cardinalities[i];
                rest /= self.modality_cardinalities[i];
            }
            (xs, y, p)
        })
    }

    pub fn label_marginal(&self) -> Vec<f64> {
        let mut py = vec![0.0; self.label_cardinality];
        for (i, p) in self.probs.iter().enumerate() {
            py[i % self.label_cardinality] += p;
        }
        py
    }

    /// `p(x_S, y)` flattened as `[state_of_S * |Y| + y]`.
    fn subset_joint(&self, subset: &[usize]) -> (Vec<f64>, usize) {
        let states: usize = subset.iter().map(|&i| self.modality_cardinalities[i]).product();
        let mut table = vec![0.0; states * self.label_cardinality];
        for (xs, y, p) in self.cells() {
            let mut s = 0;
            for &i in subset {
                s = s * self.modality_cardinalities[i] + xs[i];
            }
            table[s * self.label_cardinality + y] += p;
        }
        (table, states)
    }

    fn check_subset(&self, subset: &[usize]) -> Result<Vec<usize>> {
        if subset.is_empty() {
            return Err(Error::config("mutual information needs a non-empty modality subset"));
        }
        let mut s = subset.to_vec();
        s.sort_unstable();
        s.dedup();
        if let Some(&bad) = s.iter().find(|&&i| i >= self.n_modalities()) {
            return Err(Error::config(format!("modality index {bad} out of range")));
        }
        Ok(s)
    }
}

fn cell_index(cards: &[usize], label_card: usize, xs: &[usize], y: usize) -> Result<usize> {
    if xs.len() != cards.len() {
        return Err(Error::config("sample has the wrong number of modalities"));
    }
    let mut idx = 0;
    for (&x, &c) in xs.iter().zip(cards) {
        if x >= c {
            return Err(Error::config(format!("value {x} exceeds cardinality {c}")));
        }
        idx = idx * c + x;
    }
    if y >= label_card {
        return Err(Error::config(format!("label {y} exceeds cardinality {label_card}")));
    }
    Ok(idx * label_card + y)
}

fn significant(p: f64) -> bool {
    p >= PROB_FLOOR
}

/// `I(X_S; Y)` in bits.
pub fn mutual_information(dist: &JointDistribution, subset: &[usize]) -> Result<f64> {
    let subset = dist.check_subset(subset)?;
    let k = dist.label_cardinality;
    let (joint, states) = dist.subset_joint(&subset);
    let py = dist.label_marginal();
    let mut mi = 0.0;
    for s in 0..states {
        let row = &joint[s * k..(s + 1) * k];
        let px: f64 = row.iter().sum();
        if !significant(px) {
            continue;
        }
        for (y, &pxy) in row.iter().enumerate() {
            if significant(pxy) && significant(py[y]) {
                mi += pxy * (pxy / (px * py[y])).log2();
            }
        }
    }
    Ok(mi)
}

/// Williams–Beer specific information `I(X_i; Y=y)` in bits:
/// `Σ_x p(x|y) · log2(p(y|x) / p(y))`.
pub fn specific_information(dist: &JointDistribution, i: usize, y: usize) -> Result<f64> {
    if i >= dist.n_modalities() {
        return Err(Error::config(format!("modality index {i} out of range")));
    }
    if y >= dist.label_cardinality {
        return Err(Error::config(format!("label {y} out of range")));
    }
    let py = dist.label_marginal();
    if !significant(py[y]) {
        return Err(Error::degenerate(format!("p(y={y}) = 0")));
    }
    let (joint, states) = dist.subset_joint(&[i]);
    Ok(specific_from_table(&joint, states, dist.label_cardinality, &py, y))
}

fn specific_from_table(joint: &[f64], states: usize, k: usize, py: &[f64], y: usize) -> f64 {
    let mut acc = 0.0;
    for s in 0..states {
        let row = &joint[s * k..(s + 1) * k];
        let pxy = row[y];
        if !significant(pxy) {
            continue;
        }
        let px: f64 = row.iter().sum();
        let p_x_given_y = pxy / py[y];
        let p_y_given_x = pxy / px;
        acc += p_x_given_y * (p_y_given_x / py[y]).log2();
    }
    acc
}

/// Full decomposition. Requires at least two modalities.
pub fn pid_decompose(dist: &JointDistribution) -> Result<PidResult> {
    let n = dist.n_modalities();
    if n < 2 {
        return Err(Error::config("decomposition needs at least two modalities"));
    }
    let k = dist.label_cardinality;
    let py = dist.label_marginal();

    // specific[i][y]
    let specific: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let (joint, states) = dist.subset_joint(&[i]);
            (0..k)
                .map(|y| {
                    if significant(py[y]) {
                        specific_from_table(&joint, states, k, &py, y)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();

    let i_min = |members: &[usize]| -> f64 {
        (0..k)
            .filter(|&y| significant(py[y]))
            .map(|y| {
                let m = members
                    .iter()
                    .map(|&i| specific[i][y])
                    .fold(f64::INFINITY, f64::min);
                py[y] * m
            })
            .sum()
    };
    let all: Vec<usize> = (0..n).collect();
    let redundant = i_min(&all);
    let i_max: f64 = (0..k)
        .filter(|&y| significant(py[y]))
        .map(|y| {
            let m = (0..n)
                .map(|i| specific[i][y])
                .fold(f64::NEG_INFINITY, f64::max);
            py[y] * m
        })
        .sum();

    let total_mi = mutual_information(dist, &all)?;
    let synergistic = total_mi - i_max;
    let unique = (0..n)
        .map(|i| {
            let rest: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            Ok(mutual_information(dist, &[i])? - i_min(&rest))
        })
        .collect::<Result<Vec<f64>>>()?;
    let residual = total_mi - redundant - synergistic - unique.iter().sum::<f64>();
    Ok(PidResult {
        total_mi,
        redundant,
        synergistic,
        unique,
        residual,
    })
}
