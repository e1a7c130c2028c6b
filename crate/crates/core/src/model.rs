//! Agent models.
//!
//! A PARSE agent owns one fission encoder per modality. Each encoder is an
//! affine–ReLU–affine stack whose output is cut into redundant, synergistic
//! and unique slices (in that order). Heads on top of the slices:
//!
//! * a unique head per owned modality, on `z_u`;
//! * one redundant head shared by all owned modalities, on `z_r`;
//! * on multimodal agents only, a synergistic head on the fused `z_s`.
//!
//! The three DSGD baselines use the same encoder with an undivided latent
//! and plain linear classifiers.
//!
//! Parameters live in a [`ParamSet`] keyed by [`Block`], which is what the
//! mixing step, checkpoints and gradient checks operate on.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{affine, relu, DenseMatrix};
use crate::synthdata::Sample;

/// How agents share knowledge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Strategy {
    Parse,
    DsgdModality,
    DsgdTask,
    DsgdHybrid,
}

impl Strategy {
    pub fn is_fission(self) -> bool {
        self == Strategy::Parse
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Parse => "parse",
            Strategy::DsgdModality => "dsgd_modality",
            Strategy::DsgdTask => "dsgd_task",
            Strategy::DsgdHybrid => "dsgd_hybrid",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "parse" => Ok(Strategy::Parse),
            "dsgd_modality" | "modality" => Ok(Strategy::DsgdModality),
            "dsgd_task" | "task" => Ok(Strategy::DsgdTask),
            "dsgd_hybrid" | "hybrid" => Ok(Strategy::DsgdHybrid),
            other => Err(Error::config(format!(
                "unknown strategy {other:?} (expected parse, dsgd_modality, dsgd_task, dsgd_hybrid)"
            ))),
        }
    }
}

/// Operator combining per-modality synergistic slices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum FusionOp {
    Mean,
    ConcatLinear,
    SumLinear,
    Hadamard,
}

impl FusionOp {
    pub fn is_learned(self) -> bool {
        matches!(self, FusionOp::ConcatLinear | FusionOp::SumLinear)
    }
}

impl fmt::Display for FusionOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionOp::Mean => "mean",
            FusionOp::ConcatLinear => "concat_linear",
            FusionOp::SumLinear => "sum_linear",
            FusionOp::Hadamard => "hadamard",
        })
    }
}

impl FromStr for FusionOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "mean" => Ok(FusionOp::Mean),
            "concat_linear" => Ok(FusionOp::ConcatLinear),
            "sum_linear" => Ok(FusionOp::SumLinear),
            "hadamard" => Ok(FusionOp::Hadamard),
            other => Err(Error::config(format!(
                "unknown fusion operator {other:?} (expected mean, concat_linear, sum_linear, hadamard)"
            ))),
        }
    }
}

/// Widths of the redundant, synergistic and unique latent slices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SplitDims {
    pub redundant: usize,
    pub synergistic: usize,
    pub unique: usize,
}

impl SplitDims {
    pub fn equal(each: usize) -> Self {
        SplitDims {
            redundant: each,
            synergistic: each,
            unique: each,
        }
    }

    pub fn total(&self) -> usize {
        self.redundant + self.synergistic + self.unique
    }

    pub fn redundant_range(&self) -> std::ops::Range<usize> {
        0..self.redundant
    }

    pub fn synergistic_range(&self) -> std::ops::Range<usize> {
        self.redundant..self.redundant + self.synergistic
    }

    pub fn unique_range(&self) -> std::ops::Range<usize> {
        self.redundant + self.synergistic..self.total()
    }
}

impl fmt::Display for SplitDims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.redundant, self.synergistic, self.unique)
    }
}

/// Architecture shared by every agent of a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelConfig {
    pub input_dims: Vec<usize>,
    pub hidden: usize,
    pub split: SplitDims,
    pub n_classes: usize,
    pub fusion: FusionOp,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.n_classes < 2 || self.input_dims.contains(&0) {
            return Err(Error::config("model dims must be positive with >= 2 classes"));
        }
        let s = self.split;
        if s.redundant == 0 || s.synergistic == 0 || s.unique == 0 {
            return Err(Error::config(format!("every latent slice needs width >= 1, got {s}")));
        }
        Ok(())
    }
}

/// Identifies one parameter tensor of an agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Block {
    EncoderW1(usize),
    EncoderB1(usize),
    EncoderW2(usize),
    EncoderB2(usize),
    UniqueW(usize),
    UniqueB(usize),
    RedundantW,
    RedundantB,
    SynergyW,
    SynergyB,
    FusionW,
    FusionB,
    /// Per-modality classifier of the modality-sharing baseline.
    ModalityClassifierW(usize),
    ModalityClassifierB(usize),
    /// Single classifier of the task and hybrid baselines.
    ClassifierW,
    ClassifierB,
}

impl Block {
    pub fn encoder(m: usize) -> [Block; 4] {
        [
            Block::EncoderW1(m),
            Block::EncoderB1(m),
            Block::EncoderW2(m),
            Block::EncoderB2(m),
        ]
    }

    pub fn is_bias(self) -> bool {
        matches!(
            self,
            Block::EncoderB1(_)
                | Block::EncoderB2(_)
                | Block::UniqueB(_)
                | Block::RedundantB
                | Block::SynergyB
                | Block::FusionB
                | Block::ModalityClassifierB(_)
                | Block::ClassifierB
        )
    }
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Block::EncoderW1(m) => write!(f, "enc{m}.w1"),
            Block::EncoderB1(m) => write!(f, "enc{m}.b1"),
            Block::EncoderW2(m) => write!(f, "enc{m}.w2"),
            Block::EncoderB2(m) => write!(f, "enc{m}.b2"),
            Block::UniqueW(m) => write!(f, "unique{m}.w"),
            Block::UniqueB(m) => write!(f, "unique{m}.b"),
            Block::RedundantW => f.write_str("redundant.w"),
            Block::RedundantB => f.write_str("redundant.b"),
            Block::SynergyW => f.write_str("synergy.w"),
            Block::SynergyB => f.write_str("synergy.b"),
            Block::FusionW => f.write_str("fusion.w"),
            Block::FusionB => f.write_str("fusion.b"),
            Block::ModalityClassifierW(m) => write!(f, "cls{m}.w"),
            Block::ModalityClassifierB(m) => write!(f, "cls{m}.b"),
            Block::ClassifierW => f.write_str("cls.w"),
            Block::ClassifierB => f.write_str("cls.b"),
        }
    }
}

impl FromStr for Block {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config(format!("unknown parameter block {s:?}"));
        let (head, tail) = s.split_once('.').ok_or_else(bad)?;
        let fixed = match (head, tail) {
            ("redundant", "w") => Some(Block::RedundantW),
            ("redundant", "b") => Some(Block::RedundantB),
            ("synergy", "w") => Some(Block::SynergyW),
            ("synergy", "b") => Some(Block::SynergyB),
            ("fusion", "w") => Some(Block::FusionW),
            ("fusion", "b") => Some(Block::FusionB),
            ("cls", "w") => Some(Block::ClassifierW),
            ("cls", "b") => Some(Block::ClassifierB),
            _ => None,
        };
        if let Some(b) = fixed {
            return Ok(b);
        }
        let split_num = |prefix: &str| -> Option<usize> { head.strip_prefix(prefix)?.parse().ok() };
        if let Some(m) = split_num("enc") {
            return match tail {
                "w1" => Ok(Block::EncoderW1(m)),
                "b1" => Ok(Block::EncoderB1(m)),
                "w2" => Ok(Block::EncoderW2(m)),
                "b2" => Ok(Block::EncoderB2(m)),
                _ => Err(bad()),
            };
        }
        if let Some(m) = split_num("unique") {
            return match tail {
                "w" => Ok(Block::UniqueW(m)),
                "b" => Ok(Block::UniqueB(m)),
                _ => Err(bad()),
            };
        }
        if let Some(m) = split_num("cls") {
            return match tail {
                "w" => Ok(Block::ModalityClassifierW(m)),
                "b" => Ok(Block::ModalityClassifierB(m)),
                _ => Err(bad()),
            };
        }
        Err(bad())
    }
}

/// Named parameter tensors. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    blocks: BTreeMap<Block, DenseMatrix>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, block: Block, value: DenseMatrix) {
        self.blocks.insert(block, value);
    }

    pub fn get(&self, block: Block) -> Option<&DenseMatrix> {
        self.blocks.get(&block)
    }

    pub fn get_mut(&mut self, block: Block) -> Option<&mut DenseMatrix> {
        self.blocks.get_mut(&block)
    }

    pub fn contains(&self, block: Block) -> bool {
        self.blocks.contains_key(&block)
    }

    /// Looks up a block that the model structure guarantees exists.
    pub(crate) fn at(&self, block: Block) -> &DenseMatrix {
        self.blocks
            .get(&block)
            .unwrap_or_else(|| panic!("parameter block {block} missing"))
    }

    pub(crate) fn at_mut(&mut self, block: Block) -> &mut DenseMatrix {
        self.blocks
            .get_mut(&block)
            .unwrap_or_else(|| panic!("parameter block {block} missing"))
    }

    pub fn blocks(&self) -> impl Iterator<Item = (Block, &DenseMatrix)> {
        self.blocks.iter().map(|(b, m)| (*b, m))
    }

    pub fn blocks_mut(&mut self) -> impl Iterator<Item = (Block, &mut DenseMatrix)> {
        self.blocks.iter_mut().map(|(b, m)| (*b, m))
    }

    pub fn block_ids(&self) -> Vec<Block> {
        self.blocks.keys().copied().collect()
    }

    pub fn zeros_like(&self) -> Self {
        ParamSet {
            blocks: self
                .blocks
                .iter()
                .map(|(b, m)| (*b, m.zeros_like()))
                .collect(),
        }
    }

    /// `self += alpha * other` over the blocks of `self`.
    pub fn axpy(&mut self, alpha: f64, other: &ParamSet) {
        for (b, m) in &mut self.blocks {
            if let Some(o) = other.blocks.get(b) {
                m.axpy(alpha, o);
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.blocks.values_mut().for_each(|m| m.scale(alpha));
    }

    pub fn n_values(&self) -> usize {
        self.blocks.values().map(DenseMatrix::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.values().all(DenseMatrix::is_finite)
    }

    /// Concatenates the listed blocks; missing blocks are skipped.
    pub fn flatten(&self, blocks: &[Block]) -> Vec<f64> {
        let mut out = Vec::new();
        for b in blocks {
            if let Some(m) = self.blocks.get(b) {
                out.extend_from_slice(m.data());
            }
        }
        out
    }

    /// Inverse of [`ParamSet::flatten`].
    pub fn unflatten(&mut self, blocks: &[Block], values: &[f64]) -> Result<()> {
        let mut offset = 0;
        for b in blocks {
            if let Some(m) = self.blocks.get_mut(b) {
                let n = m.len();
                let src = values
                    .get(offset..offset + n)
                    .ok_or_else(|| Error::config("flattened bundle too short"))?;
                m.data_mut().copy_from_slice(src);
                offset += n;
            }
        }
        if offset != values.len() {
            return Err(Error::config("flattened bundle too long"));
        }
        Ok(())
    }
}

/// The three slices of one encoder output.
#[derive(Debug, Clone, PartialEq)]
pub struct FissionLatent {
    pub z_r: Vec<f64>,
    pub z_s: Vec<f64>,
    pub z_u: Vec<f64>,
}

/// Borrowed view of one modality's encoder weights.
#[derive(Debug, Clone, Copy)]
pub struct FissionEncoder<'a> {
    pub w1: &'a DenseMatrix,
    pub b1: &'a DenseMatrix,
    pub w2: &'a DenseMatrix,
    pub b2: &'a DenseMatrix,
    pub split: SplitDims,
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct EncoderTape {
    pub pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub out: Vec<f64>,
}

impl<'a> FissionEncoder<'a> {
    pub fn from_params(params: &'a ParamSet, m: usize, split: SplitDims) -> Result<Self> {
        let get = |b: Block| {
            params
                .get(b)
                .ok_or_else(|| Error::config(format!("agent has no encoder for modality {m}")))
        };
        Ok(FissionEncoder {
            w1: get(Block::EncoderW1(m))?,
            b1: get(Block::EncoderB1(m))?,
            w2: get(Block::EncoderW2(m))?,
            b2: get(Block::EncoderB2(m))?,
            split,
        })
    }

    pub(crate) fn forward(&self, x: &[f64]) -> Result<EncoderTape> {
        if self.w2.rows() != self.split.total() {
            return Err(Error::config(format!(
                "encoder output width {} does not match split {}",
                self.w2.rows(),
                self.split
            )));
        }
        let pre = affine(x, self.w1, self.b1.data())?;
        let hidden = relu(&pre);
        let out = affine(&hidden, self.w2, self.b2.data())?;
        Ok(EncoderTape { pre, hidden, out })
    }

    pub fn encode(&self, x: &[f64]) -> Result<FissionLatent> {
        let out = self.forward(x)?.out;
        Ok(FissionLatent {
            z_r: out[self.split.redundant_range()].to_vec(),
            z_s: out[self.split.synergistic_range()].to_vec(),
            z_u: out[self.split.unique_range()].to_vec(),
        })
    }
}

/// Combines per-modality synergistic slices. Learned operators read
/// `fusion.w` / `fusion.b` from `params`.
pub fn fuse(latents: &[&[f64]], op: FusionOp, params: &ParamSet) -> Result<Vec<f64>> {
    if latents.len() < 2 {
        return Err(Error::config("fusion needs at least two latents"));
    }
    let d = latents[0].len();
    if latents.iter().any(|l| l.len() != d) {
        return Err(Error::config("fusion inputs differ in width"));
    }
    let n = latents.len() as f64;
    match op {
        FusionOp::Mean => Ok((0..d)
            .map(|k| latents.iter().map(|l| l[k]).sum::<f64>() / n)
            .collect()),
        FusionOp::Hadamard => Ok((0..d)
            .map(|k| latents.iter().map(|l| l[k]).product())
            .collect()),
        FusionOp::SumLinear | FusionOp::ConcatLinear => {
            let input = fusion_input(latents, op);
            let w = params
                .get(Block::FusionW)
                .ok_or_else(|| Error::config(format!("{op} fusion needs fusion parameters")))?;
            let b = params.at(Block::FusionB);
            affine(&input, w, b.data())
        }
    }
}

pub(crate) fn fusion_input(latents: &[&[f64]], op: FusionOp) -> Vec<f64> {
    match op {
        FusionOp::ConcatLinear => latents.concat(),
        _ => {
            let d = latents[0].len();
            (0..d).map(|k| latents.iter().map(|l| l[k]).sum()).collect()
        }
    }
}

/// Per-sample forward state of every owned encoder.
pub(crate) struct Forward {
    pub tapes: Vec<EncoderTape>,
}

/// An agent's trainable model.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentModel {
    pub strategy: Strategy,
    /// Owned modalities, ascending.
    pub modalities: Vec<usize>,
    pub config: ModelConfig,
    pub params: ParamSet,
}

fn xavier<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DenseMatrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    DenseMatrix::from_vec(rows, cols, data).expect("finite init")
}

impl AgentModel {
    /// Allocates the blocks `strategy` needs for `modalities`, all zero.
    pub fn zeros(strategy: Strategy, modalities: &[usize], config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut mods = modalities.to_vec();
        mods.sort_unstable();
        mods.dedup();
        if mods.is_empty() {
            return Err(Error::config("an agent needs at least one modality"));
        }
        if let Some(&m) = mods.iter().find(|&&m| m >= config.input_dims.len()) {
            return Err(Error::config(format!("modality {m} not in the dataset")));
        }
        let c = config.n_classes;
        let h = config.hidden;
        let s = config.split;
        let latent = s.total();
        let mut p = ParamSet::new();
        let mut linear = |w: Block, b: Block, out: usize, inp: usize| {
            p.insert(w, DenseMatrix::zeros(out, inp));
            p.insert(b, DenseMatrix::zeros(out, 1));
        };
        for &m in &mods {
            linear(Block::EncoderW1(m), Block::EncoderB1(m), h, config.input_dims[m]);
            linear(Block::EncoderW2(m), Block::EncoderB2(m), latent, h);
        }
        let multimodal = mods.len() >= 2;
        match strategy {
            Strategy::Parse => {
                for &m in &mods {
                    linear(Block::UniqueW(m), Block::UniqueB(m), c, s.unique);
                }
                linear(Block::RedundantW, Block::RedundantB, c, s.redundant);
                if multimodal {
                    linear(Block::SynergyW, Block::SynergyB, c, s.synergistic);
                    match config.fusion {
                        FusionOp::ConcatLinear => linear(
                            Block::FusionW,
                            Block::FusionB,
                            s.synergistic,
                            s.synergistic * mods.len(),
                        ),
                        FusionOp::SumLinear => {
                            linear(Block::FusionW, Block::FusionB, s.synergistic, s.synergistic)
                        }
                        FusionOp::Mean | FusionOp::Hadamard => {}
                    }
                }
            }
            Strategy::DsgdModality => {
                for &m in &mods {
                    linear(
                        Block::ModalityClassifierW(m),
                        Block::ModalityClassifierB(m),
                        c,
                        latent,
                    );
                }
            }
            Strategy::DsgdTask | Strategy::DsgdHybrid => {
                linear(Block::ClassifierW, Block::ClassifierB, c, latent);
            }
        }
        Ok(AgentModel {
            strategy,
            modalities: mods,
            config: config.clone(),
            params: p,
        })
    }

    /// Glorot-uniform weights and zero biases, drawn in block order.
    pub fn init<R: Rng>(
        strategy: Strategy,
        modalities: &[usize],
        config: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let mut model = Self::zeros(strategy, modalities, config)?;
        for (b, m) in model.params.blocks_mut() {
            if !b.is_bias() {
                *m = xavier(rng, m.rows(), m.cols());
            }
        }
        Ok(model)
    }

    /// Like [`AgentModel::init`], but every block draws from its own stream
    /// keyed by the block name, so agents holding the same block start from
    /// identical values.
    pub fn init_shared(
        strategy: Strategy,
        modalities: &[usize],
        config: &ModelConfig,
        seed: u64,
    ) -> Result<Self> {
        let mut model = Self::zeros(strategy, modalities, config)?;
        for (b, m) in model.params.blocks_mut() {
            if !b.is_bias() {
                let key = b
                    .to_string()
                    .bytes()
                    .fold(0u64, |h, c| h.wrapping_mul(131).wrapping_add(u64::from(c)));
                let mut rng = crate::seed::rng(seed, crate::seed::Stream::Init, &[key]);
                *m = xavier(&mut rng, m.rows(), m.cols());
            }
        }
        Ok(model)
    }

    pub fn is_multimodal(&self) -> bool {
        self.modalities.len() >= 2
    }

    pub fn has_synergy_head(&self) -> bool {
        self.params.contains(Block::SynergyW)
    }

    pub fn encoder(&self, m: usize) -> Result<FissionEncoder<'_>> {
        FissionEncoder::from_params(&self.params, m, self.config.split)
    }

    pub(crate) fn forward(&self, sample: &Sample) -> Result<Forward> {
        let mut tapes = Vec::with_capacity(self.modalities.len());
        for &m in &self.modalities {
            let x = sample
                .features
                .get(m)
                .filter(|x| !x.is_empty())
                .ok_or_else(|| Error::config(format!("sample lacks modality {m}")))?;
            tapes.push(self.encoder(m)?.forward(x)?);
        }
        Ok(Forward { tapes })
    }

    /// `f^u_m(z_u) + f^r(z_r)` for the modality at position `k`.
    pub(crate) fn modality_logits(&self, k: usize, out: &[f64]) -> Vec<f64> {
        let m = self.modalities[k];
        let s = self.config.split;
        let mut logits = affine(
            &out[s.unique_range()],
            self.params.at(Block::UniqueW(m)),
            self.params.at(Block::UniqueB(m)).data(),
        )
        .expect("unique head shape");
        let r = affine(
            &out[s.redundant_range()],
            self.params.at(Block::RedundantW),
            self.params.at(Block::RedundantB).data(),
        )
        .expect("redundant head shape");
        for (l, v) in logits.iter_mut().zip(r) {
            *l += v;
        }
        logits
    }

    pub(crate) fn synergy_slices<'f>(&self, fwd: &'f Forward) -> Vec<&'f [f64]> {
        let range = self.config.split.synergistic_range();
        fwd.tapes.iter().map(|t| &t.out[range.clone()]).collect()
    }

    pub(crate) fn logits_from(&self, fwd: &Forward) -> Result<Vec<f64>> {
        let p = &self.params;
        match self.strategy {
            Strategy::Parse => {
                let mut logits = self.modality_logits(0, &fwd.tapes[0].out);
                for (k, t) in fwd.tapes.iter().enumerate().skip(1) {
                    for (l, v) in logits.iter_mut().zip(self.modality_logits(k, &t.out)) {
                        *l += v;
                    }
                }
                if self.is_multimodal() {
                    let fused = fuse(&self.synergy_slices(fwd), self.config.fusion, p)?;
                    let syn = affine(&fused, p.at(Block::SynergyW), p.at(Block::SynergyB).data())?;
                    for (l, v) in logits.iter_mut().zip(syn) {
                        *l += v;
                    }
                }
                Ok(logits)
            }
            Strategy::DsgdModality => {
                let n = fwd.tapes.len() as f64;
                let mut logits = vec![0.0; self.config.n_classes];
                for (&m, t) in self.modalities.iter().zip(&fwd.tapes) {
                    let l = affine(
                        &t.out,
                        p.at(Block::ModalityClassifierW(m)),
                        p.at(Block::ModalityClassifierB(m)).data(),
                    )?;
                    for (acc, v) in logits.iter_mut().zip(l) {
                        *acc += v;
                    }
                }
                if n > 1.0 {
                    logits.iter_mut().for_each(|v| *v /= n);
                }
                Ok(logits)
            }
            Strategy::DsgdTask | Strategy::DsgdHybrid => {
                let fused = mean_latent(fwd);
                affine(&fused, p.at(Block::ClassifierW), p.at(Block::ClassifierB).data())
            }
        }
    }

    /// Class scores for one sample. Pure in (parameters, input).
    pub fn predict(&self, sample: &Sample) -> Result<Vec<f64>> {
        let fwd = self.forward(sample)?;
        self.logits_from(&fwd)
    }

    pub fn predict_class(&self, sample: &Sample) -> Result<usize> {
        Ok(argmax(&self.predict(sample)?))
    }
}

pub(crate) fn mean_latent(fwd: &Forward) -> Vec<f64> {
    let n = fwd.tapes.len() as f64;
    let width = fwd.tapes[0].out.len();
    if fwd.tapes.len() == 1 {
        return fwd.tapes[0].out.clone();
    }
    (0..width)
        .map(|k| fwd.tapes.iter().map(|t| t.out[k]).sum::<f64>() / n)
        .collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}
