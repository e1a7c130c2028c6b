//! Experiment orchestration.
//!
//! A round is: one seeded-shuffled local epoch per agent (in parallel), then
//! parameter mixing over every exchange group in a fixed order, then the
//! diagnostics and, when scheduled, evaluation. The post-epoch parameters
//! are what gets mixed, so with a single full-batch step per epoch a round
//! is exactly `θ_i ← Σ_k W_ik (θ_k − η ∇L_k)`.
//!
//! Exchange groups per strategy:
//!
//! | strategy        | groups                         | bundle                                   |
//! |-----------------|--------------------------------|------------------------------------------|
//! | `parse`         | one per modality               | encoder m, unique head m, redundant head |
//! |                 | one per multimodal set         | synergistic head (+ learned fusion)      |
//! | `dsgd_modality` | one per modality               | encoder m, classifier m                  |
//! | `dsgd_hybrid`   | one per modality               | encoder m                                |
//! | `dsgd_task`     | one per modality set           | every block                              |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{DatasetSource, RunConfig};
use crate::error::{Error, Result};
use crate::model::{AgentModel, Block, ModelConfig, ParamSet, Strategy};
use crate::network::{
    build_mixing_matrix, build_signature_subgraphs, build_subgraphs, mix, resample_gossip,
    signature_label, MixingMatrix, Subgraph, SubgraphKind, TopologyKind,
};
use crate::numerics::{cosine_similarity, norm, DenseMatrix, COSINE_EPS};
use crate::objectives::{local_objective, synergy_rows_max_abs, LossBreakdown, NceOptions};
use crate::seed::{self, Stream};
use crate::synthdata::{
    apply_partition, dirichlet_partition, generate_dataset, load_dataset, train_test_split,
    Dataset, Sample,
};

/// Optimisation and schedule knobs of a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSettings {
    pub lr: f64,
    pub batch_size: usize,
    pub beta: f64,
    pub nce: NceOptions,
    pub topology: TopologyKind,
    pub seed: u64,
    pub eval_every: usize,
    pub grad_probe_rounds: Vec<usize>,
}

/// What an agent is given before training.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSpec {
    pub modalities: Vec<usize>,
    /// Indices into the dataset.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub id: usize,
    pub model: AgentModel,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Agent {
    pub fn signature(&self) -> String {
        signature_label(&self.model.modalities)
    }
}

/// A subgraph together with the parameter blocks it averages.
#[derive(Debug, Clone, PartialEq)]
pub struct ExchangeGroup {
    pub subgraph: Subgraph,
    pub bundle: Vec<Block>,
    /// Fixed weights for static topologies; gossip groups rebuild them
    /// every round.
    pub mixing: MixingMatrix,
}

/// Mean gradient cosine similarity between agents sharing a bundle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradSimilarity {
    /// Pairs with the same modality set.
    pub intra: Option<f64>,
    /// Pairs with different modality sets.
    pub inter: Option<f64>,
    pub n_intra: usize,
    pub n_inter: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundMetrics {
    /// 1-based.
    pub round: usize,
    /// Mean test accuracy per modality-set label plus `"all"`; empty when
    /// the round was not evaluated.
    pub accuracy: BTreeMap<String, f64>,
    /// Epoch-mean loss of every agent, by agent id.
    pub losses: Vec<LossBreakdown>,
    /// Consensus distance of every group with at least two members.
    pub consensus: Vec<(String, f64)>,
    pub grad_similarity: Option<GradSimilarity>,
    /// Largest local gradient entry on the `z_s` rows of any unimodal PARSE
    /// agent's encoders this round.
    pub synergy_row_grad: f64,
}

/// Agents, their exchange groups and the shared dataset.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub dataset: Dataset,
    pub agents: Vec<Agent>,
    pub groups: Vec<ExchangeGroup>,
    pub settings: TrainSettings,
}

struct EpochResult {
    loss: LossBreakdown,
    synergy_row_grad: f64,
}

fn bundle_for(strategy: Strategy, model: &ModelConfig, kind: &SubgraphKind, any_member: &AgentModel) -> Vec<Block> {
    match (strategy, kind) {
        (Strategy::Parse, SubgraphKind::Modality(m)) => {
            let mut b = Block::encoder(*m).to_vec();
            b.extend([Block::UniqueW(*m), Block::UniqueB(*m), Block::RedundantW, Block::RedundantB]);
            b
        }
        (Strategy::Parse, SubgraphKind::Signature(_)) => {
            let mut b = vec![Block::SynergyW, Block::SynergyB];
            if model.fusion.is_learned() {
                b.extend([Block::FusionW, Block::FusionB]);
            }
            b
        }
        (Strategy::DsgdModality, SubgraphKind::Modality(m)) => {
            let mut b = Block::encoder(*m).to_vec();
            b.extend([Block::ModalityClassifierW(*m), Block::ModalityClassifierB(*m)]);
            b
        }
        (Strategy::DsgdHybrid, SubgraphKind::Modality(m)) => Block::encoder(*m).to_vec(),
        (Strategy::DsgdTask, SubgraphKind::Signature(_)) => any_member.params.block_ids(),
        _ => Vec::new(),
    }
}

fn build_groups(
    agents: &[Agent],
    model: &ModelConfig,
    strategy: Strategy,
    topology: TopologyKind,
    seed: u64,
) -> Result<Vec<ExchangeGroup>> {
    let mods: Vec<Vec<usize>> = agents.iter().map(|a| a.model.modalities.clone()).collect();
    let subgraphs = match strategy {
        Strategy::Parse => {
            let (mut m, h) = build_subgraphs(&mods, topology, seed);
            m.extend(h);
            m
        }
        Strategy::DsgdModality | Strategy::DsgdHybrid => build_subgraphs(&mods, topology, seed).0,
        Strategy::DsgdTask => build_signature_subgraphs(&mods, topology, seed, false),
    };
    subgraphs
        .into_iter()
        .map(|subgraph| {
            let first = &agents[subgraph.members[0]].model;
            let bundle = bundle_for(strategy, model, &subgraph.kind, first);
            let mixing = build_mixing_matrix(&subgraph)?;
            Ok(ExchangeGroup {
                subgraph,
                bundle,
                mixing,
            })
        })
        .collect()
}

fn mean_breakdown(parts: &[LossBreakdown]) -> LossBreakdown {
    let n = parts.len().max(1) as f64;
    let mut out = LossBreakdown::default();
    for p in parts {
        out.total += p.total / n;
        out.cls += p.cls / n;
        out.nce += p.nce / n;
        for (&m, &v) in &p.per_modality_cls {
            *out.per_modality_cls.entry(m).or_insert(0.0) += v / n;
        }
    }
    out
}

/// Pairwise cosine similarities; pairs involving a (near-)zero vector are
/// `None`.
pub fn grad_cosine_similarity(grads: &[Vec<f64>]) -> Vec<Vec<Option<f64>>> {
    let n = grads.len();
    let mut out = vec![vec![None; n]; n];
    for i in 0..n {
        for j in 0..n {
            if norm(&grads[i]) > COSINE_EPS && norm(&grads[j]) > COSINE_EPS {
                out[i][j] = cosine_similarity(&grads[i], &grads[j]).ok();
            }
        }
    }
    out
}

/// Largest L2 distance from a member bundle to the members' mean.
pub fn consensus_distance(bundles: &[Vec<f64>]) -> f64 {
    let Some(first) = bundles.first() else {
        return 0.0;
    };
    let n = bundles.len() as f64;
    let mut mean = vec![0.0; first.len()];
    for b in bundles {
        for (m, v) in mean.iter_mut().zip(b) {
            *m += v / n;
        }
    }
    bundles
        .iter()
        .map(|b| {
            b.iter()
                .zip(&mean)
                .map(|(v, m)| (v - m) * (v - m))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max)
}

impl Simulation {
    /// Initialises one model per agent (seeded by agent id) and builds the
    /// exchange groups. Agent ids are positions in `specs`.
    pub fn new(
        dataset: Dataset,
        model_config: ModelConfig,
        strategy: Strategy,
        specs: Vec<AgentSpec>,
        settings: TrainSettings,
    ) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::config("a simulation needs at least one agent"));
        }
        if settings.batch_size == 0 || !(settings.lr >= 0.0 && settings.lr.is_finite()) {
            return Err(Error::config("batch_size must be >= 1 and lr finite and >= 0"));
        }
        let agents = specs
            .into_iter()
            .enumerate()
            .map(|(id, spec)| {
                let model = AgentModel::init_shared(strategy, &spec.modalities, &model_config, settings.seed)?;
                if let Some(&bad) = spec.train.iter().chain(&spec.test).find(|&&i| i >= dataset.len()) {
                    return Err(Error::config(format!("agent {id}: sample index {bad} out of range")));
                }
                Ok(Agent {
                    id,
                    model,
                    train: spec.train,
                    test: spec.test,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let groups = build_groups(&agents, &model_config, strategy, settings.topology, settings.seed)?;
        Ok(Simulation {
            dataset,
            agents,
            groups,
            settings,
        })
    }

    /// Builds the dataset, the 80/20 split, the Dirichlet partition and the
    /// agents described by `cfg`.
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let dataset = match &cfg.dataset {
            DatasetSource::Synthetic => generate_dataset(&cfg.synthetic, cfg.seed)?,
            DatasetSource::Csv(path) => load_dataset(path)?,
        };
        let agent_mods = cfg.agent_modalities(dataset.n_modalities())?;
        let (train, test) = train_test_split(dataset.len(), cfg.seed);
        let part = dirichlet_partition(
            &dataset,
            &train,
            agent_mods.len(),
            cfg.alpha,
            2 * cfg.batch_size,
            cfg.seed,
        )?;
        let test_shards = apply_partition(&dataset, &test, &part.proportions, cfg.seed);
        let specs = agent_mods
            .into_iter()
            .zip(part.agent_shards)
            .zip(test_shards)
            .map(|((modalities, train), test)| AgentSpec {
                modalities,
                train,
                test,
            })
            .collect();
        let model_config = ModelConfig {
            input_dims: dataset.modality_dims.clone(),
            hidden: cfg.hidden,
            split: cfg.split,
            n_classes: dataset.n_classes,
            fusion: cfg.fusion,
        };
        let settings = TrainSettings {
            lr: cfg.lr,
            batch_size: cfg.batch_size,
            beta: cfg.beta,
            nce: NceOptions {
                tau: cfg.tau,
                include_positive: cfg.nce_include_positive,
            },
            topology: cfg.topology,
            seed: cfg.seed,
            eval_every: cfg.eval_every,
            grad_probe_rounds: cfg.grad_probe_rounds.clone(),
        };
        Simulation::new(dataset, model_config, cfg.strategy, specs, settings)
    }

    fn samples(&self, idx: &[usize]) -> Vec<&Sample> {
        idx.iter().map(|&i| &self.dataset.samples[i]).collect()
    }

    fn local_epoch(dataset: &Dataset, settings: &TrainSettings, agent: &mut Agent, round: usize) -> Result<EpochResult> {
        let mut order = agent.train.clone();
        order.shuffle(&mut seed::rng(
            settings.seed,
            Stream::Shuffle,
            &[agent.id as u64, round as u64],
        ));
        let audit = agent.model.strategy.is_fission() && !agent.model.is_multimodal();
        let mut losses = Vec::new();
        let mut synergy_row_grad: f64 = 0.0;
        for (b, chunk) in order.chunks(settings.batch_size).enumerate() {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &dataset.samples[i]).collect();
            let (loss, grads) = local_objective(&agent.model, &batch, settings.beta, settings.nce)?;
            if !loss.total.is_finite() || !grads.is_finite() {
                return Err(Error::NonFinite {
                    agent: agent.id,
                    round,
                    batch: b,
                });
            }
            if audit {
                for &m in &agent.model.modalities {
                    synergy_row_grad = synergy_row_grad.max(synergy_rows_max_abs(&agent.model, &grads, m));
                }
            }
            agent.model.params.axpy(-settings.lr, &grads);
            losses.push(loss);
        }
        if !agent.model.params.is_finite() {
            return Err(Error::NonFinite {
                agent: agent.id,
                round,
                batch: losses.len().saturating_sub(1),
            });
        }
        Ok(EpochResult {
            loss: mean_breakdown(&losses),
            synergy_row_grad,
        })
    }

    /// Runs every agent's local epoch for `round` (1-based).
    pub fn local_step(&mut self, round: usize) -> Result<(Vec<LossBreakdown>, f64)> {
        let dataset = &self.dataset;
        let settings = &self.settings;
        let results: Vec<Result<EpochResult>> = self
            .agents
            .par_iter_mut()
            .map(|agent| Self::local_epoch(dataset, settings, agent, round))
            .collect();
        let mut losses = Vec::with_capacity(results.len());
        let mut audit: f64 = 0.0;
        for r in results {
            let r = r?;
            audit = audit.max(r.synergy_row_grad);
            losses.push(r.loss);
        }
        Ok((losses, audit))
    }

    fn bundles(&self, group: &ExchangeGroup) -> Vec<Vec<f64>> {
        group
            .subgraph
            .members
            .iter()
            .map(|&a| self.agents[a].model.params.flatten(&group.bundle))
            .collect()
    }

    /// Averages every group's bundle in order: modality groups by ascending
    /// modality, then modality-set groups. Gossip groups draw fresh edges.
    pub fn mix_step(&mut self, round: usize) -> Result<()> {
        for g in 0..self.groups.len() {
            if self.groups[g].subgraph.topology == TopologyKind::RandomGossip {
                let group = &mut self.groups[g];
                group.subgraph.edges = resample_gossip(&group.subgraph, round, self.settings.seed);
                group.mixing = build_mixing_matrix(&group.subgraph)?;
            }
            let group = &self.groups[g];
            if group.subgraph.len() < 2 || group.bundle.is_empty() {
                continue;
            }
            let mixed = mix(&group.mixing, &self.bundles(group))?;
            let bundle = group.bundle.clone();
            let members = group.subgraph.members.clone();
            for (a, values) in members.into_iter().zip(mixed) {
                self.agents[a].model.params.unflatten(&bundle, &values)?;
            }
        }
        Ok(())
    }

    /// Consensus distance of every group with two or more members.
    pub fn consensus(&self) -> Vec<(String, f64)> {
        self.groups
            .iter()
            .filter(|g| g.subgraph.len() >= 2 && !g.bundle.is_empty())
            .map(|g| (g.subgraph.kind.to_string(), consensus_distance(&self.bundles(g))))
            .collect()
    }

    /// Per-agent accuracy on its own test shard, averaged per modality set
    /// and over all agents (`"all"`). Agents without test samples are left
    /// out.
    pub fn evaluate(&self) -> Result<BTreeMap<String, f64>> {
        let per_agent: Vec<Result<Option<(String, f64)>>> = self
            .agents
            .par_iter()
            .map(|agent| {
                if agent.test.is_empty() {
                    return Ok(None);
                }
                let mut correct = 0usize;
                for s in self.samples(&agent.test) {
                    if agent.model.predict_class(s)? == s.label {
                        correct += 1;
                    }
                }
                Ok(Some((agent.signature(), correct as f64 / agent.test.len() as f64)))
            })
            .collect();
        let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for (agent, r) in self.agents.iter().zip(per_agent) {
            match r? {
                Some((sig, acc)) => {
                    groups.entry(sig).or_default().push(acc);
                    groups.entry("all".into()).or_default().push(acc);
                }
                None => warn!("agent {} has an empty test shard; excluded from evaluation", agent.id),
            }
        }
        Ok(groups
            .into_iter()
            .map(|(k, v)| (k, v.iter().sum::<f64>() / v.len() as f64))
            .collect())
    }

    /// Gradient of each agent's local objective over its whole training
    /// shard.
    pub fn full_gradients(&self) -> Result<Vec<ParamSet>> {
        self.agents
            .par_iter()
            .map(|agent| {
                let batch = self.samples(&agent.train);
                local_objective(&agent.model, &batch, self.settings.beta, self.settings.nce).map(|(_, g)| g)
            })
            .collect()
    }

    /// Cosine similarity of bundle gradients for every pair of agents in the
    /// same per-modality group, split by whether the pair shares a modality
    /// set. Pairs with a zero gradient are skipped.
    pub fn grad_similarity(&self) -> Result<GradSimilarity> {
        let grads = self.full_gradients()?;
        let (mut intra, mut inter) = (Vec::new(), Vec::new());
        for group in &self.groups {
            if group.bundle.is_empty() || group.subgraph.len() < 2 {
                continue;
            }
            let members = &group.subgraph.members;
            let flat: Vec<Vec<f64>> = members.iter().map(|&a| grads[a].flatten(&group.bundle)).collect();
            let sims = grad_cosine_similarity(&flat);
            for i in 0..members.len() {
                for j in i + 1..members.len() {
                    let (a, b) = (&self.agents[members[i]], &self.agents[members[j]]);
                    match sims[i][j] {
                        Some(s) if a.model.modalities == b.model.modalities => intra.push(s),
                        Some(s) => inter.push(s),
                        None => warn!(
                            "zero bundle gradient for agents {} / {} in {}; pair excluded",
                            a.id, b.id, group.subgraph.kind
                        ),
                    }
                }
            }
        }
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        Ok(GradSimilarity {
            intra: mean(&intra),
            inter: mean(&inter),
            n_intra: intra.len(),
            n_inter: inter.len(),
        })
    }

    /// One communication round (1-based `round`).
    pub fn run_round(&mut self, round: usize, evaluate: bool) -> Result<RoundMetrics> {
        let (losses, synergy_row_grad) = self.local_step(round)?;
        self.mix_step(round)?;
        let grad_similarity = if self.settings.grad_probe_rounds.contains(&round) {
            Some(self.grad_similarity()?)
        } else {
            None
        };
        let accuracy = if evaluate { self.evaluate()? } else { BTreeMap::new() };
        Ok(RoundMetrics {
            round,
            accuracy,
            losses,
            consensus: self.consensus(),
            grad_similarity,
            synergy_row_grad,
        })
    }

    /// Runs rounds `1..=rounds`, evaluating every `eval_every` rounds and
    /// after the last one.
    pub fn run(&mut self, rounds: usize) -> Result<Vec<RoundMetrics>> {
        let every = self.settings.eval_every.max(1);
        (1..=rounds)
            .map(|r| {
                let m = self.run_round(r, r % every == 0 || r == rounds)?;
                if let Some(all) = m.accuracy.get("all") {
                    info!("round {r}: mean accuracy {all:.4}");
                }
                Ok(m)
            })
            .collect()
    }

    pub fn agent_signatures(&self) -> Vec<String> {
        self.agents.iter().map(Agent::signature).collect()
    }
}

/// Writes metrics as `round,group,metric,value` rows. Loss rows are means
/// over the agents of each modality set and over all agents.
pub fn write_metrics_csv<W: Write>(out: W, metrics: &[RoundMetrics], signatures: &[String]) -> std::io::Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "round,group,metric,value")?;
    for m in metrics {
        let r = m.round;
        for (group, acc) in &m.accuracy {
            writeln!(w, "{r},{group},accuracy,{acc}")?;
        }
        let mut by_group: BTreeMap<&str, Vec<&LossBreakdown>> = BTreeMap::new();
        for (sig, loss) in signatures.iter().zip(&m.losses) {
            by_group.entry(sig.as_str()).or_default().push(loss);
            by_group.entry("all").or_default().push(loss);
        }
        for (group, ls) in by_group {
            let n = ls.len() as f64;
            let total = ls.iter().map(|l| l.total).sum::<f64>() / n;
            let nce = ls.iter().map(|l| l.nce).sum::<f64>() / n;
            writeln!(w, "{r},{group},loss,{total}")?;
            writeln!(w, "{r},{group},nce,{nce}")?;
        }
        for (group, d) in &m.consensus {
            writeln!(w, "{r},{group},consensus_distance,{d}")?;
        }
        if let Some(g) = &m.grad_similarity {
            if let Some(v) = g.intra {
                writeln!(w, "{r},all,grad_cos_intra,{v}")?;
            }
            if let Some(v) = g.inter {
                writeln!(w, "{r},all,grad_cos_inter,{v}")?;
            }
        }
        writeln!(w, "{r},all,synergy_row_grad,{}", m.synergy_row_grad)?;
    }
    w.flush()
}

/// Text checkpoint: for every agent and block, a header line
/// `agent_id/block_name rows cols` followed by `rows` lines of values.
pub fn write_checkpoint<W: Write>(out: W, agents: &[Agent]) -> std::io::Result<()> {
    let mut w = BufWriter::new(out);
    for agent in agents {
        for (block, m) in agent.model.params.blocks() {
            writeln!(w, "{}/{} {} {}", agent.id, block, m.rows(), m.cols())?;
            for r in 0..m.rows() {
                let mut line = String::new();
                for (c, v) in m.row(r).iter().enumerate() {
                    if c > 0 {
                        line.push(' ');
                    }
                    let _ = write!(line, "{v:.16e}");
                }
                writeln!(w, "{line}")?;
            }
        }
    }
    w.flush()
}

/// Reads a checkpoint into one [`ParamSet`] per agent id.
pub fn read_checkpoint(path: &Path) -> Result<BTreeMap<usize, ParamSet>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let mut out: BTreeMap<usize, ParamSet> = BTreeMap::new();
    let mut next = |what: &str| -> Result<Option<(usize, String)>> {
        match lines.next() {
            None => Ok(None),
            Some((i, l)) => l
                .map(|l| Some((i + 1, l)))
                .map_err(|e| Error::parse(path, i + 1, format!("reading {what}: {e}"))),
        }
    };
    while let Some((line, header)) = next("header")? {
        if header.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| Error::parse(path, line, msg);
        let mut parts = header.split_whitespace();
        let name = parts.next().unwrap_or_default();
        let (agent, block) = name
            .split_once('/')
            .ok_or_else(|| bad(format!("expected `agent/block rows cols`, got {header:?}")))?;
        let agent: usize = agent.parse().map_err(|_| bad(format!("bad agent id {agent:?}")))?;
        let block: Block = block.parse().map_err(|e: Error| bad(e.to_string()))?;
        let dims: Vec<usize> = parts
            .map(|p| p.parse().map_err(|_| bad(format!("bad dimension {p:?}"))))
            .collect::<Result<_>>()?;
        let [rows, cols] = dims[..] else {
            return Err(bad("expected two dimensions".into()));
        };
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (l, text) = next("row")?.ok_or_else(|| bad("checkpoint ends inside a block".into()))?;
            let row: Vec<f64> = text
                .split_whitespace()
                .map(|v| v.parse().map_err(|_| Error::parse(path, l, format!("bad value {v:?}"))))
                .collect::<Result<_>>()?;
            if row.len() != cols {
                return Err(Error::parse(path, l, format!("expected {cols} values, got {}", row.len())));
            }
            data.extend(row);
        }
        let m = DenseMatrix::from_vec(rows, cols, data).map_err(|e| bad(e.to_string()))?;
        out.entry(agent).or_default().insert(block, m);
    }
    Ok(out)
}

/// Result of a full experiment.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub metrics: Vec<RoundMetrics>,
    pub simulation: Simulation,
}

impl ExperimentOutput {
    /// Accuracy map of the last evaluated round.
    pub fn final_accuracy(&self) -> BTreeMap<String, f64> {
        self.metrics
            .iter()
            .rev()
            .find(|m| !m.accuracy.is_empty())
            .map(|m| m.accuracy.clone())
            .unwrap_or_default()
    }

    pub fn metrics_csv(&self) -> String {
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &self.metrics, &self.simulation.agent_signatures())
            .expect("writing to memory");
        String::from_utf8(buf).expect("metrics are ASCII")
    }
}

/// Runs `cfg` on a pool of `threads` workers (all cores when `None`).
pub fn run_experiment(cfg: &RunConfig, threads: Option<usize>) -> Result<ExperimentOutput> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| {
        let mut simulation = Simulation::from_config(cfg)?;
        let metrics = simulation.run(cfg.rounds)?;
        Ok(ExperimentOutput { metrics, simulation })
    })
}

/// Files written by [`run_to_dir`].
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
pub const CONFIG_FILE: &str = "config.txt";

/// Runs `cfg` and writes the metrics CSV, the final checkpoint and the
/// resolved config into `dir`.
pub fn run_to_dir(cfg: &RunConfig, dir: &Path, threads: Option<usize>) -> Result<ExperimentOutput> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let out = run_experiment(cfg, threads)?;
    let write = |name: &str, f: &dyn Fn(std::fs::File) -> std::io::Result<()>| -> Result<PathBuf> {
        let path = dir.join(name);
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f(file).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    };
    write(METRICS_FILE, &|f| {
        write_metrics_csv(f, &out.metrics, &out.simulation.agent_signatures())
    })?;
    write(CHECKPOINT_FILE, &|f| write_checkpoint(f, &out.simulation.agents))?;
    write(CONFIG_FILE, &|mut f| f.write_all(cfg.to_config_string().as_bytes()))?;
    Ok(out)
}
