use parse_dfl::config::DatasetSource;
use parse_dfl::model::{Block, ParamSet};
use parse_dfl::network::{build_mixing_matrix, build_subgraphs, resample_gossip};
use parse_dfl::objectives::local_objective;
use parse_dfl::trainer::{run_experiment, AgentSpec, TrainSettings};
use parse_dfl::{
    Dataset, FusionOp, ModelConfig, NceOptions, RunConfig, Sample, Simulation, SplitDims, Strategy,
    SyntheticSpec, TopologyKind,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config(strategy: Strategy, agents: Vec<usize>) -> RunConfig {
    let mut cfg = RunConfig::with_agents(DatasetSource::Synthetic, agents);
    cfg.synthetic = SyntheticSpec {
        n_samples: 800,
        dim_per_modality: 6,
        ..SyntheticSpec::default()
    };
    cfg.strategy = strategy;
    cfg.hidden = 8;
    cfg.split = SplitDims::equal(4);
    cfg.batch_size = 8;
    cfg.eval_every = 1;
    cfg
}

fn perturb(sim: &mut Simulation, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for agent in &mut sim.agents {
        for (_, m) in agent.model.params.blocks_mut() {
            for v in m.data_mut() {
                *v += rng.random_range(-1.0..1.0);
            }
        }
    }
}

fn snapshot(sim: &Simulation) -> Vec<ParamSet> {
    sim.agents.iter().map(|a| a.model.params.clone()).collect()
}

/// Applies every group's weights, in order, to copies of `params`.
fn reference_mix(sim: &Simulation, mut params: Vec<ParamSet>, round: usize) -> Vec<ParamSet> {
    for group in &sim.groups {
        let mut sub = group.subgraph.clone();
        if sub.topology == TopologyKind::RandomGossip {
            sub.edges = resample_gossip(&sub, round, sim.settings.seed);
        }
        let w = build_mixing_matrix(&sub).unwrap();
        let flat: Vec<Vec<f64>> = sub.members.iter().map(|&a| params[a].flatten(&group.bundle)).collect();
        for (i, &a) in sub.members.iter().enumerate() {
            let mut out = vec![0.0; flat[0].len()];
            for (k, theta) in flat.iter().enumerate() {
                for (o, t) in out.iter_mut().zip(theta) {
                    *o += w.get(i, k) * t;
                }
            }
            params[a].unflatten(&group.bundle, &out).unwrap();
        }
    }
    params
}

fn max_diff(a: &[ParamSet], b: &[ParamSet]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            let blocks = x.block_ids();
            x.flatten(&blocks)
                .into_iter()
                .zip(y.flatten(&blocks))
                .map(|(p, q)| (p - q).abs())
                .collect::<Vec<_>>()
        })
        .fold(0.0, f64::max)
}

#[test]
fn zero_learning_rate_round_is_pure_mixing() {
    for (strategy, topology) in [
        (Strategy::Parse, TopologyKind::Ring),
        (Strategy::DsgdModality, TopologyKind::ChordalRing),
        (Strategy::DsgdHybrid, TopologyKind::RandomGossip),
        (Strategy::DsgdTask, TopologyKind::Ring),
    ] {
        let mut cfg = small_config(strategy, vec![2, 3, 3]);
        cfg.lr = 0.0;
        cfg.topology = topology;
        let mut sim = Simulation::from_config(&cfg).unwrap();
        perturb(&mut sim, 1);
        for round in 1..=3 {
            let expected = reference_mix(&sim, snapshot(&sim), round);
            sim.run_round(round, false).unwrap();
            let err = max_diff(&snapshot(&sim), &expected);
            assert!(err < 1e-12, "{strategy} on {topology}: {err}");
        }
    }
}

#[test]
fn full_batch_round_matches_the_update_rule() {
    // Three multimodal agents on a ring: one exchange per bundle with all
    // weights 1/3, so each agent ends at the mean of θ_k − η∇L_k.
    let data = parse_dfl::synthdata::generate_dataset(
        &SyntheticSpec {
            n_samples: 60,
            dim_per_modality: 4,
            ..SyntheticSpec::default()
        },
        3,
    )
    .unwrap();
    let specs = (0..3)
        .map(|a| AgentSpec {
            modalities: vec![0, 1],
            train: (a * 20..a * 20 + 15).collect(),
            test: (a * 20 + 15..a * 20 + 20).collect(),
        })
        .collect();
    let model_config = ModelConfig {
        input_dims: vec![4, 4],
        hidden: 5,
        split: SplitDims::equal(3),
        n_classes: data.n_classes,
        fusion: FusionOp::Hadamard,
    };
    let settings = TrainSettings {
        lr: 0.1,
        batch_size: 64,
        beta: 0.2,
        nce: NceOptions::default(),
        topology: TopologyKind::Ring,
        seed: 5,
        eval_every: 1,
        grad_probe_rounds: vec![],
    };
    let mut sim = Simulation::new(data, model_config, Strategy::Parse, specs, settings).unwrap();
    perturb(&mut sim, 2);
    let stepped: Vec<ParamSet> = sim
        .agents
        .iter()
        .map(|a| {
            let batch: Vec<&Sample> = a.train.iter().map(|&i| &sim.dataset.samples[i]).collect();
            let (_, g) = local_objective(&a.model, &batch, 0.2, NceOptions::default()).unwrap();
            let mut p = a.model.params.clone();
            p.axpy(-0.1, &g);
            p
        })
        .collect();
    let mut expected = stepped[0].clone();
    expected.scale(0.0);
    for p in &stepped {
        expected.axpy(1.0 / 3.0, p);
    }
    sim.run_round(1, false).unwrap();
    let expected = vec![expected; 3];
    assert!(max_diff(&snapshot(&sim), &expected) < 1e-12);
}

#[test]
fn runs_are_deterministic() {
    let mut cfg = small_config(Strategy::Parse, vec![2, 2, 2]);
    cfg.rounds = 3;
    cfg.topology = TopologyKind::RandomGossip;
    cfg.grad_probe_rounds = vec![2];
    let a = run_experiment(&cfg, Some(1)).unwrap();
    let b = run_experiment(&cfg, Some(3)).unwrap();
    assert_eq!(a.metrics_csv(), b.metrics_csv());
    assert_eq!(snapshot(&a.simulation), snapshot(&b.simulation));
}

#[test]
fn mixing_contracts_and_preserves_the_mean() {
    let mut cfg = small_config(Strategy::DsgdModality, vec![4, 4, 4]);
    cfg.lr = 0.0;
    let mut sim = Simulation::from_config(&cfg).unwrap();
    perturb(&mut sim, 3);
    let mean_of = |sim: &Simulation, g: usize| -> Vec<f64> {
        let group = &sim.groups[g];
        let n = group.subgraph.len() as f64;
        let mut mean = vec![0.0; sim.agents[group.subgraph.members[0]].model.params.flatten(&group.bundle).len()];
        for &a in &group.subgraph.members {
            for (m, v) in mean.iter_mut().zip(sim.agents[a].model.params.flatten(&group.bundle)) {
                *m += v / n;
            }
        }
        mean
    };
    let means: Vec<Vec<f64>> = (0..sim.groups.len()).map(|g| mean_of(&sim, g)).collect();
    let mut prev: Vec<f64> = sim.consensus().into_iter().map(|(_, d)| d).collect();
    for round in 1..=100 {
        sim.run_round(round, false).unwrap();
        let now: Vec<f64> = sim.consensus().into_iter().map(|(_, d)| d).collect();
        for (n, p) in now.iter().zip(&prev) {
            assert!(n <= &(p + 1e-12), "consensus grew from {p} to {n}");
        }
        prev = now;
    }
    for (g, before) in means.iter().enumerate() {
        for (a, b) in mean_of(&sim, g).iter().zip(before) {
            assert!((a - b).abs() < 1e-10);
        }
    }
    assert!(prev.iter().all(|&d| d < 1e-6), "{prev:?}");
}

#[test]
fn zero_model_on_balanced_labels_scores_one_half() {
    let samples: Vec<Sample> = (0..40)
        .map(|i| Sample {
            features: vec![vec![i as f64 * 0.1; 3], vec![-(i as f64); 3]],
            label: i % 2,
        })
        .collect();
    let data = Dataset::new(samples, vec![3, 3], 2).unwrap();
    let specs = vec![
        AgentSpec {
            modalities: vec![0],
            train: (0..10).collect(),
            test: (10..20).collect(),
        },
        AgentSpec {
            modalities: vec![0, 1],
            train: (20..30).collect(),
            test: (30..40).collect(),
        },
    ];
    let config = ModelConfig {
        input_dims: vec![3, 3],
        hidden: 4,
        split: SplitDims::equal(2),
        n_classes: 2,
        fusion: FusionOp::Mean,
    };
    let settings = TrainSettings {
        lr: 0.0,
        batch_size: 4,
        beta: 0.2,
        nce: NceOptions::default(),
        topology: TopologyKind::Ring,
        seed: 0,
        eval_every: 1,
        grad_probe_rounds: vec![],
    };
    for strategy in [Strategy::Parse, Strategy::DsgdTask] {
        let mut sim = Simulation::new(data.clone(), config.clone(), strategy, specs.clone(), settings.clone()).unwrap();
        for agent in &mut sim.agents {
            agent.model.params.scale(0.0);
        }
        let acc = sim.evaluate().unwrap();
        assert_eq!(acc["all"], 0.5);
        assert_eq!(acc["m0"], 0.5);
        assert_eq!(acc["m0+m1"], 0.5);
    }
}

#[test]
fn task_groups_never_mix_modality_sets() {
    let sim = Simulation::from_config(&small_config(Strategy::DsgdTask, vec![3, 3, 3])).unwrap();
    assert_eq!(sim.groups.len(), 3);
    for g in &sim.groups {
        let first = &sim.agents[g.subgraph.members[0]].model.modalities;
        assert!(g.subgraph.members.iter().all(|&a| &sim.agents[a].model.modalities == first));
        assert_eq!(g.bundle, sim.agents[g.subgraph.members[0]].model.params.block_ids());
    }
}

#[test]
fn parse_unimodal_agents_never_train_synergy_rows() {
    let mut cfg = small_config(Strategy::Parse, vec![2, 2, 2]);
    cfg.rounds = 2;
    let out = run_experiment(&cfg, Some(1)).unwrap();
    assert!(out.metrics.iter().all(|m| m.synergy_row_grad == 0.0));
    for a in &out.simulation.agents {
        assert_eq!(a.model.has_synergy_head(), a.model.is_multimodal());
        assert!(!a.model.params.contains(Block::ClassifierW));
    }
}

#[test]
fn gossip_degree_and_chordal_ring_degree() {
    let mods: Vec<Vec<usize>> = vec![vec![0]; 30];
    let (gossip, _) = build_subgraphs(&mods, TopologyKind::RandomGossip, 4);
    let mut total = 0.0;
    for round in 1..=50 {
        let edges = resample_gossip(&gossip[0], round, 4);
        total += 2.0 * edges.len() as f64 / 30.0;
    }
    let mean = total / 50.0;
    assert!((2.0..=4.0).contains(&mean), "{mean}");
    let (chordal, _) = build_subgraphs(&mods, TopologyKind::ChordalRing, 4);
    assert!(chordal[0].degrees().iter().all(|&d| d == 3));
}
