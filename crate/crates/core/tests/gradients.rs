//! Analytic gradients against central finite differences.

use parse_dfl::model::{AgentModel, Block, FusionOp, ModelConfig, ParamSet, SplitDims, Strategy};
use parse_dfl::numerics::{
    affine, affine_backward, cosine_similarity, cosine_similarity_backward, relu, relu_backward,
    softmax_cross_entropy, DenseMatrix,
};
use parse_dfl::objectives::{cls_loss, ensemble_loss, nce_loss, total_loss, NceOptions};
use parse_dfl::Sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const TRIALS: u64 = 20;

fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt()
        + numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    if scale < 1e-12 {
        diff
    } else {
        2.0 * diff / scale
    }
}

fn fd<F: FnMut(&[f64]) -> f64>(x: &[f64], mut f: F) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + H;
            let up = f(&x);
            x[i] = orig - H;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * H)
        })
        .collect()
}

fn vec_of(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

#[test]
fn affine_gradients() {
    for t in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(t);
        let (out, inp) = (rng.random_range(1..6), rng.random_range(1..6));
        let x = vec_of(&mut rng, inp);
        let w = DenseMatrix::from_vec(out, inp, vec_of(&mut rng, out * inp)).unwrap();
        let b = vec_of(&mut rng, out);
        let c = vec_of(&mut rng, out);
        let f = |x: &[f64], w: &DenseMatrix, b: &[f64]| -> f64 {
            affine(x, w, b).unwrap().iter().zip(&c).map(|(o, c)| o * c).sum()
        };
        let g = affine_backward(&x, &w, &c).unwrap();
        assert!(rel_err(&g.dx, &fd(&x, |x| f(x, &w, &b))) < TOL);
        let dw = fd(w.data(), |v| f(&x, &DenseMatrix::from_vec(out, inp, v.to_vec()).unwrap(), &b));
        assert!(rel_err(g.dw.data(), &dw) < TOL);
        assert!(rel_err(&g.db, &fd(&b, |b| f(&x, &w, b))) < TOL);
    }
}

#[test]
fn relu_gradients() {
    for t in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + t);
        let n = rng.random_range(1..10);
        // Keep inputs away from the kink where the finite difference straddles it.
        let x: Vec<f64> = vec_of(&mut rng, n)
            .into_iter()
            .map(|v| if v.abs() < 1e-3 { 0.5 } else { v })
            .collect();
        let c = vec_of(&mut rng, n);
        let numeric = fd(&x, |x| relu(x).iter().zip(&c).map(|(r, c)| r * c).sum());
        assert!(rel_err(&relu_backward(&x, &c), &numeric) < TOL);
    }
}

#[test]
fn cross_entropy_gradients() {
    for t in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + t);
        let n = rng.random_range(2..8);
        let logits: Vec<f64> = vec_of(&mut rng, n).into_iter().map(|v| 4.0 * v).collect();
        let label = rng.random_range(0..n);
        let (_, g) = softmax_cross_entropy(&logits, label).unwrap();
        let numeric = fd(&logits, |l| softmax_cross_entropy(l, label).unwrap().0);
        assert!(rel_err(&g, &numeric) < TOL);
    }
}

#[test]
fn cosine_gradients() {
    for t in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + t);
        let n = rng.random_range(2..8);
        let a = vec_of(&mut rng, n);
        let b = vec_of(&mut rng, n);
        let d = rng.random_range(-2.0..2.0);
        let (da, db) = cosine_similarity_backward(&a, &b, d).unwrap();
        assert!(rel_err(&da, &fd(&a, |a| d * cosine_similarity(a, &b).unwrap())) < TOL);
        assert!(rel_err(&db, &fd(&b, |b| d * cosine_similarity(&a, b).unwrap())) < TOL);
    }
}

struct Case {
    model: AgentModel,
    batch: Vec<Sample>,
}

fn random_case(seed: u64, strategy: Strategy, modalities: &[usize], fusion: FusionOp) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = vec![rng.random_range(2..5), rng.random_range(2..5)];
    let split = SplitDims {
        redundant: rng.random_range(2..4),
        synergistic: rng.random_range(2..4),
        unique: rng.random_range(2..4),
    };
    let n_classes = rng.random_range(2..5);
    let config = ModelConfig {
        input_dims: dims.clone(),
        hidden: rng.random_range(3..7),
        split,
        n_classes,
        fusion,
    };
    let mut model = AgentModel::init(strategy, modalities, &config, &mut rng).unwrap();
    for (_, m) in model.params.blocks_mut() {
        for v in m.data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    let batch = (0..rng.random_range(1..4))
        .map(|_| Sample {
            features: dims.iter().map(|&d| vec_of(&mut rng, d)).collect(),
            label: rng.random_range(0..n_classes),
        })
        .collect();
    Case { model, batch }
}

/// Compares an analytic parameter gradient against finite differences over
/// every parameter of the model.
fn check_params<F>(case: &Case, analytic: &ParamSet, loss: F) -> f64
where
    F: Fn(&AgentModel, &[&Sample]) -> f64,
{
    let blocks: Vec<Block> = case.model.params.block_ids();
    let theta = case.model.params.flatten(&blocks);
    let batch: Vec<&Sample> = case.batch.iter().collect();
    let mut probe = case.model.clone();
    let numeric = fd(&theta, |v| {
        probe.params.unflatten(&blocks, v).unwrap();
        loss(&probe, &batch)
    });
    rel_err(&analytic.flatten(&blocks), &numeric)
}

const FUSIONS: [FusionOp; 4] = [
    FusionOp::Mean,
    FusionOp::Hadamard,
    FusionOp::SumLinear,
    FusionOp::ConcatLinear,
];

#[test]
fn cls_loss_gradients() {
    let strategies = [
        Strategy::Parse,
        Strategy::DsgdModality,
        Strategy::DsgdTask,
        Strategy::DsgdHybrid,
    ];
    for t in 0..TRIALS {
        let strategy = strategies[t as usize % 4];
        // Baselines are also checked on multimodal agents.
        let mods: &[usize] = if strategy == Strategy::Parse || t % 2 == 0 { &[(t % 2) as usize] } else { &[0, 1] };
        let case = random_case(400 + t, strategy, mods, FusionOp::Mean);
        let batch: Vec<&Sample> = case.batch.iter().collect();
        let (_, g) = cls_loss(&case.model, &batch).unwrap();
        let err = check_params(&case, &g, |m, b| cls_loss(m, b).unwrap().0);
        assert!(err < TOL, "trial {t} ({strategy}): {err}");
    }
}

#[test]
fn nce_loss_gradients() {
    for t in 0..TRIALS {
        let case = random_case(500 + t, Strategy::Parse, &[0, 1], FusionOp::Mean);
        let opts = NceOptions {
            tau: [0.2, 0.5, 1.0][t as usize % 3],
            include_positive: t % 2 == 1,
        };
        let batch: Vec<&Sample> = case.batch.iter().collect();
        let (_, g) = nce_loss(&case.model, &batch, opts).unwrap();
        let err = check_params(&case, &g, |m, b| nce_loss(m, b, opts).unwrap().0);
        assert!(err < TOL, "trial {t}: {err}");
    }
}

#[test]
fn ensemble_loss_gradients() {
    for t in 0..TRIALS {
        let fusion = FUSIONS[t as usize % 4];
        let case = random_case(600 + t, Strategy::Parse, &[0, 1], fusion);
        let batch: Vec<&Sample> = case.batch.iter().collect();
        let (_, g) = ensemble_loss(&case.model, &batch).unwrap();
        let err = check_params(&case, &g, |m, b| ensemble_loss(m, b).unwrap().0);
        assert!(err < TOL, "trial {t} ({fusion}): {err}");
    }
}

#[test]
fn total_loss_gradients() {
    let opts = NceOptions::default();
    for t in 0..TRIALS {
        let fusion = FUSIONS[t as usize % 4];
        let mods: &[usize] = if t % 5 == 4 { &[1] } else { &[0, 1] };
        let case = random_case(700 + t, Strategy::Parse, mods, fusion);
        let beta = 0.1 * (t % 4) as f64;
        let batch: Vec<&Sample> = case.batch.iter().collect();
        let (_, g) = total_loss(&case.model, &batch, beta, opts).unwrap();
        let err = check_params(&case, &g, |m, b| total_loss(m, b, beta, opts).unwrap().0.total);
        assert!(err < TOL, "trial {t} ({fusion}, beta {beta}): {err}");
    }
}
