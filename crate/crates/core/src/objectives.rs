//! Training objectives and their analytic gradients.
//!
//! * `cls_loss`: per-modality cross-entropy of `f^u(z_u) + f^r(z_r)` for
//!   unimodal PARSE agents, or plain cross-entropy for baseline models.
//! * `nce_loss`: contrastive term on the redundant slices. For every ordered
//!   pair of owned modalities `(m, m')` it adds
//!   `-log( e^{sim(r_m, r_m')/τ} / (e^{sim(r_m, u_m)/τ} + e^{sim(r_m, s_m)/τ}) )`.
//!   The positive pair is left out of the denominator unless
//!   [`NceOptions::include_positive`] is set, so the loss can be negative.
//!   Slices of unequal width are compared with the shorter one zero-padded.
//! * `ensemble_loss`: cross-entropy of `f^s(fuse(z_s)) + Σ_m ŷ^m`.
//! * `total_loss`: ensemble + β·contrastive on multimodal agents, `cls_loss`
//!   on unimodal ones.
//!
//! All losses are batch means. Gradients come back as a [`ParamSet`] shaped
//! like the agent's parameters.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{fusion_input, mean_latent, AgentModel, Block, FusionOp, ParamSet, Strategy};
use crate::numerics::{
    affine, cosine_similarity, cosine_similarity_backward, log_sum_exp, relu_backward,
    softmax_cross_entropy, DenseMatrix,
};
use crate::synthdata::Sample;

pub const DEFAULT_BETA: f64 = 0.2;
pub const DEFAULT_TAU: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NceOptions {
    pub tau: f64,
    /// Adds the positive pair to the denominator (standard InfoNCE).
    pub include_positive: bool,
}

impl Default for NceOptions {
    fn default() -> Self {
        NceOptions {
            tau: DEFAULT_TAU,
            include_positive: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub cls: f64,
    pub nce: f64,
    pub per_modality_cls: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, Copy, Default)]
struct Terms {
    /// Per-modality classification (unimodal PARSE agents).
    cls: bool,
    ensemble: f64,
    nce: f64,
    /// Evaluate the contrastive value even when its weight is zero.
    report_nce: bool,
}

#[derive(Debug, Default)]
struct Sums {
    cls: f64,
    ensemble: f64,
    nce: f64,
    per_modality: Vec<f64>,
}

fn check_batch(batch: &[&Sample]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::config("empty batch"));
    }
    Ok(())
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn add_bias(grads: &mut ParamSet, block: Block, d: &[f64]) {
    add_into(grads.at_mut(block).data_mut(), d);
}

fn scaled(v: &[f64], alpha: f64) -> Vec<f64> {
    v.iter().map(|x| x * alpha).collect()
}

/// Backward through the unique and redundant heads of modality slot `k`.
fn head_backward(
    model: &AgentModel,
    k: usize,
    out: &[f64],
    d_logits: &[f64],
    d_out: &mut [f64],
    grads: &mut ParamSet,
) {
    let m = model.modalities[k];
    let s = model.config.split;
    let z_u = &out[s.unique_range()];
    let z_r = &out[s.redundant_range()];
    grads.at_mut(Block::UniqueW(m)).add_outer(d_logits, z_u);
    add_bias(grads, Block::UniqueB(m), d_logits);
    grads.at_mut(Block::RedundantW).add_outer(d_logits, z_r);
    add_bias(grads, Block::RedundantB, d_logits);
    add_into(
        &mut d_out[s.unique_range()],
        &model.params.at(Block::UniqueW(m)).matvec_t(d_logits),
    );
    add_into(
        &mut d_out[s.redundant_range()],
        &model.params.at(Block::RedundantW).matvec_t(d_logits),
    );
}

/// Backward through a fusion operator; returns one gradient per input.
fn fuse_backward(
    latents: &[&[f64]],
    op: FusionOp,
    params: &ParamSet,
    d_fused: &[f64],
    grads: &mut ParamSet,
) -> Vec<Vec<f64>> {
    let n = latents.len();
    match op {
        FusionOp::Mean => {
            let g = scaled(d_fused, 1.0 / n as f64);
            vec![g; n]
        }
        FusionOp::Hadamard => (0..n)
            .map(|k| {
                d_fused
                    .iter()
                    .enumerate()
                    .map(|(i, d)| {
                        d * latents
                            .iter()
                            .enumerate()
                            .filter(|(j, _)| *j != k)
                            .map(|(_, l)| l[i])
                            .product::<f64>()
                    })
                    .collect()
            })
            .collect(),
        FusionOp::SumLinear | FusionOp::ConcatLinear => {
            let input = fusion_input(latents, op);
            grads.at_mut(Block::FusionW).add_outer(d_fused, &input);
            add_bias(grads, Block::FusionB, d_fused);
            let d_input = params.at(Block::FusionW).matvec_t(d_fused);
            if op == FusionOp::SumLinear {
                vec![d_input; n]
            } else {
                d_input.chunks(latents[0].len()).map(<[f64]>::to_vec).collect()
            }
        }
    }
}

fn encoder_backward(
    model: &AgentModel,
    m: usize,
    x: &[f64],
    tape: &crate::model::EncoderTape,
    d_out: &[f64],
    grads: &mut ParamSet,
) {
    grads.at_mut(Block::EncoderW2(m)).add_outer(d_out, &tape.hidden);
    add_bias(grads, Block::EncoderB2(m), d_out);
    let d_hidden = model.params.at(Block::EncoderW2(m)).matvec_t(d_out);
    let d_pre = relu_backward(&tape.pre, &d_hidden);
    grads.at_mut(Block::EncoderW1(m)).add_outer(&d_pre, x);
    add_bias(grads, Block::EncoderB1(m), &d_pre);
}

/// Slices of different widths are compared as if the shorter one were
/// zero-padded at the end.
fn padded<'a>(a: &'a [f64], b: &'a [f64]) -> (std::borrow::Cow<'a, [f64]>, std::borrow::Cow<'a, [f64]>) {
    use std::borrow::Cow;
    let n = a.len().max(b.len());
    let grow = |v: &'a [f64]| -> Cow<'a, [f64]> {
        if v.len() == n {
            Cow::Borrowed(v)
        } else {
            let mut o = v.to_vec();
            o.resize(n, 0.0);
            Cow::Owned(o)
        }
    };
    (grow(a), grow(b))
}

fn sim(a: &[f64], b: &[f64]) -> Result<f64> {
    let (a, b) = padded(a, b);
    cosine_similarity(&a, &b)
}

/// Gradients come back at the padded width; callers add them with `zip`,
/// which drops the padding.
fn sim_backward(a: &[f64], b: &[f64], d: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let (a, b) = padded(a, b);
    cosine_similarity_backward(&a, &b, d)
}

/// Contrastive term for one sample, accumulating slice gradients scaled by
/// `weight`. Returns the unweighted loss.
fn nce_sample(
    model: &AgentModel,
    outs: &[&[f64]],
    opts: NceOptions,
    weight: f64,
    d_out: &mut [Vec<f64>],
) -> Result<f64> {
    let s = model.config.split;
    let tau = opts.tau;
    let mut loss = 0.0;
    let n = outs.len();
    for k in 0..n {
        let r = &outs[k][s.redundant_range()];
        let u = &outs[k][s.unique_range()];
        let syn = &outs[k][s.synergistic_range()];
        for kp in (0..n).filter(|&kp| kp != k) {
            let rp = &outs[kp][s.redundant_range()];
            let a = sim(r, rp)? / tau;
            let b = sim(r, u)? / tau;
            let c = sim(r, syn)? / tau;
            let (lse, da) = if opts.include_positive {
                let lse = log_sum_exp(&[a, b, c]);
                (lse, -1.0 + (a - lse).exp())
            } else {
                (log_sum_exp(&[b, c]), -1.0)
            };
            loss += lse - a;
            if weight == 0.0 {
                continue;
            }
            let db = (b - lse).exp();
            let dc = (c - lse).exp();
            let (gr, grp) = sim_backward(r, rp, weight * da / tau)?;
            add_into(&mut d_out[k][s.redundant_range()], &gr);
            add_into(&mut d_out[kp][s.redundant_range()], &grp);
            let (gr, gu) = sim_backward(r, u, weight * db / tau)?;
            add_into(&mut d_out[k][s.redundant_range()], &gr);
            add_into(&mut d_out[k][s.unique_range()], &gu);
            let (gr, gs) = sim_backward(r, syn, weight * dc / tau)?;
            add_into(&mut d_out[k][s.redundant_range()], &gr);
            add_into(&mut d_out[k][s.synergistic_range()], &gs);
        }
    }
    Ok(loss)
}

/// One forward/backward pass of a PARSE agent over one sample.
fn parse_sample(
    model: &AgentModel,
    sample: &Sample,
    terms: Terms,
    opts: NceOptions,
    scale: f64,
    grads: &mut ParamSet,
    sums: &mut Sums,
) -> Result<()> {
    let fwd = model.forward(sample)?;
    let y = sample.label;
    let width = model.config.split.total();
    let mut d_out = vec![vec![0.0; width]; fwd.tapes.len()];
    let per_mod: Vec<Vec<f64>> = fwd
        .tapes
        .iter()
        .enumerate()
        .map(|(k, t)| model.modality_logits(k, &t.out))
        .collect();
    for (k, logits) in per_mod.iter().enumerate() {
        let (ce, g) = softmax_cross_entropy(logits, y)?;
        sums.per_modality[k] += ce;
        if terms.cls {
            sums.cls += ce;
            head_backward(model, k, &fwd.tapes[k].out, &scaled(&g, scale), &mut d_out[k], grads);
        }
    }

    if terms.ensemble > 0.0 {
        let p = &model.params;
        let slices = model.synergy_slices(&fwd);
        let fused = crate::model::fuse(&slices, model.config.fusion, p)?;
        let mut logits = affine(&fused, p.at(Block::SynergyW), p.at(Block::SynergyB).data())?;
        for l in &per_mod {
            add_into(&mut logits, l);
        }
        let (ce, g) = softmax_cross_entropy(&logits, y)?;
        sums.ensemble += ce;
        let d = scaled(&g, scale * terms.ensemble);
        grads.at_mut(Block::SynergyW).add_outer(&d, &fused);
        add_bias(grads, Block::SynergyB, &d);
        let d_fused = p.at(Block::SynergyW).matvec_t(&d);
        let d_slices = fuse_backward(&slices, model.config.fusion, p, &d_fused, grads);
        let range = model.config.split.synergistic_range();
        for (k, ds) in d_slices.iter().enumerate() {
            add_into(&mut d_out[k][range.clone()], ds);
            head_backward(model, k, &fwd.tapes[k].out, &d, &mut d_out[k], grads);
        }
    }

    if terms.nce > 0.0 || terms.report_nce {
        let outs: Vec<&[f64]> = fwd.tapes.iter().map(|t| t.out.as_slice()).collect();
        sums.nce += nce_sample(model, &outs, opts, scale * terms.nce, &mut d_out)?;
    }

    for ((&m, tape), d) in model.modalities.iter().zip(&fwd.tapes).zip(&d_out) {
        encoder_backward(model, m, &sample.features[m], tape, d, grads);
    }
    Ok(())
}

/// Cross-entropy of a monolithic baseline model over one sample.
fn baseline_sample(
    model: &AgentModel,
    sample: &Sample,
    scale: f64,
    grads: &mut ParamSet,
    sums: &mut Sums,
) -> Result<()> {
    let fwd = model.forward(sample)?;
    let y = sample.label;
    let p = &model.params;
    let n = fwd.tapes.len();
    let mut d_out: Vec<Vec<f64>> = Vec::with_capacity(n);
    match model.strategy {
        Strategy::DsgdModality => {
            // Each branch is trained as its own unimodal classifier.
            for (k, (&m, t)) in model.modalities.iter().zip(&fwd.tapes).enumerate() {
                let (w, b) = (Block::ModalityClassifierW(m), Block::ModalityClassifierB(m));
                let logits = affine(&t.out, p.at(w), p.at(b).data())?;
                let (ce, g) = softmax_cross_entropy(&logits, y)?;
                sums.cls += ce;
                sums.per_modality[k] += ce;
                let d = scaled(&g, scale);
                grads.at_mut(w).add_outer(&d, &t.out);
                add_bias(grads, b, &d);
                d_out.push(p.at(w).matvec_t(&d));
            }
        }
        Strategy::DsgdTask | Strategy::DsgdHybrid => {
            let z = mean_latent(&fwd);
            let logits = affine(&z, p.at(Block::ClassifierW), p.at(Block::ClassifierB).data())?;
            let (ce, g) = softmax_cross_entropy(&logits, y)?;
            sums.cls += ce;
            if n == 1 {
                sums.per_modality[0] += ce;
            }
            let d = scaled(&g, scale);
            grads.at_mut(Block::ClassifierW).add_outer(&d, &z);
            add_bias(grads, Block::ClassifierB, &d);
            let dz = scaled(&p.at(Block::ClassifierW).matvec_t(&d), 1.0 / n as f64);
            d_out = vec![dz; n];
        }
        Strategy::Parse => unreachable!("baseline pass on a PARSE model"),
    }
    for ((&m, tape), d) in model.modalities.iter().zip(&fwd.tapes).zip(&d_out) {
        encoder_backward(model, m, &sample.features[m], tape, d, grads);
    }
    Ok(())
}

fn run_batch(
    model: &AgentModel,
    batch: &[&Sample],
    terms: Terms,
    opts: NceOptions,
) -> Result<(Sums, ParamSet)> {
    check_batch(batch)?;
    let mut grads = model.params.zeros_like();
    let mut sums = Sums {
        per_modality: vec![0.0; model.modalities.len()],
        ..Sums::default()
    };
    let scale = 1.0 / batch.len() as f64;
    for sample in batch {
        if model.strategy.is_fission() {
            parse_sample(model, sample, terms, opts, scale, &mut grads, &mut sums)?;
        } else {
            baseline_sample(model, sample, scale, &mut grads, &mut sums)?;
        }
    }
    let n = batch.len() as f64;
    sums.cls /= n;
    sums.ensemble /= n;
    sums.nce /= n;
    sums.per_modality.iter_mut().for_each(|v| *v /= n);
    Ok((sums, grads))
}

fn require_multimodal_parse(model: &AgentModel, what: &str) -> Result<()> {
    if !model.strategy.is_fission() {
        return Err(Error::Contract(format!("{what} applies to PARSE agents only")));
    }
    if !model.is_multimodal() {
        return Err(Error::Contract(format!("{what} needs a multimodal agent")));
    }
    Ok(())
}

/// Classification loss of a unimodal PARSE agent or of any baseline agent.
pub fn cls_loss(model: &AgentModel, batch: &[&Sample]) -> Result<(f64, ParamSet)> {
    if model.strategy.is_fission() && model.is_multimodal() {
        return Err(Error::Contract(
            "multimodal PARSE agents train on the ensemble loss".into(),
        ));
    }
    let terms = Terms {
        cls: true,
        ..Terms::default()
    };
    let (sums, grads) = run_batch(model, batch, terms, NceOptions::default())?;
    Ok((sums.cls, grads))
}

pub fn nce_loss(model: &AgentModel, batch: &[&Sample], opts: NceOptions) -> Result<(f64, ParamSet)> {
    require_multimodal_parse(model, "the contrastive loss")?;
    let terms = Terms {
        nce: 1.0,
        ..Terms::default()
    };
    let (sums, grads) = run_batch(model, batch, terms, opts)?;
    Ok((sums.nce, grads))
}

pub fn ensemble_loss(model: &AgentModel, batch: &[&Sample]) -> Result<(f64, ParamSet)> {
    require_multimodal_parse(model, "the ensemble loss")?;
    let terms = Terms {
        ensemble: 1.0,
        ..Terms::default()
    };
    let (sums, grads) = run_batch(model, batch, terms, NceOptions::default())?;
    Ok((sums.ensemble, grads))
}

fn breakdown(model: &AgentModel, sums: &Sums, cls: f64, nce: f64, beta: f64) -> LossBreakdown {
    LossBreakdown {
        total: cls + beta * nce,
        cls,
        nce,
        per_modality_cls: model
            .modalities
            .iter()
            .copied()
            .zip(sums.per_modality.iter().copied())
            .collect(),
    }
}

/// The local objective of a PARSE agent.
pub fn total_loss(
    model: &AgentModel,
    batch: &[&Sample],
    beta: f64,
    opts: NceOptions,
) -> Result<(LossBreakdown, ParamSet)> {
    if !model.strategy.is_fission() {
        return Err(Error::Contract("total_loss applies to PARSE agents only".into()));
    }
    if !model.is_multimodal() {
        let terms = Terms {
            cls: true,
            ..Terms::default()
        };
        let (sums, grads) = run_batch(model, batch, terms, opts)?;
        return Ok((breakdown(model, &sums, sums.cls, 0.0, beta), grads));
    }
    let terms = Terms {
        cls: false,
        ensemble: 1.0,
        nce: beta,
        report_nce: true,
    };
    let (sums, grads) = run_batch(model, batch, terms, opts)?;
    Ok((breakdown(model, &sums, sums.ensemble, sums.nce, beta), grads))
}

/// What each agent minimises locally: [`total_loss`] for PARSE, plain
/// cross-entropy for the baselines.
pub fn local_objective(
    model: &AgentModel,
    batch: &[&Sample],
    beta: f64,
    opts: NceOptions,
) -> Result<(LossBreakdown, ParamSet)> {
    if model.strategy.is_fission() {
        return total_loss(model, batch, beta, opts);
    }
    let terms = Terms {
        cls: true,
        ..Terms::default()
    };
    let (sums, grads) = run_batch(model, batch, terms, opts)?;
    Ok((breakdown(model, &sums, sums.cls, 0.0, beta), grads))
}

/// Rows of an encoder's output layer that produce `z_s`, as (W2, b2)
/// gradient magnitudes. Used to audit slice routing.
pub fn synergy_rows_max_abs(model: &AgentModel, grads: &ParamSet, m: usize) -> f64 {
    let range = model.config.split.synergistic_range();
    let w: &DenseMatrix = grads.at(Block::EncoderW2(m));
    let b = grads.at(Block::EncoderB2(m));
    range
        .flat_map(|r| w.row(r).iter().chain(std::iter::once(&b.data()[r])))
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, SplitDims};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> ModelConfig {
        ModelConfig {
            input_dims: vec![3, 3],
            hidden: 4,
            split: SplitDims::equal(2),
            n_classes: 3,
            fusion: FusionOp::Mean,
        }
    }

    fn samples() -> Vec<Sample> {
        vec![
            Sample {
                features: vec![vec![1.0, -0.5, 0.3], vec![0.2, 0.9, -1.1]],
                label: 2,
            },
            Sample {
                features: vec![vec![-0.4, 0.8, 1.5], vec![1.2, -0.3, 0.6]],
                label: 0,
            },
        ]
    }

    #[test]
    fn zero_parameters_give_log_c() {
        let s = samples();
        let batch: Vec<&Sample> = s.iter().collect();
        let uni = AgentModel::zeros(Strategy::Parse, &[0], &cfg()).unwrap();
        let (loss, _) = cls_loss(&uni, &batch).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-15);
        let multi = AgentModel::zeros(Strategy::Parse, &[0, 1], &cfg()).unwrap();
        let (loss, _) = ensemble_loss(&multi, &batch).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn contract_errors() {
        let s = samples();
        let batch: Vec<&Sample> = s.iter().collect();
        let uni = AgentModel::zeros(Strategy::Parse, &[0], &cfg()).unwrap();
        assert!(matches!(
            nce_loss(&uni, &batch, NceOptions::default()),
            Err(Error::Contract(_))
        ));
        assert!(matches!(ensemble_loss(&uni, &batch), Err(Error::Contract(_))));
        let multi = AgentModel::zeros(Strategy::Parse, &[0, 1], &cfg()).unwrap();
        assert!(matches!(cls_loss(&multi, &batch), Err(Error::Contract(_))));
        assert!(matches!(cls_loss(&uni, &[]), Err(Error::Config(_))));
        // Zero slices make cosine similarity undefined.
        assert!(matches!(
            nce_loss(&multi, &batch, NceOptions::default()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn duplicated_batch_has_the_same_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = AgentModel::init(Strategy::Parse, &[1], &cfg(), &mut rng).unwrap();
        let s = samples();
        let (one, _) = cls_loss(&m, &[&s[0]]).unwrap();
        let (many, _) = cls_loss(&m, &[&s[0]; 5]).unwrap();
        assert!((one - many).abs() < 1e-14);
    }

    #[test]
    fn unimodal_synergy_rows_get_exactly_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = AgentModel::init(Strategy::Parse, &[0], &cfg(), &mut rng).unwrap();
        let s = samples();
        let batch: Vec<&Sample> = s.iter().collect();
        let (_, g) = total_loss(&m, &batch, 0.2, NceOptions::default()).unwrap();
        assert_eq!(synergy_rows_max_abs(&m, &g, 0), 0.0);
        assert!(!g.contains(Block::SynergyW));
    }
}
