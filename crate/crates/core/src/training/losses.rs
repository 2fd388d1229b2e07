use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::label_space::{SpanBounds, Tag};
use crate::par::{self, Parallelism};
use crate::prob_algebra::{divergence_with_grad, span_loss_gradient, Divergence};
use crate::tagger::{Gradients, Tagger};

use super::config::TrainingConfig;

/// A labeled sentence, already mapped to vocabulary ids.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledExample {
    pub ids: Vec<usize>,
    pub tags: Vec<Tag>,
}

/// A conjugate pair mapped to vocabulary ids. Side a is the original
/// sentence, side b its translation.
#[derive(Clone, Debug, PartialEq)]
pub struct PairExample {
    pub original_ids: Vec<usize>,
    pub original_span: SpanBounds,
    pub translated_ids: Vec<usize>,
    pub translated_span: SpanBounds,
}

/// Mixes a base seed with a path of indices (splitmix64 finalizer).
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mut z = base;
    for &p in path {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(p.wrapping_mul(0xD1B5_4A32_D192_ED03));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

pub fn combine_losses(ce: f64, drop: f64, trans: f64, alpha: f64, beta: f64) -> f64 {
    ce + alpha * drop + beta * trans
}

/// CRF negative log-likelihood of one sentence; gradients go into `grads`
/// scaled by `scale`. `masks` selects the dropout pattern (`None` = off).
pub fn cross_entropy_into(
    tagger: &Tagger,
    example: &LabeledExample,
    masks: Option<Vec<Vec<f64>>>,
    scale: f64,
    grads: &mut Gradients,
) -> Result<f64> {
    let cache = tagger.forward_masked(&example.ids, masks)?;
    tagger.crf_loss(&cache, &example.tags, scale, grads)
}

/// Token-averaged symmetric KL between two passes with the given masks.
pub fn dropout_consistency_with_masks(
    tagger: &Tagger,
    ids: &[usize],
    masks: (Vec<Vec<f64>>, Vec<Vec<f64>>),
    scale: f64,
    grads: &mut Gradients,
) -> Result<f64> {
    let c1 = tagger.forward_masked(ids, Some(masks.0))?;
    let c2 = tagger.forward_masked(ids, Some(masks.1))?;
    let n = ids.len() as f64;
    let mut loss = 0.0;
    let mut d1 = Vec::with_capacity(ids.len());
    let mut d2 = Vec::with_capacity(ids.len());
    for (p1, p2) in c1.probs.iter().zip(&c2.probs) {
        let (l, g1, g2) = divergence_with_grad(p1, p2, Divergence::BiKl)?;
        loss += l / n;
        d1.push(g1.into_iter().map(|g| g * scale / n).collect::<Vec<_>>());
        d2.push(g2.into_iter().map(|g| g * scale / n).collect::<Vec<_>>());
    }
    if scale != 0.0 {
        tagger.backward_probs(&c1, &d1, grads);
        tagger.backward_probs(&c2, &d2, grads);
    }
    Ok(loss)
}

/// Dropout consistency of one sentence under two fresh masks from `rng`.
pub fn dropout_consistency_loss(
    tagger: &Tagger,
    ids: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Gradients)> {
    let masks = (tagger.draw_masks(ids.len(), rng), tagger.draw_masks(ids.len(), rng));
    let mut grads = Gradients::zeros(&tagger.params);
    let loss = dropout_consistency_with_masks(tagger, ids, masks, 1.0, &mut grads)?;
    Ok((loss, grads))
}

pub fn translation_consistency_into(
    tagger: &Tagger,
    pair: &PairExample,
    mode: Divergence,
    scale: f64,
    grads: &mut Gradients,
) -> Result<f64> {
    let (sa, sb) = (pair.original_span, pair.translated_span);
    if sa.end >= pair.original_ids.len() || sb.end >= pair.translated_ids.len() || sa.start > sa.end || sb.start > sb.end {
        return Err(Error::invalid("pair span out of bounds"));
    }
    let ca = tagger.forward(&pair.original_ids)?;
    let cb = tagger.forward(&pair.translated_ids)?;
    let g = span_loss_gradient(
        &ca.probs[sa.start..=sa.end],
        &cb.probs[sb.start..=sb.end],
        &tagger.space,
        mode,
    )?;
    if scale != 0.0 {
        let t = tagger.space.size();
        let spread = |n: usize, span: SpanBounds, rows: &[Vec<f64>]| {
            let mut d = vec![vec![0.0; t]; n];
            for (k, row) in rows.iter().enumerate() {
                d[span.start + k] = row.iter().map(|x| x * scale).collect();
            }
            d
        };
        if mode != Divergence::KlUnlabel {
            tagger.backward_probs(&ca, &spread(ca.ids.len(), sa, &g.grad_a), grads);
        }
        if mode != Divergence::KlTrans {
            tagger.backward_probs(&cb, &spread(cb.ids.len(), sb, &g.grad_b), grads);
        }
    }
    Ok(g.loss)
}

/// Span-level consistency of one conjugate pair, dropout off.
pub fn translation_consistency_loss(
    tagger: &Tagger,
    pair: &PairExample,
    mode: Divergence,
) -> Result<(f64, Gradients)> {
    let mut grads = Gradients::zeros(&tagger.params);
    let loss = translation_consistency_into(tagger, pair, mode, 1.0, &mut grads)?;
    Ok((loss, grads))
}

/// Batch-mean loss components of one step, before weighting.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub total: f64,
    pub ce: f64,
    pub drop: f64,
    pub trans: f64,
    pub grads: Gradients,
}

enum Task {
    Labeled(usize),
    Pair(usize),
    Unlabeled(usize),
}

/// Loss and gradient of one optimization step. Each stream is averaged over
/// its own batch; terms the run mode does not use, or whose weight is zero,
/// are never computed. Randomness comes from `step_seed` only, so a step is
/// reproducible regardless of thread scheduling.
pub fn total_loss_step(
    tagger: &Tagger,
    labeled: &[&LabeledExample],
    pairs: &[&PairExample],
    unlabeled: &[&[usize]],
    config: &TrainingConfig,
    step_seed: u64,
    parallelism: Parallelism,
) -> Result<StepOutput> {
    let mode = config.mode;
    let alpha = config.drop_weight();
    let beta = config.trans_weight();
    let drop_labeled = mode.drop_on_labeled() && alpha > 0.0;
    let drop_unlabeled = mode.drop_on_unlabeled() && alpha > 0.0;
    let pairs = if beta > 0.0 { pairs } else { &[] };
    let unlabeled = if drop_unlabeled { unlabeled } else { &[] };
    if labeled.is_empty() && pairs.is_empty() && unlabeled.is_empty() {
        return Err(Error::invalid("training step with no data in any stream"));
    }

    let mut tasks: Vec<Task> = (0..labeled.len()).map(Task::Labeled).collect();
    tasks.extend((0..pairs.len()).map(Task::Pair));
    tasks.extend((0..unlabeled.len()).map(Task::Unlabeled));
    let nl = labeled.len().max(1) as f64;
    let np = pairs.len().max(1) as f64;
    let nu = unlabeled.len().max(1) as f64;

    // (ce, drop, trans, grads) per task, reduced below in task order
    let results = par::map(parallelism, &tasks, |_, task| -> Result<(f64, f64, f64, Gradients)> {
        let mut grads = Gradients::zeros(&tagger.params);
        match *task {
            Task::Labeled(i) => {
                let ex = labeled[i];
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(step_seed, &[0, i as u64]));
                let masks = tagger.draw_masks(ex.ids.len(), &mut rng);
                let ce = cross_entropy_into(tagger, ex, Some(masks), 1.0 / nl, &mut grads)?;
                let drop = if drop_labeled {
                    let masks = (
                        tagger.draw_masks(ex.ids.len(), &mut rng),
                        tagger.draw_masks(ex.ids.len(), &mut rng),
                    );
                    dropout_consistency_with_masks(tagger, &ex.ids, masks, alpha / nl, &mut grads)?
                } else {
                    0.0
                };
                Ok((ce, drop, 0.0, grads))
            }
            Task::Pair(i) => {
                let l = translation_consistency_into(tagger, pairs[i], config.divergence, beta / np, &mut grads)?;
                Ok((0.0, 0.0, l, grads))
            }
            Task::Unlabeled(i) => {
                let ids = unlabeled[i];
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(step_seed, &[1, i as u64]));
                let masks = (tagger.draw_masks(ids.len(), &mut rng), tagger.draw_masks(ids.len(), &mut rng));
                let drop = dropout_consistency_with_masks(tagger, ids, masks, alpha / nu, &mut grads)?;
                Ok((0.0, drop, 0.0, grads))
            }
        }
    });

    let mut grads = Gradients::zeros(&tagger.params);
    let (mut ce, mut drop, mut trans) = (0.0, 0.0, 0.0);
    for r in results {
        let (c, d, t, g) = r?;
        ce += c;
        drop += d;
        trans += t;
        grads.add_scaled(&g, 1.0);
    }
    ce /= nl;
    drop /= if drop_unlabeled { nu } else { nl };
    trans /= np;
    let total = combine_losses(ce, drop, trans, alpha, beta);
    if !total.is_finite() || !grads.is_finite() {
        return Err(Error::TrainingDiverged {
            epoch: 0,
            step: 0,
            what: format!("non-finite loss (ce {ce}, drop {drop}, trans {trans})"),
        });
    }
    Ok(StepOutput {
        total,
        ce,
        drop,
        trans,
        grads,
    })
}
