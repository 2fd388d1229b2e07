//! Token-to-span probability conversion and the KL family used by both
//! consistency losses, with closed-form gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label_space::{span_tag_sequence, LabelSpace, Tag};

/// Floor applied to every probability before taking a logarithm.
pub const LOG_EPS: f64 = 1e-12;

/// Distribution over `types ∪ {O, illegal}` for one span, in that order.
#[derive(Clone, Debug, PartialEq)]
pub struct SpanDistribution {
    probs: Vec<f64>,
}

impl SpanDistribution {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn class(&self, type_index: usize) -> f64 {
        self.probs[type_index]
    }

    pub fn outside(&self) -> f64 {
        self.probs[self.probs.len() - 2]
    }

    pub fn illegal(&self) -> f64 {
        self.probs[self.probs.len() - 1]
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probs
    }
}

/// Which divergence drives the translation-consistency loss. Side `a` is
/// the original sentence's span, side `b` its translation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Divergence {
    /// ½[KL(a‖b) + KL(b‖a)], gradients into both sides.
    #[default]
    BiKl,
    /// KL(a‖b) with `a` as the fixed reference.
    KlUnlabel,
    /// KL(b‖a) with `b` as the fixed reference.
    KlTrans,
}

impl Divergence {
    pub const ALL: [Divergence; 3] = [Divergence::BiKl, Divergence::KlUnlabel, Divergence::KlTrans];

    pub fn name(self) -> &'static str {
        match self {
            Divergence::BiKl => "bi-kl",
            Divergence::KlUnlabel => "kl-unlabel",
            Divergence::KlTrans => "kl-trans",
        }
    }
}

impl std::str::FromStr for Divergence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Divergence::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown divergence {s:?}")))
    }
}

fn check_span(token_dists: &[Vec<f64>], space: &LabelSpace) -> Result<()> {
    if token_dists.is_empty() {
        return Err(Error::invalid("span must contain at least one token"));
    }
    if let Some(d) = token_dists.iter().find(|d| d.len() != space.size()) {
        return Err(Error::invalid(format!(
            "token distribution has {} entries, label space has {}",
            d.len(),
            space.size()
        )));
    }
    Ok(())
}

/// Legal tag-index sequence for every span-level outcome except `illegal`:
/// one per entity type, then all-O.
fn legal_sequences(len: usize, space: &LabelSpace) -> Vec<Vec<usize>> {
    let mut seqs: Vec<Vec<usize>> = (0..space.num_types())
        .map(|t| {
            span_tag_sequence(t, len)
                .expect("len >= 1")
                .into_iter()
                .map(|tag| space.index_of(tag))
                .collect()
        })
        .collect();
    seqs.push(vec![space.index_of(Tag::Outside); len]);
    seqs
}

pub fn token_to_span(token_dists: &[Vec<f64>], space: &LabelSpace) -> Result<SpanDistribution> {
    check_span(token_dists, space)?;
    let mut probs: Vec<f64> = legal_sequences(token_dists.len(), space)
        .iter()
        .map(|seq| seq.iter().zip(token_dists).map(|(&tag, d)| d[tag]).product())
        .collect();
    let legal: f64 = probs.iter().sum();
    probs.push((1.0 - legal).max(0.0));
    Ok(SpanDistribution { probs })
}

/// Gradient of a scalar with respect to every token probability, given its
/// gradient with respect to the span distribution.
pub fn token_to_span_backward(
    token_dists: &[Vec<f64>],
    space: &LabelSpace,
    span_grad: &[f64],
) -> Result<Vec<Vec<f64>>> {
    check_span(token_dists, space)?;
    if span_grad.len() != space.num_types() + 2 {
        return Err(Error::invalid("span gradient has the wrong length"));
    }
    let len = token_dists.len();
    let illegal_grad = span_grad[span_grad.len() - 1];
    let mut grads = vec![vec![0.0; space.size()]; len];
    let mut prefix = vec![1.0; len + 1];
    let mut suffix = vec![1.0; len + 1];
    for (k, seq) in legal_sequences(len, space).iter().enumerate() {
        // the illegal entry is 1 - Σ legal, so each legal entry also moves it
        let g = span_grad[k] - illegal_grad;
        for u in 0..len {
            prefix[u + 1] = prefix[u] * token_dists[u][seq[u]];
        }
        for u in (0..len).rev() {
            suffix[u] = suffix[u + 1] * token_dists[u][seq[u]];
        }
        for u in 0..len {
            grads[u][seq[u]] += g * prefix[u] * suffix[u + 1];
        }
    }
    Ok(grads)
}

fn clamp(p: f64) -> f64 {
    p.clamp(LOG_EPS, 1.0)
}

fn check_pair(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::invalid(format!(
            "distribution lengths differ: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    Ok(())
}

/// `Σ p_i ln(p_i / q_i)` with both arguments clamped to `[LOG_EPS, 1]`
/// inside the logarithm.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    check_pair(p, q)?;
    Ok(kl_unchecked(p, q))
}

pub fn bi_kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    check_pair(p, q)?;
    Ok(0.5 * (kl_unchecked(p, q) + kl_unchecked(q, p)))
}

pub(crate) fn kl_unchecked(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| pi * (clamp(pi).ln() - clamp(qi).ln()))
        .sum()
}

fn inside_clamp(x: f64) -> f64 {
    if (LOG_EPS..=1.0).contains(&x) {
        1.0
    } else {
        0.0
    }
}

/// Adds `scale * ∂KL(p‖q)/∂p` and `scale * ∂KL(p‖q)/∂q` into the given buffers.
pub(crate) fn kl_grad_into(
    p: &[f64],
    q: &[f64],
    scale: f64,
    dp: Option<&mut [f64]>,
    dq: Option<&mut [f64]>,
) {
    if let Some(dp) = dp {
        for i in 0..p.len() {
            let (pi, qi) = (p[i], q[i]);
            dp[i] += scale * (clamp(pi).ln() - clamp(qi).ln() + inside_clamp(pi));
        }
    }
    if let Some(dq) = dq {
        for i in 0..p.len() {
            dq[i] -= scale * p[i] * inside_clamp(q[i]) / clamp(q[i]);
        }
    }
}

/// Loss and gradients of a divergence between two distributions. Returns
/// `(loss, d_first, d_second)` following the stop-gradient contract of `mode`.
pub fn divergence_with_grad(
    a: &[f64],
    b: &[f64],
    mode: Divergence,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    check_pair(a, b)?;
    let mut da = vec![0.0; a.len()];
    let mut db = vec![0.0; b.len()];
    let loss = match mode {
        Divergence::BiKl => {
            kl_grad_into(a, b, 0.5, Some(&mut da), Some(&mut db));
            kl_grad_into(b, a, 0.5, Some(&mut db), Some(&mut da));
            0.5 * (kl_unchecked(a, b) + kl_unchecked(b, a))
        }
        Divergence::KlUnlabel => {
            kl_grad_into(a, b, 1.0, None, Some(&mut db));
            kl_unchecked(a, b)
        }
        Divergence::KlTrans => {
            kl_grad_into(b, a, 1.0, None, Some(&mut da));
            kl_unchecked(b, a)
        }
    };
    Ok((loss, da, db))
}

#[derive(Clone, Debug)]
pub struct SpanLossGrad {
    pub loss: f64,
    pub span_a: SpanDistribution,
    pub span_b: SpanDistribution,
    /// ∂loss/∂P_t for each token of side a (all zero when a is the reference).
    pub grad_a: Vec<Vec<f64>>,
    pub grad_b: Vec<Vec<f64>>,
}

/// Divergence between the span distributions of two token-distribution
/// sequences, with exact gradients through the span conversion.
pub fn span_loss_gradient(
    token_dists_a: &[Vec<f64>],
    token_dists_b: &[Vec<f64>],
    space: &LabelSpace,
    mode: Divergence,
) -> Result<SpanLossGrad> {
    let span_a = token_to_span(token_dists_a, space)?;
    let span_b = token_to_span(token_dists_b, space)?;
    let (loss, da, db) = divergence_with_grad(span_a.probs(), span_b.probs(), mode)?;
    let grad_a = match mode {
        Divergence::KlUnlabel => vec![vec![0.0; space.size()]; token_dists_a.len()],
        _ => token_to_span_backward(token_dists_a, space, &da)?,
    };
    let grad_b = match mode {
        Divergence::KlTrans => vec![vec![0.0; space.size()]; token_dists_b.len()],
        _ => token_to_span_backward(token_dists_b, space, &db)?,
    };
    Ok(SpanLossGrad {
        loss,
        span_a,
        span_b,
        grad_a,
        grad_b,
    })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::label_space::{decode_tags, DecodeMode};

    fn space(n: usize) -> LabelSpace {
        LabelSpace::from_names((0..n).map(|i| format!("T{i}"))).unwrap()
    }

    fn random_dist(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
        let raw: Vec<f64> = (0..k).map(|_| rng.gen::<f64>() + 1e-3).collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|x| x / s).collect()
    }

    /// Enumerates all joint tag assignments over the span and sums their
    /// probability by realized span label.
    fn brute_force(dists: &[Vec<f64>], space: &LabelSpace) -> Vec<f64> {
        let k = space.size();
        let len = dists.len();
        let mut out = vec![0.0; space.num_types() + 2];
        for code in 0..k.pow(len as u32) {
            let mut c = code;
            let mut p = 1.0;
            let mut tags = Vec::with_capacity(len);
            for d in dists {
                p *= d[c % k];
                tags.push(space.tag(c % k));
                c /= k;
            }
            let label = if tags.iter().all(|&t| t == Tag::Outside) {
                space.num_types()
            } else {
                match decode_tags(&tags, DecodeMode::Strict) {
                    Ok(spans) if spans.len() == 1 && spans[0].start == 0 && spans[0].end == len - 1 => {
                        spans[0].type_index
                    }
                    _ => space.num_types() + 1,
                }
            };
            out[label] += p;
        }
        out
    }

    #[test]
    fn two_token_example() {
        // P(B-PER|West)=0.7, P(E-PER|German)=0.8, P(O|·)=0.1; rest spread.
        let s = space(1);
        let west = vec![0.7, 0.1, 0.05, 0.05, 0.1];
        let german = vec![0.04, 0.03, 0.8, 0.03, 0.1];
        let span = token_to_span(&[west.clone(), german.clone()], &s).unwrap();
        let oracle = brute_force(&[west, german], &s);
        assert!((oracle[0] - 0.56).abs() < 1e-12);
        assert!((oracle[1] - 0.01).abs() < 1e-12);
        assert!((oracle[2] - 0.43).abs() < 1e-12);
        for (a, b) in span.probs().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_token_reads_s_and_o() {
        let s = space(3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = random_dist(&mut rng, s.size());
        let span = token_to_span(std::slice::from_ref(&d), &s).unwrap();
        for t in 0..3 {
            assert_eq!(span.class(t), d[s.index_of(Tag::Single(t))]);
        }
        assert_eq!(span.outside(), d[s.outside_index()]);
    }

    #[test]
    fn uniform_two_tokens() {
        let s = space(2);
        let u = vec![1.0 / 9.0; 9];
        let span = token_to_span(&[u.clone(), u], &s).unwrap();
        for &p in &span.probs()[..3] {
            assert!((p - 1.0 / 81.0).abs() < 1e-15);
        }
        assert!((span.illegal() - 78.0 / 81.0).abs() < 1e-14);
    }

    #[test]
    fn span_errors() {
        let s = space(1);
        assert!(token_to_span(&[], &s).is_err());
        assert!(token_to_span(&[vec![0.5, 0.5]], &s).is_err());
    }

    #[test]
    fn matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let s = space(rng.gen_range(1..=3));
            let len = rng.gen_range(1..=4);
            let dists: Vec<Vec<f64>> = (0..len).map(|_| random_dist(&mut rng, s.size())).collect();
            let span = token_to_span(&dists, &s).unwrap();
            for (a, b) in span.probs().iter().zip(brute_force(&dists, &s)) {
                assert!((a - b).abs() < 1e-12);
            }
            assert!((span.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn kl_examples() {
        // 0.5 ln(0.5/0.9) + 0.5 ln(0.5/0.1)
        let oracle = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        let kl = kl_divergence(&[0.5, 0.5], &[0.9, 0.1]).unwrap();
        assert!((kl - oracle).abs() < 1e-15);
        assert!((kl - 0.5108).abs() < 1e-4);
        let back = 0.9 * (0.9f64 / 0.5).ln() + 0.1 * (0.1f64 / 0.5).ln();
        assert!((back - 0.3681).abs() < 1e-4);
        let bi = bi_kl_divergence(&[0.5, 0.5], &[0.9, 0.1]).unwrap();
        assert!((bi - 0.5 * (oracle + back)).abs() < 1e-15);
        assert!((bi - 0.4394).abs() < 1e-4);

        let kl = kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((kl - 2f64.ln()).abs() < 1e-9);
        assert_eq!(kl_divergence(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert!(kl_divergence(&[1.0], &[0.5, 0.5]).is_err());
    }

    fn flatten(v: &[Vec<f64>]) -> Vec<f64> {
        v.iter().flatten().copied().collect()
    }

    #[test]
    fn identical_sides_have_zero_loss_and_gradient() {
        let s = space(2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dists: Vec<Vec<f64>> = (0..3).map(|_| random_dist(&mut rng, s.size())).collect();
        let out = span_loss_gradient(&dists, &dists, &s, Divergence::BiKl).unwrap();
        assert!(out.loss.abs() < 1e-15);
        assert!(flatten(&out.grad_a).iter().chain(&flatten(&out.grad_b)).all(|g| g.abs() < 1e-12));
    }

    /// Entries bounded well away from 0 so that central differences with
    /// h = 1e-5 are themselves accurate.
    fn fd_dist(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
        let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.2..1.0)).collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|x| x / s).collect()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let h = 1e-5;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..30 {
            let s = space(1 + trial % 3);
            let la = rng.gen_range(1..=4);
            let lb = rng.gen_range(1..=4);
            let a: Vec<Vec<f64>> = (0..la).map(|_| fd_dist(&mut rng, s.size())).collect();
            let b: Vec<Vec<f64>> = (0..lb).map(|_| fd_dist(&mut rng, s.size())).collect();
            for mode in Divergence::ALL {
                let out = span_loss_gradient(&a, &b, &s, mode).unwrap();
                let loss = |a: &[Vec<f64>], b: &[Vec<f64>]| {
                    let pa = token_to_span(a, &s).unwrap();
                    let pb = token_to_span(b, &s).unwrap();
                    match mode {
                        Divergence::BiKl => bi_kl_divergence(pa.probs(), pb.probs()).unwrap(),
                        Divergence::KlUnlabel => kl_divergence(pa.probs(), pb.probs()).unwrap(),
                        Divergence::KlTrans => kl_divergence(pb.probs(), pa.probs()).unwrap(),
                    }
                };
                for side in 0..2 {
                    let frozen = matches!((side, mode), (0, Divergence::KlUnlabel) | (1, Divergence::KlTrans));
                    let analytic = if side == 0 { &out.grad_a } else { &out.grad_b };
                    let n = if side == 0 { la } else { lb };
                    for u in 0..n {
                        for t in 0..s.size() {
                            if frozen {
                                assert_eq!(analytic[u][t], 0.0);
                                continue;
                            }
                            let (mut ap, mut am) = (a.clone(), a.clone());
                            let (mut bp, mut bm) = (b.clone(), b.clone());
                            if side == 0 {
                                ap[u][t] += h;
                                am[u][t] -= h;
                            } else {
                                bp[u][t] += h;
                                bm[u][t] -= h;
                            }
                            let fd = (loss(&ap, &bp) - loss(&am, &bm)) / (2.0 * h);
                            let g = analytic[u][t];
                            let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-6);
                            assert!(rel < 1e-4, "mode {mode:?} side {side} ({u},{t}): {g} vs {fd}");
                        }
                    }
                }
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn kl_is_nonnegative_and_bi_kl_symmetric(
            raw_p in proptest::collection::vec(0.001f64..1.0, 2..8),
            seed in 0u64..1000,
        ) {
            let sp: f64 = raw_p.iter().sum();
            let p: Vec<f64> = raw_p.iter().map(|x| x / sp).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = random_dist(&mut rng, p.len());
            proptest::prop_assert!(kl_divergence(&p, &q).unwrap() >= -1e-9);
            proptest::prop_assert!(kl_divergence(&p, &p).unwrap().abs() < 1e-12);
            let pq = bi_kl_divergence(&p, &q).unwrap();
            let qp = bi_kl_divergence(&q, &p).unwrap();
            proptest::prop_assert!((pq - qp).abs() < 1e-12);
        }

        #[test]
        fn illegal_mass_is_nonnegative(seed in 0u64..5000, len in 1usize..5, n in 1usize..4) {
            let s = space(n);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dists: Vec<Vec<f64>> = (0..len).map(|_| random_dist(&mut rng, s.size())).collect();
            let span = token_to_span(&dists, &s).unwrap();
            proptest::prop_assert!(span.illegal() >= 0.0);
            proptest::prop_assert!(span.probs().iter().all(|&p| p >= 0.0));
        }
    }
}
