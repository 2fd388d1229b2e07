//! Small trainable tagger: embeddings, a windowed tanh layer with inverted
//! dropout, an emission projection and a BIOES-constrained linear-chain CRF.

mod checkpoint;
pub mod crf;
pub mod optim;
mod vocab;

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use optim::AdamW;
pub use vocab::{Vocabulary, UNK, UNK_ID};

use crate::error::{Error, Result};
use crate::label_space::{decode_tags, DecodeMode, EntitySpan, LabelSpace, Tag};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaggerConfig {
    pub vocab_size: usize,
    pub d_emb: usize,
    /// Context half-width: each token sees `2 * window + 1` embeddings.
    pub window: usize,
    pub d_hid: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for TaggerConfig {
    fn default() -> Self {
        TaggerConfig {
            vocab_size: 1,
            d_emb: 32,
            window: 1,
            d_hid: 64,
            dropout: 0.1,
            seed: 0,
        }
    }
}

impl TaggerConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("vocab_size", self.vocab_size),
            ("d_emb", self.d_emb),
            ("d_hid", self.d_hid),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        (2 * self.window + 1) * self.d_emb
    }
}

/// All trainable weights. Matrices are row-major `[out][in]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaggerParameters {
    pub num_tags: usize,
    pub embeddings: Vec<f64>,
    pub hidden_w: Vec<f64>,
    pub hidden_b: Vec<f64>,
    pub emit_w: Vec<f64>,
    pub emit_b: Vec<f64>,
    /// `(num_tags + 2)²`, START = `num_tags`, STOP = `num_tags + 1`.
    pub transitions: Vec<f64>,
}

pub const NUM_BLOCKS: usize = 6;

impl TaggerParameters {
    pub fn blocks(&self) -> [&[f64]; NUM_BLOCKS] {
        [
            &self.embeddings,
            &self.hidden_w,
            &self.hidden_b,
            &self.emit_w,
            &self.emit_b,
            &self.transitions,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut [f64]; NUM_BLOCKS] {
        [
            &mut self.embeddings,
            &mut self.hidden_w,
            &mut self.hidden_b,
            &mut self.emit_w,
            &mut self.emit_b,
            &mut self.transitions,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|x| x.is_finite()))
    }
}

/// Weights uniform in `[-r, r]` with `r = 1/√fan_in`; biases and
/// transitions zero. An embedding lookup has fan-in 1.
pub fn init_parameters(config: &TaggerConfig, space: &LabelSpace, seed: u64) -> Result<TaggerParameters> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |n: usize, fan_in: usize| -> Vec<f64> {
        let r = 1.0 / (fan_in as f64).sqrt();
        (0..n).map(|_| rng.gen_range(-r..=r)).collect()
    };
    let t = space.size();
    Ok(TaggerParameters {
        num_tags: t,
        embeddings: uniform(config.vocab_size * config.d_emb, 1),
        hidden_w: uniform(config.d_hid * config.input_dim(), config.input_dim()),
        hidden_b: vec![0.0; config.d_hid],
        emit_w: uniform(t * config.d_hid, config.d_hid),
        emit_b: vec![0.0; t],
        transitions: vec![0.0; (t + 2) * (t + 2)],
    })
}

/// Gradient with the same layout as [`TaggerParameters`]; embedding rows
/// are stored sparsely.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    pub embeddings: BTreeMap<usize, Vec<f64>>,
    pub hidden_w: Vec<f64>,
    pub hidden_b: Vec<f64>,
    pub emit_w: Vec<f64>,
    pub emit_b: Vec<f64>,
    pub transitions: Vec<f64>,
}

impl Gradients {
    pub fn zeros(params: &TaggerParameters) -> Self {
        Gradients {
            embeddings: BTreeMap::new(),
            hidden_w: vec![0.0; params.hidden_w.len()],
            hidden_b: vec![0.0; params.hidden_b.len()],
            emit_w: vec![0.0; params.emit_w.len()],
            emit_b: vec![0.0; params.emit_b.len()],
            transitions: vec![0.0; params.transitions.len()],
        }
    }

    fn dense_mut(&mut self) -> [&mut Vec<f64>; 5] {
        [
            &mut self.hidden_w,
            &mut self.hidden_b,
            &mut self.emit_w,
            &mut self.emit_b,
            &mut self.transitions,
        ]
    }

    fn dense(&self) -> [&Vec<f64>; 5] {
        [
            &self.hidden_w,
            &self.hidden_b,
            &self.emit_w,
            &self.emit_b,
            &self.transitions,
        ]
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (dst, src) in self.dense_mut().into_iter().zip(other.dense()) {
            if dst.is_empty() {
                *dst = vec![0.0; src.len()];
            }
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
        for (&row, src) in &other.embeddings {
            let dst = self
                .embeddings
                .entry(row)
                .or_insert_with(|| vec![0.0; src.len()]);
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.dense().iter().all(|b| b.iter().all(|x| x.is_finite()))
            && self.embeddings.values().all(|r| r.iter().all(|x| x.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.dense()
            .into_iter()
            .flat_map(|b| b.iter())
            .chain(self.embeddings.values().flatten())
            .fold(0.0f64, |m, x| m.max(x.abs()))
    }

    /// Dense blocks in [`TaggerParameters::blocks`] order.
    pub fn to_dense(&self, params: &TaggerParameters) -> [Vec<f64>; NUM_BLOCKS] {
        let d_emb = if params.embeddings.is_empty() {
            0
        } else {
            self.embeddings.values().next().map_or(0, Vec::len)
        };
        let mut emb = vec![0.0; params.embeddings.len()];
        for (&row, g) in &self.embeddings {
            emb[row * d_emb..(row + 1) * d_emb].copy_from_slice(g);
        }
        let pad = |v: &Vec<f64>, n: usize| if v.is_empty() { vec![0.0; n] } else { v.clone() };
        [
            emb,
            pad(&self.hidden_w, params.hidden_w.len()),
            pad(&self.hidden_b, params.hidden_b.len()),
            pad(&self.emit_w, params.emit_w.len()),
            pad(&self.emit_b, params.emit_b.len()),
            pad(&self.transitions, params.transitions.len()),
        ]
    }
}

/// Activations kept from a forward pass for exact backpropagation.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub ids: Vec<usize>,
    pub inputs: Vec<Vec<f64>>,
    /// tanh outputs before dropout
    pub hidden: Vec<Vec<f64>>,
    /// per-unit multipliers: 0 or 1/(1-p); `None` when dropout was off
    pub masks: Option<Vec<Vec<f64>>>,
    pub logits: Vec<Vec<f64>>,
    pub probs: Vec<Vec<f64>>,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Pulls a gradient on softmax outputs back to the logits.
pub fn softmax_backward(probs: &[f64], d_probs: &[f64]) -> Vec<f64> {
    let dot: f64 = probs.iter().zip(d_probs).map(|(p, g)| p * g).sum();
    probs.iter().zip(d_probs).map(|(p, g)| p * (g - dot)).collect()
}

/// A tagger instance: configuration, label space, vocabulary and weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Tagger {
    pub config: TaggerConfig,
    pub space: LabelSpace,
    pub vocab: Vocabulary,
    pub params: TaggerParameters,
    mask: Vec<bool>,
}

impl Tagger {
    /// Fresh tagger initialized from `config.seed`; `config.vocab_size` is
    /// taken from `vocab`.
    pub fn new(mut config: TaggerConfig, space: LabelSpace, vocab: Vocabulary) -> Result<Self> {
        config.vocab_size = vocab.len();
        let params = init_parameters(&config, &space, config.seed)?;
        Ok(Self::from_parts(config, space, vocab, params))
    }

    pub fn from_parts(
        config: TaggerConfig,
        space: LabelSpace,
        vocab: Vocabulary,
        params: TaggerParameters,
    ) -> Self {
        let mask = crf::transition_mask(&space);
        Tagger {
            config,
            space,
            vocab,
            params,
            mask,
        }
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        self.vocab.encode(tokens)
    }

    /// Independent inverted-dropout masks for `n` tokens.
    pub fn draw_masks(&self, n: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
        let keep = 1.0 - self.config.dropout;
        (0..n)
            .map(|_| {
                (0..self.config.d_hid)
                    .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect()
            })
            .collect()
    }

    /// Deterministic forward pass without dropout.
    pub fn forward(&self, ids: &[usize]) -> Result<ForwardCache> {
        self.forward_masked(ids, None)
    }

    /// Forward pass with freshly drawn dropout masks.
    pub fn forward_dropout(&self, ids: &[usize], rng: &mut impl Rng) -> Result<ForwardCache> {
        let masks = self.draw_masks(ids.len(), rng);
        self.forward_masked(ids, Some(masks))
    }

    pub fn forward_masked(&self, ids: &[usize], masks: Option<Vec<Vec<f64>>>) -> Result<ForwardCache> {
        if ids.is_empty() {
            return Err(Error::invalid("cannot tag an empty sentence"));
        }
        let cfg = &self.config;
        let p = &self.params;
        let (d_emb, d_hid, t) = (cfg.d_emb, cfg.d_hid, p.num_tags);
        let in_dim = cfg.input_dim();
        let ids: Vec<usize> = ids
            .iter()
            .map(|&id| if id < cfg.vocab_size { id } else { UNK_ID })
            .collect();
        let n = ids.len();
        if let Some(m) = &masks {
            if m.len() != n || m.iter().any(|r| r.len() != d_hid) {
                return Err(Error::invalid("dropout mask shape mismatch"));
            }
        }

        let mut inputs = Vec::with_capacity(n);
        let mut hidden = Vec::with_capacity(n);
        let mut logits = Vec::with_capacity(n);
        let mut probs = Vec::with_capacity(n);
        for i in 0..n {
            let mut x = vec![0.0; in_dim];
            for (slot, off) in (-(cfg.window as isize)..=cfg.window as isize).enumerate() {
                let j = i as isize + off;
                if (0..n as isize).contains(&j) {
                    let id = ids[j as usize];
                    x[slot * d_emb..(slot + 1) * d_emb]
                        .copy_from_slice(&p.embeddings[id * d_emb..(id + 1) * d_emb]);
                }
            }
            let h: Vec<f64> = (0..d_hid)
                .map(|u| {
                    let row = &p.hidden_w[u * in_dim..(u + 1) * in_dim];
                    (p.hidden_b[u] + dot(row, &x)).tanh()
                })
                .collect();
            let hd: Vec<f64> = match &masks {
                Some(m) => h.iter().zip(&m[i]).map(|(a, b)| a * b).collect(),
                None => h.clone(),
            };
            let z: Vec<f64> = (0..t)
                .map(|k| p.emit_b[k] + dot(&p.emit_w[k * d_hid..(k + 1) * d_hid], &hd))
                .collect();
            probs.push(softmax(&z));
            logits.push(z);
            hidden.push(h);
            inputs.push(x);
        }
        Ok(ForwardCache {
            ids,
            inputs,
            hidden,
            masks,
            logits,
            probs,
        })
    }

    /// Backpropagates `d_logits` (one row per token) through the network.
    pub fn backward(&self, cache: &ForwardCache, d_logits: &[Vec<f64>], grads: &mut Gradients) {
        let cfg = &self.config;
        let p = &self.params;
        let (d_emb, d_hid, t) = (cfg.d_emb, cfg.d_hid, p.num_tags);
        let in_dim = cfg.input_dim();
        let n = cache.ids.len();
        if grads.hidden_w.is_empty() {
            *grads = Gradients::zeros(p);
        }
        let mut dhd = vec![0.0; d_hid];
        let mut dpre = vec![0.0; d_hid];
        let mut dx = vec![0.0; in_dim];
        for i in 0..n {
            let dl = &d_logits[i];
            if dl.iter().all(|&g| g == 0.0) {
                continue;
            }
            let h = &cache.hidden[i];
            let mask = cache.masks.as_ref().map(|m| &m[i]);
            dhd.fill(0.0);
            for k in 0..t {
                let g = dl[k];
                if g == 0.0 {
                    continue;
                }
                grads.emit_b[k] += g;
                let w = &p.emit_w[k * d_hid..(k + 1) * d_hid];
                let gw = &mut grads.emit_w[k * d_hid..(k + 1) * d_hid];
                for u in 0..d_hid {
                    let hd = mask.map_or(h[u], |m| h[u] * m[u]);
                    gw[u] += g * hd;
                    dhd[u] += g * w[u];
                }
            }
            for u in 0..d_hid {
                let dh = mask.map_or(dhd[u], |m| dhd[u] * m[u]);
                dpre[u] = dh * (1.0 - h[u] * h[u]);
            }
            dx.fill(0.0);
            let x = &cache.inputs[i];
            for u in 0..d_hid {
                let g = dpre[u];
                if g == 0.0 {
                    continue;
                }
                grads.hidden_b[u] += g;
                let w = &p.hidden_w[u * in_dim..(u + 1) * in_dim];
                let gw = &mut grads.hidden_w[u * in_dim..(u + 1) * in_dim];
                for k in 0..in_dim {
                    gw[k] += g * x[k];
                    dx[k] += g * w[k];
                }
            }
            for (slot, off) in (-(cfg.window as isize)..=cfg.window as isize).enumerate() {
                let j = i as isize + off;
                if (0..n as isize).contains(&j) {
                    let row = grads
                        .embeddings
                        .entry(cache.ids[j as usize])
                        .or_insert_with(|| vec![0.0; d_emb]);
                    for (r, g) in row.iter_mut().zip(&dx[slot * d_emb..(slot + 1) * d_emb]) {
                        *r += g;
                    }
                }
            }
        }
    }

    /// Transitions with BIOES-illegal entries set to `-inf`.
    pub fn masked_transitions(&self) -> Vec<f64> {
        crf::apply_mask(&self.params.transitions, &self.mask)
    }

    /// CRF negative log-likelihood of `gold` over the emission logits in
    /// `cache`; gradients are added into `grads` scaled by `scale`.
    pub fn crf_loss(
        &self,
        cache: &ForwardCache,
        gold: &[Tag],
        scale: f64,
        grads: &mut Gradients,
    ) -> Result<f64> {
        if gold.len() != cache.ids.len() {
            return Err(Error::invalid("gold tags and tokens differ in length"));
        }
        if gold.iter().any(|&t| !self.space.contains(t)) {
            return Err(Error::invalid("gold tag outside the label space"));
        }
        decode_tags(gold, DecodeMode::Strict)?;
        let gold_idx: Vec<usize> = gold.iter().map(|&t| self.space.index_of(t)).collect();
        let g = crf::crf_nll_and_gradient(&cache.logits, &self.masked_transitions(), &gold_idx)?;
        if grads.hidden_w.is_empty() {
            *grads = Gradients::zeros(&self.params);
        }
        for (dst, src) in grads.transitions.iter_mut().zip(&g.d_transitions) {
            *dst += scale * src;
        }
        let d_logits: Vec<Vec<f64>> = g
            .d_emissions
            .iter()
            .map(|r| r.iter().map(|x| scale * x).collect())
            .collect();
        self.backward(cache, &d_logits, grads);
        Ok(g.loss)
    }

    /// Backpropagates a gradient on the token distributions of `cache`.
    pub fn backward_probs(&self, cache: &ForwardCache, d_probs: &[Vec<f64>], grads: &mut Gradients) {
        let d_logits: Vec<Vec<f64>> = cache
            .probs
            .iter()
            .zip(d_probs)
            .map(|(p, g)| softmax_backward(p, g))
            .collect();
        self.backward(cache, &d_logits, grads);
    }

    pub fn predict_ids(&self, ids: &[usize]) -> Result<Vec<Tag>> {
        let cache = self.forward(ids)?;
        crf::viterbi_decode(&cache.logits, &self.params.transitions, &self.space)
    }

    pub fn predict(&self, tokens: &[String]) -> Result<Vec<Tag>> {
        self.predict_ids(&self.encode(tokens))
    }

    pub fn predict_spans(&self, tokens: &[String]) -> Result<Vec<EntitySpan>> {
        decode_tags(&self.predict(tokens)?, DecodeMode::Strict)
    }

    /// One AdamW step on accumulated gradients.
    pub fn apply_gradients(&mut self, grads: &Gradients, opt: &mut AdamW, lr: f64) -> Result<()> {
        let dense = grads.to_dense(&self.params);
        let refs: Vec<&[f64]> = dense.iter().map(Vec::as_slice).collect();
        let mut blocks = self.params.blocks_mut();
        opt.step(&mut blocks, &refs, lr)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label_space::EntityTypeSet;

    fn tiny(seed: u64) -> Tagger {
        let words: Vec<String> = (0..19).map(|i| format!("w{i}")).collect();
        let vocab = Vocabulary::build([&words]);
        let cfg = TaggerConfig {
            d_emb: 4,
            d_hid: 6,
            seed,
            ..TaggerConfig::default()
        };
        Tagger::new(cfg, LabelSpace::from_names(["PER", "LOC"]).unwrap(), vocab).unwrap()
    }

    #[test]
    fn init_is_seeded() {
        assert_eq!(tiny(3).params, tiny(3).params);
        assert_ne!(tiny(3).params, tiny(4).params);
        let bad = TaggerConfig {
            d_emb: 0,
            ..TaggerConfig::default()
        };
        let space = LabelSpace::new(EntityTypeSet::conll());
        assert!(matches!(init_parameters(&bad, &space, 0), Err(Error::InvalidConfig(_))));
        let bad = TaggerConfig {
            dropout: 1.0,
            ..TaggerConfig::default()
        };
        assert!(init_parameters(&bad, &space, 0).is_err());
    }

    #[test]
    fn forward_shapes_and_determinism() {
        let t = tiny(1);
        let ids = [1, 5, 7, 30];
        let a = t.forward(&ids).unwrap();
        let b = t.forward(&ids).unwrap();
        assert_eq!(a.probs, b.probs);
        assert_eq!(a.ids[3], UNK_ID);
        for p in &a.probs {
            assert_eq!(p.len(), 9);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(t.forward(&[]).is_err());
    }

    #[test]
    fn dropout_passes_differ() {
        let t = tiny(1);
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(2);
        let a = t.forward_dropout(&[1, 2, 3], &mut r1).unwrap();
        let b = t.forward_dropout(&[1, 2, 3], &mut r2).unwrap();
        assert_ne!(a.probs, b.probs);
    }

    #[test]
    fn softmax_backward_matches_finite_differences() {
        let z = [0.3, -1.0, 2.0];
        let g = [0.7, -0.2, 0.1];
        let analytic = softmax_backward(&softmax(&z), &g);
        let f = |z: &[f64]| softmax(z).iter().zip(&g).map(|(p, g)| p * g).sum::<f64>();
        for k in 0..3 {
            let (mut zp, mut zm) = (z, z);
            zp[k] += 1e-6;
            zm[k] -= 1e-6;
            assert!(((f(&zp) - f(&zm)) / 2e-6 - analytic[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn viterbi_output_is_legal() {
        let t = tiny(9);
        for s in 0..20 {
            let ids: Vec<usize> = (0..1 + s % 7).map(|i| (i * 7 + s) % 20).collect();
            decode_tags(&t.predict_ids(&ids).unwrap(), DecodeMode::Strict).unwrap();
        }
    }
}
