//! Linear-chain CRF over emission scores with START/STOP states.
//!
//! Transitions are a row-major `(T + 2) x (T + 2)` matrix indexed
//! `[from][to]`, where index `T` is START and `T + 1` is STOP. Entries may be
//! `-inf` to forbid a transition.

use crate::error::{Error, Result};
use crate::label_space::{can_follow, LabelSpace, Tag};

pub fn log_sum_exp(xs: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.into_iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn dims(emissions: &[Vec<f64>], transitions: &[f64]) -> Result<usize> {
    let t = emissions
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::invalid("CRF needs at least one token"))?;
    if t == 0 || emissions.iter().any(|e| e.len() != t) {
        return Err(Error::invalid("ragged or empty emission rows"));
    }
    if transitions.len() != (t + 2) * (t + 2) {
        return Err(Error::invalid(format!(
            "transition matrix has {} entries, expected {}",
            transitions.len(),
            (t + 2) * (t + 2)
        )));
    }
    Ok(t)
}

struct Lattice {
    /// alpha[i][j]: log-sum of all prefixes ending in tag j at token i
    alpha: Vec<Vec<f64>>,
    /// beta[i][j]: log-sum of all suffixes after tag j at token i, STOP included
    beta: Vec<Vec<f64>>,
    log_z: f64,
}

fn lattice(emissions: &[Vec<f64>], transitions: &[f64], t: usize, with_beta: bool) -> Lattice {
    let n = emissions.len();
    let w = t + 2;
    let (start, stop) = (t, t + 1);
    let tr = |from: usize, to: usize| transitions[from * w + to];

    let mut alpha = vec![vec![0.0; t]; n];
    for j in 0..t {
        alpha[0][j] = tr(start, j) + emissions[0][j];
    }
    for i in 1..n {
        for j in 0..t {
            let prev = &alpha[i - 1];
            alpha[i][j] = log_sum_exp((0..t).map(|k| prev[k] + tr(k, j))) + emissions[i][j];
        }
    }
    let log_z = log_sum_exp((0..t).map(|j| alpha[n - 1][j] + tr(j, stop)));

    let mut beta = Vec::new();
    if with_beta {
        beta = vec![vec![0.0; t]; n];
        for j in 0..t {
            beta[n - 1][j] = tr(j, stop);
        }
        for i in (0..n - 1).rev() {
            for j in 0..t {
                let next = &beta[i + 1];
                let e = &emissions[i + 1];
                beta[i][j] = log_sum_exp((0..t).map(|k| tr(j, k) + e[k] + next[k]));
            }
        }
    }
    Lattice { alpha, beta, log_z }
}

/// Log of the summed exponentiated scores of every tag path.
pub fn crf_log_partition(emissions: &[Vec<f64>], transitions: &[f64]) -> Result<f64> {
    let t = dims(emissions, transitions)?;
    Ok(lattice(emissions, transitions, t, false).log_z)
}

/// Score of one tag path, START and STOP transitions included.
pub fn path_score(emissions: &[Vec<f64>], transitions: &[f64], path: &[usize]) -> Result<f64> {
    let t = dims(emissions, transitions)?;
    if path.len() != emissions.len() || path.iter().any(|&p| p >= t) {
        return Err(Error::invalid("path length or tag index out of range"));
    }
    let w = t + 2;
    let mut score = transitions[t * w + path[0]] + transitions[path[path.len() - 1] * w + t + 1];
    for (i, &p) in path.iter().enumerate() {
        score += emissions[i][p];
        if i > 0 {
            score += transitions[path[i - 1] * w + p];
        }
    }
    Ok(score)
}

#[derive(Clone, Debug)]
pub struct CrfGradient {
    pub loss: f64,
    pub d_emissions: Vec<Vec<f64>>,
    pub d_transitions: Vec<f64>,
}

/// Negative log-likelihood of `gold` and its gradient: marginals minus the
/// gold indicator for emissions, expected minus observed counts for
/// transitions.
pub fn crf_nll_and_gradient(
    emissions: &[Vec<f64>],
    transitions: &[f64],
    gold: &[usize],
) -> Result<CrfGradient> {
    let t = dims(emissions, transitions)?;
    if emissions.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::TrainingDiverged {
            epoch: 0,
            step: 0,
            what: "non-finite emission scores".into(),
        });
    }
    let gold_score = path_score(emissions, transitions, gold)?;
    if !gold_score.is_finite() {
        return Err(Error::invalid("gold path uses a forbidden transition"));
    }
    let n = emissions.len();
    let w = t + 2;
    let (start, stop) = (t, t + 1);
    let lat = lattice(emissions, transitions, t, true);

    let mut d_emissions = vec![vec![0.0; t]; n];
    let mut d_transitions = vec![0.0; w * w];
    for i in 0..n {
        for j in 0..t {
            d_emissions[i][j] = (lat.alpha[i][j] + lat.beta[i][j] - lat.log_z).exp();
        }
    }
    for j in 0..t {
        d_transitions[start * w + j] += d_emissions[0][j];
        d_transitions[j * w + stop] += d_emissions[n - 1][j];
    }
    for i in 0..n - 1 {
        for j in 0..t {
            let a = lat.alpha[i][j];
            if a == f64::NEG_INFINITY {
                continue;
            }
            for k in 0..t {
                let tr = transitions[j * w + k];
                if tr == f64::NEG_INFINITY {
                    continue;
                }
                let lp = a + tr + emissions[i + 1][k] + lat.beta[i + 1][k] - lat.log_z;
                d_transitions[j * w + k] += lp.exp();
            }
        }
    }

    for (i, &g) in gold.iter().enumerate() {
        d_emissions[i][g] -= 1.0;
        if i > 0 {
            d_transitions[gold[i - 1] * w + g] -= 1.0;
        }
    }
    d_transitions[start * w + gold[0]] -= 1.0;
    d_transitions[gold[n - 1] * w + stop] -= 1.0;

    Ok(CrfGradient {
        loss: (lat.log_z - gold_score).max(0.0),
        d_emissions,
        d_transitions,
    })
}

/// Per-token tag marginals `P(y_i = j | x)`.
pub fn crf_marginals(emissions: &[Vec<f64>], transitions: &[f64]) -> Result<Vec<Vec<f64>>> {
    let t = dims(emissions, transitions)?;
    let lat = lattice(emissions, transitions, t, true);
    Ok(lat
        .alpha
        .iter()
        .zip(&lat.beta)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x + y - lat.log_z).exp()).collect())
        .collect())
}

/// `true` where `[from][to]` is allowed under BIOES, START/STOP included.
pub fn transition_mask(space: &LabelSpace) -> Vec<bool> {
    let t = space.size();
    let w = t + 2;
    let state = |i: usize| -> Option<Tag> { (i < t).then(|| space.tag(i)) };
    let mut mask = vec![false; w * w];
    for from in 0..w {
        for to in 0..w {
            mask[from * w + to] = match (from, to) {
                // nothing enters START, nothing leaves STOP
                (_, x) if x == t => false,
                (x, _) if x == t + 1 => false,
                (x, y) if x == t && y == t + 1 => false,
                _ => can_follow(state(from), state(to)),
            };
        }
    }
    mask
}

pub fn apply_mask(transitions: &[f64], mask: &[bool]) -> Vec<f64> {
    transitions
        .iter()
        .zip(mask)
        .map(|(&x, &ok)| if ok { x } else { f64::NEG_INFINITY })
        .collect()
}

/// Highest-scoring tag-index path; ties go to the lowest tag index.
pub fn viterbi_indices(emissions: &[Vec<f64>], transitions: &[f64]) -> Result<Vec<usize>> {
    let t = dims(emissions, transitions)?;
    let n = emissions.len();
    let w = t + 2;
    let (start, stop) = (t, t + 1);
    let mut score: Vec<f64> = (0..t).map(|j| transitions[start * w + j] + emissions[0][j]).collect();
    let mut back = vec![vec![0usize; t]; n];
    for i in 1..n {
        let mut next = vec![f64::NEG_INFINITY; t];
        for j in 0..t {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for (k, &s) in score.iter().enumerate() {
                let v = s + transitions[k * w + j];
                if v > best {
                    best = v;
                    arg = k;
                }
            }
            next[j] = best + emissions[i][j];
            back[i][j] = arg;
        }
        score = next;
    }
    let mut best = f64::NEG_INFINITY;
    let mut last = 0;
    for (j, &s) in score.iter().enumerate() {
        let v = s + transitions[j * w + stop];
        if v > best {
            best = v;
            last = j;
        }
    }
    let mut path = vec![last; n];
    for i in (1..n).rev() {
        path[i - 1] = back[i][path[i]];
    }
    Ok(path)
}

/// Viterbi decoding restricted to BIOES-legal paths.
pub fn viterbi_decode(
    emissions: &[Vec<f64>],
    transitions: &[f64],
    space: &LabelSpace,
) -> Result<Vec<Tag>> {
    if emissions.first().is_some_and(|e| e.len() != space.size()) {
        return Err(Error::invalid("emission width does not match label space"));
    }
    let masked = apply_mask(transitions, &transition_mask(space));
    Ok(viterbi_indices(emissions, &masked)?
        .into_iter()
        .map(|i| space.tag(i))
        .collect())
}
