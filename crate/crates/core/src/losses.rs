//! Training objectives: persona-sentence matching, persona bag-of-words and
//! token negative log-likelihood.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{content_tokens, Vocabulary};
use crate::error::{Error, Result};
use crate::numkit::{Tape, Tensor, Var};

/// Floor for every probability passed to a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// `|a ∩ b| / |a ∪ b|`, zero when both are empty.
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

fn content_set(tokens: &[String]) -> BTreeSet<&str> {
    content_tokens(tokens).map(String::as_str).collect()
}

/// 0/1 label per persona sentence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PMatchTarget {
    pub a: Vec<f64>,
}

impl PMatchTarget {
    pub fn positives(&self) -> impl Iterator<Item = usize> + '_ {
        self.a.iter().enumerate().filter(|(_, &x)| x > 0.0).map(|(i, _)| i)
    }
}

/// Labels sentence `i` with 1 when the Jaccard index of its content words
/// and the response's content words reaches `theta`.
pub fn p_match_targets(persona: &[Vec<String>], response: &[String], theta: f64) -> PMatchTarget {
    let y = content_set(response);
    let a = persona
        .iter()
        .map(|p| {
            let p = content_set(p);
            let union_empty = p.is_empty() && y.is_empty();
            if !union_empty && jaccard(&p, &y) >= theta {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    PMatchTarget { a }
}

/// `-Σ a_i log a^s_i`.
pub fn p_match_loss(tape: &mut Tape, weights: Var, target: &PMatchTarget) -> Result<Var> {
    if tape.shape(weights) != [target.a.len()] {
        return Err(Error::Shape(format!(
            "{} sentence labels for weights of shape {:?}",
            target.a.len(),
            tape.shape(weights)
        )));
    }
    let log_w = tape.log_clamped(weights, PROB_FLOOR);
    let a = tape.constant(Tensor::vector(target.a.clone()));
    let picked = tape.mul(log_w, a);
    let total = tape.sum(picked);
    Ok(tape.neg(total))
}

/// Bag-of-words target over the output vocabulary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PBowsTarget {
    pub b: Vec<f64>,
}

/// 1 for every content word of the response, `1 + lambda` when the word is
/// also a persona word, 0 elsewhere. Out-of-vocabulary words are ignored.
pub fn p_bows_targets(
    response: &[String],
    persona_words: &BTreeSet<String>,
    vocab: &Vocabulary,
    lambda: f64,
) -> PBowsTarget {
    let mut b = vec![0.0; vocab.len()];
    for tok in content_tokens(response) {
        if let Some(i) = vocab.get(tok) {
            b[i] = if persona_words.contains(tok) { 1.0 + lambda } else { 1.0 };
        }
    }
    PBowsTarget { b }
}

/// Persona words of a dialogue: content words of its persona sentences plus
/// its expansion list.
pub fn persona_word_set<'a>(persona: &[Vec<String>], expansion: impl IntoIterator<Item = &'a str>) -> BTreeSet<String> {
    persona
        .iter()
        .flat_map(|s| content_tokens(s).cloned())
        .chain(expansion.into_iter().map(str::to_string))
        .collect()
}

/// `p = sigmoid(Σ_t s̃_t)`, loss `-(1/|V|) Σ_i [b_i log p_i + (1 - b_i) log(1 - p_i)]`.
/// `activations` is `[T, |V|]`.
pub fn p_bows_loss(tape: &mut Tape, activations: Var, target: &PBowsTarget) -> Result<Var> {
    let shape = tape.shape(activations).to_vec();
    if shape.len() != 2 || shape[0] == 0 || shape[1] != target.b.len() {
        return Err(Error::Shape(format!(
            "bag-of-words target of size {} for activations {shape:?}",
            target.b.len()
        )));
    }
    let ones = tape.constant(Tensor::full(&[shape[0]], 1.0));
    let summed = tape.matmul(ones, activations);
    let p = tape.sigmoid(summed);
    let log_p = tape.log_clamped(p, PROB_FLOOR);
    let neg_p = tape.neg(p);
    let q = tape.add_scalar(neg_p, 1.0);
    let log_q = tape.log_clamped(q, PROB_FLOOR);
    let b = tape.constant(Tensor::vector(target.b.clone()));
    let not_b = tape.constant(Tensor::vector(target.b.iter().map(|x| 1.0 - x).collect()));
    let pos = tape.mul(log_p, b);
    let neg = tape.mul(log_q, not_b);
    let both = tape.add(pos, neg);
    let total = tape.sum(both);
    Ok(tape.scale(total, -1.0 / target.b.len() as f64))
}

/// `-(1/T) Σ_t log p_t[y_t]` for `[T, |V|]` probabilities.
pub fn nll_loss(tape: &mut Tape, probs: Var, targets: &[usize]) -> Result<Var> {
    let shape = tape.shape(probs).to_vec();
    if shape.len() != 2 || shape[0] != targets.len() || targets.is_empty() {
        return Err(Error::Shape(format!(
            "{} targets for probabilities {shape:?}",
            targets.len()
        )));
    }
    let v = shape[1];
    let mut onehot = vec![0.0; targets.len() * v];
    for (t, &y) in targets.iter().enumerate() {
        if y >= v {
            return Err(Error::Contract(format!("target id {y} outside vocabulary of {v}")));
        }
        onehot[t * v + y] = 1.0;
    }
    let mask = tape.constant(Tensor::new(shape, onehot)?);
    let picked = tape.mul(probs, mask);
    let ones = tape.constant(Tensor::full(&[v], 1.0));
    let per_step = tape.matmul(picked, ones);
    let logs = tape.log_clamped(per_step, PROB_FLOOR);
    let total = tape.sum(logs);
    Ok(tape.scale(total, -1.0 / targets.len() as f64))
}

/// `L = nll + γ1 · p_match + γ2 · p_bows`.
pub fn joint_loss(tape: &mut Tape, nll: Var, p_match: Var, p_bows: Var, gamma1: f64, gamma2: f64) -> Var {
    let m = tape.scale(p_match, gamma1);
    let b = tape.scale(p_bows, gamma2);
    let extra = tape.add(m, b);
    tape.add(nll, extra)
}
