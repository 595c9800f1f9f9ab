//! Persona exploration: extends a dialogue's persona vocabulary with the
//! words closest to it in topic space.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{is_stop_word, DialogueExample, Vocabulary};
use crate::error::{Error, Result};
use crate::topic::TopicWordVector;

pub type WordVectors = BTreeMap<String, TopicWordVector>;

/// Expanded words for one conversation, best first.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExpansionResult {
    pub conversation: usize,
    pub words: Vec<(String, f64)>,
}

impl ExpansionResult {
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(|(t, _)| t.as_str())
    }
}

/// Non-stop-word persona tokens that belong to the topic vocabulary.
pub fn persona_vocab(persona: &[Vec<String>], topic_vocab: &Vocabulary) -> BTreeSet<String> {
    persona
        .iter()
        .flatten()
        .filter(|t| !is_stop_word(t) && topic_vocab.contains(t))
        .cloned()
        .collect()
}

pub fn example_persona_vocab(example: &DialogueExample, topic_vocab: &Vocabulary) -> BTreeSet<String> {
    persona_vocab(&example.persona, topic_vocab)
}

/// Cosine similarity; zero when either vector is all zeros.
pub fn cosine(u1: &[f64], u2: &[f64]) -> f64 {
    assert_eq!(u1.len(), u2.len(), "cosine of vectors with different dims");
    let dot: f64 = u1.iter().zip(u2).map(|(a, b)| a * b).sum();
    let n1 = u1.iter().map(|a| a * a).sum::<f64>().sqrt();
    let n2 = u2.iter().map(|b| b * b).sum::<f64>().sqrt();
    if n1 == 0.0 || n2 == 0.0 {
        0.0
    } else {
        (dot / (n1 * n2)).clamp(-1.0, 1.0)
    }
}

fn rank(scored: &mut [(String, f64)]) {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
}

/// The `m` words most similar to `word`, skipping `word` itself and every
/// token in `exclude`. Ordered by score, then token.
pub fn nearest_words(
    word: &str,
    vectors: &WordVectors,
    m: usize,
    exclude: &BTreeSet<String>,
) -> Result<Vec<(String, f64)>> {
    let seed = vectors.get(word).ok_or_else(|| Error::UnknownToken(word.to_string()))?;
    let mut scored: Vec<(String, f64)> = vectors
        .values()
        .filter(|v| v.token != word && !exclude.contains(&v.token))
        .map(|v| (v.token.clone(), cosine(&seed.u, &v.u)))
        .collect();
    rank(&mut scored);
    scored.truncate(m);
    Ok(scored)
}

/// Union of the `m` nearest neighbours of every persona word, keeping each
/// word's best score, truncated to the `n_w` highest.
pub fn expand_persona(
    persona_words: &BTreeSet<String>,
    vectors: &WordVectors,
    m: usize,
    n_w: usize,
) -> Result<Vec<(String, f64)>> {
    let mut best: BTreeMap<String, f64> = BTreeMap::new();
    for w in persona_words {
        for (tok, score) in nearest_words(w, vectors, m, persona_words)? {
            let slot = best.entry(tok).or_insert(f64::NEG_INFINITY);
            if score > *slot {
                *slot = score;
            }
        }
    }
    let mut ranked: Vec<(String, f64)> = best.into_iter().collect();
    rank(&mut ranked);
    ranked.truncate(n_w);
    Ok(ranked)
}

/// Expansion for the conversation an example belongs to.
pub fn expand(
    example: &DialogueExample,
    topic_vocab: &Vocabulary,
    vectors: &WordVectors,
    m: usize,
    n_w: usize,
) -> Result<ExpansionResult> {
    let persona = example_persona_vocab(example, topic_vocab);
    Ok(ExpansionResult {
        conversation: example.conversation,
        words: expand_persona(&persona, vectors, m, n_w)?,
    })
}
