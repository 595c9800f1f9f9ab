//! Automatic response metrics.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{content_tokens, EmbeddingTable};
use crate::expansion::cosine;

fn ngrams(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for g in tokens.windows(n) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU with uniform weights over orders `1..=n` and the brevity
/// penalty, as a percentage. One reference per candidate.
pub fn bleu_n(candidates: &[Vec<String>], references: &[Vec<String>], n: usize) -> f64 {
    assert_eq!(candidates.len(), references.len(), "bleu: candidate/reference count");
    assert!((1..=4).contains(&n), "bleu order must be 1..=4");
    let mut log_sum = 0.0;
    for order in 1..=n {
        let (mut matched, mut total) = (0usize, 0usize);
        for (c, r) in candidates.iter().zip(references) {
            let rc = ngrams(r, order);
            for (g, k) in ngrams(c, order) {
                matched += k.min(rc.get(g).copied().unwrap_or(0));
                total += k;
            }
        }
        if matched == 0 {
            return 0.0;
        }
        log_sum += (matched as f64 / total as f64).ln();
    }
    let c: usize = candidates.iter().map(Vec::len).sum();
    let r: usize = references.iter().map(Vec::len).sum();
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    100.0 * bp * (log_sum / n as f64).exp()
}

/// Harmonic mean of multiset precision and recall.
pub fn f1_tokens(candidate: &[String], reference: &[String]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let mut rc: HashMap<&str, usize> = HashMap::new();
    for t in reference {
        *rc.entry(t).or_insert(0) += 1;
    }
    let mut overlap = 0;
    for t in candidate {
        if let Some(k) = rc.get_mut(t.as_str()) {
            if *k > 0 {
                *k -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / candidate.len() as f64;
    let r = overlap as f64 / reference.len() as f64;
    2.0 * p * r / (p + r)
}

fn embedded<'a>(tokens: &[String], table: &'a EmbeddingTable) -> Vec<&'a [f64]> {
    tokens.iter().filter_map(|t| table.get(t)).collect()
}

fn mean_vector(vs: &[&[f64]]) -> Vec<f64> {
    let mut m = vec![0.0; vs[0].len()];
    for v in vs {
        for (a, b) in m.iter_mut().zip(*v) {
            *a += b;
        }
    }
    m.iter_mut().for_each(|a| *a /= vs.len() as f64);
    m
}

fn extrema_vector(vs: &[&[f64]]) -> Vec<f64> {
    (0..vs[0].len())
        .map(|d| {
            vs.iter()
                .map(|v| v[d])
                .fold(0.0, |best: f64, x| if x.abs() > best.abs() { x } else { best })
        })
        .collect()
}

fn sentence_score(
    candidate: &[String],
    reference: &[String],
    table: &EmbeddingTable,
    f: impl Fn(&[&[f64]], &[&[f64]]) -> f64,
) -> f64 {
    let c = embedded(candidate, table);
    let r = embedded(reference, table);
    if c.is_empty() || r.is_empty() {
        0.0
    } else {
        f(&c, &r)
    }
}

/// Cosine of the mean word vectors.
pub fn emb_average(candidate: &[String], reference: &[String], table: &EmbeddingTable) -> f64 {
    sentence_score(candidate, reference, table, |c, r| {
        cosine(&mean_vector(c), &mean_vector(r))
    })
}

/// Cosine of the per-dimension extreme values.
pub fn emb_extrema(candidate: &[String], reference: &[String], table: &EmbeddingTable) -> f64 {
    sentence_score(candidate, reference, table, |c, r| {
        cosine(&extrema_vector(c), &extrema_vector(r))
    })
}

/// Greedy word matching averaged over both directions.
pub fn emb_greedy(candidate: &[String], reference: &[String], table: &EmbeddingTable) -> f64 {
    fn one_way(a: &[&[f64]], b: &[&[f64]]) -> f64 {
        a.iter()
            .map(|x| b.iter().map(|y| cosine(x, y)).fold(f64::NEG_INFINITY, f64::max))
            .sum::<f64>()
            / a.len() as f64
    }
    sentence_score(candidate, reference, table, |c, r| {
        (one_way(c, r) + one_way(r, c)) / 2.0
    })
}

/// Share of distinct persona content words that show up in any of the
/// generated responses. Zero when the persona has no content words.
pub fn persona_use_ratio(persona: &[Vec<String>], responses: &[Vec<String>]) -> f64 {
    let words: BTreeSet<&String> = persona.iter().flat_map(content_tokens).collect();
    if words.is_empty() {
        return 0.0;
    }
    let said: BTreeSet<&String> = responses.iter().flatten().collect();
    words.iter().filter(|w| said.contains(*w)).count() as f64 / words.len() as f64
}

/// One scored response.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub conversation: usize,
    pub persona: Vec<Vec<String>>,
    pub candidate: Vec<String>,
    pub reference: Vec<String>,
}

/// Corpus-level scores.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(rename = "BLEU1")]
    pub bleu1: f64,
    #[serde(rename = "BLEU2")]
    pub bleu2: f64,
    #[serde(rename = "BLEU3")]
    pub bleu3: f64,
    #[serde(rename = "BLEU4")]
    pub bleu4: f64,
    #[serde(rename = "F1")]
    pub f1: f64,
    #[serde(rename = "Average")]
    pub emb_average: f64,
    #[serde(rename = "Extrema")]
    pub emb_extrema: f64,
    #[serde(rename = "Greedy")]
    pub emb_greedy: f64,
    pub persona_use_ratio: f64,
}

/// BLEU is pooled over the corpus; F1 and the embedding scores are means
/// over items; the persona use ratio is a mean over conversations. Without
/// an embedding table the embedding scores are 0.
pub fn evaluate(items: &[EvalItem], table: Option<&EmbeddingTable>) -> EvalReport {
    if items.is_empty() {
        return EvalReport::default();
    }
    let cands: Vec<Vec<String>> = items.iter().map(|i| i.candidate.clone()).collect();
    let refs: Vec<Vec<String>> = items.iter().map(|i| i.reference.clone()).collect();
    let n = items.len() as f64;
    let mean = |f: &dyn Fn(&EvalItem) -> f64| items.iter().map(f).sum::<f64>() / n;
    let (avg, ext, greedy) = match table {
        Some(t) => (
            mean(&|i| emb_average(&i.candidate, &i.reference, t)),
            mean(&|i| emb_extrema(&i.candidate, &i.reference, t)),
            mean(&|i| emb_greedy(&i.candidate, &i.reference, t)),
        ),
        None => (0.0, 0.0, 0.0),
    };
    type PersonaAndResponses<'a> = (&'a [Vec<String>], Vec<Vec<String>>);
    let mut by_conv: BTreeMap<usize, PersonaAndResponses> = BTreeMap::new();
    for i in items {
        by_conv
            .entry(i.conversation)
            .or_insert_with(|| (&i.persona, Vec::new()))
            .1
            .push(i.candidate.clone());
    }
    let use_ratio = by_conv.values().map(|(p, rs)| persona_use_ratio(p, rs)).sum::<f64>() / by_conv.len() as f64;
    EvalReport {
        bleu1: bleu_n(&cands, &refs, 1),
        bleu2: bleu_n(&cands, &refs, 2),
        bleu3: bleu_n(&cands, &refs, 3),
        bleu4: bleu_n(&cands, &refs, 4),
        f1: mean(&|i| f1_tokens(&i.candidate, &i.reference)),
        emb_average: avg,
        emb_extrema: ext,
        emb_greedy: greedy,
        persona_use_ratio: use_ratio,
    }
}
