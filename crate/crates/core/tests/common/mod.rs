#![allow(dead_code)]

use pee_core::corpus::{compute_tfidf, TfIdfDoc, Vocabulary};
use pee_core::topic::TopicConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CLUSTER_WORDS: usize = 25;

/// Word `i` belongs to cluster A when `i < 25`.
pub fn word(i: usize) -> String {
    if i < CLUSTER_WORDS {
        format!("alpha{i:02}")
    } else {
        format!("beta{:02}", i - CLUSTER_WORDS)
    }
}

pub fn in_cluster_a(token: &str) -> bool {
    token.starts_with("alpha")
}

/// 200 documents over a 50-word vocabulary, each drawing 20 tokens from one
/// of two disjoint 25-word clusters.
pub fn two_cluster_corpus(seed: u64) -> (Vocabulary, Vec<TfIdfDoc>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = Vocabulary::from_words((0..2 * CLUSTER_WORDS).map(word));
    let docs: Vec<Vec<String>> = (0..200)
        .map(|d| {
            let base = if d % 2 == 0 { 0 } else { CLUSTER_WORDS };
            (0..20)
                .map(|_| word(base + rng.random_range(0..CLUSTER_WORDS)))
                .collect()
        })
        .collect();
    let tfidf = compute_tfidf(&docs, &vocab);
    (vocab, tfidf)
}

pub fn two_cluster_config() -> TopicConfig {
    TopicConfig {
        topics: 2,
        hidden: 32,
        vocab_size: 50,
        epochs: 30,
        batch_size: 20,
        learning_rate: 5e-3,
    }
}

/// 3-epoch moving average; `true` when it never increases from epoch 3 on.
pub fn smoothed_non_increasing(trace: &[f64]) -> bool {
    let smooth: Vec<f64> = trace.windows(3).map(|w| w.iter().sum::<f64>() / 3.0).collect();
    smooth.windows(2).skip(1).all(|w| w[1] <= w[0])
}

/// Share of the majority cluster among `tokens`.
pub fn cluster_purity(tokens: &[String]) -> f64 {
    let a = tokens.iter().filter(|t| in_cluster_a(t)).count();
    a.max(tokens.len() - a) as f64 / tokens.len() as f64
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn count<T: PartialEq>(xs: &[T], x: &T) -> usize {
    xs.iter().filter(|y| *y == x).count()
}

/// Quadratic-time BLEU written straight from the definition.
pub fn bleu_brute(cands: &[Vec<String>], refs: &[Vec<String>], n: usize) -> f64 {
    let mut precisions = Vec::new();
    for order in 1..=n {
        let (mut hit, mut total) = (0.0, 0.0);
        for (c, r) in cands.iter().zip(refs) {
            let cg: Vec<&[String]> = if c.len() >= order {
                c.windows(order).collect()
            } else {
                vec![]
            };
            let rg: Vec<&[String]> = if r.len() >= order {
                r.windows(order).collect()
            } else {
                vec![]
            };
            let mut seen: Vec<&[String]> = Vec::new();
            for g in &cg {
                if seen.contains(g) {
                    continue;
                }
                seen.push(g);
                hit += count(&cg, g).min(count(&rg, g)) as f64;
            }
            total += cg.len() as f64;
        }
        precisions.push(if total == 0.0 { 0.0 } else { hit / total });
    }
    if precisions.contains(&0.0) {
        return 0.0;
    }
    let c: f64 = cands.iter().map(|x| x.len() as f64).sum();
    let r: f64 = refs.iter().map(|x| x.len() as f64).sum();
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    let geo = precisions.iter().map(|p| p.powf(1.0 / n as f64)).product::<f64>();
    100.0 * bp * geo
}

pub fn f1_brute(c: &[String], r: &[String]) -> f64 {
    let mut seen: Vec<&String> = Vec::new();
    let mut overlap = 0.0;
    for t in c {
        if !seen.contains(&t) {
            seen.push(t);
            overlap += count(c, t).min(count(r, t)) as f64;
        }
    }
    if overlap == 0.0 {
        return 0.0;
    }
    let p = overlap / c.len() as f64;
    let rr = overlap / r.len() as f64;
    2.0 * p * rr / (p + rr)
}

/// Short random sentences over a 6-word alphabet so n-grams collide often.
pub fn random_sentence_pairs(seed: u64, pairs: usize) -> Vec<(Vec<String>, Vec<String>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alphabet = ["the", "cat", "dog", "sat", "on", "mat"];
    let sentence = |rng: &mut ChaCha8Rng| -> Vec<String> {
        let len = rng.random_range(1..9);
        (0..len)
            .map(|_| alphabet[rng.random_range(0..alphabet.len())].to_string())
            .collect()
    };
    (0..pairs).map(|_| (sentence(&mut rng), sentence(&mut rng))).collect()
}

pub fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}
