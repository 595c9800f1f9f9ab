//! Variational topic model over tf-idf document vectors.
//!
//! Encoder: `h = softplus(v W_h + b_h)`, `mu = h W_mu + b_mu`,
//! `log_var = h W_sigma + b_sigma`. Decoder: `h' = softplus(z W_h' + b_h')`,
//! `v' = softmax(h' W + b_v)`. The decoder output weights `W` (`K x |V'|`)
//! double as the word-topic matrix: column `w` is the topic-space
//! representation of word `w`.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::{TfIdfDoc, Vocabulary};
use crate::error::{Error, Result};
use crate::numkit::{adam_step, AdamConfig, AdamState, Affine, ParamStore, Tape, Tensor, Var, CLIP_NORM};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopicConfig {
    /// number of topics K
    pub topics: usize,
    /// encoder hidden width
    pub hidden: usize,
    /// word count of the topic vocabulary, reserved tokens excluded
    pub vocab_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for TopicConfig {
    fn default() -> Self {
        Self {
            topics: 50,
            hidden: 256,
            vocab_size: 10_000,
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TopicModel {
    pub store: ParamStore,
    pub vocab: Vocabulary,
    pub topics: usize,
    pub hidden: usize,
    pub f_h: Affine,
    pub f_mu: Affine,
    pub f_sigma: Affine,
    pub f_h_prime: Affine,
    pub f_v: Affine,
}

/// Encoder outputs for one document (or a batch of rows).
#[derive(Clone, Copy, Debug)]
pub struct TopicEncoding {
    pub mu: Var,
    pub log_var: Var,
    pub hidden: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct ElboTerms {
    /// reconstruction + KL, summed over rows
    pub loss: Var,
    pub reconstruction: Var,
    pub kl: Var,
}

/// A column of the word-topic matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicWordVector {
    pub token: String,
    pub u: Vec<f64>,
}

impl TopicModel {
    pub fn new<R: Rng + ?Sized>(vocab: Vocabulary, topics: usize, hidden: usize, rng: &mut R) -> Self {
        let dim = vocab.len();
        let mut store = ParamStore::new();
        let f_h = Affine::new(&mut store, "topic.f_h", dim, hidden, rng);
        let f_mu = Affine::new(&mut store, "topic.f_mu", hidden, topics, rng);
        let f_sigma = Affine::new(&mut store, "topic.f_sigma", hidden, topics, rng);
        let f_h_prime = Affine::new(&mut store, "topic.f_h_prime", topics, topics, rng);
        let f_v = Affine::new(&mut store, "topic.f_v", topics, dim, rng);
        Self {
            store,
            vocab,
            topics,
            hidden,
            f_h,
            f_mu,
            f_sigma,
            f_h_prime,
            f_v,
        }
    }

    /// Input dimension: vocabulary size including the (always zero) reserved slots.
    pub fn input_dim(&self) -> usize {
        self.vocab.len()
    }

    pub fn encode(&self, tape: &mut Tape, v: Var) -> Result<TopicEncoding> {
        let pre = self.f_h.forward(tape, v)?;
        let hidden = tape.softplus(pre);
        let mu = self.f_mu.forward(tape, hidden)?;
        let log_var = self.f_sigma.forward(tape, hidden)?;
        Ok(TopicEncoding { mu, log_var, hidden })
    }

    pub fn decode_logits(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        let pre = self.f_h_prime.forward(tape, z)?;
        let h = tape.softplus(pre);
        self.f_v.forward(tape, h)
    }

    /// Reconstruction distribution over the topic vocabulary.
    pub fn decode(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        let logits = self.decode_logits(tape, z)?;
        Ok(tape.softmax(logits))
    }

    /// Negative ELBO: `-Σ_w v_w log v'_w + KL(N(mu, sigma²) || N(0, I))`,
    /// summed over the rows of `v`. `noise` is the standard-normal draw
    /// used for reparameterisation, shaped like `mu`.
    pub fn elbo_loss(&self, tape: &mut Tape, v: &Tensor, noise: &Tensor) -> Result<ElboTerms> {
        let input = tape.constant(v.clone());
        let enc = self.encode(tape, input)?;
        if tape.shape(enc.mu) != noise.shape() {
            return Err(Error::Shape(format!(
                "noise shape {:?} does not match latent {:?}",
                noise.shape(),
                tape.shape(enc.mu)
            )));
        }
        let eps = tape.constant(noise.clone());
        let z = reparameterize(tape, enc.mu, enc.log_var, eps);
        let logits = self.decode_logits(tape, z)?;
        let reconstruction = tape.cross_entropy(logits, v);
        let kl = gaussian_kl(tape, enc.mu, enc.log_var);
        let loss = tape.add(reconstruction, kl);
        Ok(ElboTerms {
            loss,
            reconstruction,
            kl,
        })
    }

    /// Word-topic matrix `W` as `[K, |V'|]`.
    pub fn word_topic_matrix(&self) -> &Tensor {
        self.store.get(self.f_v.weight)
    }

    /// Column of `W` for every non-reserved word of the topic vocabulary.
    pub fn word_topic_vectors(&self) -> BTreeMap<String, TopicWordVector> {
        let w = self.word_topic_matrix();
        let cols = w.cols();
        self.vocab
            .words()
            .map(|(idx, tok)| {
                let u = (0..self.topics).map(|k| w.data()[k * cols + idx]).collect();
                (
                    tok.to_string(),
                    TopicWordVector {
                        token: tok.to_string(),
                        u,
                    },
                )
            })
            .collect()
    }

    /// The `n` words with the largest weight in row `topic` of `W`.
    pub fn top_words(&self, topic: usize, n: usize) -> Vec<String> {
        let w = self.word_topic_matrix();
        let row = w.row(topic);
        let mut words: Vec<(usize, &str)> = self.vocab.words().collect();
        words.sort_by(|a, b| row[b.0].total_cmp(&row[a.0]).then_with(|| a.1.cmp(b.1)));
        words.into_iter().take(n).map(|(_, t)| t.to_string()).collect()
    }
}

/// `z = mu + exp(0.5 · log_var) · eps`.
pub fn reparameterize(tape: &mut Tape, mu: Var, log_var: Var, eps: Var) -> Var {
    let half = tape.scale(log_var, 0.5);
    let sigma = tape.exp(half);
    let noise = tape.mul(sigma, eps);
    tape.add(mu, noise)
}

/// Closed-form `KL(N(mu, exp(log_var)) || N(0, I))` summed over all entries.
pub fn gaussian_kl(tape: &mut Tape, mu: Var, log_var: Var) -> Var {
    let mu2 = tape.mul(mu, mu);
    let var = tape.exp(log_var);
    let a = tape.add_scalar(log_var, 1.0);
    let b = tape.sub(a, mu2);
    let c = tape.sub(b, var);
    let s = tape.sum(c);
    tape.scale(s, -0.5)
}

fn dense_batch(docs: &[&TfIdfDoc], dim: usize) -> Tensor {
    let mut data = Vec::with_capacity(docs.len() * dim);
    for d in docs {
        data.extend(d.dense(dim));
    }
    Tensor::matrix(docs.len(), dim, data).expect("batch shape")
}

fn normal_tensor<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::matrix(rows, cols, data).expect("noise shape")
}

/// Trains a topic model by Adam on shuffled mini-batches of the mean
/// negative ELBO. Returns the model and the per-epoch mean loss.
pub fn train_topic_model<R: Rng + ?Sized>(
    docs: &[TfIdfDoc],
    vocab: Vocabulary,
    config: &TopicConfig,
    rng: &mut R,
) -> Result<(TopicModel, Vec<f64>)> {
    if docs.is_empty() {
        return Err(Error::Contract("topic model needs at least one document".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("topic batch_size must be positive".into()));
    }
    let mut model = TopicModel::new(vocab, config.topics, config.hidden, rng);
    let dim = model.input_dim();
    if let Some(bad) = docs.iter().flat_map(|d| d.weights.keys()).find(|&&i| i >= dim) {
        return Err(Error::Shape(format!("tf-idf index {bad} outside vocabulary of {dim}")));
    }
    let adam = AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new(adam, &model.store);
    let mut order: Vec<usize> = (0..docs.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for (batch_no, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&TfIdfDoc> = chunk.iter().map(|&i| &docs[i]).collect();
            let v = dense_batch(&batch, dim);
            let noise = normal_tensor(rng, batch.len(), config.topics);
            let mut grads = {
                let mut tape = Tape::new(&model.store);
                let terms = model.elbo_loss(&mut tape, &v, &noise)?;
                let sum = tape.item(terms.loss);
                if !sum.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "topic loss at epoch {epoch}, batch {batch_no}: reconstruction {}, kl {}",
                        tape.item(terms.reconstruction),
                        tape.item(terms.kl)
                    )));
                }
                total += sum;
                let mean = tape.scale(terms.loss, 1.0 / batch.len() as f64);
                tape.backward(mean)?
            };
            grads.clip_global_norm(CLIP_NORM);
            adam_step(&mut model.store, &grads, &mut state)?;
        }
        let mean = total / docs.len() as f64;
        log::debug!("topic epoch {epoch}: mean loss {mean:.6}");
        trace.push(mean);
    }
    Ok((model, trace))
}
