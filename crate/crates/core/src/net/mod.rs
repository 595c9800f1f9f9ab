//! The response generator: persona and history encoders, the decoder with
//! history attention and multi-hop persona reads, and its training loss.

mod search;

pub use search::{generate, Generation, SearchMode, StepDiagnostics};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{DialogueExample, EmbeddingTable, Vocabulary, EOS_ID, NUM_RESERVED, SOS_ID, UNK_ID};
use crate::error::{Error, Result};
use crate::expansion::ExpansionResult;
use crate::losses::{
    joint_loss, nll_loss, p_bows_loss, p_bows_targets, p_match_loss, p_match_targets, persona_word_set, PBowsTarget,
    PMatchTarget,
};
use crate::memory::{build_memory, multihop, persona_information_retrieval, KeyValueMemory, PirTrace};
use crate::numkit::{bigru_encode, gru_cell, Affine, GruParams, Mlp, ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    /// word embedding width
    pub embed_dim: usize,
    /// per-direction hidden width of the bidirectional encoders
    pub encoder_hidden: usize,
    /// decoder state width, shared by every memory key and value
    pub hidden: usize,
    /// inner width of the history attention
    pub attention: usize,
    /// layers in each key / value network
    pub mlp_depth: usize,
    pub hops: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            embed_dim: 300,
            encoder_hidden: 256,
            hidden: 512,
            attention: 512,
            mlp_depth: 2,
            hops: 3,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("embed_dim", self.embed_dim),
            ("encoder_hidden", self.encoder_hidden),
            ("hidden", self.hidden),
            ("attention", self.attention),
            ("mlp_depth", self.mlp_depth),
            ("hops", self.hops),
        ];
        match dims.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(Error::Config(format!("model {name} must be positive"))),
            None => Ok(()),
        }
    }
}

/// Token ids for one training or inference instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelInput {
    pub persona: Vec<Vec<usize>>,
    pub history: Vec<Vec<usize>>,
    /// expanded words present in the model vocabulary
    pub expansion: Vec<usize>,
}

fn ids_or_unk(vocab: &Vocabulary, tokens: &[String]) -> Vec<usize> {
    if tokens.is_empty() {
        vec![UNK_ID]
    } else {
        vocab.encode(tokens)
    }
}

impl ModelInput {
    /// Empty utterances become a lone UNK so every recurrent pass has input.
    pub fn new(
        vocab: &Vocabulary,
        persona: &[Vec<String>],
        history: &[Vec<String>],
        expansion: Option<&ExpansionResult>,
    ) -> Self {
        let expansion = expansion
            .map(|e| {
                e.tokens()
                    .filter_map(|t| vocab.get(t))
                    .filter(|&i| i >= NUM_RESERVED)
                    .collect()
            })
            .unwrap_or_default();
        Self {
            persona: persona.iter().map(|s| ids_or_unk(vocab, s)).collect(),
            history: history.iter().map(|s| ids_or_unk(vocab, s)).collect(),
            expansion,
        }
    }
}

/// Everything the joint loss needs for one example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub input: ModelInput,
    /// response ids followed by EOS
    pub targets: Vec<usize>,
    pub p_match: PMatchTarget,
    pub p_bows: PBowsTarget,
}

impl TrainingExample {
    pub fn new(
        vocab: &Vocabulary,
        example: &DialogueExample,
        expansion: Option<&ExpansionResult>,
        theta: f64,
        lambda: f64,
    ) -> Self {
        let mut targets = vocab.encode(&example.response);
        targets.push(EOS_ID);
        let persona_words = persona_word_set(&example.persona, expansion.into_iter().flat_map(|e| e.tokens()));
        Self {
            input: ModelInput::new(vocab, &example.persona, &example.history, expansion),
            targets,
            p_match: p_match_targets(&example.persona, &example.response, theta),
            p_bows: p_bows_targets(&example.response, &persona_words, vocab, lambda),
        }
    }
}

/// Loss weights of the joint objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub gamma1: f64,
    pub gamma2: f64,
    pub lambda: f64,
    pub theta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            gamma1: 0.1,
            gamma2: 0.1,
            lambda: 1.0,
            theta: 0.03,
        }
    }
}

/// Encoded persona: sentence memory, word memory and the raw encodings.
#[derive(Clone, Debug)]
pub struct PersonaEncoding {
    pub sentences: KeyValueMemory,
    pub words: KeyValueMemory,
    pub sentence_reps: Vec<Var>,
    pub word_reps: Vec<Var>,
}

/// Encoded dialogue history.
#[derive(Clone, Debug)]
pub struct HistoryEncoding {
    /// final state of the utterance-level encoder
    pub e_x: Var,
    /// per-utterance outputs of the utterance-level encoder
    pub context: Vec<Var>,
    /// `context` projected to the memory width
    pub queries: Vec<Var>,
    /// word-level states of every history token, `[n, 2H]`
    pub word_states: Var,
}

/// Read-only encoder results shared by every decoding step.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub persona: PersonaEncoding,
    pub history: HistoryEncoding,
    pub external: KeyValueMemory,
    pub pir: PirTrace,
    pub s0: Var,
}

/// Outputs of one decoder step.
#[derive(Clone, Copy, Debug)]
pub struct DecodeStep {
    pub state: Var,
    /// output-layer activations before the softmax
    pub logits: Var,
    pub probs: Var,
    pub history_attention: Var,
    pub word_weights: Option<Var>,
    pub external_weights: Option<Var>,
}

/// Scalar parts of the joint loss.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    pub nll: Var,
    pub p_match: Var,
    pub p_bows: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PeeModel {
    pub store: ParamStore,
    pub vocab: Vocabulary,
    pub config: NetConfig,
    pub src_embed: ParamId,
    pub tgt_embed: ParamId,
    pub persona_fwd: GruParams,
    pub persona_bwd: GruParams,
    pub sent_key: Mlp,
    pub sent_value: Mlp,
    pub word_key: Mlp,
    pub word_value: Mlp,
    pub ext_key: Mlp,
    pub ext_value: Mlp,
    pub word_fwd: GruParams,
    pub word_bwd: GruParams,
    pub utt_fwd: GruParams,
    pub utt_bwd: GruParams,
    pub context_proj: Affine,
    pub init: Affine,
    pub att_ws: ParamId,
    pub att_wt: ParamId,
    pub att_b: ParamId,
    pub att_v: ParamId,
    pub decoder: GruParams,
    pub out: Affine,
}

impl PeeModel {
    pub fn new<R: Rng + ?Sized>(vocab: Vocabulary, config: NetConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut s = ParamStore::new();
        let (v, e, h, d, a) = (
            vocab.len(),
            config.embed_dim,
            config.encoder_hidden,
            config.hidden,
            config.attention,
        );
        let depth = config.mlp_depth;
        let src_embed = s.add_uniform("embed.source", &[v, e], 0.1, rng);
        let tgt_embed = s.add_uniform("embed.target", &[v, e], 0.1, rng);
        let persona_fwd = GruParams::new(&mut s, "persona.fwd", e, h, rng);
        let persona_bwd = GruParams::new(&mut s, "persona.bwd", e, h, rng);
        let sent_key = Mlp::without_output_bias(&mut s, "memory.sentence.key", 2 * h, d, depth, rng);
        let sent_value = Mlp::new(&mut s, "memory.sentence.value", 2 * h, d, depth, rng);
        let word_key = Mlp::without_output_bias(&mut s, "memory.word.key", 2 * h, d, depth, rng);
        let word_value = Mlp::new(&mut s, "memory.word.value", 2 * h, d, depth, rng);
        let ext_key = Mlp::without_output_bias(&mut s, "memory.external.key", e, d, depth, rng);
        let ext_value = Mlp::new(&mut s, "memory.external.value", e, d, depth, rng);
        let word_fwd = GruParams::new(&mut s, "history.word.fwd", e, h, rng);
        let word_bwd = GruParams::new(&mut s, "history.word.bwd", e, h, rng);
        let utt_fwd = GruParams::new(&mut s, "history.utterance.fwd", 2 * h, h, rng);
        let utt_bwd = GruParams::new(&mut s, "history.utterance.bwd", 2 * h, h, rng);
        let context_proj = Affine::new(&mut s, "history.project", 2 * h, d, rng);
        let init = Affine::new(&mut s, "decoder.init", 2 * h + d, d, rng);
        let att_ws = s.add_uniform("attention.w_s", &[d, a], 1.0 / (d as f64).sqrt(), rng);
        let att_wt = s.add_uniform("attention.w_t", &[2 * h, a], 1.0 / (2.0 * h as f64).sqrt(), rng);
        let att_b = s.add_zeros("attention.b", &[a]);
        let att_v = s.add_uniform("attention.v", &[a], 1.0 / (a as f64).sqrt(), rng);
        let decoder = GruParams::new(&mut s, "decoder.gru", e, d, rng);
        let out = Affine::new(&mut s, "decoder.out", d + 2 * h + 2 * d, v, rng);
        Ok(Self {
            store: s,
            vocab,
            config,
            src_embed,
            tgt_embed,
            persona_fwd,
            persona_bwd,
            sent_key,
            sent_value,
            word_key,
            word_value,
            ext_key,
            ext_value,
            word_fwd,
            word_bwd,
            utt_fwd,
            utt_bwd,
            context_proj,
            init,
            att_ws,
            att_wt,
            att_b,
            att_v,
            decoder,
            out,
        })
    }

    /// Copies pretrained vectors into both embedding tables. Returns how
    /// many vocabulary words were covered.
    pub fn load_pretrained(&mut self, table: &EmbeddingTable) -> Result<usize> {
        if table.dim != self.config.embed_dim {
            return Err(Error::Config(format!(
                "embedding table has dim {}, model expects {}",
                table.dim, self.config.embed_dim
            )));
        }
        let e = self.config.embed_dim;
        let mut covered = 0;
        for (i, tok) in self.vocab.words() {
            if let Some(vec) = table.get(tok) {
                covered += 1;
                for id in [self.src_embed, self.tgt_embed] {
                    self.store.get_mut(id).data_mut()[i * e..(i + 1) * e].copy_from_slice(vec);
                }
            }
        }
        Ok(covered)
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        match ids.iter().find(|&&i| i >= self.vocab.len()) {
            Some(bad) => Err(Error::Contract(format!(
                "token id {bad} outside vocabulary of {}",
                self.vocab.len()
            ))),
            None => Ok(()),
        }
    }

    fn embed_seq(&self, tape: &mut Tape, table: ParamId, ids: &[usize]) -> Result<Vec<Var>> {
        if ids.is_empty() {
            return Err(Error::Contract("cannot embed an empty token sequence".into()));
        }
        self.check_ids(ids)?;
        let t = tape.param(table);
        let m = tape.embedding(t, ids);
        Ok((0..ids.len()).map(|i| tape.row(m, i)).collect())
    }

    /// Sentence memory from each sentence's final Bi-GRU state, word memory
    /// from every per-token state.
    pub fn encode_persona(&self, tape: &mut Tape, persona: &[Vec<usize>]) -> Result<PersonaEncoding> {
        if persona.is_empty() {
            return Err(Error::Contract("persona has no sentences".into()));
        }
        let mut sentence_reps = Vec::with_capacity(persona.len());
        let mut word_reps = Vec::new();
        for sent in persona {
            let xs = self.embed_seq(tape, self.src_embed, sent)?;
            let enc = bigru_encode(tape, &xs, &self.persona_fwd, &self.persona_bwd)?;
            sentence_reps.push(enc.final_state);
            word_reps.extend(enc.steps);
        }
        let sentences = build_memory(tape, &sentence_reps, &self.sent_key, &self.sent_value)?;
        let words = build_memory(tape, &word_reps, &self.word_key, &self.word_value)?;
        Ok(PersonaEncoding {
            sentences,
            words,
            sentence_reps,
            word_reps,
        })
    }

    /// Word-level Bi-GRU per utterance, then an utterance-level Bi-GRU over
    /// the utterance vectors.
    pub fn encode_history(&self, tape: &mut Tape, history: &[Vec<usize>]) -> Result<HistoryEncoding> {
        if history.is_empty() {
            return Err(Error::Contract("history has no utterances".into()));
        }
        let mut sentence_vecs = Vec::with_capacity(history.len());
        let mut word_states = Vec::new();
        for utt in history {
            let xs = self.embed_seq(tape, self.src_embed, utt)?;
            let enc = bigru_encode(tape, &xs, &self.word_fwd, &self.word_bwd)?;
            sentence_vecs.push(enc.final_state);
            word_states.extend(enc.steps);
        }
        let upper = bigru_encode(tape, &sentence_vecs, &self.utt_fwd, &self.utt_bwd)?;
        let queries = upper
            .steps
            .iter()
            .map(|&c| self.context_proj.forward(tape, c))
            .collect::<Result<Vec<_>>>()?;
        let word_states = tape.stack(&word_states);
        Ok(HistoryEncoding {
            e_x: upper.final_state,
            context: upper.steps,
            queries,
            word_states,
        })
    }

    /// External-word memory over source embeddings of the expansion.
    pub fn encode_external(&self, tape: &mut Tape, expansion: &[usize]) -> Result<KeyValueMemory> {
        if expansion.is_empty() {
            return Ok(KeyValueMemory::empty(self.config.hidden, self.config.hidden));
        }
        let xs = self.embed_seq(tape, self.src_embed, expansion)?;
        build_memory(tape, &xs, &self.ext_key, &self.ext_value)
    }

    /// `s_0 = init([e_X ; o_k])`.
    pub fn init_state(&self, tape: &mut Tape, e_x: Var, o_k: Var) -> Result<Var> {
        let x = tape.concat(&[e_x, o_k]);
        self.init.forward(tape, x)
    }

    /// `a = softmax_j(v · tanh(W_s s + W_t h_j + b))`, returns `(Σ a_j h_j, a)`.
    pub fn attend_history(&self, tape: &mut Tape, s: Var, word_states: Var) -> Result<(Var, Var)> {
        let h2 = 2 * self.config.encoder_hidden;
        let ws = tape.shape(word_states);
        if ws.len() != 2 || ws[1] != h2 || ws[0] == 0 {
            return Err(Error::Shape(format!("word states {ws:?}, expected [n, {h2}]")));
        }
        let (w_s, w_t, b, v) = (
            tape.param(self.att_ws),
            tape.param(self.att_wt),
            tape.param(self.att_b),
            tape.param(self.att_v),
        );
        let sq = tape.matmul(s, w_s);
        let hq = tape.matmul(word_states, w_t);
        let pre = tape.add(hq, sq);
        let pre = tape.add(pre, b);
        let act = tape.tanh(pre);
        let scores = tape.matmul(act, v);
        let a = tape.softmax(scores);
        let u = tape.matmul(a, word_states);
        Ok((u, a))
    }

    /// Runs all encoders and the persona retrieval.
    pub fn encode(&self, tape: &mut Tape, input: &ModelInput) -> Result<Encoded> {
        let persona = self.encode_persona(tape, &input.persona)?;
        let history = self.encode_history(tape, &input.history)?;
        let external = self.encode_external(tape, &input.expansion)?;
        let (o_k, pir) = persona_information_retrieval(tape, &history.queries, &persona.sentences)?;
        let s0 = self.init_state(tape, history.e_x, o_k)?;
        Ok(Encoded {
            persona,
            history,
            external,
            pir,
            s0,
        })
    }

    pub fn decode_step(&self, tape: &mut Tape, prev: usize, state: Var, enc: &Encoded) -> Result<DecodeStep> {
        let x = self.embed_seq(tape, self.tgt_embed, &[prev])?[0];
        let s = gru_cell(tape, x, state, &self.decoder)?;
        let (u, att) = self.attend_history(tape, s, enc.history.word_states)?;
        let hop = multihop(tape, s, &enc.persona.words, &enc.external, self.config.hops)?;
        let feat = tape.concat(&[s, u, hop.word.output, hop.external.output]);
        let logits = self.out.forward(tape, feat)?;
        let probs = tape.softmax(logits);
        Ok(DecodeStep {
            state: s,
            logits,
            probs,
            history_attention: att,
            word_weights: hop.word.weights,
            external_weights: hop.external.weights,
        })
    }

    /// Teacher-forced joint loss of one example.
    pub fn loss(&self, tape: &mut Tape, ex: &TrainingExample, w: &LossWeights) -> Result<LossParts> {
        if ex.targets.is_empty() {
            return Err(Error::Contract("example without target tokens".into()));
        }
        let enc = self.encode(tape, &ex.input)?;
        let mut state = enc.s0;
        let mut prev = SOS_ID;
        let mut logits = Vec::with_capacity(ex.targets.len());
        for &y in &ex.targets {
            let step = self.decode_step(tape, prev, state, &enc)?;
            logits.push(step.logits);
            state = step.state;
            prev = y;
        }
        let logits = tape.stack(&logits);
        let probs = tape.softmax(logits);
        let nll = nll_loss(tape, probs, &ex.targets)?;
        let p_match = p_match_loss(tape, enc.pir.last_weights, &ex.p_match)?;
        let p_bows = p_bows_loss(tape, logits, &ex.p_bows)?;
        let total = joint_loss(tape, nll, p_match, p_bows, w.gamma1, w.gamma2);
        Ok(LossParts {
            total,
            nll,
            p_match,
            p_bows,
        })
    }

    /// Last-step persona sentence weights for an input.
    pub fn persona_weights(&self, input: &ModelInput) -> Result<Vec<f64>> {
        let mut tape = Tape::new(&self.store);
        let enc = self.encode(&mut tape, input)?;
        Ok(tape.value(enc.pir.last_weights).data().to_vec())
    }

    /// Replaces every parameter with the same-named one from `other`.
    pub fn load_params(&mut self, named: &[(String, Tensor)]) -> Result<()> {
        self.store.load_named(named)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> PeeModel {
        let vocab = Vocabulary::from_words(["a", "b", "c", "d"]);
        let cfg = NetConfig {
            embed_dim: 3,
            encoder_hidden: 2,
            hidden: 4,
            attention: 3,
            mlp_depth: 1,
            hops: 2,
        };
        PeeModel::new(vocab, cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    #[test]
    fn zero_dimension_is_a_config_error() {
        let cfg = NetConfig {
            hops: 0,
            ..NetConfig::default()
        };
        let r = PeeModel::new(Vocabulary::from_words(["a"]), cfg, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn empty_inputs_are_rejected() {
        let m = tiny();
        let mut t = Tape::new(&m.store);
        assert!(m.encode_persona(&mut t, &[]).is_err());
        assert!(m.encode_history(&mut t, &[]).is_err());
        assert!(m.encode_persona(&mut t, &[vec![99]]).is_err());
    }

    #[test]
    fn out_of_range_previous_token() {
        let m = tiny();
        let input = ModelInput {
            persona: vec![vec![4]],
            history: vec![vec![5]],
            expansion: vec![],
        };
        let mut t = Tape::new(&m.store);
        let enc = m.encode(&mut t, &input).unwrap();
        assert!(m.decode_step(&mut t, 8, enc.s0, &enc).is_err());
        assert!(m.decode_step(&mut t, 7, enc.s0, &enc).is_ok());
    }

    #[test]
    fn empty_utterances_become_unk() {
        let m = tiny();
        let input = ModelInput::new(&m.vocab, &[vec![]], &[vec!["zz".into()], vec![]], None);
        assert_eq!(input.persona, vec![vec![UNK_ID]]);
        assert_eq!(input.history, vec![vec![UNK_ID], vec![UNK_ID]]);
    }

    #[test]
    fn expansion_skips_unknown_words() {
        let m = tiny();
        let e = ExpansionResult {
            conversation: 0,
            words: vec![("c".into(), 0.9), ("zz".into(), 0.8), ("a".into(), 0.1)],
        };
        let input = ModelInput::new(&m.vocab, &[vec!["a".into()]], &[vec!["b".into()]], Some(&e));
        assert_eq!(input.expansion, vec![6, 4]);
    }

    #[test]
    fn parameter_names_are_unique() {
        let m = tiny();
        let mut names: Vec<&str> = m.store.iter().map(|(_, p)| p.name.as_str()).collect();
        let n = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), n);
    }
}
