use serde::{Deserialize, Serialize};

use super::{Encoded, ModelInput, PeeModel};
use crate::corpus::{EOS_ID, SOS_ID};
use crate::error::{Error, Result};
use crate::numkit::{Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMode {
    Greedy,
    Beam(usize),
}

/// Attention read out at one decoding step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub history: Vec<f64>,
    pub word_memory: Vec<f64>,
    pub external_memory: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    /// emitted ids, ending with EOS when the hypothesis finished
    pub ids: Vec<usize>,
    /// sum of log-probabilities of `ids`
    pub score: f64,
    /// last-step persona sentence weights
    pub persona_weights: Vec<f64>,
    pub steps: Vec<StepDiagnostics>,
}

impl Generation {
    /// Emitted ids without the closing EOS.
    pub fn response_ids(&self) -> &[usize] {
        match self.ids.last() {
            Some(&EOS_ID) => &self.ids[..self.ids.len() - 1],
            _ => &self.ids,
        }
    }
}

#[derive(Clone)]
struct Hyp {
    ids: Vec<usize>,
    score: f64,
    state: Var,
    steps: Vec<StepDiagnostics>,
}

fn weights(tape: &Tape, v: Option<Var>) -> Vec<f64> {
    v.map(|v| tape.value(v).data().to_vec()).unwrap_or_default()
}

/// Greedy decoding is beam search of width one: both pick the highest
/// scoring token, lowest id first on ties.
pub fn generate(model: &PeeModel, input: &ModelInput, mode: SearchMode, max_len: usize) -> Result<Generation> {
    if max_len == 0 {
        return Err(Error::Contract("max_len must be at least 1".into()));
    }
    let width = match mode {
        SearchMode::Greedy => 1,
        SearchMode::Beam(0) => return Err(Error::Config("beam width must be positive".into())),
        SearchMode::Beam(w) => w,
    };
    let mut tape = Tape::new(&model.store);
    let enc = model.encode(&mut tape, input)?;
    let persona_weights = tape.value(enc.pir.last_weights).data().to_vec();
    let (ids, score, steps) = beam(model, &mut tape, &enc, width, max_len)?;
    Ok(Generation {
        ids,
        score,
        persona_weights,
        steps,
    })
}

type Best = (Vec<usize>, f64, Vec<StepDiagnostics>);

fn beam(model: &PeeModel, tape: &mut Tape, enc: &Encoded, width: usize, max_len: usize) -> Result<Best> {
    let mut active = vec![Hyp {
        ids: Vec::new(),
        score: 0.0,
        state: enc.s0,
        steps: Vec::new(),
    }];
    let mut finished: Vec<Hyp> = Vec::new();
    for _ in 0..max_len {
        // (score, hypothesis index, token) for every extension
        let mut cands: Vec<(f64, usize, usize)> = Vec::new();
        let mut expanded = Vec::with_capacity(active.len());
        for (h, hyp) in active.iter().enumerate() {
            let prev = hyp.ids.last().copied().unwrap_or(SOS_ID);
            let step = model.decode_step(tape, prev, hyp.state, enc)?;
            let probs = tape.value(step.probs).data();
            cands.extend(probs.iter().enumerate().map(|(tok, &p)| (hyp.score + p.ln(), h, tok)));
            let diag = StepDiagnostics {
                history: tape.value(step.history_attention).data().to_vec(),
                word_memory: weights(tape, step.word_weights),
                external_memory: weights(tape, step.external_weights),
            };
            expanded.push((step.state, diag));
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut next = Vec::with_capacity(width);
        for &(score, h, tok) in cands.iter().take(width) {
            let mut hyp = active[h].clone();
            hyp.ids.push(tok);
            hyp.score = score;
            hyp.state = expanded[h].0;
            hyp.steps.push(expanded[h].1.clone());
            if tok == EOS_ID {
                finished.push(hyp);
            } else {
                next.push(hyp);
            }
        }
        active = next;
        let best_done = finished.iter().map(|h| h.score).fold(f64::NEG_INFINITY, f64::max);
        let best_open = active.iter().map(|h| h.score).fold(f64::NEG_INFINITY, f64::max);
        // scores only fall as hypotheses grow
        if active.is_empty() || best_done >= best_open {
            break;
        }
    }
    finished.extend(active);
    let best = finished
        .into_iter()
        .reduce(|a, b| if b.score > a.score { b } else { a })
        .expect("at least one hypothesis");
    Ok((best.ids, best.score, best.steps))
}
