//! Key-value memories and the retrieval procedures that read them.

use crate::error::{Error, Result};
use crate::numkit::{Mlp, Tape, Var};

/// Paired key and value rows living on a tape. Both matrices are absent
/// when the memory has no slots.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KeyValueMemory {
    pub keys: Option<Var>,
    pub values: Option<Var>,
    pub len: usize,
    pub key_dim: usize,
    pub value_dim: usize,
}

impl KeyValueMemory {
    pub fn empty(key_dim: usize, value_dim: usize) -> Self {
        Self {
            keys: None,
            values: None,
            len: 0,
            key_dim,
            value_dim,
        }
    }

    /// Wraps `[n, key_dim]` keys and `[n, value_dim]` values.
    pub fn from_matrices(tape: &Tape, keys: Var, values: Var) -> Result<Self> {
        let (ks, vs) = (tape.shape(keys), tape.shape(values));
        if ks.len() != 2 || vs.len() != 2 || ks[0] != vs[0] {
            return Err(Error::Shape(format!(
                "memory keys {ks:?} and values {vs:?} must be matrices with matching rows"
            )));
        }
        Ok(Self {
            keys: Some(keys),
            values: Some(values),
            len: ks[0],
            key_dim: ks[1],
            value_dim: vs[1],
        })
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Runs each representation through the key and value networks.
pub fn build_memory(tape: &mut Tape, reps: &[Var], key_mlp: &Mlp, value_mlp: &Mlp) -> Result<KeyValueMemory> {
    if reps.is_empty() {
        return Ok(KeyValueMemory::empty(key_mlp.output(), value_mlp.output()));
    }
    for &r in reps {
        if tape.shape(r) != [key_mlp.input()] || tape.shape(r) != [value_mlp.input()] {
            return Err(Error::Shape(format!(
                "memory representation of shape {:?} does not fit key/value inputs {}/{}",
                tape.shape(r),
                key_mlp.input(),
                value_mlp.input()
            )));
        }
    }
    let x = tape.stack(reps);
    let keys = key_mlp.forward(tape, x)?;
    let values = value_mlp.forward(tape, x)?;
    KeyValueMemory::from_matrices(tape, keys, values)
}

/// Output of one read.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Retrieval {
    pub output: Var,
    /// attention over slots; `None` for an empty memory
    pub weights: Option<Var>,
}

/// `o = Σ softmax(K q)_i c_i`. An empty memory reads as zeros.
pub fn retri(tape: &mut Tape, q: Var, mem: &KeyValueMemory) -> Result<Retrieval> {
    if tape.shape(q) != [mem.key_dim] {
        return Err(Error::Shape(format!(
            "query of shape {:?} against keys of dim {}",
            tape.shape(q),
            mem.key_dim
        )));
    }
    let (Some(keys), Some(values)) = (mem.keys, mem.values) else {
        return Ok(Retrieval {
            output: tape.zeros(&[mem.value_dim]),
            weights: None,
        });
    };
    let scores = tape.matmul(keys, q);
    let weights = tape.softmax(scores);
    let output = tape.matmul(weights, values);
    Ok(Retrieval {
        output,
        weights: Some(weights),
    })
}

/// Per-step record of the history-chained persona read.
#[derive(Clone, Debug, PartialEq)]
pub struct PirTrace {
    pub queries: Vec<Var>,
    pub outputs: Vec<Var>,
    /// sentence weights of the last step
    pub last_weights: Var,
}

/// `q_1 = C_1`, `q_i = C_i + o_{i-1}`, `o_i = retri(q_i, mem_s)`.
pub fn persona_information_retrieval(
    tape: &mut Tape,
    history: &[Var],
    mem_s: &KeyValueMemory,
) -> Result<(Var, PirTrace)> {
    if history.is_empty() {
        return Err(Error::Contract(
            "persona retrieval needs at least one history vector".into(),
        ));
    }
    if mem_s.is_empty() {
        return Err(Error::Contract(
            "persona retrieval over an empty sentence memory".into(),
        ));
    }
    if mem_s.key_dim != mem_s.value_dim {
        return Err(Error::Shape(format!(
            "chained retrieval needs key dim {} == value dim {}",
            mem_s.key_dim, mem_s.value_dim
        )));
    }
    let mut queries = Vec::with_capacity(history.len());
    let mut outputs: Vec<Var> = Vec::with_capacity(history.len());
    let mut last = None;
    for &c in history {
        let q = match outputs.last() {
            Some(&prev) => tape.add(c, prev),
            None => c,
        };
        let r = retri(tape, q, mem_s)?;
        queries.push(q);
        outputs.push(r.output);
        last = r.weights;
    }
    let o_k = *outputs.last().expect("non-empty history");
    Ok((
        o_k,
        PirTrace {
            queries,
            outputs,
            last_weights: last.expect("non-empty memory"),
        },
    ))
}

/// Result of the alternating word / external-word reads.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MultiHop {
    pub word: Retrieval,
    pub external: Retrieval,
    pub query: Var,
}

/// Repeats `o^w = retri(q, M^w)`, `o^e = retri(q, M^e)`, `q <- q + o^w + o^e`.
/// Returns the reads of the last hop and the final query.
pub fn multihop(
    tape: &mut Tape,
    q0: Var,
    mem_w: &KeyValueMemory,
    mem_e: &KeyValueMemory,
    hops: usize,
) -> Result<MultiHop> {
    if hops == 0 {
        return Err(Error::Contract("multihop needs at least one hop".into()));
    }
    for mem in [mem_w, mem_e] {
        if mem.value_dim != mem.key_dim {
            return Err(Error::Shape(format!(
                "additive query update needs key dim {} == value dim {}",
                mem.key_dim, mem.value_dim
            )));
        }
    }
    let mut q = q0;
    let mut last = None;
    for _ in 0..hops {
        let w = retri(tape, q, mem_w)?;
        let e = retri(tape, q, mem_e)?;
        let step = tape.add(w.output, e.output);
        q = tape.add(q, step);
        last = Some((w, e));
    }
    let (word, external) = last.expect("hops >= 1");
    Ok(MultiHop {
        word,
        external,
        query: q,
    })
}
