use rand::Rng;

use super::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// Weights of one GRU cell:
///
/// ```text
/// z  = sigmoid(x W_z + h U_z + b_z)
/// r  = sigmoid(x W_r + h U_r + b_r)
/// n  = tanh(x W_n + (r * h) U_n + b_n)
/// h' = (1 - z) * h + z * n
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct GruParams {
    pub input: usize,
    pub hidden: usize,
    pub w_z: ParamId,
    pub w_r: ParamId,
    pub w_n: ParamId,
    pub u_z: ParamId,
    pub u_r: ParamId,
    pub u_n: ParamId,
    pub b_z: ParamId,
    pub b_r: ParamId,
    pub b_n: ParamId,
}

impl GruParams {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let s = 1.0 / (hidden as f64).sqrt();
        let mut mat = |part: &str, rows: usize| store.add_uniform(format!("{name}.{part}"), &[rows, hidden], s, rng);
        let (w_z, w_r, w_n) = (mat("w_z", input), mat("w_r", input), mat("w_n", input));
        let (u_z, u_r, u_n) = (mat("u_z", hidden), mat("u_r", hidden), mat("u_n", hidden));
        let b_z = store.add_zeros(format!("{name}.b_z"), &[hidden]);
        let b_r = store.add_zeros(format!("{name}.b_r"), &[hidden]);
        let b_n = store.add_zeros(format!("{name}.b_n"), &[hidden]);
        Self {
            input,
            hidden,
            w_z,
            w_r,
            w_n,
            u_z,
            u_r,
            u_n,
            b_z,
            b_r,
            b_n,
        }
    }

    pub fn param_ids(&self) -> [ParamId; 9] {
        [
            self.w_z, self.w_r, self.w_n, self.u_z, self.u_r, self.u_n, self.b_z, self.b_r, self.b_n,
        ]
    }
}

fn gate(tape: &mut Tape, x: Var, h: Var, w: ParamId, u: ParamId, b: ParamId) -> Var {
    let (w, u, b) = (tape.param(w), tape.param(u), tape.param(b));
    let xw = tape.matmul(x, w);
    let hu = tape.matmul(h, u);
    let s = tape.add(xw, hu);
    tape.add(s, b)
}

pub fn gru_cell(tape: &mut Tape, x: Var, h: Var, p: &GruParams) -> Result<Var> {
    if tape.shape(x) != [p.input] || tape.shape(h) != [p.hidden] {
        return Err(Error::Shape(format!(
            "gru cell ({} -> {}) got x {:?}, h {:?}",
            p.input,
            p.hidden,
            tape.shape(x),
            tape.shape(h)
        )));
    }
    let z_pre = gate(tape, x, h, p.w_z, p.u_z, p.b_z);
    let z = tape.sigmoid(z_pre);
    let r_pre = gate(tape, x, h, p.w_r, p.u_r, p.b_r);
    let r = tape.sigmoid(r_pre);
    let rh = tape.mul(r, h);
    let n_pre = gate(tape, x, rh, p.w_n, p.u_n, p.b_n);
    let n = tape.tanh(n_pre);
    let delta = tape.sub(n, h);
    let step = tape.mul(z, delta);
    Ok(tape.add(h, step))
}

/// Per-step states of a bidirectional pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BiGruOutput {
    /// `[forward_i ; backward_i]` for each position, dimension `2H`
    pub steps: Vec<Var>,
    /// `[forward_last ; backward_first]`: each direction's final state
    pub final_state: Var,
}

pub fn bigru_encode(tape: &mut Tape, seq: &[Var], fwd: &GruParams, bwd: &GruParams) -> Result<BiGruOutput> {
    if seq.is_empty() {
        return Err(Error::Contract("bigru_encode on an empty sequence".into()));
    }
    if fwd.hidden != bwd.hidden {
        return Err(Error::Shape(format!(
            "direction hidden sizes differ: {} vs {}",
            fwd.hidden, bwd.hidden
        )));
    }
    let mut forward = Vec::with_capacity(seq.len());
    let mut h = tape.zeros(&[fwd.hidden]);
    for &x in seq {
        h = gru_cell(tape, x, h, fwd)?;
        forward.push(h);
    }
    let mut backward = vec![h; seq.len()];
    let mut h = tape.zeros(&[bwd.hidden]);
    for (i, &x) in seq.iter().enumerate().rev() {
        h = gru_cell(tape, x, h, bwd)?;
        backward[i] = h;
    }
    let steps = forward
        .iter()
        .zip(&backward)
        .map(|(&f, &b)| tape.concat(&[f, b]))
        .collect();
    let final_state = tape.concat(&[*forward.last().expect("non-empty"), backward[0]]);
    Ok(BiGruOutput { steps, final_state })
}
