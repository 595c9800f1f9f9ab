use rand::Rng;

use super::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// `y = x W + b` with `W: [input, output]`. Accepts a single vector or a
/// `[rows, input]` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub input: usize,
    pub output: usize,
}

impl Affine {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut R) -> Self {
        let mut layer = Self::linear(store, name, input, output, rng);
        layer.bias = Some(store.add_zeros(format!("{name}.bias"), &[output]));
        layer
    }

    /// `y = x W`, no bias.
    pub fn linear<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Self {
        let scale = 1.0 / (input as f64).sqrt();
        let weight = store.add_uniform(format!("{name}.weight"), &[input, output], scale, rng);
        Self {
            weight,
            bias: None,
            input,
            output,
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let cols = *tape.shape(x).last().expect("shape");
        if cols != self.input {
            return Err(Error::Shape(format!(
                "affine layer expects input dim {}, got {:?}",
                self.input,
                tape.shape(x)
            )));
        }
        let w = tape.param(self.weight);
        let xw = tape.matmul(x, w);
        Ok(match self.bias {
            Some(b) => {
                let b = tape.param(b);
                tape.add(xw, b)
            }
            None => xw,
        })
    }
}

/// Stack of affine layers with `tanh` between consecutive layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Affine>,
}

impl Mlp {
    /// `depth` affine layers, hidden widths equal to `output`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        depth: usize,
        rng: &mut R,
    ) -> Self {
        Self::build(store, name, input, output, depth, true, rng)
    }

    /// Same as [`Mlp::new`] with no bias on the last layer, for outputs
    /// whose constant offset cancels downstream.
    pub fn without_output_bias<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        depth: usize,
        rng: &mut R,
    ) -> Self {
        Self::build(store, name, input, output, depth, false, rng)
    }

    fn build<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        depth: usize,
        output_bias: bool,
        rng: &mut R,
    ) -> Self {
        assert!(depth >= 1, "mlp needs at least one layer");
        let layers = (0..depth)
            .map(|i| {
                let fan_in = if i == 0 { input } else { output };
                let name = format!("{name}.{i}");
                if i + 1 == depth && !output_bias {
                    Affine::linear(store, &name, fan_in, output, rng)
                } else {
                    Affine::new(store, &name, fan_in, output, rng)
                }
            })
            .collect();
        Self { layers }
    }

    pub fn input(&self) -> usize {
        self.layers[0].input
    }

    pub fn output(&self) -> usize {
        self.layers.last().expect("non-empty mlp").output
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                h = tape.tanh(h);
            }
            h = layer.forward(tape, h)?;
        }
        Ok(h)
    }
}
