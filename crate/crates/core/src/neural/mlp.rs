use rand::Rng;

use super::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Weights and bias uniform in `+-1/sqrt(fan_in)`.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Linear {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = Tensor::from_fn(fan_in, fan_out, |_, _| rng.random_range(-bound..bound));
        let b = Tensor::from_fn(1, fan_out, |_, _| rng.random_range(-bound..bound));
        Linear {
            weight: store.add(format!("{name}.weight"), w),
            bias: store.add(format!("{name}.bias"), b),
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (w, b) = (g.param(self.weight), g.param(self.bias));
        g.linear(x, w, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl NormParams {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> NormParams {
        NormParams {
            gain: store.add(format!("{name}.gain"), Tensor::filled(1, width, 1.0)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(1, width)),
        }
    }
}

/// `linear -> layer norm -> GELU` twice, then an output linear layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    hidden: [(Linear, NormParams); 2],
    output: Linear,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        width: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Mlp {
        let l0 = Linear::new(store, &format!("{name}.0"), in_dim, width, rng);
        let n0 = NormParams::new(store, &format!("{name}.0.norm"), width);
        let l1 = Linear::new(store, &format!("{name}.1"), width, width, rng);
        let n1 = NormParams::new(store, &format!("{name}.1.norm"), width);
        let output = Linear::new(store, &format!("{name}.out"), width, out_dim, rng);
        Mlp {
            hidden: [(l0, n0), (l1, n1)],
            output,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.hidden[0].0.fan_in
    }

    pub fn out_dim(&self) -> usize {
        self.output.fan_out
    }

    pub fn output_layer(&self) -> &Linear {
        &self.output
    }

    /// Zeroes the output layer so the block initially returns zeros.
    pub fn zero_output(&self, store: &mut ParamStore) {
        store.tensor_mut(self.output.weight).data_mut().fill(0.0);
        store.tensor_mut(self.output.bias).data_mut().fill(0.0);
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (_, cols) = g.shape(x);
        if cols != self.in_dim() {
            return Err(Error::Shape {
                op: "mlp input",
                lhs: g.shape(x),
                rhs: (g.shape(x).0, self.in_dim()),
            });
        }
        let mut h = x;
        for (lin, norm) in &self.hidden {
            h = lin.forward(g, h)?;
            let (gain, bias) = (g.param(norm.gain), g.param(norm.bias));
            h = g.layer_norm(h, gain, bias)?;
            h = g.gelu(h);
        }
        self.output.forward(g, h)
    }
}
