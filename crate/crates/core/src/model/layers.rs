//! Parameterized building blocks shared by every stage of the network.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

/// Parameter handles of one forward pass, indexed by [`ParamId`].
#[derive(Clone, Copy)]
pub struct Bound<'a>(pub &'a [Var]);

impl Bound<'_> {
    pub fn get(&self, id: ParamId) -> Var {
        self.0[id.index()]
    }
}

/// Registers parameters in a fixed order with seeded initial values.
pub(crate) struct Init<'a> {
    pub store: &'a mut ParamStore,
    pub rng: ChaCha8Rng,
}

impl Init<'_> {
    /// uniform(-sqrt(1/fan_in), +sqrt(1/fan_in))
    pub fn uniform(&mut self, name: String, shape: &[usize], fan_in: usize) -> ParamId {
        let bound = (1.0 / fan_in as f64).sqrt();
        let rng = &mut self.rng;
        let t = Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound));
        self.store.add(name, t)
    }

    pub fn constant(&mut self, name: String, shape: &[usize], value: f64) -> ParamId {
        self.store.add(name, Tensor::full(shape, value))
    }

    pub fn linear(&mut self, name: &str, d_in: usize, d_out: usize) -> Linear {
        Linear {
            weight: self.uniform(format!("{name}.weight"), &[d_in, d_out], d_in),
            bias: self.uniform(format!("{name}.bias"), &[d_out], d_in),
        }
    }

    pub fn conv(&mut self, name: &str, c_in: usize, c_out: usize, k: usize, stride: usize) -> Conv {
        let fan_in = c_in * k * k;
        let bound = (6.0 / fan_in as f64).sqrt();
        let rng = &mut self.rng;
        let weight = Tensor::from_fn(&[c_out, c_in, k, k], |_| rng.gen_range(-bound..bound));
        Conv {
            // He-uniform: the stub is a plain ReLU stack trained from scratch
            weight: self.store.add(format!("{name}.weight"), weight),
            bias: self.uniform(format!("{name}.bias"), &[c_out], fan_in),
            stride,
        }
    }

    pub fn layer_norm(&mut self, name: &str, d: usize) -> LayerNorm {
        LayerNorm {
            gamma: self.constant(format!("{name}.gamma"), &[d], 1.0),
            beta: self.constant(format!("{name}.beta"), &[d], 0.0),
        }
    }

    pub fn attention(&mut self, name: &str, d: usize, n_head: usize) -> Attention {
        Attention {
            q: self.linear(&format!("{name}.q"), d, d),
            k: self.linear(&format!("{name}.k"), d, d),
            v: self.linear(&format!("{name}.v"), d, d),
            out: self.linear(&format!("{name}.out"), d, d),
            n_head,
        }
    }

    pub fn feed_forward(&mut self, name: &str, d: usize) -> FeedForward {
        FeedForward {
            up: self.linear(&format!("{name}.up"), d, 4 * d),
            down: self.linear(&format!("{name}.down"), 4 * d, d),
        }
    }
}

/// `y = x·W + b` over the last axis; `W` is stored `[in, out]`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn apply(&self, tape: &mut Tape, p: Bound, x: Var) -> Result<Var> {
        let y = tape.matmul(x, p.get(self.weight))?;
        tape.add(y, p.get(self.bias))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
}

impl Conv {
    pub fn apply(&self, tape: &mut Tape, p: Bound, x: Var) -> Result<Var> {
        tape.conv2d(x, p.get(self.weight), p.get(self.bias), self.stride)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn apply(&self, tape: &mut Tape, p: Bound, x: Var) -> Result<Var> {
        tape.layer_norm(x, p.get(self.gamma), p.get(self.beta))
    }
}

/// Multi-head scaled dot-product attention over `[B, L, D]` sequences.
#[derive(Clone, Copy, Debug)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub n_head: usize,
}

impl Attention {
    /// `[B, L, D]` -> `[B, heads, L, D/heads]`
    fn split_heads(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        let (b, l, d) = (s[0], s[1], s[2]);
        let x = tape.reshape(x, &[b, l, self.n_head, d / self.n_head])?;
        tape.permute(x, &[0, 2, 1, 3])
    }

    /// Returns the attended output `[B, Lq, D]` and the weights `[B, heads, Lq, Lk]`.
    pub fn apply_with_weights(
        &self,
        tape: &mut Tape,
        p: Bound,
        query: Var,
        key: Var,
        value: Var,
    ) -> Result<(Var, Var)> {
        let s = tape.shape(query).to_vec();
        let (b, lq, d) = (s[0], s[1], s[2]);
        let dh = d / self.n_head;

        let q = self.q.apply(tape, p, query)?;
        let k = self.k.apply(tape, p, key)?;
        let v = self.v.apply(tape, p, value)?;
        let q = self.split_heads(tape, q)?;
        let k = self.split_heads(tape, k)?;
        let v = self.split_heads(tape, v)?;

        let kt = tape.transpose_last(k)?;
        let scores = tape.matmul(q, kt)?;
        let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
        let weights = tape.softmax_last(scores)?;
        let ctx = tape.matmul(weights, v)?;
        let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = tape.reshape(ctx, &[b, lq, d])?;
        Ok((self.out.apply(tape, p, ctx)?, weights))
    }

    pub fn apply(
        &self,
        tape: &mut Tape,
        p: Bound,
        query: Var,
        key: Var,
        value: Var,
    ) -> Result<Var> {
        Ok(self.apply_with_weights(tape, p, query, key, value)?.0)
    }
}

/// Position-wise `Linear(D, 4D) -> GELU -> Linear(4D, D)`.
#[derive(Clone, Copy, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn apply(&self, tape: &mut Tape, p: Bound, x: Var) -> Result<Var> {
        let h = self.up.apply(tape, p, x)?;
        let h = tape.gelu(h);
        self.down.apply(tape, p, h)
    }
}

/// `norm(x + f(x))`
pub(crate) fn residual_norm(
    tape: &mut Tape,
    p: Bound,
    x: Var,
    fx: Var,
    norm: &LayerNorm,
) -> Result<Var> {
    let s = tape.add(x, fx)?;
    norm.apply(tape, p, s)
}
