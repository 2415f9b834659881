//! Multi-scale self-attention encoder and mask-feature construction.

use std::f64::consts::PI;

use super::layers::{residual_norm, Attention, Bound, FeedForward, Init, LayerNorm};
use super::stub::FeaturePyramid;
use crate::error::{Error, Result};
use crate::tensor::{ParamId, Tape, Tensor, Var};

/// Fixed 2-D sinusoidal encoding `[h·w, d]`: the first half of the channels
/// encode the row, the second half the column.
pub fn sine_position_encoding(h: usize, w: usize, d: usize) -> Tensor {
    let dy = d / 2;
    let dx = d - dy;
    let mut out = vec![0.0; h * w * d];
    let channel = |pos: f64, j: usize, n: usize| {
        let freq = 10000f64.powf(-2.0 * (j / 2) as f64 / n as f64);
        let a = pos * freq;
        if j.is_multiple_of(2) {
            a.sin()
        } else {
            a.cos()
        }
    };
    for y in 0..h {
        let py = (y as f64 + 0.5) / h as f64 * 2.0 * PI;
        for x in 0..w {
            let px = (x as f64 + 0.5) / w as f64 * 2.0 * PI;
            let row = &mut out[(y * w + x) * d..(y * w + x + 1) * d];
            for j in 0..dy {
                row[j] = channel(py, j, dy);
            }
            for j in 0..dx {
                row[dy + j] = channel(px, j, dx);
            }
        }
    }
    Tensor::new(&[h * w, d], out).expect("extent arithmetic")
}

/// One pyramid level flattened for the encoder.
#[derive(Clone, Copy, Debug)]
pub struct LevelTokens {
    /// `[T, L, D]`
    pub tokens: Var,
    /// `[L, D]`
    pub pos: Var,
    /// `[D]`
    pub level: Var,
}

#[derive(Clone, Debug)]
struct EncoderLayer {
    attn: Attention,
    norm1: LayerNorm,
    ffn: FeedForward,
    norm2: LayerNorm,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    level_embed: [ParamId; 3],
    layers: Vec<EncoderLayer>,
}

impl Encoder {
    pub(crate) fn new(init: &mut Init, d: usize, n_head: usize, n_layers: usize) -> Self {
        let level_embed =
            std::array::from_fn(|i| init.uniform(format!("encoder.level{i}"), &[d], d));
        let layers = (0..n_layers)
            .map(|i| {
                let name = format!("encoder.layer{i}");
                EncoderLayer {
                    attn: init.attention(&format!("{name}.attn"), d, n_head),
                    norm1: init.layer_norm(&format!("{name}.norm1"), d),
                    ffn: init.feed_forward(&format!("{name}.ffn"), d),
                    norm2: init.layer_norm(&format!("{name}.norm2"), d),
                }
            })
            .collect();
        Encoder {
            level_embed,
            layers,
        }
    }

    pub fn level_embedding(&self, level: usize) -> ParamId {
        self.level_embed[level]
    }

    /// Encodes the concatenation of `levels` (in the given order) and returns the
    /// full memory `[T, ΣL, D]` together with each level's slice of it.
    pub fn run(
        &self,
        tape: &mut Tape,
        p: Bound,
        levels: &[LevelTokens],
    ) -> Result<(Var, Vec<Var>)> {
        let mut inputs = Vec::with_capacity(levels.len());
        let mut lens = Vec::with_capacity(levels.len());
        for l in levels {
            let x = tape.add(l.tokens, l.pos)?;
            inputs.push(tape.add(x, l.level)?);
            lens.push(tape.shape(l.tokens)[1]);
        }
        let mut x = tape.concat(&inputs, 1)?;
        for layer in &self.layers {
            let a = layer.attn.apply(tape, p, x, x, x)?;
            x = residual_norm(tape, p, x, a, &layer.norm1)?;
            let f = layer.ffn.apply(tape, p, x)?;
            x = residual_norm(tape, p, x, f, &layer.norm2)?;
        }
        let mut outs = Vec::with_capacity(levels.len());
        let mut start = 0;
        for len in lens {
            outs.push(tape.slice(x, 1, start, len)?);
            start += len;
        }
        Ok((x, outs))
    }

    /// Returns `(memory [T, N, D], F_mask [T, D, H/4, W/4])`.
    pub fn encode(
        &self,
        tape: &mut Tape,
        p: Bound,
        pyramid: &FeaturePyramid,
    ) -> Result<(Var, Var)> {
        let mut levels = Vec::with_capacity(3);
        for (i, &lvl) in pyramid.levels[1..].iter().enumerate() {
            let s = tape.shape(lvl).to_vec();
            let (t, d, h, w) = (s[0], s[1], s[2], s[3]);
            let flat = tape.reshape(lvl, &[t, d, h * w])?;
            let tokens = tape.transpose_last(flat)?;
            let pos = tape.constant(sine_position_encoding(h, w, d));
            levels.push(LevelTokens {
                tokens,
                pos,
                level: p.get(self.level_embed[i]),
            });
        }
        let (memory, outs) = self.run(tape, p, &levels)?;

        let fine = pyramid.levels[0];
        let s8 = tape.shape(pyramid.levels[1]).to_vec();
        let back = tape.transpose_last(outs[0])?;
        let back = tape.reshape(back, &s8)?;
        let up = tape.upsample2x(back)?;
        if tape.shape(up) != tape.shape(fine) {
            return Err(Error::dim(format!(
                "upsampled stride-8 level {:?} does not match stride-4 level {:?}",
                tape.shape(up),
                tape.shape(fine)
            )));
        }
        let f_mask = tape.add(fine, up)?;
        Ok((memory, f_mask))
    }
}
