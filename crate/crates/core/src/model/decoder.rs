use super::layers::{residual_norm, Attention, Bound, FeedForward, Init, LayerNorm};
use crate::error::Result;
use crate::tensor::{Tape, Var};

#[derive(Clone, Debug)]
struct DecoderLayer {
    self_attn: Attention,
    norm1: LayerNorm,
    cross_attn: Attention,
    norm2: LayerNorm,
    ffn: FeedForward,
    norm3: LayerNorm,
}

/// Query decoder: self-attention, cross-attention into the encoder memory,
/// feed-forward; each sublayer residual and post-normalized.
#[derive(Clone, Debug)]
pub struct Decoder {
    layers: Vec<DecoderLayer>,
}

impl Decoder {
    pub(crate) fn new(init: &mut Init, d: usize, n_head: usize, n_layers: usize) -> Self {
        let layers = (0..n_layers)
            .map(|i| {
                let name = format!("decoder.layer{i}");
                DecoderLayer {
                    self_attn: init.attention(&format!("{name}.self"), d, n_head),
                    norm1: init.layer_norm(&format!("{name}.norm1"), d),
                    cross_attn: init.attention(&format!("{name}.cross"), d, n_head),
                    norm2: init.layer_norm(&format!("{name}.norm2"), d),
                    ffn: init.feed_forward(&format!("{name}.ffn"), d),
                    norm3: init.layer_norm(&format!("{name}.norm3"), d),
                }
            })
            .collect();
        Decoder { layers }
    }

    /// `queries [T, N_query, D]`, `memory [T, N, D]` -> `[T, N_query, D]`.
    pub fn apply(&self, tape: &mut Tape, p: Bound, queries: Var, memory: Var) -> Result<Var> {
        let mut q = queries;
        for layer in &self.layers {
            let a = layer.self_attn.apply(tape, p, q, q, q)?;
            q = residual_norm(tape, p, q, a, &layer.norm1)?;
            let c = layer.cross_attn.apply(tape, p, q, memory, memory)?;
            q = residual_norm(tape, p, q, c, &layer.norm2)?;
            let f = layer.ffn.apply(tape, p, q)?;
            q = residual_norm(tape, p, q, f, &layer.norm3)?;
        }
        Ok(q)
    }
}
