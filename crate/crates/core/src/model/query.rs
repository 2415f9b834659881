//! Audio-conditioned query generation.

use super::layers::{residual_norm, Attention, Bound, FeedForward, Init, LayerNorm};
use crate::error::{Error, Result};
use crate::tensor::{ParamId, Tape, Tensor, Var};

/// Query tensors of one forward pass, all `[T, N_query, D]`.
#[derive(Clone, Copy, Debug)]
pub struct QuerySet {
    pub q_init: Var,
    pub q_audio: Var,
    pub q_mixed: Var,
}

#[derive(Clone, Debug)]
pub struct QueryGenerator {
    attn: Attention,
    norm1: LayerNorm,
    ffn: FeedForward,
    norm2: LayerNorm,
    /// `[N_query, D]`
    pub q_learn: ParamId,
    n_query: usize,
    use_learnable: bool,
}

impl QueryGenerator {
    pub(crate) fn new(
        init: &mut Init,
        d: usize,
        n_head: usize,
        n_query: usize,
        use_learnable: bool,
    ) -> Self {
        QueryGenerator {
            attn: init.attention("query.attn", d, n_head),
            norm1: init.layer_norm("query.norm1", d),
            ffn: init.feed_forward("query.ffn", d),
            norm2: init.layer_norm("query.norm2", d),
            q_learn: init.uniform("query.learn".into(), &[n_query, d], d),
            n_query,
            use_learnable,
        }
    }

    /// Zero initial queries attend to the per-frame audio vector (the single
    /// key and value), followed by a feed-forward block. Learnable queries are
    /// added elementwise.
    pub fn apply(&self, tape: &mut Tape, p: Bound, audio: Var) -> Result<QuerySet> {
        let s = tape.shape(audio).to_vec();
        if s.len() != 2 {
            return Err(Error::dim(format!("audio must be [T, D], got {s:?}")));
        }
        let (t, d) = (s[0], s[1]);
        let q_init = tape.constant(Tensor::zeros(&[t, self.n_query, d]));
        let kv = tape.reshape(audio, &[t, 1, d])?;
        let a = self.attn.apply(tape, p, q_init, kv, kv)?;
        let x = residual_norm(tape, p, q_init, a, &self.norm1)?;
        let f = self.ffn.apply(tape, p, x)?;
        let q_audio = residual_norm(tape, p, x, f, &self.norm2)?;
        let q_mixed = if self.use_learnable {
            tape.add(q_audio, p.get(self.q_learn))?
        } else {
            q_audio
        };
        Ok(QuerySet {
            q_init,
            q_audio,
            q_mixed,
        })
    }
}
