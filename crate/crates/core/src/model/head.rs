use super::layers::{Bound, Init, Linear};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// Query-affinity mask head plus the auxiliary foreground head.
#[derive(Clone, Debug)]
pub struct MaskHead {
    /// Maps the per-pixel query-affinity vector `[N_query]` to `[D]`.
    pub mlp_in: Linear,
    pub mlp_out: Linear,
    /// `D -> N_class`
    pub classifier: Linear,
    /// `D -> 1`, supervised by the mixing loss.
    pub aux: Linear,
}

impl MaskHead {
    pub(crate) fn new(init: &mut Init, d: usize, n_query: usize, n_class: usize) -> Self {
        MaskHead {
            mlp_in: init.linear("head.mlp_in", n_query, d),
            mlp_out: init.linear("head.mlp_out", d, d),
            classifier: init.linear("head.classifier", d, n_class),
            aux: init.linear("head.aux", d, 1),
        }
    }

    /// `f_mixed [T, h·w, D]`, `q_output [T, N_query, D]`; returns
    /// `(logits [T, N_class, h, w], aux_logits [T, 1, h, w])`.
    pub fn apply(
        &self,
        tape: &mut Tape,
        p: Bound,
        f_mixed: Var,
        q_output: Var,
        extent: (usize, usize),
    ) -> Result<(Var, Var)> {
        let fs = tape.shape(f_mixed).to_vec();
        let qs = tape.shape(q_output).to_vec();
        let (h, w) = extent;
        if fs.len() != 3 || qs.len() != 3 || fs[0] != qs[0] || fs[2] != qs[2] || fs[1] != h * w {
            return Err(Error::dim(format!(
                "mask head expects [T, {}, D] and [T, N_query, D], got {fs:?} and {qs:?}",
                h * w
            )));
        }
        let t = fs[0];
        let qt = tape.transpose_last(q_output)?;
        let affinity = tape.matmul(f_mixed, qt)?; // [T, hw, N_query]
                                                  // scaled like attention logits; unscaled it swamps the MLP at D=64
        let affinity = tape.scale(affinity, 1.0 / (fs[2] as f64).sqrt());
        let hidden = self.mlp_in.apply(tape, p, affinity)?;
        let hidden = tape.relu(hidden);
        let hidden = self.mlp_out.apply(tape, p, hidden)?;
        let fused = tape.add(f_mixed, hidden)?;

        let logits = self.classifier.apply(tape, p, fused)?; // [T, hw, C]
        let c = tape.shape(logits)[2];
        let logits = tape.transpose_last(logits)?;
        let logits = tape.reshape(logits, &[t, c, h, w])?;

        let aux = self.aux.apply(tape, p, f_mixed)?;
        let aux = tape.reshape(aux, &[t, 1, h, w])?;
        Ok((logits, aux))
    }
}
