//! Audio-visual mixers applied to the mask feature.
//!
//! Both variants work on token layout `[T, h·w, D]`.

use super::config::MixerVariant;
use super::layers::{Attention, Bound, Init, Linear};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

#[derive(Clone, Copy, Debug)]
pub struct MixOutput {
    /// `[T, h·w, D]`
    pub f_mixed: Var,
    /// Channel weights `[T, D]` (channel-attention variant only).
    pub omega: Option<Var>,
    /// Spatial attention weights `[T, heads, h·w]` (channel-attention variant only).
    pub weights: Option<Var>,
}

#[derive(Clone, Debug)]
pub enum Mixer {
    ChannelAttention { audio_proj: Linear, n_head: usize },
    CrossAttention { attn: Attention },
    Identity,
}

impl Mixer {
    pub(crate) fn new(init: &mut Init, variant: MixerVariant, d: usize, n_head: usize) -> Self {
        match variant {
            MixerVariant::Cha => Mixer::ChannelAttention {
                audio_proj: init.linear("mixer.audio", d, d),
                n_head,
            },
            MixerVariant::Cra => Mixer::CrossAttention {
                attn: init.attention("mixer.attn", d, n_head),
            },
            MixerVariant::None => Mixer::Identity,
        }
    }

    pub fn apply(&self, tape: &mut Tape, p: Bound, f_mask: Var, audio: Var) -> Result<MixOutput> {
        let fs = tape.shape(f_mask).to_vec();
        let as_ = tape.shape(audio).to_vec();
        if fs.len() != 3 || as_.len() != 2 || fs[0] != as_[0] || fs[2] != as_[1] {
            return Err(Error::dim(format!(
                "mixer expects [T, hw, D] and [T, D], got {fs:?} and {as_:?}"
            )));
        }
        match self {
            Mixer::ChannelAttention { audio_proj, n_head } => {
                let key = audio_proj.apply(tape, p, audio)?;
                let (omega, weights) = channel_weights(tape, f_mask, key, *n_head)?;
                let f_mixed = apply_channel_weights(tape, f_mask, omega)?;
                let omega = tape.reshape(omega, &[fs[0], fs[2]])?;
                Ok(MixOutput {
                    f_mixed,
                    omega: Some(omega),
                    weights: Some(weights),
                })
            }
            Mixer::CrossAttention { attn } => {
                let kv = tape.reshape(audio, &[as_[0], 1, as_[1]])?;
                let a = attn.apply(tape, p, f_mask, kv, kv)?;
                Ok(MixOutput {
                    f_mixed: tape.add(f_mask, a)?,
                    omega: None,
                    weights: None,
                })
            }
            Mixer::Identity => Ok(MixOutput {
                f_mixed: f_mask,
                omega: None,
                weights: None,
            }),
        }
    }
}

/// Per frame and head: softmax over spatial positions of
/// `key_h · F_hᵀ / sqrt(D/heads)`, then the weighted sum of the spatial
/// vectors of `F_h`. Returns `omega [T, 1, D]` and the weights `[T, heads, h·w]`.
pub fn channel_weights(
    tape: &mut Tape,
    f_mask: Var,
    key: Var,
    n_head: usize,
) -> Result<(Var, Var)> {
    let s = tape.shape(f_mask).to_vec();
    let (t, hw, d) = (s[0], s[1], s[2]);
    if d % n_head != 0 {
        return Err(Error::dim(format!(
            "{d} channels do not split into {n_head} heads"
        )));
    }
    let dh = d / n_head;
    let f = tape.reshape(f_mask, &[t, hw, n_head, dh])?;
    let f = tape.permute(f, &[0, 2, 1, 3])?; // [T, heads, hw, dh]
    let k = tape.reshape(key, &[t, n_head, 1, dh])?;
    let ft = tape.transpose_last(f)?;
    let scores = tape.matmul(k, ft)?; // [T, heads, 1, hw]
    let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
    let weights = tape.softmax_last(scores)?;
    let omega = tape.matmul(weights, f)?; // [T, heads, 1, dh]
    let omega = tape.reshape(omega, &[t, 1, d])?;
    let weights = tape.reshape(weights, &[t, n_head, hw])?;
    Ok((omega, weights))
}

/// `F + F ⊙ omega`, with `omega` broadcast across spatial positions.
pub fn apply_channel_weights(tape: &mut Tape, f_mask: Var, omega: Var) -> Result<Var> {
    let scaled = tape.mul(f_mask, omega)?;
    tape.add(f_mask, scaled)
}
