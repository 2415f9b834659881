//! Small convolutional pyramid standing in for a pretrained visual backbone.

use super::layers::{Bound, Conv, Init};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// Visual features at strides 4, 8, 16 and 32, each `[T, D, h, w]`.
#[derive(Clone, Copy, Debug)]
pub struct FeaturePyramid {
    pub levels: [Var; 4],
}

#[derive(Clone, Debug)]
pub struct FeatureStub {
    /// Stride-2 3×3 convolutions; outputs of stages 1..4 are pyramid levels.
    stages: [Conv; 5],
    /// 1×1 projections of each level to the embedding width.
    proj: [Conv; 4],
}

impl FeatureStub {
    pub(crate) fn new(init: &mut Init, width: usize, d_model: usize) -> Self {
        let chans = [3, width, 2 * width, 4 * width, 4 * width, 4 * width];
        let stages = std::array::from_fn(|i| {
            init.conv(&format!("stub.stage{i}"), chans[i], chans[i + 1], 3, 2)
        });
        let proj = std::array::from_fn(|i| {
            init.conv(&format!("stub.proj{i}"), chans[i + 2], d_model, 1, 1)
        });
        FeatureStub { stages, proj }
    }

    pub fn apply(&self, tape: &mut Tape, p: Bound, frames: Var) -> Result<FeaturePyramid> {
        let s = tape.shape(frames);
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::dim(format!(
                "frames must be [T, 3, H, W], got {s:?}"
            )));
        }
        if !s[2].is_multiple_of(32) || !s[3].is_multiple_of(32) {
            return Err(Error::config(format!(
                "frame extents {}x{} are not divisible by 32",
                s[2], s[3]
            )));
        }
        let mut x = frames;
        let mut levels = Vec::with_capacity(4);
        for (i, stage) in self.stages.iter().enumerate() {
            x = stage.apply(tape, p, x)?;
            x = tape.relu(x);
            if i >= 1 {
                levels.push(self.proj[i - 1].apply(tape, p, x)?);
            }
        }
        Ok(FeaturePyramid {
            levels: [levels[0], levels[1], levels[2], levels[3]],
        })
    }
}
