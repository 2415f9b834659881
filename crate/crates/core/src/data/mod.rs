//! Deterministic "sounding shapes" clips: rendered objects, an audio vector
//! naming the sounding subset, and masks of exactly the sounding objects.

mod cache;
mod split;
mod synth;

pub use cache::{read_clip, write_clip, CLIP_MAGIC, CLIP_VERSION};
pub use split::{make_split, partition_of, seed_in_partition, ClipDescriptor, Partition};
pub use synth::{
    audio_for, generate_clip, generate_clip_with, AudioPrototypeBank, ShapeInstance, ShapeKind,
};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    /// Single sound source, binary mask.
    S4,
    /// Multiple sound sources, binary mask.
    Ms3,
    /// Multiple sources, per-class semantic mask.
    Avss,
}

impl Task {
    pub fn code(self) -> u32 {
        match self {
            Task::S4 => 0,
            Task::Ms3 => 1,
            Task::Avss => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Task::S4),
            1 => Some(Task::Ms3),
            2 => Some(Task::Avss),
            _ => None,
        }
    }

    pub fn default_frames(self) -> usize {
        match self {
            Task::S4 | Task::Ms3 => 5,
            Task::Avss => 10,
        }
    }

    pub fn is_semantic(self) -> bool {
        self == Task::Avss
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::S4 => "s4",
            Task::Ms3 => "ms3",
            Task::Avss => "avss",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s4" => Ok(Task::S4),
            "ms3" => Ok(Task::Ms3),
            "avss" => Ok(Task::Avss),
            _ => Err(Error::config(format!(
                "unknown task `{s}` (expected s4, ms3 or avss)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    /// Audio embedding width; equals the model's embedding width.
    pub audio_dim: usize,
    /// Object categories (class ids `1..=n_classes`).
    pub n_classes: usize,
    pub noise_sigma: f64,
    /// Frames per clip; `None` uses the task default (5, or 10 for AVSS).
    pub frames: Option<usize>,
    pub bank_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            height: 64,
            width: 64,
            audio_dim: 64,
            n_classes: 6,
            noise_sigma: 0.05,
            frames: None,
            bank_seed: 0x5eed_ba4c,
        }
    }
}

impl SynthConfig {
    pub fn frames_for(&self, task: Task) -> usize {
        self.frames.unwrap_or_else(|| task.default_frames())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 || self.n_classes > self.audio_dim {
            return Err(Error::config(format!(
                "need 2 <= n_classes <= audio_dim for orthonormal prototypes, got {} classes in {} dims",
                self.n_classes, self.audio_dim
            )));
        }
        if self.n_classes > synth::PALETTE.len() {
            return Err(Error::config(format!(
                "at most {} object classes can be rendered, got {}",
                synth::PALETTE.len(),
                self.n_classes
            )));
        }
        if !self.height.is_multiple_of(4)
            || !self.width.is_multiple_of(4)
            || self.height < 32
            || self.width < 32
        {
            return Err(Error::config(format!(
                "frame extents {}x{} must be multiples of 4 and at least 32",
                self.height, self.width
            )));
        }
        if self.frames == Some(0) {
            return Err(Error::config("frames must be at least 1"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::config("noise_sigma must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Class-indexed label map `[T, h, w]`; 0 is background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<u16>,
}

impl LabelMap {
    pub fn zeros(frames: usize, height: usize, width: usize) -> Self {
        LabelMap {
            frames,
            height,
            width,
            data: vec![0; frames * height * width],
        }
    }

    pub fn frame(&self, t: usize) -> &[u16] {
        let n = self.height * self.width;
        &self.data[t * n..(t + 1) * n]
    }

    /// Foreground indicator as floats, shaped `[T, 1, h, w]`.
    pub fn binary_tensor(&self) -> Tensor {
        Tensor::new(
            &[self.frames, 1, self.height, self.width],
            self.data.iter().map(|&c| f64::from(c != 0)).collect(),
        )
        .expect("label extents")
    }

    /// One-hot encoding shaped `[T, n_class, h, w]` (class 0 included).
    pub fn one_hot(&self, n_class: usize) -> Tensor {
        let hw = self.height * self.width;
        let mut out = vec![0.0; self.frames * n_class * hw];
        for t in 0..self.frames {
            for (i, &c) in self.frame(t).iter().enumerate() {
                let c = c as usize;
                assert!(c < n_class, "label {c} outside {n_class} classes");
                out[(t * n_class + c) * hw + i] = 1.0;
            }
        }
        Tensor::new(&[self.frames, n_class, self.height, self.width], out).expect("label extents")
    }

    /// Stacks label maps along the frame axis.
    pub fn concat(maps: &[&LabelMap]) -> LabelMap {
        let first = maps[0];
        LabelMap {
            frames: maps.iter().map(|m| m.frames).sum(),
            height: first.height,
            width: first.width,
            data: maps.iter().flat_map(|m| m.data.iter().copied()).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub task: Task,
    pub seed: u64,
    /// `[T, 3, H, W]`, values in [0, 1].
    pub frames: Tensor,
    /// `[T, D]`
    pub audio: Tensor,
    /// Labels at quarter resolution.
    pub gt: LabelMap,
    pub instances: Vec<ShapeInstance>,
    /// Indices into `instances` of the sounding objects, per frame.
    pub sounding: Vec<Vec<usize>>,
}

impl Clip {
    pub fn n_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    /// Sorted class ids sounding in frame `t`.
    pub fn sounding_classes(&self, t: usize) -> Vec<u16> {
        let mut c: Vec<u16> = self.sounding[t]
            .iter()
            .map(|&i| self.instances[i].class_id)
            .collect();
        c.sort_unstable();
        c
    }
}
