use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// How audio is injected into the mask feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MixerVariant {
    /// Channel attention: audio-guided spatial pooling yields per-channel weights.
    Cha,
    /// Cross attention: pixels attend to the audio vector.
    Cra,
    /// No mixer; the mask feature passes through unchanged.
    None,
}

impl fmt::Display for MixerVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MixerVariant::Cha => "cha",
            MixerVariant::Cra => "cra",
            MixerVariant::None => "none",
        })
    }
}

impl FromStr for MixerVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cha" => Ok(MixerVariant::Cha),
            "cra" => Ok(MixerVariant::Cra),
            "none" | "-" => Ok(MixerVariant::None),
            _ => Err(Error::config(format!("unknown mixer variant `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_head: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub n_query: usize,
    /// 1 for binary (S4, MS3) segmentation; background + object classes otherwise.
    pub n_class: usize,
    pub height: usize,
    pub width: usize,
    /// Frames per clip.
    pub frames: usize,
    pub use_learnable_queries: bool,
    pub mixer: MixerVariant,
    pub lambda_mix: f64,
    /// Channel width of the first stub convolution; deeper stages use 2× and 4×.
    pub stub_width: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl ModelConfig {
    /// Desk-scale default.
    pub fn toy() -> Self {
        ModelConfig {
            d_model: 64,
            n_head: 8,
            n_enc_layers: 2,
            n_dec_layers: 2,
            n_query: 8,
            n_class: 1,
            height: 64,
            width: 64,
            frames: 5,
            use_learnable_queries: true,
            mixer: MixerVariant::Cha,
            lambda_mix: 0.1,
            stub_width: 16,
        }
    }

    /// Smallest useful configuration, sized for finite-difference checks.
    pub fn micro() -> Self {
        ModelConfig {
            d_model: 16,
            n_head: 2,
            n_enc_layers: 1,
            n_dec_layers: 1,
            n_query: 2,
            n_class: 1,
            height: 32,
            width: 32,
            frames: 1,
            use_learnable_queries: true,
            mixer: MixerVariant::Cha,
            lambda_mix: 0.1,
            stub_width: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_head == 0 || !self.d_model.is_multiple_of(self.n_head) {
            return Err(Error::config(format!(
                "d_model {} must be a positive multiple of n_head {}",
                self.d_model, self.n_head
            )));
        }
        if self.n_query == 0 || self.n_class == 0 || self.frames == 0 || self.stub_width == 0 {
            return Err(Error::config(
                "n_query, n_class, frames and stub_width must be at least 1",
            ));
        }
        if self.height == 0
            || self.width == 0
            || !self.height.is_multiple_of(32)
            || !self.width.is_multiple_of(32)
        {
            return Err(Error::config(format!(
                "frame extents {}x{} must be positive multiples of 32",
                self.height, self.width
            )));
        }
        if !(self.lambda_mix >= 0.0 && self.lambda_mix.is_finite()) {
            return Err(Error::config(format!(
                "lambda_mix must be finite and >= 0, got {}",
                self.lambda_mix
            )));
        }
        Ok(())
    }

    /// Mask resolution `(H/4, W/4)`.
    pub fn mask_extent(&self) -> (usize, usize) {
        (self.height / 4, self.width / 4)
    }

    /// Spatial extents of the pyramid levels at strides 4, 8, 16, 32.
    pub fn level_extents(&self) -> [(usize, usize); 4] {
        [4, 8, 16, 32].map(|s| (self.height / s, self.width / s))
    }

    /// Encoder tokens per frame (strides 8, 16 and 32).
    pub fn encoder_tokens(&self) -> usize {
        self.level_extents()[1..].iter().map(|(h, w)| h * w).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_token_count() {
        assert_eq!(ModelConfig::toy().encoder_tokens(), 8 * 8 + 4 * 4 + 2 * 2);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = ModelConfig::toy();
        c.n_head = 7;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::toy();
        c.height = 48;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = ModelConfig::toy();
        c.n_query = 0;
        assert!(c.validate().is_err());
        assert!(ModelConfig::micro().validate().is_ok());
    }

    #[test]
    fn mixer_names_round_trip() {
        for m in [MixerVariant::Cha, MixerVariant::Cra, MixerVariant::None] {
            assert_eq!(m.to_string().parse::<MixerVariant>().unwrap(), m);
        }
    }
}
