//! The segmentation network: feature stub → encoder (mask feature) → query
//! generator → audio-visual mixer → query decoder → mask head.

mod config;
mod decoder;
mod encoder;
mod head;
mod layers;
mod mixer;
mod query;
mod stub;

pub use config::{MixerVariant, ModelConfig};
pub use decoder::Decoder;
pub use encoder::{sine_position_encoding, Encoder, LevelTokens};
pub use head::MaskHead;
pub use layers::{Attention, Bound, FeedForward, LayerNorm, Linear};
pub use mixer::{apply_channel_weights, channel_weights, MixOutput, Mixer};
pub use query::{QueryGenerator, QuerySet};
pub use stub::{FeaturePyramid, FeatureStub};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tape, Tensor, Var};
use layers::Init;

/// Every intermediate of one forward pass, as tape handles.
#[derive(Clone, Copy, Debug)]
pub struct MaskBundle {
    pub pyramid: FeaturePyramid,
    /// Encoder output `[T, N_tokens, D]`.
    pub memory: Var,
    /// `[T, D, h, w]`
    pub f_mask: Var,
    /// `[T, D, h, w]`
    pub f_mixed: Var,
    /// `[T, D]` for the channel-attention mixer.
    pub omega: Option<Var>,
    /// `[T, heads, h·w]` for the channel-attention mixer.
    pub mix_weights: Option<Var>,
    pub queries: QuerySet,
    /// `[T, N_query, D]`
    pub q_output: Var,
    /// `[T, 1, h, w]`
    pub aux_logits: Var,
    /// `[T, N_class, h, w]`
    pub logits: Var,
}

#[derive(Clone, Debug)]
pub struct Network {
    pub stub: FeatureStub,
    pub encoder: Encoder,
    pub queries: QueryGenerator,
    pub mixer: Mixer,
    pub decoder: Decoder,
    pub head: MaskHead,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub net: Network,
}

impl Model {
    /// Seeded initialization: linear and conv maps draw from
    /// uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)); layer norms start at identity.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut init = Init {
            store: &mut params,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let c = &config;
        let net = Network {
            stub: FeatureStub::new(&mut init, c.stub_width, c.d_model),
            encoder: Encoder::new(&mut init, c.d_model, c.n_head, c.n_enc_layers),
            queries: QueryGenerator::new(
                &mut init,
                c.d_model,
                c.n_head,
                c.n_query,
                c.use_learnable_queries,
            ),
            mixer: Mixer::new(&mut init, c.mixer, c.d_model, c.n_head),
            decoder: Decoder::new(&mut init, c.d_model, c.n_head, c.n_dec_layers),
            head: MaskHead::new(&mut init, c.d_model, c.n_query, c.n_class),
        };
        Ok(Model {
            config,
            params,
            net,
        })
    }

    /// Rebuilds a model around stored parameters, which must match the
    /// layout implied by `config` name-for-name and shape-for-shape.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let mut model = Model::new(config, 0)?;
        if model.params.len() != params.len() {
            return Err(Error::config(format!(
                "config implies {} parameter tensors, got {}",
                model.params.len(),
                params.len()
            )));
        }
        for (want, got) in model.params.iter().zip(params.iter()) {
            if want.name != got.name || want.value.shape() != got.value.shape() {
                return Err(Error::config(format!(
                    "parameter mismatch: expected `{}` {:?}, got `{}` {:?}",
                    want.name,
                    want.value.shape(),
                    got.name,
                    got.value.shape()
                )));
            }
        }
        model.params = params;
        Ok(model)
    }

    /// `frames [T, 3, H, W]`, `audio [T, D]`. `T` may cover several clips
    /// stacked along the frame axis; frames are processed independently.
    pub fn forward(
        &self,
        tape: &mut Tape,
        p: Bound,
        frames: Var,
        audio: Var,
    ) -> Result<MaskBundle> {
        let (fs, as_) = (tape.shape(frames).to_vec(), tape.shape(audio).to_vec());
        let c = &self.config;
        if fs.len() != 4 || fs[2] != c.height || fs[3] != c.width {
            return Err(Error::dim(format!(
                "frames {fs:?} do not match configured extent {}x{}",
                c.height, c.width
            )));
        }
        if as_ != [fs[0], c.d_model] {
            return Err(Error::dim(format!(
                "audio {as_:?} must be [{}, {}]",
                fs[0], c.d_model
            )));
        }
        let t = fs[0];
        let (h, w) = c.mask_extent();
        let d = c.d_model;

        let pyramid = self.net.stub.apply(tape, p, frames)?;
        let (memory, f_mask) = self.net.encoder.encode(tape, p, &pyramid)?;
        let queries = self.net.queries.apply(tape, p, audio)?;

        let flat = tape.reshape(f_mask, &[t, d, h * w])?;
        let tokens = tape.transpose_last(flat)?;
        let mix = self.net.mixer.apply(tape, p, tokens, audio)?;
        let q_output = self.net.decoder.apply(tape, p, queries.q_mixed, memory)?;
        let (logits, aux_logits) = self
            .net
            .head
            .apply(tape, p, mix.f_mixed, q_output, (h, w))?;

        let f_mixed = if mix.f_mixed == tokens {
            f_mask
        } else {
            let m = tape.transpose_last(mix.f_mixed)?;
            tape.reshape(m, &[t, d, h, w])?
        };
        Ok(MaskBundle {
            pyramid,
            memory,
            f_mask,
            f_mixed,
            omega: mix.omega,
            mix_weights: mix.weights,
            queries,
            q_output,
            aux_logits,
            logits,
        })
    }

    /// Forward pass without gradient tracking; returns logits `[T, N_class, h, w]`.
    pub fn predict(&self, frames: &Tensor, audio: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound: Vec<Var> = self
            .params
            .iter()
            .map(|prm| tape.constant(prm.value.clone()))
            .collect();
        let f = tape.constant(frames.clone());
        let a = tape.constant(audio.clone());
        let out = self.forward(&mut tape, Bound(&bound), f, a)?;
        Ok(tape.value(out.logits).clone())
    }
}
