//! Phase models: a decoder stack plus an output head. The insertion and
//! deletion models are fully independent parameter sets, including their
//! embedding tables, so deletion-loss gradients on insertion parameters are
//! structurally zero rather than merely small.

use crate::autodiff::{Gradients, Tape, Tensor, Var};
use crate::transformer::{DecoderParams, ModelConfig, TapedDecoder};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn head_weight(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let std = 0.02f32;
    let data: Vec<f32> = (0..rows * cols)
        .map(|_| {
            let u1: f32 = rng.gen_range(f32::EPSILON..1.0);
            let u2: f32 = rng.gen_range(0.0..1.0);
            std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f32::consts::PI * u2).cos()
        })
        .collect();
    Tensor::param(data, vec![rows, cols])
}

/// Decoder plus a `d_model -> vocab` projection emitting one logit row per
/// insertion slot.
pub struct InsertionParams {
    pub decoder: DecoderParams,
    pub head_w: Tensor,
    pub head_b: Tensor,
}

/// Decoder plus a `d_model -> 1` projection emitting one keep/delete
/// probability per canvas position.
pub struct DeletionParams {
    pub decoder: DecoderParams,
    pub head_w: Tensor,
    pub head_b: Tensor,
}

macro_rules! phase_params_impl {
    ($name:ident, $head_cols:expr) => {
        impl $name {
            pub fn init(config: ModelConfig, rng: &mut ChaCha8Rng) -> Self {
                let decoder = DecoderParams::init(config, rng);
                let head_w = head_weight(rng, config.d_model, $head_cols(&config));
                let head_b = Tensor::param(vec![0.0; $head_cols(&config)], vec![$head_cols(&config)]);
                Self { decoder, head_w, head_b }
            }

            /// Flat view in checkpoint order: decoder tensors, then the head.
            pub fn tensors(&self) -> Vec<&Tensor> {
                let mut out: Vec<&Tensor> = self.decoder.tensors().iter().collect();
                out.push(&self.head_w);
                out.push(&self.head_b);
                out
            }

            pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
                let mut out: Vec<&mut Tensor> =
                    self.decoder.tensors_mut().iter_mut().collect();
                out.push(&mut self.head_w);
                out.push(&mut self.head_b);
                out
            }

            pub fn names(&self) -> Vec<String> {
                let layout = self.decoder.layout();
                let mut out: Vec<String> = (0..layout.len()).map(|i| layout.name(i)).collect();
                out.push("head_w".into());
                out.push("head_b".into());
                out
            }

            pub fn num_params(&self) -> usize {
                self.decoder.num_params() + self.head_w.numel() + self.head_b.numel()
            }

            pub fn assert_finite(&self) {
                self.decoder.assert_finite();
                assert!(
                    self.head_w.data().iter().chain(self.head_b.data()).all(|v| v.is_finite()),
                    "non-finite value in head parameters"
                );
            }
        }
    };
}

phase_params_impl!(InsertionParams, |c: &ModelConfig| c.vocab_size);
phase_params_impl!(DeletionParams, |_c: &ModelConfig| 1);

/// Tape registration of an insertion model.
pub struct TapedInsertion {
    pub decoder: TapedDecoder,
    pub head_w: Var,
    pub head_b: Var,
}

/// Tape registration of a deletion model.
pub struct TapedDeletion {
    pub decoder: TapedDecoder,
    pub head_w: Var,
    pub head_b: Var,
}

macro_rules! taped_phase_impl {
    ($taped:ident, $params:ident) => {
        impl $taped {
            pub fn register(tape: &mut Tape, params: &$params) -> Self {
                let decoder = TapedDecoder::register(tape, &params.decoder);
                let head_w = tape.param(&params.head_w);
                let head_b = tape.param(&params.head_b);
                Self { decoder, head_w, head_b }
            }

            pub fn register_frozen(tape: &mut Tape, params: &$params) -> Self {
                let decoder = TapedDecoder::register_frozen(tape, &params.decoder);
                let head_w = tape.constant(&params.head_w);
                let head_b = tape.constant(&params.head_b);
                Self { decoder, head_w, head_b }
            }

            pub fn export_grads(&self, grads: &Gradients, params: &mut $params) {
                self.decoder.export_grads(grads, &mut params.decoder);
                grads.accumulate_into(self.head_w, &mut params.head_w);
                grads.accumulate_into(self.head_b, &mut params.head_b);
            }
        }
    };
}

taped_phase_impl!(TapedInsertion, InsertionParams);
taped_phase_impl!(TapedDeletion, DeletionParams);
