//! Bidirectional (non-causal) pre-norm transformer decoder stack.
//!
//! The same stack is instantiated twice with fully independent parameters:
//! once as the insertion model and once as the deletion model. Attention is
//! full because the hypothesis is not generated left-to-right; there is no
//! causal mask anywhere.

use crate::autodiff::{Tape, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ffn: usize,
    pub max_positions: usize,
    pub dropout_rate: f32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: crate::insdel::vocab::VOCAB_SIZE,
            d_model: 128,
            n_heads: 4,
            n_layers: 2,
            d_ffn: 512,
            max_positions: 128,
            dropout_rate: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) {
        assert!(self.d_model > 0 && self.n_heads > 0, "model dimensions must be positive");
        assert_eq!(
            self.d_model % self.n_heads,
            0,
            "d_model {} not divisible by n_heads {}",
            self.d_model,
            self.n_heads
        );
        assert!(
            self.max_positions >= 4,
            "max_positions {} too small for any canvas",
            self.max_positions
        );
        assert!((0.0..1.0).contains(&self.dropout_rate), "dropout_rate out of range");
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

// ── flat parameter layout ───────────────────────────────────────────
// One index scheme shared by the tensor store and the per-tape var mirror,
// so gradient export can never pair the wrong tensors.

const GLOBALS: usize = 3; // token_emb, pos_emb, seg_emb
const PER_LAYER: usize = 16;
const LAYER_NAMES: [&str; PER_LAYER] = [
    "ln1_gain", "ln1_bias", "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "ln2_gain",
    "ln2_bias", "ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoderLayout {
    pub n_layers: usize,
}

impl DecoderLayout {
    pub fn len(&self) -> usize {
        GLOBALS + PER_LAYER * self.n_layers + 2
    }

    pub fn token_emb(&self) -> usize {
        0
    }

    pub fn pos_emb(&self) -> usize {
        1
    }

    pub fn seg_emb(&self) -> usize {
        2
    }

    fn layer_base(&self, layer: usize) -> usize {
        assert!(layer < self.n_layers, "layer {layer} out of range");
        GLOBALS + PER_LAYER * layer
    }

    pub fn layer_slot(&self, layer: usize, slot: usize) -> usize {
        assert!(slot < PER_LAYER);
        self.layer_base(layer) + slot
    }

    pub fn final_gain(&self) -> usize {
        GLOBALS + PER_LAYER * self.n_layers
    }

    pub fn final_bias(&self) -> usize {
        self.final_gain() + 1
    }

    pub fn name(&self, index: usize) -> String {
        match index {
            0 => "token_emb".into(),
            1 => "pos_emb".into(),
            2 => "seg_emb".into(),
            i if i >= self.final_gain() => {
                if i == self.final_gain() {
                    "final_ln_gain".into()
                } else {
                    "final_ln_bias".into()
                }
            }
            i => {
                let layer = (i - GLOBALS) / PER_LAYER;
                let slot = (i - GLOBALS) % PER_LAYER;
                format!("layer{layer}.{}", LAYER_NAMES[slot])
            }
        }
    }
}

/// The trainable tensors of one decoder stack, in flat layout order.
pub struct DecoderParams {
    pub config: ModelConfig,
    layout: DecoderLayout,
    tensors: Vec<Tensor>,
}

const INIT_STD: f32 = 0.02;

fn normal(rng: &mut ChaCha8Rng, n: usize, std: f32) -> Vec<f32> {
    // Box-Muller; two uniforms per draw keeps the stream layout obvious.
    (0..n)
        .map(|_| {
            let u1: f32 = rng.gen_range(f32::EPSILON..1.0);
            let u2: f32 = rng.gen_range(0.0..1.0);
            std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f32::consts::PI * u2).cos()
        })
        .collect()
}

impl DecoderParams {
    /// Initialize embeddings and weights from N(0, 0.02), biases and norm
    /// offsets at zero, norm gains at one. Draw order follows the flat
    /// layout so the stream is reproducible.
    pub fn init(config: ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        config.validate();
        let layout = DecoderLayout { n_layers: config.n_layers };
        let d = config.d_model;
        let f = config.d_ffn;
        let mut tensors = Vec::with_capacity(layout.len());
        let weight = |rng: &mut ChaCha8Rng, rows: usize, cols: usize| {
            Tensor::param(normal(rng, rows * cols, INIT_STD), vec![rows, cols])
        };
        let ones = |n: usize| Tensor::param(vec![1.0; n], vec![n]);
        let zeros_vec = |n: usize| Tensor::param(vec![0.0; n], vec![n]);

        tensors.push(weight(rng, config.vocab_size, d)); // token_emb
        tensors.push(weight(rng, config.max_positions, d)); // pos_emb
        tensors.push(weight(rng, 2, d)); // seg_emb
        for _ in 0..config.n_layers {
            tensors.push(ones(d)); // ln1_gain
            tensors.push(zeros_vec(d)); // ln1_bias
            tensors.push(weight(rng, d, d)); // wq
            tensors.push(zeros_vec(d)); // bq
            tensors.push(weight(rng, d, d)); // wk
            tensors.push(zeros_vec(d)); // bk
            tensors.push(weight(rng, d, d)); // wv
            tensors.push(zeros_vec(d)); // bv
            tensors.push(weight(rng, d, d)); // wo
            tensors.push(zeros_vec(d)); // bo
            tensors.push(ones(d)); // ln2_gain
            tensors.push(zeros_vec(d)); // ln2_bias
            tensors.push(weight(rng, d, f)); // ffn_w1
            tensors.push(zeros_vec(f)); // ffn_b1
            tensors.push(weight(rng, f, d)); // ffn_w2
            tensors.push(zeros_vec(d)); // ffn_b2
        }
        tensors.push(ones(d)); // final_ln_gain
        tensors.push(zeros_vec(d)); // final_ln_bias
        DecoderParams { config, layout, tensors }
    }

    pub fn layout(&self) -> DecoderLayout {
        self.layout
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn tensor(&self, index: usize) -> &Tensor {
        &self.tensors[index]
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn assert_finite(&self) {
        for (i, t) in self.tensors.iter().enumerate() {
            assert!(
                t.data().iter().all(|v| v.is_finite()),
                "non-finite value in parameter {}",
                self.layout.name(i)
            );
        }
    }
}

/// Per-tape mirror of a decoder's parameters: one [`Var`] per tensor in the
/// same flat order. Built once per forward pass.
pub struct TapedDecoder {
    pub config: ModelConfig,
    pub(crate) layout: DecoderLayout,
    pub(crate) vars: Vec<Var>,
}

impl TapedDecoder {
    /// Register every tensor as a gradient-tracked parameter.
    pub fn register(tape: &mut Tape, params: &DecoderParams) -> Self {
        let vars = params.tensors.iter().map(|t| tape.param(t)).collect();
        TapedDecoder { config: params.config, layout: params.layout, vars }
    }

    /// Register every tensor as a constant (evaluation mode; no gradient
    /// bookkeeping).
    pub fn register_frozen(tape: &mut Tape, params: &DecoderParams) -> Self {
        let vars = params.tensors.iter().map(|t| tape.constant(t)).collect();
        TapedDecoder { config: params.config, layout: params.layout, vars }
    }

    pub fn var(&self, index: usize) -> Var {
        self.vars[index]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Accumulate this pass's gradients into the parameter tensors,
    /// materializing zero buffers for parameters the loss never touched.
    pub fn export_grads(&self, grads: &crate::autodiff::Gradients, params: &mut DecoderParams) {
        assert_eq!(self.vars.len(), params.tensors.len(), "export_grads: layout mismatch");
        for (var, tensor) in self.vars.iter().zip(params.tensors.iter_mut()) {
            grads.accumulate_into(*var, tensor);
        }
    }
}

/// Dropout control for one forward pass. Evaluation passes use [`Mode::Eval`]
/// and are bitwise deterministic.
pub enum Mode<'a> {
    Train { rng: &'a mut ChaCha8Rng },
    Eval,
}

impl Mode<'_> {
    fn dropout(&mut self, tape: &mut Tape, x: Var, rate: f32) -> Var {
        match self {
            Mode::Train { rng } if rate > 0.0 => {
                let keep = 1.0 - rate;
                let n = tape.value(x).len();
                let mask: Vec<f32> = (0..n)
                    .map(|_| if rng.gen_range(0.0..1.0) < rate { 0.0 } else { 1.0 / keep })
                    .collect();
                tape.mul_const(x, mask)
            }
            _ => x,
        }
    }
}

/// Sum of token, learned position, and segment embeddings, one row per
/// canvas position.
pub fn embed_canvas(
    tape: &mut Tape,
    dec: &TapedDecoder,
    tokens: &[usize],
    segments: &[usize],
) -> Var {
    let t = tokens.len();
    assert_eq!(t, segments.len(), "embed_canvas: {} tokens vs {} segments", t, segments.len());
    assert!(
        t <= dec.config.max_positions,
        "canvas length {} exceeds max_positions {}",
        t,
        dec.config.max_positions
    );
    for &id in tokens {
        assert!(id < dec.config.vocab_size, "token id {} out of vocabulary", id);
    }
    for &s in segments {
        assert!(s < 2, "segment id {s} out of range");
    }
    let tok = tape.gather_rows(dec.var(dec.layout.token_emb()), tokens);
    let positions: Vec<usize> = (0..t).collect();
    let pos = tape.gather_rows(dec.var(dec.layout.pos_emb()), &positions);
    let seg = tape.gather_rows(dec.var(dec.layout.seg_emb()), segments);
    let te_pe = tape.add(tok, pos);
    tape.add(te_pe, seg)
}

/// Scaled dot-product attention over all positions with per-head projection.
/// `pad_mask[j] = true` removes position `j` from every query's key set.
pub fn multi_head_attention(
    tape: &mut Tape,
    dec: &TapedDecoder,
    layer: usize,
    x: Var,
    pad_mask: Option<&[bool]>,
) -> Var {
    let t = tape.shape(x)[0];
    let d = dec.config.d_model;
    let dh = dec.config.head_dim();
    let lw = |slot: usize| dec.var(dec.layout.layer_slot(layer, slot));
    // slots 2..9 are wq,bq,wk,bk,wv,bv,wo,bo
    let q0 = tape.matmul(x, lw(2));
    let q = tape.add_row(q0, lw(3));
    let k0 = tape.matmul(x, lw(4));
    let k = tape.add_row(k0, lw(5));
    let v0 = tape.matmul(x, lw(6));
    let v = tape.add_row(v0, lw(7));

    let mask_bias: Option<Vec<f32>> = pad_mask.map(|mask| {
        assert_eq!(mask.len(), t, "pad_mask length {} vs {} positions", mask.len(), t);
        assert!(!mask.iter().all(|&m| m), "attention: every key masked");
        let mut bias = vec![0.0f32; t * t];
        for r in 0..t {
            for c in 0..t {
                if mask[c] {
                    bias[r * t + c] = f32::NEG_INFINITY;
                }
            }
        }
        bias
    });

    let scale = 1.0 / (dh as f32).sqrt();
    let mut heads = Vec::with_capacity(dec.config.n_heads);
    for h in 0..dec.config.n_heads {
        let qh = tape.slice_cols(q, h * dh, dh);
        let kh = tape.slice_cols(k, h * dh, dh);
        let vh = tape.slice_cols(v, h * dh, dh);
        let scores0 = tape.matmul_tb(qh, kh);
        let mut scores = tape.scale(scores0, scale);
        if let Some(bias) = &mask_bias {
            scores = tape.add_const(scores, bias);
        }
        let attn = tape.softmax_rows(scores);
        heads.push(tape.matmul(attn, vh));
    }
    let ctx = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads) };
    debug_assert_eq!(tape.shape(ctx), &[t, d]);
    let out0 = tape.matmul(ctx, lw(8));
    tape.add_row(out0, lw(9))
}

/// Full stack: embeddings, `n_layers` pre-norm attention + FFN blocks with
/// residual connections, then a final layer norm. Dropout is applied to the
/// embedding sum and to each sublayer output, only in train mode.
pub fn decoder_forward(
    tape: &mut Tape,
    dec: &TapedDecoder,
    tokens: &[usize],
    segments: &[usize],
    pad_mask: Option<&[bool]>,
    mode: &mut Mode,
) -> Var {
    let rate = dec.config.dropout_rate;
    let embedded = embed_canvas(tape, dec, tokens, segments);
    let mut h = mode.dropout(tape, embedded, rate);
    for layer in 0..dec.config.n_layers {
        let lw = |slot: usize| dec.var(dec.layout.layer_slot(layer, slot));
        let normed = tape.layer_norm(h, lw(0), lw(1));
        let attn = multi_head_attention(tape, dec, layer, normed, pad_mask);
        let attn = mode.dropout(tape, attn, rate);
        h = tape.add(h, attn);

        let normed = tape.layer_norm(h, lw(10), lw(11));
        let f0 = tape.matmul(normed, lw(12));
        let f1 = tape.add_row(f0, lw(13));
        let f2 = tape.relu(f1);
        let f3 = tape.matmul(f2, lw(14));
        let f4 = tape.add_row(f3, lw(15));
        let f5 = mode.dropout(tape, f4, rate);
        h = tape.add(h, f5);
    }
    tape.layer_norm(h, dec.var(dec.layout.final_gain()), dec.var(dec.layout.final_bias()))
}
