//! Token encoder for the event module: learned token and position
//! embeddings followed by post-norm transformer blocks, plus last-token
//! event representations.

use ndarray::Array2;
use rand::Rng;

use crate::autodiff::{ParamGroup, ParamId, ParamStore, Tape, Var};
use crate::corpus::Span;
use crate::error::{Error, Result};
use crate::nn::{Dropout, Linear};

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug)]
struct LayerNorm {
    gain: ParamId,
    bias: ParamId,
}

impl LayerNorm {
    fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        Self {
            gain: store.add_ones(format!("{name}.gain"), ParamGroup::Encoder, (1, d)),
            bias: store.add_zeros(format!("{name}.bias"), ParamGroup::Encoder, (1, d)),
        }
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let normed = tape.layer_norm(x, LN_EPS);
        let g = tape.param(store, self.gain);
        let b = tape.param(store, self.bias);
        let scaled = tape.mul_row(normed, g);
        tape.add_row(scaled, b)
    }
}

#[derive(Clone, Debug)]
pub struct EncoderBlock {
    query: Linear,
    key: Linear,
    value: Linear,
    attn_out: Linear,
    attn_norm: LayerNorm,
    ff_in: Linear,
    ff_out: Linear,
    ff_norm: LayerNorm,
}

impl EncoderBlock {
    fn new(store: &mut ParamStore, name: &str, d: usize, d_ff: usize, rng: &mut impl Rng) -> Self {
        let g = ParamGroup::Encoder;
        Self {
            query: Linear::new(store, &format!("{name}.query"), g, d, d, rng),
            key: Linear::new(store, &format!("{name}.key"), g, d, d, rng),
            value: Linear::new(store, &format!("{name}.value"), g, d, d, rng),
            attn_out: Linear::new(store, &format!("{name}.attn_out"), g, d, d, rng),
            attn_norm: LayerNorm::new(store, &format!("{name}.attn_norm"), d),
            ff_in: Linear::new(store, &format!("{name}.ff_in"), g, d, d_ff, rng),
            ff_out: Linear::new(store, &format!("{name}.ff_out"), g, d_ff, d, rng),
            ff_norm: LayerNorm::new(store, &format!("{name}.ff_norm"), d),
        }
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, heads: usize, drop: &mut Dropout) -> Var {
        let d = tape.shape(x).1;
        let dh = d / heads;
        let q = self.query.forward(tape, store, x);
        let k = self.key.forward(tape, store, x);
        let v = self.value.forward(tape, store, x);
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = tape.slice_cols(q, h * dh, dh);
            let kh = tape.slice_cols(k, h * dh, dh);
            let vh = tape.slice_cols(v, h * dh, dh);
            let kt = tape.transpose(kh);
            let logits = tape.matmul(qh, kt);
            let logits = tape.scale(logits, 1.0 / (dh as f64).sqrt());
            let attn = tape.softmax_rows(logits);
            let attn = drop.apply(tape, attn);
            outs.push(tape.matmul(attn, vh));
        }
        let merged = tape.concat_cols(&outs);
        let attn_out = self.attn_out.forward(tape, store, merged);
        let attn_out = drop.apply(tape, attn_out);
        let res = tape.add(x, attn_out);
        let x1 = self.attn_norm.forward(tape, store, res);

        let ff = self.ff_in.forward(tape, store, x1);
        let ff = tape.gelu(ff);
        let ff = self.ff_out.forward(tape, store, ff);
        let ff = drop.apply(tape, ff);
        let res = tape.add(x1, ff);
        self.ff_norm.forward(tape, store, res)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderDims {
    pub vocab: usize,
    pub max_len: usize,
    pub d_enc: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub plain_layers: usize,
    pub joint_layers: usize,
}

/// `plain_layers + joint_layers` transformer blocks sharing `d_enc`.
#[derive(Clone, Debug)]
pub struct EncoderStack {
    pub dims: EncoderDims,
    token_embedding: ParamId,
    position_embedding: ParamId,
    embed_norm: LayerNorm,
    blocks: Vec<EncoderBlock>,
}

impl EncoderStack {
    pub fn new(store: &mut ParamStore, dims: EncoderDims, rng: &mut impl Rng) -> Result<Self> {
        if dims.joint_layers == 0 {
            return Err(Error::Config("at least one joint layer is required".into()));
        }
        if dims.heads == 0 || !dims.d_enc.is_multiple_of(dims.heads) {
            return Err(Error::Config(format!(
                "d_enc {} is not divisible by {} heads",
                dims.d_enc, dims.heads
            )));
        }
        let g = ParamGroup::Encoder;
        let token_embedding = store.add_normal("encoder.token_embedding", g, (dims.vocab, dims.d_enc), 0.1, rng);
        let position_embedding = store.add_normal("encoder.position_embedding", g, (dims.max_len, dims.d_enc), 0.1, rng);
        let embed_norm = LayerNorm::new(store, "encoder.embed_norm", dims.d_enc);
        let blocks = (0..dims.plain_layers + dims.joint_layers)
            .map(|l| EncoderBlock::new(store, &format!("encoder.layer{}", l + 1), dims.d_enc, dims.d_ff, rng))
            .collect();
        Ok(Self {
            dims,
            token_embedding,
            position_embedding,
            embed_norm,
            blocks,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.blocks.len()
    }

    pub fn token_embedding(&self) -> ParamId {
        self.token_embedding
    }

    /// Input representations `H⁰` for vocabulary ids.
    pub fn embed(&self, tape: &mut Tape, store: &ParamStore, ids: &[usize], drop: &mut Dropout) -> Result<Var> {
        if ids.is_empty() {
            return Err(Error::Argument("cannot encode an empty sentence".into()));
        }
        if ids.len() > self.dims.max_len {
            return Err(Error::Argument(format!(
                "sentence of {} tokens exceeds max_len {}",
                ids.len(),
                self.dims.max_len
            )));
        }
        let table = tape.param(store, self.token_embedding);
        let tok = tape.select_rows(table, ids);
        let pos_table = tape.param(store, self.position_embedding);
        let positions: Vec<usize> = (0..ids.len()).collect();
        let pos = tape.select_rows(pos_table, &positions);
        let sum = tape.add(tok, pos);
        let h = self.embed_norm.forward(tape, store, sum);
        Ok(drop.apply(tape, h))
    }

    /// Applies block `layer` (1-based) to `h_prev`.
    pub fn encode_layer(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        h_prev: Var,
        layer: usize,
        drop: &mut Dropout,
    ) -> Result<Var> {
        if layer == 0 || layer > self.blocks.len() {
            return Err(Error::Argument(format!(
                "layer index {layer} outside 1..={}",
                self.blocks.len()
            )));
        }
        if tape.shape(h_prev).1 != self.dims.d_enc || tape.shape(h_prev).0 == 0 {
            return Err(Error::Argument(format!(
                "token matrix {:?} does not match d_enc {}",
                tape.shape(h_prev),
                self.dims.d_enc
            )));
        }
        Ok(self.blocks[layer - 1].forward(tape, store, h_prev, self.dims.heads, drop))
    }

    /// Evaluation-mode single-layer encoding of a concrete matrix.
    pub fn encode_layer_values(&self, store: &ParamStore, h_prev: &Array2<f64>, layer: usize) -> Result<Array2<f64>> {
        let mut tape = Tape::new();
        let h = tape.leaf(h_prev.clone());
        let out = self.encode_layer(&mut tape, store, h, layer, &mut Dropout::eval())?;
        Ok(tape.value(out).clone())
    }
}

/// Rows of `h` at the last token of each span (`|spans| × d`).
pub fn event_reps(tape: &mut Tape, h: Var, spans: &[Span]) -> Result<Var> {
    let n = tape.shape(h).0;
    if let Some(bad) = spans.iter().find(|s| s.is_empty() || s.end > n) {
        return Err(Error::Argument(format!("span {bad} out of bounds for {n} tokens")));
    }
    let idx: Vec<usize> = spans.iter().map(Span::last).collect();
    Ok(tape.select_rows(h, &idx))
}
