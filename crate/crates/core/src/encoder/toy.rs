//! A small trainable contextual encoder: an embedding lookup followed by `V`
//! mixing layers, each a sliding-window mean over neighbouring tokens, an
//! `h × h` projection with bias, and a pointwise nonlinearity.
//!
//! Parameters are held in `f64` so that gradient checks can run at double
//! precision; the public per-layer outputs are [`DenseTokenMatrix`] values in
//! single precision.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-layer dense embeddings for one token sequence, `tokens × hidden`,
/// token-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTokenMatrix {
    layer: u32,
    tokens: usize,
    hidden: usize,
    values: Vec<f32>,
}

impl DenseTokenMatrix {
    pub fn new(layer: u32, tokens: usize, hidden: usize, values: Vec<f32>) -> Result<Self> {
        if tokens == 0 || hidden == 0 {
            return Err(Error::invalid(
                "token count and hidden size must be positive",
            ));
        }
        if values.len() != tokens * hidden {
            return Err(Error::invalid(format!(
                "expected {} values for {tokens}x{hidden}, got {}",
                tokens * hidden,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite embedding value".into()));
        }
        Ok(Self {
            layer,
            tokens,
            hidden,
            values,
        })
    }

    pub fn layer(&self) -> u32 {
        self.layer
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, token: usize) -> &[f32] {
        &self.values[token * self.hidden..(token + 1) * self.hidden]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Nonlinearity {
    Identity,
    #[default]
    Tanh,
    /// Tanh approximation of GELU.
    Gelu,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl Nonlinearity {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Identity => x,
            Nonlinearity::Tanh => x.tanh(),
            Nonlinearity::Gelu => 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Identity => 1.0,
            Nonlinearity::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Nonlinearity::Gelu => {
                let u = GELU_C * (x + GELU_A * x * x * x);
                let t = u.tanh();
                let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
            }
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Nonlinearity::Identity => 0,
            Nonlinearity::Tanh => 1,
            Nonlinearity::Gelu => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Nonlinearity::Identity),
            1 => Some(Nonlinearity::Tanh),
            2 => Some(Nonlinearity::Gelu),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixingLayer {
    pub window: usize,
    /// `h × h`, input-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyEncoder {
    vocab_size: usize,
    hidden: usize,
    /// `vocab_size × h`.
    pub embedding: Vec<f64>,
    pub layers: Vec<MixingLayer>,
    pub nonlinearity: Nonlinearity,
}

/// Initialization knobs for [`ToyEncoder::random`].
#[derive(Debug, Clone, Copy)]
pub struct EncoderInit {
    pub depth: usize,
    pub window: usize,
    /// Mixing weights start at `I + noise · U(-1/√h, 1/√h)`.
    pub mixing_noise: f64,
    pub nonlinearity: Nonlinearity,
}

impl Default for EncoderInit {
    fn default() -> Self {
        Self {
            depth: 6,
            window: 3,
            mixing_noise: 0.5,
            nonlinearity: Nonlinearity::Tanh,
        }
    }
}

impl ToyEncoder {
    pub fn from_parts(
        vocab_size: usize,
        hidden: usize,
        embedding: Vec<f64>,
        layers: Vec<MixingLayer>,
        nonlinearity: Nonlinearity,
    ) -> Result<Self> {
        if vocab_size == 0 || hidden == 0 {
            return Err(Error::invalid(
                "vocab size and hidden size must be positive",
            ));
        }
        if embedding.len() != vocab_size * hidden {
            return Err(Error::invalid("embedding table shape mismatch"));
        }
        for (j, l) in layers.iter().enumerate() {
            if l.window % 2 == 0 {
                return Err(Error::invalid(format!(
                    "layer {}: window width must be odd",
                    j + 1
                )));
            }
            if l.weight.len() != hidden * hidden || l.bias.len() != hidden {
                return Err(Error::invalid(format!("layer {}: shape mismatch", j + 1)));
            }
        }
        Ok(Self {
            vocab_size,
            hidden,
            embedding,
            layers,
            nonlinearity,
        })
    }

    /// Embedding entries `U(-1, 1)`; values are drawn in `f32` so that a
    /// freshly initialized encoder survives a checkpoint round trip exactly.
    pub fn random(
        vocab_size: usize,
        hidden: usize,
        init: EncoderInit,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if init.window.is_multiple_of(2) {
            return Err(Error::invalid("window width must be odd"));
        }
        let embedding = (0..vocab_size * hidden)
            .map(|_| f64::from(rng.gen_range(-1.0f32..1.0)))
            .collect();
        let scale = 1.0 / (hidden as f64).sqrt();
        let layers = (0..init.depth)
            .map(|_| {
                let mut weight = vec![0.0; hidden * hidden];
                for i in 0..hidden {
                    for o in 0..hidden {
                        let noise = if init.mixing_noise == 0.0 {
                            0.0
                        } else {
                            init.mixing_noise * scale * f64::from(rng.gen_range(-1.0f32..1.0))
                        };
                        let eye = if i == o { 1.0 } else { 0.0 };
                        weight[i * hidden + o] = f64::from((eye + noise) as f32);
                    }
                }
                MixingLayer {
                    window: init.window,
                    weight,
                    bias: vec![0.0; hidden],
                }
            })
            .collect();
        Self::from_parts(vocab_size, hidden, embedding, layers, init.nonlinearity)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    fn check_tokens(&self, token_ids: &[u32]) -> Result<()> {
        if token_ids.is_empty() {
            return Err(Error::EmptyInput("no tokens to encode".into()));
        }
        if let Some(bad) = token_ids.iter().find(|&&t| t as usize >= self.vocab_size) {
            return Err(Error::invalid(format!(
                "token id {bad} out of vocabulary range {}",
                self.vocab_size
            )));
        }
        Ok(())
    }

    /// Returns the `V` layer outputs, layer indices `1..=V`.
    pub fn encode_layers(&self, token_ids: &[u32]) -> Result<Vec<DenseTokenMatrix>> {
        let trace = self.forward(token_ids)?;
        let t = token_ids.len();
        trace
            .outputs
            .iter()
            .skip(1)
            .enumerate()
            .map(|(j, x)| {
                DenseTokenMatrix::new(
                    (j + 1) as u32,
                    t,
                    self.hidden,
                    x.iter().map(|&v| v as f32).collect(),
                )
            })
            .collect()
    }

    /// Double-precision forward pass keeping every intermediate needed for
    /// [`ToyEncoder::backward`].
    pub(crate) fn forward(&self, token_ids: &[u32]) -> Result<EncoderTrace> {
        self.check_tokens(token_ids)?;
        let h = self.hidden;
        let t = token_ids.len();
        let mut x0 = Vec::with_capacity(t * h);
        for &tok in token_ids {
            let row = tok as usize * h;
            x0.extend_from_slice(&self.embedding[row..row + h]);
        }
        let mut outputs = vec![x0];
        let mut mixed = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let prev = outputs.last().expect("layer 0 present");
            let a = window_mean(prev, t, h, layer.window);
            let mut p = vec![0.0; t * h];
            for tok in 0..t {
                let out = &mut p[tok * h..(tok + 1) * h];
                out.copy_from_slice(&layer.bias);
                for i in 0..h {
                    let ai = a[tok * h + i];
                    if ai == 0.0 {
                        continue;
                    }
                    let w = &layer.weight[i * h..(i + 1) * h];
                    for (o, wv) in out.iter_mut().zip(w) {
                        *o += ai * wv;
                    }
                }
            }
            let x: Vec<f64> = p.iter().map(|&v| self.nonlinearity.apply(v)).collect();
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(
                    "encoder produced a non-finite activation".into(),
                ));
            }
            mixed.push(a);
            pre.push(p);
            outputs.push(x);
        }
        Ok(EncoderTrace {
            tokens: token_ids.to_vec(),
            mixed,
            pre,
            outputs,
        })
    }

    /// Accumulates parameter gradients into `grads` given the gradient of the
    /// loss with respect to each layer output `1..=V` (`None` = zero).
    pub(crate) fn backward(
        &self,
        trace: &EncoderTrace,
        mut output_grads: Vec<Option<Vec<f64>>>,
        grads: &mut EncoderGrads,
    ) {
        let h = self.hidden;
        let t = trace.tokens.len();
        debug_assert_eq!(output_grads.len(), self.layers.len());
        let mut carry: Option<Vec<f64>> = None;
        for j in (0..self.layers.len()).rev() {
            let mut gx = output_grads[j].take();
            if let Some(c) = carry.take() {
                match gx.as_mut() {
                    Some(g) => g.iter_mut().zip(&c).for_each(|(a, b)| *a += b),
                    None => gx = Some(c),
                }
            }
            let Some(gx) = gx else {
                continue;
            };
            let layer = &self.layers[j];
            let gp: Vec<f64> = gx
                .iter()
                .zip(&trace.pre[j])
                .map(|(g, &p)| g * self.nonlinearity.derivative(p))
                .collect();
            let lg = &mut grads.layers[j];
            let a = &trace.mixed[j];
            let mut ga = vec![0.0; t * h];
            for tok in 0..t {
                let gp_row = &gp[tok * h..(tok + 1) * h];
                for (b, g) in lg.bias.iter_mut().zip(gp_row) {
                    *b += g;
                }
                for i in 0..h {
                    let ai = a[tok * h + i];
                    let w = &layer.weight[i * h..(i + 1) * h];
                    let gw = &mut lg.weight[i * h..(i + 1) * h];
                    let mut acc = 0.0;
                    for o in 0..h {
                        gw[o] += ai * gp_row[o];
                        acc += w[o] * gp_row[o];
                    }
                    ga[tok * h + i] = acc;
                }
            }
            carry = Some(window_mean_transpose(&ga, t, h, layer.window));
        }
        if let Some(g0) = carry {
            for (tok, &id) in trace.tokens.iter().enumerate() {
                let row = id as usize * h;
                for i in 0..h {
                    grads.embedding[row + i] += g0[tok * h + i];
                }
            }
        }
    }

    pub(crate) fn zero_grads(&self) -> EncoderGrads {
        EncoderGrads {
            embedding: vec![0.0; self.embedding.len()],
            layers: self
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weight: vec![0.0; l.weight.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    /// Parameter tensors in a fixed order: embedding, then per layer weight and
    /// bias.
    pub(crate) fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = vec![&mut self.embedding];
        for l in &mut self.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }

    pub(crate) fn params(&self) -> Vec<&Vec<f64>> {
        let mut out = vec![&self.embedding];
        for l in &self.layers {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub(crate) struct EncoderTrace {
    pub tokens: Vec<u32>,
    /// Window-averaged inputs per layer.
    pub mixed: Vec<Vec<f64>>,
    /// Pre-activations per layer.
    pub pre: Vec<Vec<f64>>,
    /// `outputs[0]` is the embedding lookup, `outputs[j]` layer `j`.
    pub outputs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LayerGrads {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct EncoderGrads {
    pub embedding: Vec<f64>,
    pub layers: Vec<LayerGrads>,
}

impl EncoderGrads {
    pub(crate) fn tensors(&self) -> Vec<&Vec<f64>> {
        let mut out = vec![&self.embedding];
        for l in &self.layers {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out
    }
}

fn window_bounds(tok: usize, t: usize, window: usize) -> (usize, usize) {
    let r = window / 2;
    (tok.saturating_sub(r), (tok + r + 1).min(t))
}

fn window_mean(x: &[f64], t: usize, h: usize, window: usize) -> Vec<f64> {
    if window <= 1 {
        return x.to_vec();
    }
    let mut out = vec![0.0; t * h];
    for tok in 0..t {
        let (lo, hi) = window_bounds(tok, t, window);
        let inv = 1.0 / (hi - lo) as f64;
        let row = &mut out[tok * h..(tok + 1) * h];
        for p in lo..hi {
            for (o, v) in row.iter_mut().zip(&x[p * h..(p + 1) * h]) {
                *o += v;
            }
        }
        row.iter_mut().for_each(|v| *v *= inv);
    }
    out
}

fn window_mean_transpose(g: &[f64], t: usize, h: usize, window: usize) -> Vec<f64> {
    if window <= 1 {
        return g.to_vec();
    }
    let mut out = vec![0.0; t * h];
    for tok in 0..t {
        let (lo, hi) = window_bounds(tok, t, window);
        let inv = 1.0 / (hi - lo) as f64;
        for p in lo..hi {
            for i in 0..h {
                out[p * h + i] += g[tok * h + i] * inv;
            }
        }
    }
    out
}
