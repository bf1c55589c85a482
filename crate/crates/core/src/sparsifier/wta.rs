//! Winner-take-all projection layer with a fixed weight-sparsity mask.
//!
//! `z = e · (W ⊙ M) + b`; only the `k` largest entries of `z` (signed, lower
//! dimension wins ties) survive. Gradients flow back through the winners only.

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::sparse::{select_top_k, SparseVector};

pub const DEFAULT_WEIGHT_SPARSITY: f32 = 0.3;

#[derive(Debug, Clone, PartialEq)]
pub struct WtaLayer {
    input: usize,
    output: usize,
    /// `h × n`, input-major. Zero wherever the mask is zero.
    weight: Vec<f64>,
    bias: Vec<f64>,
    /// `true` = connection kept.
    mask: Vec<bool>,
    train_k: usize,
    infer_k: usize,
    sparsity: f32,
}

/// Per-token state recorded by [`WtaLayer::forward_traced`].
#[derive(Debug, Clone, PartialEq)]
pub struct WtaTrace {
    input: Vec<f64>,
    /// `(dim, z)` for every winner, ascending by dim; exact zeros excluded.
    winners: Vec<(u32, f64)>,
}

impl WtaTrace {
    pub fn winners(&self) -> &[(u32, f64)] {
        &self.winners
    }
}

/// Gradients of a WTA layer. `weight` is dense `h × n`.
#[derive(Debug, Clone, PartialEq)]
pub struct WtaGrads {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl WtaGrads {
    pub fn zeros(layer: &WtaLayer) -> Self {
        Self {
            weight: vec![0.0; layer.weight.len()],
            bias: vec![0.0; layer.bias.len()],
        }
    }
}

fn severed_per_output(sparsity: f32, input: usize) -> usize {
    // f32 fractions such as 0.3 sit slightly above their decimal value.
    let exact = f64::from(sparsity) * input as f64;
    ((exact - 1e-6).ceil().max(0.0) as usize).min(input)
}

impl WtaLayer {
    /// Draws `W ~ U(-1/√h, 1/√h)`, `b = 0`, and for every output dimension
    /// severs a uniformly random `⌈s·h⌉`-subset of inputs.
    pub fn random(
        input: usize,
        output: usize,
        k: usize,
        sparsity: f32,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Self::check_shape(input, output, k, sparsity)?;
        let bound = 1.0 / (input as f32).sqrt();
        let mut weight: Vec<f64> = (0..input * output)
            .map(|_| f64::from(rng.gen_range(-bound..=bound)))
            .collect();
        let mut mask = vec![true; input * output];
        let cut = severed_per_output(sparsity, input);
        if cut > 0 {
            for d in 0..output {
                for i in sample(rng, input, cut) {
                    mask[i * output + d] = false;
                    weight[i * output + d] = 0.0;
                }
            }
        }
        Ok(Self {
            input,
            output,
            weight,
            bias: vec![0.0; output],
            mask,
            train_k: k,
            infer_k: k,
            sparsity,
        })
    }

    pub fn from_parts(
        input: usize,
        output: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
        mask: Vec<bool>,
        train_k: usize,
        sparsity: f32,
    ) -> Result<Self> {
        Self::check_shape(input, output, train_k, sparsity)?;
        if weight.len() != input * output || mask.len() != input * output || bias.len() != output {
            return Err(Error::invalid("WTA parameter shape mismatch"));
        }
        if weight.iter().zip(&mask).any(|(&w, &m)| !m && w != 0.0) {
            return Err(Error::invalid("WTA weight is nonzero under the mask"));
        }
        Ok(Self {
            input,
            output,
            weight,
            bias,
            mask,
            train_k,
            infer_k: train_k,
            sparsity,
        })
    }

    fn check_shape(input: usize, output: usize, k: usize, sparsity: f32) -> Result<()> {
        if input == 0 || output == 0 {
            return Err(Error::invalid(
                "WTA input and output sizes must be positive",
            ));
        }
        if k == 0 || k > output {
            return Err(Error::invalid(format!("k={k} must be in 1..={output}")));
        }
        if !(0.0..1.0).contains(&sparsity) {
            return Err(Error::invalid(format!(
                "weight sparsity {sparsity} must be in [0, 1)"
            )));
        }
        Ok(())
    }

    pub fn input_size(&self) -> usize {
        self.input
    }

    pub fn output_size(&self) -> usize {
        self.output
    }

    pub fn train_k(&self) -> usize {
        self.train_k
    }

    pub fn infer_k(&self) -> usize {
        self.infer_k
    }

    pub fn sparsity(&self) -> f32 {
        self.sparsity
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Sets the inference-time budget; it may differ from the training `k`.
    pub fn set_infer_k(&mut self, k: usize) -> Result<()> {
        if k == 0 || k > self.output {
            return Err(Error::invalid(format!(
                "infer k={k} must be in 1..={}",
                self.output
            )));
        }
        self.infer_k = k;
        Ok(())
    }

    pub(crate) fn params_mut(&mut self) -> [&mut Vec<f64>; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub(crate) fn params(&self) -> [&Vec<f64>; 2] {
        [&self.weight, &self.bias]
    }

    /// Zeroes every masked weight.
    pub(crate) fn enforce_mask(&mut self) {
        for (w, &m) in self.weight.iter_mut().zip(&self.mask) {
            if !m {
                *w = 0.0;
            }
        }
    }

    /// Largest `|W|` over severed connections; zero whenever the mask holds.
    pub fn masked_weight_max(&self) -> f64 {
        self.weight
            .iter()
            .zip(&self.mask)
            .filter(|(_, &m)| !m)
            .map(|(w, _)| w.abs())
            .fold(0.0, f64::max)
    }

    fn check_input(&self, len: usize, k: usize) -> Result<()> {
        if len != self.input {
            return Err(Error::invalid(format!(
                "WTA input has length {len}, expected {}",
                self.input
            )));
        }
        if k == 0 || k > self.output {
            return Err(Error::invalid(format!(
                "k={k} must be in 1..={}",
                self.output
            )));
        }
        Ok(())
    }

    /// Dense pre-activation `z`.
    pub(crate) fn activations(&self, e: &[f64]) -> Vec<f64> {
        let n = self.output;
        let mut z = self.bias.clone();
        for (i, &ei) in e.iter().enumerate() {
            if ei == 0.0 {
                continue;
            }
            let row = &self.weight[i * n..(i + 1) * n];
            for (zd, &w) in z.iter_mut().zip(row) {
                *zd += ei * w;
            }
        }
        z
    }

    fn winners(&self, e: &[f64], k: usize) -> Vec<(u32, f64)> {
        let z = self.activations(e);
        let mut cand: Vec<(u32, f64)> = z
            .into_iter()
            .enumerate()
            .map(|(d, v)| (d as u32, v))
            .collect();
        select_top_k(&mut cand, k);
        cand.retain(|&(_, v)| v != 0.0);
        cand
    }

    /// Sparse top-`k` activation of one token embedding.
    pub fn forward(&self, e: &[f32], k: usize) -> Result<SparseVector> {
        self.check_input(e.len(), k)?;
        let e: Vec<f64> = e.iter().map(|&v| f64::from(v)).collect();
        let winners = self.winners(&e, k);
        let (indices, values): (Vec<u32>, Vec<f32>) = winners
            .into_iter()
            .map(|(d, v)| (d, v as f32))
            .filter(|&(_, v)| v != 0.0)
            .unzip();
        SparseVector::new(self.output as u32, indices, values)
    }

    /// Double-precision forward that records the winner set for backward.
    pub fn forward_traced(&self, e: &[f64], k: usize) -> Result<WtaTrace> {
        self.check_input(e.len(), k)?;
        Ok(WtaTrace {
            input: e.to_vec(),
            winners: self.winners(e, k),
        })
    }

    /// Linear-layer gradients restricted to the recorded winners. `upstream`
    /// holds `(dim, ∂L/∂S[dim])` and must lie within the winner set. Weight and
    /// bias gradients are accumulated into `grads`; the input gradient is
    /// returned.
    pub fn backward_into(
        &self,
        trace: &WtaTrace,
        upstream: &[(u32, f64)],
        grads: &mut WtaGrads,
    ) -> Result<Vec<f64>> {
        if trace.input.len() != self.input {
            return Err(Error::Usage(
                "trace was recorded on a different layer".into(),
            ));
        }
        let n = self.output;
        let mut grad_input = vec![0.0; self.input];
        for &(d, g) in upstream {
            if trace.winners.binary_search_by_key(&d, |w| w.0).is_err() {
                return Err(Error::Usage(format!(
                    "upstream gradient on dim {d}, which lost in the recorded forward pass"
                )));
            }
            if g == 0.0 {
                continue;
            }
            let d = d as usize;
            grads.bias[d] += g;
            for (i, (gi, &xi)) in grad_input.iter_mut().zip(&trace.input).enumerate() {
                let idx = i * n + d;
                if self.mask[idx] {
                    grads.weight[idx] += xi * g;
                    *gi += self.weight[idx] * g;
                }
            }
        }
        Ok(grad_input)
    }

    /// Allocating variant of [`WtaLayer::backward_into`]: returns
    /// `(grad_e, grad_W, grad_b)`.
    pub fn backward(
        &self,
        trace: &WtaTrace,
        upstream: &SparseVector,
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let up: Vec<(u32, f64)> = upstream.iter().map(|(d, g)| (d, f64::from(g))).collect();
        let mut grads = WtaGrads::zeros(self);
        let ge = self.backward_into(trace, &up, &mut grads)?;
        Ok((ge, grads.weight, grads.bias))
    }
}
