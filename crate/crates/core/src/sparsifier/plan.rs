use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::wta::WtaLayer;
use crate::encoder::DenseTokenMatrix;
use crate::error::{Error, Result};
use crate::sparse::{
    l2_normalize, max_pool, BucketDescriptor, BucketedRepresentation, SparseVector,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanMode {
    Single,
    Vertical,
    Horizontal,
}

impl fmt::Display for PlanMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PlanMode::Single => "single",
            PlanMode::Vertical => "vertical",
            PlanMode::Horizontal => "horizontal",
        })
    }
}

impl FromStr for PlanMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(PlanMode::Single),
            "vertical" => Ok(PlanMode::Vertical),
            "horizontal" => Ok(PlanMode::Horizontal),
            other => Err(Error::invalid(format!("unknown bucket mode {other:?}"))),
        }
    }
}

/// Which `k` a forward pass should use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Budget {
    Train,
    Infer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanEntry {
    /// Source encoder layer, 1-based.
    pub layer: u32,
    /// Aspect index, 1-based.
    pub aspect: u32,
    pub wta: WtaLayer,
}

impl PlanEntry {
    pub fn descriptor(&self) -> BucketDescriptor {
        BucketDescriptor::new(self.layer, self.aspect, self.wta.output_size() as u32)
    }

    pub fn k(&self, budget: Budget) -> usize {
        match budget {
            Budget::Train => self.wta.train_k(),
            Budget::Infer => self.wta.infer_k(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BucketPlan {
    mode: PlanMode,
    entries: Vec<PlanEntry>,
}

/// Shape of a freshly initialized plan.
#[derive(Debug, Clone)]
pub struct PlanSpec {
    pub mode: PlanMode,
    /// Source layers: one for `single`/`horizontal`, several for `vertical`.
    pub layers: Vec<u32>,
    /// Number of horizontal aspects (ignored otherwise).
    pub aspects: usize,
    pub hidden: usize,
    pub dim: usize,
    pub k: usize,
    pub sparsity: f32,
}

impl BucketPlan {
    pub fn new(mode: PlanMode, entries: Vec<PlanEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::invalid(
                "bucket plan must contain at least one bucket",
            ));
        }
        if entries.iter().any(|e| e.layer == 0 || e.aspect == 0) {
            return Err(Error::invalid("bucket layer and aspect indices start at 1"));
        }
        let h = entries[0].wta.input_size();
        if entries.iter().any(|e| e.wta.input_size() != h) {
            return Err(Error::invalid("all WTA layers must share the input size"));
        }
        match mode {
            PlanMode::Single => {
                if entries.len() != 1 {
                    return Err(Error::invalid("single mode takes exactly one bucket"));
                }
            }
            PlanMode::Vertical => {
                for (i, e) in entries.iter().enumerate() {
                    if e.aspect != 1 {
                        return Err(Error::invalid("vertical buckets use aspect 1"));
                    }
                    if entries[..i].iter().any(|o| o.layer == e.layer) {
                        return Err(Error::invalid(format!(
                            "vertical buckets need distinct layers, {} repeats",
                            e.layer
                        )));
                    }
                }
            }
            PlanMode::Horizontal => {
                let j = entries[0].layer;
                for (i, e) in entries.iter().enumerate() {
                    if e.layer != j {
                        return Err(Error::invalid("horizontal buckets share one source layer"));
                    }
                    if entries[..i].iter().any(|o| o.aspect == e.aspect) {
                        return Err(Error::invalid(format!(
                            "horizontal buckets need distinct aspects, {} repeats",
                            e.aspect
                        )));
                    }
                }
            }
        }
        Ok(Self { mode, entries })
    }

    /// Independently initialized WTA layers per bucket, drawn in plan order.
    pub fn random(spec: &PlanSpec, rng: &mut impl Rng) -> Result<Self> {
        let pairs: Vec<(u32, u32)> = match spec.mode {
            PlanMode::Single => {
                if spec.layers.len() != 1 {
                    return Err(Error::invalid("single mode needs exactly one layer"));
                }
                vec![(spec.layers[0], 1)]
            }
            PlanMode::Vertical => spec.layers.iter().map(|&j| (j, 1)).collect(),
            PlanMode::Horizontal => {
                if spec.layers.len() != 1 {
                    return Err(Error::invalid("horizontal mode needs exactly one layer"));
                }
                if spec.aspects == 0 {
                    return Err(Error::invalid("horizontal mode needs at least one aspect"));
                }
                (1..=spec.aspects as u32)
                    .map(|m| (spec.layers[0], m))
                    .collect()
            }
        };
        let entries = pairs
            .into_iter()
            .map(|(layer, aspect)| {
                Ok(PlanEntry {
                    layer,
                    aspect,
                    wta: WtaLayer::random(spec.hidden, spec.dim, spec.k, spec.sparsity, rng)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(spec.mode, entries)
    }

    /// Infers the mode from the `(layer, aspect)` pattern.
    pub fn infer_mode(entries: &[PlanEntry]) -> PlanMode {
        if entries.len() == 1 {
            PlanMode::Single
        } else if entries.iter().all(|e| e.layer == entries[0].layer) {
            PlanMode::Horizontal
        } else {
            PlanMode::Vertical
        }
    }

    pub fn mode(&self) -> PlanMode {
        self.mode
    }

    pub fn entries(&self) -> &[PlanEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [PlanEntry] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn hidden(&self) -> usize {
        self.entries[0].wta.input_size()
    }

    pub fn max_layer(&self) -> u32 {
        self.entries.iter().map(|e| e.layer).max().unwrap_or(0)
    }

    pub fn descriptors(&self) -> Vec<BucketDescriptor> {
        self.entries.iter().map(PlanEntry::descriptor).collect()
    }

    pub fn set_infer_k(&mut self, k: usize) -> Result<()> {
        for e in &mut self.entries {
            e.wta.set_infer_k(k)?;
        }
        Ok(())
    }
}

fn find_layer(layers: &[DenseTokenMatrix], j: u32) -> Result<&DenseTokenMatrix> {
    layers
        .iter()
        .find(|m| m.layer() == j)
        .ok_or_else(|| Error::invalid(format!("encoder layer {j} missing from input")))
}

/// WTA per token, max-pool over tokens, then L2 normalization.
pub fn build_bucket(
    layers: &[DenseTokenMatrix],
    entry: &PlanEntry,
    budget: Budget,
) -> Result<SparseVector> {
    let m = find_layer(layers, entry.layer)?;
    let k = entry.k(budget);
    let per_token = (0..m.tokens())
        .map(|t| entry.wta.forward(m.row(t), k))
        .collect::<Result<Vec<_>>>()?;
    Ok(l2_normalize(&max_pool(&per_token)?))
}

/// One bucket per plan entry, in plan order, with unit weights.
pub fn encode_representation(
    layers: &[DenseTokenMatrix],
    plan: &BucketPlan,
    budget: Budget,
) -> Result<BucketedRepresentation> {
    let buckets = plan
        .entries()
        .iter()
        .map(|e| Ok((e.descriptor(), build_bucket(layers, e, budget)?)))
        .collect::<Result<Vec<_>>>()?;
    BucketedRepresentation::new(buckets)
}
