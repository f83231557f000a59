//! General-feature encoders and the type-pair mask bank.
//!
//! Each unordered pair of distinct types `{u, v}` owns one mask `w` of length
//! `d`; the distance between an item of type `u` and one of type `v` is
//! `‖F_i⊙w − F_j⊙w‖₂`. Lookups of `(u, v)` and `(v, u)` return the same
//! parameter.

use std::collections::{BTreeMap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{FeatureStore, ItemId, ItemType};
use crate::error::{Error, Result};
use crate::losses::{LossScales, TripletWeightTable};
use crate::numcore::{masked_l2, NodeId, ParamId, ParamStore, Tape};

pub const DEFAULT_EMBED_DIM: usize = 128;
pub const DEFAULT_MASK_NOISE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EncoderKind {
    /// Stored features are the general features.
    Identity,
    /// `F = W₂ tanh(W₁ x + b₁) + b₂`.
    Affine { hidden: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Embedding size `d`. `None` means the input dimension for the identity
    /// encoder and [`DEFAULT_EMBED_DIM`] for the affine one.
    pub dim: Option<usize>,
    pub encoder: EncoderKind,
    /// Masks start at `1 + N(0, mask_noise²)`.
    pub mask_noise: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { dim: None, encoder: EncoderKind::Identity, mask_noise: DEFAULT_MASK_NOISE, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Encoder {
    Identity { dim: usize },
    Affine { input: usize, hidden: usize, output: usize, w1: ParamId, b1: ParamId, w2: ParamId, b2: ParamId },
}

impl Encoder {
    pub fn input_dim(&self) -> usize {
        match self {
            Encoder::Identity { dim } => *dim,
            Encoder::Affine { input, .. } => *input,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Encoder::Identity { dim } => *dim,
            Encoder::Affine { output, .. } => *output,
        }
    }

    pub fn kind(&self) -> EncoderKind {
        match self {
            Encoder::Identity { .. } => EncoderKind::Identity,
            Encoder::Affine { hidden, .. } => EncoderKind::Affine { hidden: *hidden },
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        match self {
            Encoder::Identity { .. } => Vec::new(),
            Encoder::Affine { w1, b1, w2, b2, .. } => vec![*w1, *b1, *w2, *b2],
        }
    }

    /// Forward pass without recording.
    pub fn apply(&self, params: &ParamStore, x: &[f64]) -> Vec<f64> {
        match self {
            Encoder::Identity { .. } => x.to_vec(),
            Encoder::Affine { hidden, output, w1, b1, w2, b2, .. } => {
                let h: Vec<f64> =
                    affine(params.value(*w1), x, params.value(*b1), *hidden).into_iter().map(f64::tanh).collect();
                affine(params.value(*w2), &h, params.value(*b2), *output)
            }
        }
    }

    /// Records the forward pass on `tape`. `cache` holds parameter leaves
    /// already placed on this tape.
    pub fn record(&self, tape: &mut Tape, params: &ParamStore, cache: &mut LeafCache, x: &[f64]) -> NodeId {
        let input = tape.constant(x.to_vec());
        match self {
            Encoder::Identity { .. } => input,
            Encoder::Affine { w1, b1, w2, b2, .. } => {
                let (w1, b1) = (cache.leaf(tape, params, *w1), cache.leaf(tape, params, *b1));
                let (w2, b2) = (cache.leaf(tape, params, *w2), cache.leaf(tape, params, *b2));
                let pre = tape.affine(w1, input, b1);
                let h = tape.tanh(pre);
                tape.affine(w2, h, b2)
            }
        }
    }
}

fn affine(w: &[f64], x: &[f64], b: &[f64], rows: usize) -> Vec<f64> {
    let cols = x.len();
    (0..rows).map(|r| b[r] + w[r * cols..(r + 1) * cols].iter().zip(x).map(|(a, c)| a * c).sum::<f64>()).collect()
}

/// One tape leaf per parameter per tape.
#[derive(Debug, Default)]
pub struct LeafCache(HashMap<ParamId, NodeId>);

impl LeafCache {
    pub fn leaf(&mut self, tape: &mut Tape, params: &ParamStore, id: ParamId) -> NodeId {
        *self.0.entry(id).or_insert_with(|| tape.param(params, id))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskBank {
    dim: usize,
    types: Vec<ItemType>,
    pairs: BTreeMap<(usize, usize), ParamId>,
}

impl MaskBank {
    /// One mask per unordered pair of distinct types, initialized to
    /// `1 + N(0, noise²)`.
    pub fn new(
        params: &mut ParamStore,
        types: &[ItemType],
        dim: usize,
        noise: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if noise < 0.0 || !noise.is_finite() {
            return Err(Error::Config(format!("mask noise must be finite and >= 0, got {noise}")));
        }
        let normal = Normal::new(0.0, noise).map_err(|e| Error::Config(e.to_string()))?;
        let mut pairs = BTreeMap::new();
        for u in 0..types.len() {
            for v in u + 1..types.len() {
                let value = (0..dim).map(|_| 1.0 + normal.sample(rng)).collect();
                let id = params.add(format!("mask[{}|{}]", types[u], types[v]), value);
                pairs.insert((u, v), id);
            }
        }
        Ok(MaskBank { dim, types: types.to_vec(), pairs })
    }

    pub(crate) fn from_parts(dim: usize, types: Vec<ItemType>, pairs: BTreeMap<(usize, usize), ParamId>) -> Self {
        MaskBank { dim, types, pairs }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn types(&self) -> &[ItemType] {
        &self.types
    }

    fn type_index(&self, t: &ItemType) -> Option<usize> {
        self.types.iter().position(|x| x == t)
    }

    pub fn lookup(&self, u: &ItemType, v: &ItemType) -> Result<ParamId> {
        let no_mask = || Error::NoMask(u.to_string(), v.to_string());
        let (a, b) = (self.type_index(u).ok_or_else(no_mask)?, self.type_index(v).ok_or_else(no_mask)?);
        if a == b {
            return Err(no_mask());
        }
        self.pairs.get(&(a.min(b), a.max(b))).copied().ok_or_else(no_mask)
    }

    pub fn has_pair(&self, u: &ItemType, v: &ItemType) -> bool {
        self.lookup(u, v).is_ok()
    }

    /// `((u, v), param)` in canonical order.
    pub fn iter(&self) -> impl Iterator<Item = ((&ItemType, &ItemType), ParamId)> {
        self.pairs.iter().map(|(&(a, b), &id)| ((&self.types[a], &self.types[b]), id))
    }

    pub(crate) fn pairs(&self) -> &BTreeMap<(usize, usize), ParamId> {
        &self.pairs
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.pairs.values().copied().collect()
    }
}

/// Everything trainable, plus the structure that indexes into it.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub bank: MaskBank,
    pub triplet_weights: TripletWeightTable,
    pub loss_scales: Option<LossScales>,
    pub params: ParamStore,
}

impl Model {
    pub fn new(types: &[ItemType], input_dim: usize, config: ModelConfig) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Config("input dimension must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let encoder = match config.encoder {
            EncoderKind::Identity => {
                if let Some(d) = config.dim {
                    if d != input_dim {
                        return Err(Error::Config(format!(
                            "identity encoder needs dim == input dim ({input_dim}), got {d}"
                        )));
                    }
                }
                Encoder::Identity { dim: input_dim }
            }
            EncoderKind::Affine { hidden } => {
                let output = config.dim.unwrap_or(DEFAULT_EMBED_DIM);
                if hidden == 0 || output == 0 {
                    return Err(Error::Config("affine encoder sizes must be >= 1".into()));
                }
                let w1 = gaussian(&mut rng, hidden * input_dim, 1.0 / (input_dim as f64).sqrt());
                let w2 = gaussian(&mut rng, output * hidden, 1.0 / (hidden as f64).sqrt());
                Encoder::Affine {
                    input: input_dim,
                    hidden,
                    output,
                    w1: params.add("encoder.w1", w1),
                    b1: params.add("encoder.b1", vec![0.0; hidden]),
                    w2: params.add("encoder.w2", w2),
                    b2: params.add("encoder.b2", vec![0.0; output]),
                }
            }
        };
        let bank = MaskBank::new(&mut params, types, encoder.output_dim(), config.mask_noise, &mut rng)?;
        Ok(Model { config, encoder, bank, triplet_weights: TripletWeightTable::default(), loss_scales: None, params })
    }

    /// Adds the optional learned per-term log-scales (all starting at 0).
    pub fn enable_loss_scales(&mut self) {
        if self.loss_scales.is_none() {
            self.loss_scales = Some(LossScales::new(&mut self.params));
        }
    }

    pub fn dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn types(&self) -> &[ItemType] {
        self.bank.types()
    }

    pub fn encode(&self, store: &FeatureStore, id: &ItemId) -> Result<Vec<f64>> {
        let x = store.get(id).ok_or_else(|| Error::MissingItem(id.to_string()))?;
        if x.len() != self.encoder.input_dim() {
            return Err(Error::InvalidInput(format!(
                "item {id} has {} features, encoder expects {}",
                x.len(),
                self.encoder.input_dim()
            )));
        }
        Ok(self.encoder.apply(&self.params, x))
    }

    /// General features for every item in store order.
    pub fn encode_all(&self, store: &FeatureStore) -> Result<Vec<Vec<f64>>> {
        if store.dim() != self.encoder.input_dim() {
            return Err(Error::InvalidInput(format!(
                "feature dim {} but encoder expects {}",
                store.dim(),
                self.encoder.input_dim()
            )));
        }
        Ok((0..store.len()).map(|i| self.encoder.apply(&self.params, store.row(i))).collect())
    }

    pub fn mask(&self, u: &ItemType, v: &ItemType) -> Result<&[f64]> {
        Ok(self.params.value(self.bank.lookup(u, v)?))
    }

    /// Masked distance between general features of an item of type `u` and
    /// one of type `v`.
    pub fn pair_distance(&self, fi: &[f64], u: &ItemType, fj: &[f64], v: &ItemType) -> Result<f64> {
        masked_l2(fi, fj, self.mask(u, v)?)
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, std).expect("positive std");
    (0..n).map(|_| normal.sample(rng)).collect()
}
