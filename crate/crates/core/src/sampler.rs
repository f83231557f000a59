//! Training triplets from outfits with category-matched negatives.
//!
//! For every ordered pair `(anchor, positive)` of distinct-type items inside an
//! outfit, `negatives` items of the positive's type are drawn uniformly without
//! replacement from catalog items outside that outfit.

use std::collections::{HashMap, HashSet, VecDeque};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureStore, ItemId, ItemType, Outfit, OutfitItem};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TripletKey {
    pub anchor: ItemId,
    pub positive: ItemId,
    pub negative: ItemId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triplet {
    pub outfit: String,
    pub anchor: OutfitItem,
    pub positive: OutfitItem,
    pub negative: OutfitItem,
}

impl Triplet {
    pub fn key(&self) -> TripletKey {
        TripletKey {
            anchor: self.anchor.id.clone(),
            positive: self.positive.id.clone(),
            negative: self.negative.id.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub negatives: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { negatives: 1, seed: 0 }
    }
}

/// Lazily yields triplets outfit by outfit. Deterministic in `cfg.seed`.
pub struct TripletStream<'a> {
    outfits: &'a [Outfit],
    store: &'a FeatureStore,
    by_type: HashMap<ItemType, Vec<usize>>,
    negatives: usize,
    rng: ChaCha8Rng,
    outfit: usize,
    anchor: usize,
    positive: usize,
    pending: VecDeque<Triplet>,
    failed: bool,
}

pub fn make_triplets<'a>(
    outfits: &'a [Outfit],
    store: &'a FeatureStore,
    cfg: SamplerConfig,
) -> Result<TripletStream<'a>> {
    if cfg.negatives == 0 {
        return Err(Error::Config("negatives per pair must be >= 1".into()));
    }
    for o in outfits {
        for it in &o.items {
            if !store.contains(&it.id) {
                return Err(Error::MissingItem(it.id.to_string()));
            }
        }
    }
    let by_type: HashMap<ItemType, Vec<usize>> =
        store.indices_by_type().into_iter().map(|(t, v)| (t.clone(), v)).collect();
    let mut singles: Vec<&ItemType> = by_type.iter().filter(|(_, v)| v.len() < 2).map(|(t, _)| t).collect();
    singles.sort();
    if let Some(t) = singles.first() {
        return Err(Error::CannotSample(t.to_string()));
    }
    Ok(TripletStream {
        outfits,
        store,
        by_type,
        negatives: cfg.negatives,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        outfit: 0,
        anchor: 0,
        positive: 0,
        pending: VecDeque::new(),
        failed: false,
    })
}

/// Collects the whole stream, stopping at the first error.
pub fn sample_all(outfits: &[Outfit], store: &FeatureStore, cfg: SamplerConfig) -> Result<Vec<Triplet>> {
    make_triplets(outfits, store, cfg)?.collect()
}

impl TripletStream<'_> {
    /// Advances to the next (anchor, positive) pair of distinct types.
    fn next_pair(&mut self) -> Option<(usize, usize, usize)> {
        while self.outfit < self.outfits.len() {
            let n = self.outfits[self.outfit].items.len();
            while self.anchor < n {
                while self.positive < n {
                    let (a, p) = (self.anchor, self.positive);
                    self.positive += 1;
                    let items = &self.outfits[self.outfit].items;
                    if a != p && items[a].ty != items[p].ty {
                        return Some((self.outfit, a, p));
                    }
                }
                self.anchor += 1;
                self.positive = 0;
            }
            self.outfit += 1;
            self.anchor = 0;
            self.positive = 0;
        }
        None
    }

    fn fill(&mut self, o: usize, a: usize, p: usize) -> Result<()> {
        let outfit = &self.outfits[o];
        let anchor = &outfit.items[a];
        let positive = &outfit.items[p];
        let members: HashSet<&ItemId> = outfit.items.iter().map(|it| &it.id).collect();
        let pool: Vec<usize> = self
            .by_type
            .get(&positive.ty)
            .map(|v| v.iter().copied().filter(|&i| !members.contains(self.store.id_at(i))).collect())
            .unwrap_or_default();
        if pool.len() < self.negatives {
            return Err(Error::CannotSample(positive.ty.to_string()));
        }
        for k in index::sample(&mut self.rng, pool.len(), self.negatives) {
            let idx = pool[k];
            self.pending.push_back(Triplet {
                outfit: outfit.id.clone(),
                anchor: anchor.clone(),
                positive: positive.clone(),
                negative: OutfitItem { id: self.store.id_at(idx).clone(), ty: self.store.type_at(idx).clone() },
            });
        }
        Ok(())
    }
}

impl Iterator for TripletStream<'_> {
    type Item = Result<Triplet>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            if let Some(t) = self.pending.pop_front() {
                return Some(Ok(t));
            }
            let (o, a, p) = self.next_pair()?;
            if let Err(e) = self.fill(o, a, p) {
                self.failed = true;
                return Some(Err(e));
            }
        }
    }
}
