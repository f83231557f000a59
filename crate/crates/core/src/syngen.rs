//! Synthetic outfit datasets with controllable hard distractors.
//!
//! Every item has a type and a latent style. Features have two blocks:
//!
//! - a *visual* block `A_t z_s + b_t + noise`, large in magnitude;
//! - a *signal* block `α C z_s + noise`, small in magnitude.
//!
//! Outfits contain one item per type, all of one style. A fraction `ρ` of the
//! items are made *hard*: each copies the visual block of a partner item of
//! the same type but a different style, keeping its own signal block. Such an
//! item sits within `ε` of its partner in feature space while being
//! incompatible with the partner's outfits. Each test outfit yields one FITB
//! question per type, and a question includes the ground truth's hard partner
//! as a distractor whenever one exists.
//!
//! A diagnostics sidecar records the style of every item, hard partners and
//! `ε`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{
    CompatQuestion, Dataset, FeatureStore, FitbQuestion, ItemId, ItemType, Manifest, Outfit, OutfitItem,
};
use crate::error::{Error, Result};
use crate::numcore::{euclidean, Vector};
use crate::sampler::Triplet;

const TYPE_NAMES: [&str; 8] = ["tops", "bottoms", "shoes", "bags", "outerwear", "jewellery", "hats", "scarves"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub num_types: usize,
    pub items_per_type: usize,
    pub styles: usize,
    /// Dimension of the latent style vectors.
    pub style_dim: usize,
    /// Feature dimension `d`; the last `d / 2` entries form the signal block.
    pub dim: usize,
    /// Fraction `ρ` of items turned into hard near-duplicates.
    pub hard_fraction: f64,
    /// Feature noise `σ`.
    pub noise: f64,
    /// Scale `α` of the signal block.
    pub signal_scale: f64,
    /// Upper bound on the distance between a hard item and its partner.
    pub epsilon: f64,
    pub train_fraction: f64,
    /// Candidates per FITB question (ground truth included).
    pub candidates: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            num_types: 4,
            items_per_type: 200,
            styles: 8,
            style_dim: 4,
            dim: 16,
            hard_fraction: 0.4,
            noise: 0.2,
            signal_scale: 0.15,
            epsilon: 3.0,
            train_fraction: 0.7,
            candidates: 4,
            seed: 0,
        }
    }
}

impl GenConfig {
    /// A few dozen items; fast enough for smoke tests.
    pub fn toy() -> Self {
        GenConfig {
            num_types: 3,
            items_per_type: 18,
            styles: 3,
            dim: 6,
            train_fraction: 0.5,
            candidates: 3,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.num_types < 2 {
            return err("need at least 2 types".into());
        }
        if self.items_per_type == 0 || self.styles == 0 || self.style_dim == 0 {
            return err("item, style and latent counts must be >= 1".into());
        }
        if self.dim < 2 {
            return err("feature dim must be >= 2".into());
        }
        if !(0.0..=1.0).contains(&self.hard_fraction) {
            return err(format!("hard fraction must be in [0, 1], got {}", self.hard_fraction));
        }
        if self.hard_fraction > 0.0 && self.styles < 2 {
            return err("hard items need at least 2 styles".into());
        }
        if self.items_per_type < self.styles {
            return err("every style needs at least one item per type".into());
        }
        if !(self.noise >= 0.0 && self.signal_scale >= 0.0 && self.epsilon > 0.0) {
            return err("noise and signal scale must be >= 0, epsilon > 0".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return err("train fraction must be in (0, 1)".into());
        }
        if self.candidates < 2 {
            return err("FITB needs at least 2 candidates".into());
        }
        if self.styles < 2 {
            return err("FITB distractors need at least 2 styles".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemInfo {
    pub id: ItemId,
    #[serde(rename = "type")]
    pub ty: ItemType,
    pub style: usize,
    /// For hard items, the item whose visual block was copied.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub hard_of: Option<ItemId>,
    pub split: Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub epsilon: f64,
    /// Largest observed hard-item/partner distance.
    pub max_hard_distance: f64,
    pub hard_items: usize,
    pub hard_questions: usize,
    pub items: Vec<ItemInfo>,
}

impl Diagnostics {
    pub fn lookup(&self) -> HashMap<&ItemId, &ItemInfo> {
        self.items.iter().map(|i| (&i.id, i)).collect()
    }

    /// Pairs `(hard, partner)` in either direction, i.e. the ε-close,
    /// incompatible neighbor of an item if it has one.
    pub fn hard_neighbors(&self) -> HashMap<ItemId, Vec<ItemId>> {
        let mut out: HashMap<ItemId, Vec<ItemId>> = HashMap::new();
        for it in &self.items {
            if let Some(p) = &it.hard_of {
                out.entry(it.id.clone()).or_default().push(p.clone());
                out.entry(p.clone()).or_default().push(it.id.clone());
            }
        }
        out
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("diagnostics serialize");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn gauss(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect::<Vec<f64>>()
}

fn matvec(m: &[f64], x: &[f64]) -> Vec<f64> {
    m.chunks(x.len()).map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

pub fn generate(cfg: &GenConfig) -> Result<(Dataset, Diagnostics)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sig_dim = cfg.dim / 2;
    let vis_dim = cfg.dim - sig_dim;
    let types: Vec<ItemType> = (0..cfg.num_types)
        .map(|t| match TYPE_NAMES.get(t) {
            Some(n) => ItemType::from(*n),
            None => ItemType(format!("type{t}")),
        })
        .collect();

    let latent: Vec<Vec<f64>> = (0..cfg.styles).map(|_| gauss(&mut rng, cfg.style_dim, 1.0)).collect();
    let shared_a = gauss(&mut rng, vis_dim * cfg.style_dim, 1.0);
    let type_maps: Vec<(Vec<f64>, Vec<f64>)> = (0..cfg.num_types)
        .map(|_| {
            let pert = gauss(&mut rng, vis_dim * cfg.style_dim, 0.2);
            let a: Vec<f64> = shared_a.iter().zip(&pert).map(|(x, p)| x + p).collect();
            (a, gauss(&mut rng, vis_dim, 0.3))
        })
        .collect();
    let signal_map = gauss(&mut rng, sig_dim * cfg.style_dim, 1.0);

    // outfit o holds item o of every type; its style is o mod styles
    let n = cfg.items_per_type;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_train = ((n as f64) * cfg.train_fraction).round().clamp(1.0, (n - 1) as f64) as usize;
    let mut split = vec![Split::Test; n];
    for &o in &order[..n_train] {
        split[o] = Split::Train;
    }

    let style_of = |o: usize| o % cfg.styles;
    let visual = |rng: &mut ChaCha8Rng, t: usize, s: usize| -> Vec<f64> {
        let (a, b) = &type_maps[t];
        matvec(a, &latent[s])
            .iter()
            .zip(b)
            .map(|(x, y)| x + y + cfg.noise * rng.sample::<f64, _>(StandardNormal))
            .collect()
    };
    let signal = |rng: &mut ChaCha8Rng, s: usize| -> Vec<f64> {
        matvec(&signal_map, &latent[s])
            .iter()
            .map(|x| cfg.signal_scale * x + cfg.noise * rng.sample::<f64, _>(StandardNormal))
            .collect()
    };

    let mut feats: Vec<Vec<Vec<f64>>> = Vec::with_capacity(cfg.num_types);
    for t in 0..cfg.num_types {
        let mut rows = Vec::with_capacity(n);
        for o in 0..n {
            let mut f = visual(&mut rng, t, style_of(o));
            f.extend(signal(&mut rng, style_of(o)));
            rows.push(f);
        }
        feats.push(rows);
    }

    // hard items: copy a same-split, other-style, non-hard partner's visual block
    let mut hard_of: Vec<Vec<Option<usize>>> = vec![vec![None; n]; cfg.num_types];
    let n_hard = ((n as f64) * cfg.hard_fraction).round() as usize;
    let copy_noise = Normal::new(0.0, 0.02 * cfg.noise.max(1e-12)).map_err(|e| Error::Config(e.to_string()))?;
    let mut max_hard_distance: f64 = 0.0;
    let mut hard_items = 0;
    for t in 0..cfg.num_types {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let chosen: Vec<usize> = idx[..n_hard.min(n)].to_vec();
        let is_hard: Vec<bool> = {
            let mut v = vec![false; n];
            chosen.iter().for_each(|&h| v[h] = true);
            v
        };
        for &h in &chosen {
            let partners: Vec<usize> =
                (0..n).filter(|&g| !is_hard[g] && split[g] == split[h] && style_of(g) != style_of(h)).collect();
            let Some(&g) = partners.choose(&mut rng) else { continue };
            let mut f: Vec<f64> = feats[t][g][..vis_dim].iter().map(|x| x + copy_noise.sample(&mut rng)).collect();
            f.extend_from_slice(&feats[t][h][vis_dim..]);
            // keep the pair strictly inside epsilon
            let dist = euclidean(&f, &feats[t][g])?;
            if dist >= 0.99 * cfg.epsilon {
                let shrink = 0.99 * cfg.epsilon / dist;
                for (x, base) in f.iter_mut().zip(&feats[t][g]) {
                    *x = base + (*x - base) * shrink;
                }
            }
            max_hard_distance = max_hard_distance.max(euclidean(&f, &feats[t][g])?);
            feats[t][h] = f;
            hard_of[t][h] = Some(g);
            hard_items += 1;
        }
    }

    let item_id = |t: usize, o: usize| ItemId(format!("{}-{o:04}", types[t]));
    let mut store = FeatureStore::new(cfg.dim);
    let mut infos = Vec::with_capacity(n * cfg.num_types);
    for t in 0..cfg.num_types {
        for o in 0..n {
            store.insert(item_id(t, o), types[t].clone(), Vector::new(feats[t][o].clone())?)?;
            infos.push(ItemInfo {
                id: item_id(t, o),
                ty: types[t].clone(),
                style: style_of(o),
                hard_of: hard_of[t][o].map(|g| item_id(t, g)),
                split: split[o],
            });
        }
    }

    let outfit_items = |o: usize| -> Vec<OutfitItem> {
        (0..cfg.num_types).map(|t| OutfitItem { id: item_id(t, o), ty: types[t].clone() }).collect()
    };
    let mut outfits = Vec::new();
    let mut test_outfits = Vec::new();
    for (o, part) in split.iter().enumerate() {
        match part {
            Split::Train => outfits.push(Outfit { id: format!("outfit-{o:04}"), items: outfit_items(o) }),
            Split::Test => test_outfits.push(o),
        }
    }

    // hard neighbors within a type, both directions
    let mut neighbors: Vec<HashMap<usize, Vec<usize>>> = vec![HashMap::new(); cfg.num_types];
    for (nb, partners) in neighbors.iter_mut().zip(&hard_of) {
        for (h, g) in partners.iter().enumerate() {
            if let Some(g) = *g {
                nb.entry(h).or_default().push(g);
                nb.entry(g).or_default().push(h);
            }
        }
    }

    let mut fitb = Vec::new();
    let mut hard_questions = 0;
    for (&o, t) in test_outfits.iter().flat_map(|o| (0..cfg.num_types).map(move |t| (o, t))) {
        let gt = o;
        let others: Vec<usize> = (0..n).filter(|&c| split[c] == Split::Test && style_of(c) != style_of(gt)).collect();
        let mut distractors: Vec<usize> = Vec::new();
        if let Some(hs) = neighbors[t].get(&gt) {
            if let Some(&h) = hs.choose(&mut rng) {
                distractors.push(h);
                hard_questions += 1;
            }
        }
        let need = cfg.candidates - 1 - distractors.len().min(cfg.candidates - 1);
        let pool: Vec<usize> = others.iter().copied().filter(|c| !distractors.contains(c)).collect();
        if pool.len() < need {
            return Err(Error::Config("not enough test items for FITB distractors".into()));
        }
        distractors.extend(pool.choose_multiple(&mut rng, need).copied());
        distractors.truncate(cfg.candidates - 1);
        let mut cands: Vec<usize> = distractors;
        cands.push(gt);
        cands.shuffle(&mut rng);
        let answer = cands.iter().position(|&c| c == gt).unwrap();
        let outfit: Vec<OutfitItem> = outfit_items(o).into_iter().filter(|it| it.ty != types[t]).collect();
        fitb.push(FitbQuestion {
            id: format!("fitb-{o:04}-{t}"),
            outfit,
            candidates: cands.into_iter().map(|c| item_id(t, c)).collect(),
            answer,
        });
    }

    let test_pool: Vec<usize> = test_outfits.clone();
    let mut compat = Vec::new();
    for &o in &test_outfits {
        compat.push(CompatQuestion { id: format!("compat-{o:04}-pos"), items: outfit_items(o), label: 1 });
        let items: Vec<OutfitItem> = (0..cfg.num_types)
            .map(|t| {
                let c = *test_pool.choose(&mut rng).unwrap();
                OutfitItem { id: item_id(t, c), ty: types[t].clone() }
            })
            .collect();
        let styles: std::collections::HashSet<usize> =
            items.iter().map(|it| parse_index(&it.id)).map(style_of).collect();
        // a random draw can land on one style; relabel those as compatible
        let label = u8::from(styles.len() == 1);
        compat.push(CompatQuestion { id: format!("compat-{o:04}-neg"), items, label });
    }

    let dataset = Dataset::new(types, store, outfits, fitb, compat)?;
    let diag = Diagnostics { epsilon: cfg.epsilon, max_hard_distance, hard_items, hard_questions, items: infos };
    Ok((dataset, diag))
}

fn parse_index(id: &ItemId) -> usize {
    id.as_str().rsplit('-').next().and_then(|s| s.parse().ok()).expect("generated id")
}

/// Writes `manifest.json`, the data files and `diagnostics.json` into `dir`.
pub fn write(dir: &Path, dataset: &Dataset, diag: &Diagnostics) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    dataset.save(&dir.join("manifest.json"), Some(&Manifest::standard(dataset.types.clone(), dataset.dim())))?;
    diag.write(&dir.join("diagnostics.json"))
}

/// Triplets `(outfit item, ground truth, hard neighbor of the ground truth)`
/// from the FITB questions that contain such a neighbor.
pub fn hard_fitb_triplets(dataset: &Dataset, diag: &Diagnostics) -> Vec<Triplet> {
    let neighbors = diag.hard_neighbors();
    let mut out = Vec::new();
    for q in &dataset.fitb {
        let gt = &q.candidates[q.answer];
        let Some(ns) = neighbors.get(gt) else { continue };
        let ty = dataset.store.item_type(gt).expect("validated").clone();
        for n in q.candidates.iter().filter(|c| ns.contains(c)) {
            for it in &q.outfit {
                out.push(Triplet {
                    outfit: q.id.clone(),
                    anchor: it.clone(),
                    positive: OutfitItem { id: gt.clone(), ty: ty.clone() },
                    negative: OutfitItem { id: n.clone(), ty: ty.clone() },
                });
            }
        }
    }
    out
}
