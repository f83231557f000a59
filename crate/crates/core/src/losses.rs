//! The loss stack.
//!
//! Per triplet `(anchor i: u, positive p: v, negative n: v)` with mask `w` of
//! `{u, v}`:
//!
//! - `L_comp = max{0, d(i,p) − d(i,n) + μ}` and the difficulty score `DS` is
//!   the same hinge value;
//! - `L_SATL = L_comp · W` with `W = DS · w_DS`, where `w_DS = softplus(θ)` is a
//!   learned per-triplet multiplier. `DS` enters as a constant coefficient, so
//!   the gradient of `L_SATL` is `w_DS · DS · ∂L_comp`;
//! - `L_sim` is a hinge pair over unmasked general features;
//! - `L_l1 = ‖w‖₁` and `L_l2` is the mean squared norm of the three general
//!   features.
//!
//! The batch objective is
//! `mean L_SATL + λ₁ mean L_sim + λ₂ mean L_l1 + λ₃ mean L_l2`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::FeatureStore;
use crate::error::{Error, Result};
use crate::model::{Encoder, LeafCache, MaskBank, Model};
use crate::numcore::{euclidean, gradcheck, hinge, softplus, GradReport, NodeId, ParamId, ParamStore, Tape};
use crate::sampler::{Triplet, TripletKey};

pub const DEFAULT_MARGIN: f64 = 0.3;

/// `θ` with `softplus(θ) = 1`, i.e. `ln(e − 1)`.
pub const THETA_INIT: f64 = 0.541_324_854_612_918_1;

pub const DEFAULT_WEIGHT_DECAY: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Margin(f64);

impl Margin {
    pub fn new(mu: f64) -> Result<Self> {
        if !(mu >= 0.0 && mu.is_finite()) {
            return Err(Error::Config(format!("margin must be finite and >= 0, got {mu}")));
        }
        Ok(Margin(mu))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for Margin {
    fn default() -> Self {
        Margin(DEFAULT_MARGIN)
    }
}

impl TryFrom<f64> for Margin {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Margin::new(v)
    }
}

impl From<Margin> for f64 {
    fn from(m: Margin) -> f64 {
        m.0
    }
}

/// `λ₁` (similarity), `λ₂` (L1 on masks), `λ₃` (L2 on general features).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub sim: f64,
    pub l1: f64,
    pub l2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { sim: 5e-5, l1: 5e-4, l2: 5e-4 }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        LossWeights { sim: 0.0, l1: 0.0, l2: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("sim", self.sim), ("l1", self.l1), ("l2", self.l2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("loss weight {name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// When the difficulty score coefficient is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DsMode {
    /// From the current distances at every step.
    #[default]
    PerStep,
    /// Once per epoch, from the distances at the start of the epoch.
    PerEpoch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub margin: Margin,
    pub weights: LossWeights,
    /// `false` fixes `W ≡ 1`, which reduces `L_SATL` to `L_comp`.
    pub satl: bool,
    pub ds_mode: DsMode,
    /// Decay of `θ` toward [`THETA_INIT`], applied by the optimizer.
    pub weight_decay: f64,
    pub learned_scales: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            margin: Margin::default(),
            weights: LossWeights::default(),
            satl: true,
            ds_mode: DsMode::PerStep,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            learned_scales: false,
        }
    }
}

/// Lazily created per-triplet `θ` parameters, keyed by triplet identity.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TripletWeightTable {
    index: HashMap<TripletKey, ParamId>,
    order: Vec<(TripletKey, ParamId)>,
}

impl TripletWeightTable {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn get(&self, key: &TripletKey) -> Option<ParamId> {
        self.index.get(key).copied()
    }

    pub fn get_or_insert(&mut self, params: &mut ParamStore, key: &TripletKey) -> ParamId {
        if let Some(id) = self.index.get(key) {
            return *id;
        }
        let name = format!("w_ds[{},{},{}]", key.anchor, key.positive, key.negative);
        let id = params.add(name, vec![THETA_INIT]);
        self.index.insert(key.clone(), id);
        self.order.push((key.clone(), id));
        id
    }

    /// Current `w_DS`; 1 for triplets never seen.
    pub fn weight(&self, params: &ParamStore, key: &TripletKey) -> f64 {
        self.get(key).map_or(1.0, |id| softplus(params.value(id)[0]))
    }

    /// Entries in creation order.
    pub fn iter(&self) -> impl Iterator<Item = (&TripletKey, ParamId)> {
        self.order.iter().map(|(k, id)| (k, *id))
    }

    pub fn is_weight_param(&self, id: ParamId) -> bool {
        // ids in `order` are strictly increasing
        self.order.binary_search_by_key(&id, |(_, p)| *p).is_ok()
    }

    pub(crate) fn push(&mut self, key: TripletKey, id: ParamId) {
        self.index.insert(key.clone(), id);
        self.order.push((key, id));
    }
}

/// Learned log-scales `s_k`; a term `L_k` with fixed weight `λ_k` contributes
/// `λ_k (e^{−s_k} L_k + s_k)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossScales {
    pub satl: ParamId,
    pub sim: ParamId,
    pub l1: ParamId,
    pub l2: ParamId,
}

impl LossScales {
    pub fn new(params: &mut ParamStore) -> Self {
        LossScales {
            satl: params.add("scale.satl", vec![0.0]),
            sim: params.add("scale.sim", vec![0.0]),
            l1: params.add("scale.l1", vec![0.0]),
            l2: params.add("scale.l2", vec![0.0]),
        }
    }

    pub fn ids(&self) -> [ParamId; 4] {
        [self.satl, self.sim, self.l1, self.l2]
    }
}

pub fn comp_loss(d_pos: f64, d_neg: f64, margin: f64) -> f64 {
    hinge(d_pos - d_neg, margin)
}

/// Same value as [`comp_loss`]; kept separate because it is used as a
/// non-differentiated coefficient.
pub fn difficulty_score(d_pos: f64, d_neg: f64, margin: f64) -> f64 {
    hinge(d_pos - d_neg, margin)
}

pub fn satl(l_comp: f64, ds: f64, w_ds: f64) -> f64 {
    l_comp * (ds * w_ds)
}

pub fn sim_loss(fi: &[f64], fp: &[f64], fn_: &[f64], margin: f64) -> Result<f64> {
    let d_p = euclidean(fp, fn_)?;
    let d_n1 = euclidean(fp, fi)?;
    let d_n2 = euclidean(fn_, fi)?;
    Ok(hinge(d_p - d_n1, margin) + hinge(d_p - d_n2, margin))
}

/// `(mean ‖w‖₁ over masks, mean ‖F‖₂² over features)`; empty lists give 0.
pub fn regularizers(masks: &[&[f64]], features: &[&[f64]]) -> (f64, f64) {
    let l1 = if masks.is_empty() {
        0.0
    } else {
        masks.iter().map(|m| m.iter().map(|x| x.abs()).sum::<f64>()).sum::<f64>() / masks.len() as f64
    };
    let l2 = if features.is_empty() {
        0.0
    } else {
        features.iter().map(|f| f.iter().map(|x| x * x).sum::<f64>()).sum::<f64>() / features.len() as f64
    };
    (l1, l2)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TripletTerms {
    pub key: TripletKey,
    pub d_pos: f64,
    pub d_neg: f64,
    pub l_comp: f64,
    pub ds: f64,
    pub w_ds: f64,
    /// `W = DS · w_DS`, or 1 with the ablation switch off.
    pub weight: f64,
    pub l_satl: f64,
    pub l_sim: f64,
    pub l_l1: f64,
    pub l_l2: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TermMeans {
    pub d_pos: f64,
    pub d_neg: f64,
    pub l_comp: f64,
    pub ds: f64,
    pub w_ds: f64,
    pub weight: f64,
    pub l_satl: f64,
    pub l_sim: f64,
    pub l_l1: f64,
    pub l_l2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub triplets: Vec<TripletTerms>,
    pub mean: TermMeans,
    pub total: f64,
}

impl LossBreakdown {
    fn from_terms(triplets: Vec<TripletTerms>, total: f64) -> Self {
        let n = triplets.len() as f64;
        let mut m = TermMeans::default();
        for t in &triplets {
            m.d_pos += t.d_pos;
            m.d_neg += t.d_neg;
            m.l_comp += t.l_comp;
            m.ds += t.ds;
            m.w_ds += t.w_ds;
            m.weight += t.weight;
            m.l_satl += t.l_satl;
            m.l_sim += t.l_sim;
            m.l_l1 += t.l_l1;
            m.l_l2 += t.l_l2;
        }
        for v in [
            &mut m.d_pos,
            &mut m.d_neg,
            &mut m.l_comp,
            &mut m.ds,
            &mut m.w_ds,
            &mut m.weight,
            &mut m.l_satl,
            &mut m.l_sim,
            &mut m.l_l1,
            &mut m.l_l2,
        ] {
            *v /= n;
        }
        LossBreakdown { triplets, mean: m, total }
    }
}

/// Read-only view of the model structure used to record the objective.
#[derive(Debug, Clone, Copy)]
pub struct ModelView<'a> {
    pub encoder: &'a Encoder,
    pub bank: &'a MaskBank,
    pub weights: &'a TripletWeightTable,
    pub scales: Option<&'a LossScales>,
}

impl Model {
    pub fn split(&mut self) -> (ModelView<'_>, &mut ParamStore) {
        (
            ModelView {
                encoder: &self.encoder,
                bank: &self.bank,
                weights: &self.triplet_weights,
                scales: self.loss_scales.as_ref(),
            },
            &mut self.params,
        )
    }

    pub fn view(&self) -> ModelView<'_> {
        ModelView {
            encoder: &self.encoder,
            bank: &self.bank,
            weights: &self.triplet_weights,
            scales: self.loss_scales.as_ref(),
        }
    }

    /// Creates `θ` entries for triplets not seen before.
    pub fn ensure_triplet_weights(&mut self, batch: &[Triplet]) {
        for t in batch {
            self.triplet_weights.get_or_insert(&mut self.params, &t.key());
        }
    }
}

pub struct Objective {
    pub total: NodeId,
    pub breakdown: LossBreakdown,
}

/// Records the batch objective on `tape`.
///
/// `ds_override` supplies frozen difficulty scores (one per triplet) instead
/// of the current ones. With `cfg.satl` on, every triplet must already have a
/// weight entry (see [`Model::ensure_triplet_weights`]).
pub fn record_objective(
    tape: &mut Tape,
    view: ModelView<'_>,
    params: &ParamStore,
    store: &FeatureStore,
    batch: &[Triplet],
    cfg: &LossConfig,
    ds_override: Option<&[f64]>,
) -> Result<Objective> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    if let Some(ds) = ds_override {
        if ds.len() != batch.len() {
            return Err(Error::InvalidInput(format!(
                "{} frozen difficulty scores for {} triplets",
                ds.len(),
                batch.len()
            )));
        }
    }
    cfg.weights.validate()?;
    let mu = cfg.margin.value();
    let mut leaves = LeafCache::default();
    let mut encoded: HashMap<usize, NodeId> = HashMap::new();

    let mut encode = |tape: &mut Tape, leaves: &mut LeafCache, id: &crate::data::ItemId| -> Result<NodeId> {
        let idx = store.index_of(id).ok_or_else(|| Error::MissingItem(id.to_string()))?;
        if let Some(n) = encoded.get(&idx) {
            return Ok(*n);
        }
        let n = view.encoder.record(tape, params, leaves, store.row(idx));
        encoded.insert(idx, n);
        Ok(n)
    };

    let mut satl_nodes = Vec::with_capacity(batch.len());
    let mut sim_nodes = Vec::with_capacity(batch.len());
    let mut l1_nodes = Vec::with_capacity(batch.len());
    let mut l2_nodes = Vec::with_capacity(batch.len());
    let mut terms = Vec::with_capacity(batch.len());

    for (k, t) in batch.iter().enumerate() {
        let key = t.key();
        let fa = encode(tape, &mut leaves, &t.anchor.id)?;
        let fp = encode(tape, &mut leaves, &t.positive.id)?;
        let fneg = encode(tape, &mut leaves, &t.negative.id)?;
        let mask_id = view.bank.lookup(&t.anchor.ty, &t.positive.ty)?;
        let m = leaves.leaf(tape, params, mask_id);

        let ma = tape.mul(fa, m);
        let mp = tape.mul(fp, m);
        let mn = tape.mul(fneg, m);
        let dp_vec = tape.sub(ma, mp);
        let dn_vec = tape.sub(ma, mn);
        let d_pos = tape.norm(dp_vec);
        let d_neg = tape.norm(dn_vec);
        let gap = tape.sub(d_pos, d_neg);
        let l_comp = tape.hinge(gap, mu);

        let (dpv, dnv) = (tape.scalar_value(d_pos), tape.scalar_value(d_neg));
        let ds = match ds_override {
            Some(frozen) => frozen[k],
            None => difficulty_score(dpv, dnv, mu),
        };
        let (l_satl, w_ds, weight) = if cfg.satl {
            let theta_id = view.weights.get(&key).ok_or_else(|| {
                Error::Contract(format!(
                    "no weight entry for triplet ({}, {}, {})",
                    key.anchor, key.positive, key.negative
                ))
            })?;
            let theta = leaves.leaf(tape, params, theta_id);
            let w = tape.softplus(theta);
            let coef = tape.scalar(ds);
            let big_w = tape.scalar_mul(coef, w);
            let l = tape.scalar_mul(l_comp, big_w);
            (l, tape.scalar_value(w), tape.scalar_value(big_w))
        } else {
            (l_comp, 1.0, 1.0)
        };

        let pn = tape.sub(fp, fneg);
        let pa = tape.sub(fp, fa);
        let na = tape.sub(fneg, fa);
        let big_dp = tape.norm(pn);
        let dn1 = tape.norm(pa);
        let dn2 = tape.norm(na);
        let g1 = tape.sub(big_dp, dn1);
        let g2 = tape.sub(big_dp, dn2);
        let h1 = tape.hinge(g1, mu);
        let h2 = tape.hinge(g2, mu);
        let l_sim = tape.sum(&[h1, h2]);

        let l_l1 = tape.abs_sum(m);
        let sa = tape.sq_norm(fa);
        let sp = tape.sq_norm(fp);
        let sn = tape.sq_norm(fneg);
        let l_l2 = tape.mean(&[sa, sp, sn]);

        terms.push(TripletTerms {
            key,
            d_pos: dpv,
            d_neg: dnv,
            l_comp: tape.scalar_value(l_comp),
            ds,
            w_ds,
            weight,
            l_satl: tape.scalar_value(l_satl),
            l_sim: tape.scalar_value(l_sim),
            l_l1: tape.scalar_value(l_l1),
            l_l2: tape.scalar_value(l_l2),
            total: 0.0,
        });
        satl_nodes.push(l_satl);
        sim_nodes.push(l_sim);
        l1_nodes.push(l_l1);
        l2_nodes.push(l_l2);
    }

    let w = cfg.weights;
    let means = [tape.mean(&satl_nodes), tape.mean(&sim_nodes), tape.mean(&l1_nodes), tape.mean(&l2_nodes)];
    let lambdas = [1.0, w.sim, w.l1, w.l2];
    let scale_values: [f64; 4] = match view.scales {
        Some(s) => s.ids().map(|id| params.value(id)[0]),
        None => [0.0; 4],
    };

    let mut parts = Vec::with_capacity(4);
    for (i, (&mean, &lambda)) in means.iter().zip(&lambdas).enumerate() {
        let part = match view.scales {
            Some(s) => {
                let sn = leaves.leaf(tape, params, s.ids()[i]);
                let neg = tape.scale(sn, -1.0);
                let e = tape.exp(neg);
                let scaled = tape.scalar_mul(e, mean);
                let inner = tape.sum(&[scaled, sn]);
                tape.scale(inner, lambda)
            }
            None => tape.scale(mean, lambda),
        };
        parts.push(part);
    }
    let total = tape.sum(&parts);

    for t in &mut terms {
        let vals = [t.l_satl, t.l_sim, t.l_l1, t.l_l2];
        t.total = (0..4)
            .map(|i| {
                let s = scale_values[i];
                if view.scales.is_some() {
                    lambdas[i] * ((-s).exp() * vals[i] + s)
                } else {
                    lambdas[i] * vals[i]
                }
            })
            .sum();
    }
    let total_value = tape.scalar_value(total);
    Ok(Objective { total, breakdown: LossBreakdown::from_terms(terms, total_value) })
}

/// Forward-only batch objective. Creates missing weight entries.
pub fn total_loss(
    model: &mut Model,
    store: &FeatureStore,
    batch: &[Triplet],
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    if cfg.satl {
        model.ensure_triplet_weights(batch);
    }
    let mut tape = Tape::new();
    let (view, params) = model.split();
    Ok(record_objective(&mut tape, view, params, store, batch, cfg, None)?.breakdown)
}

/// Forward plus backward; gradients accumulate into `model.params`.
pub fn loss_and_backward(
    model: &mut Model,
    store: &FeatureStore,
    batch: &[Triplet],
    cfg: &LossConfig,
    ds_override: Option<&[f64]>,
) -> Result<LossBreakdown> {
    if cfg.satl {
        model.ensure_triplet_weights(batch);
    }
    let mut tape = Tape::new();
    let (view, params) = model.split();
    let obj = record_objective(&mut tape, view, params, store, batch, cfg, ds_override)?;
    if obj.breakdown.total.is_finite() {
        tape.backward(obj.total, params)?;
    }
    Ok(obj.breakdown)
}

/// Current difficulty scores for `batch` without recording gradients.
pub fn difficulty_scores(model: &Model, store: &FeatureStore, batch: &[Triplet], margin: Margin) -> Result<Vec<f64>> {
    batch
        .iter()
        .map(|t| {
            let (fa, fp, fneg) = (
                model.encode(store, &t.anchor.id)?,
                model.encode(store, &t.positive.id)?,
                model.encode(store, &t.negative.id)?,
            );
            let d_pos = model.pair_distance(&fa, &t.anchor.ty, &fp, &t.positive.ty)?;
            let d_neg = model.pair_distance(&fa, &t.anchor.ty, &fneg, &t.negative.ty)?;
            Ok(difficulty_score(d_pos, d_neg, margin.value()))
        })
        .collect()
}

/// Finite-difference check of the full batch objective over every parameter
/// it touches.
///
/// The difficulty scores are frozen at their current values, matching the
/// analytic gradient, which treats `DS` as a constant.
pub fn objective_gradcheck(
    model: &mut Model,
    store: &FeatureStore,
    batch: &[Triplet],
    cfg: &LossConfig,
    step: f64,
) -> Result<GradReport> {
    if cfg.satl {
        model.ensure_triplet_weights(batch);
    }
    let frozen = difficulty_scores(model, store, batch, cfg.margin)?;
    let (view, params) = model.split();
    let report = gradcheck(params, None, step, |tape, p| {
        Ok(record_objective(tape, view, p, store, batch, cfg, Some(&frozen))?.total)
    });
    params.zero_grad();
    report
}
