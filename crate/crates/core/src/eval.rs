//! Fill-in-the-blank accuracy and compatibility AUC.
//!
//! Both tasks score with masked pair distances between general features.
//! Same-type pairs have no mask and are left out of every aggregate.

use serde::{Deserialize, Serialize};

use crate::data::{CompatQuestion, FeatureStore, FitbQuestion, ItemId, OutfitItem};
use crate::error::{Error, Result};
use crate::model::Model;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregate {
    #[default]
    Mean,
    Sum,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitbOptions {
    pub aggregate: Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitbAnswer {
    pub id: String,
    pub chosen: usize,
    pub answer: usize,
    pub correct: bool,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitbResult {
    pub answers: Vec<FitbAnswer>,
    pub accuracy: f64,
    pub answered: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompatScore {
    pub id: String,
    pub score: f64,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompatResult {
    pub scores: Vec<CompatScore>,
    pub auc: f64,
    /// Best accuracy of the rule `score <= threshold ⇒ compatible`.
    pub accuracy: f64,
    pub threshold: f64,
    pub skipped: usize,
}

/// General features of every catalog item, computed once.
struct Embedded<'a> {
    model: &'a Model,
    store: &'a FeatureStore,
    features: Vec<Vec<f64>>,
}

impl<'a> Embedded<'a> {
    fn new(model: &'a Model, store: &'a FeatureStore) -> Result<Self> {
        Ok(Embedded { model, store, features: model.encode_all(store)? })
    }

    fn get(&self, id: &ItemId) -> Result<&[f64]> {
        let idx = self.store.index_of(id).ok_or_else(|| Error::MissingItem(id.to_string()))?;
        Ok(&self.features[idx])
    }

    fn distance(&self, a: &OutfitItem, b: &OutfitItem) -> Result<f64> {
        self.model.pair_distance(self.get(&a.id)?, &a.ty, self.get(&b.id)?, &b.ty)
    }
}

/// Index of the smallest score; the earliest position wins ties.
pub fn argmin(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if *s < scores[best] {
            best = i;
        }
    }
    best
}

/// Maps `f` over `items` on scoped worker threads, preserving order.
fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(items.len() / 64).max(1);
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = items.chunks(chunk).map(|c| s.spawn(|| c.iter().map(&f).collect::<Vec<R>>())).collect();
        handles.into_iter().flat_map(|h| h.join().expect("evaluation worker panicked")).collect()
    })
}

fn answer(emb: &Embedded<'_>, q: &FitbQuestion, opts: &FitbOptions) -> Result<Option<FitbAnswer>> {
    let mut scores = Vec::with_capacity(q.candidates.len());
    let mut eligible = 0;
    for c in &q.candidates {
        let ty = emb.store.item_type(c).ok_or_else(|| Error::MissingItem(c.to_string()))?;
        let cand = OutfitItem { id: c.clone(), ty: ty.clone() };
        let mut total = 0.0;
        let mut n = 0usize;
        for it in q.outfit.iter().filter(|it| it.ty != cand.ty) {
            total += emb.distance(&cand, it)?;
            n += 1;
        }
        eligible = n;
        scores.push(match opts.aggregate {
            Aggregate::Mean if n > 0 => total / n as f64,
            _ => total,
        });
    }
    if eligible == 0 {
        return Ok(None);
    }
    let chosen = argmin(&scores);
    Ok(Some(FitbAnswer { id: q.id.clone(), chosen, answer: q.answer, correct: chosen == q.answer, scores }))
}

pub fn fitb_eval(
    questions: &[FitbQuestion],
    model: &Model,
    store: &FeatureStore,
    opts: &FitbOptions,
) -> Result<FitbResult> {
    let emb = Embedded::new(model, store)?;
    let mut answers = Vec::with_capacity(questions.len());
    let mut skipped = 0;
    for a in par_map(questions, |q| answer(&emb, q, opts)) {
        match a? {
            Some(a) => answers.push(a),
            None => skipped += 1,
        }
    }
    let answered = answers.len();
    let correct = answers.iter().filter(|a| a.correct).count();
    let accuracy = if answered == 0 { 0.0 } else { correct as f64 / answered as f64 };
    Ok(FitbResult { answers, accuracy, answered, skipped })
}

/// Mean masked distance over all cross-type pairs, or `None` when the outfit
/// has no such pair.
pub fn outfit_score(model: &Model, store: &FeatureStore, items: &[OutfitItem]) -> Result<Option<f64>> {
    let emb = Embedded::new(model, store)?;
    outfit_score_with(&emb, items)
}

fn outfit_score_with(emb: &Embedded<'_>, items: &[OutfitItem]) -> Result<Option<f64>> {
    let mut total = 0.0;
    let mut n = 0usize;
    for i in 0..items.len() {
        for j in i + 1..items.len() {
            if items[i].ty != items[j].ty {
                total += emb.distance(&items[i], &items[j])?;
                n += 1;
            }
        }
    }
    Ok((n > 0).then(|| total / n as f64))
}

pub fn compat_eval(questions: &[CompatQuestion], model: &Model, store: &FeatureStore) -> Result<CompatResult> {
    let emb = Embedded::new(model, store)?;
    let mut scores = Vec::with_capacity(questions.len());
    let mut skipped = 0;
    let results = par_map(questions, |q| outfit_score_with(&emb, &q.items));
    for (q, r) in questions.iter().zip(results) {
        match r? {
            Some(score) => scores.push(CompatScore { id: q.id.clone(), score, label: q.label }),
            None => skipped += 1,
        }
    }
    let ranked: Vec<f64> = scores.iter().map(|s| -s.score).collect();
    let labels: Vec<bool> = scores.iter().map(|s| s.label == 1).collect();
    let auc = roc_auc(&ranked, &labels)?;
    let (threshold, accuracy) = best_threshold(&scores);
    Ok(CompatResult { scores, auc, accuracy, threshold, skipped })
}

/// Area under the ROC curve where a higher score means "positive".
///
/// Computed as the Mann–Whitney statistic with midranks for ties, so equal
/// positive/negative scores count one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidInput("scores and labels differ in length".into()));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite score {s}")));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidInput("AUC needs at least one positive and one negative".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let midrank = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            if labels[k] {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

fn best_threshold(scores: &[CompatScore]) -> (f64, f64) {
    if scores.is_empty() {
        return (0.0, 0.0);
    }
    let mut cuts: Vec<f64> = scores.iter().map(|s| s.score).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let n = scores.len() as f64;
    let mut best = (f64::NEG_INFINITY, scores.iter().filter(|s| s.label == 0).count() as f64 / n);
    for &t in &cuts {
        let correct = scores.iter().filter(|s| (s.score <= t) == (s.label == 1)).count() as f64;
        if correct / n > best.1 {
            best = (t, correct / n);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ItemType;
    use crate::model::ModelConfig;
    use crate::numcore::Vector;

    #[test]
    fn argmin_prefers_first_on_ties() {
        assert_eq!(argmin(&[0.4, 0.4]), 0);
        assert_eq!(argmin(&[0.5, 0.4, 0.4]), 1);
    }

    #[test]
    fn auc_conventions() {
        assert_eq!(roc_auc(&[0.9, 0.8, 0.1, 0.2], &[true, true, false, false]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.1, 0.2, 0.9, 0.8], &[true, true, false, false]).unwrap(), 0.0);
        assert_eq!(roc_auc(&[0.5, 0.5], &[true, false]).unwrap(), 0.5);
        // one tie between a positive and a negative, one clean win
        assert_eq!(roc_auc(&[0.7, 0.5, 0.5], &[true, true, false]).unwrap(), 0.75);
        assert!(roc_auc(&[0.1], &[true]).is_err());
    }

    fn setup() -> (Model, FeatureStore) {
        let types = vec![ItemType::from("tops"), ItemType::from("shoes")];
        let mut store = FeatureStore::new(2);
        for (id, ty, f) in [
            ("t1", "tops", [0.0, 0.0]),
            ("t2", "tops", [1.0, 1.0]),
            ("s1", "shoes", [0.0, 0.1]),
            ("s2", "shoes", [3.0, 3.0]),
        ] {
            store.insert(id.into(), ty.into(), Vector::new(f.to_vec()).unwrap()).unwrap();
        }
        let mut model = Model::new(&types, 2, ModelConfig::default()).unwrap();
        for id in model.bank.param_ids() {
            model.params.value_mut(id).fill(1.0);
        }
        (model, store)
    }

    #[test]
    fn fitb_skips_questions_without_cross_type_pairs() {
        let (model, store) = setup();
        let q = FitbQuestion {
            id: "q".into(),
            outfit: vec![OutfitItem::new("t1", "tops")],
            candidates: vec!["t2".into(), "t1".into()],
            answer: 0,
        };
        let r = fitb_eval(&[q], &model, &store, &FitbOptions::default()).unwrap();
        assert_eq!((r.answered, r.skipped), (0, 1));
    }

    #[test]
    fn fitb_picks_nearest() {
        let (model, store) = setup();
        let q = FitbQuestion {
            id: "q".into(),
            outfit: vec![OutfitItem::new("t1", "tops")],
            candidates: vec!["s2".into(), "s1".into()],
            answer: 1,
        };
        let r = fitb_eval(&[q], &model, &store, &FitbOptions::default()).unwrap();
        assert_eq!(r.answers[0].chosen, 1);
        assert_eq!(r.accuracy, 1.0);
    }

    #[test]
    fn compat_skips_single_type_outfits() {
        let (model, store) = setup();
        let qs = vec![
            CompatQuestion {
                id: "a".into(),
                items: vec![OutfitItem::new("t1", "tops"), OutfitItem::new("s1", "shoes")],
                label: 1,
            },
            CompatQuestion {
                id: "b".into(),
                items: vec![OutfitItem::new("t1", "tops"), OutfitItem::new("s2", "shoes")],
                label: 0,
            },
            CompatQuestion {
                id: "c".into(),
                items: vec![OutfitItem::new("t1", "tops"), OutfitItem::new("t2", "tops")],
                label: 0,
            },
        ];
        let r = compat_eval(&qs, &model, &store).unwrap();
        assert_eq!(r.skipped, 1);
        assert_eq!(r.auc, 1.0);
        assert_eq!(r.accuracy, 1.0);
    }
}
