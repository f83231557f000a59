//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::collections::HashSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use satl_core::checkpoint::Checkpoint;
use satl_core::data::OutfitItem;
use satl_core::eval::{compat_eval, fitb_eval, roc_auc, FitbOptions};
use satl_core::losses::{comp_loss, difficulty_score, objective_gradcheck, satl, total_loss};
use satl_core::numcore::{softplus, DEFAULT_STEP};
use satl_core::sampler::{make_triplets, sample_all};
use satl_core::syngen::{generate, hard_fitb_triplets, GenConfig};
use satl_core::trainer::{mean_comp_loss, LrSchedule};
use satl_core::{
    masked_l2, CompatQuestion, Dataset, EncoderKind, FeatureStore, FitbQuestion, ItemType, LossConfig, Model,
    ModelConfig, Outfit, SamplerConfig, TrainConfig, Trainer, Triplet, Vector,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn main() -> ExitCode {
    let criteria: [Criterion; 7] = [
        ("1 gradient suite", gradient_suite),
        ("2 formula identity", formula_identity),
        ("3 distance properties", distance_properties),
        ("4 schedule and determinism", schedule_and_determinism),
        ("5 ablation direction", ablation_direction),
        ("6 evaluator correctness", evaluator_correctness),
        ("7 sampler contract", sampler_contract),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = run();
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name} ({secs:.1}s): {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

// ---------------------------------------------------------------- shared

fn small_dataset(seed: u64) -> Dataset {
    let cfg = GenConfig {
        num_types: 3,
        items_per_type: 12,
        styles: 3,
        dim: 4,
        hard_fraction: 0.3,
        train_fraction: 0.5,
        candidates: 3,
        seed,
        ..Default::default()
    };
    generate(&cfg).unwrap().0
}

/// Sets every parameter to a random value in `[lo, hi)`.
fn randomize(model: &mut Model, rng: &mut ChaCha8Rng, lo: f64, hi: f64) {
    for id in model.params.ids() {
        for v in model.params.value_mut(id) {
            *v = rng.random_range(lo..hi);
        }
    }
}

fn random_batch(ds: &Dataset, rng: &mut ChaCha8Rng, n: usize) -> Vec<Triplet> {
    let all = sample_all(&ds.outfits, &ds.store, SamplerConfig { negatives: 1, seed: rng.random() }).unwrap();
    (0..n).map(|_| all[rng.random_range(0..all.len())].clone()).collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Smallest distance of any hinge argument or norm to its kink.
fn kink_gap(model: &Model, store: &FeatureStore, batch: &[Triplet], mu: f64) -> f64 {
    let mut gap = f64::INFINITY;
    for t in batch {
        let fa = model.encode(store, &t.anchor.id).unwrap();
        let fp = model.encode(store, &t.positive.id).unwrap();
        let fneg = model.encode(store, &t.negative.id).unwrap();
        let dp = model.pair_distance(&fa, &t.anchor.ty, &fp, &t.positive.ty).unwrap();
        let dn = model.pair_distance(&fa, &t.anchor.ty, &fneg, &t.negative.ty).unwrap();
        let big = dist(&fp, &fneg);
        let (n1, n2) = (dist(&fp, &fa), dist(&fneg, &fa));
        for v in [dp - dn + mu, big - n1 + mu, big - n2 + mu, dp, dn, big, n1, n2] {
            gap = gap.min(v.abs());
        }
    }
    gap
}

// ---------------------------------------------------------------- 1

fn gradient_suite() -> Outcome {
    let t0 = Instant::now();
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    for seed in 0..20u64 {
        let ds = small_dataset(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let mcfg = ModelConfig { dim: Some(5), encoder: EncoderKind::Affine { hidden: 6 }, seed, ..Default::default() };
        let lcfg = LossConfig { learned_scales: true, ..Default::default() };
        let (mut model, batch) = loop {
            let mut model = Model::new(&ds.types, ds.dim(), mcfg.clone()).unwrap();
            model.enable_loss_scales();
            let batch = random_batch(&ds, &mut rng, 6);
            model.ensure_triplet_weights(&batch);
            randomize(&mut model, &mut rng, -1.0, 1.0);
            if kink_gap(&model, &ds.store, &batch, lcfg.margin.value()) > 1e-3 {
                break (model, batch);
            }
        };
        let report =
            objective_gradcheck(&mut model, &ds.store, &batch, &lcfg, DEFAULT_STEP).map_err(|e| e.to_string())?;
        let names: HashSet<String> =
            report.entries.iter().map(|e| e.name.split('[').next().unwrap().to_string()).collect();
        ensure(
            ["mask", "w_ds", "scale.satl", "encoder.w1", "encoder.b2"]
                .iter()
                .all(|n| names.iter().any(|m| m.starts_with(n))),
            || format!("seed {seed}: parameter families missing from check: {names:?}"),
        )?;
        checked += report.entries.iter().map(|e| e.len).sum::<usize>();
        worst = worst.max(report.max_rel_error());
    }
    let elapsed = t0.elapsed();
    ensure(worst < 1e-4, || format!("max relative error {worst:.3e} >= 1e-4"))?;
    ensure(elapsed < Duration::from_secs(30), || format!("runtime {elapsed:?} >= 30s"))?;
    Ok(format!("20 seeds, {checked} coordinates, max rel. error {worst:.2e}"))
}

// ---------------------------------------------------------------- 2

/// Direct per-triplet recomputation of the objective with identity encoder.
fn oracle_triplet_total(model: &Model, store: &FeatureStore, t: &Triplet, cfg: &LossConfig) -> f64 {
    let mu = cfg.margin.value();
    let a = store.get(&t.anchor.id).unwrap();
    let p = store.get(&t.positive.id).unwrap();
    let n = store.get(&t.negative.id).unwrap();
    let m = model.mask(&t.anchor.ty, &t.positive.ty).unwrap();
    let md =
        |x: &[f64], y: &[f64]| x.iter().zip(y).zip(m).map(|((x, y), w)| (x * w - y * w).powi(2)).sum::<f64>().sqrt();
    let (dp, dn) = (md(a, p), md(a, n));
    let l = (dp - dn + mu).max(0.0);
    let theta = model.params.value(model.triplet_weights.get(&t.key()).unwrap())[0];
    let w = if theta > 0.0 { theta + (-theta).exp().ln_1p() } else { theta.exp().ln_1p() };
    let big = dist(p, n);
    let sim = (big - dist(p, a) + mu).max(0.0) + (big - dist(n, a) + mu).max(0.0);
    let l1: f64 = m.iter().map(|x| x.abs()).sum();
    let sq = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
    let l2 = (sq(a) + sq(p) + sq(n)) / 3.0;
    let wts = cfg.weights;
    l * (l * w) + wts.sim * sim + wts.l1 * l1 + wts.l2 * l2
}

fn formula_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mu = 0.3;
    for _ in 0..10_000 {
        let dp = rng.random_range(0.0..3.0);
        let dn = rng.random_range(0.0..3.0);
        let theta: f64 = rng.random_range(-6.0..6.0);
        let w = softplus(theta);
        let l = comp_loss(dp, dn, mu);
        let ds = difficulty_score(dp, dn, mu);
        ensure(l == ds, || format!("L_comp {l} != DS {ds} at ({dp}, {dn})"))?;
        ensure(w > 0.0, || format!("w_DS = {w} not positive at θ = {theta}"))?;
        let s = satl(l, ds, w);
        ensure(s == l * (ds * w), || format!("L_SATL {s} != w·DS·L at ({dp}, {dn}, {theta})"))?;
    }

    let ds = small_dataset(7);
    let cfg = LossConfig::default();
    let mut worst: f64 = 0.0;
    for trial in 0..50u64 {
        let mut model = Model::new(&ds.types, ds.dim(), ModelConfig { seed: trial, ..Default::default() }).unwrap();
        let batch = random_batch(&ds, &mut rng, 1 + (trial as usize % 40));
        model.ensure_triplet_weights(&batch);
        randomize(&mut model, &mut rng, -2.0, 2.0);
        let b = total_loss(&mut model, &ds.store, &batch, &cfg).map_err(|e| e.to_string())?;
        let oracle =
            batch.iter().map(|t| oracle_triplet_total(&model, &ds.store, t, &cfg)).sum::<f64>() / batch.len() as f64;
        worst = worst.max((b.total - oracle).abs());
    }
    ensure(worst <= 1e-12, || format!("batched total deviates from oracle by {worst:.3e}"))?;
    Ok(format!("10^4 identities exact, batched total within {worst:.1e} of oracle"))
}

// ---------------------------------------------------------------- 3

fn distance_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_hom: f64 = 0.0;
    for _ in 0..10_000 {
        let d = rng.random_range(1..12);
        let mut v = || (0..d).map(|_| rng.random_range(-5.0..5.0)).collect::<Vec<f64>>();
        let (a, b, c, m) = (v(), v(), v(), v());
        let ab = masked_l2(&a, &b, &m).unwrap();
        ensure(ab == masked_l2(&b, &a, &m).unwrap(), || "masked_l2 not symmetric".into())?;
        let alpha: f64 = rng.random_range(-4.0..4.0);
        let sa: Vec<f64> = a.iter().map(|x| alpha * x).collect();
        let sb: Vec<f64> = b.iter().map(|x| alpha * x).collect();
        let lhs = masked_l2(&sa, &sb, &m).unwrap();
        let rel = (lhs - alpha.abs() * ab).abs() / (1.0 + alpha.abs() * ab);
        worst_hom = worst_hom.max(rel);
        ensure(rel <= 1e-12, || format!("homogeneity off by {rel:.3e}"))?;
        let (ac, bc) = (masked_l2(&a, &c, &m).unwrap(), masked_l2(&b, &c, &m).unwrap());
        ensure(ac <= ab + bc + 1e-12 * (1.0 + ab + bc), || "triangle bound violated".into())?;
    }

    let types: Vec<ItemType> = ["tops", "bottoms", "shoes", "bags"].map(ItemType::from).to_vec();
    for seed in 0..100u64 {
        let mut model = Model::new(&types, 8, ModelConfig { seed, mask_noise: 0.5, ..Default::default() }).unwrap();
        randomize(&mut model, &mut rng, -3.0, 3.0);
        for _ in 0..100 {
            let u = &types[rng.random_range(0..4)];
            let v = loop {
                let v = &types[rng.random_range(0..4)];
                if v != u {
                    break v;
                }
            };
            let fi: Vec<f64> = (0..8).map(|_| rng.random_range(-5.0..5.0)).collect();
            let fj: Vec<f64> = (0..8).map(|_| rng.random_range(-5.0..5.0)).collect();
            let x = model.pair_distance(&fi, u, &fj, v).unwrap();
            let y = model.pair_distance(&fj, v, &fi, u).unwrap();
            ensure(x == y, || format!("pair_distance asymmetric: {x} vs {y}"))?;
        }
    }
    Ok(format!("10^4 vector and 10^4 pair checks, homogeneity within {worst_hom:.1e}"))
}

// ---------------------------------------------------------------- 4

/// Distance of `r` from the exact `lr0 · (T − t) / T`, in units of the last
/// place of `r`. Products are expanded error-free with fused multiply-add.
fn ulp_error(r: f64, lr0: f64, t: u64, total: u64) -> f64 {
    let (big_t, rest) = (total as f64, (total - t) as f64);
    let p = r * big_t;
    let pe = r.mul_add(big_t, -p);
    let q = lr0 * rest;
    let qe = lr0.mul_add(rest, -q);
    let diff = ((p - q) + (pe - qe)) / big_t;
    let ulp = f64::from_bits(r.abs().to_bits() + 1) - r.abs();
    if r == 0.0 {
        diff.abs() / f64::MIN_POSITIVE
    } else {
        diff.abs() / ulp
    }
}

fn schedule_and_determinism() -> Outcome {
    for total in [1u64, 7, 100, 12_345] {
        let s = LrSchedule::new(5e-5, total);
        ensure(s.lr(0) == 5e-5, || format!("lr(0) = {}", s.lr(0)))?;
        ensure(s.lr(total) == 0.0, || format!("lr(T) = {}", s.lr(total)))?;
        for t in 0..=total.min(2000) {
            let err = ulp_error(s.lr(t), 5e-5, t, total);
            ensure(err <= 1.0, || format!("lr({t}) = {} is {err:.2} ulp off (T = {total})", s.lr(t)))?;
        }
    }

    let ds = small_dataset(11);
    let make = || {
        let model = Model::new(&ds.types, ds.dim(), ModelConfig { seed: 5, ..Default::default() }).unwrap();
        let cfg = TrainConfig { batch_size: 16, lr: 0.05, epochs: 3, seed: 9, log_every: 0, ..Default::default() };
        Trainer::new(&ds, model, cfg).unwrap()
    };
    let run = || {
        let mut t = make();
        t.run().unwrap();
        t.checkpoint().to_bytes()
    };
    let (a, b) = (run(), run());
    ensure(a == b, || "identical seeds gave different checkpoints".into())?;

    let mut t = make();
    let total = t.total_steps();
    let cut = total / 2 + 1;
    t.run_until(cut).unwrap();
    let bytes = t.checkpoint().to_bytes();
    drop(t);
    let ckpt = Checkpoint::from_bytes(&bytes).map_err(|e| e.to_string())?;
    let mut resumed = Trainer::resume(&ds, ckpt).map_err(|e| e.to_string())?;
    resumed.run().unwrap();
    ensure(resumed.checkpoint().to_bytes() == a, || format!("resume at step {cut} of {total} diverged"))?;
    Ok(format!("lr within 1 ulp, {} checkpoint bytes bit-identical, resume at {cut}/{total} equivalent", a.len()))
}

// ---------------------------------------------------------------- 5

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn ablation_direction() -> Outcome {
    let t0 = Instant::now();
    let mut fitb = (Vec::new(), Vec::new());
    let mut hard = (Vec::new(), Vec::new());
    let mut fitb_wins = 0;
    let mut hard_wins = 0;
    let mut per_seed = Vec::new();
    for seed in 0..5u64 {
        let gen = GenConfig { num_types: 4, items_per_type: 200, hard_fraction: 0.4, seed, ..Default::default() };
        let (ds, diag) = generate(&gen).map_err(|e| e.to_string())?;
        let held_out = hard_fitb_triplets(&ds, &diag);
        let mut out = [(0.0, 0.0); 2];
        for (k, on) in [false, true].into_iter().enumerate() {
            let model = Model::new(&ds.types, ds.dim(), ModelConfig { seed, ..Default::default() }).unwrap();
            let mut cfg = TrainConfig { lr: 0.1, epochs: 20, seed, log_every: 0, ..Default::default() };
            cfg.loss.satl = on;
            let mut trainer = Trainer::new(&ds, model, cfg).map_err(|e| e.to_string())?;
            trainer.run().map_err(|e| e.to_string())?;
            let model = trainer.into_model();
            let acc = fitb_eval(&ds.fitb, &model, &ds.store, &FitbOptions::default()).unwrap().accuracy;
            let l = mean_comp_loss(&model, &ds.store, &held_out, 0.3).unwrap();
            out[k] = (acc, l);
        }
        let [(f_off, l_off), (f_on, l_on)] = out;
        fitb.0.push(f_off);
        fitb.1.push(f_on);
        hard.0.push(l_off);
        hard.1.push(l_on);
        fitb_wins += usize::from(f_on >= f_off);
        hard_wins += usize::from(l_on < l_off);
        per_seed.push(format!("s{seed}: fitb {f_off:.3}->{f_on:.3} hardL {l_off:.4}->{l_on:.4}"));
    }
    let elapsed = t0.elapsed();
    let (mf_off, mf_on) = (median(&mut fitb.0), median(&mut fitb.1));
    let (mh_off, mh_on) = (median(&mut hard.0), median(&mut hard.1));
    let summary = format!(
        "median FITB {mf_off:.3} -> {mf_on:.3}, median hard L_comp {mh_off:.4} -> {mh_on:.4}, \
         seeds holding: FITB {fitb_wins}/5, L_comp {hard_wins}/5 [{}]",
        per_seed.join("; ")
    );
    ensure(mf_on >= mf_off && mh_on < mh_off, || format!("median direction fails: {summary}"))?;
    ensure(fitb_wins >= 4 && hard_wins >= 4, || format!("direction holds on too few seeds: {summary}"))?;
    ensure(elapsed < Duration::from_secs(600), || format!("runtime {elapsed:?} >= 10 min"))?;
    Ok(summary)
}

// ---------------------------------------------------------------- 6

fn hand_fixture() -> (Dataset, Model) {
    let types: Vec<ItemType> = ["top", "bottom", "shoe"].map(ItemType::from).to_vec();
    let mut store = FeatureStore::new(2);
    let rows: [(&str, &str, [f64; 2]); 9] = [
        ("t1", "top", [0.0, 0.0]),
        ("t2", "top", [2.0, 1.0]),
        ("b1", "bottom", [0.1, 0.3]),
        ("b2", "bottom", [2.2, 0.8]),
        ("b3", "bottom", [1.0, -1.0]),
        ("s1", "shoe", [0.2, 0.1]),
        ("s2", "shoe", [1.9, 1.3]),
        ("s3", "shoe", [-1.0, 2.0]),
        ("s4", "shoe", [0.5, 0.5]),
    ];
    for (id, ty, f) in rows {
        store.insert(id.into(), ty.into(), Vector::new(f.to_vec()).unwrap()).unwrap();
    }
    let mut model = Model::new(&types, 2, ModelConfig::default()).unwrap();
    let masks = [(("top", "bottom"), [1.0, 0.5]), (("top", "shoe"), [0.2, 1.5]), (("bottom", "shoe"), [2.0, 0.1])];
    for ((u, v), w) in masks {
        let id = model.bank.lookup(&u.into(), &v.into()).unwrap();
        model.params.value_mut(id).copy_from_slice(&w);
    }
    let outfit = |ids: &[(&str, &str)]| ids.iter().map(|(i, t)| OutfitItem::new(*i, *t)).collect::<Vec<_>>();
    let fitb = vec![
        FitbQuestion {
            id: "q1".into(),
            outfit: outfit(&[("t1", "top"), ("b1", "bottom")]),
            candidates: vec!["s1".into(), "s2".into(), "s3".into()],
            answer: 0,
        },
        FitbQuestion {
            id: "q2".into(),
            outfit: outfit(&[("t2", "top"), ("s2", "shoe")]),
            candidates: vec!["b1".into(), "b2".into(), "b3".into()],
            answer: 1,
        },
        FitbQuestion {
            id: "q3".into(),
            outfit: outfit(&[("b3", "bottom"), ("s4", "shoe")]),
            candidates: vec!["t1".into(), "t2".into()],
            answer: 1,
        },
    ];
    let compat = vec![
        CompatQuestion { id: "c1".into(), items: outfit(&[("t1", "top"), ("b1", "bottom"), ("s1", "shoe")]), label: 1 },
        CompatQuestion { id: "c2".into(), items: outfit(&[("t2", "top"), ("b2", "bottom"), ("s2", "shoe")]), label: 1 },
        CompatQuestion { id: "c3".into(), items: outfit(&[("t1", "top"), ("b2", "bottom"), ("s3", "shoe")]), label: 0 },
    ];
    let outfits = vec![Outfit { id: "o1".into(), items: outfit(&[("t1", "top"), ("b1", "bottom")]) }];
    (Dataset::new(types, store, outfits, fitb, compat).unwrap(), model)
}

/// Brute-force masked distance straight from the stored rows and mask values.
fn brute_distance(ds: &Dataset, model: &Model, a: &OutfitItem, b: &OutfitItem) -> f64 {
    let m = model.mask(&a.ty, &b.ty).unwrap();
    let (x, y) = (ds.store.get(&a.id).unwrap(), ds.store.get(&b.id).unwrap());
    (0..m.len()).map(|k| (m[k] * x[k] - m[k] * y[k]).powi(2)).sum::<f64>().sqrt()
}

fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                den += 1.0;
                num += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

fn evaluator_correctness() -> Outcome {
    let (ds, model) = hand_fixture();
    let res = fitb_eval(&ds.fitb, &model, &ds.store, &FitbOptions::default()).map_err(|e| e.to_string())?;
    ensure(res.answers.len() == 3, || format!("{} questions answered", res.answers.len()))?;
    for (q, a) in ds.fitb.iter().zip(&res.answers) {
        let scores: Vec<f64> = q
            .candidates
            .iter()
            .map(|c| {
                let cand = OutfitItem { id: c.clone(), ty: ds.store.item_type(c).unwrap().clone() };
                let cross: Vec<&OutfitItem> = q.outfit.iter().filter(|it| it.ty != cand.ty).collect();
                cross.iter().map(|it| brute_distance(&ds, &model, &cand, it)).sum::<f64>() / cross.len() as f64
            })
            .collect();
        let mut best = 0;
        for k in 1..scores.len() {
            if scores[k] < scores[best] {
                best = k;
            }
        }
        ensure(a.chosen == best, || format!("{}: evaluator chose {}, oracle {best}", q.id, a.chosen))?;
        for (x, y) in a.scores.iter().zip(&scores) {
            ensure((x - y).abs() <= 1e-12, || format!("{}: score {x} vs oracle {y}", q.id))?;
        }
    }

    let compat = compat_eval(&ds.compat, &model, &ds.store).map_err(|e| e.to_string())?;
    let oracle_scores: Vec<f64> = ds
        .compat
        .iter()
        .map(|q| {
            let mut v = Vec::new();
            for i in 0..q.items.len() {
                for j in i + 1..q.items.len() {
                    v.push(brute_distance(&ds, &model, &q.items[i], &q.items[j]));
                }
            }
            -(v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect();
    let labels: Vec<bool> = ds.compat.iter().map(|q| q.label == 1).collect();
    let oracle_auc = brute_auc(&oracle_scores, &labels);
    ensure((compat.auc - oracle_auc).abs() <= 1e-12, || format!("AUC {} vs oracle {oracle_auc}", compat.auc))?;

    let separable = roc_auc(&[0.9, 0.8, 0.3, 0.1], &[true, true, false, false]).unwrap();
    ensure(separable == 1.0, || format!("separable AUC = {separable}"))?;
    let tie = roc_auc(&[0.4, 0.4], &[true, false]).unwrap();
    ensure(tie == 0.5, || format!("tie AUC = {tie}"))?;
    let correct = res.answers.iter().filter(|a| a.correct).count();
    Ok(format!("3/3 choices match oracle ({correct} correct), fixture AUC {:.3}, separable 1.0, tie 0.5", compat.auc))
}

// ---------------------------------------------------------------- 7

fn sampler_contract() -> Outcome {
    let gen = GenConfig { items_per_type: 200, seed: 4, ..Default::default() };
    let (ds, _) = generate(&gen).map_err(|e| e.to_string())?;
    let cfg = SamplerConfig { negatives: 6, seed: 77 };
    let triplets: Vec<Triplet> = make_triplets(&ds.outfits, &ds.store, cfg)
        .unwrap()
        .take(10_000)
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    ensure(triplets.len() == 10_000, || format!("only {} triplets", triplets.len()))?;
    let by_id: std::collections::HashMap<&str, &Outfit> = ds.outfits.iter().map(|o| (o.id.as_str(), o)).collect();
    let mut violations = 0;
    for t in &triplets {
        let o = by_id[t.outfit.as_str()];
        let neg_ty = ds.store.item_type(&t.negative.id);
        let ok = o.contains(&t.anchor.id)
            && o.contains(&t.positive.id)
            && t.anchor.ty != t.positive.ty
            && neg_ty == Some(&t.positive.ty)
            && t.negative.ty == t.positive.ty
            && !o.contains(&t.negative.id);
        violations += usize::from(!ok);
    }
    ensure(violations == 0, || format!("{violations} violations"))?;
    let again: Vec<Triplet> =
        make_triplets(&ds.outfits, &ds.store, cfg).unwrap().take(10_000).collect::<Result<_, _>>().unwrap();
    ensure(again == triplets, || "same seed produced a different stream".into())?;
    let other: Vec<Triplet> = make_triplets(&ds.outfits, &ds.store, SamplerConfig { seed: 78, ..cfg })
        .unwrap()
        .take(10_000)
        .collect::<Result<_, _>>()
        .unwrap();
    ensure(other != triplets, || "different seeds produced the same stream".into())?;
    Ok("10^4 triplets, 0 violations, stream seed-deterministic".into())
}
