use persearch_core::data::Detection;
use persearch_core::ema::{DualEncoderState, ParameterVector};
use persearch_core::eval::{
    evaluate, evaluate_query, EvalConfig, GalleryItem, GallerySampler, GroundTruth, QueryItem,
};
use persearch_core::harness::LrSchedule;
use persearch_core::loss::{anchor_gradient, pairwise_loss, SimilarityPairSet};
use persearch_core::memory::{cosine_similarities, FeatureEntry, LookupTable, MemoryBank};
use persearch_core::model::{Annotation, BBox};
use persearch_core::{Embedding, IdentityId, SceneId};
use proptest::prelude::*;

fn raw_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, dim)
        .prop_filter("non-zero", |v| v.iter().any(|x| x.abs() > 1e-3))
}

fn unit(dim: usize) -> impl Strategy<Value = Embedding> {
    raw_vec(dim).prop_map(|v| Embedding::normalized(v).unwrap())
}

fn sims(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..=1.0, 0..max)
}

proptest! {
    #[test]
    fn queues_are_bounded_fifo_and_partition_the_bank(
        cap_l in 0usize..5,
        cap_u in 0usize..5,
        batches in prop::collection::vec(prop::collection::vec(prop::option::of(0u32..3), 0..4), 0..20),
    ) {
        let mut bank = MemoryBank::new(2, cap_l, cap_u);
        let (mut seen_l, mut seen_u) = (Vec::new(), Vec::new());
        for (tag, batch) in batches.iter().enumerate() {
            let tag = tag as u64;
            bank.enqueue(batch.iter().map(|label| {
                let e = Embedding::from_vec(vec![1.0, 0.0]);
                match label {
                    Some(id) => { seen_l.push((*id, tag)); FeatureEntry::labeled(e, IdentityId(*id), tag) }
                    None => { seen_u.push(tag); FeatureEntry::unlabeled(e, tag) }
                }
            })).unwrap();
            let got_l: Vec<_> = bank.labeled().map(|e| (e.identity.unwrap().0, e.iteration_tag)).collect();
            prop_assert_eq!(&got_l[..], &seen_l[seen_l.len().saturating_sub(cap_l)..]);
            let got_u: Vec<_> = bank.unlabeled().map(|e| e.iteration_tag).collect();
            prop_assert_eq!(&got_u[..], &seen_u[seen_u.len().saturating_sub(cap_u)..]);
            for anchor in 0..3 {
                let split = bank.split_pairs(IdentityId(anchor));
                prop_assert_eq!(split.positives.len() + split.negatives.len(), bank.len());
                let same = got_l.iter().filter(|(id, _)| *id == anchor).count();
                prop_assert_eq!(split.positives.len(), same);
            }
        }
    }

    #[test]
    fn similarity_is_symmetric_and_bounded(a in unit(6), b in unit(6)) {
        let ab = cosine_similarities(&a, [&b]).unwrap()[0];
        let ba = cosine_similarities(&b, [&a]).unwrap()[0];
        prop_assert_eq!(ab, ba);
        prop_assert!((-1.0..=1.0).contains(&ab));
    }

    #[test]
    fn table_proxies_stay_unit_norm(
        lambda in 0.0f64..=1.0,
        updates in prop::collection::vec((0u32..4, unit(5)), 1..30),
    ) {
        let mut table = LookupTable::new(5, lambda).unwrap();
        for (id, f) in &updates {
            table.update(IdentityId(*id), f).unwrap();
        }
        for (_, p) in table.iter() {
            prop_assert!((p.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn average_is_linear_in_the_trajectory(
        m in 0.0f64..=1.0,
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        steps in prop::collection::vec((raw_vec(4), raw_vec(4)), 1..10),
    ) {
        let run = |traj: &mut dyn Iterator<Item = Vec<f64>>| {
            let mut state = DualEncoderState::new(ParameterVector::zeros(4), m).unwrap();
            for t in traj {
                state.update(&t).unwrap();
            }
            state.average().as_slice().to_vec()
        };
        let x = run(&mut steps.iter().map(|(x, _)| x.clone()));
        let y = run(&mut steps.iter().map(|(_, y)| y.clone()));
        let z = run(&mut steps.iter().map(|(x, y)| x.iter().zip(y).map(|(p, q)| a * p + b * q).collect()));
        for i in 0..4 {
            prop_assert!((z[i] - (a * x[i] + b * y[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn average_converges_geometrically_to_a_fixed_target(
        m in 0.0f64..0.999,
        start in raw_vec(3),
        target in raw_vec(3),
    ) {
        let mut state = DualEncoderState::from_parts(
            ParameterVector::new(target.clone()).unwrap(),
            ParameterVector::new(start).unwrap(),
            m,
        ).unwrap();
        let dist = |s: &DualEncoderState| {
            s.average().as_slice().iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
        };
        let mut prev = dist(&state);
        for _ in 0..20 {
            state.update(&target).unwrap();
            let d = dist(&state);
            prop_assert!((d - m * prev).abs() <= 1e-12);
            prev = d;
        }
    }

    #[test]
    fn average_is_elementwise(m in 0.0f64..=1.0, theta in raw_vec(5), i in 0usize..5, bump in -1.0f64..1.0) {
        let mut a = DualEncoderState::new(ParameterVector::zeros(5), m).unwrap();
        let mut b = a.clone();
        a.update(&theta).unwrap();
        let mut bumped = theta.clone();
        bumped[i] += bump;
        b.update(&bumped).unwrap();
        for k in (0..5).filter(|&k| k != i) {
            prop_assert_eq!(a.average().as_slice()[k], b.average().as_slice()[k]);
        }
    }

    #[test]
    fn loss_rises_with_negatives_and_falls_with_positives(
        sp in sims(6).prop_filter("non-empty", |v| !v.is_empty()),
        sn in sims(6).prop_filter("non-empty", |v| !v.is_empty()),
        gamma in 0.5f64..32.0,
        which in any::<prop::sample::Index>(),
        delta in 0.0f64..0.5,
    ) {
        let loss = |p: &[f64], n: &[f64]| pairwise_loss(&SimilarityPairSet::new(p.to_vec(), n.to_vec(), gamma).unwrap()).value;
        let base = loss(&sp, &sn);
        let mut up = sn.clone();
        let j = which.index(up.len());
        up[j] = (up[j] + delta).min(1.0);
        prop_assert!(loss(&sp, &up) >= base);
        let mut pos = sp.clone();
        let i = which.index(pos.len());
        pos[i] = (pos[i] + delta).min(1.0);
        prop_assert!(loss(&pos, &sn) <= base);
    }

    #[test]
    fn loss_ignores_pair_order(
        sp in sims(6),
        sn in sims(6),
        gamma in 0.5f64..32.0,
        seed in any::<u64>(),
    ) {
        let loss = |p: Vec<f64>, n: Vec<f64>| pairwise_loss(&SimilarityPairSet::new(p, n, gamma).unwrap()).value;
        let rotate = |mut v: Vec<f64>| {
            if !v.is_empty() {
                let k = (seed as usize) % v.len();
                v.rotate_left(k);
                v.reverse();
            }
            v
        };
        let a = loss(sp.clone(), sn.clone());
        let b = loss(rotate(sp), rotate(sn));
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn similarity_gradients_match_central_differences(
        sp in sims(5).prop_filter("non-empty", |v| !v.is_empty()),
        sn in sims(5).prop_filter("non-empty", |v| !v.is_empty()),
        gamma in 0.5f64..16.0,
    ) {
        let h = 1e-6;
        let loss = |p: &[f64], n: &[f64]| pairwise_loss(&SimilarityPairSet::new(p.to_vec(), n.to_vec(), gamma).unwrap()).value;
        let r = pairwise_loss(&SimilarityPairSet::new(sp.clone(), sn.clone(), gamma).unwrap());
        let scale = r.grad_positives.iter().chain(&r.grad_negatives).fold(0.0f64, |a, g| a.max(g.abs())).max(1e-12);
        for i in 0..sp.len() {
            let (mut u, mut d) = (sp.clone(), sp.clone());
            u[i] += h;
            d[i] -= h;
            let fd = (loss(&u, &sn) - loss(&d, &sn)) / (2.0 * h);
            prop_assert!((fd - r.grad_positives[i]).abs() / scale < 1e-4);
            prop_assert!(r.grad_positives[i] <= 0.0);
        }
        for j in 0..sn.len() {
            let (mut u, mut d) = (sn.clone(), sn.clone());
            u[j] += h;
            d[j] -= h;
            let fd = (loss(&sp, &u) - loss(&sp, &d)) / (2.0 * h);
            prop_assert!((fd - r.grad_negatives[j]).abs() / scale < 1e-4);
            prop_assert!(r.grad_negatives[j] >= 0.0);
        }
    }

    #[test]
    fn scoring_leaves_the_bank_untouched(
        anchor in unit(4),
        entries in prop::collection::vec((prop::option::of(0u32..3), unit(4)), 1..12),
    ) {
        let mut bank = MemoryBank::new(4, 8, 8);
        bank.enqueue(entries.into_iter().map(|(id, e)| match id {
            Some(id) => FeatureEntry::labeled(e, IdentityId(id), 0),
            None => FeatureEntry::unlabeled(e, 0),
        })).unwrap();
        let before = bank.clone();
        let split = bank.split_pairs(IdentityId(0));
        let pos = cosine_similarities(&anchor, split.positives.iter().copied()).unwrap();
        let neg = cosine_similarities(&anchor, split.negatives.iter().copied()).unwrap();
        let r = pairwise_loss(&SimilarityPairSet::new(pos, neg, 16.0).unwrap());
        let g = anchor_gradient(&r, &split.positives, &split.negatives).unwrap();
        prop_assert_eq!(g.len(), 4);
        prop_assert_eq!(bank, before);
    }

    #[test]
    fn schedule_warms_up_then_only_decays(
        target in 1e-4f64..1.0,
        warmup in 0u64..50,
        first in 1u64..5,
        gap in 1u64..5,
        f1 in 0.01f64..=1.0,
        f2 in 0.01f64..=1.0,
    ) {
        let s = LrSchedule { base: 0.0, warmup_iters: warmup, warmup_target: target, milestones: vec![first, first + gap], factors: vec![f1, f2] };
        s.validate().unwrap();
        let mut prev = 0.0;
        for it in 0..warmup {
            let lr = s.lr_at(it, 0);
            prop_assert!(lr >= prev && lr <= target);
            prev = lr;
        }
        let mut prev = f64::INFINITY;
        for epoch in 0..(first + gap + 3) {
            let lr = s.lr_at(warmup, epoch);
            prop_assert!(lr > 0.0 && lr <= prev);
            prev = lr;
        }
    }
}

/// Gallery with `n_scenes` scenes; identity `i` stands at slot `i` of every
/// scene listed for it.
fn micro_gallery(
    layout: &[Vec<u32>],
    features: &[Vec<Embedding>],
    duplicates: usize,
) -> (Vec<GalleryItem>, GroundTruth) {
    let slot = |i: u32| BBox::new(20.0 * i as f64, 0.0, 20.0 * i as f64 + 16.0, 32.0);
    let mut gt = GroundTruth::default();
    let mut gallery = Vec::new();
    for (s, (ids, feats)) in layout.iter().zip(features).enumerate() {
        let scene = SceneId(s as u32);
        gt.insert(
            scene,
            ids.iter()
                .map(|&i| Annotation {
                    bbox: slot(i),
                    identity: Some(IdentityId(i)),
                })
                .collect(),
        );
        let mut detections = Vec::new();
        let mut fs = Vec::new();
        for (&i, f) in ids.iter().zip(feats) {
            for _ in 0..=duplicates {
                detections.push(Detection {
                    bbox: slot(i),
                    score: 1.0,
                });
                fs.push(f.clone());
            }
        }
        gallery.push(GalleryItem {
            scene,
            detections,
            features: fs,
        });
    }
    (gallery, gt)
}

fn layout_strategy() -> impl Strategy<Value = (Vec<Vec<u32>>, Vec<Vec<Embedding>>, Vec<Embedding>)>
{
    prop::collection::vec(prop::sample::subsequence(vec![0u32, 1, 2, 3], 0..=4), 2..10)
        .prop_flat_map(|layout| {
            let feats: Vec<_> = layout
                .iter()
                .map(|ids| prop::collection::vec(unit(3), ids.len()))
                .collect();
            (Just(layout), feats, prop::collection::vec(unit(3), 4))
        })
}

proptest! {
    #[test]
    fn cmc_is_monotone_and_bounded((layout, feats, qf) in layout_strategy()) {
        let (gallery, gt) = micro_gallery(&layout, &feats, 0);
        let queries: Vec<QueryItem> = qf.into_iter().enumerate()
            .map(|(i, f)| QueryItem { index: i, identity: IdentityId(i as u32), feature: f })
            .collect();
        let cfg = EvalConfig { cmc_ks: vec![1, 2, 3, 5, 10, 40], ..EvalConfig::default() };
        let r = evaluate(&queries, &gallery, &gt, &cfg).unwrap();
        let values: Vec<f64> = r.cmc.values().copied().collect();
        prop_assert!(values.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(r.per_query_ap.values().all(|ap| (0.0..=1.0).contains(ap)));
    }

    #[test]
    fn duplicate_detections_match_at_most_once(
        (layout, feats, qf) in layout_strategy(),
        dup in 1usize..3,
    ) {
        let (plain, gt) = micro_gallery(&layout, &feats, 0);
        let (dupes, _) = micro_gallery(&layout, &feats, dup);
        let cfg = EvalConfig::default();
        let plain: Vec<&GalleryItem> = plain.iter().collect();
        let dupes: Vec<&GalleryItem> = dupes.iter().collect();
        for (i, f) in qf.into_iter().enumerate() {
            let q = QueryItem { index: i, identity: IdentityId(i as u32), feature: f };
            let a = evaluate_query(&q, &plain, &gt, &cfg).unwrap();
            let b = evaluate_query(&q, &dupes, &gt, &cfg).unwrap();
            prop_assert_eq!(a.ap.is_some(), b.ap.is_some());
            // Extra copies can only be false positives.
            if let (Some(x), Some(y)) = (a.ap, b.ap) {
                prop_assert!(y <= x + 1e-12 && y <= 1.0);
            }
        }
    }

    #[test]
    fn sampled_galleries_are_nested((layout, _feats, qf) in layout_strategy(), seed in any::<u64>()) {
        let feats: Vec<Vec<Embedding>> = layout.iter().map(|ids| ids.iter().map(|_| Embedding::from_vec(vec![1.0, 0.0, 0.0])).collect()).collect();
        let (gallery, gt) = micro_gallery(&layout, &feats, 0);
        let sampler = GallerySampler::new(&gallery, &gt, seed);
        for (i, f) in qf.into_iter().enumerate() {
            let q = QueryItem { index: i, identity: IdentityId(i as u32), feature: f };
            let mut prev: Vec<SceneId> = Vec::new();
            for size in 1..=gallery.len() {
                let scenes: Vec<SceneId> = sampler.sample(&q, size).unwrap().iter().map(|g| g.scene).collect();
                prop_assert!(prev.iter().all(|s| scenes.contains(s)));
                prop_assert!(gallery.iter().filter(|g| gt.contains(g.scene, q.identity)).all(|g| scenes.contains(&g.scene)));
                prev = scenes;
            }
        }
    }
}
