use std::collections::BTreeSet;

use mm_core::data::{binarize_labels, read_manifest, sample_clips, split_by_participant, write_manifest, ClipRecord, SourceRecording, Split};
use mm_core::metrics::{global_micro_f1, weighted_f1, MetricsReport};
use mm_core::train::{bce_value, global_loss};
use mm_tensor::Rng;
use proptest::prelude::*;

/// Per-class F1 from explicit enumeration, averaged with support weights.
fn oracle_weighted_f1(pred: &[u8], truth: &[u8]) -> f64 {
    let n = truth.len() as f64;
    let mut total = 0.0;
    for class in [0u8, 1] {
        let hits = |p: bool, t: bool| {
            pred.iter()
                .zip(truth)
                .filter(|(&a, &b)| (a == class) == p && (b == class) == t)
                .count() as f64
        };
        let (tp, fp, fn_) = (hits(true, true), hits(true, false), hits(false, true));
        let support = tp + fn_;
        let f1 = if 2.0 * tp + fp + fn_ == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fn_) };
        total += support / n * f1;
    }
    total
}

fn oracle_micro(preds: &[Vec<u8>], truths: &[Vec<u8>]) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
    for (p, t) in preds.iter().zip(truths) {
        for (&a, &b) in p.iter().zip(t) {
            match (a, b) {
                (1, 1) => tp += 1.0,
                (1, 0) => fp += 1.0,
                (0, 1) => fn_ += 1.0,
                _ => {}
            }
        }
    }
    if tp + fp + fn_ == 0.0 {
        0.0
    } else {
        2.0 * tp / (2.0 * tp + fp + fn_)
    }
}

fn bits(rng: &mut Rng, n: usize) -> Vec<u8> {
    (0..n).map(|_| rng.below(2) as u8).collect()
}

#[test]
fn metrics_match_brute_force_oracle() {
    let mut rng = Rng::new(2024);
    for _ in 0..1000 {
        let n = 1 + rng.below(64) as usize;
        let preds: Vec<Vec<u8>> = (0..3).map(|_| bits(&mut rng, n)).collect();
        let truths: Vec<Vec<u8>> = (0..3).map(|_| bits(&mut rng, n)).collect();
        for k in 0..3 {
            let w = weighted_f1(&preds[k], &truths[k]).unwrap();
            assert!((w - oracle_weighted_f1(&preds[k], &truths[k])).abs() <= 1e-12);
        }
        let (g, _) = global_micro_f1(&preds, &truths).unwrap();
        assert!((g - oracle_micro(&preds, &truths)).abs() <= 1e-12);
    }
}

fn instance() -> impl Strategy<Value = (Vec<[u8; 3]>, Vec<[u8; 3]>)> {
    (1usize..64).prop_flat_map(|n| {
        let row = || prop::array::uniform3(0u8..2);
        (prop::collection::vec(row(), n), prop::collection::vec(row(), n))
    })
}

fn columns(rows: &[[u8; 3]]) -> Vec<Vec<u8>> {
    (0..3).map(|k| rows.iter().map(|r| r[k]).collect()).collect()
}

proptest! {
    #[test]
    fn metrics_are_permutation_invariant((pred, truth) in instance(), seed in any::<u64>()) {
        let mut order: Vec<usize> = (0..pred.len()).collect();
        Rng::new(seed).shuffle(&mut order);
        let p2: Vec<[u8; 3]> = order.iter().map(|&i| pred[i]).collect();
        let t2: Vec<[u8; 3]> = order.iter().map(|&i| truth[i]).collect();
        let probs = |rows: &[[u8; 3]]| [0, 1, 2].map(|k| rows.iter().map(|r| r[k] as f64).collect::<Vec<_>>());
        let a = MetricsReport::from_predictions(&probs(&pred), &truth, 0.5).unwrap();
        let b = MetricsReport::from_predictions(&probs(&p2), &t2, 0.5).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn fixing_a_mistake_never_lowers_micro_f1((pred, truth) in instance(), pick in any::<prop::sample::Index>()) {
        let wrong: Vec<(usize, usize)> = (0..pred.len())
            .flat_map(|i| (0..3).map(move |k| (i, k)))
            .filter(|&(i, k)| pred[i][k] != truth[i][k])
            .collect();
        prop_assume!(!wrong.is_empty());
        let (i, k) = wrong[pick.index(wrong.len())];
        let mut fixed = pred.clone();
        fixed[i][k] = truth[i][k];
        let before = global_micro_f1(&columns(&pred), &columns(&truth)).unwrap().0;
        let after = global_micro_f1(&columns(&fixed), &columns(&truth)).unwrap().0;
        prop_assert!(after >= before);
    }

    #[test]
    fn f1_values_stay_in_unit_interval((pred, truth) in instance()) {
        for k in 0..3 {
            let w = weighted_f1(&columns(&pred)[k], &columns(&truth)[k]).unwrap();
            prop_assert!((0.0..=1.0).contains(&w));
        }
    }

    #[test]
    fn binarization_is_monotone(a in 0.0f64..=20.0, b in 0.0f64..=20.0, t in 0.0f64..=20.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(binarize_labels(lo, t).unwrap() <= binarize_labels(hi, t).unwrap());
    }

    #[test]
    fn bce_is_non_negative(p in prop::collection::vec(0.0f64..=1.0, 1..32), seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let y = bits(&mut rng, p.len());
        prop_assert!(bce_value(&p, &y).unwrap() >= 0.0);
    }

    #[test]
    fn global_loss_is_linear(l in prop::array::uniform3(0.0f64..10.0), w in prop::array::uniform3(0.0f64..5.0), c in 0.0f64..4.0) {
        let scaled = w.map(|x| c * x);
        let lhs = global_loss(l, &scaled);
        prop_assert!((lhs - c * global_loss(l, &w)).abs() <= 1e-9 * (1.0 + lhs.abs()));
        // reordering branches together with their weights changes nothing
        let rl = [l[2], l[0], l[1]];
        let rw = [w[2], w[0], w[1]];
        prop_assert!((global_loss(rl, &rw) - global_loss(l, &w)).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn sampled_clips_stay_in_bounds(durations in prop::collection::vec(1.0f64..400.0, 1..6), per in 1usize..40, seed in any::<u64>()) {
        let sources: Vec<SourceRecording> = durations
            .iter()
            .enumerate()
            .map(|(i, &d)| SourceRecording { participant_id: format!("P{i}"), task_id: "t".into(), duration_seconds: d })
            .collect();
        let clips = sample_clips(&sources, per, 6.0, seed);
        prop_assert_eq!(&clips, &sample_clips(&sources, per, 6.0, seed));
        for s in &sources {
            let mine: Vec<f64> = clips.iter().filter(|c| c.participant_id == s.participant_id).map(|c| c.start_seconds).collect();
            let slots = (s.duration_seconds - 6.0).floor().max(0.0) as usize + 1;
            prop_assert_eq!(mine.len(), per.min(slots));
            prop_assert_eq!(mine.iter().map(|x| *x as u64).collect::<BTreeSet<_>>().len(), mine.len());
            for st in mine {
                prop_assert!(st >= 0.0 && (st + 6.0 <= s.duration_seconds || st == 0.0));
            }
        }
    }
}

fn records(participants: usize, clips: usize) -> Vec<ClipRecord> {
    (0..participants)
        .flat_map(|p| {
            (0..clips).map(move |c| ClipRecord {
                clip_id: format!("P{p}_{c}"),
                participant_id: format!("P{p}"),
                task_id: "t".into(),
                audio_path: format!("{p}_{c}.wav"),
                video_path: format!("{p}_{c}.mmv"),
                raw_scores: [(c % 21) as f64, 10.0, 3.5],
                labels: [u8::from(c % 21 >= 10), 1, 0],
                duration_seconds: 6.0,
            })
        })
        .collect()
}

#[test]
fn splits_never_leak_participants() {
    let mut rng = Rng::new(99);
    for seed in 0..100u64 {
        let recs = records(3 + rng.below(20) as usize, 1 + rng.below(5) as usize);
        let s = split_by_participant(&recs, [0.7, 0.15, 0.15], seed).unwrap();
        let sets: Vec<BTreeSet<&String>> = [&s.train, &s.val, &s.test].iter().map(|v| v.iter().collect()).collect();
        for a in 0..3 {
            for b in a + 1..3 {
                assert!(sets[a].is_disjoint(&sets[b]), "seed {seed}");
            }
        }
        let mut seen = 0;
        for split in [Split::Train, Split::Val, Split::Test] {
            for r in s.select(&recs, split) {
                assert_eq!(s.split_of(&r.participant_id), Some(split));
                seen += 1;
            }
        }
        assert_eq!(seen, recs.len());
        assert_eq!(s.counts.train + s.counts.val + s.counts.test, recs.len());
    }
}

#[test]
fn manifest_write_read_write_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("manifest.json");
    let recs = records(4, 6);
    write_manifest(&p, &recs).unwrap();
    let first = std::fs::read(&p).unwrap();
    write_manifest(&p, &read_manifest(&p).unwrap()).unwrap();
    assert_eq!(std::fs::read(&p).unwrap(), first);
}
