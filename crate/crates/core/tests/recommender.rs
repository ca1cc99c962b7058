//! Reference recommendation: ranking against exhaustive sorting, patch
//! refinement invariances, and category sampling frequencies.

use axsty_core::recommender::{
    cosine_distance, global_rank_top5, local_refine_top1, patch_score, pick, rank, sample_reference, Category,
    CorpusEntry, Rankings, ALPHA, DESCRIPTOR_DIM,
};
use axsty_core::Tensor;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn entry(id: &str, class: &str, descriptor: Vec<f64>, features: Tensor) -> CorpusEntry {
    CorpusEntry::new(id, class, descriptor, features).unwrap()
}

fn random_pool(n: usize, seed: u64) -> Vec<CorpusEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let d = Tensor::uniform(&[DESCRIPTOR_DIM], -1.0, 1.0, &mut rng).into_data();
            let f = Tensor::uniform(&[2, 4, 4], -1.0, 1.0, &mut rng);
            entry(&format!("img{i:02}"), ["cat", "dog"][i % 3 / 2], d, f)
        })
        .collect()
}

/// Exhaustive oracle: squared distances to every same-class entry, sorted
/// by (distance, id), first five.
fn brute_top5(target: &CorpusEntry, pool: &[CorpusEntry]) -> Vec<String> {
    let mut all: Vec<(f64, String)> = Vec::new();
    for e in pool {
        if e.class != target.class || e.id == target.id {
            continue;
        }
        let mut d2 = 0.0;
        for k in 0..DESCRIPTOR_DIM {
            d2 += (e.descriptor[k] - target.descriptor[k]).powi(2);
        }
        all.push((d2, e.id.clone()));
    }
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    all.into_iter().take(5).map(|(_, id)| id).collect()
}

#[test]
fn ranking_matches_exhaustive_sort_on_20_entry_pools() {
    for seed in 0..50 {
        let pool = random_pool(20, seed);
        for target in &pool {
            assert_eq!(global_rank_top5(target, &pool), brute_top5(target, &pool));
        }
    }
}

#[test]
fn duplicate_ranks_first_and_short_pools_are_allowed() {
    let mut pool = random_pool(20, 3);
    let mut dup = pool[0].clone();
    dup.id = "zz-copy".into();
    pool.push(dup);
    assert_eq!(global_rank_top5(&pool[0], &pool)[0], "zz-copy");
    let small = random_pool(4, 9);
    let same: Vec<CorpusEntry> = small.iter().map(|e| CorpusEntry { class: "one".into(), ..e.clone() }).collect();
    assert_eq!(global_rank_top5(&same[0], &same).len(), 3);
}

#[test]
fn identical_candidate_wins_refinement() {
    let pool = random_pool(6, 4);
    let mut twin = pool[1].clone();
    twin.id = "twin".into();
    twin.features = pool[0].features.clone();
    let cands: Vec<&CorpusEntry> = pool[1..].iter().chain(std::iter::once(&twin)).collect();
    assert_eq!(local_refine_top1(&pool[0].features, &cands, 2).unwrap(), "twin");
    assert!(patch_score(&pool[0].features, &pool[0].features, 2).unwrap().abs() < 1e-12);
    assert!(patch_score(&Tensor::zeros(&[2, 1, 1]), &pool[0].features, 2).is_err());
}

#[test]
fn orthogonal_maps_are_at_distance_one() {
    let a = Tensor::from_fn(&[2, 4, 4], |i| f64::from(u8::from(i < 16)));
    let b = Tensor::from_fn(&[2, 4, 4], |i| f64::from(u8::from(i >= 16)));
    assert!((patch_score(&a, &b, 2).unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(cosine_distance(&[0.0, 0.0], &[1.0, 2.0]), 1.0);
}

fn rankings() -> Rankings {
    Rankings {
        top1: "a".into(),
        top5: ["a", "b", "c", "d", "e"].map(String::from).to_vec(),
        same_class: (0..20).map(|i| format!("s{i}")).collect(),
    }
}

#[test]
fn category_frequencies_within_one_percent() {
    let r = rankings();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut counts = [0usize; 3];
    let n = 100_000;
    for _ in 0..n {
        let (c, id) = sample_reference(&r, &mut rng);
        let k = match c {
            Category::Top1 => {
                assert_eq!(id, "a");
                0
            }
            Category::Top5 => {
                assert!(r.top5.iter().any(|s| s == id));
                1
            }
            Category::SameClass => {
                assert!(r.same_class.iter().any(|s| s == id));
                2
            }
        };
        counts[k] += 1;
    }
    assert_eq!(ALPHA, [0.6, 0.3, 0.1]);
    for (c, a) in counts.iter().zip(ALPHA) {
        assert!((*c as f64 / n as f64 - a).abs() <= 0.01, "{counts:?}");
    }
}

#[test]
fn forced_category_and_determinism() {
    let r = rankings();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    assert!((0..100).all(|_| pick(&r, Category::Top1, &mut rng) == "a"));
    let draw = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..50).map(|_| sample_reference(&r, &mut rng).1.to_string()).collect::<Vec<_>>()
    };
    assert_eq!(draw(5), draw(5));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rankings_ignore_pool_order(seed in 0u64..10_000, shuffle in 0u64..10_000) {
        let pool = random_pool(20, seed);
        let mut shuffled = pool.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle));
        for t in pool.iter().take(4) {
            prop_assert_eq!(rank(t, &pool, 2).unwrap(), rank(t, &shuffled, 2).unwrap());
        }
    }

    #[test]
    fn patch_score_ignores_candidate_patch_layout(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = Tensor::uniform(&[3, 4, 6], -1.0, 1.0, &mut rng);
        let c = Tensor::uniform(&[3, 4, 6], -1.0, 1.0, &mut rng);
        // Move whole 2x2 cells around.
        let mut cells: Vec<usize> = (0..6).collect();
        cells.shuffle(&mut rng);
        let moved = Tensor::from_fn(&[3, 4, 6], |i| {
            let (ch, y, x) = (i / 24, (i / 6) % 4, i % 6);
            let src = cells[(y / 2) * 3 + x / 2];
            c.data()[ch * 24 + ((src / 3) * 2 + y % 2) * 6 + (src % 3) * 2 + x % 2]
        });
        let a = patch_score(&t, &c, 2).unwrap();
        let b = patch_score(&t, &moved, 2).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!(patch_score(&c, &moved, 2).unwrap().abs() < 1e-12);
    }
}
