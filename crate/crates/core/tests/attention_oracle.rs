//! Attention layers against brute-force loops written directly from the
//! scoring rule, plus the structural properties of the fusion module.

mod common;

use axsty_core::attention::{resolve_span, AttentionLayer, AttentionModule, Axis, FusionBlock, LayerKind};
use axsty_core::config::{AttentionMode, ModelConfig, Span};
use axsty_core::{Graph, ParamStore, Tensor};
use common::{layer, oracle, rand_map, run, Layer};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn full_2d_matches_brute_force_on_4x4x8() {
    for (heads, seed) in [(1, 1), (2, 2), (4, 3)] {
        let l = layer(LayerKind::Full, 8, heads, 4, 4, seed);
        let (t, r) = (rand_map(8, 4, 4, seed + 10), rand_map(8, 4, 4, seed + 20));
        let diff = run(&l, &t, &r).max_abs_diff(&oracle(&l, &t, &r));
        assert!(diff < 1e-9, "heads {heads}: {diff}");
    }
}

#[test]
fn axial_strips_match_brute_force() {
    let l = layer(LayerKind::Axial(Axis::Width), 8, 2, 1, 8, 4);
    let (t, r) = (rand_map(8, 1, 8, 5), rand_map(8, 1, 8, 6));
    assert!(run(&l, &t, &r).max_abs_diff(&oracle(&l, &t, &r)) < 1e-9);
    let l = layer(LayerKind::Axial(Axis::Height), 8, 2, 8, 1, 7);
    let (t, r) = (rand_map(8, 8, 1, 8), rand_map(8, 8, 1, 9));
    assert!(run(&l, &t, &r).max_abs_diff(&oracle(&l, &t, &r)) < 1e-9);
    // Axial on a 2D map only sees its own row.
    let l = layer(LayerKind::Axial(Axis::Width), 4, 1, 3, 5, 11);
    let (t, r) = (rand_map(4, 3, 5, 12), rand_map(4, 3, 5, 13));
    assert!(run(&l, &t, &r).max_abs_diff(&oracle(&l, &t, &r)) < 1e-9);
}

#[test]
fn clamped_window_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let layer_ = AttentionLayer::new(&mut store, "l", 4, 2, 3, 2, &mut rng).unwrap();
    for id in [layer_.r_q, layer_.r_k, layer_.r_v] {
        *store.get_mut(id) = Tensor::uniform(store.get(id).shape(), -0.5, 0.5, &mut rng);
    }
    let l = Layer { store, layer: layer_ };
    let (t, r) = (rand_map(4, 5, 6, 1), rand_map(4, 5, 6, 2));
    assert!(run(&l, &t, &r).max_abs_diff(&oracle(&l, &t, &r)) < 1e-9);
}

fn copy_params(from: &Layer, to: &mut Layer) {
    for id in from.store.ids() {
        *to.store.get_mut(id) = from.store.get(id).clone();
    }
}

#[test]
fn width_axial_on_single_row_equals_full_2d() {
    let a = layer(LayerKind::Axial(Axis::Width), 8, 2, 1, 6, 3);
    let mut f = layer(LayerKind::Full, 8, 2, 1, 6, 99);
    copy_params(&a, &mut f);
    let (t, r) = (rand_map(8, 1, 6, 1), rand_map(8, 1, 6, 2));
    assert!(run(&a, &t, &r).max_abs_diff(&run(&f, &t, &r)) < 1e-9);
}

fn set(l: &mut Layer, id: axsty_core::ParamId, t: Tensor) {
    *l.store.get_mut(id) = t;
}

fn identity(c: usize) -> Tensor {
    Tensor::from_fn(&[c, c], |i| f64::from(u8::from(i / c == i % c)))
}

#[test]
fn zero_queries_and_keys_average_values() {
    let c = 4;
    let mut l = layer(LayerKind::Full, c, 2, 3, 3, 5);
    let mut la = layer(LayerKind::Axial(Axis::Width), c, 2, 3, 3, 5);
    for l in [&mut l, &mut la] {
        let a = l.layer.clone();
        set(l, a.w_q, Tensor::zeros(&[c, c]));
        set(l, a.w_k, Tensor::zeros(&[c, c]));
        set(l, a.w_v, identity(c));
        set(l, a.w_out, identity(c));
        for id in [a.r_q, a.r_k, a.r_v] {
            let shape = l.store.get(id).shape().to_vec();
            set(l, id, Tensor::zeros(&shape));
        }
    }
    let t = rand_map(c, 3, 3, 1);
    // Constant values come back unchanged.
    let v = Tensor::from_fn(&[c, 3, 3], |i| (i / 9) as f64 * 0.5 - 0.7);
    assert!(run(&l, &t, &v).max_abs_diff(&v) < 1e-12);
    // Width-axis attention returns each row's mean.
    let r = rand_map(c, 3, 3, 2);
    let y = run(&la, &t, &r);
    for ch in 0..c {
        for i in 0..3 {
            let row = &r.data()[ch * 9 + i * 3..][..3];
            let mean = row.iter().sum::<f64>() / 3.0;
            for j in 0..3 {
                assert!((y.data()[ch * 9 + i * 3 + j] - mean).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn dominant_key_selects_its_value() {
    let c = 2;
    let mut l = layer(LayerKind::Full, c, 1, 2, 2, 1);
    let a = l.layer.clone();
    set(&mut l, a.w_q, identity(c));
    set(&mut l, a.w_k, identity(c));
    set(&mut l, a.w_v, identity(c));
    set(&mut l, a.w_out, identity(c));
    for id in [a.r_q, a.r_k, a.r_v] {
        let shape = l.store.get(id).shape().to_vec();
        set(&mut l, id, Tensor::zeros(&shape));
    }
    let t = Tensor::full(&[c, 2, 2], 1.0);
    let mut r = Tensor::zeros(&[c, 2, 2]);
    r.data_mut()[2] = 800.0;
    r.data_mut()[4 + 2] = 800.0;
    let y = run(&l, &t, &r);
    for p in 0..4 {
        assert_eq!(y.data()[p], 800.0);
        assert_eq!(y.data()[4 + p], 800.0);
    }
}

#[test]
fn weights_are_distributions() {
    let l = layer(LayerKind::Full, 4, 2, 3, 4, 8);
    let (t, r) = (rand_map(4, 3, 4, 1), rand_map(4, 3, 4, 2));
    let mut g = Graph::new();
    let b = l.store.bind_frozen(&mut g);
    let tv = g.constant(t);
    let rv = g.constant(r);
    l.layer.forward(&mut g, &b, tv, rv).unwrap();
    let node = g.attention_nodes()[0];
    let w = g.attention_weights(node).unwrap();
    for chunk in w.chunks(12) {
        assert!(chunk.iter().all(|&x| x >= 0.0));
        assert!((chunk.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn content_attention_is_permutation_invariant_in_reference() {
    let c = 4;
    let mut l = layer(LayerKind::Full, c, 2, 3, 3, 6);
    let a = l.layer.clone();
    for id in [a.r_q, a.r_k, a.r_v] {
        let shape = l.store.get(id).shape().to_vec();
        set(&mut l, id, Tensor::zeros(&shape));
    }
    let t = rand_map(c, 3, 3, 1);
    let r = rand_map(c, 3, 3, 2);
    let perm = [4, 7, 0, 2, 8, 1, 3, 6, 5];
    let rp = Tensor::from_fn(&[c, 3, 3], |i| r.data()[(i / 9) * 9 + perm[i % 9]]);
    assert!(run(&l, &t, &r).max_abs_diff(&run(&l, &t, &rp)) < 1e-12);
}

fn small_cfg(mode: AttentionMode, repeats: usize) -> ModelConfig {
    ModelConfig {
        hidden: 8,
        heads: 2,
        mode,
        repeats,
        ..ModelConfig::default()
    }
}

fn module_out(store: &ParamStore, f: impl Fn(&mut Graph, &axsty_core::params::Bindings, axsty_core::Var, axsty_core::Var) -> axsty_core::Var, t: &Tensor, r: &Tensor) -> Tensor {
    let mut g = Graph::new();
    let b = store.bind_frozen(&mut g);
    let tv = g.constant(t.clone());
    let rv = g.constant(r.clone());
    let y = f(&mut g, &b, tv, rv);
    g.value(y).clone()
}

#[test]
fn silent_attention_leaves_relu_of_target() {
    for mode in [AttentionMode::Axial, AttentionMode::Full] {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let m = AttentionModule::new(&mut store, "m", &small_cfg(mode, 1), 4, 4, &mut rng).unwrap();
        for layer in &m.layers {
            for id in [layer.w_v, layer.r_v, layer.w_out] {
                let shape = store.get(id).shape().to_vec();
                *store.get_mut(id) = Tensor::zeros(&shape);
            }
        }
        let t = rand_map(8, 4, 4, 1);
        let y = module_out(&store, |g, b, t, r| m.forward(g, b, t, r).unwrap(), &t, &rand_map(8, 4, 4, 2));
        assert_eq!(y, t.map(|v| v.max(0.0)));
    }
}

#[test]
fn repeats_compose_independent_modules() {
    let cfg = small_cfg(AttentionMode::Axial, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let block = FusionBlock::new(&mut store, "f", &cfg, 4, 4, &mut rng).unwrap();
    let (t, r) = (rand_map(8, 4, 4, 1), rand_map(8, 4, 4, 2));
    let twice = module_out(&store, |g, b, t, r| block.forward(g, b, t, r).unwrap(), &t, &r);
    let first = module_out(&store, |g, b, t, r| block.modules[0].forward(g, b, t, r).unwrap(), &t, &r);
    let second = module_out(&store, |g, b, t, r| block.modules[1].forward(g, b, t, r).unwrap(), &first, &r);
    assert_eq!(twice, second);
    assert_ne!(store.get(block.modules[0].layers[0].w_q), store.get(block.modules[1].layers[0].w_q));
}

#[test]
fn span_longer_than_axis_is_an_error() {
    assert!(resolve_span(LayerKind::Axial(Axis::Width), Span::Fixed(9), 4, 8).is_err());
    assert_eq!(resolve_span(LayerKind::Axial(Axis::Height), Span::Fixed(3), 4, 8).unwrap(), (3, 1));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let mut cfg = small_cfg(AttentionMode::Axial, 1);
    cfg.span = Span::Fixed(5);
    assert!(AttentionModule::new(&mut store, "m", &cfg, 4, 8, &mut rng).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn full_2d_oracle_on_random_maps(seed in 0u64..10_000, h in 1usize..4, w in 1usize..4) {
        let l = layer(LayerKind::Full, 4, 2, h, w, seed);
        let (t, r) = (rand_map(4, h, w, seed + 1), rand_map(4, h, w, seed + 2));
        prop_assert!(run(&l, &t, &r).max_abs_diff(&oracle(&l, &t, &r)) < 1e-9);
    }
}
