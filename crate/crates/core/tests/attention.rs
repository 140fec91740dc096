mod common;

use common::oracle::{self, matmul, softmax_rows, transpose};
use common::{assert_close, init_store, random, random_store, rng, run};
use lssf_core::attention::{self, bottleneck, channel_shuffle, gsa, sab, shuffle_permutation};
use lssf_core::config::{GsaConfig, NetworkConfig, SabConfig};
use lssf_core::params::ParamStore;
use lssf_tensor::{Mode, Tensor};
use proptest::prelude::*;

/// Reshape `[g, n/g]`, transpose, flatten, applied to the index vector.
fn shuffle_oracle(n: usize, g: usize) -> Vec<usize> {
    let idx: Vec<f64> = (0..n).map(|i| i as f64).collect();
    transpose(&idx, g, n / g).into_iter().map(|v| v as usize).collect()
}

#[test]
fn shuffle_examples() {
    assert_eq!(shuffle_permutation(4, 2).unwrap(), vec![0, 2, 1, 3]);
    assert_eq!(shuffle_permutation(6, 1).unwrap(), (0..6).collect::<Vec<_>>());
    assert_eq!(shuffle_permutation(6, 6).unwrap(), (0..6).collect::<Vec<_>>());
    assert!(shuffle_permutation(6, 4).is_err());
    assert!(shuffle_permutation(6, 0).is_err());
}

#[test]
fn shuffle_matches_index_oracle_for_all_divisors() {
    for n in 1..=64 {
        for g in (1..=n).filter(|g| n % g == 0) {
            assert_eq!(shuffle_permutation(n, g).unwrap(), shuffle_oracle(n, g), "n={n} g={g}");
        }
    }
}

fn shuffle_tensor(x: &Tensor<f64>, groups: usize) -> Tensor<f64> {
    let mut store = ParamStore::new();
    run(&mut store, Mode::Infer, std::slice::from_ref(x), |cx, v| Ok(vec![channel_shuffle(cx, v[0], groups)?])).remove(0)
}

#[test]
fn double_shuffle_of_four_channels_restores_order() {
    let x = Tensor::from_fn([1, 1, 1, 4], |i| i as f64);
    assert_eq!(shuffle_tensor(&x, 2).data(), &[0.0, 2.0, 1.0, 3.0]);
    assert_eq!(shuffle_tensor(&shuffle_tensor(&x, 2), 2), x);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shuffle_then_inverse_is_identity(n in 1usize..=64, pick in any::<prop::sample::Index>(), seed in any::<u64>()) {
        let divisors: Vec<usize> = (1..=n).filter(|g| n % g == 0).collect();
        let g = divisors[pick.index(divisors.len())];
        let x = random(&[1, 2, 3, n], &mut rng(seed));
        let y = shuffle_tensor(&x, g);
        let mut a: Vec<u64> = x.data().iter().map(|v| v.to_bits()).collect();
        let mut b: Vec<u64> = y.data().iter().map(|v| v.to_bits()).collect();
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);
        prop_assert_eq!(shuffle_tensor(&y, n / g), x);
    }
}

fn sab_config(dropout: f64) -> SabConfig {
    SabConfig { dropout, ..Default::default() }
}

/// Channel attention on one sample: `x` is `[HW, C]` row-major.
fn sab_oracle(x: &[f64], hw: usize, c: usize, temperature: f64) -> (Vec<f64>, Vec<f64>) {
    let xt = transpose(x, hw, c);
    let mut energy = matmul(&xt, x, c, hw, c);
    energy.iter_mut().for_each(|e| *e /= temperature.sqrt());
    softmax_rows(&mut energy, c);
    (matmul(x, &energy, hw, c, c), energy)
}

#[test]
fn sab_identical_channels_give_channel_mean() {
    let x = Tensor::new(vec![1, 2, 2, 2], vec![0.3, 0.3, -1.0, -1.0, 2.0, 2.0, 0.5, 0.5]).unwrap();
    let mut store = ParamStore::new();
    let out = run(&mut store, Mode::Infer, std::slice::from_ref(&x), |cx, v| {
        let a = sab(cx, "sab", v[0], &sab_config(0.0))?;
        Ok(vec![a.out, a.attention])
    });
    assert!(out[1].data().iter().all(|&a| (a - 0.5).abs() < 1e-15));
    let mean: Vec<f64> = x.data().chunks(2).flat_map(|r| {
        let m = (r[0] + r[1]) / 2.0;
        [m, m]
    }).collect();
    assert_close(&out[0], &Tensor::new(vec![1, 2, 2, 2], mean).unwrap(), 1e-15, "sab mean");
}

#[test]
fn sab_matches_matmul_oracle_and_rows_normalize() {
    for seed in 0..5 {
        let x = random(&[2, 3, 3, 4], &mut rng(seed));
        let mut store = ParamStore::new();
        let out = run(&mut store, Mode::Infer, std::slice::from_ref(&x), |cx, v| {
            let a = sab(cx, "sab", v[0], &sab_config(0.1))?;
            Ok(vec![a.out, a.attention])
        });
        for (n, sample) in x.data().chunks(9 * 4).enumerate() {
            let (want, attn) = sab_oracle(sample, 9, 4, 4.0);
            let got = &out[0].data()[n * 36..][..36];
            assert!(got.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-12));
            let got_attn = &out[1].data()[n * 16..][..16];
            assert!(got_attn.iter().zip(&attn).all(|(a, b)| (a - b).abs() < 1e-12));
        }
        for row in out[1].data().chunks(4) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&a| a >= 0.0));
        }
    }
}

#[test]
fn sab_dropout_is_inactive_at_inference() {
    let x = random(&[1, 4, 4, 3], &mut rng(9));
    let mut store = ParamStore::new();
    let with = run(&mut store, Mode::Infer, std::slice::from_ref(&x), |cx, v| Ok(vec![sab(cx, "s", v[0], &sab_config(0.3))?.out]));
    let without = run(&mut store, Mode::Infer, &[x], |cx, v| Ok(vec![sab(cx, "s", v[0], &sab_config(0.0))?.out]));
    assert_eq!(with, without);
}

#[test]
fn sab_rejects_nonpositive_temperature() {
    let cfg = SabConfig { temperature: Some(0.0), ..Default::default() };
    let mut store = ParamStore::<f64>::new();
    let mut tape = lssf_tensor::Tape::new();
    let mut cx = lssf_core::context::Cx::bind(&mut tape, &mut store, Mode::Infer, false, 0);
    let x = cx.input(Tensor::zeros([1, 2, 2, 2]));
    assert!(sab(&mut cx, "s", x, &cfg).is_err());
}

#[test]
fn sab_identity_projections_match_projection_free_path() {
    let cfg = SabConfig { projections: true, dropout: 0.0, ..Default::default() };
    let mut store = init_store(0, |b| attention::init_sab(b, "s", 3, &cfg));
    for w in ["s.wq", "s.wk", "s.wv"] {
        *store.get_mut(w).unwrap() = attention::identity(3);
    }
    let x = random(&[1, 2, 2, 3], &mut rng(4));
    let a = run(&mut store, Mode::Infer, std::slice::from_ref(&x), |cx, v| Ok(vec![sab(cx, "s", v[0], &cfg)?.out]));
    let b = run(&mut store, Mode::Infer, &[x], |cx, v| Ok(vec![sab(cx, "s", v[0], &sab_config(0.0))?.out]));
    assert_close(&a[0], &b[0], 1e-14, "projections");
}

fn gsa_store(c: usize, side: usize) -> ParamStore<f64> {
    init_store(0, |b| attention::init_gsa(b, "g", c, side, &GsaConfig::default()))
}

/// Spatial attention on one sample `[HW, C]`.
fn gsa_oracle(x: &[f64], hw: usize, c: usize, store: &ParamStore<f64>) -> (Vec<f64>, Vec<f64>) {
    let w = |n: &str| store.get(n).unwrap().data().to_vec();
    let cq = store.get("g.query.kernel").unwrap().shape()[3];
    let q = matmul(x, &w("g.query.kernel"), hw, c, cq);
    let k = matmul(x, &w("g.key.kernel"), hw, c, cq);
    let mut energy = matmul(&q, &transpose(&k, hw, cq), hw, cq, hw);
    softmax_rows(&mut energy, hw);
    let v = matmul(x, &w("g.value.kernel"), hw, c, c);
    let attended = matmul(&transpose(&v, hw, c), &energy, c, hw, hw);
    let mixed = matmul(&attended, &w("g.mix"), c, hw, hw);
    let out = transpose(&mixed, c, hw).iter().zip(x).map(|(a, b)| a + b).collect();
    (out, energy)
}

#[test]
fn gsa_hand_set_matches_step_oracle() {
    let mut store = gsa_store(2, 2);
    *store.get_mut("g.query.kernel").unwrap() = Tensor::new(vec![1, 1, 2, 1], vec![1.0, -0.5]).unwrap();
    *store.get_mut("g.key.kernel").unwrap() = Tensor::new(vec![1, 1, 2, 1], vec![0.25, 2.0]).unwrap();
    *store.get_mut("g.value.kernel").unwrap() =
        Tensor::new(vec![1, 1, 2, 2], vec![1.0, 0.5, -1.0, 2.0]).unwrap();
    *store.get_mut("g.mix").unwrap() = Tensor::from_fn([4, 4], |i| [0.5, -0.25, 1.0, 0.1][i % 4] * (1 + i / 4) as f64);
    let x = Tensor::new(vec![1, 2, 2, 2], vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.5, 0.25, -0.75]).unwrap();
    let (want, attn) = gsa_oracle(x.data(), 4, 2, &store);
    let out = run(&mut store, Mode::Infer, &[x], |cx, v| {
        let a = gsa(cx, "g", v[0])?;
        Ok(vec![a.out, a.attention])
    });
    assert_close(&out[0], &Tensor::new(vec![1, 2, 2, 2], want).unwrap(), 1e-12, "gsa");
    assert_close(&out[1], &Tensor::new(vec![1, 4, 4], attn).unwrap(), 1e-12, "gsa attention");
}

#[test]
fn gsa_random_matches_oracle_and_rows_normalize() {
    for seed in 0..5 {
        let mut store = random_store(seed, |b| attention::init_gsa(b, "g", 4, 3, &GsaConfig::default()));
        let x = random(&[2, 3, 3, 4], &mut rng(seed + 40));
        let out = run(&mut store, Mode::Infer, std::slice::from_ref(&x), |cx, v| {
            let a = gsa(cx, "g", v[0])?;
            Ok(vec![a.out, a.attention])
        });
        for (n, sample) in x.data().chunks(36).enumerate() {
            let (want, _) = gsa_oracle(sample, 9, 4, &store);
            let got = &out[0].data()[n * 36..][..36];
            assert!(got.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-12), "seed {seed}");
        }
        for row in out[1].data().chunks(9) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn gsa_with_zero_value_is_identity() {
    let mut store = random_store(3, |b| attention::init_gsa(b, "g", 4, 4, &GsaConfig::default()));
    store.get_mut("g.value.kernel").unwrap().data_mut().fill(0.0);
    let x = random(&[2, 4, 4, 4], &mut rng(3));
    let out = run(&mut store, Mode::Infer, std::slice::from_ref(&x), |cx, v| Ok(vec![gsa(cx, "g", v[0])?.out]));
    assert_eq!(out[0], x);
}

#[test]
fn gsa_rejects_indivisible_factor() {
    let cfg = GsaConfig { factor: 3, ..Default::default() };
    let mut store = ParamStore::new();
    let mut init = lssf_core::params::Initializer::new(rng(0));
    let mut b = lssf_core::blocks::Builder::new(&mut store, &mut init);
    assert!(attention::init_gsa(&mut b, "g", 4, 2, &cfg).is_err());
}

fn bottleneck_config(width: usize, input_size: usize) -> NetworkConfig {
    NetworkConfig {
        input_size,
        widths: [4, 8, 12, width],
        ..Default::default()
    }
}

#[test]
fn bottleneck_shape_contract() {
    let cfg = bottleneck_config(96, 256);
    let mut store = init_store(0, |b| attention::init_bottleneck(b, "bn", &cfg));
    let x = random(&[1, 16, 16, 96], &mut rng(0));
    let out = run(&mut store, Mode::Infer, &[x], |cx, v| {
        let t = bottleneck(cx, "bn", v[0], &cfg)?;
        Ok(vec![t.shuffled, t.out])
    });
    assert_eq!(out[0].shape(), &[1, 16, 16, 192]);
    assert_eq!(out[1].shape(), &[1, 16, 16, 96]);
}

#[test]
fn bottleneck_with_passthrough_gsa_depends_on_sab_alone() {
    let cfg = bottleneck_config(4, 32);
    let mut store = random_store(8, |b| attention::init_bottleneck(b, "bn", &cfg));
    store.get_mut("bn.gsa.value.kernel").unwrap().data_mut().fill(0.0);
    let x = random(&[1, 2, 2, 4], &mut rng(8));

    let (sab_out, _) = sab_oracle(x.data(), 4, 4, 4.0);
    let cat: Vec<f64> = x.data().chunks(4).zip(sab_out.chunks(4)).flat_map(|(a, b)| a.iter().chain(b).copied()).collect();
    let perm = shuffle_oracle(8, 2);
    let shuffled: Vec<f64> = cat.chunks(8).flat_map(|row| perm.iter().map(move |&p| row[p])).collect();
    let shuffled = Tensor::new(vec![1, 2, 2, 8], shuffled).unwrap();
    let want = oracle::conv(&shuffled, store.get("bn.fuse.kernel").unwrap(), Some(store.get("bn.fuse.bias").unwrap()));

    let first = run(&mut store, Mode::Infer, std::slice::from_ref(&x), |cx, v| Ok(vec![bottleneck(cx, "bn", v[0], &cfg)?.out]));
    assert_close(&first[0], &want, 1e-12, "bottleneck");

    for name in ["bn.gsa.query.kernel", "bn.gsa.key.kernel", "bn.gsa.mix"] {
        store.get_mut(name).unwrap().data_mut().iter_mut().for_each(|v| *v = -3.0 * *v + 0.7);
    }
    let second = run(&mut store, Mode::Infer, &[x], |cx, v| Ok(vec![bottleneck(cx, "bn", v[0], &cfg)?.out]));
    assert_eq!(first, second);
}
