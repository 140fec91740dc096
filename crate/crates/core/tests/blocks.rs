mod common;

use common::oracle::{self, Reference};
use common::{assert_close, init_store, random, random_store, rng, run};
use lssf_core::blocks::{self, conv_unit, decoder_block, encoder_block, initial_stem, output_head};
use lssf_core::context::Cx;
use lssf_tensor::{Mode, Tape, Tensor};
use proptest::prelude::*;

const TOL: f64 = 1e-6;

#[test]
fn conv_unit_matches_composed_oracle() {
    for mode in [Mode::Infer, Mode::Train] {
        for seed in 0..5 {
            let mut store = random_store(seed, |b| b.conv_bn("u", 3, 3, 5));
            let x = random(&[1, 8, 8, 3], &mut rng(seed));
            let want = Reference { store: &store, train: mode.is_train() }.unit("u", &x);
            let got = run(&mut store, mode, &[x], |cx, v| Ok(vec![conv_unit(cx, "u", v[0])?]));
            assert_close(&got[0], &want, TOL, "conv_unit");
        }
    }
}

#[test]
fn conv_unit_zero_input_and_nonnegative() {
    let mut store = init_store(1, |b| b.conv_bn("u", 3, 3, 4));
    let zero = Tensor::zeros([1, 6, 6, 3]);
    let out = run(&mut store, Mode::Infer, &[zero], |cx, v| Ok(vec![conv_unit(cx, "u", v[0])?]));
    assert!(out[0].data().iter().all(|&v| v == 0.0));
}

#[test]
fn stem_shapes_and_zero_input() {
    let mut store = init_store(2, |b| blocks::init_stem(b, "stem", 3, 4));
    for s in [64, 256] {
        let x = Tensor::zeros([1, s, s, 3]);
        let out = run(&mut store, Mode::Infer, &[x], |cx, v| {
            let (s0, e0) = initial_stem(cx, "stem", v[0])?;
            Ok(vec![s0, e0])
        });
        assert_eq!(out[0].shape(), &[1, s, s, 4]);
        assert_eq!(out[1].shape(), &[1, s / 2, s / 2, 4]);
        assert!(out[1].data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn stem_rejects_odd_spatial_dims() {
    let mut store = init_store(2, |b| blocks::init_stem(b, "stem", 3, 4));
    let mut tape = Tape::new();
    let mut cx = Cx::bind(&mut tape, &mut store, Mode::Infer, false, 0);
    let x = cx.input(Tensor::zeros([1, 5, 6, 3]));
    assert!(initial_stem(&mut cx, "stem", x).is_err());
}

fn encoder_oracle(r: &Reference, p: &str, e: &Tensor<f64>) -> (Tensor<f64>, Tensor<f64>) {
    let s = r.unit(&format!("{p}.skip"), e);
    let a = r.unit(&format!("{p}.a0"), e);
    let a = r.unit(&format!("{p}.a1"), &a);
    let a = r.conv(&format!("{p}.a2"), &a);
    let b = r.conv_bn(&format!("{p}.b0"), &s);
    let b = r.conv_bn(&format!("{p}.b1"), &b);
    (s.clone(), oracle::maxpool(&oracle::relu(&oracle::add(&a, &b))))
}

#[test]
fn encoder_matches_transcription() {
    for mode in [Mode::Infer, Mode::Train] {
        for seed in 0..5 {
            let mut store = random_store(seed, |b| blocks::init_encoder(b, "enc", 4, 6));
            let x = random(&[1, 8, 8, 4], &mut rng(seed + 10));
            let (ws, we) = encoder_oracle(&Reference { store: &store, train: mode.is_train() }, "enc", &x);
            let got = run(&mut store, mode, &[x], |cx, v| {
                let (s, e) = encoder_block(cx, "enc", v[0])?;
                Ok(vec![s, e])
            });
            assert_close(&got[0], &ws, TOL, "encoder skip");
            assert_close(&got[1], &we, TOL, "encoder out");
        }
    }
}

#[test]
fn encoder_shape_contract() {
    let mut store = init_store(3, |b| blocks::init_encoder(b, "enc", 16, 32));
    let x = random(&[1, 128, 128, 16], &mut rng(3));
    let out = run(&mut store, Mode::Infer, &[x], |cx, v| {
        let (s, e) = encoder_block(cx, "enc", v[0])?;
        Ok(vec![s, e])
    });
    assert_eq!(out[0].shape(), &[1, 128, 128, 32]);
    assert_eq!(out[1].shape(), &[1, 64, 64, 32]);
}

#[test]
fn encoder_zero_input_gives_zero() {
    let mut store = init_store(4, |b| blocks::init_encoder(b, "enc", 4, 8));
    let out = run(&mut store, Mode::Infer, &[Tensor::zeros([1, 8, 8, 4])], |cx, v| {
        let (s, e) = encoder_block(cx, "enc", v[0])?;
        Ok(vec![s, e])
    });
    assert!(out.iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
}

#[test]
fn encoder_without_branch_b_is_main_path_only() {
    let mut store = random_store(5, |b| blocks::init_encoder(b, "enc", 4, 6));
    for name in ["enc.b0.kernel", "enc.b0.bias", "enc.b1.kernel", "enc.b1.bias", "enc.b1.beta"] {
        store.get_mut(name).unwrap().data_mut().fill(0.0);
    }
    // b1's running mean must be zero too for its output to vanish.
    store.bn_mut("enc.b1").unwrap().mean.fill(0.0);
    let x = random(&[1, 8, 8, 4], &mut rng(5));
    let main = run(&mut store, Mode::Infer, std::slice::from_ref(&x), |cx, v| {
        let a = conv_unit(cx, "enc.a0", v[0])?;
        let a = conv_unit(cx, "enc.a1", a)?;
        let a = cx.conv("enc.a2", a)?;
        let a = cx.tape.relu(a)?;
        Ok(vec![cx.tape.maxpool2(a)?])
    });
    let got = run(&mut store, Mode::Infer, &[x], |cx, v| Ok(vec![encoder_block(cx, "enc", v[0])?.1]));
    assert_eq!(got[0], main[0]);
}

fn decoder_oracle(r: &Reference, p: &str, d: &Tensor<f64>, skip: &Tensor<f64>) -> Tensor<f64> {
    let up = oracle::upsample(d);
    let merged = oracle::add(skip, &r.unit(&format!("{p}.fuse"), &up));
    let a = r.unit(&format!("{p}.a0"), &up);
    let a = r.unit(&format!("{p}.a1"), &a);
    let a = r.conv(&format!("{p}.a2"), &a);
    let b = r.conv_bn(&format!("{p}.b0"), &merged);
    let b = r.conv_bn(&format!("{p}.b1"), &b);
    oracle::relu(&oracle::add(&a, &b))
}

#[test]
fn decoder_matches_transcription() {
    for mode in [Mode::Infer, Mode::Train] {
        for seed in 0..5 {
            let mut store = random_store(seed, |b| blocks::init_decoder(b, "dec", 8, 4));
            let mut r = rng(seed + 20);
            let d = random(&[1, 2, 2, 8], &mut r);
            let skip = random(&[1, 4, 4, 4], &mut r);
            let want = decoder_oracle(&Reference { store: &store, train: mode.is_train() }, "dec", &d, &skip);
            let got = run(&mut store, mode, &[d, skip], |cx, v| Ok(vec![decoder_block(cx, "dec", v[0], v[1])?]));
            assert_close(&got[0], &want, TOL, "decoder");
        }
    }
}

#[test]
fn decoder_shape_and_zero() {
    let mut store = init_store(6, |b| blocks::init_decoder(b, "dec", 128, 64));
    let mut r = rng(6);
    let d = random(&[1, 16, 16, 128], &mut r);
    let skip = random(&[1, 32, 32, 64], &mut r);
    let out = run(&mut store, Mode::Infer, &[d, skip], |cx, v| Ok(vec![decoder_block(cx, "dec", v[0], v[1])?]));
    assert_eq!(out[0].shape(), &[1, 32, 32, 64]);

    let mut store = init_store(6, |b| blocks::init_decoder(b, "dec", 8, 4));
    let zeros = [Tensor::zeros([1, 2, 2, 8]), Tensor::zeros([1, 4, 4, 4])];
    let out = run(&mut store, Mode::Infer, &zeros, |cx, v| Ok(vec![decoder_block(cx, "dec", v[0], v[1])?]));
    assert!(out[0].data().iter().all(|&v| v == 0.0));
}

#[test]
fn decoder_rejects_mismatched_skip() {
    let mut store = init_store(6, |b| blocks::init_decoder(b, "dec", 8, 4));
    let mut tape = Tape::new();
    let mut cx = Cx::bind(&mut tape, &mut store, Mode::Infer, false, 0);
    let d = cx.input(Tensor::zeros([1, 2, 2, 8]));
    let skip = cx.input(Tensor::zeros([1, 8, 8, 4]));
    assert!(decoder_block(&mut cx, "dec", d, skip).is_err());
}

#[test]
fn head_matches_oracle_and_range() {
    for seed in 0..5 {
        let mut store = random_store(seed, |b| blocks::init_head(b, "head", 4));
        let x = random(&[2, 4, 4, 4], &mut rng(seed + 30)).map(|v| 4.0 * v);
        let r = Reference { store: &store, train: false };
        let want = oracle::sigmoid(&r.conv("head.out", &r.unit("head.unit", &x)));
        let got = run(&mut store, Mode::Infer, &[x], |cx, v| Ok(vec![output_head(cx, "head", v[0])?]));
        assert_close(&got[0], &want, TOL, "head");
        assert!(got[0].data().iter().all(|&p| p > 0.0 && p < 1.0));
    }
}

#[test]
fn head_with_zero_output_layer_is_half() {
    let mut store = random_store(7, |b| blocks::init_head(b, "head", 4));
    store.get_mut("head.out.kernel").unwrap().data_mut().fill(0.0);
    store.get_mut("head.out.bias").unwrap().data_mut().fill(0.0);
    let x = random(&[1, 4, 4, 4], &mut rng(7));
    let got = run(&mut store, Mode::Infer, &[x], |cx, v| Ok(vec![output_head(cx, "head", v[0])?]));
    assert!(got[0].data().iter().all(|&p| p == 0.5));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn conv_unit_output_is_nonnegative(seed in any::<u64>(), scale in 0.1f64..20.0) {
        let mut store = random_store(seed, |b| b.conv_bn("u", 3, 2, 3));
        let x = random(&[1, 4, 4, 2], &mut rng(seed)).map(|v| v * scale);
        let out = run(&mut store, Mode::Infer, &[x], |cx, v| Ok(vec![conv_unit(cx, "u", v[0])?]));
        prop_assert!(out[0].data().iter().all(|&v| v >= 0.0));
    }
}
