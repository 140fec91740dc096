//! Finite-difference checks of every primitive's backward rule, in f64.

use lssf_tensor::gradcheck::{check_gradients, GradCheckOptions};
use lssf_tensor::{Mode, Padding, Result, RunningStats, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-6;
const INSTANCES: u64 = 5;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

/// Reduce `y` to a scalar with fixed random weights so every output element
/// contributes a distinct gradient.
fn weighted_sum(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    let w = random(tape.shape(y), &mut rng);
    let w = tape.constant(w);
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

fn check<F>(name: &str, shapes: &[&[usize]], f: F)
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs: Vec<_> = shapes.iter().map(|s| random(s, &mut rng)).collect();
        let opts = GradCheckOptions {
            seed,
            ..Default::default()
        };
        let report = check_gradients(&inputs, |t, v| f(t, v).and_then(|y| weighted_sum(t, y, seed)), opts)
            .unwrap();
        assert!(report.checked > 0, "{name}: nothing checked");
        assert!(
            report.max_rel_err < TOL,
            "{name} seed {seed}: max error {:e} at {:?}",
            report.max_rel_err,
            report.worst
        );
    }
}

#[test]
fn conv2d_same_and_strided() {
    check("conv2d", &[&[2, 6, 6, 3], &[3, 3, 3, 4], &[4]], |t, v| {
        t.conv2d(v[0], v[1], Some(v[2]), 1, Padding::Same)
    });
    check("conv2d/stride2", &[&[1, 5, 6, 2], &[3, 3, 2, 3]], |t, v| {
        t.conv2d(v[0], v[1], None, 2, Padding::Same)
    });
    check("conv2d/1x1", &[&[2, 4, 4, 3], &[1, 1, 3, 5], &[5]], |t, v| {
        t.conv2d(v[0], v[1], Some(v[2]), 1, Padding::Same)
    });
}

#[test]
fn depthwise() {
    check("depthwise", &[&[2, 5, 5, 3], &[5, 5, 3]], |t, v| t.depthwise_conv2d(v[0], v[1]));
}

#[test]
fn batch_norm_both_modes() {
    for mode in [Mode::Train, Mode::Infer] {
        check("batch_norm", &[&[2, 4, 4, 3], &[3], &[3]], move |t, v| {
            let (mut m, mut var) = (vec![0.1, -0.2, 0.3], vec![0.5, 1.5, 2.0]);
            let stats = RunningStats {
                mean: &mut m,
                var: &mut var,
                momentum: 0.9,
            };
            t.batch_norm(v[0], v[1], v[2], mode, stats, 1e-5)
        });
    }
}

#[test]
fn layer_norm() {
    check("layer_norm", &[&[1, 3, 3, 5], &[5], &[5]], |t, v| t.layer_norm(v[0], v[1], v[2], 1e-6));
}

#[test]
fn activations() {
    check("relu", &[&[2, 3, 3, 2]], |t, v| t.relu(v[0]));
    check("gelu", &[&[2, 3, 3, 2]], |t, v| t.gelu(v[0]));
    check("sigmoid", &[&[2, 3, 3, 2]], |t, v| t.sigmoid(v[0]));
}

#[test]
fn pooling_and_resampling() {
    check("maxpool2", &[&[2, 4, 6, 3]], |t, v| t.maxpool2(v[0]));
    check("upsample2", &[&[1, 3, 2, 2]], |t, v| t.upsample2(v[0]));
    check("global_avg_pool", &[&[2, 3, 4, 3]], |t, v| {
        let p = t.global_avg_pool(v[0])?;
        t.broadcast_spatial(p, 2, 3)
    });
}

#[test]
fn linear_algebra() {
    check("matmul/batched", &[&[2, 3, 4], &[2, 4, 5]], |t, v| t.matmul(v[0], v[1]));
    check("matmul/shared-rhs", &[&[3, 2, 4], &[4, 3]], |t, v| t.matmul(v[0], v[1]));
    check("matmul/shared-lhs", &[&[2, 4], &[3, 4, 3]], |t, v| t.matmul(v[0], v[1]));
    check("transpose", &[&[2, 3, 4]], |t, v| t.transpose(v[0]));
    check("softmax", &[&[3, 2, 6]], |t, v| {
        let s = t.scale(v[0], 3.0)?;
        t.softmax(s)
    });
}

#[test]
fn structural() {
    check("concat+slice", &[&[1, 2, 2, 3], &[1, 2, 2, 2]], |t, v| {
        let c = t.concat(v[0], v[1])?;
        let s = t.slice_last(c, 1, 3)?;
        let e = t.slice_last(c, 4, 1)?;
        let e = t.expand_last(e, 3)?;
        t.mul(s, e)
    });
    check("permute_last", &[&[1, 2, 2, 6]], |t, v| t.permute_last(v[0], &[3, 0, 4, 1, 5, 2]));
    check("reshape", &[&[1, 2, 2, 6]], |t, v| t.reshape(v[0], &[4, 6]));
    check("arith", &[&[2, 3], &[2, 3]], |t, v| {
        let a = t.add(v[0], v[1])?;
        let s = t.sub(a, v[1])?;
        let m = t.mul(s, v[1])?;
        t.scale(m, -0.5)
    });
}

#[test]
fn dropout_train_mask_is_fixed_per_seed() {
    check("dropout", &[&[2, 3, 3, 2]], |t, v| {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        t.dropout(v[0], 0.4, Mode::Train, &mut rng)
    });
}

fn probabilities(rng: &mut ChaCha8Rng, n: usize) -> Tensor<f64> {
    Tensor::from_fn([n], |_| rng.gen_range(0.05..0.95))
}

#[test]
fn losses() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = probabilities(&mut rng, 12);
        let g = probabilities(&mut rng, 12).map(|v| if v > 0.5 { 1.0 } else { 0.0 });
        let inputs = [p, g];
        let opts = GradCheckOptions {
            seed,
            ..Default::default()
        };
        let bce = check_gradients(&inputs, |t, v| t.bce(v[0], v[1], 1e-7), opts).unwrap();
        let jac = check_gradients(&inputs, |t, v| t.jaccard(v[0], v[1], 1.0), opts).unwrap();
        assert!(bce.max_rel_err < TOL, "bce {:?}", bce);
        assert!(jac.max_rel_err < TOL, "jaccard {:?}", jac);
    }
}

#[test]
fn mean_reduction() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[3, 4], &mut rng);
        let r = check_gradients(
            &[x],
            |t, v| {
                let sq = t.mul(v[0], v[0])?;
                t.mean(sq)
            },
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(r.max_rel_err < TOL);
    }
}
