#![allow(dead_code)]

pub mod oracle;

use lssf_core::blocks::Builder;
use lssf_core::context::Cx;
use lssf_core::params::{Initializer, ParamStore};
use lssf_core::Result;
use lssf_tensor::{Mode, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

/// Registry built by `build`, then every tensor overwritten with random
/// values so no parameter sits at a special point (gammas and running
/// variances stay positive).
pub fn random_store(seed: u64, build: impl FnOnce(&mut Builder) -> Result<()>) -> ParamStore<f64> {
    let mut store = ParamStore::new();
    let mut init = Initializer::new(rng(seed));
    build(&mut Builder::new(&mut store, &mut init)).unwrap();
    let mut store = store.cast::<f64>();
    let mut r = rng(seed ^ 0xabcdef);
    for (name, t) in store.iter_mut() {
        let positive = name.ends_with(".gamma");
        for v in t.data_mut() {
            *v = if positive { r.gen_range(0.5..1.5) } else { r.gen_range(-0.6..0.6) };
        }
    }
    let prefixes: Vec<String> = store.bn_iter().map(|(k, _)| k.to_string()).collect();
    for p in prefixes {
        let b = store.bn_mut(&p).unwrap();
        b.mean.iter_mut().for_each(|v| *v = r.gen_range(-0.3..0.3));
        b.var.iter_mut().for_each(|v| *v = r.gen_range(0.5..2.0));
    }
    store
}

/// Registry as initialized (He-normal kernels, zero biases, unit BN).
pub fn init_store(seed: u64, build: impl FnOnce(&mut Builder) -> Result<()>) -> ParamStore<f64> {
    let mut store = ParamStore::new();
    let mut init = Initializer::new(rng(seed));
    build(&mut Builder::new(&mut store, &mut init)).unwrap();
    store.cast()
}

pub fn assert_close(a: &Tensor<f64>, b: &Tensor<f64>, tol: f64, what: &str) {
    assert_eq!(a.shape(), b.shape(), "{what}: shapes");
    let d = a.max_abs_diff(b);
    assert!(d <= tol, "{what}: max abs diff {d:e} > {tol:e}");
}

/// Run `f` over `inputs` bound as constants and return the values of the
/// vars it yields.
pub fn run(
    store: &mut ParamStore<f64>,
    mode: Mode,
    inputs: &[Tensor<f64>],
    f: impl FnOnce(&mut Cx<f64>, &[Var]) -> Result<Vec<Var>>,
) -> Vec<Tensor<f64>> {
    let mut tape = Tape::new();
    let mut cx = Cx::bind(&mut tape, store, mode, false, 0);
    let vars: Vec<Var> = inputs.iter().map(|t| cx.input(t.clone())).collect();
    let outs = f(&mut cx, &vars).unwrap();
    outs.into_iter().map(|v| cx.value(v).clone()).collect()
}
