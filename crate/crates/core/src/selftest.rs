//! Built-in property suites: finite-difference gradients for every block,
//! the channel-shuffle index oracle, a brute-force metrics counter, and the
//! structural identities of the attention and skip blocks.

use std::time::Instant;

use lssf_tensor::gradcheck::{check_gradients, GradCheckOptions, GradCheckReport};
use lssf_tensor::{Mode, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::attention::{self, bottleneck, channel_shuffle, gsa, sab, shuffle_permutation};
use crate::blocks::{self, conv_unit, decoder_block, encoder_block, output_head, Builder};
use crate::cfma::{self, cfma, fmb};
use crate::config::{CfmaConfig, GsaConfig, NetworkConfig, SabConfig};
use crate::context::Cx;
use crate::error::Result;
use crate::gradcheck::check_block;
use crate::loss::{bce_loss, combined_loss, jaccard_loss, LossConfig};
use crate::metrics::{confusion, scores};
use crate::network::{forward, init_params};
use crate::params::{Initializer, ParamStore};

pub const BLOCK_TOLERANCE: f64 = 1e-6;
pub const NETWORK_TOLERANCE: f64 = 1e-4;

/// Outcome of one named check.
#[derive(Clone, Debug, Serialize)]
pub struct CaseResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CaseResult {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteResult {
    pub suite: &'static str,
    pub cases: Vec<CaseResult>,
    pub seconds: f64,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }
}

fn timed(suite: &'static str, f: impl FnOnce() -> Vec<CaseResult>) -> SuiteResult {
    let start = Instant::now();
    let cases = f();
    SuiteResult {
        suite,
        cases,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Every suite in turn.
pub fn run_all(instances: u64) -> Vec<SuiteResult> {
    vec![
        gradient_suite(instances),
        permutation_suite(),
        metrics_suite(1000, 0),
        structural_suite(),
    ]
}

type BuildFn = fn(&mut Builder) -> Result<()>;
type BlockFn = fn(&mut Cx<f64>, &[Var]) -> Result<Var>;

struct BlockCase {
    name: &'static str,
    build: BuildFn,
    inputs: &'static [&'static [usize]],
    mode: Mode,
    block: BlockFn,
}

fn bottleneck_config() -> NetworkConfig {
    NetworkConfig {
        input_size: 32,
        widths: [2, 2, 2, 4],
        ..Default::default()
    }
}

fn sab_projected() -> SabConfig {
    SabConfig {
        projections: true,
        ..Default::default()
    }
}

fn block_cases() -> Vec<BlockCase> {
    vec![
        BlockCase {
            name: "conv_unit/train",
            build: |b| b.conv_bn("u", 3, 3, 4),
            inputs: &[&[2, 5, 5, 3]],
            mode: Mode::Train,
            block: |cx, v| conv_unit(cx, "u", v[0]),
        },
        BlockCase {
            name: "conv_unit/infer",
            build: |b| b.conv_bn("u", 3, 3, 4),
            inputs: &[&[2, 5, 5, 3]],
            mode: Mode::Infer,
            block: |cx, v| conv_unit(cx, "u", v[0]),
        },
        BlockCase {
            name: "initial_stem",
            build: |b| blocks::init_stem(b, "s", 3, 3),
            inputs: &[&[2, 4, 4, 3]],
            mode: Mode::Train,
            block: |cx, v| {
                let (s0, e0) = blocks::initial_stem(cx, "s", v[0])?;
                let pooled = cx.tape.maxpool2(s0)?;
                Ok(cx.tape.add(pooled, e0)?)
            },
        },
        BlockCase {
            name: "encoder_block",
            build: |b| blocks::init_encoder(b, "e", 3, 4),
            inputs: &[&[2, 4, 4, 3]],
            mode: Mode::Train,
            block: |cx, v| Ok(encoder_block(cx, "e", v[0])?.1),
        },
        BlockCase {
            name: "decoder_block",
            build: |b| blocks::init_decoder(b, "d", 4, 3),
            inputs: &[&[2, 2, 2, 4], &[2, 4, 4, 3]],
            mode: Mode::Train,
            block: |cx, v| decoder_block(cx, "d", v[0], v[1]),
        },
        BlockCase {
            name: "output_head",
            build: |b| blocks::init_head(b, "h", 3),
            inputs: &[&[2, 3, 3, 3]],
            mode: Mode::Train,
            block: |cx, v| output_head(cx, "h", v[0]),
        },
        BlockCase {
            name: "sab",
            build: |_| Ok(()),
            inputs: &[&[2, 3, 3, 4]],
            mode: Mode::Train,
            block: |cx, v| Ok(sab(cx, "a", v[0], &SabConfig::default())?.out),
        },
        BlockCase {
            name: "sab/projections",
            build: |b| attention::init_sab(b, "a", 3, &sab_projected()),
            inputs: &[&[2, 2, 3, 3]],
            mode: Mode::Train,
            block: |cx, v| Ok(sab(cx, "a", v[0], &sab_projected())?.out),
        },
        BlockCase {
            name: "gsa",
            build: |b| attention::init_gsa(b, "g", 4, 3, &GsaConfig::default()),
            inputs: &[&[2, 3, 3, 4]],
            mode: Mode::Train,
            block: |cx, v| Ok(gsa(cx, "g", v[0])?.out),
        },
        BlockCase {
            name: "channel_shuffle",
            build: |b| b.conv("f", 1, 6, 3, true),
            inputs: &[&[2, 2, 2, 6]],
            mode: Mode::Train,
            block: |cx, v| {
                let s = channel_shuffle(cx, v[0], 3)?;
                cx.conv("f", s)
            },
        },
        BlockCase {
            name: "bottleneck",
            build: |b| attention::init_bottleneck(b, "b", &bottleneck_config()),
            inputs: &[&[2, 2, 2, 4]],
            mode: Mode::Train,
            block: |cx, v| Ok(bottleneck(cx, "b", v[0], &bottleneck_config())?.out),
        },
        BlockCase {
            name: "fmb",
            build: |b| cfma::init_fmb(b, "f", 3, 2),
            inputs: &[&[2, 5, 5, 3]],
            mode: Mode::Train,
            block: |cx, v| fmb(cx, "f", v[0]),
        },
        BlockCase {
            name: "cfma",
            build: |b| cfma::init_cfma(b, "c", 3, &CfmaConfig::default()),
            inputs: &[&[2, 4, 4, 3]],
            mode: Mode::Train,
            block: |cx, v| cfma(cx, "c", v[0]),
        },
    ]
}

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(lo..hi))
}

/// Overwrite every parameter with random values away from special points:
/// gammas in [0.5, 1.5], everything else in [-0.6, 0.6], running variances
/// positive.
pub fn randomize(store: &mut ParamStore<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (name, t) in store.iter_mut() {
        let (lo, hi) = if name.ends_with(".gamma") { (0.5, 1.5) } else { (-0.6, 0.6) };
        *t = uniform(t.shape(), &mut rng, lo, hi);
    }
    for b in store.bn.values_mut() {
        b.mean.iter_mut().for_each(|v| *v = rng.gen_range(-0.3..0.3));
        b.var.iter_mut().for_each(|v| *v = rng.gen_range(0.5..2.0));
    }
}

fn build_store(build: BuildFn, seed: u64) -> Result<ParamStore<f64>> {
    let mut store = ParamStore::new();
    let mut init = Initializer::new(ChaCha8Rng::seed_from_u64(seed));
    build(&mut Builder::new(&mut store, &mut init))?;
    Ok(store.cast())
}

fn describe(r: &GradCheckReport) -> String {
    format!(
        "max rel err {:.2e}, {} coords checked, {} skipped at kinks",
        r.max_rel_err, r.checked, r.skipped
    )
}

fn grad_case(name: String, reports: Result<Vec<GradCheckReport>>, tol: f64) -> CaseResult {
    match reports {
        Ok(reports) => {
            let mut all = GradCheckReport::default();
            reports.iter().for_each(|r| all.merge(r));
            let ok = all.checked > 0 && all.max_rel_err < tol && reports.iter().all(|r| r.checked > 0);
            CaseResult::new(name, ok, format!("{} instances, {}", reports.len(), describe(&all)))
        }
        Err(e) => CaseResult::new(name, false, e.to_string()),
    }
}

fn check_case(case: &BlockCase, instances: u64) -> CaseResult {
    let reports = (0..instances)
        .map(|seed| {
            let mut store = build_store(case.build, seed)?;
            randomize(&mut store, seed ^ 0xb10c);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1);
            let inputs: Vec<Tensor<f64>> = case.inputs.iter().map(|s| uniform(s, &mut rng, -1.0, 1.0)).collect();
            let opts = GradCheckOptions {
                seed,
                ..Default::default()
            };
            check_block(&store, &inputs, case.mode, opts, case.block)
        })
        .collect();
    grad_case(case.name.to_string(), reports, BLOCK_TOLERANCE)
}

fn loss_inputs(seed: u64) -> [Tensor<f64>; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = uniform(&[2, 4, 4, 1], &mut rng, 0.05, 0.95);
    let g = Tensor::from_fn([2, 4, 4, 1], |_| if rng.gen_bool(0.4) { 1.0 } else { 0.0 });
    [p, g]
}

fn loss_case(name: &str, instances: u64, f: fn(&mut Tape<f64>, Var, Var, &LossConfig) -> Result<Var>) -> CaseResult {
    let cfg = LossConfig::default();
    let reports = (0..instances)
        .map(|seed| {
            let opts = GradCheckOptions {
                seed,
                ..Default::default()
            };
            Ok(check_gradients(
                &loss_inputs(seed),
                |t, v| f(t, v[0], v[1], &cfg).map_err(to_tensor_error),
                opts,
            )?)
        })
        .collect();
    grad_case(name.to_string(), reports, BLOCK_TOLERANCE)
}

fn to_tensor_error(e: crate::LssfError) -> lssf_tensor::TensorError {
    match e {
        crate::LssfError::Tensor(t) => t,
        other => lssf_tensor::TensorError::Invalid {
            op: "loss",
            detail: other.to_string(),
        },
    }
}

/// Parameter coordinates probed per registry tensor in the end-to-end check.
const NETWORK_COORDS_PER_TENSOR: usize = 2;

/// End-to-end check of the tiny network at 16x16 in train mode, through the
/// combined loss, for one instance. Initial values are kept for kernels (so
/// activations stay well scaled) and randomized for every vector parameter.
pub fn network_gradient_check(seed: u64) -> Result<GradCheckReport> {
    let mut config = NetworkConfig::tiny(16);
    config.seed = seed;
    let mut store = init_params(&config)?.cast::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xe2e);
    for (name, t) in store.iter_mut() {
        if name.ends_with(".gamma") {
            *t = uniform(t.shape(), &mut rng, 0.8, 1.2);
        } else if t.rank() == 1 {
            *t = uniform(t.shape(), &mut rng, -0.1, 0.1);
        }
    }
    let x = uniform(&[2, 16, 16, 3], &mut rng, 0.0, 1.0);
    let g = Tensor::from_fn([2, 16, 16, 1], |i| if (i / 16 + i % 16) % 3 == 0 { 1.0 } else { 0.0 });
    let loss_cfg = LossConfig::default();
    let opts = GradCheckOptions {
        seed,
        max_coords_per_input: NETWORK_COORDS_PER_TENSOR,
        ..Default::default()
    };
    check_block(&store, &[x, g], Mode::Train, opts, |cx, v| {
        let p = forward(cx, v[0], &config)?;
        Ok(combined_loss(cx.tape, p, v[1], &loss_cfg)?.total)
    })
}

/// Finite-difference checks of every block (tolerance 1e-6), the losses,
/// and the tiny network end to end (tolerance 1e-4), each on `instances`
/// random instances.
pub fn gradient_suite(instances: u64) -> SuiteResult {
    timed("gradients", || {
        let mut cases: Vec<CaseResult> = block_cases().iter().map(|c| check_case(c, instances)).collect();
        cases.push(loss_case("bce_loss", instances, bce_loss));
        cases.push(loss_case("jaccard_loss", instances, jaccard_loss));
        cases.push(loss_case("combined_loss", instances, |t, p, g, c| Ok(combined_loss(t, p, g, c)?.total)));
        let reports = (0..instances).map(network_gradient_check).collect();
        cases.push(grad_case("network/tiny16".into(), reports, NETWORK_TOLERANCE));
        cases
    })
}

/// Shuffle permutation against reshape -> transpose -> flatten of an index
/// grid, and shuffle followed by its inverse on real tensors.
pub fn permutation_suite() -> SuiteResult {
    timed("permutation", || {
        let mut bad = Vec::new();
        let mut pairs = 0;
        for n in 1..=64usize {
            for g in (1..=n).filter(|g| n % g == 0) {
                pairs += 1;
                let cols = n / g;
                let grid: Vec<Vec<usize>> = (0..g).map(|r| (0..cols).map(|c| r * cols + c).collect()).collect();
                let want: Vec<usize> = (0..cols).flat_map(|c| grid.iter().map(move |row| row[c])).collect();
                let ok = shuffle_permutation(n, g).map(|p| p == want).unwrap_or(false) && inverse_restores(n, g);
                if !ok {
                    bad.push(format!("n={n} g={g}"));
                }
            }
        }
        vec![CaseResult::new(
            "shuffle index oracle and inverse",
            bad.is_empty(),
            if bad.is_empty() { format!("{pairs} (n, g) pairs") } else { bad.join(", ") },
        )]
    })
}

fn inverse_restores(n: usize, g: usize) -> bool {
    let x = Tensor::<f64>::from_fn([1, 1, 2, n], |i| i as f64 * 0.5 - 3.0);
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let y = shuffle_permutation(n, g)
        .and_then(|p| Ok(tape.permute_last(v, &p)?))
        .and_then(|y| Ok(tape.permute_last(y, &shuffle_permutation(n, n / g)?)?));
    matches!(y, Ok(y) if *tape.value(y) == x)
}

/// `pairs` random 16x16 mask pairs: confusion counts against a per-pixel
/// loop, and the Dice-Jaccard identity.
pub fn metrics_suite(pairs: usize, seed: u64) -> SuiteResult {
    timed("metrics", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut count_bad, mut worst_identity) = (0, 0.0f64);
        for _ in 0..pairs {
            let density = rng.gen_range(0.0..1.0);
            let pred: Vec<u8> = (0..256).map(|_| u8::from(rng.gen_bool(density))).collect();
            let gt: Vec<u8> = (0..256).map(|_| u8::from(rng.gen_bool(density))).collect();
            let mut want = [0u64; 4];
            for (p, g) in pred.iter().zip(&gt) {
                want[usize::from(*p) * 2 + usize::from(*g)] += 1;
            }
            let Ok(c) = confusion(&pred, &gt) else {
                count_bad += 1;
                continue;
            };
            if [c.tn, c.fn_, c.fp, c.tp] != want {
                count_bad += 1;
            }
            if c.tp + c.fp + c.fn_ > 0 {
                let s = scores(&c);
                worst_identity = worst_identity.max((s.dice - 2.0 * s.jaccard / (1.0 + s.jaccard)).abs());
            }
        }
        vec![
            CaseResult::new(
                "confusion vs per-pixel count",
                count_bad == 0,
                format!("{count_bad} of {pairs} pairs differ"),
            ),
            CaseResult::new(
                "dice = 2j/(1+j)",
                worst_identity <= 1e-12,
                format!("max deviation {worst_identity:.2e}"),
            ),
        ]
    })
}

fn zeroed(build: BuildFn) -> Result<ParamStore<f64>> {
    let mut store = build_store(build, 0)?;
    for (_, t) in store.iter_mut() {
        t.data_mut().fill(0.0);
    }
    Ok(store)
}

fn structural_cases() -> Result<Vec<CaseResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut out = Vec::new();

    let mut store = zeroed(|b| cfma::init_cfma(b, "c", 6, &CfmaConfig::default()))?;
    let x = uniform(&[2, 8, 8, 6], &mut rng, -2.0, 2.0);
    let mut tape = Tape::new();
    let mut cx = Cx::bind(&mut tape, &mut store, Mode::Infer, false, 0);
    let xv = cx.input(x.clone());
    let y = cfma(&mut cx, "c", xv)?;
    out.push(CaseResult::new("cfma zero weights = identity", *cx.value(y) == x, "bit-exact comparison"));

    let mut store = build_store(|b| attention::init_gsa(b, "g", 6, 4, &GsaConfig::default()), 1)?;
    randomize(&mut store, 1);
    store.get_mut("g.value.kernel")?.data_mut().fill(0.0);
    let x = uniform(&[2, 4, 4, 6], &mut rng, -2.0, 2.0);
    let mut tape = Tape::new();
    let mut cx = Cx::bind(&mut tape, &mut store, Mode::Infer, false, 0);
    let xv = cx.input(x.clone());
    let g = gsa(&mut cx, "g", xv)?;
    out.push(CaseResult::new("gsa zero value = identity", *cx.value(g.out) == x, "bit-exact comparison"));

    let mut worst = 0.0f64;
    let mut negative = false;
    for mode in [Mode::Infer, Mode::Train] {
        let mut store = build_store(|b| attention::init_bottleneck(b, "b", &bottleneck_config()), 2)?;
        randomize(&mut store, 2);
        let x = uniform(&[3, 2, 2, 4], &mut rng, -3.0, 3.0);
        let mut tape = Tape::new();
        let mut cx = Cx::bind(&mut tape, &mut store, mode, false, 3);
        let xv = cx.input(x);
        let t = bottleneck(&mut cx, "b", xv, &bottleneck_config())?;
        for a in [t.gsa.attention, t.sab.attention] {
            let v = cx.value(a);
            let cols = *v.shape().last().unwrap_or(&1);
            negative |= v.data().iter().any(|&p| p < 0.0);
            for row in v.data().chunks(cols) {
                worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    out.push(CaseResult::new(
        "attention rows sum to 1",
        worst <= 1e-6 && !negative,
        format!("max deviation {worst:.2e}"),
    ));
    Ok(out)
}

/// Zero-weight identities of the skip block and spatial attention, and
/// normalization of both attention maps.
pub fn structural_suite() -> SuiteResult {
    timed("structural", || {
        structural_cases().unwrap_or_else(|e| vec![CaseResult::new("structural", false, e.to_string())])
    })
}
