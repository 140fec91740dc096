//! Finite-difference checks of whole blocks: every parameter of a registry
//! and every input are perturbed, with the block run through a [`Cx`].

use indexmap::IndexMap;
use lssf_tensor::gradcheck::{check_gradients, GradCheckOptions, GradCheckReport};
use lssf_tensor::{Mode, Tape, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::context::Cx;
use crate::error::{LssfError, Result};
use crate::params::ParamStore;

/// Reduce `y` to a scalar with fixed pseudo-random weights in [-1, 1];
/// scalars pass through.
pub fn weighted_sum(tape: &mut Tape<f64>, y: Var, seed: u64) -> lssf_tensor::Result<Var> {
    if tape.value(y).numel() == 1 {
        return Ok(y);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Tensor::from_fn(tape.shape(y).to_vec(), |_| rng.gen_range(-1.0..1.0));
    let w = tape.constant(w);
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

fn to_tensor_err(e: LssfError) -> TensorError {
    match e {
        LssfError::Tensor(t) => t,
        other => TensorError::Invalid {
            op: "block",
            detail: other.to_string(),
        },
    }
}

/// Check `block` with respect to every parameter in `store` and every
/// tensor in `inputs`. Running statistics are restored before each
/// evaluation, and the dropout stream is reseeded, so repeated evaluations
/// compute the same function.
pub fn check_block<F>(
    store: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    mode: Mode,
    opts: GradCheckOptions,
    block: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Cx<f64>, &[Var]) -> Result<Var>,
{
    let names: Vec<String> = store.names().map(str::to_string).collect();
    let mut all: Vec<Tensor<f64>> = store.iter().map(|(_, t)| t.clone()).collect();
    all.extend(inputs.iter().cloned());
    let np = names.len();
    let report = check_gradients(
        &all,
        |tape, vars| {
            let bound: IndexMap<String, Var> = names.iter().cloned().zip(vars[..np].iter().copied()).collect();
            let mut bn = store.bn.clone();
            let y = {
                let mut cx = Cx::from_vars(tape, bound, &mut bn, mode, opts.seed);
                block(&mut cx, &vars[np..]).map_err(to_tensor_err)?
            };
            weighted_sum(tape, y, opts.seed ^ 0x5eed)
        },
        opts,
    )?;
    Ok(report)
}
