//! Finite-difference gradient checking in `f64`.
//!
//! The numeric side only ever runs forward passes, so it is independent of
//! every backward rule it checks. Derivatives use the five-point central
//! stencil, whose O(h^4) truncation error stays far below the tolerances
//! even where the third derivative is large (log near 0, steep sigmoids).
//! A coordinate is skipped when any probe crosses a kink (ReLU sign flip, max-pool argmax change, clamp edge),
//! since a finite difference across a non-differentiable point does not
//! estimate the derivative.

use rand::rngs::StdRng;
use rand::SeedableRng;

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Coordinates probed per input; inputs with fewer elements are probed
    /// exhaustively.
    pub max_coords_per_input: usize,
    pub seed: u64,
    /// Magnitude below which derivatives are compared absolutely.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-4,
            max_coords_per_input: 24,
            seed: 0,
            floor: 1e-3,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Coordinates whose probes crossed a kink.
    pub skipped: usize,
    /// `(input, coordinate, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn merge(&mut self, other: &GradCheckReport) {
        self.checked += other.checked;
        self.skipped += other.skipped;
        if other.worst.is_some() && (self.worst.is_none() || other.max_rel_err > self.max_rel_err) {
            self.max_rel_err = other.max_rel_err;
            self.worst = other.worst;
        }
    }
}

/// Error between an analytic and a numeric derivative relative to the larger
/// magnitude, with the denominator floored at `floor`.
pub fn scaled_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn evaluate<F>(inputs: &[Tensor<f64>], f: &F, with_grad: bool) -> Result<(Tape<f64>, Vec<Var>, Var)>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone(), with_grad))
        .collect();
    let loss = f(&mut tape, &vars)?;
    Ok((tape, vars, loss))
}

/// Compare the tape's gradient of `f` with respect to every input against
/// five-point central differences.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], f: F, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let (mut tape, vars, loss) = evaluate(inputs, &f, true)?;
    tape.backward(loss)?;
    let base_sig = tape.kink_signature();
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            tape.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()))
        })
        .collect();
    drop(tape);

    let mut rng = StdRng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport::default();
    let mut probe = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let coords: Vec<usize> = if n <= opts.max_coords_per_input {
            (0..n).collect()
        } else {
            rand::seq::index::sample(&mut rng, n, opts.max_coords_per_input).into_vec()
        };
        for c in coords {
            let orig = input.data()[c];
            let mut values = [0.0; 4];
            let mut kinked = false;
            for (slot, offset) in values.iter_mut().zip([2.0, 1.0, -1.0, -2.0]) {
                probe[i].data_mut()[c] = orig + offset * opts.step;
                let (tape, _, loss) = evaluate(&probe, &f, false)?;
                kinked |= tape.kink_signature() != base_sig;
                *slot = tape.value(loss).item();
            }
            probe[i].data_mut()[c] = orig;
            if kinked {
                report.skipped += 1;
                continue;
            }
            let [p2, p1, m1, m2] = values;
            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * opts.step);
            let a = analytic[i].data()[c];
            let err = scaled_error(a, numeric, opts.floor);
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                report.worst = Some((i, c, a, numeric));
            }
        }
    }
    Ok(report)
}
