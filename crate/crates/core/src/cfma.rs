//! Focal modulation on the skip paths.
//!
//! The focal block gates a stack of depthwise context levels plus a global
//! average and uses the aggregate to modulate a query projection. The skip
//! block wraps it as `c1 = x + ln(conv3(fmb(x)))`, `out = c1 + mlp(c1)`.

use lssf_tensor::{Scalar, Var};

use crate::blocks::Builder;
use crate::config::CfmaConfig;
use crate::context::Cx;
use crate::error::{LssfError, Result};

pub fn init_fmb(b: &mut Builder, prefix: &str, c: usize, levels: usize) -> Result<()> {
    if levels == 0 {
        return Err(LssfError::Config("focal modulation needs at least one level".into()));
    }
    b.conv(&format!("{prefix}.query"), 1, c, c, true)?;
    b.conv(&format!("{prefix}.context"), 1, c, c + levels + 1, true)?;
    for l in 1..=levels {
        let k = 2 * l + 1;
        let kernel = b.init.he_normal(vec![k, k, c], k * k);
        b.tensor(format!("{prefix}.level{l}.kernel"), kernel)?;
    }
    b.conv(&format!("{prefix}.modulator"), 1, c, c, true)?;
    b.conv(&format!("{prefix}.out"), 1, c, c, true)
}

/// Number of context levels registered under `prefix`.
fn levels<T: Scalar>(cx: &Cx<T>, prefix: &str) -> usize {
    (1..).take_while(|l| cx.has(&format!("{prefix}.level{l}.kernel"))).count()
}

pub fn fmb<T: Scalar>(cx: &mut Cx<T>, prefix: &str, x: Var) -> Result<Var> {
    let [_, h, w, c] = cx.value(x).nhwc()?;
    let nl = levels(cx, prefix);
    if nl == 0 {
        return Err(LssfError::MissingParam(format!("{prefix}.level1.kernel")));
    }
    let q = cx.conv(&format!("{prefix}.query"), x)?;
    let z = cx.conv(&format!("{prefix}.context"), x)?;
    let mut ctx = cx.tape.slice_last(z, 0, c)?;
    let gates = cx.tape.slice_last(z, c, nl + 1)?;

    let mut agg = None;
    for l in 1..=nl {
        let kernel = cx.p(&format!("{prefix}.level{l}.kernel"))?;
        let y = cx.tape.depthwise_conv2d(ctx, kernel)?;
        ctx = cx.tape.gelu(y)?;
        let term = gated(cx, gates, l - 1, ctx, c)?;
        agg = Some(match agg {
            Some(a) => cx.tape.add(a, term)?,
            None => term,
        });
    }
    let pooled = cx.tape.global_avg_pool(ctx)?;
    let global = cx.tape.broadcast_spatial(pooled, h, w)?;
    let term = gated(cx, gates, nl, global, c)?;
    let agg = cx.tape.add(agg.expect("at least one level"), term)?;

    let modulator = cx.conv(&format!("{prefix}.modulator"), agg)?;
    let modulated = cx.tape.mul(q, modulator)?;
    cx.conv(&format!("{prefix}.out"), modulated)
}

fn gated<T: Scalar>(cx: &mut Cx<T>, gates: Var, index: usize, value: Var, c: usize) -> Result<Var> {
    let gate = cx.tape.slice_last(gates, index, 1)?;
    let gate = cx.tape.expand_last(gate, c)?;
    Ok(cx.tape.mul(gate, value)?)
}

pub fn init_cfma(b: &mut Builder, prefix: &str, c: usize, cfg: &CfmaConfig) -> Result<()> {
    init_fmb(b, &format!("{prefix}.fmb"), c, cfg.focal_levels)?;
    b.conv(&format!("{prefix}.conv"), 3, c, c, true)?;
    b.affine(&format!("{prefix}.ln"), c)?;
    let hidden = c * cfg.mlp_ratio;
    b.conv(&format!("{prefix}.mlp.fc1"), 1, c, hidden, true)?;
    b.conv(&format!("{prefix}.mlp.fc2"), 1, hidden, c, true)
}

pub fn cfma<T: Scalar>(cx: &mut Cx<T>, prefix: &str, x: Var) -> Result<Var> {
    let f = fmb(cx, &format!("{prefix}.fmb"), x)?;
    let f = cx.conv(&format!("{prefix}.conv"), f)?;
    let f = cx.layer_norm(&format!("{prefix}.ln"), f)?;
    let c1 = cx.tape.add(x, f)?;
    let m = cx.conv(&format!("{prefix}.mlp.fc1"), c1)?;
    let m = cx.tape.gelu(m)?;
    let m = cx.conv(&format!("{prefix}.mlp.fc2"), m)?;
    Ok(cx.tape.add(c1, m)?)
}
