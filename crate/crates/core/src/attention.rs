//! Bottleneck attention: channel self-attention, global spatial attention,
//! channel shuffle, and their concatenate -> shuffle -> fuse assembly.

use lssf_tensor::{Scalar, Tensor, Var};

use crate::blocks::Builder;
use crate::config::{GsaConfig, NetworkConfig, SabConfig};
use crate::context::Cx;
use crate::error::{LssfError, Result};

/// Output of an attention block together with its normalized weights.
#[derive(Clone, Copy, Debug)]
pub struct Attended {
    pub out: Var,
    pub attention: Var,
}

/// Source channel of every output channel: view the `n` channels as a
/// `groups x n/groups` matrix, transpose, flatten.
pub fn shuffle_permutation(n: usize, groups: usize) -> Result<Vec<usize>> {
    if groups == 0 || !n.is_multiple_of(groups) {
        return Err(LssfError::Config(format!(
            "channel shuffle: {groups} groups do not divide {n} channels"
        )));
    }
    let per = n / groups;
    let mut perm = Vec::with_capacity(n);
    for j in 0..per {
        for g in 0..groups {
            perm.push(g * per + j);
        }
    }
    Ok(perm)
}

/// Pure channel permutation; the inverse is a shuffle with `n / groups`
/// groups.
pub fn channel_shuffle<T: Scalar>(cx: &mut Cx<T>, x: Var, groups: usize) -> Result<Var> {
    let n = *cx.shape(x).last().unwrap_or(&0);
    let perm = shuffle_permutation(n, groups)?;
    Ok(cx.tape.permute_last(x, &perm)?)
}

pub fn init_sab(b: &mut Builder, prefix: &str, c: usize, cfg: &SabConfig) -> Result<()> {
    if cfg.projections {
        for w in ["wq", "wk", "wv"] {
            let t = b.init.he_normal(vec![c, c], c);
            b.tensor(format!("{prefix}.{w}"), t)?;
        }
    }
    Ok(())
}

/// Channel self-attention. `x` is flattened to `X [N, HW, C]`; the energy
/// `X^T X [N, C, C]` is scaled by `1/sqrt(temperature)`, softmaxed over its
/// last axis, and applied as `X A`.
pub fn sab<T: Scalar>(cx: &mut Cx<T>, prefix: &str, x: Var, cfg: &SabConfig) -> Result<Attended> {
    let [n, h, w, c] = cx.value(x).nhwc()?;
    let temperature = cfg.temperature.unwrap_or(c as f64);
    if !(temperature > 0.0) {
        return Err(LssfError::Config(format!("sab temperature {temperature} must be > 0")));
    }
    let flat = cx.tape.reshape(x, &[n, h * w, c])?;
    let (q, k, v) = if cfg.projections {
        let proj = |cx: &mut Cx<T>, name: &str| -> Result<Var> {
            let wgt = cx.p(&format!("{prefix}.{name}"))?;
            Ok(cx.tape.matmul(flat, wgt)?)
        };
        (proj(cx, "wq")?, proj(cx, "wk")?, proj(cx, "wv")?)
    } else {
        (flat, flat, flat)
    };
    let query = cx.tape.transpose(q)?;
    let energy = cx.tape.matmul(query, k)?;
    let energy = cx.tape.scale(energy, T::of(1.0 / temperature.sqrt()))?;
    let attention = cx.tape.softmax(energy)?;
    let dropped = cx.dropout(attention, cfg.dropout)?;
    let out = cx.tape.matmul(v, dropped)?;
    let out = cx.tape.reshape(out, &[n, h, w, c])?;
    Ok(Attended { out, attention })
}

/// `side` is the spatial side the mixing matrix is built for.
pub fn init_gsa(b: &mut Builder, prefix: &str, c: usize, side: usize, cfg: &GsaConfig) -> Result<()> {
    if cfg.factor == 0 || !c.is_multiple_of(cfg.factor) {
        return Err(LssfError::Config(format!("gsa factor {} does not divide {c}", cfg.factor)));
    }
    let cq = c / cfg.factor;
    b.conv(&format!("{prefix}.query"), 1, c, cq, false)?;
    b.conv(&format!("{prefix}.key"), 1, c, cq, false)?;
    b.conv(&format!("{prefix}.value"), 1, c, c, false)?;
    let hw = side * side;
    let mix = b.init.normal(vec![hw, hw], cfg.mix_init_std);
    b.tensor(format!("{prefix}.mix"), mix)
}

/// Global spatial attention with a residual: position-by-position softmax
/// attention `[N, HW, HW]` applied to the value projection, followed by the
/// trainable `HW x HW` mixing matrix.
pub fn gsa<T: Scalar>(cx: &mut Cx<T>, prefix: &str, x: Var) -> Result<Attended> {
    let [n, h, w, c] = cx.value(x).nhwc()?;
    let hw = h * w;
    let q = cx.conv(&format!("{prefix}.query"), x)?;
    let cq = *cx.shape(q).last().unwrap_or(&0);
    if cq == 0 || c % cq != 0 {
        return Err(LssfError::Config(format!("gsa query width {cq} does not divide {c}")));
    }
    let q = cx.tape.reshape(q, &[n, hw, cq])?;
    let k = cx.conv(&format!("{prefix}.key"), x)?;
    let k = cx.tape.reshape(k, &[n, hw, cq])?;
    let kt = cx.tape.transpose(k)?;
    let energy = cx.tape.matmul(q, kt)?;
    let attention = cx.tape.softmax(energy)?;
    let v = cx.conv(&format!("{prefix}.value"), x)?;
    let v = cx.tape.reshape(v, &[n, hw, c])?;
    let vt = cx.tape.transpose(v)?;
    let attended = cx.tape.matmul(vt, attention)?;
    let mix = cx.p(&format!("{prefix}.mix"))?;
    let mixed = cx.tape.matmul(attended, mix)?;
    let out = cx.tape.transpose(mixed)?;
    let out = cx.tape.reshape(out, &[n, h, w, c])?;
    let out = cx.tape.add(out, x)?;
    Ok(Attended { out, attention })
}

pub fn init_bottleneck(b: &mut Builder, prefix: &str, cfg: &NetworkConfig) -> Result<()> {
    let c = cfg.widths[3];
    init_gsa(b, &format!("{prefix}.gsa"), c, cfg.bottleneck_size(), &cfg.gsa)?;
    init_sab(b, &format!("{prefix}.sab"), c, &cfg.sab)?;
    b.conv(&format!("{prefix}.fuse"), 1, 2 * c, c, true)
}

/// Intermediate results of [`bottleneck`], exposed for inspection.
#[derive(Clone, Copy, Debug)]
pub struct BottleneckTrace {
    pub gsa: Attended,
    pub sab: Attended,
    pub shuffled: Var,
    pub out: Var,
}

/// `fuse(shuffle(gsa(e) ++ sab(e)))`, returning to the input width.
pub fn bottleneck<T: Scalar>(cx: &mut Cx<T>, prefix: &str, e: Var, cfg: &NetworkConfig) -> Result<BottleneckTrace> {
    let g = gsa(cx, &format!("{prefix}.gsa"), e)?;
    let s = sab(cx, &format!("{prefix}.sab"), e, &cfg.sab)?;
    let cat = cx.tape.concat(g.out, s.out)?;
    let shuffled = channel_shuffle(cx, cat, cfg.shuffle_groups)?;
    let out = cx.conv(&format!("{prefix}.fuse"), shuffled)?;
    Ok(BottleneckTrace {
        gsa: g,
        sab: s,
        shuffled,
        out,
    })
}

/// Identity `C x C` matrix, handy for hand-set projections.
pub fn identity<T: Scalar>(c: usize) -> Tensor<T> {
    Tensor::from_fn([c, c], |i| if i / c == i % c { T::one() } else { T::zero() })
}
