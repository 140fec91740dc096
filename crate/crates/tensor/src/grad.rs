//! Backward rules: given the gradient flowing into node `id`, produce the
//! gradient contribution for each of its inputs.

use crate::kernels::conv::{conv2d_backward, depthwise_backward};
use crate::ops::activation::gelu_grad;
use crate::ops::linalg::mat_dims;
use crate::ops::loss::jaccard_terms;
use crate::tape::{NormKind, Op, Tape, Var};
use crate::tensor::Scalar;

fn zip_map<T: Scalar>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

pub(crate) fn backward_op<T: Scalar>(tape: &Tape<T>, id: usize, g: &[T]) -> Vec<(Var, Vec<T>)> {
    let node = &tape.nodes[id];
    let want = |v: Var| tape.requires_grad(v);
    match &node.op {
        Op::Leaf => vec![],
        Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
        Op::Sub(a, b) => vec![(*a, g.to_vec()), (*b, g.iter().map(|&v| -v).collect())],
        Op::Mul(a, b) => {
            let (va, vb) = (tape.data(*a), tape.data(*b));
            vec![(*a, zip_map(g, vb, |d, y| d * y)), (*b, zip_map(g, va, |d, x| d * x))]
        }
        Op::Scale(x, s) => vec![(*x, g.iter().map(|&d| d * *s).collect())],
        Op::Relu(x) => vec![(
            *x,
            zip_map(g, tape.data(*x), |d, v| if v > T::zero() { d } else { T::zero() }),
        )],
        Op::Gelu(x) => vec![(*x, zip_map(g, tape.data(*x), |d, v| d * gelu_grad(v)))],
        Op::Sigmoid(x) => vec![(
            *x,
            zip_map(g, node.value.data(), |d, y| d * y * (T::one() - y)),
        )],
        Op::Dropout { x, mask } => vec![(*x, zip_map(g, mask, |d, m| d * m))],
        Op::Conv2d {
            x,
            kernel,
            bias,
            geom,
        } => {
            let (dx, dk, db) = conv2d_backward(
                tape.data(*x),
                tape.data(*kernel),
                g,
                geom,
                want(*x),
                want(*kernel),
                bias.is_some_and(want),
            );
            let mut out = Vec::with_capacity(3);
            out.extend(dx.map(|d| (*x, d)));
            out.extend(dk.map(|d| (*kernel, d)));
            if let (Some(b), Some(d)) = (bias, db) {
                out.push((*b, d));
            }
            out
        }
        Op::Depthwise { x, kernel, k } => {
            let s = tape.shape(*x);
            let dims = [s[0], s[1], s[2], s[3]];
            let (dx, dk) = depthwise_backward(tape.data(*x), tape.data(*kernel), g, dims, *k);
            vec![(*x, dx), (*kernel, dk)]
        }
        Op::Norm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            kind,
        } => norm_backward(tape, *x, *gamma, *beta, xhat, inv_std, *kind, g),
        Op::MaxPool2 { x, argmax } => {
            let mut dx = vec![T::zero(); tape.data(*x).len()];
            for (&i, &d) in argmax.iter().zip(g) {
                dx[i] += d;
            }
            vec![(*x, dx)]
        }
        Op::Upsample2(x) => {
            let s = tape.shape(*x);
            let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
            let mut dx = vec![T::zero(); n * h * w * c];
            let ow = 2 * w;
            for b in 0..n {
                for y in 0..2 * h {
                    for xx in 0..ow {
                        let src = ((b * 2 * h + y) * ow + xx) * c;
                        let dst = ((b * h + y / 2) * w + xx / 2) * c;
                        for ch in 0..c {
                            dx[dst + ch] += g[src + ch];
                        }
                    }
                }
            }
            vec![(*x, dx)]
        }
        Op::GlobalAvgPool(x) => {
            let s = tape.shape(*x);
            let (n, hw, c) = (s[0], s[1] * s[2], s[3]);
            let inv = T::one() / T::of(hw as f64);
            let mut dx = Vec::with_capacity(n * hw * c);
            for b in 0..n {
                for _ in 0..hw {
                    dx.extend(g[b * c..][..c].iter().map(|&d| d * inv));
                }
            }
            vec![(*x, dx)]
        }
        Op::BroadcastSpatial { x } => {
            let s = node.value.shape();
            let (n, hw, c) = (s[0], s[1] * s[2], s[3]);
            let mut dx = vec![T::zero(); n * c];
            for b in 0..n {
                for px in g[b * hw * c..][..hw * c].chunks(c) {
                    dx[b * c..][..c].iter_mut().zip(px).for_each(|(a, &d)| *a += d);
                }
            }
            vec![(*x, dx)]
        }
        Op::ExpandLast { x } => {
            let c = *node.value.shape().last().unwrap();
            vec![(*x, g.chunks(c).map(|row| row.iter().copied().sum()).collect())]
        }
        Op::SliceLast { x, start } => {
            let c = *tape.shape(*x).last().unwrap();
            let len = *node.value.shape().last().unwrap();
            let mut dx = vec![T::zero(); tape.data(*x).len()];
            for (r, row) in g.chunks(len).enumerate() {
                dx[r * c + start..][..len].copy_from_slice(row);
            }
            vec![(*x, dx)]
        }
        Op::ConcatLast(a, b) => {
            let ca = *tape.shape(*a).last().unwrap();
            let cb = *tape.shape(*b).last().unwrap();
            let mut da = Vec::with_capacity(tape.data(*a).len());
            let mut db = Vec::with_capacity(tape.data(*b).len());
            for row in g.chunks(ca + cb) {
                da.extend_from_slice(&row[..ca]);
                db.extend_from_slice(&row[ca..]);
            }
            vec![(*a, da), (*b, db)]
        }
        Op::PermuteLast { x, perm } => {
            let c = perm.len();
            let mut dx = vec![T::zero(); g.len()];
            for (r, row) in g.chunks(c).enumerate() {
                for (j, &p) in perm.iter().enumerate() {
                    dx[r * c + p] += row[j];
                }
            }
            vec![(*x, dx)]
        }
        Op::Reshape(x) => vec![(*x, g.to_vec())],
        Op::Transpose(x) => {
            // gradient arrives in the transposed layout [.., c, r]
            let s = tape.shape(*x);
            let (batch, r, c) = match *s {
                [r, c] => (1, r, c),
                [b, r, c] => (b, r, c),
                _ => unreachable!("transpose validated rank"),
            };
            let mut dx = vec![T::zero(); g.len()];
            for b in 0..batch {
                let src = &g[b * r * c..][..r * c];
                let dst = &mut dx[b * r * c..][..r * c];
                for i in 0..r {
                    for j in 0..c {
                        dst[i * c + j] = src[j * r + i];
                    }
                }
            }
            vec![(*x, dx)]
        }
        Op::MatMul(a, b) => matmul_backward(tape, *a, *b, g),
        Op::Softmax(x) => {
            let y = node.value.data();
            let c = *node.value.shape().last().unwrap();
            let mut dx = Vec::with_capacity(y.len());
            for (yr, gr) in y.chunks(c).zip(g.chunks(c)) {
                let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                dx.extend(yr.iter().zip(gr).map(|(&yi, &gi)| yi * (gi - dot)));
            }
            vec![(*x, dx)]
        }
        Op::Sum(x) => vec![(*x, vec![g[0]; tape.data(*x).len()])],
        Op::Mean(x) => {
            let n = tape.data(*x).len();
            vec![(*x, vec![g[0] / T::of(n as f64); n])]
        }
        Op::Bce { p, g: target, clamp } => {
            let (pv, gv) = (tape.data(*p), tape.data(*target));
            let scale = g[0] / T::of(pv.len() as f64);
            let hi = T::one() - *clamp;
            let mut dp = Vec::with_capacity(pv.len());
            let mut dg = Vec::with_capacity(pv.len());
            for (&pi, &gi) in pv.iter().zip(gv) {
                let pc = pi.max(*clamp).min(hi);
                let inside = pi >= *clamp && pi <= hi;
                dp.push(if inside {
                    scale * (-gi / pc + (T::one() - gi) / (T::one() - pc))
                } else {
                    T::zero()
                });
                dg.push(-scale * (pc.ln() - (T::one() - pc).ln()));
            }
            vec![(*p, dp), (*target, dg)]
        }
        Op::Jaccard { p, g: target, eps } => {
            let (pv, gv) = (tape.data(*p), tape.data(*target));
            let (inter, union) = jaccard_terms(pv, gv);
            let (i, u) = (inter + *eps, union + *eps);
            let k = g[0] / (u * u);
            let dp = zip_map(pv, gv, |_, gi| -k * (gi * u - i * (T::one() - gi)));
            let dg = zip_map(pv, gv, |pi, _| -k * (pi * u - i * (T::one() - pi)));
            vec![(*p, dp), (*target, dg)]
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn norm_backward<T: Scalar>(
    tape: &Tape<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    xhat: &[T],
    inv_std: &[T],
    kind: NormKind,
    g: &[T],
) -> Vec<(Var, Vec<T>)> {
    let gam = tape.data(gamma);
    let c = gam.len();
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for (gr, xr) in g.chunks(c).zip(xhat.chunks(c)) {
        for ch in 0..c {
            dgamma[ch] += gr[ch] * xr[ch];
            dbeta[ch] += gr[ch];
        }
    }
    let mut dx = vec![T::zero(); g.len()];
    match kind {
        NormKind::Fixed => {
            for (i, d) in dx.iter_mut().enumerate() {
                let ch = i % c;
                *d = g[i] * gam[ch] * inv_std[ch];
            }
        }
        NormKind::BatchTrain => {
            let m = T::of((g.len() / c) as f64);
            for i in 0..g.len() {
                let ch = i % c;
                dx[i] = gam[ch] * inv_std[ch] / m * (m * g[i] - dbeta[ch] - xhat[i] * dgamma[ch]);
            }
        }
        NormKind::Layer => {
            let cf = T::of(c as f64);
            for (r, ((dr, gr), xr)) in dx.chunks_mut(c).zip(g.chunks(c)).zip(xhat.chunks(c)).enumerate() {
                let mut sum_d = T::zero();
                let mut sum_dx = T::zero();
                for ch in 0..c {
                    let dxh = gr[ch] * gam[ch];
                    sum_d += dxh;
                    sum_dx += dxh * xr[ch];
                }
                for ch in 0..c {
                    let dxh = gr[ch] * gam[ch];
                    dr[ch] = inv_std[r] / cf * (cf * dxh - sum_d - xr[ch] * sum_dx);
                }
            }
        }
    }
    vec![(x, dx), (gamma, dgamma), (beta, dbeta)]
}

fn matmul_backward<T: Scalar>(tape: &Tape<T>, a: Var, b: Var, g: &[T]) -> Vec<(Var, Vec<T>)> {
    let (ba, m, k) = mat_dims(tape.shape(a)).expect("validated in forward");
    let (bb, _, n) = mat_dims(tape.shape(b)).expect("validated in forward");
    let nb = ba.or(bb).unwrap_or(1);
    let (av, bv) = (tape.data(a), tape.data(b));
    let mut out = Vec::with_capacity(2);
    if tape.requires_grad(a) {
        let mut da = vec![T::zero(); av.len()];
        for i in 0..nb {
            let bi = if bb.is_some() { &bv[i * k * n..][..k * n] } else { bv };
            let gi = &g[i * m * n..][..m * n];
            let (dst, acc) = if ba.is_some() {
                (&mut da[i * m * k..][..m * k], false)
            } else {
                (&mut da[..], i > 0)
            };
            T::gemm(m, n, k, gi, false, bi, true, dst, acc);
        }
        out.push((a, da));
    }
    if tape.requires_grad(b) {
        let mut db = vec![T::zero(); bv.len()];
        for i in 0..nb {
            let ai = if ba.is_some() { &av[i * m * k..][..m * k] } else { av };
            let gi = &g[i * m * n..][..m * n];
            let (dst, acc) = if bb.is_some() {
                (&mut db[i * k * n..][..k * n], false)
            } else {
                (&mut db[..], i > 0)
            };
            T::gemm(k, m, n, ai, true, gi, false, dst, acc);
        }
        out.push((b, db));
    }
    out
}
