use crate::error::{invalid, shape_err, Result};
use crate::tape::{Op, Tape, Var};
use crate::tensor::{nhwc, Scalar, Tensor};

impl<T: Scalar> Tape<T> {
    /// 2x2 max pooling, stride 2. The gradient goes to the first maximum in
    /// row-major window order.
    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let [n, h, w, c] = nhwc(self.shape(x), "maxpool2")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(invalid("maxpool2", format!("spatial dims {h}x{w} must be even")));
        }
        let (oh, ow) = (h / 2, w / 2);
        let xv = self.data(x);
        let mut out = Vec::with_capacity(n * oh * ow * c);
        let mut argmax = Vec::with_capacity(n * oh * ow * c);
        for b in 0..n {
            for y in 0..oh {
                for xx in 0..ow {
                    for ch in 0..c {
                        let mut best = usize::MAX;
                        let mut best_v = T::neg_infinity();
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let i = ((b * h + 2 * y + dy) * w + 2 * xx + dx) * c + ch;
                                if best == usize::MAX || xv[i] > best_v {
                                    best = i;
                                    best_v = xv[i];
                                }
                            }
                        }
                        out.push(best_v);
                        argmax.push(best);
                    }
                }
            }
        }
        let flops = xv.len() as u64;
        let out = Tensor::new(vec![n, oh, ow, c], out)?;
        self.push("maxpool2", out, Op::MaxPool2 { x, argmax }, &[x], flops)
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let [n, h, w, c] = nhwc(self.shape(x), "upsample2")?;
        let xv = self.data(x);
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = Vec::with_capacity(n * oh * ow * c);
        for b in 0..n {
            for y in 0..oh {
                for xx in 0..ow {
                    let src = ((b * h + y / 2) * w + xx / 2) * c;
                    out.extend_from_slice(&xv[src..src + c]);
                }
            }
        }
        let out = Tensor::new(vec![n, oh, ow, c], out)?;
        self.push("upsample2", out, Op::Upsample2(x), &[x], 0)
    }

    /// Spatial mean: `[N, H, W, C] -> [N, 1, 1, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let [n, h, w, c] = nhwc(self.shape(x), "global_avg_pool")?;
        let xv = self.data(x);
        let inv = T::one() / T::of((h * w) as f64);
        let mut out = vec![T::zero(); n * c];
        for b in 0..n {
            let o = &mut out[b * c..][..c];
            for px in xv[b * h * w * c..][..h * w * c].chunks(c) {
                o.iter_mut().zip(px).for_each(|(a, &v)| *a += v);
            }
            o.iter_mut().for_each(|a| *a *= inv);
        }
        let flops = xv.len() as u64;
        let out = Tensor::new(vec![n, 1, 1, c], out)?;
        self.push("global_avg_pool", out, Op::GlobalAvgPool(x), &[x], flops)
    }

    /// Tile `[N, 1, 1, C]` over an `h x w` grid.
    pub fn broadcast_spatial(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let [n, one_h, one_w, c] = nhwc(self.shape(x), "broadcast_spatial")?;
        if one_h != 1 || one_w != 1 {
            return Err(shape_err("broadcast_spatial", format!("expected [N,1,1,C], got {:?}", self.shape(x))));
        }
        let xv = self.data(x);
        let mut out = Vec::with_capacity(n * h * w * c);
        for b in 0..n {
            for _ in 0..h * w {
                out.extend_from_slice(&xv[b * c..][..c]);
            }
        }
        let out = Tensor::new(vec![n, h, w, c], out)?;
        self.push("broadcast_spatial", out, Op::BroadcastSpatial { x }, &[x], 0)
    }
}
