use crate::error::{invalid, shape_err, Result};
use crate::kernels::conv::{conv2d_forward, depthwise_forward, ConvGeom};
use crate::tape::{Op, Padding, Tape, Var};
use crate::tensor::{nhwc, Scalar, Tensor};

impl<T: Scalar> Tape<T> {
    /// Cross-correlation of NHWC `x` with an HWIO `kernel` `[k, k, Cin, Cout]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        let [n, h, w, cin] = nhwc(self.shape(x), "conv2d")?;
        let (k, cout) = match *self.shape(kernel) {
            [kh, kw, ci, co] if kh == kw && ci == cin => (kh, co),
            ref s => {
                return Err(shape_err(
                    "conv2d",
                    format!("kernel {s:?} incompatible with input channels {cin}"),
                ))
            }
        };
        if stride < 1 {
            return Err(invalid("conv2d", "stride must be >= 1"));
        }
        if k % 2 == 0 {
            return Err(invalid("conv2d", format!("kernel size {k} must be odd")));
        }
        if let Some(b) = bias {
            if self.shape(b) != [cout] {
                return Err(shape_err(
                    "conv2d",
                    format!("bias {:?} vs {cout} output channels", self.shape(b)),
                ));
            }
        }
        let pad = match padding {
            Padding::Same => (k - 1) / 2,
            Padding::Valid => 0,
        };
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(shape_err("conv2d", format!("{h}x{w} input smaller than {k}x{k} kernel")));
        }
        let geom = ConvGeom {
            n,
            h,
            w,
            cin,
            k,
            cout,
            stride,
            pad,
            oh: (h + 2 * pad - k) / stride + 1,
            ow: (w + 2 * pad - k) / stride + 1,
        };
        let out = conv2d_forward(
            self.data(x),
            self.data(kernel),
            bias.map(|b| self.data(b)),
            &geom,
        );
        let out = Tensor::new(vec![n, geom.oh, geom.ow, cout], out)?;
        let mut inputs = vec![x, kernel];
        inputs.extend(bias);
        self.push(
            "conv2d",
            out,
            Op::Conv2d {
                x,
                kernel,
                bias,
                geom,
            },
            &inputs,
            geom.flops(),
        )
    }

    /// Per-channel same-padded convolution with kernel `[k, k, C]`, stride 1.
    pub fn depthwise_conv2d(&mut self, x: Var, kernel: Var) -> Result<Var> {
        let dims = nhwc(self.shape(x), "depthwise_conv2d")?;
        let k = match *self.shape(kernel) {
            [kh, kw, c] if kh == kw && c == dims[3] && kh % 2 == 1 => kh,
            ref s => {
                return Err(shape_err(
                    "depthwise_conv2d",
                    format!("kernel {s:?} for input {dims:?} (need [k,k,C], k odd)"),
                ))
            }
        };
        let out = depthwise_forward(self.data(x), self.data(kernel), dims, k);
        let out = Tensor::new(dims.to_vec(), out)?;
        let flops = 2 * (k * k * out.numel()) as u64;
        self.push("depthwise_conv2d", out, Op::Depthwise { x, kernel, k }, &[x, kernel], flops)
    }
}
