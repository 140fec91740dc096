//! Convolutional building blocks: the conv -> BN -> ReLU unit, the stem, the
//! dual-branch encoder and decoder blocks, and the sigmoid head.
//!
//! Parameter layout under a unit prefix `p`: `p.kernel [k,k,Cin,Cout]`,
//! `p.bias`, `p.gamma`, `p.beta`, with running statistics stored under `p`.

use lssf_tensor::{Scalar, Tensor, Var};

use crate::context::Cx;
use crate::error::Result;
use crate::params::{BnBuffers, Initializer, ParamStore};

/// Registers parameters with their initial values.
pub struct Builder<'a> {
    pub store: &'a mut ParamStore<f32>,
    pub init: &'a mut Initializer,
}

impl<'a> Builder<'a> {
    pub fn new(store: &'a mut ParamStore<f32>, init: &'a mut Initializer) -> Self {
        Self { store, init }
    }

    pub fn tensor(&mut self, name: impl Into<String>, value: Tensor<f32>) -> Result<()> {
        self.store.insert(name, value)
    }

    /// He-normal `k x k` kernel, optional zero bias.
    pub fn conv(&mut self, prefix: &str, k: usize, cin: usize, cout: usize, bias: bool) -> Result<()> {
        let kernel = self.init.he_normal(vec![k, k, cin, cout], k * k * cin);
        self.store.insert(format!("{prefix}.kernel"), kernel)?;
        if bias {
            self.store.insert(format!("{prefix}.bias"), Tensor::zeros([cout]))?;
        }
        Ok(())
    }

    pub fn affine(&mut self, prefix: &str, c: usize) -> Result<()> {
        self.store.insert(format!("{prefix}.gamma"), Tensor::ones([c]))?;
        self.store.insert(format!("{prefix}.beta"), Tensor::zeros([c]))
    }

    /// Convolution followed by batch norm; also the parameter set of a
    /// [`conv_unit`].
    pub fn conv_bn(&mut self, prefix: &str, k: usize, cin: usize, cout: usize) -> Result<()> {
        self.conv(prefix, k, cin, cout, true)?;
        self.affine(prefix, cout)?;
        self.store.insert_bn(prefix, BnBuffers::new(cout))
    }
}

pub fn init_stem(b: &mut Builder, prefix: &str, cin: usize, width: usize) -> Result<()> {
    b.conv_bn(&format!("{prefix}.unit0"), 3, cin, width)?;
    b.conv_bn(&format!("{prefix}.unit1"), 3, width, width)?;
    b.conv_bn(&format!("{prefix}.unit2"), 3, width, width)
}

/// Shared by encoder and decoder blocks: `a0, a1` units and the bare conv
/// `a2` on one input, `b0, b1` conv+BN on the other. Channel changes happen
/// in `a0` and `b0`; `bin` is the input width of branch b.
fn init_branches(b: &mut Builder, prefix: &str, cin: usize, bin: usize, cout: usize) -> Result<()> {
    b.conv_bn(&format!("{prefix}.a0"), 3, cin, cout)?;
    b.conv_bn(&format!("{prefix}.a1"), 3, cout, cout)?;
    b.conv(&format!("{prefix}.a2"), 3, cout, cout, true)?;
    b.conv_bn(&format!("{prefix}.b0"), 3, bin, cout)?;
    b.conv_bn(&format!("{prefix}.b1"), 3, cout, cout)
}

pub fn init_encoder(b: &mut Builder, prefix: &str, cin: usize, cout: usize) -> Result<()> {
    b.conv_bn(&format!("{prefix}.skip"), 3, cin, cout)?;
    init_branches(b, prefix, cin, cout, cout)
}

pub fn init_decoder(b: &mut Builder, prefix: &str, cin: usize, cout: usize) -> Result<()> {
    b.conv_bn(&format!("{prefix}.fuse"), 3, cin, cout)?;
    init_branches(b, prefix, cin, cout, cout)
}

pub fn init_head(b: &mut Builder, prefix: &str, cin: usize) -> Result<()> {
    b.conv_bn(&format!("{prefix}.unit"), 3, cin, cin)?;
    b.conv(&format!("{prefix}.out"), 1, cin, 1, true)
}

pub fn conv_bn<T: Scalar>(cx: &mut Cx<T>, prefix: &str, x: Var) -> Result<Var> {
    let y = cx.conv(prefix, x)?;
    cx.batch_norm(prefix, y)
}

/// `relu(bn(conv(x)))`.
pub fn conv_unit<T: Scalar>(cx: &mut Cx<T>, prefix: &str, x: Var) -> Result<Var> {
    let y = conv_bn(cx, prefix, x)?;
    Ok(cx.tape.relu(y)?)
}

/// Returns the full-resolution skip feature and the pooled stem output.
pub fn initial_stem<T: Scalar>(cx: &mut Cx<T>, prefix: &str, x: Var) -> Result<(Var, Var)> {
    let s0 = conv_unit(cx, &format!("{prefix}.unit0"), x)?;
    let y = conv_unit(cx, &format!("{prefix}.unit1"), s0)?;
    let y = conv_unit(cx, &format!("{prefix}.unit2"), y)?;
    let e0 = cx.tape.maxpool2(y)?;
    Ok((s0, e0))
}

/// `relu(a2(a1(a0(main))) + b1(b0(aux)))` before any pooling.
fn dual_branch<T: Scalar>(cx: &mut Cx<T>, prefix: &str, main: Var, aux: Var) -> Result<Var> {
    let a = conv_unit(cx, &format!("{prefix}.a0"), main)?;
    let a = conv_unit(cx, &format!("{prefix}.a1"), a)?;
    let a = cx.conv(&format!("{prefix}.a2"), a)?;
    let b = conv_bn(cx, &format!("{prefix}.b0"), aux)?;
    let b = conv_bn(cx, &format!("{prefix}.b1"), b)?;
    let sum = cx.tape.add(a, b)?;
    Ok(cx.tape.relu(sum)?)
}

/// Returns the stage skip feature and the pooled stage output.
pub fn encoder_block<T: Scalar>(cx: &mut Cx<T>, prefix: &str, e_prev: Var) -> Result<(Var, Var)> {
    let s = conv_unit(cx, &format!("{prefix}.skip"), e_prev)?;
    let y = dual_branch(cx, prefix, e_prev, s)?;
    let e = cx.tape.maxpool2(y)?;
    Ok((s, e))
}

/// `skip` must already be the attention-refined skip feature.
pub fn decoder_block<T: Scalar>(cx: &mut Cx<T>, prefix: &str, d_prev: Var, skip: Var) -> Result<Var> {
    let up = cx.tape.upsample2(d_prev)?;
    let fused = conv_unit(cx, &format!("{prefix}.fuse"), up)?;
    let merged = cx.tape.add(skip, fused)?;
    dual_branch(cx, prefix, up, merged)
}

pub fn output_head<T: Scalar>(cx: &mut Cx<T>, prefix: &str, x: Var) -> Result<Var> {
    let y = conv_unit(cx, &format!("{prefix}.unit"), x)?;
    let logits = cx.conv(&format!("{prefix}.out"), y)?;
    Ok(cx.tape.sigmoid(logits)?)
}
