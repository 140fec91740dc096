//! Analytic parameter and FLOP accounting, computed from the configuration
//! alone (no registry, no forward pass).
//!
//! FLOP convention: a multiply-add counts as 2, so a convolution costs
//! `2 k^2 Cin Cout H' W'` and a matrix product `2 m k n`. Elementwise ops,
//! normalizations, softmax, pooling reductions and activations cost one per
//! element; reshapes, transposes, concatenation, slicing and upsampling are
//! free. Counts are for a single image in inference mode.

use serde::Serialize;

use crate::config::NetworkConfig;
use crate::error::Result;
use crate::network::INPUT_CHANNELS;

pub const FLOP_CONVENTION: &str = "multiply-add = 2 FLOPs; conv = 2*k^2*Cin*Cout*H'*W'; matmul = 2*m*k*n; \
elementwise/norm/softmax/pool = 1 per element; data movement = 0; batch 1, inference mode";

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LayerCost {
    pub name: String,
    /// Output shape `[H, W, C]`.
    pub shape: Vec<usize>,
    pub params: u64,
    pub flops: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostReport {
    pub schema: u32,
    pub input_size: usize,
    pub layers: Vec<LayerCost>,
    pub total_params: u64,
    pub total_flops: u64,
    pub flop_convention: &'static str,
}

#[derive(Default)]
struct Acc {
    layers: Vec<LayerCost>,
}

impl Acc {
    fn row(&mut self, name: String, side: usize, c: usize, params: usize, flops: usize) {
        self.layers.push(LayerCost {
            name,
            shape: vec![side, side, c],
            params: params as u64,
            flops: flops as u64,
        });
    }

    fn conv(&mut self, name: String, k: usize, cin: usize, cout: usize, side: usize, bias: bool) {
        let params = k * k * cin * cout + if bias { cout } else { 0 };
        self.row(name, side, cout, params, 2 * k * k * cin * cout * side * side);
    }

    /// 3x3 conv with bias, batch norm, optional ReLU.
    fn unit(&mut self, name: String, cin: usize, cout: usize, side: usize, relu: bool) {
        let hw = side * side;
        let flops = 18 * cin * cout * hw + cout * hw * if relu { 2 } else { 1 };
        self.row(name, side, cout, 9 * cin * cout + 3 * cout, flops);
    }

    fn branches(&mut self, p: &str, cin: usize, cout: usize, side: usize) {
        self.unit(format!("{p}.a0"), cin, cout, side, true);
        self.unit(format!("{p}.a1"), cout, cout, side, true);
        self.conv(format!("{p}.a2"), 3, cout, cout, side, true);
        self.unit(format!("{p}.b0"), cout, cout, side, false);
        self.unit(format!("{p}.b1"), cout, cout, side, false);
    }

    fn encoder(&mut self, p: &str, cin: usize, cout: usize, side: usize) {
        self.unit(format!("{p}.skip"), cin, cout, side, true);
        self.branches(p, cin, cout, side);
        // add, relu, pool
        self.row(format!("{p}.merge"), side / 2, cout, 0, 3 * cout * side * side);
    }

    fn decoder(&mut self, p: &str, cin: usize, cout: usize, side: usize) {
        self.row(format!("{p}.upsample"), side, cin, 0, 0);
        self.unit(format!("{p}.fuse"), cin, cout, side, true);
        self.row(format!("{p}.skip_add"), side, cout, 0, cout * side * side);
        self.branches(p, cin, cout, side);
        self.row(format!("{p}.merge"), side, cout, 0, 2 * cout * side * side);
    }

    fn cfma(&mut self, p: &str, c: usize, side: usize, cfg: &NetworkConfig) {
        let hw = side * side;
        let levels = cfg.cfma.focal_levels;
        let kernels = cfg.focal_kernels();
        let ctx = c + levels + 1;
        let params = (c * c + c) * 3 + c * ctx + ctx + kernels.iter().map(|k| k * k * c).sum::<usize>();
        let flops = 3 * 2 * c * c * hw
            + 2 * c * ctx * hw
            + kernels.iter().map(|k| 2 * k * k * c * hw + c * hw).sum::<usize>()
            + c * hw // global average
            + (levels + 1) * c * hw // gating
            + levels * c * hw // aggregation adds
            + c * hw; // modulation
        self.row(format!("{p}.fmb"), side, c, params, flops);
        self.conv(format!("{p}.conv"), 3, c, c, side, true);
        // layer norm + residual add
        self.row(format!("{p}.ln"), side, c, 2 * c, 2 * c * hw);
        let h = c * cfg.cfma.mlp_ratio;
        let flops = 2 * c * h * hw + h * hw + 2 * h * c * hw + c * hw;
        self.row(format!("{p}.mlp"), side, c, c * h + h + h * c + c, flops);
    }

    fn bottleneck(&mut self, p: &str, cfg: &NetworkConfig) {
        let c = cfg.widths[3];
        let side = cfg.bottleneck_size();
        let hw = side * side;
        let cq = c / cfg.gsa.factor;
        let params = 2 * c * cq + c * c + hw * hw;
        let flops = 2 * 2 * c * cq * hw // query, key
            + 2 * hw * cq * hw // energy
            + hw * hw // softmax
            + 2 * c * c * hw // value
            + 2 * 2 * c * hw * hw // attend, mix
            + c * hw; // residual
        self.row(format!("{p}.gsa"), side, c, params, flops);
        let (params, proj) = if cfg.sab.projections {
            (3 * c * c, 3 * 2 * hw * c * c)
        } else {
            (0, 0)
        };
        // energy, scale, softmax, attend
        let flops = proj + 2 * c * hw * c + 2 * c * c + 2 * hw * c * c;
        self.row(format!("{p}.sab"), side, c, params, flops);
        self.row(format!("{p}.shuffle"), side, 2 * c, 0, 0);
        self.conv(format!("{p}.fuse"), 1, 2 * c, c, side, true);
    }
}

pub fn profile(config: &NetworkConfig) -> Result<CostReport> {
    config.validate()?;
    let s = config.input_size;
    let [w1, w2, w3, w4] = config.widths;
    let mut a = Acc::default();

    a.unit("stem.unit0".into(), INPUT_CHANNELS, w1, s, true);
    a.unit("stem.unit1".into(), w1, w1, s, true);
    a.unit("stem.unit2".into(), w1, w1, s, true);
    a.row("stem.pool".into(), s / 2, w1, 0, w1 * s * s);
    a.encoder("enc1", w1, w2, s / 2);
    a.encoder("enc2", w2, w3, s / 4);
    a.encoder("enc3", w3, w4, s / 8);
    a.bottleneck("bottleneck", config);
    let stages = [(1, w4, w4, 3), (2, w4, w3, 2), (3, w3, w2, 1), (4, w2, w1, 0)];
    for (k, cin, cout, level) in stages {
        let side = s >> level;
        a.cfma(&format!("cfma{level}"), cout, side, config);
        a.decoder(&format!("dec{k}"), cin, cout, side);
    }
    a.unit("head.unit".into(), w1, w1, s, true);
    a.conv("head.out".into(), 1, w1, 1, s, true);
    a.row("head.sigmoid".into(), s, 1, 0, s * s);

    let total_params = a.layers.iter().map(|l| l.params).sum();
    let total_flops = a.layers.iter().map(|l| l.flops).sum();
    Ok(CostReport {
        schema: 1,
        input_size: s,
        layers: a.layers,
        total_params,
        total_flops,
        flop_convention: FLOP_CONVENTION,
    })
}

/// Forward FLOPs for one image at the configured input size.
pub fn count_flops(config: &NetworkConfig) -> Result<u64> {
    Ok(profile(config)?.total_flops)
}
