//! Full encoder-decoder: stem, three encoder stages, attention bottleneck,
//! four decoder stages fed by focal-modulated skips, sigmoid head.

use lssf_tensor::{Mode, Scalar, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{bottleneck, init_bottleneck};
use crate::blocks::{decoder_block, encoder_block, init_decoder, init_encoder, init_head, init_stem, initial_stem, output_head, Builder};
use crate::cfma::{cfma, init_cfma};
use crate::config::NetworkConfig;
use crate::context::Cx;
use crate::error::{LssfError, Result};
use crate::params::{Initializer, ParamStore};

pub const INPUT_CHANNELS: usize = 3;

#[derive(Clone, Debug)]
pub struct Model<T> {
    pub config: NetworkConfig,
    pub params: ParamStore<T>,
}

/// Build the parameter registry for `config`, seeded by `config.seed`.
pub fn init_params(config: &NetworkConfig) -> Result<ParamStore<f32>> {
    config.validate()?;
    let [w1, w2, w3, w4] = config.widths;
    let mut store = ParamStore::new();
    let mut init = Initializer::new(ChaCha8Rng::seed_from_u64(config.seed));
    let mut b = Builder::new(&mut store, &mut init);
    init_stem(&mut b, "stem", INPUT_CHANNELS, w1)?;
    init_encoder(&mut b, "enc1", w1, w2)?;
    init_encoder(&mut b, "enc2", w2, w3)?;
    init_encoder(&mut b, "enc3", w3, w4)?;
    init_bottleneck(&mut b, "bottleneck", config)?;
    for (i, &w) in config.widths.iter().enumerate() {
        init_cfma(&mut b, &format!("cfma{i}"), w, &config.cfma)?;
    }
    init_decoder(&mut b, "dec1", w4, w4)?;
    init_decoder(&mut b, "dec2", w4, w3)?;
    init_decoder(&mut b, "dec3", w3, w2)?;
    init_decoder(&mut b, "dec4", w2, w1)?;
    init_head(&mut b, "head", w1)?;
    Ok(store)
}

impl Model<f32> {
    pub fn new(config: NetworkConfig) -> Result<Self> {
        let params = init_params(&config)?;
        Ok(Self { config, params })
    }
}

impl<T: Scalar> Model<T> {
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    /// Probability map for a batch without recording gradients. Train mode
    /// updates the running statistics.
    pub fn predict(&mut self, x: &Tensor<T>, mode: Mode, seed: u64) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let mut cx = Cx::bind(&mut tape, &mut self.params, mode, false, seed);
        let input = cx.input(x.clone());
        let out = forward(&mut cx, input, &self.config)?;
        Ok(cx.value(out).clone())
    }
}

pub fn check_input(shape: &[usize], config: &NetworkConfig) -> Result<()> {
    let s = config.input_size;
    match *shape {
        [n, h, w, c] if n >= 1 && h == s && w == s && c == INPUT_CHANNELS => Ok(()),
        _ => Err(LssfError::Config(format!(
            "input {shape:?} does not match [N, {s}, {s}, {INPUT_CHANNELS}]"
        ))),
    }
}

/// `[N, S, S, 3] -> [N, S, S, 1]` probabilities in (0, 1).
pub fn forward<T: Scalar>(cx: &mut Cx<T>, x: Var, config: &NetworkConfig) -> Result<Var> {
    check_input(cx.shape(x), config)?;
    let (s0, e0) = initial_stem(cx, "stem", x)?;
    let (s1, e1) = encoder_block(cx, "enc1", e0)?;
    let (s2, e2) = encoder_block(cx, "enc2", e1)?;
    let (s3, e3) = encoder_block(cx, "enc3", e2)?;
    let mut d = bottleneck(cx, "bottleneck", e3, config)?.out;
    for (k, skip) in [(1, s3), (2, s2), (3, s1), (4, s0)] {
        let refined = cfma(cx, &format!("cfma{}", 4 - k), skip)?;
        d = decoder_block(cx, &format!("dec{k}"), d, refined)?;
    }
    output_head(cx, "head", d)
}

/// Binary masks `[N, S, S]` with 1 where `prob >= threshold`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    pub shape: [usize; 3],
    pub data: Vec<u8>,
}

impl BinaryMask {
    pub fn image(&self, i: usize) -> &[u8] {
        let per = self.shape[1] * self.shape[2];
        &self.data[i * per..][..per]
    }

    pub fn positives(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }
}

/// Threshold a probability map; the comparison is inclusive, so a value of
/// exactly `threshold` is foreground.
pub fn predict_mask<T: Scalar>(prob: &Tensor<T>, threshold: f64) -> Result<BinaryMask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(LssfError::Config(format!("threshold {threshold} must lie in (0, 1)")));
    }
    let shape = match *prob.shape() {
        [n, h, w, 1] => [n, h, w],
        [n, h, w] => [n, h, w],
        ref s => {
            return Err(LssfError::Config(format!(
                "probability map {s:?} must be [N, H, W, 1]"
            )))
        }
    };
    let data = prob.data().iter().map(|p| u8::from(p.as_f64() >= threshold)).collect();
    Ok(BinaryMask { shape, data })
}

/// Learnable scalars in a registry.
pub fn count_params<T: Scalar>(params: &ParamStore<T>) -> usize {
    params.count()
}
