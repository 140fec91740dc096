//! Flat name -> tensor registry of learnable parameters, plus batch-norm
//! running statistics kept alongside under the owning layer's prefix.

use indexmap::IndexMap;
use lssf_tensor::{Scalar, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{LssfError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct BnBuffers<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> BnBuffers<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }

    pub fn cast<U: Scalar>(&self) -> BnBuffers<U> {
        let c = |v: &[T]| v.iter().map(|x| U::of(x.as_f64())).collect();
        BnBuffers {
            mean: c(&self.mean),
            var: c(&self.var),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<T> {
    params: IndexMap<String, Tensor<T>>,
    pub(crate) bn: IndexMap<String, BnBuffers<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: IndexMap::new(),
            bn: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(LssfError::DuplicateParam(name));
        }
        self.params.insert(name, value);
        Ok(())
    }

    pub fn insert_bn(&mut self, prefix: impl Into<String>, buffers: BnBuffers<T>) -> Result<()> {
        let prefix = prefix.into();
        if self.bn.contains_key(&prefix) {
            return Err(LssfError::DuplicateParam(prefix));
        }
        self.bn.insert(prefix, buffers);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .get(name)
            .ok_or_else(|| LssfError::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.params
            .get_mut(name)
            .ok_or_else(|| LssfError::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn bn(&self, prefix: &str) -> Result<&BnBuffers<T>> {
        self.bn
            .get(prefix)
            .ok_or_else(|| LssfError::MissingParam(format!("{prefix} (running stats)")))
    }

    pub fn bn_mut(&mut self, prefix: &str) -> Result<&mut BnBuffers<T>> {
        self.bn
            .get_mut(prefix)
            .ok_or_else(|| LssfError::MissingParam(format!("{prefix} (running stats)")))
    }

    /// Parameters in registration order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn bn_iter(&self) -> impl Iterator<Item = (&str, &BnBuffers<T>)> {
        self.bn.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    /// Number of parameter tensors.
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total learnable scalars; running statistics are not counted.
    pub fn count(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            bn: self.bn.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Registered under the given prefix (`"{prefix}."` or the prefix itself).
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a Tensor<T>)> + 'a {
        self.iter().filter(move |(k, _)| {
            k.strip_prefix(prefix)
                .is_some_and(|rest| rest.is_empty() || rest.starts_with('.'))
        })
    }

    /// Zero every parameter under a prefix.
    pub fn zero_prefix(&mut self, prefix: &str) -> usize {
        let mut n = 0;
        for (k, v) in self.params.iter_mut() {
            let hit = k
                .strip_prefix(prefix)
                .is_some_and(|rest| rest.is_empty() || rest.starts_with('.'));
            if hit {
                v.data_mut().fill(T::zero());
                n += 1;
            }
        }
        n
    }
}

/// Seeded weight initializers used while building a [`ParamStore`].
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(rng: ChaCha8Rng) -> Self {
        Self { rng }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn normal(&mut self, shape: Vec<usize>, std: f64) -> Tensor<f32> {
        if std == 0.0 {
            return Tensor::zeros(shape);
        }
        let dist = Normal::new(0.0, std).expect("finite std");
        Tensor::from_fn(shape, |_| dist.sample(&mut self.rng) as f32)
    }

    /// He-normal: std `sqrt(2 / fan_in)`.
    pub fn he_normal(&mut self, shape: Vec<usize>, fan_in: usize) -> Tensor<f32> {
        self.normal(shape, (2.0 / fan_in as f64).sqrt())
    }

    pub fn uniform(&mut self, shape: Vec<usize>, lo: f32, hi: f32) -> Tensor<f32> {
        Tensor::from_fn(shape, |_| self.rng.gen_range(lo..hi))
    }
}
