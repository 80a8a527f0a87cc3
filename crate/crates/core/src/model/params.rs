use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tape, Tensor, Var};

pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

fn specs(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (d, f, h) = (cfg.input_dim(), cfg.d_model, cfg.d_ffn);
    let mut s = vec![
        ("embed.weight".to_string(), vec![f, d, 3], Init::Normal),
        ("embed.bias".into(), vec![f], Init::Zeros),
        ("position".into(), vec![cfg.t_max, f], Init::Normal),
        ("keyframe".into(), vec![3, f], Init::Normal),
        ("norm0.gamma".into(), vec![f], Init::Ones),
        ("norm0.beta".into(), vec![f], Init::Zeros),
    ];
    for l in 0..cfg.layers {
        let p = |n: &str| format!("layer{l}.{n}");
        s.extend([
            (p("query.weight"), vec![f, f], Init::Normal),
            (p("query.bias"), vec![f], Init::Zeros),
            (p("key.weight"), vec![f, f], Init::Normal),
            (p("key.bias"), vec![f], Init::Zeros),
            (p("value.weight"), vec![f, f], Init::Normal),
            (p("value.bias"), vec![f], Init::Zeros),
            (p("proj.weight"), vec![f, f], Init::Normal),
            (p("proj.bias"), vec![f], Init::Zeros),
            (p("norm1.gamma"), vec![f], Init::Ones),
            (p("norm1.beta"), vec![f], Init::Zeros),
            (p("ffn1.weight"), vec![f, h], Init::Normal),
            (p("ffn1.bias"), vec![h], Init::Zeros),
            (p("ffn2.weight"), vec![h, f], Init::Normal),
            (p("ffn2.bias"), vec![f], Init::Zeros),
            (p("norm2.gamma"), vec![f], Init::Ones),
            (p("norm2.beta"), vec![f], Init::Zeros),
        ]);
    }
    s.push(("output.weight".into(), vec![d, f, 3], Init::Normal));
    s.push(("output.bias".into(), vec![d], Init::Zeros));
    s
}

/// Named parameter tensors in a fixed order determined by the config.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    /// Weights and embeddings drawn from `N(0, 0.02^2)`, biases zero, norm
    /// gains one.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("positive std");
        let (names, tensors) = specs(cfg)
            .into_iter()
            .map(|(name, shape, init)| {
                let t = match init {
                    Init::Normal => Tensor::from_fn(&shape, |_| T::lit(normal.sample(&mut rng))),
                    Init::Zeros => Tensor::zeros(&shape),
                    Init::Ones => Tensor::full(&shape, T::one()),
                };
                (name, t)
            })
            .unzip();
        Ok(Self { names, tensors })
    }

    /// Builds a store from `(name, tensor)` pairs, checking them against the
    /// layout `cfg` requires.
    pub fn from_named(cfg: &ModelConfig, entries: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let want = specs(cfg);
        if want.len() != entries.len() {
            return Err(Error::Checkpoint(format!("expected {} parameters, found {}", want.len(), entries.len())));
        }
        for ((name, shape, _), (got, t)) in want.iter().zip(&entries) {
            if name != got || shape.as_slice() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {got} {:?} does not match expected {name} {shape:?}",
                    t.shape()
                )));
            }
        }
        let (names, tensors) = entries.into_iter().unzip();
        Ok(Self { names, tensors })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore { names: self.names.clone(), tensors: self.tensors.iter().map(Tensor::cast).collect() }
    }

    /// Places every tensor on `tape`, as trainable leaves or as constants.
    pub fn bind<'t>(&self, tape: &'t Tape<T>, trainable: bool) -> Vec<Var<'t, T>> {
        self.tensors.iter().map(|t| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) }).collect()
    }
}
