//! Named parameter storage and the freezing unit (parameter groups).

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Graph, Scalar, Tensor, Var};

/// Parameter groups; every parameter belongs to exactly one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Group {
    SpeechEncoder,
    LengthAdapter,
    TextEncoder,
    TextDecoder,
    EncoderAdapters,
    DecoderAdapters,
    Embeddings,
    OutputHead,
}

impl Group {
    pub const ALL: [Group; 8] = [
        Group::SpeechEncoder,
        Group::LengthAdapter,
        Group::TextEncoder,
        Group::TextDecoder,
        Group::EncoderAdapters,
        Group::DecoderAdapters,
        Group::Embeddings,
        Group::OutputHead,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Group::SpeechEncoder => "speech_encoder",
            Group::LengthAdapter => "length_adapter",
            Group::TextEncoder => "text_encoder",
            Group::TextDecoder => "text_decoder",
            Group::EncoderAdapters => "encoder_adapters",
            Group::DecoderAdapters => "decoder_adapters",
            Group::Embeddings => "embeddings",
            Group::OutputHead => "output_head",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Group::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| Error::UnknownGroup(s.to_string()))
    }
}

impl serde::Serialize for Group {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> serde::Deserialize<'de> for Group {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub group: Group,
    pub value: Tensor<T>,
    pub grad: Option<Vec<T>>,
    pub trainable: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, group: Group, value: Tensor<T>) -> ParamId {
        self.params.push(Parameter {
            name: name.into(),
            group,
            value,
            grad: None,
            trainable: true,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Parameter<T>)> {
        self.params.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Copies gradients of bound parameters off a finished tape, adding to
    /// any gradient already held.
    pub fn accumulate_grads(&mut self, graph: &Graph<T>) {
        for (key, grad) in graph.param_grads() {
            let (Some(grad), Some(p)) = (grad, self.params.get_mut(key)) else {
                continue;
            };
            if !p.trainable {
                continue;
            }
            match &mut p.grad {
                Some(acc) => acc.iter_mut().zip(grad).for_each(|(a, &g)| *a += g),
                None => p.grad = Some(grad.to_vec()),
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }
}

/// Forward-pass context: a tape plus the parameters it reads from.
pub struct Ctx<'a, T: Scalar> {
    pub g: &'a mut Graph<T>,
    pub store: &'a ParamStore<T>,
    grad_enabled: bool,
}

impl<'a, T: Scalar> Ctx<'a, T> {
    pub fn new(g: &'a mut Graph<T>, store: &'a ParamStore<T>) -> Self {
        Ctx {
            g,
            store,
            grad_enabled: true,
        }
    }

    /// A context that never tracks gradients.
    pub fn inference(g: &'a mut Graph<T>, store: &'a ParamStore<T>) -> Self {
        Ctx {
            g,
            store,
            grad_enabled: false,
        }
    }

    /// Binds a parameter; it requires grad iff it is trainable.
    pub fn p(&mut self, id: ParamId) -> Var {
        let prm = self.store.get(id);
        self.g.param(id.0, &prm.value, self.grad_enabled && prm.trainable)
    }
}

/// Xavier/Glorot uniform initialization for a fan_in × fan_out matrix.
pub fn xavier_uniform<T: Scalar>(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Tensor<T> {
    xavier_uniform_shaped(rng, fan_in, fan_out, vec![fan_in, fan_out])
}

pub fn xavier_uniform_shaped<T: Scalar>(
    rng: &mut Rng,
    fan_in: usize,
    fan_out: usize,
    shape: Vec<usize>,
) -> Tensor<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| T::of(rng.random_range(-bound..bound)))
        .collect();
    Tensor::from_parts(shape, data)
}
