use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{ModelError, ModelRng};
use crate::numerics::{ParamId, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    Xavier,
    Normal(f64),
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize], init: Init) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            init,
        }
    }
}

fn sample(spec: &ParamSpec, rng: &mut ModelRng) -> Tensor {
    let n: usize = spec.shape.iter().product();
    let data = match spec.init {
        Init::Zeros => vec![0.0; n],
        Init::Ones => vec![1.0; n],
        Init::Normal(std) => {
            let d = Normal::new(0.0, std).expect("finite std");
            (0..n).map(|_| d.sample(rng)).collect()
        }
        Init::Xavier => {
            let (fan_in, fan_out) = match spec.shape[..] {
                [a, b] => (a, b),
                [a] => (a, a),
                _ => (n, n),
            };
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
        }
    };
    Tensor::new(spec.shape.clone(), data).expect("spec shape")
}

pub(crate) fn init_store(specs: &[ParamSpec], rng: &mut ModelRng) -> Result<ParamStore, ModelError> {
    let mut store = ParamStore::new();
    for spec in specs {
        store.add(spec.name.clone(), sample(spec, rng))?;
    }
    Ok(store)
}

/// Looks up every spec in `store`, checking shapes and that nothing else is
/// present.
pub(crate) fn bind(specs: &[ParamSpec], store: &ParamStore) -> Result<HashMap<String, ParamId>, ModelError> {
    if store.len() != specs.len() {
        return Err(ModelError::ParamCount {
            expected: specs.len(),
            found: store.len(),
        });
    }
    let mut ids = HashMap::new();
    for spec in specs {
        let id = store.id(&spec.name).ok_or_else(|| ModelError::MissingParam(spec.name.clone()))?;
        let found = store.get(id).value().shape();
        if found != spec.shape.as_slice() {
            return Err(ModelError::ParamShape {
                name: spec.name.clone(),
                expected: spec.shape.clone(),
                found: found.to_vec(),
            });
        }
        ids.insert(spec.name.clone(), id);
    }
    Ok(ids)
}

pub(crate) struct Ids(pub HashMap<String, ParamId>);

impl Ids {
    pub fn get(&self, name: &str) -> ParamId {
        self.0[name]
    }
}
