use std::collections::HashMap;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tape::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named parameter matrices in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.values.len());
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Mat)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Replaces values by name; shapes must match.
    pub fn load_from(&mut self, other: &[(String, Mat)]) -> Result<(), String> {
        for (name, value) in other {
            let id = self.id(name).ok_or_else(|| format!("unknown parameter {name}"))?;
            if self.values[id.0].dim() != value.dim() {
                return Err(format!(
                    "parameter {name}: expected shape {:?}, found {:?}",
                    self.values[id.0].dim(),
                    value.dim()
                ));
            }
            self.values[id.0] = value.clone();
        }
        if other.len() != self.len() {
            return Err(format!("expected {} parameters, found {}", self.len(), other.len()));
        }
        Ok(())
    }
}

/// Adds parameters under a name prefix with seeded initialization.
pub struct Builder<'s, R: Rng> {
    pub store: &'s mut ParamStore,
    pub rng: &'s mut R,
    prefix: String,
}

impl<'s, R: Rng> Builder<'s, R> {
    pub fn new(store: &'s mut ParamStore, rng: &'s mut R) -> Self {
        Builder {
            store,
            rng,
            prefix: String::new(),
        }
    }

    pub fn scoped<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> T) -> T {
        let saved = self.prefix.clone();
        self.prefix = format!("{saved}{name}.");
        let out = f(self);
        self.prefix = saved;
        out
    }

    pub fn normal(&mut self, name: &str, rows: usize, cols: usize, std: f64) -> ParamId {
        let dist = Normal::new(0.0, std).expect("positive std");
        let m = Array2::from_shape_simple_fn((rows, cols), || dist.sample(self.rng));
        self.store.add(format!("{}{name}", self.prefix), m)
    }

    /// Xavier-style normal init for an `rows × cols` weight.
    pub fn weight(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        let std = (2.0 / (rows + cols) as f64).sqrt();
        self.normal(name, rows, cols, std)
    }

    pub fn constant(&mut self, name: &str, rows: usize, cols: usize, value: f64) -> ParamId {
        self.store
            .add(format!("{}{name}", self.prefix), Array2::from_elem((rows, cols), value))
    }
}
