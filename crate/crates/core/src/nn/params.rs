use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Element, Tensor};

/// How an entry was initialized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Normal with standard deviation `sqrt(2 / fan_in)`.
    KaimingNormal { fan_in: usize },
    Zeros,
    Ones,
}

/// Learned parameters receive gradients; buffers (running statistics) do not.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Param,
    Buffer,
}

#[derive(Clone, Debug)]
pub struct Entry<T: Element> {
    pub name: String,
    pub value: Tensor<T>,
    pub init: Init,
    pub role: Role,
}

/// Named, shaped parameter registry in declaration order.
#[derive(Clone, Debug)]
pub struct ParamStore<T: Element> {
    entries: Vec<Entry<T>>,
    index: HashMap<String, usize>,
}

impl<T: Element> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new(), index: HashMap::new() }
    }

    pub fn insert(&mut self, name: String, value: Tensor<T>, init: Init, role: Role) -> Result<()> {
        if self.index.contains_key(&name) {
            return Err(Error::invalid("ParamStore", format!("duplicate parameter name `{name}`")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(Entry { name, value, init, role });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.entries[i].value)
    }

    pub fn entry(&self, name: &str) -> Option<&Entry<T>> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<T>> {
        self.get(name).ok_or_else(|| Error::invalid("ParamStore", format!("no parameter named `{name}`")))
    }

    /// Replace a value, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let i = *self
            .index
            .get(name)
            .ok_or_else(|| Error::invalid("ParamStore", format!("no parameter named `{name}`")))?;
        let e = &mut self.entries[i];
        if e.value.shape() != value.shape() {
            return Err(Error::shape(
                "ParamStore::set",
                format!("`{name}` has shape {:?}, got {:?}", e.value.shape(), value.shape()),
            ));
        }
        e.value = value;
        Ok(())
    }

    pub fn entries(&self) -> &[Entry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [Entry<T>] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn params(&self) -> impl Iterator<Item = &Entry<T>> {
        self.entries.iter().filter(|e| e.role == Role::Param)
    }

    /// Number of learned scalars (buffers excluded).
    pub fn num_params(&self) -> usize {
        self.params().map(|e| e.value.numel()).sum()
    }

    /// Learned scalars whose name starts with `prefix`.
    pub fn num_params_under(&self, prefix: &str) -> usize {
        self.params().filter(|e| e.name.starts_with(prefix)).map(|e| e.value.numel()).sum()
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| Entry { name: e.name.clone(), value: e.value.cast(), init: e.init, role: e.role })
                .collect(),
            index: self.index.clone(),
        }
    }

    /// True when names, shapes and values agree bit for bit.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.name == b.name && a.role == b.role && a.value.bit_eq(&b.value))
    }
}

/// Declares parameters into a store. Each entry draws from its own stream
/// forked from the root seed by name, so values do not depend on the order
/// in which blocks are declared.
pub struct Builder<'a, T: Element> {
    store: &'a mut ParamStore<T>,
    root: Rng,
}

impl<'a, T: Element> Builder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, seed: u64) -> Self {
        Builder { store, root: Rng::new(seed).fork_named("params") }
    }

    pub fn kaiming(&mut self, name: String, shape: &[usize], fan_in: usize) -> Result<()> {
        let mut rng = self.root.fork_named(&name);
        let std = (2.0 / fan_in as f64).sqrt();
        let t = Tensor::from_fn(shape, |_| T::of(std * rng.normal()));
        self.store.insert(name, t, Init::KaimingNormal { fan_in }, Role::Param)
    }

    pub fn zeros(&mut self, name: String, shape: &[usize]) -> Result<()> {
        self.store.insert(name, Tensor::zeros(shape), Init::Zeros, Role::Param)
    }

    pub fn ones(&mut self, name: String, shape: &[usize]) -> Result<()> {
        self.store.insert(name, Tensor::ones(shape), Init::Ones, Role::Param)
    }

    pub fn buffer(&mut self, name: String, value: Tensor<T>, init: Init) -> Result<()> {
        self.store.insert(name, value, init, Role::Buffer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::<f32>::new();
        let mut b = Builder::new(&mut s, 1);
        b.zeros("a".into(), &[2]).unwrap();
        assert!(b.zeros("a".into(), &[3]).is_err());
    }

    #[test]
    fn draws_do_not_depend_on_order() {
        let mut s1 = ParamStore::<f32>::new();
        let mut b = Builder::new(&mut s1, 9);
        b.kaiming("x".into(), &[4, 4], 4).unwrap();
        b.kaiming("y".into(), &[3], 3).unwrap();
        let mut s2 = ParamStore::<f32>::new();
        let mut b = Builder::new(&mut s2, 9);
        b.kaiming("y".into(), &[3], 3).unwrap();
        b.kaiming("x".into(), &[4, 4], 4).unwrap();
        assert!(s1.get("x").unwrap().bit_eq(s2.get("x").unwrap()));
        assert!(s1.get("y").unwrap().bit_eq(s2.get("y").unwrap()));
    }

    #[test]
    fn buffers_are_not_counted() {
        let mut s = ParamStore::<f64>::new();
        let mut b = Builder::new(&mut s, 0);
        b.ones("g".into(), &[4]).unwrap();
        b.buffer("m".into(), Tensor::zeros(&[4]), Init::Zeros).unwrap();
        assert_eq!(s.num_params(), 4);
        assert_eq!(s.len(), 2);
    }
}
