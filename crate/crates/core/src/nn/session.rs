use std::collections::HashMap;
use std::ops::{Deref, DerefMut};

use crate::autograd::{Graph, Var};
use crate::error::Result;
use crate::tensor::kernels::NormStats;
use crate::tensor::Element;

use super::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Batch statistics in normalization layers; auxiliary heads active.
    Train,
    /// Running statistics; auxiliary heads skipped.
    Eval,
}

/// One forward pass: a tape plus parameter bindings.
///
/// Parameters are bound lazily the first time a layer asks for them, as
/// gradient-receiving leaves when `learn` is set and as constants
/// otherwise. Callers may also pre-bind names to existing variables.
pub struct Session<'a, T: Element> {
    graph: &'a mut Graph<T>,
    store: &'a ParamStore<T>,
    bound: HashMap<String, Var>,
    order: Vec<String>,
    pub mode: Mode,
    learn: bool,
    /// Batch statistics observed by batch-norm layers, by layer name.
    pub norm_stats: Vec<(String, NormStats<T>)>,
    probes: Option<Vec<(String, Var)>>,
}

impl<'a, T: Element> Session<'a, T> {
    pub fn new(graph: &'a mut Graph<T>, store: &'a ParamStore<T>, mode: Mode, learn: bool) -> Self {
        Session {
            graph,
            store,
            bound: HashMap::new(),
            order: Vec::new(),
            mode,
            learn,
            norm_stats: Vec::new(),
            probes: None,
        }
    }

    /// Bind `name` to an existing variable instead of the stored value.
    pub fn bind(&mut self, name: &str, v: Var) {
        if self.bound.insert(name.to_string(), v).is_none() {
            self.order.push(name.to_string());
        }
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let t = self.store.require(name)?.clone();
        let is_param = self.store.entry(name).is_some_and(|e| e.role == super::params::Role::Param);
        let v = if self.learn && is_param { self.graph.param(t) } else { self.graph.constant(t) };
        self.bind(name, v);
        Ok(v)
    }

    /// Stored value of a parameter or buffer, bypassing the tape.
    pub fn stored(&self, name: &str) -> Result<&crate::tensor::Tensor<T>> {
        self.store.require(name)
    }

    /// Parameters bound so far, in first-use order.
    pub fn bindings(&self) -> impl Iterator<Item = (&str, Var)> {
        self.order.iter().map(|n| (n.as_str(), self.bound[n]))
    }

    pub fn enable_probes(&mut self) {
        self.probes = Some(Vec::new());
    }

    /// Record an intermediate for later inspection, if probing is enabled.
    pub fn probe(&mut self, name: impl Into<String>, v: Var) {
        if let Some(p) = &mut self.probes {
            p.push((name.into(), v));
        }
    }

    pub fn probes(&self) -> &[(String, Var)] {
        self.probes.as_deref().unwrap_or(&[])
    }

    pub fn graph(&self) -> &Graph<T> {
        self.graph
    }
}

impl<T: Element> Deref for Session<'_, T> {
    type Target = Graph<T>;

    fn deref(&self) -> &Graph<T> {
        self.graph
    }
}

impl<T: Element> DerefMut for Session<'_, T> {
    fn deref_mut(&mut self) -> &mut Graph<T> {
        self.graph
    }
}
