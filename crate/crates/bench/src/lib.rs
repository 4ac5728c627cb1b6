//! Shared fixtures for the benchmarks.

use lightformer::nn::{Builder, ParamStore};
use lightformer::rng::Rng;
use lightformer::{Element, Result, Tensor};

pub fn random<T: Element>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut r = Rng::new(seed);
    Tensor::from_fn(shape, |_| T::of(r.uniform(-1.0, 1.0)))
}

/// Store holding whatever `declare` registers, initialized from `seed`.
pub fn store<T: Element>(seed: u64, declare: impl FnOnce(&mut Builder<'_, T>) -> Result<()>) -> ParamStore<T> {
    let mut s = ParamStore::new();
    declare(&mut Builder::new(&mut s, seed)).expect("declaration is valid");
    s
}
