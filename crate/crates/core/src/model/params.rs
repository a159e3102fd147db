use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numeric::{Element, NdArray};

/// Named parameter tensors in a stable (sorted) order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    params: BTreeMap<String, Arc<NdArray<T>>>,
}

impl<T: Element> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore {
            params: BTreeMap::new(),
        }
    }
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: NdArray<T>) {
        self.params.insert(name.into(), Arc::new(value));
    }

    pub fn get(&self, name: &str) -> Option<&Arc<NdArray<T>>> {
        self.params.get(name)
    }

    pub fn require(&self, name: &str) -> Result<&Arc<NdArray<T>>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::config(format!("missing parameter {name}")))
    }

    /// Copy-on-write access for optimizer updates.
    pub fn get_mut(&mut self, name: &str) -> Option<&mut NdArray<T>> {
        self.params.get_mut(name).map(Arc::make_mut)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Arc<NdArray<T>>)> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.params.values().map(|p| p.len()).sum()
    }

    /// Bitwise equality of every tensor.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|((na, a), (nb, b))| {
                na == nb
                    && a.shape() == b.shape()
                    && a.data()
                        .iter()
                        .zip(b.data())
                        .all(|(x, y)| x.to_bits_u64() == y.to_bits_u64())
            })
    }
}

trait Bits {
    fn to_bits_u64(&self) -> u64;
}

impl<T: Element> Bits for T {
    fn to_bits_u64(&self) -> u64 {
        let mut buf = Vec::with_capacity(8);
        self.write_le(&mut buf);
        buf.resize(8, 0);
        u64::from_le_bytes(buf.try_into().expect("8 bytes"))
    }
}

/// Normal(0, std) resampled until within two standard deviations.
pub fn trunc_normal<T: Element, R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> NdArray<T> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let z: f64 = StandardNormal.sample(rng);
            if z.abs() <= 2.0 {
                break T::of(z * std);
            }
        })
        .collect();
    NdArray::new(shape.to_vec(), data).expect("shape matches")
}
