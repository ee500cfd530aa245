//! Named, shaped parameter arrays.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::{Error, Result};

/// Storage precision of a parameter. Values are always computed in `f64`;
/// `F32` entries are rounded to single precision whenever they are written,
/// which makes them exactly representable in the checkpoint format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Dtype {
    #[default]
    F32,
    F64,
}

impl Dtype {
    #[inline]
    pub fn round(self, v: f64) -> f64 {
        match self {
            Dtype::F32 => v as f32 as f64,
            Dtype::F64 => v,
        }
    }

    pub fn size_of(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "f32" => Some(Dtype::F32),
            "f64" => Some(Dtype::F64),
            _ => None,
        }
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    shape: Vec<usize>,
    dtype: Dtype,
    values: Vec<f64>,
}

impl Param {
    pub fn new(shape: Vec<usize>, dtype: Dtype, values: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::dims(&[n], &[values.len()]));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        let values = values.into_iter().map(|v| dtype.round(v)).collect();
        Ok(Self { shape, dtype, values })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Every learnable array of a model, keyed by a dotted name such as
/// `h_d2c.head.w`. Shapes are fixed at insertion.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterSet {
    entries: BTreeMap<String, Param>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, param: Param) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::InvalidConfig(alloc::format!("parameter `{name}` defined twice")));
        }
        self.entries.insert(name.to_string(), param);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalars across all entries.
    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(Param::len).sum()
    }

    /// Number of scalars in entries whose name starts with `prefix`.
    pub fn num_scalars_with_prefix(&self, prefix: &str) -> usize {
        self.iter().filter(|(n, _)| n.starts_with(prefix)).map(|(_, p)| p.len()).sum()
    }

    /// Replaces the values of an entry, keeping shape and dtype.
    pub fn set_values(&mut self, name: &str, values: &[f64]) -> Result<()> {
        let p = self.entries.get_mut(name).ok_or_else(|| Error::MissingParam(name.to_string()))?;
        if values.len() != p.values.len() {
            return Err(Error::ShapeMismatch {
                name: name.to_string(),
                expected: p.shape.clone(),
                found: alloc::vec![values.len()],
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        for (d, s) in p.values.iter_mut().zip(values) {
            *d = p.dtype.round(*s);
        }
        Ok(())
    }

    /// Sets a single scalar of an entry.
    pub fn set_value(&mut self, name: &str, index: usize, value: f64) -> Result<()> {
        let p = self.entries.get_mut(name).ok_or_else(|| Error::MissingParam(name.to_string()))?;
        let len = p.values.len();
        let dtype = p.dtype;
        let slot = p.values.get_mut(index).ok_or_else(|| Error::dims(&[len], &[index]))?;
        *slot = dtype.round(value);
        Ok(())
    }

    pub fn fill(&mut self, name: &str, value: f64) -> Result<()> {
        let p = self.entries.get_mut(name).ok_or_else(|| Error::MissingParam(name.to_string()))?;
        let v = p.dtype.round(value);
        p.values.iter_mut().for_each(|x| *x = v);
        Ok(())
    }

    /// Zeroes every entry whose name starts with `prefix`; returns how many.
    pub fn zero_prefix(&mut self, prefix: &str) -> usize {
        let mut count = 0;
        for (name, p) in self.entries.iter_mut() {
            if name.starts_with(prefix) {
                p.values.iter_mut().for_each(|v| *v = 0.0);
                count += 1;
            }
        }
        count
    }

    /// Moves every entry of `other` into `self`; names must not collide.
    pub fn merge(&mut self, other: ParameterSet) -> Result<()> {
        for (name, p) in other.entries {
            self.insert(&name, p)?;
        }
        Ok(())
    }

    /// Copy with every entry converted to `dtype`.
    pub fn with_dtype(&self, dtype: Dtype) -> ParameterSet {
        let entries = self
            .entries
            .iter()
            .map(|(k, p)| {
                let values = p.values.iter().map(|v| dtype.round(*v)).collect();
                (k.clone(), Param { shape: p.shape.clone(), dtype, values })
            })
            .collect();
        ParameterSet { entries }
    }

    /// Checks that `other` has exactly the same names and shapes.
    pub fn ensure_compatible(&self, other: &ParameterSet) -> Result<()> {
        for (name, p) in &self.entries {
            match other.entries.get(name) {
                None => return Err(Error::MissingParam(name.clone())),
                Some(q) if q.shape != p.shape => {
                    return Err(Error::ShapeMismatch {
                        name: name.clone(),
                        expected: p.shape.clone(),
                        found: q.shape.clone(),
                    })
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = other.entries.keys().find(|k| !self.entries.contains_key(*k)) {
            return Err(Error::ShapeMismatch { name: extra.clone(), expected: Vec::new(), found: other.entries[extra].shape.clone() });
        }
        Ok(())
    }
}
