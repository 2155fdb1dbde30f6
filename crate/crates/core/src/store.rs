//! Ordered, named tensor storage. Layers refer to their tensors through
//! [`Handle`]s, so optimizers, checkpoints, gradient checks and the
//! parameter inventory all walk the same list.

use crate::error::{FgcnnError, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Handle(usize);

impl Handle {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> TensorStore<T> {
    pub fn new() -> Self {
        TensorStore {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Handle {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate tensor name {name}");
        self.names.push(name);
        self.tensors.push(tensor);
        Handle(self.tensors.len() - 1)
    }

    pub fn get(&self, h: Handle) -> &Tensor<T> {
        &self.tensors[h.0]
    }

    pub fn get_mut(&mut self, h: Handle) -> &mut Tensor<T> {
        &mut self.tensors[h.0]
    }

    pub fn name(&self, h: Handle) -> &str {
        &self.names[h.0]
    }

    pub fn find(&self, name: &str) -> Option<Handle> {
        self.names.iter().position(|n| n == name).map(Handle)
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

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Same names and shapes, all zeros. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        TensorStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::zeros_like).collect(),
        }
    }

    pub fn num_elements(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Every element, in store order, widened to `f64`.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors
            .iter()
            .flat_map(|t| t.data().iter().map(|v| v.as_f64()))
            .collect()
    }

    pub fn load_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_elements() {
            return Err(FgcnnError::shape(
                "TensorStore::load_flat",
                format!("{} values for {} elements", values.len(), self.num_elements()),
            ));
        }
        let mut it = values.iter();
        for t in &mut self.tensors {
            for v in t.data_mut() {
                *v = T::lit(*it.next().expect("length checked"));
            }
        }
        Ok(())
    }

    /// Fails on the first tensor containing a NaN or infinity.
    pub fn check_finite(&self) -> Result<()> {
        for (name, t) in self.iter() {
            t.check_finite(name)?;
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> TensorStore<U> {
        TensorStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Replace tensors by name from `(name, tensor)` pairs; every entry of
    /// this store must be supplied with a matching shape.
    pub fn assign_all(&mut self, entries: Vec<(String, Tensor<T>)>) -> Result<()> {
        if entries.len() != self.len() {
            return Err(FgcnnError::Corrupt(format!(
                "expected {} tensors, found {}",
                self.len(),
                entries.len()
            )));
        }
        for (name, tensor) in entries {
            let h = self
                .find(&name)
                .ok_or_else(|| FgcnnError::Corrupt(format!("unexpected tensor `{name}`")))?;
            if self.get(h).shape() != tensor.shape() {
                return Err(FgcnnError::Corrupt(format!(
                    "tensor `{name}` has shape {:?}, model expects {:?}",
                    tensor.shape(),
                    self.get(h).shape()
                )));
            }
            *self.get_mut(h) = tensor;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flatten_and_load_round_trip() {
        let mut s = TensorStore::<f64>::new();
        let a = s.push("a", Tensor::full(&[2], 1.0));
        let b = s.push("b", Tensor::full(&[1, 3], 2.0));
        let flat = s.flatten();
        assert_eq!(flat, vec![1.0, 1.0, 2.0, 2.0, 2.0]);
        let mut z = s.zeros_like();
        z.load_flat(&flat).unwrap();
        assert_eq!(z, s);
        assert_eq!(s.find("b"), Some(b));
        assert_eq!(s.name(a), "a");
        assert!(z.load_flat(&[0.0]).is_err());
    }
}
