use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{AutodiffError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a trainable tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    /// Accumulated gradient, zero-initialized and same shape as `value`.
    pub grad: Tensor<T>,
}

/// Named trainable tensors with gradient accumulators, in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(AutodiffError::DuplicateParameter(name));
        }
        let id = self.params.len();
        self.index.insert(name.clone(), id);
        let grad = Tensor::zeros(value.shape());
        self.params.push(Param { name, value, grad });
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Total number of scalar weights.
    pub fn num_weights(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill_zero();
        }
    }

    /// Replaces a parameter value, keeping its shape.
    pub fn set_value(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| AutodiffError::UnknownParameter(name.to_string()))?;
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "set_value",
                lhs: p.value.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        p.value = value;
        Ok(())
    }

    /// Copy of the store in another precision, with zeroed gradients.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: Tensor::zeros(p.value.shape()),
                })
                .collect(),
            index: self.index.clone(),
        }
    }
}

/// Weight initializers.
pub mod init {
    use super::*;

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn uniform_fan_in<T: Scalar, R: Rng + ?Sized>(
        rng: &mut R,
        shape: &[usize],
        fan_in: usize,
    ) -> Tensor<T> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| T::from_f64(rng.gen_range(-bound..=bound)))
            .collect();
        Tensor::new(shape, data).expect("shape product matches")
    }

    /// `[rows, blocks * rows]` matrix whose `rows x rows` column blocks are
    /// each orthogonal (Gram-Schmidt on Gaussian draws).
    pub fn orthogonal_blocks<T: Scalar, R: Rng + ?Sized>(
        rng: &mut R,
        rows: usize,
        blocks: usize,
    ) -> Tensor<T> {
        let cols = rows * blocks;
        let mut out = vec![T::zero(); rows * cols];
        for blk in 0..blocks {
            let q = orthogonal(rng, rows);
            for i in 0..rows {
                for j in 0..rows {
                    out[i * cols + blk * rows + j] = T::from_f64(q[i * rows + j]);
                }
            }
        }
        Tensor::new(&[rows, cols], out).expect("shape product matches")
    }

    fn orthogonal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
        // Columns orthonormalized by modified Gram-Schmidt; redraw on degeneracy.
        loop {
            let mut cols: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..n).map(|_| StandardNormal.sample(rng)).collect())
                .collect();
            let mut ok = true;
            for j in 0..n {
                for p in 0..j {
                    let dot: f64 = (0..n).map(|i| cols[j][i] * cols[p][i]).sum();
                    for i in 0..n {
                        cols[j][i] -= dot * cols[p][i];
                    }
                }
                let norm = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm < 1e-8 {
                    ok = false;
                    break;
                }
                cols[j].iter_mut().for_each(|v| *v /= norm);
            }
            if ok {
                let mut m = vec![0.0; n * n];
                for (j, c) in cols.iter().enumerate() {
                    for i in 0..n {
                        m[i * n + j] = c[i];
                    }
                }
                return m;
            }
        }
    }
}
