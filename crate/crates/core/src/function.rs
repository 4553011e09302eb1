//! Leaf-constant vector functions.

use crate::dyadic::{CubeId, MeasuredTree};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// An ℝ^d value per leaf, stored leaf-major in Morton leaf order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeafFunction {
    d: usize,
    values: Vec<f64>,
}

impl LeafFunction {
    pub fn new(d: usize, values: Vec<f64>) -> Result<Self> {
        if d == 0 || values.len() % d != 0 {
            return Err(Error::Invalid(format!(
                "{} values do not split into d = {d}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite function value".into()));
        }
        Ok(LeafFunction { d, values })
    }

    pub fn zeros(leaves: usize, d: usize) -> Self {
        LeafFunction {
            d,
            values: vec![0.0; leaves * d],
        }
    }

    pub fn scalar(values: Vec<f64>) -> Self {
        LeafFunction { d: 1, values }
    }

    pub fn from_fn(leaves: usize, d: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(leaves * d);
        for x in 0..leaves {
            for i in 0..d {
                values.push(f(x, i));
            }
        }
        LeafFunction { d, values }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn num_leaves(&self) -> usize {
        self.values.len() / self.d
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn at(&self, leaf: usize) -> &[f64] {
        &self.values[leaf * self.d..(leaf + 1) * self.d]
    }

    #[inline]
    pub fn at_mut(&mut self, leaf: usize) -> &mut [f64] {
        &mut self.values[leaf * self.d..(leaf + 1) * self.d]
    }

    pub fn component(&self, i: usize) -> LeafFunction {
        LeafFunction::scalar(
            self.values
                .iter()
                .skip(i)
                .step_by(self.d)
                .cloned()
                .collect(),
        )
    }

    pub fn check_tree(&self, tree: &MeasuredTree) -> Result<()> {
        if self.num_leaves() != tree.num_leaves() {
            return Err(Error::Structure(format!(
                "function has {} leaves, tree has {}",
                self.num_leaves(),
                tree.num_leaves()
            )));
        }
        Ok(())
    }

    /// ⟨f⟩_Q.
    pub fn average(&self, tree: &MeasuredTree, q: &CubeId) -> Vec<f64> {
        let mass = tree.leaf_masses();
        let mut acc = vec![0.0; self.d];
        for x in tree.leaf_range(q) {
            for (a, v) in acc.iter_mut().zip(self.at(x)) {
                *a += v * mass[x];
            }
        }
        let m = tree.mu(q);
        acc.iter_mut().for_each(|a| *a /= m);
        acc
    }

    /// ∫|f| dμ with the Euclidean norm on ℝ^d.
    pub fn l1_norm(&self, tree: &MeasuredTree) -> f64 {
        let mass = tree.leaf_masses();
        (0..self.num_leaves())
            .map(|x| crate::linalg::norm(self.at(x)) * mass[x])
            .sum()
    }

    pub fn lp_norm(&self, tree: &MeasuredTree, p: f64) -> f64 {
        let mass = tree.leaf_masses();
        let s: f64 = (0..self.num_leaves())
            .map(|x| crate::linalg::norm(self.at(x)).powf(p) * mass[x])
            .sum();
        s.powf(1.0 / p)
    }

    pub fn max_abs(&self) -> f64 {
        (0..self.num_leaves())
            .map(|x| crate::linalg::norm(self.at(x)))
            .fold(0.0, f64::max)
    }

    /// a·self + b·other.
    pub fn combine(&self, a: f64, other: &LeafFunction, b: f64) -> LeafFunction {
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        LeafFunction { d: self.d, values }
    }

    /// Copy restricted to the leaves of `q`.
    pub fn restrict(&self, tree: &MeasuredTree, q: &CubeId) -> LeafFunction {
        let r = tree.leaf_range(q);
        let mut out = LeafFunction::zeros(self.num_leaves(), self.d);
        out.values[r.start * self.d..r.end * self.d]
            .copy_from_slice(&self.values[r.start * self.d..r.end * self.d]);
        out
    }

    /// ∫ f·g dμ.
    pub fn inner(&self, tree: &MeasuredTree, other: &LeafFunction) -> f64 {
        let mass = tree.leaf_masses();
        (0..self.num_leaves())
            .map(|x| crate::linalg::dot(self.at(x), other.at(x)) * mass[x])
            .sum()
    }
}
