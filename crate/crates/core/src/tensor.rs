//! Dense 2-way / 3-way tensors and their PARAFAC (CP) representation.
//!
//! Storage is row-major over an explicit `dims` vector. The one non-obvious
//! operation here is [`margin_design_vector`]: contracting an image against
//! every margin of a rank-1 component except one. The result `v` satisfies
//! `<X, component_r> = v . margins[r][j]`, which is what turns each margin
//! update into a linear-Gaussian regression.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_order(dims: &[usize]) -> Result<()> {
    match dims.len() {
        2 | 3 => Ok(()),
        d => Err(Error::UnsupportedOrder(d)),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseTensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_order(&dims)?;
        if dims.iter().any(|&p| p == 0) {
            return Err(Error::invalid(format!("tensor dims must be positive, got {dims:?}")));
        }
        let len: usize = dims.iter().product();
        if data.len() != len {
            return Err(Error::DataLength {
                dims,
                len: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        let len = dims.iter().product();
        Self::new(dims.to_vec(), vec![0.0; len])
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let mut t = Self::zeros(dims)?;
        let mut idx = vec![0usize; dims.len()];
        for cell in t.data.iter_mut() {
            *cell = f(&idx);
            for axis in (0..idx.len()).rev() {
                idx[axis] += 1;
                if idx[axis] < dims[axis] {
                    break;
                }
                idx[axis] = 0;
            }
        }
        Ok(t)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn flat_index(&self, idx: &[usize]) -> Result<usize> {
        if idx.len() != self.dims.len() {
            return Err(Error::ShapeMismatch {
                expected: self.dims.clone(),
                actual: idx.to_vec(),
            });
        }
        let mut flat = 0;
        for (axis, (&i, &p)) in idx.iter().zip(&self.dims).enumerate() {
            if i >= p {
                return Err(Error::IndexOutOfRange {
                    what: ["axis 0", "axis 1", "axis 2"][axis],
                    index: i,
                    limit: p,
                });
            }
            flat = flat * p + i;
        }
        Ok(flat)
    }

    pub fn get(&self, idx: &[usize]) -> Result<f64> {
        Ok(self.data[self.flat_index(idx)?])
    }

    /// Multi-index of a flat (row-major) offset.
    pub fn unravel(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dims.len()];
        for axis in (0..self.dims.len()).rev() {
            idx[axis] = flat % self.dims[axis];
            flat /= self.dims[axis];
        }
        idx
    }

    pub fn add(&self, other: &DenseTensor) -> Result<DenseTensor> {
        self.check_same_dims(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(DenseTensor {
            dims: self.dims.clone(),
            data,
        })
    }

    pub fn scale(&self, s: f64) -> DenseTensor {
        DenseTensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub(crate) fn check_same_dims(&self, other: &DenseTensor) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::ShapeMismatch {
                expected: self.dims.clone(),
                actual: other.dims.clone(),
            });
        }
        Ok(())
    }
}

/// Sum over all cells of the elementwise product.
pub fn inner_product(x: &DenseTensor, b: &DenseTensor) -> Result<f64> {
    x.check_same_dims(b)?;
    Ok(dot(&x.data, &b.data))
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Rank-R PARAFAC coefficient: `margins[r][j]` is a vector of length `dims[j]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParafacCoef {
    dims: Vec<usize>,
    margins: Vec<Vec<Vec<f64>>>,
}

impl ParafacCoef {
    pub fn new(dims: Vec<usize>, margins: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        check_order(&dims)?;
        if margins.is_empty() {
            return Err(Error::invalid("PARAFAC rank must be at least 1"));
        }
        for component in &margins {
            let actual: Vec<usize> = component.iter().map(Vec::len).collect();
            if actual != dims {
                return Err(Error::ShapeMismatch {
                    expected: dims.clone(),
                    actual,
                });
            }
        }
        Ok(Self { dims, margins })
    }

    pub fn zeros(dims: &[usize], rank: usize) -> Result<Self> {
        let margins = (0..rank)
            .map(|_| dims.iter().map(|&p| vec![0.0; p]).collect())
            .collect();
        Self::new(dims.to_vec(), margins)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.margins.len()
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn margins(&self) -> &[Vec<Vec<f64>>] {
        &self.margins
    }

    pub fn margin(&self, r: usize, j: usize) -> &[f64] {
        &self.margins[r][j]
    }

    /// Mutable view of one margin; its length is fixed.
    pub fn margin_mut(&mut self, r: usize, j: usize) -> &mut [f64] {
        &mut self.margins[r][j]
    }

    pub fn set_margin(&mut self, r: usize, j: usize, values: &[f64]) -> Result<()> {
        self.check_indices(r, j)?;
        if values.len() != self.dims[j] {
            return Err(Error::ShapeMismatch {
                expected: vec![self.dims[j]],
                actual: vec![values.len()],
            });
        }
        self.margins[r][j].copy_from_slice(values);
        Ok(())
    }

    /// Free parameter count, `R * (p_1 + ... + p_D)`.
    pub fn parameter_count(&self) -> usize {
        self.rank() * self.dims.iter().sum::<usize>()
    }

    /// The rank-1 coefficient holding only component `r`.
    pub fn component(&self, r: usize) -> Result<ParafacCoef> {
        self.check_indices(r, 0)?;
        Ok(ParafacCoef {
            dims: self.dims.clone(),
            margins: vec![self.margins[r].clone()],
        })
    }

    fn check_indices(&self, r: usize, j: usize) -> Result<()> {
        if r >= self.rank() {
            return Err(Error::IndexOutOfRange {
                what: "component",
                index: r,
                limit: self.rank(),
            });
        }
        if j >= self.order() {
            return Err(Error::IndexOutOfRange {
                what: "mode",
                index: j,
                limit: self.order(),
            });
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        check_order(&self.dims)?;
        for component in &self.margins {
            let actual: Vec<usize> = component.iter().map(Vec::len).collect();
            if actual != self.dims {
                return Err(Error::ShapeMismatch {
                    expected: self.dims.clone(),
                    actual,
                });
            }
        }
        Ok(())
    }

    /// Adds component `r` (scaled by `weight`) into a dense buffer of matching dims.
    pub(crate) fn accumulate_component(&self, r: usize, weight: f64, out: &mut [f64]) {
        let m = &self.margins[r];
        match self.dims.len() {
            2 => {
                let p2 = self.dims[1];
                for (k1, &a) in m[0].iter().enumerate() {
                    let wa = weight * a;
                    if wa == 0.0 {
                        continue;
                    }
                    let row = &mut out[k1 * p2..(k1 + 1) * p2];
                    for (cell, &b) in row.iter_mut().zip(&m[1]) {
                        *cell += wa * b;
                    }
                }
            }
            3 => {
                let (p2, p3) = (self.dims[1], self.dims[2]);
                for (k1, &a) in m[0].iter().enumerate() {
                    let wa = weight * a;
                    if wa == 0.0 {
                        continue;
                    }
                    for (k2, &b) in m[1].iter().enumerate() {
                        let wab = wa * b;
                        let base = (k1 * p2 + k2) * p3;
                        for (cell, &c) in out[base..base + p3].iter_mut().zip(&m[2]) {
                            *cell += wab * c;
                        }
                    }
                }
            }
            _ => unreachable!("order checked at construction"),
        }
    }
}

/// Dense tensor `sum_r margins[r][0] o ... o margins[r][D-1]`.
pub fn materialize(c: &ParafacCoef) -> Result<DenseTensor> {
    c.validate()?;
    let mut out = DenseTensor::zeros(&c.dims)?;
    for r in 0..c.rank() {
        c.accumulate_component(r, 1.0, &mut out.data);
    }
    Ok(out)
}

/// Contraction of `x` with every margin of component `r` except mode `j`.
pub fn margin_design_vector(x: &DenseTensor, c: &ParafacCoef, r: usize, j: usize) -> Result<Vec<f64>> {
    c.check_indices(r, j)?;
    x.check_same_dims(&DenseTensor {
        dims: c.dims.clone(),
        data: Vec::new(),
    })?;
    let mut out = vec![0.0; c.dims[j]];
    design_vector_into(x.data(), &c.dims, &c.margins[r], j, &mut out);
    Ok(out)
}

/// Unchecked kernel behind [`margin_design_vector`]; `out` must have length `dims[j]`.
pub(crate) fn design_vector_into(x: &[f64], dims: &[usize], margins: &[Vec<f64>], j: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    match (dims.len(), j) {
        (2, 0) => {
            let p2 = dims[1];
            for (k1, v) in out.iter_mut().enumerate() {
                *v = dot(&x[k1 * p2..(k1 + 1) * p2], &margins[1]);
            }
        }
        (2, 1) => {
            let p2 = dims[1];
            for (k1, &a) in margins[0].iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (v, &xv) in out.iter_mut().zip(&x[k1 * p2..(k1 + 1) * p2]) {
                    *v += a * xv;
                }
            }
        }
        (3, 0) => {
            let (p2, p3) = (dims[1], dims[2]);
            for (k1, v) in out.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (k2, &b) in margins[1].iter().enumerate() {
                    let base = (k1 * p2 + k2) * p3;
                    acc += b * dot(&x[base..base + p3], &margins[2]);
                }
                *v = acc;
            }
        }
        (3, 1) => {
            let (p2, p3) = (dims[1], dims[2]);
            for (k1, &a) in margins[0].iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (k2, v) in out.iter_mut().enumerate() {
                    let base = (k1 * p2 + k2) * p3;
                    *v += a * dot(&x[base..base + p3], &margins[2]);
                }
            }
        }
        (3, 2) => {
            let (p2, p3) = (dims[1], dims[2]);
            for (k1, &a) in margins[0].iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (k2, &b) in margins[1].iter().enumerate() {
                    let ab = a * b;
                    if ab == 0.0 {
                        continue;
                    }
                    let base = (k1 * p2 + k2) * p3;
                    for (v, &xv) in out.iter_mut().zip(&x[base..base + p3]) {
                        *v += ab * xv;
                    }
                }
            }
        }
        _ => unreachable!("order checked at construction"),
    }
}
