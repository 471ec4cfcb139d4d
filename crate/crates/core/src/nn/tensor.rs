use crate::{Error, Result};

/// Dense row-major `f64` array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(shape, &[data.len()]));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.shape)
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn ensure_finite(&self, context: impl FnOnce() -> String) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite { context: context() })
        }
    }

    pub fn check_shape(&self, expected: &[usize]) -> Result<()> {
        if self.shape == expected {
            Ok(())
        } else {
            Err(Error::shape(expected, &self.shape))
        }
    }
}

/// `out[j] += sum_i x[i] * w[i, j]` for `w` of shape `[x.len(), out.len()]`.
#[inline]
pub(crate) fn vec_mat_acc(x: &[f64], w: &Tensor, out: &mut [f64]) {
    let cols = out.len();
    debug_assert_eq!(w.data.len(), x.len() * cols);
    for (xi, row) in x.iter().zip(w.data.chunks_exact(cols)) {
        if *xi == 0.0 {
            continue;
        }
        for (o, wij) in out.iter_mut().zip(row) {
            *o += xi * wij;
        }
    }
}

/// `out[i] += sum_j w[i, j] * d[j]`, the transpose product of [`vec_mat_acc`].
#[inline]
pub(crate) fn mat_vec_acc(w: &Tensor, d: &[f64], out: &mut [f64]) {
    let cols = d.len();
    for (o, row) in out.iter_mut().zip(w.data.chunks_exact(cols)) {
        let mut s = 0.0;
        for (wij, dj) in row.iter().zip(d) {
            s += wij * dj;
        }
        *o += s;
    }
}

/// `g[i, j] += x[i] * d[j]`.
#[inline]
pub(crate) fn outer_acc(g: &mut Tensor, x: &[f64], d: &[f64]) {
    let cols = d.len();
    for (xi, row) in x.iter().zip(g.data.chunks_exact_mut(cols)) {
        if *xi == 0.0 {
            continue;
        }
        for (gij, dj) in row.iter_mut().zip(d) {
            *gij += xi * dj;
        }
    }
}

#[inline]
pub(crate) fn add_acc(acc: &mut [f64], d: &[f64]) {
    for (a, b) in acc.iter_mut().zip(d) {
        *a += b;
    }
}
