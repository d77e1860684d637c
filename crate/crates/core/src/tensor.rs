//! Dense row-major real tensor used as the dataflow unit throughout the crate.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return shape_err(format!("shape {:?} needs {} values, got {}", shape, n, data.len()));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Self { shape: shape.to_vec(), data: (0..n).map(&mut f).collect() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
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

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return shape_err(format!("cannot reshape {:?} into {:?}", self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Dimensions of a `batch × channels × frames` tensor.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape.as_slice() {
            &[b, c, t] => Ok((b, c, t)),
            s => shape_err(format!("expected a 3-d tensor, got shape {:?}", s)),
        }
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[a, b] => Ok((a, b)),
            s => shape_err(format!("expected a 2-d tensor, got shape {:?}", s)),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return shape_err(format!("{:?} vs {:?}", self.shape, other.shape));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum() / self.data.len() as f64
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Max absolute difference relative to the larger of the two magnitudes.
    pub fn rel_diff(&self, other: &Tensor) -> f64 {
        let scale = self.max_abs().max(other.max_abs());
        if scale == 0.0 {
            0.0
        } else {
            self.max_abs_diff(other) / scale
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::Numeric(format!("{what} contains non-finite entries")))
        }
    }

    /// Row `i` of a 2-d tensor, or slab `i` along the leading axis in general.
    pub fn slab(&self, i: usize) -> &[f64] {
        let inner: usize = self.shape[1..].iter().product();
        &self.data[i * inner..(i + 1) * inner]
    }

    pub fn slab_mut(&mut self, i: usize) -> &mut [f64] {
        let inner: usize = self.shape[1..].iter().product();
        &mut self.data[i * inner..(i + 1) * inner]
    }

    /// Concatenate 3-d tensors along the channel axis.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Self> {
        let (b, _, t) = parts
            .first()
            .ok_or_else(|| Error::Shape("nothing to concatenate".into()))?
            .dims3()?;
        let mut total = 0;
        for p in parts {
            let (pb, pc, pt) = p.dims3()?;
            if pb != b || pt != t {
                return shape_err(format!("cannot concatenate {:?} with batch {b}, frames {t}", p.shape));
            }
            total += pc;
        }
        let mut out = Tensor::zeros(&[b, total, t]);
        for bi in 0..b {
            let mut off = 0;
            let dst = out.slab_mut(bi);
            for p in parts {
                let src = p.slab(bi);
                dst[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        Ok(out)
    }

    /// Channels `[start, start + count)` of a 3-d tensor.
    pub fn narrow_channels(&self, start: usize, count: usize) -> Result<Self> {
        let (b, c, t) = self.dims3()?;
        if start + count > c {
            return shape_err(format!("channel range {start}+{count} exceeds {c}"));
        }
        let mut out = Tensor::zeros(&[b, count, t]);
        for bi in 0..b {
            let src = &self.slab(bi)[start * t..(start + count) * t];
            out.slab_mut(bi).copy_from_slice(src);
        }
        Ok(out)
    }

    /// Stack equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor]) -> Result<Self> {
        let first = items.first().ok_or_else(|| Error::Shape("nothing to stack".into()))?;
        let mut shape = vec![items.len()];
        shape.extend_from_slice(first.shape());
        let mut data = Vec::with_capacity(first.len() * items.len());
        for it in items {
            if it.shape != first.shape {
                return shape_err(format!("stack: {:?} vs {:?}", it.shape, first.shape));
            }
            data.extend_from_slice(&it.data);
        }
        Ok(Self { shape, data })
    }
}
