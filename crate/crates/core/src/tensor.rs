//! Dense row-major tensors over f64, 1 to 4 axes.
//!
//! Layout conventions: vectors, matrices (rows, cols), CHW, NCHW. All
//! reductions accumulate in f64 left-to-right so results are bit-reproducible.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 4 {
            return Err(Error::Shape(format!(
                "tensor must have 1..=4 axes, got {}",
                shape.len()
            )));
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("zero-sized axis in {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} wants {} elements, data has {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        Tensor::new(shape, vec![0.0; n])
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Result<Self> {
        let n: usize = shape.iter().product();
        Tensor::new(shape, vec![value; n])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    /// 2-D accessor: row-major (rows, cols).
    #[inline]
    pub fn at2(&self, r: usize, c: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[r * self.shape[1] + c]
    }

    /// NCHW accessor.
    #[inline]
    pub fn at4(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 4);
        let (cs, hs, ws) = (self.shape[1], self.shape[2], self.shape[3]);
        self.data[((n * cs + c) * hs + h) * ws + w]
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, k: f64) -> Tensor {
        let data = self.data.iter().map(|x| x * k).collect();
        Tensor {
            shape: self.shape.clone(),
            data,
        }
    }

    fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "elementwise op on {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    /// Matrix product of two 2-D tensors. Accumulation runs over k ascending.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape.len() != 2 || other.shape.len() != 2 {
            return Err(Error::Shape("matmul needs 2-D operands".into()));
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (other.shape[0], other.shape[1]);
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul inner dims {k} vs {k2} differ"
            )));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &self.data[i * k..(i + 1) * k];
            let orow = &mut out[i * n..(i + 1) * n];
            for (kk, &a) in arow.iter().enumerate() {
                let brow = &other.data[kk * n..(kk + 1) * n];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Tensor::new(vec![m, n], out)
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&self) -> Result<Tensor> {
        if self.shape.len() != 2 {
            return Err(Error::Shape("transpose needs a 2-D tensor".into()));
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor::new(vec![n, m], out)
    }

    /// Reinterpret the same data under a new shape.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        Tensor::new(shape, self.data.clone())
    }
}

/// Flattened (kh x kw x C) windows of a CHW image at the given stride, one row
/// per window position (row-major over positions). Columns run channel-major,
/// then window row, then window column, matching the weight layout used by the
/// convolution layers.
pub fn patch_extract(image: &Tensor, kh: usize, kw: usize, stride: usize) -> Result<Tensor> {
    if stride == 0 {
        return Err(Error::Param("stride must be positive".into()));
    }
    let (c, h, w) = match image.shape() {
        [h, w] => (1usize, *h, *w),
        [c, h, w] => (*c, *h, *w),
        s => {
            return Err(Error::Shape(format!(
                "patch_extract wants HW or CHW, got {s:?}"
            )))
        }
    };
    if kh > h || kw > w {
        return Err(Error::Shape(format!(
            "kernel {kh}x{kw} larger than image {h}x{w}"
        )));
    }
    let oh = (h - kh) / stride + 1;
    let ow = (w - kw) / stride + 1;
    let cols = kh * kw * c;
    let mut out = vec![0.0; oh * ow * cols];
    let data = image.data();
    for oy in 0..oh {
        for ox in 0..ow {
            let row = &mut out[(oy * ow + ox) * cols..(oy * ow + ox + 1) * cols];
            let mut idx = 0;
            for ch in 0..c {
                for dy in 0..kh {
                    let base = (ch * h + oy * stride + dy) * w + ox * stride;
                    for dx in 0..kw {
                        row[idx] = data[base + dx];
                        idx += 1;
                    }
                }
            }
        }
    }
    Tensor::new(vec![oh * ow, cols], out)
}

/// Inverse scatter of `patch_extract`: accumulates per-window values back onto
/// a CHW image, summing where windows overlap.
pub fn patch_scatter_add(
    grad_patches: &Tensor,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
) -> Result<Tensor> {
    let oh = (h - kh) / stride + 1;
    let ow = (w - kw) / stride + 1;
    let cols = kh * kw * c;
    if grad_patches.shape() != [oh * ow, cols] {
        return Err(Error::Shape(format!(
            "patch gradient shape {:?}, expected [{}, {}]",
            grad_patches.shape(),
            oh * ow,
            cols
        )));
    }
    let mut out = vec![0.0; c * h * w];
    let data = grad_patches.data();
    for oy in 0..oh {
        for ox in 0..ow {
            let row = &data[(oy * ow + ox) * cols..(oy * ow + ox + 1) * cols];
            let mut idx = 0;
            for ch in 0..c {
                for dy in 0..kh {
                    let base = (ch * h + oy * stride + dy) * w + ox * stride;
                    for dx in 0..kw {
                        out[base + dx] += row[idx];
                        idx += 1;
                    }
                }
            }
        }
    }
    Tensor::new(vec![c, h, w], out)
}
