//! Dense rank-4 tensors and convolution geometry.

use std::fmt;

use crate::error::{invalid, Result};

/// Dense `(n, c, h, w)` array of `f32`, row-major.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f32>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [n, c, h, w] = self.shape;
        write!(f, "Tensor({n}x{c}x{h}x{w})")?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl Tensor {
    pub fn new(shape: [usize; 4], data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return invalid(format!("shape {shape:?} needs {expected} values, got {}", data.len()));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: [usize; 4], value: f32) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    /// Builds a tensor by evaluating `f(n, c, h, w)` at every index.
    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut(usize, usize, usize, usize) -> f32) -> Self {
        let [n, c, h, w] = shape;
        let mut data = Vec::with_capacity(n * c * h * w);
        for ni in 0..n {
            for ci in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data.push(f(ni, ci, y, x));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    /// A `(1, 1, 1, 1)` tensor.
    pub fn scalar(value: f32) -> Self {
        Tensor {
            shape: [1, 1, 1, 1],
            data: vec![value],
        }
    }

    /// A per-channel parameter vector, stored as `(len, 1, 1, 1)`.
    pub fn vector(values: Vec<f32>) -> Self {
        Tensor {
            shape: [values.len(), 1, 1, 1],
            data: values,
        }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        let [n, c, h, w] = self.shape;
        (n, c, h, w)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        let [_, cs, hs, ws] = self.shape;
        ((n * cs + c) * hs + y) * ws + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(n, c, y, x)]
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f32> {
        if self.data.len() != 1 {
            return invalid(format!("expected a scalar tensor, got {:?}", self.shape));
        }
        Ok(self.data[0])
    }

    pub fn reshape(mut self, shape: [usize; 4]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return invalid(format!("cannot reshape {:?} to {shape:?}", self.shape));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f32, f32) -> f32) -> Result<Self> {
        self.expect_same_shape(other)?;
        Ok(Tensor {
            shape: self.shape,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn expect_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return invalid(format!("shape mismatch: {:?} vs {:?}", self.shape, other.shape));
        }
        Ok(())
    }

    /// Largest absolute elementwise difference, in f64.
    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        self.expect_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a as f64 - b as f64).abs())
            .fold(0.0, f64::max))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum() / self.data.len() as f64
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copies batch element `n` into a `(1, c, h, w)` tensor.
    pub fn batch_item(&self, n: usize) -> Result<Tensor> {
        let [bn, c, h, w] = self.shape;
        if n >= bn {
            return invalid(format!("batch index {n} out of range for {bn}"));
        }
        let plane = c * h * w;
        Ok(Tensor {
            shape: [1, c, h, w],
            data: self.data[n * plane..(n + 1) * plane].to_vec(),
        })
    }

    /// Stacks `(1, c, h, w)` tensors (or any equal-shaped tensors) along the batch axis.
    pub fn stack_batch(items: &[&Tensor]) -> Result<Tensor> {
        let first = match items.first() {
            Some(t) => t,
            None => return invalid("cannot stack an empty list"),
        };
        let [_, c, h, w] = first.shape;
        let mut n = 0;
        let mut data = Vec::new();
        for t in items {
            let [tn, tc, th, tw] = t.shape;
            if (tc, th, tw) != (c, h, w) {
                return invalid(format!("cannot stack {:?} with {:?}", t.shape, first.shape));
            }
            n += tn;
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor {
            shape: [n, c, h, w],
            data,
        })
    }
}

/// Geometry of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub dilation: (usize, usize),
    pub groups: usize,
}

impl ConvSpec {
    /// Square kernel, stride 1, no padding, no dilation, one group.
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel: (kernel, kernel),
            stride: (1, 1),
            padding: (0, 0),
            dilation: (1, 1),
            groups: 1,
        }
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = (s, s);
        self
    }

    pub fn padding(mut self, p: usize) -> Self {
        self.padding = (p, p);
        self
    }

    pub fn dilation(mut self, d: usize) -> Self {
        self.dilation = (d, d);
        self
    }

    pub fn groups(mut self, g: usize) -> Self {
        self.groups = g;
        self
    }

    /// 3x3 convolution with `padding = dilation`, which keeps the spatial size at stride 1.
    pub fn same3x3(in_channels: usize, out_channels: usize, dilation: usize) -> Self {
        ConvSpec::new(in_channels, out_channels, 3)
            .dilation(dilation)
            .padding(dilation)
    }

    pub fn validate(&self) -> Result<()> {
        let ok_positive = self.in_channels > 0
            && self.out_channels > 0
            && self.kernel.0 > 0
            && self.kernel.1 > 0
            && self.stride.0 > 0
            && self.stride.1 > 0
            && self.dilation.0 > 0
            && self.dilation.1 > 0
            && self.groups > 0;
        if !ok_positive {
            return invalid(format!("degenerate conv spec {self:?}"));
        }
        if !self.in_channels.is_multiple_of(self.groups) || !self.out_channels.is_multiple_of(self.groups) {
            return invalid(format!(
                "channels {}->{} not divisible by groups {}",
                self.in_channels, self.out_channels, self.groups
            ));
        }
        Ok(())
    }

    /// Rows of one group's patch matrix: `in/groups * kh * kw`.
    pub fn patch_rows(&self) -> usize {
        self.in_channels / self.groups * self.kernel.0 * self.kernel.1
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels / self.groups,
            self.kernel.0,
            self.kernel.1,
        ]
    }

    /// `floor((H + 2p - d(k-1) - 1) / s) + 1` per axis; errors when it would be < 1.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let axis = |size: usize, k: usize, s: usize, p: usize, d: usize| -> Option<usize> {
            let span = d * (k - 1) + 1;
            let padded = size + 2 * p;
            if padded < span {
                None
            } else {
                Some((padded - span) / s + 1)
            }
        };
        match (
            axis(h, self.kernel.0, self.stride.0, self.padding.0, self.dilation.0),
            axis(w, self.kernel.1, self.stride.1, self.padding.1, self.dilation.1),
        ) {
            (Some(ho), Some(wo)) => Ok((ho, wo)),
            _ => invalid(format!("input {h}x{w} too small for {self:?}")),
        }
    }

    /// True when the unfolded patch matrices of two specs coincide for the same input.
    pub fn same_patch_geometry(&self, other: &ConvSpec) -> bool {
        self.in_channels == other.in_channels
            && self.kernel == other.kernel
            && self.stride == other.stride
            && self.padding == other.padding
            && self.dilation == other.dilation
            && self.groups == other.groups
    }
}

/// Unfolded receptive patches: shape `(n, c*kh*kw, L)` with `L = Ho*Wo`.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchMatrix {
    pub shape: (usize, usize, usize),
    pub out_size: (usize, usize),
    pub data: Vec<f32>,
}

impl PatchMatrix {
    pub fn at(&self, n: usize, row: usize, col: usize) -> f32 {
        let (_, rows, cols) = self.shape;
        self.data[(n * rows + row) * cols + col]
    }
}
