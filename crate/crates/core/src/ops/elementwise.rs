use crate::error::{invalid, Result};
use crate::tensor::Tensor;

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

#[inline]
pub fn sigmoid_scalar(v: f32) -> f32 {
    let v = v as f64;
    let s = if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    };
    s as f32
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.zip_map(b, |x, y| x + y)
}

pub fn scale(x: &Tensor, s: f32) -> Tensor {
    x.map(|v| v * s)
}

/// Channel concatenation in argument order.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = match parts.first() {
        Some(t) => t,
        None => return invalid("concat of zero tensors"),
    };
    let (n, _, h, w) = first.dims();
    let mut total_c = 0;
    for t in parts {
        let (tn, tc, th, tw) = t.dims();
        if (tn, th, tw) != (n, h, w) {
            return invalid(format!("concat shape mismatch: {:?} vs {:?}", t.shape(), first.shape()));
        }
        total_c += tc;
    }
    let mut data = Vec::with_capacity(n * total_c * h * w);
    for ni in 0..n {
        for t in parts {
            let plane = t.dims().1 * h * w;
            data.extend_from_slice(&t.data()[ni * plane..(ni + 1) * plane]);
        }
    }
    Tensor::new([n, total_c, h, w], data)
}

/// Channels `[start, start + len)`.
pub fn slice_channels(x: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims();
    if start + len > c || len == 0 {
        return invalid(format!("channel slice {start}+{len} out of range for {c}"));
    }
    let mut data = Vec::with_capacity(n * len * h * w);
    for ni in 0..n {
        let base = (ni * c + start) * h * w;
        data.extend_from_slice(&x.data()[base..base + len * h * w]);
    }
    Tensor::new([n, len, h, w], data)
}
