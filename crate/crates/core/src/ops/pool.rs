use crate::error::{invalid, Result};
use crate::tensor::Tensor;

fn pooled_size(h: usize, w: usize, kernel: usize, stride: usize) -> Result<(usize, usize)> {
    if kernel == 0 || stride == 0 {
        return invalid("pool kernel and stride must be positive");
    }
    if kernel > h || kernel > w {
        return invalid(format!("pool kernel {kernel} larger than input {h}x{w}"));
    }
    Ok(((h - kernel) / stride + 1, (w - kernel) / stride + 1))
}

/// Window maximum plus the flat input index of the winning element. Ties go
/// to the first maximum in row-major scan order.
pub(crate) fn maxpool2d_with_indices(input: &Tensor, kernel: usize, stride: usize) -> Result<(Tensor, Vec<usize>)> {
    let (n, c, h, w) = input.dims();
    let (ho, wo) = pooled_size(h, w, kernel, stride)?;
    let src = input.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut arg = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = f32::NEG_INFINITY;
                let mut best_idx = base + oy * stride * w + ox * stride;
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        let idx = base + (oy * stride + ky) * w + ox * stride + kx;
                        if src[idx] > best {
                            best = src[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                arg.push(best_idx);
            }
        }
    }
    Ok((Tensor::new([n, c, ho, wo], out)?, arg))
}

pub fn maxpool2d(input: &Tensor, kernel: usize, stride: usize) -> Result<Tensor> {
    maxpool2d_with_indices(input, kernel, stride).map(|(t, _)| t)
}

pub(crate) fn maxpool2d_backward(input_shape: [usize; 4], argmax: &[usize], grad_out: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        d[idx] += g;
    }
    dx
}

pub fn avgpool2d(input: &Tensor, kernel: usize, stride: usize) -> Result<Tensor> {
    let (n, c, h, w) = input.dims();
    let (ho, wo) = pooled_size(h, w, kernel, stride)?;
    let src = input.data();
    let norm = (kernel * kernel) as f64;
    let mut out = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = 0.0f64;
                for ky in 0..kernel {
                    let row = base + (oy * stride + ky) * w + ox * stride;
                    acc += src[row..row + kernel].iter().map(|&v| v as f64).sum::<f64>();
                }
                out.push((acc / norm) as f32);
            }
        }
    }
    Tensor::new([n, c, ho, wo], out)
}

pub(crate) fn avgpool2d_backward(input_shape: [usize; 4], kernel: usize, stride: usize, grad_out: &Tensor) -> Tensor {
    let [_, _, h, w] = input_shape;
    let (_, _, ho, wo) = grad_out.dims();
    let mut dx = vec![0.0f64; input_shape.iter().product()];
    let norm = (kernel * kernel) as f64;
    for (plane, chunk) in grad_out.data().chunks(ho * wo).enumerate() {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let g = chunk[oy * wo + ox] as f64 / norm;
                for ky in 0..kernel {
                    let row = base + (oy * stride + ky) * w + ox * stride;
                    dx[row..row + kernel].iter_mut().for_each(|v| *v += g);
                }
            }
        }
    }
    Tensor::new(input_shape, dx.into_iter().map(|v| v as f32).collect()).expect("input shape")
}
