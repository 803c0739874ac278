//! Bilinear resampling with `align_corners = false`.

use crate::error::{invalid, Result};
use crate::tensor::Tensor;

/// Source taps for one output coordinate: `(lo, hi, weight_of_hi)`.
fn axis_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

pub fn bilinear_resize(input: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    if out_h == 0 || out_w == 0 {
        return invalid(format!("resize target {out_h}x{out_w} must be non-empty"));
    }
    let (n, c, h, w) = input.dims();
    if h == 0 || w == 0 {
        return invalid("cannot resize an empty image");
    }
    if (h, w) == (out_h, out_w) {
        return Ok(input.clone());
    }
    let ty = axis_taps(h, out_h);
    let tx = axis_taps(w, out_w);
    let src = input.data();
    let mut out = Vec::with_capacity(n * c * out_h * out_w);
    for plane in 0..n * c {
        let p = &src[plane * h * w..(plane + 1) * h * w];
        for &(y0, y1, ly) in &ty {
            for &(x0, x1, lx) in &tx {
                let top = p[y0 * w + x0] as f64 * (1.0 - lx) + p[y0 * w + x1] as f64 * lx;
                let bot = p[y1 * w + x0] as f64 * (1.0 - lx) + p[y1 * w + x1] as f64 * lx;
                out.push((top * (1.0 - ly) + bot * ly) as f32);
            }
        }
    }
    Tensor::new([n, c, out_h, out_w], out)
}

/// Transpose of [`bilinear_resize`]: spreads each output gradient back over
/// its four source taps with the forward interpolation weights.
pub(crate) fn bilinear_resize_backward(input_shape: [usize; 4], grad_out: &Tensor) -> Tensor {
    let [n, c, h, w] = input_shape;
    let (_, _, out_h, out_w) = grad_out.dims();
    if (h, w) == (out_h, out_w) {
        return grad_out.clone();
    }
    let ty = axis_taps(h, out_h);
    let tx = axis_taps(w, out_w);
    let mut dx = vec![0.0f64; n * c * h * w];
    for (plane, g) in grad_out.data().chunks(out_h * out_w).enumerate() {
        let d = &mut dx[plane * h * w..(plane + 1) * h * w];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let gv = g[oy * out_w + ox] as f64;
                d[y0 * w + x0] += gv * (1.0 - ly) * (1.0 - lx);
                d[y0 * w + x1] += gv * (1.0 - ly) * lx;
                d[y1 * w + x0] += gv * ly * (1.0 - lx);
                d[y1 * w + x1] += gv * ly * lx;
            }
        }
    }
    Tensor::new(input_shape, dx.into_iter().map(|v| v as f32).collect()).expect("input shape")
}
