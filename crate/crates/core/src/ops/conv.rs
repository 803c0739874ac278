//! Convolution as unfold -> matrix multiply -> fold.

use crate::error::{invalid, Result};
use crate::ops::counters;
use crate::ops::gemm::{batched_gemm_f64, GemmJob, MatRef};
use crate::tensor::{ConvSpec, PatchMatrix, Tensor};

/// Checks `input` against `spec` and returns the output spatial size.
pub(crate) fn check_input(input: &Tensor, spec: &ConvSpec) -> Result<(usize, usize)> {
    spec.validate()?;
    let (_, c, h, w) = input.dims();
    if c != spec.in_channels {
        return invalid(format!("input has {c} channels, conv expects {}", spec.in_channels));
    }
    spec.output_size(h, w)
}

/// Patch matrix of one batch element, written row-major into `buf`
/// (`c*kh*kw` rows by `ho*wo` columns). Out-of-bounds taps are zero.
fn unfold_one<T: Copy + Default + From<f32>>(
    input: &Tensor,
    n: usize,
    spec: &ConvSpec,
    (ho, wo): (usize, usize),
    buf: &mut [T],
) {
    let (_, c, h, w) = input.dims();
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let (dh, dw) = spec.dilation;
    let cols = ho * wo;
    let src = input.data();
    for ci in 0..c {
        let plane = &src[input.index(n, ci, 0, 0)..][..h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                let dst = &mut buf[row * cols..(row + 1) * cols];
                for oy in 0..ho {
                    let iy = (oy * sh + ky * dh) as isize - ph as isize;
                    let out_row = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        out_row.iter_mut().for_each(|v| *v = T::default());
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in out_row.iter_mut().enumerate() {
                        let ix = (ox * sw + kx * dw) as isize - pw as isize;
                        *v = if ix < 0 || ix >= w as isize {
                            T::default()
                        } else {
                            T::from(src_row[ix as usize])
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`unfold_one`]: scatters a patch matrix back onto the image grid,
/// summing overlapping taps into `out` (one batch element, `c*h*w`).
fn fold_one(
    patches: &[f64],
    spec: &ConvSpec,
    (c, h, w): (usize, usize, usize),
    (ho, wo): (usize, usize),
    out: &mut [f64],
) {
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let (dh, dw) = spec.dilation;
    let cols = ho * wo;
    for ci in 0..c {
        let plane = &mut out[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                let src = &patches[row * cols..(row + 1) * cols];
                for oy in 0..ho {
                    let iy = (oy * sh + ky * dh) as isize - ph as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * sw + kx * dw) as isize - pw as isize;
                        if ix >= 0 && ix < w as isize {
                            dst_row[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Unfolds every batch element into `f64` patch matrices, laid out
/// `(n, c*kh*kw, L)`. Counts as one unfold invocation.
pub(crate) fn unfold_f64(input: &Tensor, spec: &ConvSpec) -> Result<(Vec<f64>, (usize, usize))> {
    let out_size = check_input(input, spec)?;
    counters::record_unfold();
    let (n, c, _, _) = input.dims();
    let rows = c * spec.kernel.0 * spec.kernel.1;
    let per = rows * out_size.0 * out_size.1;
    let mut buf = vec![0.0f64; n * per];
    for ni in 0..n {
        unfold_one(input, ni, spec, out_size, &mut buf[ni * per..(ni + 1) * per]);
    }
    Ok((buf, out_size))
}

/// Extracts the receptive patch of every output location.
pub fn unfold(input: &Tensor, spec: &ConvSpec) -> Result<PatchMatrix> {
    let out_size = check_input(input, spec)?;
    counters::record_unfold();
    let (n, c, _, _) = input.dims();
    let rows = c * spec.kernel.0 * spec.kernel.1;
    let cols = out_size.0 * out_size.1;
    let mut data = vec![0.0f32; n * rows * cols];
    for ni in 0..n {
        unfold_one(
            input,
            ni,
            spec,
            out_size,
            &mut data[ni * rows * cols..(ni + 1) * rows * cols],
        );
    }
    Ok(PatchMatrix {
        shape: (n, rows, cols),
        out_size,
        data,
    })
}

/// Scatters patches back onto an `(n, c, h, w)` grid, summing overlaps.
/// For 1x1 kernels at stride 1 this inverts [`unfold`] exactly.
pub fn fold(patches: &PatchMatrix, spec: &ConvSpec, h: usize, w: usize) -> Result<Tensor> {
    let (n, rows, cols) = patches.shape;
    let c = spec.in_channels;
    if rows != c * spec.kernel.0 * spec.kernel.1 {
        return invalid(format!("patch rows {rows} do not match {spec:?}"));
    }
    let out_size = spec.output_size(h, w)?;
    if out_size.0 * out_size.1 != cols {
        return invalid(format!("patch columns {cols} do not match output {out_size:?}"));
    }
    let mut out = vec![0.0f64; n * c * h * w];
    let src: Vec<f64> = patches.data.iter().map(|&v| v as f64).collect();
    for ni in 0..n {
        fold_one(
            &src[ni * rows * cols..(ni + 1) * rows * cols],
            spec,
            (c, h, w),
            out_size,
            &mut out[ni * c * h * w..(ni + 1) * c * h * w],
        );
    }
    Tensor::new([n, c, h, w], out.into_iter().map(|v| v as f32).collect())
}

pub(crate) fn check_params(weight: &Tensor, bias: Option<&Tensor>, spec: &ConvSpec) -> Result<()> {
    if weight.shape() != spec.weight_shape() {
        return invalid(format!(
            "weight shape {:?} does not match {:?}",
            weight.shape(),
            spec.weight_shape()
        ));
    }
    if let Some(b) = bias {
        if b.len() != spec.out_channels {
            return invalid(format!(
                "bias has {} values, conv has {} outputs",
                b.len(),
                spec.out_channels
            ));
        }
    }
    Ok(())
}

/// Adds bias and rounds `(n, out, L)` f64 accumulators to an f32 tensor.
pub(crate) fn finish_output(
    acc: &[f64],
    bias: Option<&Tensor>,
    n: usize,
    out_channels: usize,
    (ho, wo): (usize, usize),
) -> Tensor {
    let l = ho * wo;
    let mut data = Vec::with_capacity(acc.len());
    for ni in 0..n {
        for o in 0..out_channels {
            let b = bias.map_or(0.0, |b| b.data()[o] as f64);
            let chunk = &acc[(ni * out_channels + o) * l..][..l];
            data.extend(chunk.iter().map(|&v| (v + b) as f32));
        }
    }
    Tensor::new([n, out_channels, ho, wo], data).expect("sized by construction")
}

/// GEMM jobs for one convolution over pre-unfolded patches; one job per
/// `(batch element, group)`.
pub(crate) fn conv_jobs<'a, 'c>(
    weight64: &'a [f64],
    patches: &'a [f64],
    acc: &'c mut [f64],
    spec: &ConvSpec,
    n: usize,
    l: usize,
) -> Vec<GemmJob<'a, 'c>> {
    let g = spec.groups;
    let og = spec.out_channels / g;
    let k = spec.patch_rows();
    let mut jobs = Vec::with_capacity(n * g);
    for (idx, c) in acc.chunks_mut(og * l).enumerate().take(n * g) {
        let (ni, gi) = (idx / g, idx % g);
        let a = &weight64[gi * og * k..(gi + 1) * og * k];
        let b = &patches[(ni * g + gi) * k * l..][..k * l];
        jobs.push(GemmJob {
            a: MatRef::new(og, k, a).expect("weight sized"),
            b: MatRef::new(k, l, b).expect("patches sized"),
            c,
            accumulate: false,
        });
    }
    jobs
}

/// 2-D convolution: unfold, one batched GEMM over `(batch, group)`, fold to NCHW.
pub fn conv2d(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>, spec: &ConvSpec) -> Result<Tensor> {
    check_params(weight, bias, spec)?;
    let (patches, out_size) = unfold_f64(input, spec)?;
    let n = input.dims().0;
    let l = out_size.0 * out_size.1;
    let w64: Vec<f64> = weight.data().iter().map(|&v| v as f64).collect();
    let mut acc = vec![0.0f64; n * spec.out_channels * l];
    let mut jobs = conv_jobs(&w64, &patches, &mut acc, spec, n, l);
    batched_gemm_f64(&mut jobs);
    drop(jobs);
    Ok(finish_output(&acc, bias, n, spec.out_channels, out_size))
}

/// Gradients of a convolution with respect to its input, weight and bias.
pub(crate) struct ConvGrads {
    pub input: Option<Tensor>,
    pub weight: Tensor,
    pub bias: Tensor,
}

pub(crate) fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    spec: &ConvSpec,
    need_input: bool,
) -> Result<ConvGrads> {
    let (patches, out_size) = unfold_f64(input, spec)?;
    let (n, c, h, w) = input.dims();
    let l = out_size.0 * out_size.1;
    let g = spec.groups;
    let og = spec.out_channels / g;
    let cg = c / g;
    let k = spec.patch_rows();
    let dy: Vec<f64> = grad_out.data().iter().map(|&v| v as f64).collect();
    let w64: Vec<f64> = weight.data().iter().map(|&v| v as f64).collect();

    // dW_g = sum_n dY_{n,g} * P_{n,g}^T, one partial product per batch element.
    let mut partial = vec![0.0f64; n * spec.out_channels * k];
    {
        let mut jobs = Vec::with_capacity(n * g);
        for (idx, c_chunk) in partial.chunks_mut(og * k).enumerate() {
            let (ni, gi) = (idx / g, idx % g);
            let a = &dy[(ni * spec.out_channels + gi * og) * l..][..og * l];
            let b = &patches[(ni * g + gi) * k * l..][..k * l];
            jobs.push(GemmJob {
                a: MatRef::new(og, l, a).expect("dy sized"),
                b: MatRef::new(k, l, b).expect("patches sized").t(),
                c: c_chunk,
                accumulate: false,
            });
        }
        batched_gemm_f64(&mut jobs);
    }
    let mut dw = vec![0.0f64; spec.out_channels * k];
    for chunk in partial.chunks(spec.out_channels * k) {
        for (d, p) in dw.iter_mut().zip(chunk) {
            *d += p;
        }
    }

    let mut db = vec![0.0f64; spec.out_channels];
    for ni in 0..n {
        for (o, slot) in db.iter_mut().enumerate() {
            *slot += dy[(ni * spec.out_channels + o) * l..][..l].iter().sum::<f64>();
        }
    }

    let grad_input = if need_input {
        // dP_{n,g} = W_g^T * dY_{n,g}, then fold.
        let mut dp = vec![0.0f64; n * g * k * l];
        {
            let mut jobs = Vec::with_capacity(n * g);
            for (idx, c_chunk) in dp.chunks_mut(k * l).enumerate() {
                let (ni, gi) = (idx / g, idx % g);
                let a = &w64[gi * og * k..(gi + 1) * og * k];
                let b = &dy[(ni * spec.out_channels + gi * og) * l..][..og * l];
                jobs.push(GemmJob {
                    a: MatRef::new(og, k, a).expect("weight sized").t(),
                    b: MatRef::new(og, l, b).expect("dy sized"),
                    c: c_chunk,
                    accumulate: false,
                });
            }
            batched_gemm_f64(&mut jobs);
        }
        let mut dx = vec![0.0f64; n * c * h * w];
        let group_spec = ConvSpec {
            in_channels: cg,
            out_channels: og,
            groups: 1,
            ..*spec
        };
        for ni in 0..n {
            for gi in 0..g {
                fold_one(
                    &dp[(ni * g + gi) * k * l..][..k * l],
                    &group_spec,
                    (cg, h, w),
                    out_size,
                    &mut dx[(ni * c + gi * cg) * h * w..][..cg * h * w],
                );
            }
        }
        Some(Tensor::new([n, c, h, w], dx.into_iter().map(|v| v as f32).collect())?)
    } else {
        None
    };

    Ok(ConvGrads {
        input: grad_input,
        weight: Tensor::new(spec.weight_shape(), dw.into_iter().map(|v| v as f32).collect())?,
        bias: Tensor::vector(db.into_iter().map(|v| v as f32).collect()),
    })
}
