//! Dense matrix products.
//!
//! Storage is `f32` everywhere else in the crate; products accumulate in `f64`
//! and are rounded once on the way out. The kernel itself is
//! `matrixmultiply::dgemm`, which handles arbitrary row/column strides, so
//! transposed operands are just views with swapped strides.

use crate::error::{invalid, Result};
use crate::ops::counters;

/// Strided read-only matrix view.
#[derive(Clone, Copy, Debug)]
pub struct MatRef<'a, T> {
    pub rows: usize,
    pub cols: usize,
    row_stride: isize,
    col_stride: isize,
    data: &'a [T],
}

impl<'a, T: Copy> MatRef<'a, T> {
    /// Row-major `rows x cols` view over `data`.
    pub fn new(rows: usize, cols: usize, data: &'a [T]) -> Result<Self> {
        if data.len() < rows * cols {
            return invalid(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            ));
        }
        Ok(MatRef {
            rows,
            cols,
            row_stride: cols as isize,
            col_stride: 1,
            data,
        })
    }

    pub fn t(self) -> Self {
        MatRef {
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
            data: self.data,
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[(r as isize * self.row_stride + c as isize * self.col_stride) as usize]
    }
}

impl<'a> MatRef<'a, f32> {
    fn to_f64(self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.rows * self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.push(self.get(r, c) as f64);
            }
        }
        out
    }
}

/// `c = a * b` (or `c += a * b` when `accumulate`), all row-major f64 except the views.
pub(crate) fn gemm_f64(a: MatRef<'_, f64>, b: MatRef<'_, f64>, c: &mut [f64], accumulate: bool) {
    debug_assert_eq!(a.cols, b.rows);
    debug_assert!(c.len() >= a.rows * b.cols);
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the views were bounds-checked at construction and the strides
    // address exactly `rows x cols` elements inside each slice; `c` holds at
    // least `m * n` elements and is written row-major.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// One product in a batched GEMM invocation.
pub(crate) struct GemmJob<'a, 'c> {
    pub a: MatRef<'a, f64>,
    pub b: MatRef<'a, f64>,
    pub c: &'c mut [f64],
    pub accumulate: bool,
}

/// Executes all jobs as a single counted GEMM invocation.
pub(crate) fn batched_gemm_f64(jobs: &mut [GemmJob<'_, '_>]) {
    counters::record_gemm();
    for job in jobs.iter_mut() {
        gemm_f64(job.a, job.b, job.c, job.accumulate);
    }
}

fn check_inner<T: Copy>(a: &MatRef<'_, T>, b: &MatRef<'_, T>) -> Result<()> {
    if a.cols != b.rows {
        return invalid(format!(
            "inner dimensions disagree: {}x{} * {}x{}",
            a.rows, a.cols, b.rows, b.cols
        ));
    }
    Ok(())
}

/// Row-major product `a * b`.
pub fn matmul(a: MatRef<'_, f32>, b: MatRef<'_, f32>) -> Result<Vec<f32>> {
    let mut out = batched_matmul(&[a], &[b])?;
    Ok(out.pop().unwrap_or_default())
}

/// Independent products `a[i] * b[i]`, executed as one GEMM invocation.
pub fn batched_matmul(a: &[MatRef<'_, f32>], b: &[MatRef<'_, f32>]) -> Result<Vec<Vec<f32>>> {
    if a.len() != b.len() {
        return invalid(format!("batch counts differ: {} vs {}", a.len(), b.len()));
    }
    for (x, y) in a.iter().zip(b) {
        check_inner(x, y)?;
    }
    let a64: Vec<Vec<f64>> = a.iter().map(|m| m.to_f64()).collect();
    let b64: Vec<Vec<f64>> = b.iter().map(|m| m.to_f64()).collect();
    let mut c64: Vec<Vec<f64>> = a.iter().zip(b).map(|(x, y)| vec![0.0; x.rows * y.cols]).collect();
    let mut jobs: Vec<GemmJob<'_, '_>> = a64
        .iter()
        .zip(&b64)
        .zip(c64.iter_mut())
        .zip(a.iter().zip(b))
        .map(|(((x, y), c), (ma, mb))| GemmJob {
            a: MatRef::new(ma.rows, ma.cols, x).expect("sized above"),
            b: MatRef::new(mb.rows, mb.cols, y).expect("sized above"),
            c,
            accumulate: false,
        })
        .collect();
    batched_gemm_f64(&mut jobs);
    drop(jobs);
    Ok(c64
        .into_iter()
        .map(|c| c.into_iter().map(|v| v as f32).collect())
        .collect())
}
