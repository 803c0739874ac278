//! Runs three dilated 3x3 convolutions that read the same input, first one by
//! one and then as a single merged plan.

use dcnet::ops::{conv2d, counters};
use dcnet::reparam::{execute_merged, merge_parallel_convs};
use dcnet::{ConvSpec, Tensor};

fn main() -> dcnet::Result<()> {
    let x = Tensor::from_fn([2, 4, 24, 24], |n, c, y, x| {
        ((n + c * 5 + y * 7 + x * 3) % 13) as f32 / 13.0 - 0.5
    });
    let specs: Vec<ConvSpec> = [1, 3, 5].iter().map(|&d| ConvSpec::same3x3(4, 6, d)).collect();
    let weights: Vec<Tensor> = specs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            Tensor::from_fn(s.weight_shape(), |o, c, y, x| {
                ((i + o + 2 * c + 3 * y + x) % 7) as f32 / 7.0 - 0.4
            })
        })
        .collect();
    let bias = Tensor::vector(vec![0.1; 6]);

    let before = counters::snapshot();
    let separate: Vec<Tensor> = specs
        .iter()
        .zip(&weights)
        .map(|(s, w)| conv2d(&x, w, Some(&bias), s))
        .collect::<dcnet::Result<_>>()?;
    let separate_counts = counters::snapshot() - before;

    let branches: Vec<_> = specs.iter().zip(&weights).map(|(s, w)| (*s, w, Some(&bias))).collect();
    let plan = merge_parallel_convs(&branches)?;
    let (merged, merged_counts) = execute_merged(&plan, &[&x])?;

    let diff = separate
        .iter()
        .zip(&merged)
        .map(|(a, b)| a.max_abs_diff(b))
        .collect::<dcnet::Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    println!(
        "separate: {} GEMM, {} unfold",
        separate_counts.gemm, separate_counts.unfold
    );
    println!("merged:   {} GEMM, {} unfold", merged_counts.gemm, merged_counts.unfold);
    println!("max-abs difference {diff:.2e}");
    Ok(())
}
