//! Scores a few degraded predictions against one mask.

use dcnet::auxmaps::BinaryMask;
use dcnet::metrics::{evaluate, MetricConfig};
use dcnet::Tensor;

fn main() -> dcnet::Result<()> {
    let gt = BinaryMask::from_fn(48, 48, |y, x| (y as i32 - 24).pow(2) + (x as i32 - 20).pow(2) <= 144)?;
    let exact = gt.to_tensor();
    let cases = [
        ("exact", exact.clone()),
        ("blurred", exact.map(|v| 0.15 + 0.7 * v)),
        (
            "shifted",
            Tensor::from_fn([1, 1, 48, 48], |_, _, y, x| exact.at(0, 0, y, x.saturating_sub(6))),
        ),
        ("inverted", exact.map(|v| 1.0 - v)),
        ("flat", Tensor::full([1, 1, 48, 48], 0.5)),
    ];
    let cfg = MetricConfig::default();
    println!(
        "{:<9} {:>7} {:>7} {:>7} {:>7} {:>7}",
        "", "MAE", "maxF", "wF", "S", "mE"
    );
    for (name, pred) in cases {
        let r = evaluate(&[(pred, gt.clone())], &cfg)?.report;
        println!(
            "{name:<9} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4}",
            r.mae, r.max_f, r.weighted_f, r.s_measure, r.e_measure_mean
        );
    }
    Ok(())
}
