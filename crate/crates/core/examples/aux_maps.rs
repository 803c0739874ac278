//! Derives the auxiliary supervision maps from a ground-truth mask and prints
//! them as ASCII.

use dcnet::auxmaps::{AuxMapSet, BinaryMask};
use dcnet::Tensor;

fn show(title: &str, t: &Tensor) {
    println!("{title}");
    let (_, _, h, w) = t.dims();
    for y in 0..h {
        let row: String = (0..w)
            .map(|x| match t.at(0, 0, y, x) {
                v if v >= 0.75 => '#',
                v if v >= 0.4 => '+',
                v if v > 0.05 => '.',
                _ => ' ',
            })
            .collect();
        println!("  |{row}|");
    }
}

fn main() -> dcnet::Result<()> {
    let mask = BinaryMask::from_fn(20, 40, |y, x| {
        let body = (y as f32 - 10.0).powi(2) / 49.0 + (x as f32 - 14.0).powi(2) / 100.0 <= 1.0;
        let arm = (8..12).contains(&y) && (22..36).contains(&x);
        body || arm
    })?;
    let set = AuxMapSet::generate(&mask)?;
    show("mask", &mask.to_tensor());
    show("edge, width 2", &set.edge(2).expect("width 2 is generated").to_tensor());
    show("location", &set.location.to_tensor());
    show("body", &set.body);
    show("detail", &set.detail);
    Ok(())
}
