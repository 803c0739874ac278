//! Converts a dual-encoder network into its parallel-encoder form and checks
//! stage by stage that nothing changed.

use dcnet::dcnet::{DCNet, DCNetConfig};
use dcnet::reparam::{merge_dual_encoder, verify_merge};
use dcnet::Tensor;

fn main() -> dcnet::Result<()> {
    let cfg = DCNetConfig::uniform(3, 16, (64, 64));
    let dual = DCNet::build(&cfg, 1)?;
    let merged = merge_dual_encoder(&dual)?;
    println!("dual parameters:   {}", dual.store.trainable_count());
    println!("merged parameters: {}", merged.store.trainable_count());

    let images = Tensor::from_fn([2, 3, 64, 64], |n, c, y, x| {
        ((n * 17 + c * 5 + y * 3 + x) % 29) as f32 / 29.0
    });
    let report = verify_merge(&dual, &merged, &images)?;
    for (i, d) in report.encoder_stages.iter().enumerate() {
        println!("encoder stage {}: {d:.2e}", i + 1);
    }
    for (i, d) in report.decoder_stages.iter().enumerate() {
        println!("decoder stage {}: {d:.2e}", i + 1);
    }
    println!("end-to-end: {:.2e}", report.end_to_end);
    Ok(())
}
