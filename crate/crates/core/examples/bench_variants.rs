//! Times the four inference variants: dual or parallel encoders, each with
//! separate or merged pyramid banks.

use dcnet::dcnet::{DCNet, DCNetConfig};
use dcnet::reparam::{bench, merge_dual_encoder};
use dcnet::Tensor;

fn main() -> dcnet::Result<()> {
    let cfg = DCNetConfig::uniform(3, 16, (64, 64));
    let dual = DCNet::build(&cfg, 0)?;
    let merged = merge_dual_encoder(&dual)?;
    let images = Tensor::from_fn([1, 3, 64, 64], |_, c, y, x| ((c + y * x) % 17) as f32 / 17.0);
    print!("{}", bench(&dual, &merged, &images, 5)?.to_text());
    Ok(())
}
