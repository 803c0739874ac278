//! Compares the effective receptive fields of a plain 3x3 convolution, an
//! ASPP block and a ResASPP² block.

use dcnet::erf::{compare_modules, ErfSubject, DEFAULT_SEEDS, DEFAULT_TAU};
use dcnet::nn::{BlockKind, ResAspp2Config};
use dcnet::ConvSpec;

fn main() -> dcnet::Result<()> {
    let cfg = ResAspp2Config::new(8, 4, 8);
    let subjects = vec![
        ("conv3x3".to_string(), ErfSubject::Conv(ConvSpec::same3x3(8, 8, 1))),
        ("aspp".to_string(), ErfSubject::Block(BlockKind::Aspp, cfg.clone())),
        ("resaspp2".to_string(), ErfSubject::Block(BlockKind::ResAspp2, cfg)),
    ];
    let cmp = compare_modules(&subjects, (41, 41), DEFAULT_TAU, DEFAULT_SEEDS)?;
    for row in &cmp.rows {
        println!(
            "{:<9} area {:>5}  bounding box {:?}",
            row.name, row.area, row.bounding_box
        );
    }
    Ok(())
}
