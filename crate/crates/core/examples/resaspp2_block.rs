//! Builds a two-level ResASPP² block and an ASPP block, runs both, and shows
//! that merging the parallel dilation banks leaves the output unchanged while
//! cutting GEMM launches.

use dcnet::autograd::ParamStore;
use dcnet::nn::{AsppBlock, BlockKind, InferExec, ParamBuilder, ResAspp2Config};
use dcnet::ops::counters;
use dcnet::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> dcnet::Result<()> {
    let cfg = ResAspp2Config::new(16, 8, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::from_fn([1, 16, 32, 32], |_, c, y, x| ((c * 7 + y * 3 + x) % 11) as f32 / 11.0);

    for kind in [BlockKind::ResAspp2, BlockKind::Aspp] {
        let mut store = ParamStore::new();
        let block = AsppBlock::build(&mut ParamBuilder::new(&mut store, &mut rng), "blk", kind, &cfg)?;

        let before = counters::snapshot();
        let plain = block.forward(&mut InferExec::new(&store), &x)?;
        let plain_counts = counters::snapshot() - before;

        let before = counters::snapshot();
        let merged = block.forward(&mut InferExec::merged(&store), &x)?;
        let merged_counts = counters::snapshot() - before;

        println!(
            "{:<9} params {:>6}  out {:?}  gemm {} -> {}  max-abs {:.2e}  receptive radius {}",
            kind.name(),
            store.trainable_count(),
            plain.shape(),
            plain_counts.gemm,
            merged_counts.gemm,
            plain.max_abs_diff(&merged)?,
            cfg.receptive_radius(kind.levels()),
        );
    }
    Ok(())
}
