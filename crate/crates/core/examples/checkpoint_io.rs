//! Saves a network, reloads it, and writes its prediction as a PGM image.

use dcnet::dcnet::{DCNet, DCNetConfig};
use dcnet::io::{load_checkpoint, read_pgm, save_checkpoint, write_pgm};
use dcnet::Tensor;

fn main() -> dcnet::Result<()> {
    let dir = std::env::temp_dir().join("dcnet-checkpoint-example");
    std::fs::create_dir_all(&dir)?;
    let net = DCNet::build(&DCNetConfig::uniform(2, 8, (32, 32)), 5)?;
    let path = dir.join("net.ckpt");
    save_checkpoint(&net, &path)?;
    let back = load_checkpoint(&path)?;
    println!(
        "{} bytes, {} tensors",
        std::fs::metadata(&path)?.len(),
        back.store.len()
    );

    let image = Tensor::from_fn([1, 3, 32, 32], |_, c, y, x| ((c * 3 + y + x) % 8) as f32 / 8.0);
    let a = net.forward(&image)?;
    let b = back.forward(&image)?;
    println!("reloaded outputs differ by {:.1e}", a.max_abs_diff(&b)?);

    let map = dir.join("saliency.pgm");
    write_pgm(b.saliency(), &map)?;
    println!("wrote {} ({:?})", map.display(), read_pgm(&map)?.shape());
    Ok(())
}
