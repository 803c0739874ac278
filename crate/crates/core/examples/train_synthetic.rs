//! Trains a small network on generated blobs and reports the loss curve and
//! the scores of the final saliency maps.

use std::ops::ControlFlow;

use dcnet::auxmaps::BinaryMask;
use dcnet::dcnet::{synthetic_dataset, train_loop_with, DCNet, DCNetConfig, TrainConfig};
use dcnet::metrics::{evaluate, MetricConfig};

fn main() -> dcnet::Result<()> {
    let iterations: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(60);
    let data = synthetic_dataset(8, (32, 32), 3)?;
    let mut net = DCNet::build(&DCNetConfig::uniform(2, 16, (32, 32)), 3)?;
    let mut cfg = TrainConfig::new(0.01);
    cfg.batch_size = 4;

    let history = train_loop_with(&mut net, &data, iterations, &cfg, |it, report, _| {
        if it % 10 == 0 {
            println!("iter {it:>4}  loss {:.2}", report.total);
        }
        ControlFlow::Continue(())
    })?;
    if let (Some(a), Some(b)) = (history.first(), history.last()) {
        println!("loss {a:.2} -> {b:.2}");
    }

    let batch = data.full_batch()?;
    let out = net.forward(&batch.images)?;
    let pairs = (0..data.len())
        .map(|i| {
            Ok((
                out.saliency().batch_item(i)?,
                BinaryMask::threshold(&batch.saliency.batch_item(i)?)?,
            ))
        })
        .collect::<dcnet::Result<Vec<_>>>()?;
    print!("{}", evaluate(&pairs, &MetricConfig::default())?.report.to_text());
    Ok(())
}
