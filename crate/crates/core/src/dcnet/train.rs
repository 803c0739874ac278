use std::ops::ControlFlow;

use crate::autograd::{sgd_step, OptimizerConfig};
use crate::dcnet::data::{Batch, Dataset};
use crate::dcnet::DCNet;
use crate::error::{invalid, Error, Result};
use crate::losses::{total_loss_on_tape, LossReport, LossWeights};
use crate::nn::TapeExec;
use crate::ops::BnMode;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    /// `None` means every term has weight 1.
    pub weights: Option<LossWeights>,
    /// Samples per step; batches are taken in dataset order and wrap around.
    pub batch_size: usize,
    /// How the summed objective is scaled before differentiation.
    pub objective: Objective,
}

/// Scaling of the differentiated objective. Reported losses are always the
/// unscaled pixel sums.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Objective {
    /// Gradient of the pixel-summed total.
    Sum,
    /// Gradient of the total divided by `batch * height * width`.
    #[default]
    PixelMean,
}

impl TrainConfig {
    pub fn new(learning_rate: f32) -> Self {
        TrainConfig {
            optimizer: OptimizerConfig::new(learning_rate),
            weights: None,
            batch_size: 8,
            objective: Objective::default(),
        }
    }

    fn weights_for(&self, net: &DCNet) -> LossWeights {
        self.weights
            .clone()
            .unwrap_or_else(|| LossWeights::ones(net.config.encoder_stages, net.config.decoder_stages()))
    }
}

/// One forward/backward/update on `batch` with batchnorm in training mode.
pub fn train_step(net: &mut DCNet, batch: &Batch, cfg: &TrainConfig) -> Result<LossReport> {
    let weights = cfg.weights_for(net);
    cfg.optimizer.validate()?;
    let mut ex = TapeExec::new(&net.store, BnMode::Train);
    let images = ex.tape.constant(batch.images.clone());
    let sal = ex.tape.constant(batch.saliency.clone());
    let aux1 = ex.tape.constant(batch.aux1.clone());
    let aux2 = ex.tape.constant(batch.aux2.clone());
    let outputs = net.run(&mut ex, &images)?;
    let (loss, report) = total_loss_on_tape(&mut ex.tape, &outputs, sal, aux1, aux2, &weights)?;
    if !report.total.is_finite() {
        return Err(Error::TrainingDiverged { iteration: 0 });
    }
    let loss = match cfg.objective {
        Objective::Sum => loss,
        Objective::PixelMean => {
            let (n, _, h, w) = batch.saliency.dims();
            ex.tape.scale(loss, 1.0 / (n * h * w) as f32)
        }
    };
    let (tape, stats) = ex.into_parts();
    let grads = tape.backward(loss)?;
    net.store.zero_grad();
    grads.accumulate_into(&mut net.store);
    TapeExec::commit_running_stats(&stats, &mut net.store);
    sgd_step(&mut net.store, &cfg.optimizer)?;
    Ok(report)
}

/// Repeats [`train_step`] and returns the total loss of every iteration.
pub fn train_loop(net: &mut DCNet, data: &Dataset, iterations: usize, cfg: &TrainConfig) -> Result<Vec<f64>> {
    train_loop_with(net, data, iterations, cfg, |_, _, _| ControlFlow::Continue(()))
}

/// Like [`train_loop`], calling `on_step(iteration, report, net)` after every
/// step; returning `Break` stops early.
pub fn train_loop_with(
    net: &mut DCNet,
    data: &Dataset,
    iterations: usize,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(usize, &LossReport, &DCNet) -> ControlFlow<()>,
) -> Result<Vec<f64>> {
    if iterations == 0 {
        return Ok(Vec::new());
    }
    if data.is_empty() {
        return invalid("training needs a non-empty dataset");
    }
    if cfg.batch_size == 0 {
        return invalid("batch size must be positive");
    }
    let bs = cfg.batch_size.min(data.len());
    let whole = if bs == data.len() {
        Some(data.full_batch()?)
    } else {
        None
    };
    let mut history = Vec::with_capacity(iterations);
    let mut cursor = 0;
    for it in 0..iterations {
        let batch = match &whole {
            Some(b) => b.clone(),
            None => {
                let idx: Vec<usize> = (0..bs).map(|k| (cursor + k) % data.len()).collect();
                cursor = (cursor + bs) % data.len();
                data.batch(&idx)?
            }
        };
        let report = match train_step(net, &batch, cfg) {
            Err(Error::TrainingDiverged { .. }) => return Err(Error::TrainingDiverged { iteration: it }),
            other => other?,
        };
        history.push(report.total);
        if on_step(it, &report, net).is_break() {
            break;
        }
    }
    Ok(history)
}
