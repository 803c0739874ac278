//! Parallel Encoder: two shape-identical encoders become one.
//!
//! Every encoder tensor is stacked along its leading axis. For the stem,
//! which both encoders apply to the same image, that is an output-channel
//! concatenation. Every later conv is grouped with `groups = 2`, and a grouped
//! weight `(2o, i, kh, kw)` with the first `o` filters reading the first `i`
//! channels is exactly the two original weights stacked. Batchnorm vectors and
//! side-head biases stack the same way. Decoder tensors are copied.

use serde::Serialize;

use crate::dcnet::{DCNet, GraphOutputs};
use crate::error::{Error, Result};
use crate::nn::InferExec;
use crate::tensor::Tensor;

fn stack_leading(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = a.shape();
    let mut data = Vec::with_capacity(a.len() + b.len());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::new([2 * n, c, h, w], data)
}

fn encoder_tree(net: &DCNet, prefix: &str) -> Vec<(String, [usize; 4])> {
    net.store
        .iter()
        .filter_map(|p| {
            p.name
                .strip_prefix(prefix)
                .map(|rest| (rest.to_string(), p.value.shape()))
        })
        .collect()
}

/// Builds the inference form of a dual-encoder network.
pub fn merge_dual_encoder(net: &DCNet) -> Result<DCNet> {
    if net.is_merged() {
        return Err(Error::CannotMerge {
            branch: 0,
            reason: "graph already has a merged encoder".into(),
        });
    }
    let t1 = encoder_tree(net, "encoder1.");
    let t2 = encoder_tree(net, "encoder2.");
    if t1.len() != t2.len() {
        return Err(Error::CannotMerge {
            branch: 1,
            reason: format!("encoder parameter counts differ: {} vs {}", t1.len(), t2.len()),
        });
    }
    if let Some(((n1, s1), (_, s2))) = t1.iter().zip(&t2).find(|(a, b)| a != b) {
        return Err(Error::CannotMerge {
            branch: 1,
            reason: format!("encoders differ at `{n1}`: {s1:?} vs {s2:?}"),
        });
    }

    let mut merged = DCNet::build_layout(&net.config, true, 0)?;
    let ids: Vec<_> = merged.store.ids().collect();
    for id in ids {
        let name = merged.store.get(id).name.clone();
        let lookup = |n: &str| {
            net.store
                .by_name(n)
                .map(|p| &p.value)
                .ok_or_else(|| Error::ParameterMismatch {
                    name: n.to_string(),
                    message: "missing from source graph".into(),
                })
        };
        let value = match name.strip_prefix("encoder.") {
            Some(rest) => stack_leading(
                lookup(&format!("encoder1.{rest}"))?,
                lookup(&format!("encoder2.{rest}"))?,
            )?,
            None => lookup(&name)?.clone(),
        };
        merged.store.set_value(id, value)?;
    }
    Ok(merged)
}

/// Agreement between a dual-encoder graph and its merged form.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EquivalenceReport {
    /// Max-abs difference of every encoder stage output.
    pub encoder_stages: Vec<f64>,
    /// Max-abs difference of every decoder stage output.
    pub decoder_stages: Vec<f64>,
    /// Max-abs difference over all side-output maps.
    pub end_to_end: f64,
}

impl EquivalenceReport {
    pub fn stage_max(&self) -> f64 {
        self.encoder_stages.iter().cloned().fold(0.0, f64::max)
    }
}

fn max_diffs(a: &[Tensor], b: &[Tensor]) -> Result<Vec<f64>> {
    a.iter().zip(b).map(|(x, y)| x.max_abs_diff(y)).collect()
}

/// Runs both graphs in inference mode and compares every stage and map.
pub fn verify_merge(dual: &DCNet, merged: &DCNet, images: &Tensor) -> Result<EquivalenceReport> {
    let a: GraphOutputs<Tensor> = dual.run(&mut InferExec::new(&dual.store), images)?;
    let b: GraphOutputs<Tensor> = merged.run(&mut InferExec::new(&merged.store), images)?;
    let sides = |g: &GraphOutputs<Tensor>| -> Vec<Tensor> {
        g.encoder1
            .iter()
            .chain(&g.encoder2)
            .chain(&g.decoder)
            .cloned()
            .collect()
    };
    Ok(EquivalenceReport {
        encoder_stages: max_diffs(&a.encoder_features, &b.encoder_features)?,
        decoder_stages: max_diffs(&a.decoder_features, &b.decoder_features)?,
        end_to_end: max_diffs(&sides(&a), &sides(&b))?.into_iter().fold(0.0, f64::max),
    })
}
