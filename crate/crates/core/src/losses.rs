//! Binary cross entropy, soft IoU and the deep-supervision total.
//!
//! Both per-map losses sum over pixels rather than averaging. The total adds
//! BCE terms for every encoder side output (each against its auxiliary
//! target) and BCE + IoU terms for every decoder side output (against the
//! saliency mask), each multiplied by its weight.

use serde::Serialize;

use crate::autograd::{Tape, Var};
use crate::dcnet::{ForwardOutputs, GraphOutputs};
use crate::error::{invalid, Result};
use crate::tensor::Tensor;

/// Probability clamp used inside the logarithms.
pub const BCE_EPS: f64 = 1e-7;
/// Guard added to the IoU denominator.
pub const IOU_EPS: f64 = 1e-7;

#[inline]
fn clamp_p(p: f32) -> f64 {
    (p as f64).clamp(BCE_EPS, 1.0 - BCE_EPS)
}

/// `-sum[g ln p + (1 - g) ln(1 - p)]` with `p` clamped to `[eps, 1 - eps]`.
pub fn bce(p: &Tensor, g: &Tensor) -> Result<f64> {
    p.expect_same_shape(g)?;
    Ok(p.data()
        .iter()
        .zip(g.data())
        .map(|(&pv, &gv)| {
            let pc = clamp_p(pv);
            let gv = gv as f64;
            -(gv * pc.ln() + (1.0 - gv) * (1.0 - pc).ln())
        })
        .sum())
}

/// `upstream * dBCE/dp`, evaluated at the clamped probability.
pub(crate) fn bce_grad(p: &Tensor, g: &Tensor, upstream: f64) -> Result<Tensor> {
    p.zip_map(g, |pv, gv| {
        let pc = clamp_p(pv);
        (upstream * (pc - gv as f64) / (pc * (1.0 - pc))) as f32
    })
}

fn iou_sums(p: &Tensor, g: &Tensor) -> (f64, f64) {
    let mut inter = 0.0f64;
    let mut union = 0.0f64;
    for (&pv, &gv) in p.data().iter().zip(g.data()) {
        let (pv, gv) = (pv as f64, gv as f64);
        inter += gv * pv;
        union += gv + pv - gv * pv;
    }
    (inter, union + IOU_EPS)
}

/// `1 - sum(g p) / (sum(g + p - g p) + eps)`.
pub fn iou_loss(p: &Tensor, g: &Tensor) -> Result<f64> {
    p.expect_same_shape(g)?;
    let (inter, union) = iou_sums(p, g);
    Ok(1.0 - inter / union)
}

pub(crate) fn iou_grad(p: &Tensor, g: &Tensor, upstream: f64) -> Result<Tensor> {
    p.expect_same_shape(g)?;
    let (inter, union) = iou_sums(p, g);
    let u2 = union * union;
    p.zip_map(g, |_, gv| {
        let gv = gv as f64;
        (-upstream * (gv * union - inter * (1.0 - gv)) / u2) as f32
    })
}

/// Per-term loss weights; all 1 by default.
#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    pub encoder1: Vec<f32>,
    pub encoder2: Vec<f32>,
    pub decoder: Vec<f32>,
}

impl LossWeights {
    pub fn ones(encoder_stages: usize, decoder_stages: usize) -> Self {
        Self::uniform(encoder_stages, decoder_stages, 1.0)
    }

    pub fn uniform(encoder_stages: usize, decoder_stages: usize, w: f32) -> Self {
        LossWeights {
            encoder1: vec![w; encoder_stages],
            encoder2: vec![w; encoder_stages],
            decoder: vec![w; decoder_stages],
        }
    }

    pub fn scaled(&self, s: f32) -> Self {
        LossWeights {
            encoder1: self.encoder1.iter().map(|w| w * s).collect(),
            encoder2: self.encoder2.iter().map(|w| w * s).collect(),
            decoder: self.decoder.iter().map(|w| w * s).collect(),
        }
    }

    pub(crate) fn check(&self, outputs_e: usize, outputs_d: usize) -> Result<()> {
        if self.encoder1.len() != outputs_e || self.encoder2.len() != outputs_e || self.decoder.len() != outputs_d {
            return invalid(format!(
                "loss weights sized ({}, {}, {}) but outputs have E={outputs_e}, D={outputs_d}",
                self.encoder1.len(),
                self.encoder2.len(),
                self.decoder.len()
            ));
        }
        Ok(())
    }
}

/// Unweighted per-term losses and the weighted total.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LossReport {
    pub encoder1: Vec<f64>,
    pub encoder2: Vec<f64>,
    pub decoder: Vec<f64>,
    pub total: f64,
}

impl LossReport {
    /// Sums weighted terms in a fixed order: encoder stages first (both
    /// subtasks per stage), then decoder stages.
    pub(crate) fn weighted_total(&self, w: &LossWeights) -> f64 {
        let mut total = 0.0;
        for e in 0..self.encoder1.len() {
            total += w.encoder1[e] as f64 * self.encoder1[e] + w.encoder2[e] as f64 * self.encoder2[e];
        }
        for d in 0..self.decoder.len() {
            total += w.decoder[d] as f64 * self.decoder[d];
        }
        total
    }
}

/// Deep-supervision loss over all side outputs.
pub fn total_loss(
    outputs: &ForwardOutputs,
    saliency_gt: &Tensor,
    aux1_gt: &Tensor,
    aux2_gt: &Tensor,
    weights: &LossWeights,
) -> Result<LossReport> {
    let e = outputs.encoder1.len();
    if outputs.encoder2.len() != e {
        return invalid("encoder side output counts differ");
    }
    weights.check(e, outputs.decoder.len())?;
    let mut report = LossReport::default();
    for (m1, m2) in outputs.encoder1.iter().zip(&outputs.encoder2) {
        report.encoder1.push(bce(m1, aux1_gt)?);
        report.encoder2.push(bce(m2, aux2_gt)?);
    }
    for m in &outputs.decoder {
        report.decoder.push(bce(m, saliency_gt)? + iou_loss(m, saliency_gt)?);
    }
    report.total = report.weighted_total(weights);
    Ok(report)
}

/// The same total recorded on a tape. Returns the loss variable and the
/// report computed from the tape's `f64` scalars.
pub fn total_loss_on_tape(
    tape: &mut Tape,
    outputs: &GraphOutputs<Var>,
    saliency_gt: Var,
    aux1_gt: Var,
    aux2_gt: Var,
    weights: &LossWeights,
) -> Result<(Var, LossReport)> {
    let e = outputs.encoder1.len();
    if outputs.encoder2.len() != e {
        return invalid("encoder side output counts differ");
    }
    weights.check(e, outputs.decoder.len())?;
    let mut report = LossReport::default();
    let mut weighted = Vec::new();
    for i in 0..e {
        let l1 = tape.bce(outputs.encoder1[i], aux1_gt)?;
        let l2 = tape.bce(outputs.encoder2[i], aux2_gt)?;
        report.encoder1.push(tape.scalar(l1)?);
        report.encoder2.push(tape.scalar(l2)?);
        weighted.push(tape.scale(l1, weights.encoder1[i]));
        weighted.push(tape.scale(l2, weights.encoder2[i]));
    }
    for (i, &p) in outputs.decoder.iter().enumerate() {
        let b = tape.bce(p, saliency_gt)?;
        let u = tape.iou(p, saliency_gt)?;
        let l = tape.add(b, u)?;
        report.decoder.push(tape.scalar(l)?);
        weighted.push(tape.scale(l, weights.decoder[i]));
    }
    let mut total = weighted[0];
    for &t in &weighted[1..] {
        total = tape.add(total, t)?;
    }
    report.total = report.weighted_total(weights);
    Ok((total, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f32]) -> Tensor {
        Tensor::new([1, 1, 1, v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn bce_single_half() {
        let l = bce(&t(&[0.5]), &t(&[1.0])).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn bce_binary_match_is_near_zero() {
        let g = t(&[1.0, 0.0, 1.0]);
        assert!(bce(&g, &g).unwrap() < 1e-6);
    }

    #[test]
    fn bce_four_pixels() {
        // -(ln .9 + ln .9 + ln .8 + ln .8)
        let l = bce(&t(&[0.9, 0.1, 0.8, 0.2]), &t(&[1.0, 0.0, 1.0, 0.0])).unwrap();
        assert!((l - 0.65700).abs() < 1e-5, "{l}");
    }

    #[test]
    fn iou_cases() {
        let ones = t(&[1.0; 4]);
        assert!(iou_loss(&ones, &ones).unwrap().abs() < 1e-6);
        assert!((iou_loss(&t(&[0.0; 4]), &ones).unwrap() - 1.0).abs() < 1e-12);
        let half = t(&[1.0, 1.0, 0.0, 0.0]);
        assert!((iou_loss(&ones, &half).unwrap() - 0.5).abs() < 1e-6);
    }

    #[test]
    fn shape_mismatch() {
        assert!(bce(&t(&[0.5]), &t(&[0.5, 0.5])).is_err());
        assert!(iou_loss(&t(&[0.5]), &t(&[0.5, 0.5])).is_err());
    }
}
