//! Saliency evaluation: MAE, PR and F curves, max F, weighted F, S-measure
//! and mean E-measure.
//!
//! Predictions are `(1, 1, h, w)` tensors in `[0, 1]`; ground truth is a
//! [`BinaryMask`]. Threshold-based measures quantize predictions to 8 bits
//! (round half up) and call a pixel positive when its level is `>= t` for
//! `t` in `0..=255`.

use serde::Serialize;

use crate::auxmaps::BinaryMask;
use crate::error::{invalid, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricConfig {
    pub beta2_f: f64,
    pub beta2_wf: f64,
    pub alpha_s: f64,
    pub thresholds: usize,
    pub eps: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            beta2_f: 0.3,
            beta2_wf: 1.0,
            alpha_s: 0.5,
            thresholds: 256,
            eps: 1e-8,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.beta2_f, self.beta2_wf, self.alpha_s, self.eps];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return invalid(format!("metric parameters must be positive: {self:?}"));
        }
        if self.alpha_s > 1.0 {
            return invalid("alpha_s must lie in (0, 1]");
        }
        if self.thresholds != 256 {
            return invalid(format!("expected 256 thresholds, got {}", self.thresholds));
        }
        Ok(())
    }
}

/// Per-threshold precision, recall and F; index `t` is threshold `t`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurveData {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f: Vec<f64>,
}

impl CurveData {
    /// Pointwise mean of per-image curves.
    pub fn mean(curves: &[CurveData]) -> Result<CurveData> {
        let Some(first) = curves.first() else {
            return invalid("cannot average zero curves");
        };
        let len = first.f.len();
        if curves.iter().any(|c| c.f.len() != len) {
            return invalid("curves differ in length");
        }
        let avg = |pick: fn(&CurveData) -> &Vec<f64>| -> Vec<f64> {
            (0..len)
                .map(|t| curves.iter().map(|c| pick(c)[t]).sum::<f64>() / curves.len() as f64)
                .collect()
        };
        Ok(CurveData {
            precision: avg(|c| &c.precision),
            recall: avg(|c| &c.recall),
            f: avg(|c| &c.f),
        })
    }

    pub fn len(&self) -> usize {
        self.f.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,precision,recall,f\n");
        for t in 0..self.len() {
            s.push_str(&format!(
                "{t},{:.9},{:.9},{:.9}\n",
                self.precision[t], self.recall[t], self.f[t]
            ));
        }
        s
    }
}

fn check_pair(pred: &Tensor, gt: &BinaryMask) -> Result<(usize, usize)> {
    let (n, c, h, w) = pred.dims();
    if n != 1 || c != 1 || h != gt.height() || w != gt.width() {
        return invalid(format!(
            "prediction {:?} does not match mask {}x{}",
            pred.shape(),
            gt.height(),
            gt.width()
        ));
    }
    if let Some(v) = pred.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return invalid(format!("prediction value {v} outside [0, 1]"));
    }
    Ok((h, w))
}

/// 8-bit level of a probability, rounding half up.
pub fn quantize(v: f32) -> u8 {
    (v as f64 * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn mae(pred: &Tensor, gt: &BinaryMask) -> Result<f64> {
    check_pair(pred, gt)?;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&p, &g)| (p as f64 - if g { 1.0 } else { 0.0 }).abs())
        .sum();
    Ok(sum / pred.len() as f64)
}

fn f_score(p: f64, r: f64, beta2: f64, eps: f64) -> f64 {
    (1.0 + beta2) * p * r / (beta2 * p + r + eps)
}

pub fn pr_and_f_curves(pred: &Tensor, gt: &BinaryMask, cfg: &MetricConfig) -> Result<CurveData> {
    check_pair(pred, gt)?;
    cfg.validate()?;
    let mut fg_hist = [0u64; 256];
    let mut bg_hist = [0u64; 256];
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        let q = quantize(p) as usize;
        if g {
            fg_hist[q] += 1;
        } else {
            bg_hist[q] += 1;
        }
    }
    let positives = gt.count() as f64;
    let mut precision = vec![0.0; 256];
    let mut recall = vec![0.0; 256];
    let mut f = vec![0.0; 256];
    let (mut tp, mut fp) = (0u64, 0u64);
    for t in (0..256).rev() {
        tp += fg_hist[t];
        fp += bg_hist[t];
        let (tpf, fpf) = (tp as f64, fp as f64);
        let fneg = positives - tpf;
        precision[t] = tpf / (tpf + fpf + cfg.eps);
        recall[t] = tpf / (tpf + fneg + cfg.eps);
        f[t] = f_score(precision[t], recall[t], cfg.beta2_f, cfg.eps);
    }
    Ok(CurveData { precision, recall, f })
}

pub fn max_f(curve: &CurveData) -> f64 {
    curve.f.iter().cloned().fold(0.0, f64::max)
}

/// Weighted F score; `degenerate` is set when the mask is empty, in which
/// case the score is 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WeightedF {
    pub score: f64,
    pub degenerate: bool,
}

/// Nearest foreground pixel for every pixel: `(distance, index)`. Ties go to
/// the smallest column, then the smallest row.
fn nearest_foreground(gt: &BinaryMask) -> (Vec<f64>, Vec<usize>) {
    let (h, w) = (gt.height(), gt.width());
    // Nearest foreground row in the same column, per pixel.
    let mut col_row = vec![usize::MAX; h * w];
    for x in 0..w {
        let mut above = usize::MAX;
        for y in 0..h {
            if gt.get(y, x) {
                above = y;
            }
            col_row[y * w + x] = above;
        }
        let mut below = usize::MAX;
        for y in (0..h).rev() {
            if gt.get(y, x) {
                below = y;
            }
            let a = col_row[y * w + x];
            let pick_below = below != usize::MAX && (a == usize::MAX || below - y < y - a);
            if pick_below {
                col_row[y * w + x] = below;
            }
        }
    }
    let mut dist = vec![0.0; h * w];
    let mut idx = vec![0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut best = (u64::MAX, 0usize);
            for xs in 0..w {
                let r = col_row[y * w + xs];
                if r == usize::MAX {
                    continue;
                }
                let d = (x.abs_diff(xs) as u64).pow(2) + (y.abs_diff(r) as u64).pow(2);
                if d < best.0 {
                    best = (d, r * w + xs);
                }
            }
            dist[y * w + x] = (best.0 as f64).sqrt();
            idx[y * w + x] = best.1;
        }
    }
    (dist, idx)
}

/// Normalized 7x7 Gaussian with sigma 5.
fn gaussian_kernel() -> [[f64; 7]; 7] {
    let mut k = [[0.0; 7]; 7];
    let mut sum = 0.0;
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (i as f64 - 3.0, j as f64 - 3.0);
            *v = (-(dy * dy + dx * dx) / 50.0).exp();
            sum += *v;
        }
    }
    k.iter_mut().flatten().for_each(|v| *v /= sum);
    k
}

fn filter_zero_pad(src: &[f64], h: usize, w: usize) -> Vec<f64> {
    let k = gaussian_kernel();
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, row) in k.iter().enumerate() {
                let Some(sy) = (y + i).checked_sub(3).filter(|&v| v < h) else {
                    continue;
                };
                for (j, kv) in row.iter().enumerate() {
                    if let Some(sx) = (x + j).checked_sub(3).filter(|&v| v < w) {
                        acc += kv * src[sy * w + sx];
                    }
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

pub fn weighted_f(pred: &Tensor, gt: &BinaryMask, cfg: &MetricConfig) -> Result<WeightedF> {
    let (h, w) = check_pair(pred, gt)?;
    cfg.validate()?;
    if gt.is_empty() {
        return Ok(WeightedF {
            score: 0.0,
            degenerate: true,
        });
    }
    let g = gt.data();
    let err: Vec<f64> = pred
        .data()
        .iter()
        .zip(g)
        .map(|(&p, &gv)| (p as f64 - if gv { 1.0 } else { 0.0 }).abs())
        .collect();
    let (dist, nearest) = nearest_foreground(gt);
    // Background errors borrow the error of their nearest foreground pixel.
    let borrowed: Vec<f64> = (0..h * w)
        .map(|i| if g[i] { err[i] } else { err[nearest[i]] })
        .collect();
    let smoothed = filter_zero_pad(&borrowed, h, w);
    let decay = 0.5f64.ln() / 5.0;
    let (mut fg_err, mut bg_err) = (0.0, 0.0);
    for i in 0..h * w {
        if g[i] {
            fg_err += err[i].min(smoothed[i]);
        } else {
            bg_err += err[i] * (2.0 - (decay * dist[i]).exp());
        }
    }
    let positives = gt.count() as f64;
    let tp = positives - fg_err;
    let recall = 1.0 - fg_err / positives;
    let precision = tp / (cfg.eps + tp + bg_err);
    Ok(WeightedF {
        score: f_score(precision, recall, cfg.beta2_wf, cfg.eps),
        degenerate: false,
    })
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Guard used inside the structure measure, matching the double-precision
/// machine epsilon of the reference implementation. A larger guard biases
/// near-uniform regions away from a perfect score.
pub const STRUCTURE_EPS: f64 = f64::EPSILON;

fn object_score(values: impl Iterator<Item = f64> + Clone, eps: f64) -> f64 {
    let (x, sigma) = mean_std(values);
    2.0 * x / (x * x + 1.0 + sigma + eps)
}

fn s_object(p: &[f64], g: &[bool], eps: f64) -> f64 {
    let fg = object_score(p.iter().zip(g).filter(|(_, &gv)| gv).map(|(&v, _)| v), eps);
    let bg = object_score(p.iter().zip(g).filter(|(_, &gv)| !gv).map(|(&v, _)| 1.0 - v), eps);
    let u = g.iter().filter(|&&v| v).count() as f64 / g.len() as f64;
    u * fg + (1.0 - u) * bg
}

/// Structural similarity of one region; empty regions score 0.
fn region_ssim(p: &[f64], g: &[f64], eps: f64) -> f64 {
    let n = p.len() as f64;
    if p.is_empty() {
        return 0.0;
    }
    let x = p.iter().sum::<f64>() / n;
    let y = g.iter().sum::<f64>() / n;
    let denom = n - 1.0 + eps;
    let sx2 = p.iter().map(|v| (v - x).powi(2)).sum::<f64>() / denom;
    let sy2 = g.iter().map(|v| (v - y).powi(2)).sum::<f64>() / denom;
    let sxy = p.iter().zip(g).map(|(a, b)| (a - x) * (b - y)).sum::<f64>() / denom;
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sx2 + sy2);
    if alpha != 0.0 {
        alpha / (beta + eps)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn s_region(p: &[f64], gt: &BinaryMask, eps: f64) -> f64 {
    let (h, w) = (gt.height(), gt.width());
    let total = gt.count() as f64;
    // 1-based centroid, rounded half away from zero.
    let (cx, cy) = if total == 0.0 {
        (((w as f64) / 2.0).round() as usize, ((h as f64) / 2.0).round() as usize)
    } else {
        let (mut sx, mut sy) = (0.0, 0.0);
        for y in 0..h {
            for x in 0..w {
                if gt.get(y, x) {
                    sx += (x + 1) as f64;
                    sy += (y + 1) as f64;
                }
            }
        }
        ((sx / total).round() as usize, (sy / total).round() as usize)
    };
    let area = (h * w) as f64;
    let weights = [
        (cx * cy) as f64 / area,
        ((w - cx) * cy) as f64 / area,
        (cx * (h - cy)) as f64 / area,
    ];
    let weights = [weights[0], weights[1], weights[2], 1.0 - weights.iter().sum::<f64>()];
    let quads = [(0..cy, 0..cx), (0..cy, cx..w), (cy..h, 0..cx), (cy..h, cx..w)];
    let mut score = 0.0;
    for (wq, (rows, cols)) in weights.iter().zip(quads) {
        let mut pv = Vec::new();
        let mut gv = Vec::new();
        for y in rows {
            for x in cols.clone() {
                pv.push(p[y * w + x]);
                gv.push(if gt.get(y, x) { 1.0 } else { 0.0 });
            }
        }
        score += wq * region_ssim(&pv, &gv, eps);
    }
    score
}

pub fn s_measure(pred: &Tensor, gt: &BinaryMask, cfg: &MetricConfig) -> Result<f64> {
    check_pair(pred, gt)?;
    cfg.validate()?;
    let p: Vec<f64> = pred.data().iter().map(|&v| v as f64).collect();
    let mean_p = p.iter().sum::<f64>() / p.len() as f64;
    let y = gt.count() as f64 / p.len() as f64;
    if y == 0.0 {
        return Ok(1.0 - mean_p);
    }
    if y == 1.0 {
        return Ok(mean_p);
    }
    let a = cfg.alpha_s;
    let q = a * s_object(&p, gt.data(), STRUCTURE_EPS) + (1.0 - a) * s_region(&p, gt, STRUCTURE_EPS);
    Ok(q.max(0.0))
}

/// Enhanced-alignment score of a binary prediction, averaged over pixels.
fn e_measure_binary(fm: &[bool], g: &[bool], eps: f64) -> f64 {
    let n = g.len() as f64;
    let to_f = |b: bool| if b { 1.0 } else { 0.0 };
    let gt_count = g.iter().filter(|&&v| v).count();
    let sum: f64 = if gt_count == 0 {
        fm.iter().map(|&v| 1.0 - to_f(v)).sum()
    } else if gt_count == g.len() {
        fm.iter().map(|&v| to_f(v)).sum()
    } else {
        let mu_fm = fm.iter().map(|&v| to_f(v)).sum::<f64>() / n;
        let mu_gt = gt_count as f64 / n;
        fm.iter()
            .zip(g)
            .map(|(&a, &b)| {
                let af = to_f(a) - mu_fm;
                let ag = to_f(b) - mu_gt;
                let align = 2.0 * ag * af / (ag * ag + af * af + eps);
                (align + 1.0).powi(2) / 4.0
            })
            .sum()
    };
    sum / n
}

/// E-measure at every threshold.
pub fn e_measure_curve(pred: &Tensor, gt: &BinaryMask, cfg: &MetricConfig) -> Result<Vec<f64>> {
    check_pair(pred, gt)?;
    cfg.validate()?;
    let levels: Vec<u8> = pred.data().iter().map(|&v| quantize(v)).collect();
    Ok((0..256usize)
        .map(|t| {
            let fm: Vec<bool> = levels.iter().map(|&q| q as usize >= t).collect();
            e_measure_binary(&fm, gt.data(), cfg.eps)
        })
        .collect())
}

pub fn e_measure_mean(pred: &Tensor, gt: &BinaryMask, cfg: &MetricConfig) -> Result<f64> {
    let curve = e_measure_curve(pred, gt, cfg)?;
    Ok(curve.iter().sum::<f64>() / curve.len() as f64)
}

/// Dataset-level scores. `max_f` is the maximum of the mean F curve; the
/// others are per-image means.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub images: usize,
    pub mae: f64,
    pub max_f: f64,
    pub weighted_f: f64,
    pub s_measure: f64,
    pub e_measure_mean: f64,
    /// Images whose weighted F was degenerate (empty mask).
    pub degenerate: usize,
}

impl MetricReport {
    pub fn to_text(&self) -> String {
        format!(
            "images: {}\nmae: {:.6}\nmaxF: {:.6}\nweightedF: {:.6}\nsMeasure: {:.6}\neMeasureMean: {:.6}\ndegenerate: {}\n",
            self.images, self.mae, self.max_f, self.weighted_f, self.s_measure, self.e_measure_mean, self.degenerate
        )
    }
}

/// Evaluation of a whole set of `(prediction, mask)` pairs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub report: MetricReport,
    pub curve: CurveData,
}

pub fn evaluate(pairs: &[(Tensor, BinaryMask)], cfg: &MetricConfig) -> Result<Evaluation> {
    if pairs.is_empty() {
        return invalid("nothing to evaluate");
    }
    let mut curves = Vec::with_capacity(pairs.len());
    let (mut m, mut wf, mut s, mut e) = (0.0, 0.0, 0.0, 0.0);
    let mut degenerate = 0;
    for (pred, gt) in pairs {
        curves.push(pr_and_f_curves(pred, gt, cfg)?);
        m += mae(pred, gt)?;
        let w = weighted_f(pred, gt, cfg)?;
        wf += w.score;
        degenerate += w.degenerate as usize;
        s += s_measure(pred, gt, cfg)?;
        e += e_measure_mean(pred, gt, cfg)?;
    }
    let n = pairs.len() as f64;
    let curve = CurveData::mean(&curves)?;
    Ok(Evaluation {
        report: MetricReport {
            images: pairs.len(),
            mae: m / n,
            max_f: max_f(&curve),
            weighted_f: wf / n,
            s_measure: s / n,
            e_measure_mean: e / n,
            degenerate,
        },
        curve,
    })
}
