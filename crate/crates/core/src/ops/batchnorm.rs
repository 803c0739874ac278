use crate::error::{invalid, Result};
use crate::tensor::Tensor;

/// Running-statistics momentum used in training mode.
pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f32 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Per-channel statistics of a training-mode forward pass.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased variance, used for normalization.
    pub var: Vec<f64>,
    /// Number of values per channel.
    pub count: usize,
}

impl BatchStats {
    pub fn unbiased_var(&self, c: usize) -> f64 {
        if self.count > 1 {
            self.var[c] * self.count as f64 / (self.count - 1) as f64
        } else {
            self.var[c]
        }
    }
}

fn check_vectors(input: &Tensor, vecs: &[&Tensor]) -> Result<usize> {
    let c = input.dims().1;
    for v in vecs {
        if v.len() != c {
            return invalid(format!("batchnorm parameter has {} values for {c} channels", v.len()));
        }
    }
    Ok(c)
}

pub(crate) fn batch_stats(input: &Tensor) -> BatchStats {
    let (n, c, h, w) = input.dims();
    let plane = h * w;
    let count = n * plane;
    let mut mean = vec![0.0f64; c];
    let mut var = vec![0.0f64; c];
    for ci in 0..c {
        let mut s = 0.0;
        for ni in 0..n {
            let base = (ni * c + ci) * plane;
            s += input.data()[base..base + plane].iter().map(|&v| v as f64).sum::<f64>();
        }
        let m = s / count as f64;
        let mut ss = 0.0;
        for ni in 0..n {
            let base = (ni * c + ci) * plane;
            ss += input.data()[base..base + plane]
                .iter()
                .map(|&v| (v as f64 - m).powi(2))
                .sum::<f64>();
        }
        mean[ci] = m;
        var[ci] = ss / count as f64;
    }
    BatchStats { mean, var, count }
}

/// `gamma * (x - mean) / sqrt(var + eps) + beta` per channel.
pub(crate) fn normalize(input: &Tensor, gamma: &Tensor, beta: &Tensor, mean: &[f64], var: &[f64], eps: f32) -> Tensor {
    let (n, c, h, w) = input.dims();
    let plane = h * w;
    let mut out = input.clone();
    let d = out.data_mut();
    for ni in 0..n {
        for ci in 0..c {
            let inv = 1.0 / (var[ci] + eps as f64).sqrt();
            let g = gamma.data()[ci] as f64 * inv;
            let b = beta.data()[ci] as f64 - mean[ci] * g;
            let base = (ni * c + ci) * plane;
            for v in &mut d[base..base + plane] {
                *v = (*v as f64 * g + b) as f32;
            }
        }
    }
    out
}

/// Batch normalization. Training mode normalizes with batch statistics and
/// folds them into the running estimates with momentum 0.1 (unbiased
/// variance); eval mode uses the running estimates.
pub fn batchnorm(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &mut Tensor,
    running_var: &mut Tensor,
    eps: f32,
    mode: BnMode,
) -> Result<Tensor> {
    if eps <= 0.0 {
        return invalid("batchnorm eps must be positive");
    }
    let c = check_vectors(input, &[gamma, beta, running_mean, running_var])?;
    match mode {
        BnMode::Eval => {
            let mean: Vec<f64> = running_mean.data().iter().map(|&v| v as f64).collect();
            let var: Vec<f64> = running_var.data().iter().map(|&v| v as f64).collect();
            Ok(normalize(input, gamma, beta, &mean, &var, eps))
        }
        BnMode::Train => {
            let stats = batch_stats(input);
            let out = normalize(input, gamma, beta, &stats.mean, &stats.var, eps);
            update_running(running_mean, running_var, &stats, c);
            Ok(out)
        }
    }
}

pub(crate) fn update_running(running_mean: &mut Tensor, running_var: &mut Tensor, stats: &BatchStats, c: usize) {
    for ci in 0..c {
        let rm = &mut running_mean.data_mut()[ci];
        *rm = ((1.0 - BN_MOMENTUM) * *rm as f64 + BN_MOMENTUM * stats.mean[ci]) as f32;
        let rv = &mut running_var.data_mut()[ci];
        *rv = ((1.0 - BN_MOMENTUM) * *rv as f64 + BN_MOMENTUM * stats.unbiased_var(ci)) as f32;
    }
}

/// Gradients of a batchnorm with respect to input, gamma and beta.
pub(crate) fn batchnorm_backward(
    input: &Tensor,
    gamma: &Tensor,
    grad_out: &Tensor,
    mean: &[f64],
    var: &[f64],
    eps: f32,
    through_stats: bool,
) -> (Tensor, Tensor, Tensor) {
    let (n, c, h, w) = input.dims();
    let plane = h * w;
    let count = (n * plane) as f64;
    let x = input.data();
    let dy = grad_out.data();
    let mut dx = vec![0.0f32; x.len()];
    let mut dgamma = vec![0.0f32; c];
    let mut dbeta = vec![0.0f32; c];
    for ci in 0..c {
        let inv = 1.0 / (var[ci] + eps as f64).sqrt();
        let mut sum_dy = 0.0f64;
        let mut sum_dy_xhat = 0.0f64;
        for ni in 0..n {
            let base = (ni * c + ci) * plane;
            for i in base..base + plane {
                let xhat = (x[i] as f64 - mean[ci]) * inv;
                sum_dy += dy[i] as f64;
                sum_dy_xhat += dy[i] as f64 * xhat;
            }
        }
        dgamma[ci] = sum_dy_xhat as f32;
        dbeta[ci] = sum_dy as f32;
        let g = gamma.data()[ci] as f64;
        for ni in 0..n {
            let base = (ni * c + ci) * plane;
            for i in base..base + plane {
                dx[i] = if through_stats {
                    let xhat = (x[i] as f64 - mean[ci]) * inv;
                    (g * inv / count * (count * dy[i] as f64 - sum_dy - xhat * sum_dy_xhat)) as f32
                } else {
                    (g * inv * dy[i] as f64) as f32
                };
            }
        }
    }
    (
        Tensor::new(input.shape(), dx).expect("input shape"),
        Tensor::vector(dgamma),
        Tensor::vector(dbeta),
    )
}
