//! Double-precision reference forwards, written directly from the operator
//! definitions and shared by the finite-difference checks.

#![allow(dead_code)]

use dcnet::autograd::ParamStore;
use dcnet::dcnet::{DCNet, Encoder, EncoderLayout};
use dcnet::nn::{AsppBlock, BasicBlock, ConvBn, SideHead};
use dcnet::{ConvSpec, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct T64 {
    pub dims: [usize; 4],
    pub data: Vec<f64>,
}

impl T64 {
    pub fn from_tensor(t: &Tensor) -> T64 {
        T64 {
            dims: t.shape(),
            data: t.data().iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn zeros(dims: [usize; 4]) -> T64 {
        T64 {
            dims,
            data: vec![0.0; dims.iter().product()],
        }
    }

    fn idx(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        let [_, cc, h, w] = self.dims;
        ((n * cc + c) * h + y) * w + x
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.idx(n, c, y, x)]
    }

    fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: f64) {
        let i = self.idx(n, c, y, x);
        self.data[i] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> T64 {
        T64 {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Inner product with an `f32` tensor of the same shape.
    pub fn dot(&self, r: &Tensor) -> f64 {
        assert_eq!(self.dims, r.shape());
        self.data.iter().zip(r.data()).map(|(&a, &b)| a * b as f64).sum()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

pub fn conv(x: &T64, w: &T64, b: Option<&T64>, s: &ConvSpec) -> T64 {
    let [n, _, h, wd] = x.dims;
    let ho = (h + 2 * s.padding.0 - s.dilation.0 * (s.kernel.0 - 1) - 1) / s.stride.0 + 1;
    let wo = (wd + 2 * s.padding.1 - s.dilation.1 * (s.kernel.1 - 1) - 1) / s.stride.1 + 1;
    let og = s.out_channels / s.groups;
    let ig = s.in_channels / s.groups;
    let mut out = T64::zeros([n, s.out_channels, ho, wo]);
    for ni in 0..n {
        for o in 0..s.out_channels {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b.map_or(0.0, |b| b.data[o]);
                    for ci in 0..ig {
                        for ky in 0..s.kernel.0 {
                            for kx in 0..s.kernel.1 {
                                let iy = (oy * s.stride.0 + ky * s.dilation.0) as isize - s.padding.0 as isize;
                                let ix = (ox * s.stride.1 + kx * s.dilation.1) as isize - s.padding.1 as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.at(ni, (o / og) * ig + ci, iy as usize, ix as usize) * w.at(o, ci, ky, kx);
                            }
                        }
                    }
                    out.set(ni, o, oy, ox, acc);
                }
            }
        }
    }
    out
}

fn affine(x: &T64, gamma: &T64, beta: &T64, mean: &[f64], var: &[f64], eps: f64) -> T64 {
    let [n, c, h, w] = x.dims;
    let mut out = x.clone();
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let v = (x.at(ni, ci, y, xx) - mean[ci]) / (var[ci] + eps).sqrt();
                    out.set(ni, ci, y, xx, gamma.data[ci] * v + beta.data[ci]);
                }
            }
        }
    }
    out
}

/// Batch statistics: per-channel mean and biased variance.
pub fn channel_stats(x: &T64) -> (Vec<f64>, Vec<f64>) {
    let [n, c, h, w] = x.dims;
    let count = (n * h * w) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ci in 0..c {
        let vals: Vec<f64> = (0..n)
            .flat_map(|ni| (0..h).flat_map(move |y| (0..w).map(move |xx| (ni, y, xx))))
            .map(|(ni, y, xx)| x.at(ni, ci, y, xx))
            .collect();
        mean[ci] = vals.iter().sum::<f64>() / count;
        var[ci] = vals.iter().map(|v| (v - mean[ci]).powi(2)).sum::<f64>() / count;
    }
    (mean, var)
}

pub fn bn_train(x: &T64, gamma: &T64, beta: &T64, eps: f64) -> T64 {
    let (mean, var) = channel_stats(x);
    affine(x, gamma, beta, &mean, &var, eps)
}

pub fn bn_eval(x: &T64, gamma: &T64, beta: &T64, mean: &T64, var: &T64, eps: f64) -> T64 {
    affine(x, gamma, beta, &mean.data, &var.data, eps)
}

pub fn relu(x: &T64) -> T64 {
    x.map(|v| v.max(0.0))
}

pub fn sigmoid(x: &T64) -> T64 {
    x.map(|v| 1.0 / (1.0 + (-v).exp()))
}

pub fn add(a: &T64, b: &T64) -> T64 {
    assert_eq!(a.dims, b.dims);
    T64 {
        dims: a.dims,
        data: a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect(),
    }
}

pub fn concat(parts: &[&T64]) -> T64 {
    let [n, _, h, w] = parts[0].dims;
    let c: usize = parts.iter().map(|p| p.dims[1]).sum();
    let mut out = T64::zeros([n, c, h, w]);
    for ni in 0..n {
        let mut off = 0;
        for p in parts {
            for ci in 0..p.dims[1] {
                for y in 0..h {
                    for x in 0..w {
                        out.set(ni, off + ci, y, x, p.at(ni, ci, y, x));
                    }
                }
            }
            off += p.dims[1];
        }
    }
    out
}

pub fn slice(x: &T64, start: usize, len: usize) -> T64 {
    let [n, _, h, w] = x.dims;
    let mut out = T64::zeros([n, len, h, w]);
    for ni in 0..n {
        for ci in 0..len {
            for y in 0..h {
                for xx in 0..w {
                    out.set(ni, ci, y, xx, x.at(ni, start + ci, y, xx));
                }
            }
        }
    }
    out
}

fn pool(x: &T64, k: usize, s: usize, reduce: impl Fn(&[f64]) -> f64) -> T64 {
    let [n, c, h, w] = x.dims;
    let (ho, wo) = ((h - k) / s + 1, (w - k) / s + 1);
    let mut out = T64::zeros([n, c, ho, wo]);
    for ni in 0..n {
        for ci in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let win: Vec<f64> = (0..k)
                        .flat_map(|ky| (0..k).map(move |kx| (ky, kx)))
                        .map(|(ky, kx)| x.at(ni, ci, oy * s + ky, ox * s + kx))
                        .collect();
                    out.set(ni, ci, oy, ox, reduce(&win));
                }
            }
        }
    }
    out
}

pub fn maxpool(x: &T64, k: usize, s: usize) -> T64 {
    pool(x, k, s, |v| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
}

pub fn avgpool(x: &T64, k: usize, s: usize) -> T64 {
    pool(x, k, s, |v| v.iter().sum::<f64>() / v.len() as f64)
}

/// Half-pixel-centre bilinear resampling with edge clamping.
pub fn resize(x: &T64, oh: usize, ow: usize) -> T64 {
    let [n, c, h, w] = x.dims;
    let src = |o: usize, inn: usize, out: usize| -> (usize, usize, f64) {
        let p = ((o as f64 + 0.5) * inn as f64 / out as f64 - 0.5).max(0.0);
        let lo = (p.floor() as usize).min(inn - 1);
        let hi = (lo + 1).min(inn - 1);
        (lo, hi, p - lo as f64)
    };
    let mut out = T64::zeros([n, c, oh, ow]);
    for ni in 0..n {
        for ci in 0..c {
            for oy in 0..oh {
                let (y0, y1, fy) = src(oy, h, oh);
                for ox in 0..ow {
                    let (x0, x1, fx) = src(ox, w, ow);
                    let v = (1.0 - fy) * ((1.0 - fx) * x.at(ni, ci, y0, x0) + fx * x.at(ni, ci, y0, x1))
                        + fy * ((1.0 - fx) * x.at(ni, ci, y1, x0) + fx * x.at(ni, ci, y1, x1));
                    out.set(ni, ci, oy, ox, v);
                }
            }
        }
    }
    out
}

/// Pixel-summed binary cross entropy; inputs must lie strictly inside (0, 1).
pub fn bce(p: &T64, g: &T64) -> f64 {
    p.data
        .iter()
        .zip(&g.data)
        .map(|(&p, &g)| -(g * p.ln() + (1.0 - g) * (1.0 - p).ln()))
        .sum()
}

/// Soft IoU loss with the same denominator guard as the library.
pub fn iou(p: &T64, g: &T64, eps: f64) -> f64 {
    let inter: f64 = p.data.iter().zip(&g.data).map(|(p, g)| p * g).sum();
    let union: f64 = p.data.iter().zip(&g.data).map(|(p, g)| p + g - p * g).sum();
    1.0 - inter / (union + eps)
}

fn param(store: &ParamStore, id: dcnet::autograd::ParamId) -> T64 {
    T64::from_tensor(store.value(id))
}

fn conv_bn(store: &ParamStore, l: &ConvBn, x: &T64, train: bool, with_relu: bool, eps: f64) -> T64 {
    let w = param(store, l.conv.weight);
    let b = l.conv.bias.map(|id| param(store, id));
    let y = conv(x, &w, b.as_ref(), &l.conv.spec);
    let (g, bt) = (param(store, l.bn.gamma), param(store, l.bn.beta));
    let z = if train {
        bn_train(&y, &g, &bt, eps)
    } else {
        bn_eval(
            &y,
            &g,
            &bt,
            &param(store, l.bn.running_mean),
            &param(store, l.bn.running_var),
            eps,
        )
    };
    if with_relu {
        relu(&z)
    } else {
        z
    }
}

/// Residual pyramid: input conv-BN-ReLU, nested dilated banks (branch `j`
/// of a level reads branch `j / d` of the previous one), concatenation, 1x1
/// fusion conv-BN, residual sum.
pub fn aspp_block(store: &ParamStore, block: &AsppBlock, x: &T64, train: bool, eps: f64) -> T64 {
    let f = conv_bn(store, &block.input, x, train, true, eps);
    let d = block.config.dilations.len();
    let mut prev = vec![f.clone()];
    for level in &block.levels {
        prev = level
            .iter()
            .enumerate()
            .map(|(j, l)| conv_bn(store, l, &prev[j / d], train, true, eps))
            .collect();
    }
    let refs: Vec<&T64> = prev.iter().collect();
    let fused = conv_bn(store, &block.fuse, &concat(&refs), train, false, eps);
    add(&f, &fused)
}

pub fn basic_block(store: &ParamStore, blk: &BasicBlock, x: &T64, train: bool, eps: f64) -> T64 {
    let h = conv_bn(store, &blk.conv1, x, train, true, eps);
    let h = conv_bn(store, &blk.conv2, &h, train, false, eps);
    let s = match &blk.skip {
        Some(skip) => conv_bn(store, skip, x, train, false, eps),
        None => x.clone(),
    };
    relu(&add(&h, &s))
}

pub fn side_head(store: &ParamStore, head: &SideHead, feat: &T64, h: usize, w: usize) -> T64 {
    let wt = param(store, head.conv.weight);
    let b = head.conv.bias.map(|id| param(store, id));
    sigmoid(&resize(&conv(feat, &wt, b.as_ref(), &head.conv.spec), h, w))
}

pub fn encoder_stages(store: &ParamStore, enc: &Encoder, x: &T64, train: bool, eps: f64) -> Vec<T64> {
    let mut h = conv_bn(store, &enc.stem, x, train, true, eps);
    let mut out = Vec::new();
    for blocks in &enc.stages {
        for blk in blocks {
            h = basic_block(store, blk, &h, train, eps);
        }
        out.push(h.clone());
    }
    out
}

/// Side maps of a dual-encoder network: `(encoder1, encoder2, decoder)`.
pub fn dcnet_forward(net: &DCNet, images: &T64, train: bool, eps: f64) -> (Vec<T64>, Vec<T64>, Vec<T64>) {
    let store = &net.store;
    let EncoderLayout::Dual(encs) = &net.encoders else {
        panic!("reference forward covers the dual layout");
    };
    let [_, _, h, w] = images.dims;
    let f1 = encoder_stages(store, &encs[0], images, train, eps);
    let f2 = encoder_stages(store, &encs[1], images, train, eps);
    let s1 = f1
        .iter()
        .zip(&encs[0].sides)
        .map(|(f, s)| side_head(store, s, f, h, w))
        .collect();
    let s2 = f2
        .iter()
        .zip(&encs[1].sides)
        .map(|(f, s)| side_head(store, s, f, h, w))
        .collect();
    let cat: Vec<T64> = f1.iter().zip(&f2).map(|(a, b)| concat(&[a, b])).collect();

    let d = net.decoder.stages.len();
    let mut feats: Vec<T64> = vec![T64::zeros([0; 4]); d];
    feats[d - 1] = aspp_block(
        store,
        &net.decoder.stages[d - 1],
        &maxpool(&cat[d - 2], 2, 2),
        train,
        eps,
    );
    for s in (0..d - 1).rev() {
        let [_, _, sh, sw] = cat[s].dims;
        let up = resize(&feats[s + 1], sh, sw);
        feats[s] = aspp_block(store, &net.decoder.stages[s], &concat(&[&cat[s], &up]), train, eps);
    }
    let dec = feats
        .iter()
        .zip(&net.decoder.sides)
        .map(|(f, s)| side_head(store, s, f, h, w))
        .collect();
    (s1, s2, dec)
}

/// Deep-supervision total with every weight 1.
pub fn total_loss(maps: &(Vec<T64>, Vec<T64>, Vec<T64>), sal: &T64, aux1: &T64, aux2: &T64, iou_eps: f64) -> f64 {
    let enc: f64 = maps.0.iter().map(|m| bce(m, aux1)).sum::<f64>() + maps.1.iter().map(|m| bce(m, aux2)).sum::<f64>();
    let dec: f64 = maps.2.iter().map(|m| bce(m, sal) + iou(m, sal, iou_eps)).sum();
    enc + dec
}
