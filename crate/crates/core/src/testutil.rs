//! Shared helpers for unit tests.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::{ConvSpec, Tensor};

pub fn random_tensor(shape: [usize; 4], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _, _| {
        let v: f64 = StandardNormal.sample(&mut rng);
        v as f32
    })
}

/// Direct nested-loop convolution, accumulated in f64.
pub fn direct_conv(x: &Tensor, w: &Tensor, b: Option<&Tensor>, spec: &ConvSpec) -> Tensor {
    let (n, _, h, wd) = x.dims();
    let (ho, wo) = spec.output_size(h, wd).unwrap();
    let og = spec.out_channels / spec.groups;
    let ig = spec.in_channels / spec.groups;
    Tensor::from_fn([n, spec.out_channels, ho, wo], |ni, o, oy, ox| {
        let g = o / og;
        let mut acc = b.map_or(0.0, |b| b.data()[o] as f64);
        for ci in 0..ig {
            for ky in 0..spec.kernel.0 {
                for kx in 0..spec.kernel.1 {
                    let iy = (oy * spec.stride.0 + ky * spec.dilation.0) as isize - spec.padding.0 as isize;
                    let ix = (ox * spec.stride.1 + kx * spec.dilation.1) as isize - spec.padding.1 as isize;
                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                        acc += x.at(ni, g * ig + ci, iy as usize, ix as usize) as f64 * w.at(o, ci, ky, kx) as f64;
                    }
                }
            }
        }
        acc as f32
    })
}
