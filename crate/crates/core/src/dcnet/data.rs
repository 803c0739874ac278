use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::auxmaps::{edge_map, location_map, BinaryMask};
use crate::error::{invalid, Result};
use crate::tensor::Tensor;

/// Edge width used for the first encoder's target.
pub const TRAIN_EDGE_WIDTH: usize = 4;

/// One training example; all maps are `(1, 1, h, w)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub name: String,
    /// `(1, c, h, w)`.
    pub image: Tensor,
    pub saliency: Tensor,
    /// Edge band of width 4.
    pub aux1: Tensor,
    /// Location map.
    pub aux2: Tensor,
}

impl Sample {
    pub fn from_mask(name: impl Into<String>, image: Tensor, mask: &BinaryMask) -> Result<Self> {
        let (n, _, h, w) = image.dims();
        if n != 1 || (h, w) != (mask.height(), mask.width()) {
            return invalid(format!(
                "image {:?} does not match mask {}x{}",
                image.shape(),
                mask.height(),
                mask.width()
            ));
        }
        Ok(Sample {
            name: name.into(),
            image,
            saliency: mask.to_tensor(),
            aux1: edge_map(mask, TRAIN_EDGE_WIDTH)?.to_tensor(),
            aux2: location_map(mask)?.to_tensor(),
        })
    }
}

/// Stacked tensors for one optimization step.
#[derive(Clone, Debug)]
pub struct Batch {
    pub images: Tensor,
    pub saliency: Tensor,
    pub aux1: Tensor,
    pub aux2: Tensor,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        if indices.is_empty() {
            return invalid("empty batch");
        }
        if let Some(&i) = indices.iter().find(|&&i| i >= self.len()) {
            return invalid(format!("sample index {i} out of range"));
        }
        let pick = |f: fn(&Sample) -> &Tensor| -> Result<Tensor> {
            let items: Vec<&Tensor> = indices.iter().map(|&i| f(&self.samples[i])).collect();
            Tensor::stack_batch(&items)
        };
        Ok(Batch {
            images: pick(|s| &s.image)?,
            saliency: pick(|s| &s.saliency)?,
            aux1: pick(|s| &s.aux1)?,
            aux2: pick(|s| &s.aux2)?,
        })
    }

    /// The whole dataset as one batch.
    pub fn full_batch(&self) -> Result<Batch> {
        self.batch(&(0..self.len()).collect::<Vec<_>>())
    }
}

/// Images of one rectangle or ellipse on a contrasting noisy background.
/// Object boundaries sit on multiples of 4 pixels.
pub fn synthetic_dataset(count: usize, (h, w): (usize, usize), seed: u64) -> Result<Dataset> {
    if h < 16 || w < 16 {
        return invalid("synthetic images must be at least 16x16");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.05).expect("positive std");
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let snap = |v: usize| v / 4 * 4;
        let oh = snap(rng.random_range(h / 4..=h * 5 / 8));
        let ow = snap(rng.random_range(w / 4..=w * 5 / 8));
        let y0 = snap(rng.random_range(4..=h - oh - 4));
        let x0 = snap(rng.random_range(4..=w - ow - 4));
        let ellipse = rng.random_bool(0.5);
        let (cy, cx) = (y0 as f64 + oh as f64 / 2.0, x0 as f64 + ow as f64 / 2.0);
        let mask = BinaryMask::from_fn(h, w, |y, x| {
            let inside_box = y >= y0 && y < y0 + oh && x >= x0 && x < x0 + ow;
            if !ellipse {
                return inside_box;
            }
            let dy = (y as f64 + 0.5 - cy) / (oh as f64 / 2.0);
            let dx = (x as f64 + 0.5 - cx) / (ow as f64 / 2.0);
            dy * dy + dx * dx <= 1.0
        })?;
        let bg: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.0..0.35));
        let fg: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.65..1.0));
        let image = Tensor::from_fn([1, 3, h, w], |_, c, y, x| {
            let base = if mask.get(y, x) { fg[c] } else { bg[c] };
            (base + noise.sample(&mut rng) as f32).clamp(0.0, 1.0)
        });
        samples.push(Sample::from_mask(format!("synthetic_{i:03}"), image, &mask)?);
    }
    Ok(Dataset { samples })
}
