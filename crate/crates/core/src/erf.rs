//! Effective receptive fields from input gradients.
//!
//! For each seed a freshly initialized module sees a standard-normal input;
//! the gradient of the center output pixel (summed over channels) with
//! respect to the input is taken, its magnitude summed over input channels
//! and accumulated across seeds. The result is scaled to a maximum of 1.
//! Batchnorm runs in inference mode with its initial identity statistics.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::autograd::ParamStore;
use crate::error::{invalid, Result};
use crate::nn::{AsppBlock, BlockKind, Conv, Exec, ParamBuilder, ResAspp2Config, TapeExec};
use crate::ops::BnMode;
use crate::tensor::{ConvSpec, Tensor};

pub const DEFAULT_TAU: f64 = 0.01;
pub const DEFAULT_SEEDS: usize = 10;

/// A module whose receptive field can be measured.
#[derive(Clone, Debug, PartialEq)]
pub enum ErfSubject {
    Block(BlockKind, ResAspp2Config),
    Conv(ConvSpec),
}

impl ErfSubject {
    pub fn in_channels(&self) -> usize {
        match self {
            ErfSubject::Block(_, cfg) => cfg.c_in,
            ErfSubject::Conv(spec) => spec.in_channels,
        }
    }

    /// Half-width of the analytic receptive field.
    pub fn analytic_radius(&self) -> usize {
        match self {
            ErfSubject::Block(kind, cfg) => cfg.receptive_radius(kind.levels()),
            ErfSubject::Conv(spec) => {
                let r = |k: usize| spec.dilation.0.max(spec.dilation.1) * (k - 1) / 2;
                r(spec.kernel.0).max(r(spec.kernel.1))
            }
        }
    }

    fn input_gradient(&self, seed: u64, (h, w): (usize, usize)) -> Result<Tensor> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let module = {
            let mut b = ParamBuilder::new(&mut store, &mut rng);
            match self {
                ErfSubject::Block(kind, cfg) => Module::Block(AsppBlock::build(&mut b, "block", *kind, cfg)?),
                ErfSubject::Conv(spec) => Module::Conv(Conv::build(&mut b, "conv", *spec, false)?),
            }
        };
        let input = Tensor::from_fn([1, self.in_channels(), h, w], |_, _, _, _| {
            StandardNormal.sample(&mut rng)
        });
        let mut ex = TapeExec::new(&store, BnMode::Eval);
        let x = ex.tape.leaf(input);
        let y = match &module {
            Module::Block(block) => block.forward(&mut ex, &x)?,
            Module::Conv(conv) => ex.conv(&x, conv)?,
        };
        let (_, c_out, ho, wo) = ex.tape.value(y).dims();
        if (ho, wo) != (h, w) {
            return invalid(format!("module maps {h}x{w} to {ho}x{wo}; it must preserve size"));
        }
        let (cy, cx) = (h / 2, w / 2);
        let seed_grad = Tensor::from_fn([1, c_out, h, w], |_, _, y, x| ((y, x) == (cy, cx)) as u8 as f32);
        let grads = ex.tape.backward_seeded(y, seed_grad)?;
        Ok(grads
            .wrt(x)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros([1, self.in_channels(), h, w])))
    }
}

enum Module {
    Block(AsppBlock),
    Conv(Conv),
}

/// Inclusive pixel bounds `(y0, x0, y1, x1)`.
pub type BoundingBox = (usize, usize, usize, usize);

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErfMap {
    pub height: usize,
    pub width: usize,
    /// Row-major, in `[0, 1]`.
    pub values: Vec<f64>,
}

impl ErfMap {
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Bounds of the pixels with value `>= tau`; `tau = 0` is not allowed
    /// here, use [`ErfMap::support`] for the nonzero support.
    pub fn bounding_box(&self, tau: f64) -> Option<BoundingBox> {
        self.bounds(|v| v >= tau)
    }

    /// Bounds of the strictly positive pixels.
    pub fn support(&self) -> Option<BoundingBox> {
        self.bounds(|v| v > 0.0)
    }

    fn bounds(&self, keep: impl Fn(f64) -> bool) -> Option<BoundingBox> {
        let mut bb: Option<BoundingBox> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if keep(self.get(y, x)) {
                    bb = Some(match bb {
                        None => (y, x, y, x),
                        Some((y0, x0, y1, x1)) => (y0.min(y), x0.min(x), y1.max(y), x1.max(x)),
                    });
                }
            }
        }
        bb
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_fn([1, 1, self.height, self.width], |_, _, y, x| self.get(y, x) as f32)
    }
}

/// Seed-accumulated, max-normalized input-gradient magnitude of `subject`.
pub fn erf_map(subject: &ErfSubject, input_size: (usize, usize), num_seeds: usize) -> Result<ErfMap> {
    if num_seeds == 0 {
        return invalid("at least one seed is required");
    }
    let (h, w) = input_size;
    if h == 0 || w == 0 {
        return invalid("input size must be positive");
    }
    let mut acc = vec![0.0f64; h * w];
    for seed in 0..num_seeds as u64 {
        let g = subject.input_gradient(seed, input_size)?;
        let c = g.dims().1;
        for ch in 0..c {
            for (a, v) in acc.iter_mut().zip(&g.data()[ch * h * w..(ch + 1) * h * w]) {
                *a += v.abs() as f64;
            }
        }
    }
    let max = acc.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        acc.iter_mut().for_each(|v| *v /= max);
    }
    Ok(ErfMap {
        height: h,
        width: w,
        values: acc,
    })
}

/// Number of pixels with value `>= tau`.
pub fn erf_area(map: &ErfMap, tau: f64) -> Result<usize> {
    if !(tau > 0.0 && tau < 1.0) {
        return invalid(format!("tau must lie in (0, 1), got {tau}"));
    }
    Ok(map.values.iter().filter(|&&v| v >= tau).count())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErfRow {
    pub name: String,
    pub area: usize,
    pub bounding_box: Option<BoundingBox>,
    #[serde(skip)]
    pub map: ErfMap,
}

/// Modules ranked by decreasing ERF area.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErfComparison {
    pub tau: f64,
    pub seeds: usize,
    pub rows: Vec<ErfRow>,
}

impl ErfComparison {
    pub fn row(&self, name: &str) -> Option<&ErfRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("rank,name,area,y0,x0,y1,x1\n");
        for (i, r) in self.rows.iter().enumerate() {
            let bb = r
                .bounding_box
                .map_or(",,,".to_string(), |(a, b, c, d)| format!("{a},{b},{c},{d}"));
            let _ = writeln!(s, "{},{},{},{bb}", i + 1, r.name, r.area);
        }
        s
    }

    /// Writes `<name>.pgm` for every map into `dir`.
    pub fn write_maps(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for r in &self.rows {
            crate::io::write_pgm(&r.map.to_tensor(), &dir.join(format!("{}.pgm", r.name)))?;
        }
        Ok(())
    }
}

pub fn compare_modules(
    subjects: &[(String, ErfSubject)],
    input_size: (usize, usize),
    tau: f64,
    seeds: usize,
) -> Result<ErfComparison> {
    if subjects.len() < 2 {
        return invalid("comparison needs at least two modules");
    }
    let mut rows = Vec::with_capacity(subjects.len());
    for (name, subject) in subjects {
        let map = erf_map(subject, input_size, seeds)?;
        rows.push(ErfRow {
            name: name.clone(),
            area: erf_area(&map, tau)?,
            bounding_box: map.bounding_box(tau),
            map,
        });
    }
    rows.sort_by_key(|r| std::cmp::Reverse(r.area));
    Ok(ErfComparison { tau, seeds, rows })
}
