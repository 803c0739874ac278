//! Residual nested atrous pyramids.
//!
//! An input 3x3 conv-BN-ReLU produces `F(x)`. A bank of parallel dilated
//! 3x3 convolutions reads `F(x)`; in the two-level block every branch of that
//! bank feeds its own second bank, giving `4 x 4` paths. The deepest outputs
//! are concatenated, fused by a 1x1 conv-BN without activation, and added to
//! `F(x)`. Every dilated conv uses `padding = dilation`, so the spatial size
//! never changes.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::nn::exec::Exec;
use crate::nn::layers::{ConvBn, ParamBuilder};
use crate::tensor::ConvSpec;

pub const DEFAULT_DILATIONS: [usize; 4] = [1, 3, 5, 7];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResAspp2Config {
    pub c_in: usize,
    pub m: usize,
    pub c_out: usize,
    pub dilations: Vec<usize>,
}

impl ResAspp2Config {
    pub fn new(c_in: usize, m: usize, c_out: usize) -> Self {
        ResAspp2Config {
            c_in,
            m,
            c_out,
            dilations: DEFAULT_DILATIONS.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_in == 0 || self.m == 0 || self.c_out == 0 {
            return invalid(format!("channel counts must be positive: {self:?}"));
        }
        if self.dilations.is_empty() {
            return invalid("at least one dilation is required");
        }
        if self.dilations.iter().any(|d| d % 2 == 0) {
            return invalid(format!("dilations must be odd: {:?}", self.dilations));
        }
        if self.dilations.windows(2).any(|w| w[0] >= w[1]) {
            return invalid(format!("dilations must be strictly increasing: {:?}", self.dilations));
        }
        Ok(())
    }

    /// Radius of the analytic receptive field for a block with `levels` banks.
    pub fn receptive_radius(&self, levels: usize) -> usize {
        1 + levels * self.dilations.iter().max().copied().unwrap_or(0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockKind {
    /// Two nested banks (16 paths).
    ResAspp2,
    /// A single bank (4 paths).
    Aspp,
}

impl BlockKind {
    pub fn levels(self) -> usize {
        match self {
            BlockKind::ResAspp2 => 2,
            BlockKind::Aspp => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BlockKind::ResAspp2 => "resaspp2",
            BlockKind::Aspp => "aspp",
        }
    }
}

impl std::str::FromStr for BlockKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "resaspp2" => Ok(BlockKind::ResAspp2),
            "aspp" => Ok(BlockKind::Aspp),
            other => invalid(format!("unknown block `{other}`, expected resaspp2 or aspp")),
        }
    }
}

/// Residual block over one or two nested banks of dilated convolutions.
#[derive(Clone, Debug, PartialEq)]
pub struct AsppBlock {
    pub kind: BlockKind,
    pub config: ResAspp2Config,
    pub input: ConvBn,
    /// `levels[k]` holds `d^(k+1)` layers; layer `j` of level `k` reads
    /// output `j / d` of level `k - 1`, where `d` is the number of dilations.
    pub levels: Vec<Vec<ConvBn>>,
    pub fuse: ConvBn,
}

impl AsppBlock {
    pub fn build(b: &mut ParamBuilder, name: &str, kind: BlockKind, cfg: &ResAspp2Config) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.dilations.len();
        b.scope(name, |b| {
            let input = ConvBn::build(b, "input", ConvSpec::same3x3(cfg.c_in, cfg.c_out, 1))?;
            let mut levels = Vec::new();
            for k in 0..kind.levels() {
                let c_in = if k == 0 { cfg.c_out } else { cfg.m };
                let count = d.pow(k as u32 + 1);
                let level = b.scope(format!("level{}", k + 1), |b| {
                    (0..count)
                        .map(|j| {
                            let dil = cfg.dilations[j % d];
                            ConvBn::build(b, &j.to_string(), ConvSpec::same3x3(c_in, cfg.m, dil))
                        })
                        .collect::<Result<Vec<_>>>()
                })?;
                levels.push(level);
            }
            let paths = d.pow(kind.levels() as u32);
            let fuse = ConvBn::build(b, "fuse", ConvSpec::new(paths * cfg.m, cfg.c_out, 1))?;
            Ok(AsppBlock {
                kind,
                config: cfg.clone(),
                input,
                levels,
                fuse,
            })
        })
    }

    pub fn resaspp2(b: &mut ParamBuilder, name: &str, cfg: &ResAspp2Config) -> Result<Self> {
        Self::build(b, name, BlockKind::ResAspp2, cfg)
    }

    pub fn aspp(b: &mut ParamBuilder, name: &str, cfg: &ResAspp2Config) -> Result<Self> {
        Self::build(b, name, BlockKind::Aspp, cfg)
    }

    /// The interior of the pyramid: every banked conv plus the fusion conv.
    pub fn interior(&self) -> impl Iterator<Item = &ConvBn> {
        self.levels.iter().flatten().chain(std::iter::once(&self.fuse))
    }

    /// `F(x)` alone, the input conv-BN-ReLU.
    pub fn input_features<E: Exec>(&self, ex: &mut E, x: &E::V) -> Result<E::V> {
        let c = ex.dims(x).1;
        if c != self.config.c_in {
            return invalid(format!("block expects {} channels, got {c}", self.config.c_in));
        }
        self.input.forward(ex, x, true)
    }

    pub fn forward<E: Exec>(&self, ex: &mut E, x: &E::V) -> Result<E::V> {
        let f = self.input_features(ex, x)?;
        let d = self.config.dilations.len();
        let mut prev = vec![f.clone()];
        for level in &self.levels {
            let inputs: Vec<&E::V> = (0..level.len()).map(|j| &prev[j / d]).collect();
            let convs: Vec<_> = level.iter().map(|l| &l.conv).collect();
            let raw = ex.conv_bank(&inputs, &convs)?;
            prev = raw
                .iter()
                .zip(level)
                .map(|(y, l)| l.post(ex, y, true))
                .collect::<Result<_>>()?;
        }
        let refs: Vec<&E::V> = prev.iter().collect();
        let cat = ex.concat(&refs)?;
        let fused = self.fuse.forward(ex, &cat, false)?;
        ex.add(&f, &fused)
    }
}
