//! The divide-and-conquer network: two subtask encoders, a decoder of
//! two-level residual pyramid blocks, and a side output at every stage.
//!
//! Each encoder is a stride-2 3x3 stem followed by `E` stages of basic
//! blocks, halving resolution between stages. Decoder stage `N < D` reads
//! `concat(En(N)_1, En(N)_2, up(De(N+1)))`; the deepest stage `D = E + 1`
//! reads the 2x2-maxpooled concatenation of the last encoder stages.

mod data;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use data::{synthetic_dataset, Dataset, Sample};
pub use train::{train_loop, train_loop_with, train_step, Objective, TrainConfig};

use crate::autograd::ParamStore;
use crate::error::{invalid, Result};
use crate::nn::{AsppBlock, BasicBlock, ConvBn, Exec, InferExec, ParamBuilder, ResAspp2Config, SideHead};
use crate::tensor::{ConvSpec, Tensor};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DCNetConfig {
    /// Number of encoder stages `E`; the decoder has `E + 1`.
    pub encoder_stages: usize,
    /// Channel width of each encoder stage.
    pub widths: Vec<usize>,
    /// Basic blocks per encoder stage.
    pub blocks_per_stage: usize,
    pub input_size: (usize, usize),
    pub in_channels: usize,
}

impl Default for DCNetConfig {
    fn default() -> Self {
        DCNetConfig {
            encoder_stages: 4,
            widths: vec![16, 32, 64, 128],
            blocks_per_stage: 1,
            input_size: (64, 64),
            in_channels: 3,
        }
    }
}

impl DCNetConfig {
    /// `E` stages of equal width.
    pub fn uniform(encoder_stages: usize, width: usize, input_size: (usize, usize)) -> Self {
        DCNetConfig {
            encoder_stages,
            widths: vec![width; encoder_stages],
            blocks_per_stage: 1,
            input_size,
            in_channels: 3,
        }
    }

    pub fn decoder_stages(&self) -> usize {
        self.encoder_stages + 1
    }

    /// Number of side outputs, `2E + D`.
    pub fn side_outputs(&self) -> usize {
        2 * self.encoder_stages + self.decoder_stages()
    }

    /// Output channels of decoder stage `d` (1-based).
    pub fn decoder_width(&self, d: usize) -> usize {
        self.widths[d.min(self.encoder_stages) - 1]
    }

    /// Input channels of decoder stage `d` (1-based).
    pub fn decoder_in_channels(&self, d: usize) -> usize {
        let e = self.encoder_stages;
        if d == e + 1 {
            2 * self.widths[e - 1]
        } else {
            2 * self.widths[d - 1] + self.decoder_width(d + 1)
        }
    }

    pub fn decoder_block(&self, d: usize) -> ResAspp2Config {
        let c_out = self.decoder_width(d);
        ResAspp2Config::new(self.decoder_in_channels(d), (c_out / 2).max(1), c_out)
    }

    pub fn validate(&self) -> Result<()> {
        let e = self.encoder_stages;
        if e == 0 {
            return invalid("at least one encoder stage is required");
        }
        if self.widths.len() != e || self.widths.contains(&0) {
            return invalid(format!("expected {e} positive widths, got {:?}", self.widths));
        }
        if self.blocks_per_stage == 0 || self.in_channels == 0 {
            return invalid("blocks per stage and input channels must be positive");
        }
        let div = 1usize << (e + 1);
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % div != 0 || w % div != 0 {
            return invalid(format!("input {h}x{w} must be a positive multiple of {div}"));
        }
        Ok(())
    }
}

/// One encoder. With `copies = 2` it is the parallel form of two encoders:
/// every conv after the stem is grouped, and side heads emit two maps.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub copies: usize,
    pub stem: ConvBn,
    pub stages: Vec<Vec<BasicBlock>>,
    pub sides: Vec<SideHead>,
}

impl Encoder {
    fn build(b: &mut ParamBuilder, name: &str, cfg: &DCNetConfig, copies: usize) -> Result<Self> {
        b.scope(name, |b| {
            let w0 = cfg.widths[0];
            let stem = ConvBn::build(
                b,
                "stem",
                ConvSpec::new(cfg.in_channels, copies * w0, 3).stride(2).padding(1),
            )?;
            let mut stages = Vec::new();
            let mut sides = Vec::new();
            let mut c_in = w0;
            for (e, &c_out) in cfg.widths.iter().enumerate() {
                let blocks = b.scope(format!("stage{}", e + 1), |b| {
                    (0..cfg.blocks_per_stage)
                        .map(|i| {
                            let (cin, stride) = if i == 0 {
                                (c_in, if e == 0 { 1 } else { 2 })
                            } else {
                                (c_out, 1)
                            };
                            BasicBlock::build(b, &format!("block{i}"), copies * cin, copies * c_out, stride, copies)
                        })
                        .collect::<Result<Vec<_>>>()
                })?;
                stages.push(blocks);
                sides.push(SideHead::build(b, &format!("side{}", e + 1), copies * c_out, copies)?);
                c_in = c_out;
            }
            Ok(Encoder {
                copies,
                stem,
                stages,
                sides,
            })
        })
    }

    /// Output of every stage.
    pub fn stage_features<E: Exec>(&self, ex: &mut E, x: &E::V) -> Result<Vec<E::V>> {
        let mut h = self.stem.forward(ex, x, true)?;
        let mut feats = Vec::with_capacity(self.stages.len());
        for blocks in &self.stages {
            for blk in blocks {
                h = blk.forward(ex, &h)?;
            }
            feats.push(h.clone());
        }
        Ok(feats)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum EncoderLayout {
    /// Two independent encoders, as trained.
    Dual(Box<[Encoder; 2]>),
    /// One parallel encoder computing both.
    Merged(Encoder),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decoder {
    /// `stages[d - 1]` is decoder stage `d`.
    pub stages: Vec<AsppBlock>,
    pub sides: Vec<SideHead>,
}

/// Values produced by one pass through the graph.
#[derive(Clone, Debug)]
pub struct GraphOutputs<V> {
    /// `concat(En(e)_1, En(e)_2)` for every encoder stage.
    pub encoder_features: Vec<V>,
    /// Output of every decoder stage, shallowest first.
    pub decoder_features: Vec<V>,
    pub encoder1: Vec<V>,
    pub encoder2: Vec<V>,
    pub decoder: Vec<V>,
}

/// Network structure plus its parameters.
#[derive(Clone, Debug)]
pub struct DCNet {
    pub config: DCNetConfig,
    pub store: ParamStore,
    pub encoders: EncoderLayout,
    pub decoder: Decoder,
}

impl DCNet {
    /// Dual-encoder training graph, initialized deterministically from `seed`.
    pub fn build(cfg: &DCNetConfig, seed: u64) -> Result<Self> {
        Self::build_layout(cfg, false, seed)
    }

    /// Builds either the dual or the merged layout.
    pub fn build_layout(cfg: &DCNetConfig, merged: bool, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = ParamBuilder::new(&mut store, &mut rng);
        let encoders = if merged {
            EncoderLayout::Merged(Encoder::build(&mut b, "encoder", cfg, 2)?)
        } else {
            EncoderLayout::Dual(Box::new([
                Encoder::build(&mut b, "encoder1", cfg, 1)?,
                Encoder::build(&mut b, "encoder2", cfg, 1)?,
            ]))
        };
        let decoder = b.scope("decoder", |b| {
            let d = cfg.decoder_stages();
            let mut stages = Vec::with_capacity(d);
            let mut sides = Vec::with_capacity(d);
            for s in 1..=d {
                stages.push(AsppBlock::resaspp2(b, &format!("stage{s}"), &cfg.decoder_block(s))?);
                sides.push(SideHead::build(b, &format!("side{s}"), cfg.decoder_width(s), 1)?);
            }
            Ok::<_, crate::Error>(Decoder { stages, sides })
        })?;
        Ok(DCNet {
            config: cfg.clone(),
            store,
            encoders,
            decoder,
        })
    }

    pub fn is_merged(&self) -> bool {
        matches!(self.encoders, EncoderLayout::Merged(_))
    }

    fn check_images(&self, (n, c, h, w): (usize, usize, usize, usize)) -> Result<()> {
        let cfg = &self.config;
        if n == 0 || c != cfg.in_channels || (h, w) != cfg.input_size {
            return invalid(format!(
                "images ({n}, {c}, {h}, {w}) do not match configured ({}, {:?})",
                cfg.in_channels, cfg.input_size
            ));
        }
        Ok(())
    }

    /// Runs the graph on any executor.
    pub fn run<E: Exec>(&self, ex: &mut E, images: &E::V) -> Result<GraphOutputs<E::V>> {
        let dims = ex.dims(images);
        self.check_images(dims)?;
        let (h, w) = (dims.2, dims.3);

        let mut encoder_features = Vec::new();
        let mut encoder1 = Vec::new();
        let mut encoder2 = Vec::new();
        match &self.encoders {
            EncoderLayout::Dual(encs) => {
                let f1 = encs[0].stage_features(ex, images)?;
                let f2 = encs[1].stage_features(ex, images)?;
                for e in 0..f1.len() {
                    encoder1.push(encs[0].sides[e].forward(ex, &f1[e], h, w)?);
                    encoder2.push(encs[1].sides[e].forward(ex, &f2[e], h, w)?);
                    encoder_features.push(ex.concat(&[&f1[e], &f2[e]])?);
                }
            }
            EncoderLayout::Merged(enc) => {
                let feats = enc.stage_features(ex, images)?;
                for (e, f) in feats.iter().enumerate() {
                    let both = enc.sides[e].forward(ex, f, h, w)?;
                    encoder1.push(ex.slice_channels(&both, 0, 1)?);
                    encoder2.push(ex.slice_channels(&both, 1, 1)?);
                }
                encoder_features = feats;
            }
        }

        let d = self.decoder.stages.len();
        let mut decoder_features: Vec<Option<E::V>> = vec![None; d];
        let deepest_in = ex.maxpool2(encoder_features.last().expect("at least one stage"))?;
        decoder_features[d - 1] = Some(self.decoder.stages[d - 1].forward(ex, &deepest_in)?);
        for s in (0..d - 1).rev() {
            let skip = &encoder_features[s];
            let (_, _, sh, sw) = ex.dims(skip);
            let deeper = decoder_features[s + 1].as_ref().expect("computed");
            let up = ex.resize(deeper, sh, sw)?;
            let input = ex.concat(&[skip, &up])?;
            decoder_features[s] = Some(self.decoder.stages[s].forward(ex, &input)?);
        }
        let decoder_features: Vec<E::V> = decoder_features.into_iter().map(|v| v.expect("computed")).collect();
        let decoder = decoder_features
            .iter()
            .zip(&self.decoder.sides)
            .map(|(f, side)| side.forward(ex, f, h, w))
            .collect::<Result<Vec<_>>>()?;

        Ok(GraphOutputs {
            encoder_features,
            decoder_features,
            encoder1,
            encoder2,
            decoder,
        })
    }

    /// Inference forward with batchnorm in eval mode.
    pub fn forward(&self, images: &Tensor) -> Result<ForwardOutputs> {
        self.forward_with(&mut InferExec::new(&self.store), images)
    }

    pub fn forward_with(&self, ex: &mut InferExec, images: &Tensor) -> Result<ForwardOutputs> {
        Ok(self.run(ex, images)?.into())
    }
}

/// All side-output maps, each `(n, 1, h, w)` at input resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutputs {
    pub encoder1: Vec<Tensor>,
    pub encoder2: Vec<Tensor>,
    pub decoder: Vec<Tensor>,
}

impl From<GraphOutputs<Tensor>> for ForwardOutputs {
    fn from(g: GraphOutputs<Tensor>) -> Self {
        ForwardOutputs {
            encoder1: g.encoder1,
            encoder2: g.encoder2,
            decoder: g.decoder,
        }
    }
}

impl ForwardOutputs {
    /// The designated saliency prediction, decoder side output 1.
    pub fn saliency(&self) -> &Tensor {
        &self.decoder[0]
    }

    pub fn len(&self) -> usize {
        self.encoder1.len() + self.encoder2.len() + self.decoder.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every map in a fixed order: encoder 1, encoder 2, decoder.
    pub fn all(&self) -> impl Iterator<Item = &Tensor> {
        self.encoder1.iter().chain(&self.encoder2).chain(&self.decoder)
    }

    /// Largest absolute difference over all maps.
    pub fn max_abs_diff(&self, other: &ForwardOutputs) -> Result<f64> {
        if self.len() != other.len() {
            return invalid("output sets differ in size");
        }
        self.all()
            .zip(other.all())
            .try_fold(0.0f64, |m, (a, b)| Ok(m.max(a.max_abs_diff(b)?)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_tensor;

    fn conv_bn(ci: usize, co: usize, k: usize) -> usize {
        ci * co * k * k + 2 * co
    }

    /// Trainable scalars counted from the layer list: stem, basic blocks
    /// (with a 1x1 projection on stride or width change), side heads, and
    /// two-level pyramids with 16 paths and `m = c_out / 2`.
    fn closed_form_count(cfg: &DCNetConfig) -> usize {
        let mut enc = conv_bn(cfg.in_channels, cfg.widths[0], 3);
        let mut c = cfg.widths[0];
        for (e, &w) in cfg.widths.iter().enumerate() {
            let stride = if e == 0 { 1 } else { 2 };
            enc += conv_bn(c, w, 3) + conv_bn(w, w, 3) + w * 9 + 1;
            if stride != 1 || c != w {
                enc += conv_bn(c, w, 1);
            }
            c = w;
        }
        let mut dec = 0;
        for d in 1..=cfg.decoder_stages() {
            let (ci, co) = (cfg.decoder_in_channels(d), cfg.decoder_width(d));
            let m = (co / 2).max(1);
            dec += conv_bn(ci, co, 3) + 4 * conv_bn(co, m, 3) + 16 * conv_bn(m, m, 3) + conv_bn(16 * m, co, 1);
            dec += co * 9 + 1;
        }
        2 * enc + dec
    }

    #[test]
    fn default_config_outputs() {
        let cfg = DCNetConfig::default();
        assert_eq!(cfg.side_outputs(), 13);
        let net = DCNet::build(&cfg, 0).unwrap();
        let out = net
            .forward(&random_tensor([2, 3, 64, 64], 1).map(|v| v.abs().min(1.0)))
            .unwrap();
        assert_eq!(out.len(), 13);
        assert_eq!((out.encoder1.len(), out.encoder2.len(), out.decoder.len()), (4, 4, 5));
        for m in out.all() {
            assert_eq!(m.shape(), [2, 1, 64, 64]);
            assert!(m.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        assert_eq!(out.saliency(), &out.decoder[0]);
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        let cfg = DCNetConfig::default();
        let net = DCNet::build(&cfg, 0).unwrap();
        assert_eq!(closed_form_count(&cfg), 3_927_293);
        assert_eq!(net.store.trainable_count(), closed_form_count(&cfg));
        let small = DCNetConfig::uniform(2, 8, (32, 32));
        assert_eq!(
            DCNet::build(&small, 0).unwrap().store.trainable_count(),
            closed_form_count(&small)
        );
    }

    #[test]
    fn decoder_channel_bookkeeping() {
        let cfg = DCNetConfig::default();
        let ins: Vec<usize> = (1..=5).map(|d| cfg.decoder_in_channels(d)).collect();
        assert_eq!(ins, [64, 128, 256, 384, 256]);
        for d in 1..5 {
            assert_eq!(
                cfg.decoder_in_channels(d),
                2 * cfg.widths[d - 1] + cfg.decoder_width(d + 1)
            );
        }
    }

    #[test]
    fn encoders_are_shape_isomorphic_and_seeded() {
        let cfg = DCNetConfig::uniform(2, 8, (32, 32));
        let net = DCNet::build(&cfg, 7).unwrap();
        let tree = net.store.shape_tree();
        let one: Vec<_> = tree
            .iter()
            .filter_map(|(n, s)| n.strip_prefix("encoder1.").map(|r| (r.to_string(), *s)))
            .collect();
        let two: Vec<_> = tree
            .iter()
            .filter_map(|(n, s)| n.strip_prefix("encoder2.").map(|r| (r.to_string(), *s)))
            .collect();
        assert!(!one.is_empty());
        assert_eq!(one, two);
        assert!(tree
            .iter()
            .all(|(n, _)| ["encoder1.", "encoder2.", "decoder."].iter().any(|p| n.starts_with(p))));

        let again = DCNet::build(&cfg, 7).unwrap();
        assert!(net
            .store
            .iter()
            .zip(again.store.iter())
            .all(|(a, b)| a.value == b.value));
        let other = DCNet::build(&cfg, 8).unwrap();
        assert!(net
            .store
            .iter()
            .zip(other.store.iter())
            .any(|(a, b)| a.value != b.value));
    }

    #[test]
    fn invalid_configs_and_inputs() {
        assert!(DCNet::build(&DCNetConfig::uniform(2, 8, (36, 32)), 0).is_err());
        assert!(DCNet::build(&DCNetConfig::uniform(0, 8, (32, 32)), 0).is_err());
        let mut cfg = DCNetConfig::uniform(2, 8, (32, 32));
        cfg.widths = vec![8];
        assert!(cfg.validate().is_err());
        let net = DCNet::build(&DCNetConfig::uniform(2, 8, (32, 32)), 0).unwrap();
        assert!(net.forward(&random_tensor([1, 3, 16, 16], 0)).is_err());
        assert!(net.forward(&random_tensor([1, 1, 32, 32], 0)).is_err());
    }
}
