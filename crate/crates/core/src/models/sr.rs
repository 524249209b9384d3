use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::{ConvRef, DenseRef, ParamSet};
use super::{images_to_tensor, tensor_to_images, Model};
use crate::error::{shape_err, Error, Result};
use crate::image::Image;
use crate::nn::{Graph, NodeId, Tensor};
use crate::resample::resize_raw;

/// Images per forward chunk during inference.
const INFER_CHUNK: usize = 64;
/// Init gain of the upsampling convolution; keeps the untrained model close
/// to its bicubic skip path.
const UPSAMPLER_GAIN: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SrFamily {
    EdsrLite,
    CarnLite,
    RcanLite,
}

impl SrFamily {
    pub const ALL: [SrFamily; 3] = [SrFamily::EdsrLite, SrFamily::CarnLite, SrFamily::RcanLite];

    pub fn as_str(self) -> &'static str {
        match self {
            SrFamily::EdsrLite => "EDSR_LITE",
            SrFamily::CarnLite => "CARN_LITE",
            SrFamily::RcanLite => "RCAN_LITE",
        }
    }
}

impl fmt::Display for SrFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SrFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "EDSR_LITE" | "EDSR" => Ok(SrFamily::EdsrLite),
            "CARN_LITE" | "CARN" => Ok(SrFamily::CarnLite),
            "RCAN_LITE" | "RCAN" => Ok(SrFamily::RcanLite),
            _ => Err(Error::Config(format!("unknown SR family {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SrModelConfig {
    pub family: SrFamily,
    pub scale: usize,
    pub channels: usize,
    pub blocks: usize,
    pub attention_reduction: usize,
    /// Zero the upsampler so the untrained model reproduces bicubic exactly.
    pub identity_init: bool,
}

impl Default for SrModelConfig {
    fn default() -> Self {
        Self {
            family: SrFamily::EdsrLite,
            scale: 2,
            channels: 32,
            blocks: 4,
            attention_reduction: 8,
            identity_init: false,
        }
    }
}

impl SrModelConfig {
    pub fn new(family: SrFamily) -> Self {
        Self {
            family,
            ..Self::default()
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.scale != 2 {
            v.push(format!("sr.scale must be 2, got {}", self.scale));
        }
        if self.channels < 8 {
            v.push(format!(
                "sr.channels must be at least 8, got {}",
                self.channels
            ));
        }
        if self.blocks < 1 {
            v.push("sr.blocks must be at least 1".to_string());
        }
        if self.family == SrFamily::RcanLite
            && (self.attention_reduction == 0
                || !self.channels.is_multiple_of(self.attention_reduction))
        {
            v.push(format!(
                "sr.attention_reduction {} must divide channels {}",
                self.attention_reduction, self.channels
            ));
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        match self.violations() {
            v if v.is_empty() => Ok(()),
            v => Err(Error::Config(v.join("; "))),
        }
    }
}

#[derive(Debug, Clone)]
struct Rcab {
    conv1: ConvRef,
    conv2: ConvRef,
    squeeze: DenseRef,
    excite: DenseRef,
}

#[derive(Debug, Clone)]
enum Body {
    Edsr {
        blocks: Vec<(ConvRef, ConvRef)>,
        tail: ConvRef,
    },
    Carn {
        units: Vec<(ConvRef, ConvRef)>,
        fuse: Vec<ConvRef>,
    },
    Rcan {
        blocks: Vec<Rcab>,
        tail: ConvRef,
    },
}

/// A 2× single-channel super-resolution network with a global bicubic skip.
#[derive(Debug, Clone)]
pub struct SrModel {
    config: SrModelConfig,
    seed: u64,
    params: ParamSet,
    head: ConvRef,
    body: Body,
    upsampler: ConvRef,
}

impl Model for SrModel {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }
}

pub fn build_sr_model(config: &SrModelConfig, seed: u64) -> Result<SrModel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamSet::new();
    let c = config.channels;
    let head = p.conv("head", 1, c, 3, 1.0, &mut rng);
    let body = match config.family {
        SrFamily::EdsrLite => {
            let blocks = (0..config.blocks)
                .map(|i| {
                    (
                        p.conv(&format!("body.{i}.conv1"), c, c, 3, 1.0, &mut rng),
                        p.conv(&format!("body.{i}.conv2"), c, c, 3, 1.0, &mut rng),
                    )
                })
                .collect();
            let tail = p.conv("body.tail", c, c, 3, 1.0, &mut rng);
            Body::Edsr { blocks, tail }
        }
        SrFamily::CarnLite => {
            let mut units = Vec::new();
            let mut fuse = Vec::new();
            for i in 0..config.blocks {
                units.push((
                    p.conv(&format!("body.{i}.conv1"), c, c, 3, 1.0, &mut rng),
                    p.conv(&format!("body.{i}.conv2"), c, c, 3, 1.0, &mut rng),
                ));
                fuse.push(p.conv(&format!("body.{i}.fuse"), (i + 2) * c, c, 1, 1.0, &mut rng));
            }
            Body::Carn { units, fuse }
        }
        SrFamily::RcanLite => {
            let r = c / config.attention_reduction;
            let blocks = (0..config.blocks)
                .map(|i| Rcab {
                    conv1: p.conv(&format!("body.{i}.conv1"), c, c, 3, 1.0, &mut rng),
                    conv2: p.conv(&format!("body.{i}.conv2"), c, c, 3, 1.0, &mut rng),
                    squeeze: p.dense(&format!("body.{i}.attention.squeeze"), c, r, 1.0, &mut rng),
                    excite: p.dense(&format!("body.{i}.attention.excite"), r, c, 1.0, &mut rng),
                })
                .collect();
            let tail = p.conv("body.tail", c, c, 3, 1.0, &mut rng);
            Body::Rcan { blocks, tail }
        }
    };
    let gain = if config.identity_init {
        0.0
    } else {
        UPSAMPLER_GAIN
    };
    let upsampler = p.conv(
        "upsampler",
        c,
        config.scale * config.scale,
        3,
        gain,
        &mut rng,
    );
    Ok(SrModel {
        config: config.clone(),
        seed,
        params: p,
        head,
        body,
        upsampler,
    })
}

impl SrModel {
    pub fn config(&self) -> &SrModelConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn family(&self) -> SrFamily {
        self.config.family
    }

    pub fn scale(&self) -> usize {
        self.config.scale
    }

    /// Records the forward pass for an `[n, 1, h, w]` LR input. `skip` is the
    /// bicubic-upsampled input (see [`bicubic_skip`]); `p` holds the bound
    /// parameter nodes in registration order.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        p: &[NodeId],
        lr: NodeId,
        skip: NodeId,
    ) -> Result<NodeId> {
        let conv = |g: &mut Graph, x: NodeId, r: ConvRef| g.conv2d(x, p[r.weight], Some(p[r.bias]));
        let x0 = conv(g, lr, self.head)?;
        let features = match &self.body {
            Body::Edsr { blocks, tail } => {
                let mut x = x0;
                for &(c1, c2) in blocks {
                    let h = conv(g, x, c1)?;
                    let h = g.relu(h);
                    let h = conv(g, h, c2)?;
                    x = g.add(x, h)?;
                }
                let t = conv(g, x, *tail)?;
                g.add(t, x0)?
            }
            Body::Carn { units, fuse } => {
                let mut cascade = x0;
                let mut o = x0;
                for (&(c1, c2), &f) in units.iter().zip(fuse) {
                    let h = conv(g, o, c1)?;
                    let h = g.relu(h);
                    let h = conv(g, h, c2)?;
                    let h = g.add(h, o)?;
                    let b = g.relu(h);
                    cascade = g.concat(&[cascade, b])?;
                    o = conv(g, cascade, f)?;
                }
                o
            }
            Body::Rcan { blocks, tail } => {
                let mut x = x0;
                for blk in blocks {
                    let h = conv(g, x, blk.conv1)?;
                    let h = g.relu(h);
                    let h = conv(g, h, blk.conv2)?;
                    let pooled = g.global_avg_pool(h)?;
                    let s = g.linear(pooled, p[blk.squeeze.weight], Some(p[blk.squeeze.bias]))?;
                    let s = g.relu(s);
                    let s = g.linear(s, p[blk.excite.weight], Some(p[blk.excite.bias]))?;
                    let s = g.sigmoid(s);
                    let h = g.channel_scale(h, s)?;
                    x = g.add(x, h)?;
                }
                let t = conv(g, x, *tail)?;
                g.add(t, x0)?
            }
        };
        let up = conv(g, features, self.upsampler)?;
        let up = g.pixel_shuffle(up)?;
        let out = g.add(up, skip)?;
        Ok(g.clamp(out, 0.0, 1.0))
    }
}

/// Bicubic 2× enlargement of an `[n, 1, h, w]` batch (unclamped), used as the
/// global skip path.
pub(crate) fn bicubic_skip(lr: &Tensor, scale: usize) -> Result<Tensor> {
    let (n, c, h, w) = lr.dims4()?;
    if c != 1 {
        return shape_err(format!("expected one channel, got {c}"));
    }
    let (oh, ow) = (h * scale, w * scale);
    let mut out = Vec::with_capacity(n * oh * ow);
    for plane in lr.data().chunks(h * w) {
        let src: Vec<f64> = plane.iter().map(|&v| f64::from(v)).collect();
        out.extend(resize_raw(&src, h, w, oh, ow).into_iter().map(|v| v as f32));
    }
    Tensor::new(vec![n, 1, oh, ow], out)
}

/// Super-resolves a batch of LR images. Outputs are exactly `scale×` larger
/// and clamped to `[0, M]`.
pub fn sr_forward(model: &SrModel, lr_batch: &[Image]) -> Result<Vec<Image>> {
    let mut out = Vec::with_capacity(lr_batch.len());
    for chunk in lr_batch.chunks(INFER_CHUNK) {
        let peak = chunk[0].peak();
        if chunk.iter().any(|i| i.peak() != peak) {
            return Err(Error::Config("mixed peaks in batch".into()));
        }
        let x = images_to_tensor(chunk)?;
        let skip = bicubic_skip(&x, model.scale())?;
        let mut g = Graph::new();
        let p = model.params.bind(&mut g, false);
        let xn = g.leaf(x, false);
        let sn = g.leaf(skip, false);
        let y = model.forward_graph(&mut g, &p, xn, sn)?;
        out.extend(tensor_to_images(g.value(y), peak)?);
    }
    Ok(out)
}
