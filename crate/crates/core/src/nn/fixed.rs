//! Fixed architectures: a plain CNN, stacked primitives and the mixed-block
//! network used for weight-magnitude inspection.

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, Var};
use crate::error::{Error, Result};
use crate::nn::arch::Architecture;
use crate::nn::ctx::ForwardCtx;
use crate::nn::params::{LinearParams, ParamStore};
use crate::nn::primitive::{build_primitive, primitive_forward, ConvBn, PrimitiveKind, PrimitiveParams};
use crate::rng::RngStream;

fn head_ids(h: &LinearParams) -> [ParamId; 2] {
    [h.weight, h.bias]
}

fn conv_bn_ids(c: &ConvBn) -> [ParamId; 3] {
    [c.conv, c.bn.gamma, c.bn.beta]
}

/// Conv3x3-BN-ReLU layers, global average pooling and a linear classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimpleCnn {
    pub layers: Vec<(ConvBn, usize)>,
    pub head: LinearParams,
}

impl SimpleCnn {
    /// `layers`: `(out channels, stride)` per conv layer.
    pub fn build(
        layers: &[(usize, usize)],
        in_channels: usize,
        classes: usize,
        store: &mut ParamStore,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("simple CNN needs at least one layer".into()));
        }
        let mut c = in_channels;
        let mut out = Vec::with_capacity(layers.len());
        for (i, &(o, s)) in layers.iter().enumerate() {
            out.push((ConvBn::build(store, &format!("layer{i}"), c, o, 3, rng)?, s));
            c = o;
        }
        let head = store.linear("head", classes, c, rng)?;
        Ok(Self { layers: out, head })
    }
}

impl Architecture for SimpleCnn {
    fn forward(&self, ctx: &mut ForwardCtx<'_>, x: Var) -> Result<Var> {
        let mut h = x;
        for (cb, stride) in &self.layers {
            let y = cb.forward(ctx, h, *stride)?;
            h = ctx.relu(y);
        }
        let p = ctx.global_avg_pool(h)?;
        ctx.linear(p, self.head)
    }

    fn param_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<_> = self.layers.iter().flat_map(|(c, _)| conv_bn_ids(c)).collect();
        ids.extend(head_ids(&self.head));
        ids
    }

    fn label(&self) -> String {
        let chans: Vec<String> = self.layers.iter().map(|(c, s)| format!("{}/{s}", c.kernel)).collect();
        format!("simple-cnn[{}]", chans.join(","))
    }
}

/// A stem followed by `depth` copies of one primitive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StackedNet {
    pub kind: PrimitiveKind,
    pub stem: ConvBn,
    pub blocks: Vec<PrimitiveParams>,
    pub head: LinearParams,
}

impl StackedNet {
    pub fn build(
        kind: PrimitiveKind,
        depth: usize,
        channels: usize,
        in_channels: usize,
        classes: usize,
        store: &mut ParamStore,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let stem = ConvBn::build(store, "stem", in_channels, channels, 3, rng)?;
        let blocks = (0..depth).map(|i| build_primitive(store, &format!("block{i}.{kind}"), kind, channels, rng)).collect::<Result<_>>()?;
        let head = store.linear("head", classes, channels, rng)?;
        Ok(Self { kind, stem, blocks, head })
    }
}

impl Architecture for StackedNet {
    fn forward(&self, ctx: &mut ForwardCtx<'_>, x: Var) -> Result<Var> {
        let mut h = self.stem.forward(ctx, x, 1)?;
        for b in &self.blocks {
            h = primitive_forward(ctx, self.kind, b, h, 1)?;
        }
        let p = ctx.global_avg_pool(h)?;
        ctx.linear(p, self.head)
    }

    fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = conv_bn_ids(&self.stem).to_vec();
        ids.extend(self.blocks.iter().flat_map(PrimitiveParams::ids));
        ids.extend(head_ids(&self.head));
        ids
    }

    fn label(&self) -> String {
        format!("stacked-{}x{}", self.kind, self.blocks.len())
    }
}

/// One block of the mixed network: SepConv 3x3, ReLU-Conv-BN 3x3 or
/// ReLU-Conv-BN 1x1, one of which is picked uniformly on every pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixedBlock {
    pub sep: PrimitiveParams,
    pub rcb3: ConvBn,
    pub rcb1: ConvBn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixedBlockNet {
    pub stem: ConvBn,
    pub blocks: Vec<MixedBlock>,
    pub head: LinearParams,
}

impl MixedBlockNet {
    pub fn build(
        depth: usize,
        channels: usize,
        in_channels: usize,
        classes: usize,
        store: &mut ParamStore,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let stem = ConvBn::build(store, "stem", in_channels, channels, 3, rng)?;
        let mut blocks = Vec::with_capacity(depth);
        for i in 0..depth {
            blocks.push(MixedBlock {
                sep: build_primitive(store, &format!("block{i}.sep"), PrimitiveKind::SepConv3x3, channels, rng)?,
                rcb3: ConvBn::build(store, &format!("block{i}.rcb3"), channels, channels, 3, rng)?,
                rcb1: ConvBn::build(store, &format!("block{i}.rcb1"), channels, channels, 1, rng)?,
            });
        }
        let head = store.linear("head", classes, channels, rng)?;
        Ok(Self { stem, blocks, head })
    }
}

impl Architecture for MixedBlockNet {
    fn forward(&self, ctx: &mut ForwardCtx<'_>, x: Var) -> Result<Var> {
        let mut h = self.stem.forward(ctx, x, 1)?;
        for b in &self.blocks {
            h = match ctx.choice_stream().below(3) {
                0 => primitive_forward(ctx, PrimitiveKind::SepConv3x3, &b.sep, h, 1)?,
                1 => b.rcb3.forward_relu(ctx, h, 1)?,
                _ => b.rcb1.forward_relu(ctx, h, 1)?,
            };
        }
        let p = ctx.global_avg_pool(h)?;
        ctx.linear(p, self.head)
    }

    fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = conv_bn_ids(&self.stem).to_vec();
        for b in &self.blocks {
            ids.extend(b.sep.ids());
            ids.extend(conv_bn_ids(&b.rcb3));
            ids.extend(conv_bn_ids(&b.rcb1));
        }
        ids.extend(head_ids(&self.head));
        ids
    }

    fn label(&self) -> String {
        format!("mixed-block-x{}", self.blocks.len())
    }
}
