//! The eleven candidate operations on a cell edge.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, Var};
use crate::error::{Error, Result};
use crate::kernels::ConvGeom;
use crate::nn::ctx::ForwardCtx;
use crate::nn::params::{BnParams, ParamStore};
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum PrimitiveKind {
    None,
    SkipConnect,
    AvgPool3x3,
    MaxPool3x3,
    Conv1x1,
    ReluConvBn3x3,
    ReluConvBn5x5,
    SepConv3x3,
    SepConv5x5,
    DilConv3x3,
    DilConv5x5,
}

impl PrimitiveKind {
    pub const ALL: [PrimitiveKind; 11] = [
        Self::None,
        Self::SkipConnect,
        Self::AvgPool3x3,
        Self::MaxPool3x3,
        Self::Conv1x1,
        Self::ReluConvBn3x3,
        Self::ReluConvBn5x5,
        Self::SepConv3x3,
        Self::SepConv5x5,
        Self::DilConv3x3,
        Self::DilConv5x5,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::SkipConnect => "skip_connect",
            Self::AvgPool3x3 => "avg_pool_3x3",
            Self::MaxPool3x3 => "max_pool_3x3",
            Self::Conv1x1 => "conv_1x1",
            Self::ReluConvBn3x3 => "relu_conv_bn_3x3",
            Self::ReluConvBn5x5 => "relu_conv_bn_5x5",
            Self::SepConv3x3 => "sep_conv_3x3",
            Self::SepConv5x5 => "sep_conv_5x5",
            Self::DilConv3x3 => "dil_conv_3x3",
            Self::DilConv5x5 => "dil_conv_5x5",
        }
    }

    pub fn kernel(self) -> Option<usize> {
        match self {
            Self::Conv1x1 => Some(1),
            Self::AvgPool3x3 | Self::MaxPool3x3 | Self::ReluConvBn3x3 | Self::SepConv3x3 | Self::DilConv3x3 => Some(3),
            Self::ReluConvBn5x5 | Self::SepConv5x5 | Self::DilConv5x5 => Some(5),
            Self::None | Self::SkipConnect => None,
        }
    }

    /// Convolutions executed by the primitive as `(in channels per group,
    /// kernel)` pairs; these are the `(c, k)` shapes that set MiBB rates.
    pub fn conv_shapes(self, c: usize) -> Vec<(usize, usize)> {
        match self {
            Self::Conv1x1 => vec![(c, 1)],
            Self::ReluConvBn3x3 => vec![(c, 3)],
            Self::ReluConvBn5x5 => vec![(c, 5)],
            Self::SepConv3x3 => vec![(1, 3), (c, 1), (c, 1)],
            Self::SepConv5x5 => vec![(1, 5), (c, 1), (c, 1)],
            Self::DilConv3x3 => vec![(1, 3), (c, 1)],
            Self::DilConv5x5 => vec![(1, 5), (c, 1)],
            _ => Vec::new(),
        }
    }

    /// Closed-form multiply-accumulates per sample for `c` channels and an
    /// `h × w` output.
    pub fn macs(self, c: usize, h: usize, w: usize) -> u64 {
        self.conv_shapes(c).iter().map(|&(cin, k)| (c * cin * k * k * h * w) as u64).sum()
    }

    /// Closed-form parameter count including batch-norm affine terms.
    pub fn param_count(self, c: usize) -> usize {
        let bns = match self {
            Self::ReluConvBn3x3 | Self::ReluConvBn5x5 | Self::DilConv3x3 | Self::DilConv5x5 => 1,
            Self::SepConv3x3 | Self::SepConv5x5 => 2,
            _ => 0,
        };
        self.conv_shapes(c).iter().map(|&(cin, k)| c * cin * k * k).sum::<usize>() + bns * 2 * c
    }
}

impl fmt::Display for PrimitiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PrimitiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.iter().copied().find(|k| k.name() == s).ok_or_else(|| Error::InvalidRollout(format!("unknown primitive {s:?}")))
    }
}

impl From<PrimitiveKind> for String {
    fn from(k: PrimitiveKind) -> String {
        k.name().to_string()
    }
}

impl TryFrom<String> for PrimitiveKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvBn {
    pub conv: ParamId,
    pub bn: BnParams,
    pub kernel: usize,
}

impl ConvBn {
    pub fn build(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize, kernel: usize, rng: &mut RngStream) -> Result<Self> {
        let conv = store.conv(&format!("{name}.conv"), c_out, c_in, kernel, false, rng)?;
        let bn = store.batch_norm(&format!("{name}.bn"), c_out)?;
        Ok(Self { conv, bn, kernel })
    }

    /// Conv-BN without the leading ReLU.
    pub fn forward(&self, ctx: &mut ForwardCtx<'_>, x: Var, stride: usize) -> Result<Var> {
        let y = ctx.conv(x, self.conv, ConvGeom::same(self.kernel, stride))?;
        ctx.batch_norm(y, &self.bn)
    }

    /// ReLU-Conv-BN.
    pub fn forward_relu(&self, ctx: &mut ForwardCtx<'_>, x: Var, stride: usize) -> Result<Var> {
        let r = ctx.relu(x);
        self.forward(ctx, r, stride)
    }
}

/// Parameters of one primitive instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum PrimitiveParams {
    Empty,
    Conv(ParamId),
    ReluConvBn(ConvBn),
    Sep { dw: ParamId, pw1: ParamId, bn1: BnParams, pw2: ParamId, bn2: BnParams },
    Dil { dw: ParamId, pw: ParamId, bn: BnParams },
}

impl PrimitiveParams {
    pub fn ids(&self) -> Vec<ParamId> {
        match self {
            Self::Empty => Vec::new(),
            Self::Conv(id) => vec![*id],
            Self::ReluConvBn(cb) => vec![cb.conv, cb.bn.gamma, cb.bn.beta],
            Self::Sep { dw, pw1, bn1, pw2, bn2 } => vec![*dw, *pw1, bn1.gamma, bn1.beta, *pw2, bn2.gamma, bn2.beta],
            Self::Dil { dw, pw, bn } => vec![*dw, *pw, bn.gamma, bn.beta],
        }
    }
}

/// Create the parameters of `kind` for `c` channels under `name`.
pub fn build_primitive(store: &mut ParamStore, name: &str, kind: PrimitiveKind, c: usize, rng: &mut RngStream) -> Result<PrimitiveParams> {
    use PrimitiveKind as K;
    Ok(match kind {
        K::None | K::SkipConnect | K::AvgPool3x3 | K::MaxPool3x3 => PrimitiveParams::Empty,
        K::Conv1x1 => PrimitiveParams::Conv(store.conv(&format!("{name}.conv"), c, c, 1, false, rng)?),
        K::ReluConvBn3x3 | K::ReluConvBn5x5 => {
            PrimitiveParams::ReluConvBn(ConvBn::build(store, name, c, c, kind.kernel().unwrap_or(3), rng)?)
        }
        K::SepConv3x3 | K::SepConv5x5 => {
            let k = kind.kernel().unwrap_or(3);
            PrimitiveParams::Sep {
                dw: store.conv(&format!("{name}.dw"), c, 1, k, true, rng)?,
                pw1: store.conv(&format!("{name}.pw1"), c, c, 1, false, rng)?,
                bn1: store.batch_norm(&format!("{name}.bn1"), c)?,
                pw2: store.conv(&format!("{name}.pw2"), c, c, 1, false, rng)?,
                bn2: store.batch_norm(&format!("{name}.bn2"), c)?,
            }
        }
        K::DilConv3x3 | K::DilConv5x5 => {
            let k = kind.kernel().unwrap_or(3);
            PrimitiveParams::Dil {
                dw: store.conv(&format!("{name}.dw"), c, 1, k, true, rng)?,
                pw: store.conv(&format!("{name}.pw"), c, c, 1, false, rng)?,
                bn: store.batch_norm(&format!("{name}.bn"), c)?,
            }
        }
    })
}

/// Apply one primitive with the given stride (1, or 2 on reduction edges).
pub fn primitive_forward(ctx: &mut ForwardCtx<'_>, kind: PrimitiveKind, params: &PrimitiveParams, x: Var, stride: usize) -> Result<Var> {
    use PrimitiveKind as K;
    let c = ctx.tape.value(x).shape()[1];
    match (kind, params) {
        (K::None, _) => {
            let s = ctx.tape.value(x).shape().to_vec();
            let out = [s[0], s[1], s[2].div_ceil(stride), s[3].div_ceil(stride)];
            Ok(ctx.zeros(&out))
        }
        (K::SkipConnect, _) if stride == 1 => Ok(x),
        // Parameter-free factorized reduction: keep every other pixel.
        (K::SkipConnect, _) => ctx.avg_pool(x, 1, stride, 0),
        (K::AvgPool3x3, _) => ctx.avg_pool(x, 3, stride, 1),
        (K::MaxPool3x3, _) => ctx.max_pool(x, 3, stride, 1),
        (K::Conv1x1, PrimitiveParams::Conv(w)) => ctx.conv(x, *w, ConvGeom::same(1, stride)),
        (K::ReluConvBn3x3 | K::ReluConvBn5x5, PrimitiveParams::ReluConvBn(cb)) => cb.forward_relu(ctx, x, stride),
        (K::SepConv3x3 | K::SepConv5x5, PrimitiveParams::Sep { dw, pw1, bn1, pw2, bn2 }) => {
            let k = kind.kernel().unwrap_or(3);
            let r = ctx.relu(x);
            let y = ctx.conv(r, *dw, ConvGeom::depthwise(k, stride, 1, c))?;
            let y = ctx.conv(y, *pw1, ConvGeom::same(1, 1))?;
            let y = ctx.batch_norm(y, bn1)?;
            let y = ctx.relu(y);
            let y = ctx.conv(y, *pw2, ConvGeom::same(1, 1))?;
            ctx.batch_norm(y, bn2)
        }
        (K::DilConv3x3 | K::DilConv5x5, PrimitiveParams::Dil { dw, pw, bn }) => {
            let k = kind.kernel().unwrap_or(3);
            let r = ctx.relu(x);
            let y = ctx.conv(r, *dw, ConvGeom::depthwise(k, stride, 2, c))?;
            let y = ctx.conv(y, *pw, ConvGeom::same(1, 1))?;
            ctx.batch_norm(y, bn)
        }
        (k, p) => Err(Error::precondition(format!("parameters {p:?} do not belong to primitive {k}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fault::FaultModelSpec;
    use crate::nn::ctx::{FaultOptions, PassConfig, QuantConfig};
    use crate::tensor::Tensor;

    #[test]
    fn names_round_trip() {
        assert_eq!(PrimitiveKind::ALL.len(), 11);
        for k in PrimitiveKind::ALL {
            assert_eq!(k.name().parse::<PrimitiveKind>().unwrap(), k);
        }
        assert!("conv_7x7".parse::<PrimitiveKind>().is_err());
    }

    #[test]
    fn sep_conv_param_count() {
        assert_eq!(PrimitiveKind::SepConv3x3.param_count(20), 20 * 9 + 2 * 400 + 2 * 40);
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(0);
        let p = build_primitive(&mut store, "e", PrimitiveKind::SepConv3x3, 20, &mut rng).unwrap();
        assert_eq!(store.numel(p.ids()), PrimitiveKind::SepConv3x3.param_count(20));
    }

    #[test]
    fn every_primitive_keeps_or_halves_extent() {
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(1);
        let params: Vec<_> = PrimitiveKind::ALL.iter().map(|&k| build_primitive(&mut store, k.name(), k, 4, &mut rng).unwrap()).collect();
        let x = Tensor::randn(&[2, 4, 8, 8], 1.0, &mut rng);
        for (k, p) in PrimitiveKind::ALL.iter().zip(&params) {
            for stride in [1, 2] {
                let mut ctx =
                    ForwardCtx::new(&store, QuantConfig::disabled(), FaultOptions::default(), PassConfig::eval(FaultModelSpec::None), &rng);
                let v = ctx.input(x.clone()).unwrap();
                let y = primitive_forward(&mut ctx, *k, p, v, stride).unwrap();
                assert_eq!(ctx.tape.value(y).shape(), &[2, 4, 8 / stride, 8 / stride], "{k} stride {stride}");
            }
        }
    }

    #[test]
    fn conv1x1_identity_weights_pass_input() {
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(2);
        let p = build_primitive(&mut store, "c", PrimitiveKind::Conv1x1, 3, &mut rng).unwrap();
        let PrimitiveParams::Conv(w) = p else { panic!() };
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        store.set(w, Tensor::new(vec![3, 3, 1, 1], eye).unwrap()).unwrap();
        let x = Tensor::randn(&[1, 3, 4, 4], 1.0, &mut rng);
        let mut ctx =
            ForwardCtx::new(&store, QuantConfig::disabled(), FaultOptions::default(), PassConfig::eval(FaultModelSpec::None), &rng);
        let v = ctx.input(x.clone()).unwrap();
        let y = primitive_forward(&mut ctx, PrimitiveKind::Conv1x1, &p, v, 1).unwrap();
        assert_eq!(ctx.tape.value(y).data(), x.data());
    }
}
