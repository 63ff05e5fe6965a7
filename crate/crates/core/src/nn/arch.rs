//! Architecture trait and accounting shared by supernet candidates and fixed
//! networks.

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, Var};
use crate::error::Result;
use crate::fault::FaultModelSpec;
use crate::nn::ctx::{FaultOptions, ForwardCtx, PassConfig, QuantConfig};
use crate::nn::params::ParamStore;
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// A network topology whose parameters live in a separate [`ParamStore`].
pub trait Architecture {
    /// Logits `[n, classes]` for an `[n, c, h, w]` input already on the tape.
    fn forward(&self, ctx: &mut ForwardCtx<'_>, x: Var) -> Result<Var>;

    /// Parameters the forward pass may read.
    fn param_ids(&self) -> Vec<ParamId>;

    fn label(&self) -> String;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cost {
    /// Multiply-accumulates plus elementwise adds and pooling window reads,
    /// per sample.
    pub flops: u64,
    pub macs: u64,
    pub params: usize,
}

/// Count operations and touched parameters with one real-valued, fault-free
/// forward pass of a single `input`-shaped sample.
pub fn cost(arch: &dyn Architecture, store: &ParamStore, input: [usize; 3]) -> Result<Cost> {
    let rng = RngStream::new(0);
    let mut ctx = ForwardCtx::new(store, QuantConfig::disabled(), FaultOptions::default(), PassConfig::eval(FaultModelSpec::None), &rng);
    let x = ctx.input(Tensor::zeros(&[1, input[0], input[1], input[2]]))?;
    arch.forward(&mut ctx, x)?;
    let counts = ctx.counts();
    Ok(Cost { flops: counts.flops(), macs: counts.macs, params: store.numel(ctx.touched().iter().copied()) })
}
