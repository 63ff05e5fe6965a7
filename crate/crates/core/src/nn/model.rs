//! Declarative architecture specs and the model container pairing a built
//! architecture with its parameters.

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, Var};
use crate::error::Result;
use crate::nn::arch::{self, Architecture, Cost};
use crate::nn::ctx::ForwardCtx;
use crate::nn::fixed::{MixedBlockNet, SimpleCnn, StackedNet};
use crate::nn::params::ParamStore;
use crate::nn::primitive::PrimitiveKind;
use crate::nn::rollout::Rollout;
use crate::nn::supernet::{DerivedNet, SuperNetConfig};
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ArchSpec {
    SimpleCnn { layers: Vec<(usize, usize)> },
    Stacked { primitive: PrimitiveKind, depth: usize, channels: usize },
    MixedBlock { depth: usize, channels: usize },
    Derived { supernet: SuperNetConfig, rollout: Rollout },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum BuiltArch {
    Simple(SimpleCnn),
    Stacked(StackedNet),
    Mixed(MixedBlockNet),
    Derived(DerivedNet),
}

impl BuiltArch {
    fn inner(&self) -> &dyn Architecture {
        match self {
            Self::Simple(a) => a,
            Self::Stacked(a) => a,
            Self::Mixed(a) => a,
            Self::Derived(a) => a,
        }
    }
}

impl Architecture for BuiltArch {
    fn forward(&self, ctx: &mut ForwardCtx<'_>, x: Var) -> Result<Var> {
        self.inner().forward(ctx, x)
    }

    fn param_ids(&self) -> Vec<ParamId> {
        self.inner().param_ids()
    }

    fn label(&self) -> String {
        self.inner().label()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub spec: ArchSpec,
    pub arch: BuiltArch,
    pub store: ParamStore,
}

impl Model {
    /// Build with parameters initialized from `seed`.
    pub fn build(spec: &ArchSpec, in_channels: usize, classes: usize, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(seed).derive_str("init");
        let arch = match spec {
            ArchSpec::SimpleCnn { layers } => BuiltArch::Simple(SimpleCnn::build(layers, in_channels, classes, &mut store, &mut rng)?),
            ArchSpec::Stacked { primitive, depth, channels } => {
                BuiltArch::Stacked(StackedNet::build(*primitive, *depth, *channels, in_channels, classes, &mut store, &mut rng)?)
            }
            ArchSpec::MixedBlock { depth, channels } => {
                BuiltArch::Mixed(MixedBlockNet::build(*depth, *channels, in_channels, classes, &mut store, &mut rng)?)
            }
            ArchSpec::Derived { supernet, rollout } => {
                BuiltArch::Derived(DerivedNet::build(supernet, rollout, in_channels, classes, &mut store, &mut rng)?)
            }
        };
        Ok(Self { spec: spec.clone(), arch, store })
    }

    pub fn cost(&self, input: [usize; 3]) -> Result<Cost> {
        arch::cost(&self.arch, &self.store, input)
    }
}
