//! Network graph: primitives, cells, the shared-weight supernet and fixed
//! architectures, all executed through a fault-injecting [`ForwardCtx`].

pub mod arch;
pub mod ctx;
pub mod fixed;
pub mod model;
pub mod params;
pub mod primitive;
pub mod rollout;
pub mod supernet;

pub use arch::{cost, Architecture, Cost};
pub use ctx::{apply_bn_updates, FaultOptions, ForwardCtx, Mode, PassConfig, QuantConfig};
pub use model::{ArchSpec, BuiltArch, Model};
pub use params::{ParamRole, ParamStore};
pub use primitive::{primitive_forward, PrimitiveKind};
pub use rollout::{CellTopology, NodeChoice, Rollout, SearchSpace};
pub use supernet::{assemble, CandidateNet, ChannelGrowth, DerivedNet, SuperNet, SuperNetConfig};
