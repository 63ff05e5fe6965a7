//! Fault-injection simulation and fault-tolerant architecture search for
//! quantized convolutional networks.

pub mod autodiff;
pub mod controller;
pub mod error;
pub mod fault;
pub mod ftt;
pub mod gradcheck;
pub mod harness;
pub mod kernels;
pub mod nn;
pub mod quant;
pub mod rng;
pub mod tensor;

pub use autodiff::{Gradients, ParamId, Tape, Var};
pub use controller::{Controller, ControllerConfig, Sampling};
pub use error::{Error, Result};
pub use fault::{FaultMask, FaultModelSpec};
pub use ftt::{evaluate, ft_reward, ftt_loss, ftt_train, search, EvalConfig, SearchConfig, SearchOutcome, TrainConfig};
pub use harness::checkpoint::Checkpoint;
pub use harness::config::{Profile, RunConfig};
pub use harness::dataset::{load_dataset, Dataset, DatasetSpec, DatasetSplits};
pub use harness::report::{EvalReport, ReportRow};
pub use nn::{ArchSpec, Architecture, Model, ParamStore, PrimitiveKind, Rollout, SearchSpace, SuperNet, SuperNetConfig};
pub use quant::{find_frac_len, quantize, QuantSpec, Scheme};
pub use rng::RngStream;
pub use tensor::Tensor;
