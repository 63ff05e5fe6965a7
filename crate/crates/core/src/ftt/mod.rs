//! Fault-tolerant training and the alternating architecture search.
//!
//! The training objective mixes a clean and a faulty cross entropy,
//! `L = (1 - α_l)·CE_c + α_l·CE_f`, and the controller reward mixes the
//! corresponding accuracies, `R = (1 - α_r)·acc_c + α_r·acc_f`. Both are plain
//! affine combinations so `α = 0` is exactly the clean quantity.

mod optim;
mod search;
mod train;

pub use optim::{cosine_lr, Sgd};
pub use search::{search, EpochRecord, LogRecord, SearchConfig, SearchOutcome};
pub use train::{
    accuracy, evaluate, ftt_step, ftt_train, select_rate, EpochStats, EvalConfig, RateSelection, RateTrial, StepSpec, StepStats,
    TrainConfig,
};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Normalization of a faulty forward pass that runs beside a clean pass on
/// the same batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaultyBn {
    /// Reuse the clean pass's batch statistics as constants, like a device
    /// whose BN was folded with fault-free calibration.
    Clean,
    /// Normalize with the faulty pass's own batch statistics, which
    /// re-centres and partly absorbs feature faults.
    #[default]
    Batch,
}

fn check_coef(name: &str, a: f64) -> Result<()> {
    if (0.0..=1.0).contains(&a) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} = {a} must lie in [0, 1]")))
    }
}

/// Weighted clean/faulty cross entropy as a node on `tape`. `faulty` may be
/// omitted only when `alpha_l == 0`.
pub fn ftt_loss_var(tape: &mut Tape, clean: Var, faulty: Option<Var>, labels: &[usize], alpha_l: f64) -> Result<Var> {
    check_coef("alpha_l", alpha_l)?;
    let ce_c = tape.cross_entropy(clean, labels)?;
    match faulty {
        None if alpha_l == 0.0 => Ok(ce_c),
        None => Err(Error::precondition("faulty logits are required when alpha_l > 0")),
        Some(f) => {
            let ce_f = tape.cross_entropy(f, labels)?;
            tape.weighted_sum(&[(ce_c, 1.0 - alpha_l), (ce_f, alpha_l)])
        }
    }
}

/// Value of the FTT loss for materialized logits.
pub fn ftt_loss(clean: &Tensor, faulty: Option<&Tensor>, labels: &[usize], alpha_l: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let c = tape.leaf(clean.clone());
    let f = faulty.map(|t| tape.leaf(t.clone()));
    let l = ftt_loss_var(&mut tape, c, f, labels, alpha_l)?;
    Ok(tape.scalar(l))
}

/// Mean cross entropy of `logits` `[n, k]` against `labels`.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    ftt_loss(logits, None, labels, 0.0)
}

pub fn ft_reward(acc_c: f64, acc_f: f64, alpha_r: f64) -> Result<f64> {
    check_coef("alpha_r", alpha_r)?;
    for a in [acc_c, acc_f] {
        if !(0.0..=1.0).contains(&a) {
            return Err(Error::precondition(format!("accuracy {a} outside [0, 1]")));
        }
    }
    Ok((1.0 - alpha_r) * acc_c + alpha_r * acc_f)
}
