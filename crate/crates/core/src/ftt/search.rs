use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::{cosine_lr, Sgd};
use super::train::{accuracy, ftt_step, StepSpec};
use super::{check_coef, ft_reward, FaultyBn};
use crate::autodiff::{BnStats, ParamId};
use crate::controller::{Controller, ControllerConfig, Sampling};
use crate::error::{Error, Result};
use crate::fault::FaultModelSpec;
use crate::harness::checkpoint::Checkpoint;
use crate::harness::dataset::{Augment, Dataset};
use crate::nn::{assemble, Architecture, FaultOptions, ForwardCtx, Mode, ParamStore, PassConfig, QuantConfig, Rollout, SuperNet};
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub alpha_r: f64,
    pub alpha_l: f64,
    pub fault: FaultModelSpec,
    /// Initial shared-weight learning rate of the cosine schedule.
    pub lr_w: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Fraction of the training data for shared weights; the rest rewards
    /// the controller.
    pub train_fraction: f64,
    /// Controller updates per epoch; defaults to one per validation batch.
    pub controller_steps: Option<usize>,
    /// Faulty forward passes averaged per reward.
    pub reward_draws: usize,
    /// BN of the faulty reward pass; shared-weight steps use batch statistics.
    pub reward_bn: FaultyBn,
    pub controller: ControllerConfig,
    pub quant: QuantConfig,
    pub fault_options: FaultOptions,
    pub augment: Augment,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            alpha_r: 0.5,
            alpha_l: 0.5,
            fault: FaultModelSpec::None,
            lr_w: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            train_fraction: 0.8,
            controller_steps: None,
            reward_draws: 1,
            reward_bn: FaultyBn::Clean,
            controller: ControllerConfig::default(),
            quant: QuantConfig::default(),
            fault_options: FaultOptions::default(),
            augment: Augment::default(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        check_coef("alpha_r", self.alpha_r)?;
        check_coef("alpha_l", self.alpha_l)?;
        self.fault.validate()?;
        if !(0.0 < self.train_fraction && self.train_fraction < 1.0) {
            return Err(Error::Config(format!("train_fraction {} must lie in (0, 1)", self.train_fraction)));
        }
        if self.batch_size == 0 || self.reward_draws == 0 {
            return Err(Error::Config("batch_size and reward_draws must be positive".into()));
        }
        Ok(())
    }
}

/// One line of the newline-delimited search log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub epoch: usize,
    pub phase: String,
    pub step: usize,
    pub seed: u64,
    pub rollout: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ce_c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ce_f: Option<f64>,
    pub acc_c: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub acc_f: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reward: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub baseline: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub entropy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr_w: f64,
    pub mean_loss: f64,
    pub mean_reward: f64,
    pub baseline: Option<f64>,
    pub mean_entropy: f64,
    pub argmax: Rollout,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchOutcome {
    /// Argmax decoding of the final controller.
    pub best: Rollout,
    pub history: Vec<EpochRecord>,
    pub log: Vec<LogRecord>,
}

fn divergence_checkpoint(dir: &Path, epoch: usize, store: &ParamStore, controller: &Controller) -> Result<()> {
    let mut ck = Checkpoint::new(serde_json::json!({ "epoch": epoch, "reason": "divergence" }));
    ck.add_store("supernet", store)?;
    ck.add_store("controller", &controller.store)?;
    ck.write(&dir.join(format!("divergence-epoch{epoch}.ckpt")))
}

/// Alternate shared-weight training on one split with controller updates on
/// the other. Phase 1 never touches controller parameters and phase 2 never
/// touches the supernet store.
pub fn search(
    cfg: &SearchConfig,
    net: &SuperNet,
    store: &mut ParamStore,
    controller: &mut Controller,
    data: &Dataset,
    seed: u64,
    checkpoint_dir: Option<&Path>,
) -> Result<SearchOutcome> {
    cfg.validate()?;
    if controller.space != net.config.space {
        return Err(Error::Config("controller and supernet search spaces differ".into()));
    }
    let root = RngStream::new(seed).derive_str("search");
    let (d_t, d_v) = data.split(cfg.train_fraction, seed)?;
    let mut sgd = Sgd::new(cfg.momentum, cfg.weight_decay);
    let step_spec =
        StepSpec { quant: cfg.quant, fault_options: cfg.fault_options, fault: cfg.fault, alpha_l: cfg.alpha_l, faulty_bn: FaultyBn::Batch };
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut log = Vec::new();

    for epoch in 0..cfg.epochs {
        let lr_w = cosine_lr(cfg.lr_w, epoch, cfg.epochs);
        let es = root.derive(epoch as u64);

        // Phase 1: shared weights on D_t.
        let mut order = es.derive_str("shuffle-t");
        let mut aug = es.derive_str("augment");
        let mut arch_rng = es.derive_str("arch-t");
        let mut loss_sum = 0.0;
        let batches = d_t.batches(cfg.batch_size, Some(&mut order));
        for (step, idx) in batches.iter().enumerate() {
            let sample = controller.sample_rollout(&mut arch_rng, Sampling::Stochastic)?;
            let cand = assemble(net, &sample.rollout)?;
            let (x, y) = d_t.batch(idx, cfg.augment, &mut aug)?;
            let stats = match ftt_step(&cand, store, &mut sgd, x, &y, lr_w, &step_spec, &es.derive_str("w").derive(step as u64)) {
                Ok(s) => s,
                Err(Error::NonFinite { context }) => {
                    if let Some(dir) = checkpoint_dir {
                        divergence_checkpoint(dir, epoch, store, controller)?;
                    }
                    return Err(Error::Divergence { epoch, reason: context });
                }
                Err(e) => return Err(e),
            };
            loss_sum += stats.loss;
            log.push(LogRecord {
                epoch,
                phase: "weights".into(),
                step,
                seed,
                rollout: sample.rollout.to_string(),
                loss: Some(stats.loss),
                ce_c: Some(stats.ce_c),
                ce_f: stats.ce_f,
                acc_c: stats.acc_c,
                acc_f: stats.acc_f,
                reward: None,
                baseline: None,
                entropy: None,
            });
        }

        // Phase 2: controller on D_v.
        let mut vorder = es.derive_str("shuffle-v");
        let vbatches = d_v.batches(cfg.batch_size, Some(&mut vorder));
        let steps = cfg.controller_steps.unwrap_or(vbatches.len());
        let mut ctrl_rng = es.derive_str("arch-v");
        let mut no_aug = es.derive_str("no-augment");
        let (mut reward_sum, mut ent_sum) = (0.0, 0.0);
        for step in 0..steps {
            let idx = &vbatches[step % vbatches.len()];
            let sample = controller.sample_rollout(&mut ctrl_rng, Sampling::Stochastic)?;
            let cand = assemble(net, &sample.rollout)?;
            let (x, y) = d_v.batch(idx, Augment::default(), &mut no_aug)?;
            let fs = es.derive_str("r").derive(step as u64);
            let run = |fault: FaultModelSpec,
                       stream: &RngStream,
                       fixed: Option<&HashMap<ParamId, BnStats>>|
             -> Result<(f64, HashMap<ParamId, BnStats>)> {
                let pass = PassConfig { mode: Mode::Eval, fault, bn_batch_stats: true, update_bn: false };
                let mut ctx = ForwardCtx::new(store, cfg.quant, cfg.fault_options, pass, stream);
                if let Some(f) = fixed {
                    ctx.fix_bn_stats(f.clone());
                }
                let xv = ctx.input(x.clone())?;
                let logits = cand.forward(&mut ctx, xv)?;
                Ok((accuracy(ctx.tape.value(logits), &y), ctx.take_bn_observed()))
            };
            let (acc_c, clean_stats) = run(FaultModelSpec::None, &fs, None)?;
            let fixed = (cfg.reward_bn == FaultyBn::Clean).then_some(&clean_stats);
            let acc_f = if cfg.fault.is_zero() {
                acc_c
            } else {
                let mut s = 0.0;
                for d in 0..cfg.reward_draws {
                    s += run(cfg.fault, &fs.derive(d as u64), fixed)?.0;
                }
                s / cfg.reward_draws as f64
            };
            let reward = ft_reward(acc_c, acc_f, cfg.alpha_r)?;
            let out = controller.reinforce_step(&sample.rollout, reward)?;
            reward_sum += reward;
            ent_sum += out.entropy;
            log.push(LogRecord {
                epoch,
                phase: "controller".into(),
                step,
                seed,
                rollout: sample.rollout.to_string(),
                loss: None,
                ce_c: None,
                ce_f: None,
                acc_c,
                acc_f: Some(acc_f),
                reward: Some(reward),
                baseline: Some(out.baseline),
                entropy: Some(out.entropy),
            });
        }

        let argmax = controller.sample_rollout(&mut es.derive_str("argmax"), Sampling::Argmax)?.rollout;
        let rec = EpochRecord {
            epoch,
            lr_w,
            mean_loss: loss_sum / batches.len().max(1) as f64,
            mean_reward: reward_sum / steps.max(1) as f64,
            baseline: controller.baseline,
            mean_entropy: ent_sum / steps.max(1) as f64,
            argmax,
        };
        log::info!(
            "search epoch {epoch}: loss {:.4} reward {:.4} entropy {:.3} argmax {}",
            rec.mean_loss,
            rec.mean_reward,
            rec.mean_entropy,
            rec.argmax
        );
        history.push(rec);
    }

    let best = controller.sample_rollout(&mut root.derive_str("final"), Sampling::Argmax)?.rollout;
    Ok(SearchOutcome { best, history, log })
}
