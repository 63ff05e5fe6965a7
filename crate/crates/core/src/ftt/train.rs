use serde::{Deserialize, Serialize};

use super::optim::{cosine_lr, Sgd};
use super::{check_coef, ftt_loss_var, FaultyBn};
use crate::error::{Error, Result};
use crate::fault::{FaultModelSpec, FaultTarget};
use crate::harness::dataset::{Augment, Dataset, DatasetSplits};
use crate::nn::{apply_bn_updates, ArchSpec, Architecture, FaultOptions, ForwardCtx, Mode, Model, ParamStore, PassConfig, QuantConfig};
use crate::rng::RngStream;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Initial learning rate of the cosine schedule.
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub alpha_l: f64,
    pub fault: FaultModelSpec,
    pub faulty_bn: FaultyBn,
    pub quant: QuantConfig,
    pub fault_options: FaultOptions,
    pub augment: Augment,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            alpha_l: 0.5,
            fault: FaultModelSpec::None,
            faulty_bn: FaultyBn::Batch,
            quant: QuantConfig::default(),
            fault_options: FaultOptions::default(),
            augment: Augment::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_coef("alpha_l", self.alpha_l)?;
        self.fault.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.momentum >= 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::Config("lr, momentum and weight_decay must be non-negative".into()));
        }
        Ok(())
    }

    pub fn step_spec(&self) -> StepSpec {
        StepSpec {
            quant: self.quant,
            fault_options: self.fault_options,
            fault: self.fault,
            alpha_l: self.alpha_l,
            faulty_bn: self.faulty_bn,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub batch_size: usize,
    pub quant: QuantConfig,
    pub fault_options: FaultOptions,
    /// Normalize with batch statistics instead of running buffers.
    pub bn_batch_stats: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { batch_size: 100, quant: QuantConfig::default(), fault_options: FaultOptions::default(), bn_batch_stats: false }
    }
}

/// Per-step settings shared by fixed-network training and search phase 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepSpec {
    pub quant: QuantConfig,
    pub fault_options: FaultOptions,
    pub fault: FaultModelSpec,
    pub alpha_l: f64,
    pub faulty_bn: FaultyBn,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub loss: f64,
    pub ce_c: f64,
    pub ce_f: Option<f64>,
    pub acc_c: f64,
    pub acc_f: Option<f64>,
}

/// Fraction of rows of `logits` whose first maximal entry is the label.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    let k = logits.shape()[1];
    let hits = logits
        .data()
        .chunks(k)
        .zip(labels)
        .filter(|(row, &y)| {
            let mut best = 0;
            for j in 1..k {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best == y
        })
        .count();
    hits as f64 / labels.len().max(1) as f64
}

/// One SGD step on the FTT loss. The clean and faulty passes share the batch,
/// the parameters and the tape; only the clean pass updates BN buffers.
/// The faulty pass is skipped when it cannot change the loss.
#[allow(clippy::too_many_arguments)]
pub fn ftt_step(
    arch: &dyn Architecture,
    store: &mut ParamStore,
    sgd: &mut Sgd,
    x: Tensor,
    labels: &[usize],
    lr: f64,
    spec: &StepSpec,
    stream: &RngStream,
) -> Result<StepStats> {
    let faulty = spec.alpha_l > 0.0 && !spec.fault.is_zero();
    let (stats, grads, bn) = {
        let mut ctx = ForwardCtx::new(store, spec.quant, spec.fault_options, PassConfig::train_clean(), stream);
        let xv = ctx.input(x.clone())?;
        let clean = arch.forward(&mut ctx, xv)?;
        let f = if faulty {
            let calib = ctx.take_bn_observed();
            if spec.faulty_bn == FaultyBn::Clean {
                ctx.fix_bn_stats(calib);
            }
            ctx.begin_pass(PassConfig { mode: Mode::Train, fault: spec.fault, bn_batch_stats: true, update_bn: false });
            let xv = ctx.input(x)?;
            Some(arch.forward(&mut ctx, xv)?)
        } else {
            None
        };
        let alpha = if faulty { spec.alpha_l } else { 0.0 };
        let loss = ftt_loss_var(&mut ctx.tape, clean, f, labels, alpha)?;
        let ce_c = ctx.tape.cross_entropy(clean, labels)?;
        let ce_f = f.map(|f| ctx.tape.cross_entropy(f, labels)).transpose()?;
        let stats = StepStats {
            loss: ctx.tape.scalar(loss),
            ce_c: ctx.tape.scalar(ce_c),
            ce_f: ce_f.map(|v| ctx.tape.scalar(v)),
            acc_c: accuracy(ctx.tape.value(clean), labels),
            acc_f: f.map(|f| accuracy(ctx.tape.value(f), labels)),
        };
        if !stats.loss.is_finite() {
            return Err(Error::NonFinite { context: "training loss".into() });
        }
        let grads = ctx.tape.backward(loss)?.params();
        (stats, grads, ctx.take_bn_updates())
    };
    apply_bn_updates(store, bn);
    sgd.step(store, &grads, lr)?;
    Ok(stats)
}

/// Top-1 accuracy over `data`. Weight faults are drawn once from the
/// `device` sub-stream and reused for every batch; feature faults are drawn
/// afresh per batch.
pub fn evaluate(
    arch: &dyn Architecture,
    store: &ParamStore,
    data: &Dataset,
    fault: &FaultModelSpec,
    cfg: &EvalConfig,
    stream: &RngStream,
) -> Result<f64> {
    fault.validate()?;
    let pass = PassConfig { mode: Mode::Eval, fault: *fault, bn_batch_stats: cfg.bn_batch_stats, update_bn: false };
    let device = stream.derive_str("device");
    let mut unused = stream.derive_str("no-augment");
    let mut hits = 0.0;
    for (b, idx) in data.batches(cfg.batch_size, None).iter().enumerate() {
        let (x, y) = data.batch(idx, Augment::default(), &mut unused)?;
        let mut ctx = ForwardCtx::new(store, cfg.quant, cfg.fault_options, pass.clone(), &stream.derive(b as u64));
        ctx.set_weight_stream(device.clone());
        let xv = ctx.input(x)?;
        let logits = arch.forward(&mut ctx, xv)?;
        hits += accuracy(ctx.tape.value(logits), &y) * y.len() as f64;
    }
    Ok(hits / data.len().max(1) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub acc_c: f64,
    pub acc_f: Option<f64>,
}

/// Train `model` in place with the FTT loss and a cosine schedule.
pub fn ftt_train(model: &mut Model, train: &Dataset, cfg: &TrainConfig, seed: u64) -> Result<Vec<EpochStats>> {
    cfg.validate()?;
    let root = RngStream::new(seed).derive_str("ftt-train");
    let mut sgd = Sgd::new(cfg.momentum, cfg.weight_decay);
    let spec = cfg.step_spec();
    let Model { arch, store, .. } = model;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(cfg.lr, epoch, cfg.epochs);
        let es = root.derive(epoch as u64);
        let mut order = es.derive_str("shuffle");
        let mut aug = es.derive_str("augment");
        let (mut loss, mut acc_c, mut acc_f, mut n) = (0.0, 0.0, 0.0, 0usize);
        for (step, idx) in train.batches(cfg.batch_size, Some(&mut order)).iter().enumerate() {
            let (x, y) = train.batch(idx, cfg.augment, &mut aug)?;
            let s = ftt_step(&*arch, store, &mut sgd, x, &y, lr, &spec, &es.derive(step as u64)).map_err(|e| match e {
                Error::NonFinite { context } => Error::Divergence { epoch, reason: context },
                e => e,
            })?;
            loss += s.loss;
            acc_c += s.acc_c;
            acc_f += s.acc_f.unwrap_or(s.acc_c);
            n += 1;
        }
        let n = n.max(1) as f64;
        let faulty = cfg.alpha_l > 0.0 && !cfg.fault.is_zero();
        let stats = EpochStats { epoch, lr, loss: loss / n, acc_c: acc_c / n, acc_f: faulty.then_some(acc_f / n) };
        log::info!("epoch {epoch}: lr {lr:.4} loss {:.4} acc_c {:.3}", stats.loss, stats.acc_c);
        history.push(stats);
    }
    Ok(history)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateTrial {
    pub rate: f64,
    pub clean_acc: f64,
    pub faulty_acc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateSelection {
    /// Largest candidate whose FTT-trained model keeps clean accuracy above
    /// the threshold.
    pub chosen: Option<f64>,
    pub trials: Vec<RateTrial>,
    /// Model trained at the chosen rate.
    pub model: Option<Model>,
}

/// Try the candidate rates from largest to smallest, FTT-training a fresh
/// model at each, and stop at the first whose clean test accuracy exceeds
/// `threshold`.
pub fn select_rate(
    spec: &ArchSpec,
    data: &DatasetSplits,
    train: &TrainConfig,
    eval: &EvalConfig,
    candidates: &[f64],
    threshold: f64,
    seed: u64,
) -> Result<RateSelection> {
    if train.fault.target() == FaultTarget::None {
        return Err(Error::Config("rate selection needs a fault model".into()));
    }
    let mut rates = candidates.to_vec();
    rates.sort_by(|a, b| b.total_cmp(a));
    let [c, _, _] = data.train.image_shape();
    let mut trials = Vec::new();
    for rate in rates {
        let cfg = TrainConfig { fault: train.fault.with_rate(rate), ..train.clone() };
        let mut model = Model::build(spec, c, data.train.classes, seed)?;
        ftt_train(&mut model, &data.train, &cfg, seed)?;
        let es = RngStream::new(seed).derive_str("rate-eval");
        let clean_acc = evaluate(&model.arch, &model.store, &data.test, &FaultModelSpec::None, eval, &es)?;
        let faulty_acc = evaluate(&model.arch, &model.store, &data.test, &cfg.fault, eval, &es)?;
        log::info!("rate {rate:e}: clean {clean_acc:.3} faulty {faulty_acc:.3}");
        trials.push(RateTrial { rate, clean_acc, faulty_acc });
        if clean_acc > threshold {
            return Ok(RateSelection { chosen: Some(rate), trials, model: Some(model) });
        }
    }
    Ok(RateSelection { chosen: None, trials, model: None })
}
