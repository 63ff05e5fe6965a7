//! Forward execution context: owns the tape and applies quantization and
//! fault injection at every weight load and every feature-producing op.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::autodiff::{BnStats, ParamId, Tape, Var};
use crate::error::{Error, Result};
use crate::fault::{self, FaultMask, FaultModelSpec, FaultTarget, MaskPayload};
use crate::kernels::ConvGeom;
use crate::nn::params::{BnParams, LinearParams, ParamStore};
use crate::quant::{self, QuantSpec, Scheme};
use crate::rng::RngStream;
use crate::tensor::Tensor;

pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuantConfig {
    pub enabled: bool,
    pub bits: u32,
    pub weight_scheme: Scheme,
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self { enabled: true, bits: 8, weight_scheme: Scheme::CmosComplement }
    }
}

impl QuantConfig {
    pub fn disabled() -> Self {
        Self { enabled: false, ..Self::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FaultOptions {
    /// Inject MiBB into the classifier, with `M_l` equal to its fan-in.
    pub mibb_on_linear: bool,
    /// Stuck weights receive zero gradient instead of passing it through.
    pub mask_stuck_gradients: bool,
}

impl Default for FaultOptions {
    fn default() -> Self {
        Self { mibb_on_linear: true, mask_stuck_gradients: false }
    }
}

/// How one forward pass treats batch norm and faults.
#[derive(Clone, Debug, PartialEq)]
pub struct PassConfig {
    pub mode: Mode,
    pub fault: FaultModelSpec,
    /// Use batch statistics even in eval mode (shared-weight evaluation).
    pub bn_batch_stats: bool,
    /// Fold this pass's batch statistics into the running buffers.
    pub update_bn: bool,
}

impl PassConfig {
    pub fn train_clean() -> Self {
        Self { mode: Mode::Train, fault: FaultModelSpec::None, bn_batch_stats: true, update_bn: true }
    }

    pub fn eval(fault: FaultModelSpec) -> Self {
        Self { mode: Mode::Eval, fault, bn_batch_stats: false, update_bn: false }
    }
}

/// Counters collected while executing a pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    pub macs: u64,
    pub elementwise: u64,
    pub pool: u64,
}

impl OpCounts {
    pub fn flops(&self) -> u64 {
        self.macs + self.elementwise + self.pool
    }
}

pub struct ForwardCtx<'a> {
    pub tape: Tape,
    store: &'a ParamStore,
    quant: QuantConfig,
    opts: FaultOptions,
    pass: PassConfig,
    feature_stream: RngStream,
    weight_stream: RngStream,
    choice_stream: RngStream,
    site: u64,
    layer: usize,
    weights: HashMap<ParamId, Var>,
    bn_updates: Vec<(BnParams, BnStats)>,
    touched: BTreeSet<ParamId>,
    counts: OpCounts,
    count_ops: bool,
    masks: Vec<(String, FaultMask)>,
    record_masks: bool,
    bn_observed: HashMap<ParamId, BnStats>,
    bn_fixed: HashMap<ParamId, BnStats>,
}

impl<'a> ForwardCtx<'a> {
    /// `stream` seeds three derived streams: feature faults, weight faults and
    /// architecture choices (mixed blocks).
    pub fn new(store: &'a ParamStore, quant: QuantConfig, opts: FaultOptions, pass: PassConfig, stream: &RngStream) -> Self {
        Self {
            tape: Tape::new(),
            store,
            quant,
            opts,
            pass,
            feature_stream: stream.derive_str("feature-fault"),
            weight_stream: stream.derive_str("weight-fault"),
            choice_stream: stream.derive_str("choice"),
            site: 0,
            layer: 0,
            weights: HashMap::new(),
            bn_updates: Vec::new(),
            touched: BTreeSet::new(),
            counts: OpCounts::default(),
            count_ops: true,
            masks: Vec::new(),
            record_masks: false,
            bn_observed: HashMap::new(),
            bn_fixed: HashMap::new(),
        }
    }

    /// Start another pass on the same tape (the faulty half of an FTT step).
    /// Weight loads are redone so the new fault setting applies.
    pub fn begin_pass(&mut self, pass: PassConfig) {
        self.pass = pass;
        self.weights.clear();
        self.site = 0;
        self.layer = 0;
        self.count_ops = false;
    }

    /// Override the weight-fault stream, e.g. to freeze one device instance
    /// across an evaluation.
    pub fn set_weight_stream(&mut self, stream: RngStream) {
        self.weight_stream = stream;
    }

    pub fn set_feature_stream(&mut self, stream: RngStream) {
        self.feature_stream = stream;
    }

    /// Keep every sampled mask for replay or inspection.
    pub fn record_masks(&mut self, on: bool) {
        self.record_masks = on;
    }

    pub fn masks(&self) -> &[(String, FaultMask)] {
        &self.masks
    }

    pub fn mode(&self) -> Mode {
        self.pass.mode
    }

    pub fn fault(&self) -> &FaultModelSpec {
        &self.pass.fault
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn counts(&self) -> OpCounts {
        self.counts
    }

    pub fn touched(&self) -> &BTreeSet<ParamId> {
        &self.touched
    }

    pub fn choice_stream(&mut self) -> &mut RngStream {
        &mut self.choice_stream
    }

    /// Batch-norm statistics to fold into the store after the step.
    pub fn take_bn_updates(&mut self) -> Vec<(BnParams, BnStats)> {
        std::mem::take(&mut self.bn_updates)
    }

    /// Batch statistics seen by every batch-statistics BN so far, keyed by
    /// the layer's `gamma`.
    pub fn take_bn_observed(&mut self) -> HashMap<ParamId, BnStats> {
        std::mem::take(&mut self.bn_observed)
    }

    /// Normalize with these statistics, as constants, wherever a BN layer
    /// would otherwise use batch statistics. Lets a faulty pass reuse the
    /// clean pass's calibration instead of renormalizing the faults away.
    pub fn fix_bn_stats(&mut self, stats: HashMap<ParamId, BnStats>) {
        self.bn_fixed = stats;
    }

    fn count(&mut self, f: impl FnOnce(&mut OpCounts)) {
        if self.count_ops {
            f(&mut self.counts);
        }
    }

    fn check(&self, v: Var, what: &str) -> Result<()> {
        if self.tape.value(v).all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite { context: format!("layer {} ({what})", self.layer) })
        }
    }

    /// Network input, quantized like any other feature map.
    pub fn input(&mut self, x: Tensor) -> Result<Var> {
        let v = self.tape.leaf(x);
        self.requant(v)
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Var {
        self.tape.leaf(Tensor::zeros(shape))
    }

    /// Unquantized parameter (batch-norm affine terms, biases).
    pub fn param(&mut self, id: ParamId) -> Var {
        self.touched.insert(id);
        self.tape.param(id, self.store.value(id).clone())
    }

    /// Weight as seen by the datapath: quantized, then faulted when the pass
    /// carries a weight fault model. Gradients pass straight through.
    pub fn weight(&mut self, id: ParamId) -> Result<Var> {
        if let Some(&v) = self.weights.get(&id) {
            return Ok(v);
        }
        self.touched.insert(id);
        let raw = self.store.value(id).clone();
        let src = self.tape.param(id, raw.clone());
        let bits = self.quant.bits;
        let fault = self.pass.fault;
        let weight_fault = fault.target() == FaultTarget::Weights && !fault.is_zero();
        let (grid, spec) = match fault {
            FaultModelSpec::BitFlip { .. } if weight_fault => {
                let spec = QuantSpec::cmos(bits, quant::find_frac_len(&raw, bits, Scheme::CmosComplement)?)?;
                (quant::quantize(&raw, spec), Some(spec))
            }
            FaultModelSpec::AdsafMultibit { .. } if weight_fault => {
                let spec = QuantSpec::rram(bits, quant::find_frac_len(&raw, bits, Scheme::RramSymmetric)?)?;
                (quant::quantize(&raw, spec), Some(spec))
            }
            FaultModelSpec::Adsaf1bit { .. } if weight_fault => {
                let (q, spec) = fault::quantize_magnitude(&raw, bits)?;
                (q, Some(spec))
            }
            _ if self.quant.enabled => {
                let scheme = self.quant.weight_scheme;
                let spec = QuantSpec::new(bits, quant::find_frac_len(&raw, bits, scheme)?, scheme)?;
                (quant::quantize(&raw, spec), Some(spec))
            }
            _ => (raw, None),
        };
        let mut keep = None;
        let value = if weight_fault {
            let stream = self.weight_stream.derive(id.0 as u64);
            let mask = fault::sample_mask(&fault, grid.shape(), spec, None, &stream)?;
            if self.opts.mask_stuck_gradients {
                if let MaskPayload::StuckAt(sites) = &mask.payload {
                    let mut k = vec![true; grid.len()];
                    for &(i, _) in sites {
                        k[i] = false;
                    }
                    keep = Some(k);
                }
            }
            let out = fault::apply_mask(&grid, &mask, spec)?;
            if self.record_masks {
                self.masks.push((self.store.name(id).to_string(), mask));
            }
            out
        } else {
            grid
        };
        let v = self.tape.substitute(src, value, keep)?;
        self.weights.insert(id, v);
        Ok(v)
    }

    /// Quantize a feature map onto its own dynamic grid.
    pub fn requant(&mut self, v: Var) -> Result<Var> {
        if !self.quant.enabled {
            return Ok(v);
        }
        let t = self.tape.value(v);
        let spec = QuantSpec::cmos(self.quant.bits, quant::find_frac_len(t, self.quant.bits, Scheme::CmosComplement)?)?;
        let q = quant::quantize(t, spec);
        self.tape.substitute(v, q, None)
    }

    /// Pre-activation output of a MAC array with `fan` products per output:
    /// quantize, then add feature faults on the same grid and saturate.
    fn pre_activation(&mut self, f: Var, fan: usize) -> Result<Var> {
        let fault = self.pass.fault;
        let site = self.site;
        self.site += 1;
        let rate = match fault {
            FaultModelSpec::Mibb { p_m } if p_m > 0.0 => Some(fault::mibb_rate_for_macs(fan, p_m)),
            FaultModelSpec::BitBias { p } if p > 0.0 => None,
            _ => return self.requant(f),
        };
        let t = self.tape.value(f);
        let bits = self.quant.bits;
        let spec = QuantSpec::cmos(bits, quant::find_frac_len(t, bits, Scheme::CmosComplement)?)?;
        let base = if self.quant.enabled { quant::quantize(t, spec) } else { t.clone() };
        let stream = self.feature_stream.derive(site);
        let mask = fault::sample_mask(&fault, base.shape(), Some(spec), rate, &stream)?;
        let mut out = fault::apply_mask(&base, &mask, Some(spec))?;
        for v in out.data_mut() {
            *v = spec.clamp(*v);
        }
        if self.record_masks {
            self.masks.push((format!("site{site}"), mask));
        }
        self.tape.substitute(f, out, None)
    }

    pub fn conv(&mut self, x: Var, w: ParamId, geom: ConvGeom) -> Result<Var> {
        self.layer += 1;
        let wv = self.weight(w)?;
        let f = self.tape.conv2d(x, wv, geom)?;
        self.check(f, "conv")?;
        let ws = self.tape.value(wv).shape().to_vec();
        let fan = ws[1] * ws[2] * ws[3];
        let n = self.tape.value(f).len() as u64;
        let per_sample = n / self.tape.value(f).shape()[0] as u64;
        self.count(|c| c.macs += per_sample * fan as u64);
        self.pre_activation(f, fan)
    }

    pub fn linear(&mut self, x: Var, p: LinearParams) -> Result<Var> {
        self.layer += 1;
        let w = self.weight(p.weight)?;
        let b = self.param(p.bias);
        let f = self.tape.linear(x, w, Some(b))?;
        self.check(f, "linear")?;
        let [o, fan] = [self.tape.value(w).shape()[0], self.tape.value(w).shape()[1]];
        self.count(|c| c.macs += (o * fan) as u64);
        if self.opts.mibb_on_linear {
            self.pre_activation(f, fan)
        } else {
            self.requant(f)
        }
    }

    /// Batch norm in real arithmetic, output re-quantized.
    pub fn batch_norm(&mut self, x: Var, p: &BnParams) -> Result<Var> {
        let gamma = self.param(p.gamma);
        let beta = self.param(p.beta);
        let use_batch = self.pass.mode == Mode::Train || self.pass.bn_batch_stats;
        let (y, stats) = if let (true, Some(fixed)) = (use_batch, self.bn_fixed.get(&p.gamma)) {
            self.tape.batch_norm(x, gamma, beta, Some((&fixed.mean, &fixed.var)))?
        } else if use_batch {
            self.tape.batch_norm(x, gamma, beta, None)?
        } else {
            let mean = self.store.buffer(&p.mean_key()).ok_or_else(|| Error::precondition("missing BN running mean"))?;
            let var = self.store.buffer(&p.var_key()).ok_or_else(|| Error::precondition("missing BN running var"))?;
            self.tape.batch_norm(x, gamma, beta, Some((mean, var)))?
        };
        self.check(y, "batch norm")?;
        if let Some(s) = &stats {
            self.bn_observed.insert(p.gamma, s.clone());
        }
        if let (Some(s), true) = (stats, self.pass.update_bn && self.pass.mode == Mode::Train) {
            self.bn_updates.push((p.clone(), s));
        }
        self.requant(y)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.tape.relu(x)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.tape.add(a, b)?;
        let per_sample = (self.tape.value(v).len() / self.tape.value(v).shape()[0]) as u64;
        self.count(|c| c.elementwise += per_sample);
        self.requant(v)
    }

    pub fn avg_pool(&mut self, x: Var, kernel: usize, stride: usize, pad: usize) -> Result<Var> {
        let v = self.tape.avg_pool(x, kernel, stride, pad)?;
        self.count_pool(v, kernel);
        self.requant(v)
    }

    pub fn max_pool(&mut self, x: Var, kernel: usize, stride: usize, pad: usize) -> Result<Var> {
        let v = self.tape.max_pool(x, kernel, stride, pad)?;
        self.count_pool(v, kernel);
        Ok(v)
    }

    fn count_pool(&mut self, v: Var, kernel: usize) {
        let per_sample = (self.tape.value(v).len() / self.tape.value(v).shape()[0]) as u64;
        self.count(|c| c.pool += per_sample * (kernel * kernel) as u64);
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let v = self.tape.global_avg_pool(x)?;
        self.requant(v)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let v = self.tape.concat(parts)?;
        self.requant(v)
    }
}

/// Fold batch statistics into the running buffers (momentum 0.1, unbiased
/// variance is not used).
pub fn apply_bn_updates(store: &mut ParamStore, updates: Vec<(BnParams, BnStats)>) {
    for (p, s) in updates {
        let blend = |old: Option<&[f64]>, new: &[f64]| -> Vec<f64> {
            match old {
                Some(o) => o.iter().zip(new).map(|(a, b)| (1.0 - BN_MOMENTUM) * a + BN_MOMENTUM * b).collect(),
                None => new.to_vec(),
            }
        };
        let mean = blend(store.buffer(&p.mean_key()), &s.mean);
        let var = blend(store.buffer(&p.var_key()), &s.var);
        store.set_buffer(p.mean_key(), mean);
        store.set_buffer(p.var_key(), var);
    }
}
