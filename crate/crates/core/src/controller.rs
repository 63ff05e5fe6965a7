//! RNN architecture sampler trained with REINFORCE.
//!
//! For each cell type and each intermediate node the controller emits four
//! tokens: two input indices, then two primitives. A single tanh recurrent
//! layer carries state across all tokens; input and primitive decisions have
//! separate softmax heads. Head weights start at zero, so the initial policy
//! is exactly uniform.

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::params::{ParamRole, ParamStore};
use crate::nn::rollout::{CellTopology, NodeChoice, Rollout, SearchSpace};
use crate::rng::RngStream;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    pub hidden: usize,
    pub lr: f64,
    pub baseline_momentum: f64,
    pub entropy_coef: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Recurrent weights are uniform in `±init_range`.
    pub init_range: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            hidden: 100,
            lr: 1e-3,
            baseline_momentum: 0.99,
            entropy_coef: 0.01,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            init_range: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Input,
    Op,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sampling {
    Stochastic,
    /// Temperature → 0: always take the most probable token.
    Argmax,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub rollout: Rollout,
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub entropy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub applied: bool,
    pub reward: f64,
    pub advantage: f64,
    pub baseline: f64,
    pub log_prob: f64,
    pub entropy: f64,
}

/// Probabilities of one decision along a decoded path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTable {
    pub cell: String,
    pub node: usize,
    pub decision: Decision,
    pub slot: usize,
    pub labels: Vec<String>,
    pub probs: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Controller {
    pub config: ControllerConfig,
    pub space: SearchSpace,
    pub store: ParamStore,
    pub baseline: Option<f64>,
    embed: ParamId,
    w_x: ParamId,
    w_h: ParamId,
    bias: ParamId,
    head_input: ParamId,
    head_op: ParamId,
    adam: Adam,
}

/// Decision schedule: `(is reduction cell, node, decision, slot)`.
fn schedule(b: usize) -> Vec<(bool, usize, Decision, usize)> {
    let mut out = Vec::new();
    for reduce in [false, true] {
        for node in 2..b {
            out.push((reduce, node, Decision::Input, 0));
            out.push((reduce, node, Decision::Input, 1));
            out.push((reduce, node, Decision::Op, 0));
            out.push((reduce, node, Decision::Op, 1));
        }
    }
    out
}

impl Controller {
    pub fn new(config: ControllerConfig, space: SearchSpace, seed: u64) -> Result<Self> {
        space.validate()?;
        let mut rng = RngStream::new(seed).derive_str("controller-init");
        let mut store = ParamStore::new();
        let h = config.hidden;
        let b = space.nodes;
        // Rows: start token, input tokens 0..b-1, primitive tokens.
        let vocab = 1 + (b - 1) + space.primitives.len();
        let r = config.init_range;
        let role = ParamRole::Controller;
        let embed = store.add("embed", Tensor::uniform(&[vocab, h], 1.0, &mut rng), role)?;
        let w_x = store.add("w_x", Tensor::uniform(&[h, h], r, &mut rng), role)?;
        let w_h = store.add("w_h", Tensor::uniform(&[h, h], r, &mut rng), role)?;
        let bias = store.add("bias", Tensor::zeros(&[h]), role)?;
        let head_input = store.add("head_input", Tensor::zeros(&[b - 1, h]), role)?;
        let head_op = store.add("head_op", Tensor::zeros(&[space.primitives.len(), h]), role)?;
        let adam = Adam {
            m: store.ids().map(|id| vec![0.0; store.value(id).len()]).collect(),
            v: store.ids().map(|id| vec![0.0; store.value(id).len()]).collect(),
            t: 0,
        };
        Ok(Self { config, space, store, baseline: None, embed, w_x, w_h, bias, head_input, head_op, adam })
    }

    pub fn tokens_per_rollout(&self) -> usize {
        4 * 2 * (self.space.nodes - 2)
    }

    fn embed_row(&self, decision: Decision, token: usize) -> usize {
        match decision {
            Decision::Input => 1 + token,
            Decision::Op => 1 + (self.space.nodes - 1) + token,
        }
    }

    /// Run the recurrent net over the decision schedule. `choose` picks each
    /// token from its probability vector. Returns the tape, the summed
    /// log-probability and entropy variables, and the tokens.
    fn unroll(
        &self,
        mut choose: impl FnMut(&[f64]) -> Result<usize>,
        mut tables: Option<&mut Vec<DecisionTable>>,
    ) -> Result<(Tape, Var, Var, Vec<usize>)> {
        let mut tape = Tape::new();
        let p = |tape: &mut Tape, id: ParamId| tape.param(id, self.store.value(id).clone());
        let embed = p(&mut tape, self.embed);
        let w_x = p(&mut tape, self.w_x);
        let w_h = p(&mut tape, self.w_h);
        let bias = p(&mut tape, self.bias);
        let head_input = p(&mut tape, self.head_input);
        let head_op = p(&mut tape, self.head_op);
        let mut h = tape.leaf(Tensor::zeros(&[1, self.config.hidden]));
        let mut prev_row = 0;
        let mut logps = Vec::new();
        let mut ents = Vec::new();
        let mut tokens = Vec::new();
        for (reduce, node, decision, slot) in schedule(self.space.nodes) {
            let e = tape.row(embed, prev_row)?;
            let a = tape.linear(e, w_x, Some(bias))?;
            let r = tape.linear(h, w_h, None)?;
            let s = tape.add(a, r)?;
            h = tape.tanh(s);
            let (head, width) = match decision {
                Decision::Input => (head_input, node),
                Decision::Op => (head_op, self.space.primitives.len()),
            };
            let full = tape.linear(h, head, None)?;
            let logits = if width < tape.value(full).len() { tape.narrow(full, width)? } else { full };
            let probs = crate::autodiff::softmax(tape.value(logits).data());
            if let Some(t) = tables.as_deref_mut() {
                let labels = match decision {
                    Decision::Input => (0..width).map(|j| j.to_string()).collect(),
                    Decision::Op => self.space.primitives.iter().map(|k| k.to_string()).collect(),
                };
                t.push(DecisionTable {
                    cell: if reduce { "reduce" } else { "normal" }.into(),
                    node,
                    decision,
                    slot,
                    labels,
                    probs: probs.clone(),
                });
            }
            let tok = choose(&probs)?;
            if tok >= width {
                return Err(Error::InvalidRollout(format!("token {tok} out of range for {width} choices")));
            }
            let lp = tape.log_softmax(logits);
            logps.push((tape.index(lp, tok)?, 1.0));
            ents.push((tape.entropy(logits), 1.0));
            tokens.push(tok);
            prev_row = self.embed_row(decision, tok);
        }
        let log_prob = tape.weighted_sum(&logps)?;
        let entropy = tape.weighted_sum(&ents)?;
        Ok((tape, log_prob, entropy, tokens))
    }

    fn decode(&self, tokens: &[usize]) -> Rollout {
        let nodes = self.space.nodes - 2;
        let cell = |base: usize| CellTopology {
            nodes: (0..nodes)
                .map(|n| {
                    let t = &tokens[base + 4 * n..base + 4 * n + 4];
                    NodeChoice { inputs: [t[0], t[1]], ops: [self.space.primitives[t[2]], self.space.primitives[t[3]]] }
                })
                .collect(),
        };
        Rollout { normal: cell(0), reduce: cell(4 * nodes) }
    }

    pub fn encode(&self, rollout: &Rollout) -> Result<Vec<usize>> {
        if !self.space.contains(rollout) {
            return Err(Error::InvalidRollout(format!("{rollout} is outside the controller's search space")));
        }
        let mut out = Vec::with_capacity(self.tokens_per_rollout());
        for cell in rollout.cells() {
            for n in &cell.nodes {
                out.extend(n.inputs);
                for op in n.ops {
                    out.push(self.space.primitives.iter().position(|&k| k == op).unwrap_or(0));
                }
            }
        }
        Ok(out)
    }

    pub fn sample_rollout(&self, rng: &mut RngStream, mode: Sampling) -> Result<Sample> {
        let (tape, lp, ent, tokens) = self.unroll(
            |probs| {
                Ok(match mode {
                    Sampling::Argmax => argmax(probs),
                    Sampling::Stochastic => categorical(probs, rng.uniform()),
                })
            },
            None,
        )?;
        Ok(Sample { rollout: self.decode(&tokens), log_prob: tape.scalar(lp), entropy: tape.scalar(ent), tokens })
    }

    /// Total log-probability and entropy of a given rollout.
    pub fn evaluate(&self, rollout: &Rollout) -> Result<(f64, f64)> {
        let tokens = self.encode(rollout)?;
        let mut it = tokens.into_iter();
        let (tape, lp, ent, _) = self.unroll(|_| it.next().ok_or_else(|| Error::InvalidRollout("short token list".into())), None)?;
        Ok((tape.scalar(lp), tape.scalar(ent)))
    }

    /// Per-decision softmax tables along the argmax path.
    pub fn dump_tables(&self) -> Result<Vec<DecisionTable>> {
        let mut tables = Vec::new();
        self.unroll(|p| Ok(argmax(p)), Some(&mut tables))?;
        Ok(tables)
    }

    /// One REINFORCE step: ascend `(R - b)·log π(a) + c·H`, then move the
    /// baseline toward `R`. Non-finite rewards are skipped.
    pub fn reinforce_step(&mut self, rollout: &Rollout, reward: f64) -> Result<StepOutcome> {
        let baseline = match self.baseline {
            Some(b) => b,
            None if reward.is_finite() => reward,
            None => 0.0,
        };
        if !reward.is_finite() {
            log::warn!("skipping controller step: non-finite reward {reward}");
            return Ok(StepOutcome { applied: false, reward, advantage: 0.0, baseline, log_prob: f64::NAN, entropy: f64::NAN });
        }
        let advantage = reward - baseline;
        let tokens = self.encode(rollout)?;
        let mut it = tokens.into_iter();
        let (mut tape, lp, ent, _) = self.unroll(|_| it.next().ok_or_else(|| Error::InvalidRollout("short token list".into())), None)?;
        let loss = tape.weighted_sum(&[(lp, -advantage), (ent, -self.config.entropy_coef)])?;
        let grads = tape.backward(loss)?.params();
        self.adam_step(&grads);
        let m = self.config.baseline_momentum;
        self.baseline = Some(m * baseline + (1.0 - m) * reward);
        Ok(StepOutcome {
            applied: true,
            reward,
            advantage,
            baseline: self.baseline.unwrap_or(baseline),
            log_prob: tape.scalar(lp),
            entropy: tape.scalar(ent),
        })
    }

    fn adam_step(&mut self, grads: &std::collections::BTreeMap<ParamId, Tensor>) {
        let c = &self.config;
        self.adam.t += 1;
        let t = self.adam.t as i32;
        let bc1 = 1.0 - c.adam_beta1.powi(t);
        let bc2 = 1.0 - c.adam_beta2.powi(t);
        for (id, g) in grads {
            let (m, v) = (&mut self.adam.m[id.0], &mut self.adam.v[id.0]);
            let w = self.store.value_mut(*id).data_mut();
            for i in 0..w.len() {
                let gi = g.data()[i];
                m[i] = c.adam_beta1 * m[i] + (1.0 - c.adam_beta1) * gi;
                v[i] = c.adam_beta2 * v[i] + (1.0 - c.adam_beta2) * gi * gi;
                w[i] -= c.lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + c.adam_eps);
            }
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.store.ids().collect()
    }
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

fn categorical(p: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::PrimitiveKind;

    fn controller(b: usize, prims: Vec<PrimitiveKind>) -> Controller {
        Controller::new(ControllerConfig::default(), SearchSpace { nodes: b, primitives: prims }, 7).unwrap()
    }

    #[test]
    fn sixteen_tokens_per_cell_for_b6() {
        let c = controller(6, PrimitiveKind::ALL.to_vec());
        let mut rng = RngStream::new(1);
        let s = c.sample_rollout(&mut rng, Sampling::Stochastic).unwrap();
        assert_eq!(s.tokens.len(), 32);
        assert_eq!(s.rollout.normal.nodes.len(), 4);
        assert_eq!(c.tokens_per_rollout() / 2, 16);
        s.rollout.validate(6).unwrap();
    }

    #[test]
    fn uniform_initial_policy() {
        let c = controller(4, PrimitiveKind::ALL.to_vec());
        let s = c.sample_rollout(&mut RngStream::new(0), Sampling::Stochastic).unwrap();
        // Node 2 has 2 inputs, node 3 has 3; 11 primitives.
        let per_cell = -(2f64.ln() * 2.0 + 3f64.ln() * 2.0 + 11f64.ln() * 4.0);
        assert!((s.log_prob - 2.0 * per_cell).abs() < 1e-12);
        assert!((s.entropy + 2.0 * per_cell).abs() < 1e-12);
    }

    #[test]
    fn log_prob_matches_reevaluation() {
        let c = controller(5, PrimitiveKind::ALL.to_vec());
        let s = c.sample_rollout(&mut RngStream::new(3), Sampling::Stochastic).unwrap();
        let (lp, ent) = c.evaluate(&s.rollout).unwrap();
        assert!((lp - s.log_prob).abs() <= 1e-9 * lp.abs());
        assert!((ent - s.entropy).abs() <= 1e-9 * ent.abs());
    }

    #[test]
    fn zero_advantage_and_zero_entropy_coef_leave_params() {
        let mut cfg = ControllerConfig::default();
        cfg.entropy_coef = 0.0;
        let mut c = Controller::new(cfg, SearchSpace { nodes: 4, primitives: PrimitiveKind::ALL.to_vec() }, 1).unwrap();
        c.baseline = Some(0.5);
        let before = c.store.clone();
        let s = c.sample_rollout(&mut RngStream::new(2), Sampling::Stochastic).unwrap();
        let out = c.reinforce_step(&s.rollout, 0.5).unwrap();
        assert_eq!(out.advantage, 0.0);
        assert_eq!(c.store, before);
    }

    #[test]
    fn baseline_tracks_constant_reward() {
        let mut c = controller(3, vec![PrimitiveKind::None, PrimitiveKind::SkipConnect]);
        let mut rng = RngStream::new(4);
        c.baseline = Some(0.0);
        for _ in 0..2000 {
            let s = c.sample_rollout(&mut rng, Sampling::Stochastic).unwrap();
            c.reinforce_step(&s.rollout, 0.3).unwrap();
        }
        assert!((c.baseline.unwrap() - 0.3).abs() < 1e-3);
    }

    #[test]
    fn non_finite_reward_skipped() {
        let mut c = controller(3, vec![PrimitiveKind::None, PrimitiveKind::SkipConnect]);
        let before = c.store.clone();
        let s = c.sample_rollout(&mut RngStream::new(5), Sampling::Stochastic).unwrap();
        assert!(!c.reinforce_step(&s.rollout, f64::NAN).unwrap().applied);
        assert_eq!(c.store, before);
    }

    #[test]
    fn argmax_is_deterministic() {
        let c = controller(5, PrimitiveKind::ALL.to_vec());
        let a = c.sample_rollout(&mut RngStream::new(1), Sampling::Argmax).unwrap();
        let b = c.sample_rollout(&mut RngStream::new(2), Sampling::Argmax).unwrap();
        assert_eq!(a.rollout, b.rollout);
    }
}
