//! Shared-weight super network over a cell search space.

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, Var};
use crate::error::{Error, Result};
use crate::nn::arch::Architecture;
use crate::nn::ctx::ForwardCtx;
use crate::nn::params::{LinearParams, ParamStore};
use crate::nn::primitive::{build_primitive, primitive_forward, ConvBn, PrimitiveParams};
use crate::nn::rollout::{CellTopology, Rollout, SearchSpace};
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelGrowth {
    /// Add this many channels at every reduction cell.
    Add(usize),
    /// Multiply the channel count at every reduction cell.
    Mul(usize),
}

impl ChannelGrowth {
    pub fn apply(self, c: usize) -> usize {
        match self {
            Self::Add(d) => c + d,
            Self::Mul(f) => c * f,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuperNetConfig {
    pub cells: usize,
    /// Reduction cell positions; defaults to `cells/3` and `2·cells/3`.
    pub reductions: Option<Vec<usize>>,
    pub space: SearchSpace,
    pub base_channels: usize,
    pub growth: ChannelGrowth,
}

impl Default for SuperNetConfig {
    fn default() -> Self {
        Self { cells: 8, reductions: None, space: SearchSpace::default(), base_channels: 20, growth: ChannelGrowth::Add(2) }
    }
}

impl SuperNetConfig {
    pub fn reduction_cells(&self) -> Vec<usize> {
        let mut r = match &self.reductions {
            Some(r) => r.clone(),
            None if self.cells >= 3 => vec![self.cells / 3, 2 * self.cells / 3],
            None => vec![self.cells.saturating_sub(1)],
        };
        r.sort_unstable();
        r.dedup();
        r
    }

    pub fn validate(&self) -> Result<()> {
        self.space.validate()?;
        if self.cells == 0 || self.base_channels == 0 {
            return Err(Error::Config("supernet needs at least one cell and one channel".into()));
        }
        if self.reduction_cells().iter().any(|&r| r >= self.cells) {
            return Err(Error::Config("reduction cell index out of range".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellParams {
    pub reduction: bool,
    pub channels: usize,
    pub pre0: ConvBn,
    pub pre0_stride: usize,
    pub pre1: ConvBn,
    /// `edges[i - 2][j][p]`: edge from node `j` into node `i` running the
    /// `p`-th primitive of the search space.
    edges: Vec<Vec<Vec<Option<PrimitiveParams>>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuperNet {
    pub config: SuperNetConfig,
    pub in_channels: usize,
    pub classes: usize,
    pub stem: ConvBn,
    pub cells: Vec<CellParams>,
    pub head: LinearParams,
}

impl SuperNet {
    /// Create every edge's parameters, or only those used by `only`.
    pub fn build(
        config: &SuperNetConfig,
        in_channels: usize,
        classes: usize,
        store: &mut ParamStore,
        rng: &mut RngStream,
        only: Option<&Rollout>,
    ) -> Result<Self> {
        config.validate()?;
        if let Some(r) = only {
            if !config.space.contains(r) {
                return Err(Error::InvalidRollout(format!("{r} is outside the search space")));
            }
        }
        let b = config.space.nodes;
        let reductions = config.reduction_cells();
        let stem = ConvBn::build(store, "stem", in_channels, config.base_channels, 3, rng)?;
        let (mut c_pp, mut c_p, mut c) = (config.base_channels, config.base_channels, config.base_channels);
        let mut prev_reduction = false;
        let mut cells = Vec::with_capacity(config.cells);
        for k in 0..config.cells {
            let reduction = reductions.contains(&k);
            if reduction {
                c = config.growth.apply(c);
            }
            let pre0 = ConvBn::build(store, &format!("cell{k}.pre0"), c_pp, c, 1, rng)?;
            let pre1 = ConvBn::build(store, &format!("cell{k}.pre1"), c_p, c, 1, rng)?;
            let topo = only.map(|r| if reduction { &r.reduce } else { &r.normal });
            let mut edges = Vec::with_capacity(b - 2);
            for i in 2..b {
                let mut per_input = Vec::with_capacity(i);
                for j in 0..i {
                    let mut per_op = Vec::with_capacity(config.space.primitives.len());
                    for &kind in &config.space.primitives {
                        let wanted = topo.is_none_or(|t| uses_edge(t, i, j, kind));
                        per_op.push(if wanted {
                            Some(build_primitive(store, &format!("cell{k}.n{i}.in{j}.{kind}"), kind, c, rng)?)
                        } else {
                            None
                        });
                    }
                    per_input.push(per_op);
                }
                edges.push(per_input);
            }
            cells.push(CellParams { reduction, channels: c, pre0, pre0_stride: if prev_reduction { 2 } else { 1 }, pre1, edges });
            c_pp = c_p;
            c_p = (b - 2) * c;
            prev_reduction = reduction;
        }
        let head = store.linear("head", classes, c_p, rng)?;
        Ok(Self { config: config.clone(), in_channels, classes, stem, cells, head })
    }

    fn edge<'c>(&self, cell: &'c CellParams, i: usize, j: usize, kind: crate::nn::primitive::PrimitiveKind) -> Result<&'c PrimitiveParams> {
        let p = self
            .config
            .space
            .primitives
            .iter()
            .position(|&k| k == kind)
            .ok_or_else(|| Error::InvalidRollout(format!("primitive {kind} is not in the search space")))?;
        cell.edges
            .get(i - 2)
            .and_then(|e| e.get(j))
            .and_then(|e| e[p].as_ref())
            .ok_or_else(|| Error::InvalidRollout(format!("edge {j}->{i} ({kind}) was not built")))
    }

    pub fn forward_rollout(&self, ctx: &mut ForwardCtx<'_>, rollout: &Rollout, x: Var) -> Result<Var> {
        let s = self.stem.forward(ctx, x, 1)?;
        let (mut s0, mut s1) = (s, s);
        for cell in &self.cells {
            let topo = if cell.reduction { &rollout.reduce } else { &rollout.normal };
            let h0 = cell.pre0.forward_relu(ctx, s0, cell.pre0_stride)?;
            let h1 = cell.pre1.forward_relu(ctx, s1, 1)?;
            let mut states = vec![h0, h1];
            for (n, choice) in topo.nodes.iter().enumerate() {
                let i = n + 2;
                let mut outs = [h0; 2];
                for slot in 0..2 {
                    let (j, kind) = (choice.inputs[slot], choice.ops[slot]);
                    let stride = if cell.reduction && j < 2 { 2 } else { 1 };
                    let params = self.edge(cell, i, j, kind)?;
                    outs[slot] = primitive_forward(ctx, kind, params, states[j], stride)?;
                }
                states.push(ctx.add(outs[0], outs[1])?);
            }
            let out = ctx.concat(&states[2..])?;
            s0 = s1;
            s1 = out;
        }
        let pooled = ctx.global_avg_pool(s1)?;
        ctx.linear(pooled, self.head)
    }

    /// Parameters a rollout reads.
    pub fn rollout_params(&self, rollout: &Rollout) -> Result<Vec<ParamId>> {
        rollout.validate(self.config.space.nodes)?;
        let mut ids = vec![self.stem.conv, self.stem.bn.gamma, self.stem.bn.beta];
        for cell in &self.cells {
            for pre in [&cell.pre0, &cell.pre1] {
                ids.extend([pre.conv, pre.bn.gamma, pre.bn.beta]);
            }
            let topo = if cell.reduction { &rollout.reduce } else { &rollout.normal };
            for (n, choice) in topo.nodes.iter().enumerate() {
                for slot in 0..2 {
                    ids.extend(self.edge(cell, n + 2, choice.inputs[slot], choice.ops[slot])?.ids());
                }
            }
        }
        ids.extend([self.head.weight, self.head.bias]);
        ids.sort();
        ids.dedup();
        Ok(ids)
    }

    pub fn all_params(&self) -> Vec<ParamId> {
        let mut ids = vec![self.stem.conv, self.stem.bn.gamma, self.stem.bn.beta, self.head.weight, self.head.bias];
        for cell in &self.cells {
            for pre in [&cell.pre0, &cell.pre1] {
                ids.extend([pre.conv, pre.bn.gamma, pre.bn.beta]);
            }
            for p in cell.edges.iter().flatten().flatten().flatten() {
                ids.extend(p.ids());
            }
        }
        ids.sort();
        ids
    }
}

fn uses_edge(t: &CellTopology, i: usize, j: usize, kind: crate::nn::primitive::PrimitiveKind) -> bool {
    t.nodes.get(i - 2).is_some_and(|n| (0..2).any(|s| n.inputs[s] == j && n.ops[s] == kind))
}

/// Candidate network: a rollout viewed through the supernet's parameters.
#[derive(Clone, Debug)]
pub struct CandidateNet<'a> {
    pub net: &'a SuperNet,
    pub rollout: Rollout,
    params: Vec<ParamId>,
}

/// Select the subgraph of `rollout`; no parameter is copied.
pub fn assemble<'a>(net: &'a SuperNet, rollout: &Rollout) -> Result<CandidateNet<'a>> {
    let params = net.rollout_params(rollout)?;
    Ok(CandidateNet { net, rollout: rollout.clone(), params })
}

impl Architecture for CandidateNet<'_> {
    fn forward(&self, ctx: &mut ForwardCtx<'_>, x: Var) -> Result<Var> {
        self.net.forward_rollout(ctx, &self.rollout, x)
    }

    fn param_ids(&self) -> Vec<ParamId> {
        self.params.clone()
    }

    fn label(&self) -> String {
        self.rollout.to_string()
    }
}

/// A network built for one rollout only (standalone training of a sampled
/// or discovered architecture).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedNet {
    pub net: SuperNet,
    pub rollout: Rollout,
}

impl DerivedNet {
    pub fn build(
        config: &SuperNetConfig,
        rollout: &Rollout,
        in_channels: usize,
        classes: usize,
        store: &mut ParamStore,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let net = SuperNet::build(config, in_channels, classes, store, rng, Some(rollout))?;
        Ok(Self { net, rollout: rollout.clone() })
    }
}

impl Architecture for DerivedNet {
    fn forward(&self, ctx: &mut ForwardCtx<'_>, x: Var) -> Result<Var> {
        self.net.forward_rollout(ctx, &self.rollout, x)
    }

    fn param_ids(&self) -> Vec<ParamId> {
        self.net.rollout_params(&self.rollout).unwrap_or_default()
    }

    fn label(&self) -> String {
        self.rollout.to_string()
    }
}
