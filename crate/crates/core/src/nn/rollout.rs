//! Cell topologies, rollouts and their canonical text form.
//!
//! Node numbering is 0-based: nodes 0 and 1 are the cell inputs and
//! intermediate nodes are `2..B`. The text form lists each intermediate node
//! as `in:op,in:op`, nodes separated by `;`, e.g.
//! `N(0:sep_conv_3x3,1:skip_connect;2:none,0:max_pool_3x3)R(...)`.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::primitive::PrimitiveKind;
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NodeChoice {
    pub inputs: [usize; 2],
    pub ops: [PrimitiveKind; 2],
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellTopology {
    pub nodes: Vec<NodeChoice>,
}

impl CellTopology {
    /// Number of nodes `B`, counting the two inputs.
    pub fn node_count(&self) -> usize {
        self.nodes.len() + 2
    }

    pub fn validate(&self, b: usize) -> Result<()> {
        if self.node_count() != b {
            return Err(Error::InvalidRollout(format!("expected {} decision blocks, got {}", b - 2, self.nodes.len())));
        }
        for (i, n) in self.nodes.iter().enumerate() {
            let node = i + 2;
            for &j in &n.inputs {
                if j >= node {
                    return Err(Error::InvalidRollout(format!("node {node} takes input from node {j}")));
                }
            }
        }
        Ok(())
    }

    /// Every cell edge uses `kind`; node `i` reads from `i-1` and `i-2`.
    pub fn uniform(b: usize, kind: PrimitiveKind) -> Self {
        let nodes = (2..b).map(|i| NodeChoice { inputs: [i - 2, i - 1], ops: [kind, kind] }).collect();
        Self { nodes }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct Rollout {
    pub normal: CellTopology,
    pub reduce: CellTopology,
}

impl Rollout {
    pub fn uniform(b: usize, kind: PrimitiveKind) -> Self {
        Self { normal: CellTopology::uniform(b, kind), reduce: CellTopology::uniform(b, kind) }
    }

    pub fn validate(&self, b: usize) -> Result<()> {
        self.normal.validate(b)?;
        self.reduce.validate(b)
    }

    pub fn cells(&self) -> [&CellTopology; 2] {
        [&self.normal, &self.reduce]
    }

    /// Primitive usage counts over both cell types.
    pub fn op_histogram(&self) -> Vec<(PrimitiveKind, usize)> {
        PrimitiveKind::ALL
            .iter()
            .map(|&k| {
                let n = self.cells().iter().flat_map(|c| &c.nodes).flat_map(|n| n.ops).filter(|&o| o == k).count();
                (k, n)
            })
            .filter(|&(_, n)| n > 0)
            .collect()
    }
}

fn write_cell(f: &mut fmt::Formatter<'_>, cell: &CellTopology) -> fmt::Result {
    for (i, n) in cell.nodes.iter().enumerate() {
        if i > 0 {
            f.write_str(";")?;
        }
        write!(f, "{}:{},{}:{}", n.inputs[0], n.ops[0], n.inputs[1], n.ops[1])?;
    }
    Ok(())
}

impl fmt::Display for Rollout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("N(")?;
        write_cell(f, &self.normal)?;
        f.write_str(")R(")?;
        write_cell(f, &self.reduce)?;
        f.write_str(")")
    }
}

fn parse_cell(s: &str) -> Result<CellTopology> {
    let bad = || Error::InvalidRollout(format!("malformed cell {s:?}"));
    let mut nodes = Vec::new();
    for block in s.split(';').filter(|b| !b.is_empty()) {
        let mut edges = block.split(',');
        let mut edge = || -> Result<(usize, PrimitiveKind)> {
            let e = edges.next().ok_or_else(bad)?;
            let (i, op) = e.split_once(':').ok_or_else(bad)?;
            Ok((i.trim().parse().map_err(|_| bad())?, op.trim().parse()?))
        };
        let (a, oa) = edge()?;
        let (b, ob) = edge()?;
        if edges.next().is_some() {
            return Err(bad());
        }
        nodes.push(NodeChoice { inputs: [a, b], ops: [oa, ob] });
    }
    let cell = CellTopology { nodes };
    cell.validate(cell.node_count())?;
    Ok(cell)
}

impl FromStr for Rollout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::InvalidRollout(format!("malformed rollout {s:?}"));
        let rest = s.strip_prefix("N(").ok_or_else(bad)?;
        let (normal, rest) = rest.split_once(")R(").ok_or_else(bad)?;
        let reduce = rest.strip_suffix(')').ok_or_else(bad)?;
        let r = Self { normal: parse_cell(normal)?, reduce: parse_cell(reduce)? };
        if r.normal.nodes.len() != r.reduce.nodes.len() {
            return Err(Error::InvalidRollout("normal and reduction cells differ in node count".into()));
        }
        Ok(r)
    }
}

impl From<Rollout> for String {
    fn from(r: Rollout) -> String {
        r.to_string()
    }
}

impl TryFrom<String> for Rollout {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Node count and candidate primitives of a search space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub nodes: usize,
    pub primitives: Vec<PrimitiveKind>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self { nodes: 6, primitives: PrimitiveKind::ALL.to_vec() }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        if self.nodes < 3 {
            return Err(Error::Config(format!("B = {} leaves no intermediate node", self.nodes)));
        }
        if self.primitives.is_empty() {
            return Err(Error::Config("empty primitive set".into()));
        }
        let mut seen = self.primitives.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.primitives.len() {
            return Err(Error::Config("duplicate primitive in search space".into()));
        }
        Ok(())
    }

    pub fn contains(&self, r: &Rollout) -> bool {
        r.validate(self.nodes).is_ok() && r.cells().iter().flat_map(|c| &c.nodes).flat_map(|n| n.ops).all(|o| self.primitives.contains(&o))
    }

    /// Exact number of rollouts: per cell type, node `i` (0-based) has `i²`
    /// input pairs and `|P|²` primitive pairs.
    pub fn cardinality(&self) -> BigUint {
        let p = BigUint::from(self.primitives.len());
        let mut per_cell = BigUint::from(1u32);
        for i in 2..self.nodes {
            per_cell *= BigUint::from(i * i) * &p * &p;
        }
        &per_cell * &per_cell
    }

    /// Draw a rollout with every decision independent and uniform.
    pub fn sample_uniform(&self, rng: &mut RngStream) -> Rollout {
        let mut cell = || CellTopology {
            nodes: (2..self.nodes)
                .map(|i| {
                    let inputs = [rng.below(i), rng.below(i)];
                    let ops = [self.primitives[rng.below(self.primitives.len())], self.primitives[rng.below(self.primitives.len())]];
                    NodeChoice { inputs, ops }
                })
                .collect(),
        };
        let normal = cell();
        let reduce = cell();
        Rollout { normal, reduce }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Rollout {
        "N(0:sep_conv_3x3,1:skip_connect;2:none,0:max_pool_3x3)R(1:dil_conv_5x5,1:conv_1x1;0:avg_pool_3x3,2:relu_conv_bn_5x5)"
            .parse()
            .unwrap()
    }

    #[test]
    fn text_round_trip() {
        let r = sample();
        assert_eq!(r.to_string().parse::<Rollout>().unwrap(), r);
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<Rollout>(&json).unwrap(), r);
    }

    #[test]
    fn forward_reference_rejected() {
        assert!("N(0:none,2:none)R(0:none,1:none)".parse::<Rollout>().is_err());
        assert!("N(0:none,1:bogus)R(0:none,1:none)".parse::<Rollout>().is_err());
        assert!(sample().validate(5).is_err());
        assert!(sample().validate(4).is_ok());
    }

    #[test]
    fn small_space_cardinality_by_enumeration() {
        let space = SearchSpace { nodes: 4, primitives: vec![PrimitiveKind::None, PrimitiveKind::SkipConnect] };
        // Node 2: 2² inputs × 2² ops = 16; node 3: 3² × 2² = 36; per cell 576.
        assert_eq!(space.cardinality(), BigUint::from(576u32 * 576));
    }
}
