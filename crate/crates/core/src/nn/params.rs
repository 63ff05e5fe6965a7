//! Named parameter storage shared by every network and the controller.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamId;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// What a parameter is used for. Weight faults and quantization apply to
/// convolution and linear weights only.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamRole {
    Conv { kernel: usize, depthwise: bool },
    LinearWeight,
    LinearBias,
    BnGamma,
    BnBeta,
    Controller,
}

impl ParamRole {
    pub fn is_weight(&self) -> bool {
        matches!(self, Self::Conv { .. } | Self::LinearWeight)
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    roles: Vec<ParamRole>,
    #[serde(skip)]
    index: HashMap<String, ParamId>,
    /// Non-trainable state (batch-norm running statistics), keyed by name.
    buffers: BTreeMap<String, Vec<f64>>,
}

impl PartialEq for ParamStore {
    fn eq(&self, other: &Self) -> bool {
        self.names == other.names && self.values == other.values && self.roles == other.roles && self.buffers == other.buffers
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, role: ParamRole) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::precondition(format!("parameter {name} already exists")));
        }
        let id = ParamId(self.values.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        self.roles.push(role);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn role(&self, id: ParamId) -> ParamRole {
        self.roles[id.0]
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        if value.shape() != self.values[id.0].shape() {
            return Err(Error::shape(format!(
                "parameter {} has shape {:?}, got {:?}",
                self.names[id.0],
                self.values[id.0].shape(),
                value.shape()
            )));
        }
        self.values[id.0] = value;
        Ok(())
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn numel(&self, ids: impl IntoIterator<Item = ParamId>) -> usize {
        ids.into_iter().map(|id| self.values[id.0].len()).sum()
    }

    pub fn buffer(&self, name: &str) -> Option<&[f64]> {
        self.buffers.get(name).map(Vec::as_slice)
    }

    pub fn set_buffer(&mut self, name: impl Into<String>, value: Vec<f64>) {
        self.buffers.insert(name.into(), value);
    }

    pub fn buffers(&self) -> &BTreeMap<String, Vec<f64>> {
        &self.buffers
    }

    /// Rebuild the name index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self.names.iter().enumerate().map(|(i, n)| (n.clone(), ParamId(i))).collect();
    }

    /// Convolution weight `[o, c/groups, k, k]`, uniform in `±1/sqrt(fan_in)`.
    pub fn conv(
        &mut self,
        name: &str,
        out: usize,
        in_per_group: usize,
        kernel: usize,
        depthwise: bool,
        rng: &mut RngStream,
    ) -> Result<ParamId> {
        let fan_in = (in_per_group * kernel * kernel) as f64;
        let t = Tensor::uniform(&[out, in_per_group, kernel, kernel], 1.0 / fan_in.sqrt(), rng);
        self.add(name, t, ParamRole::Conv { kernel, depthwise })
    }

    pub fn batch_norm(&mut self, name: &str, channels: usize) -> Result<BnParams> {
        let gamma = self.add(format!("{name}.gamma"), Tensor::full(&[channels], 1.0), ParamRole::BnGamma)?;
        let beta = self.add(format!("{name}.beta"), Tensor::zeros(&[channels]), ParamRole::BnBeta)?;
        self.set_buffer(format!("{name}.running_mean"), vec![0.0; channels]);
        self.set_buffer(format!("{name}.running_var"), vec![1.0; channels]);
        Ok(BnParams { gamma, beta, key: name.to_string() })
    }

    pub fn linear(&mut self, name: &str, out: usize, fan_in: usize, rng: &mut RngStream) -> Result<LinearParams> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = self.add(format!("{name}.weight"), Tensor::uniform(&[out, fan_in], bound, rng), ParamRole::LinearWeight)?;
        let b = self.add(format!("{name}.bias"), Tensor::uniform(&[out], bound, rng), ParamRole::LinearBias)?;
        Ok(LinearParams { weight: w, bias: b })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BnParams {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub key: String,
}

impl BnParams {
    pub fn mean_key(&self) -> String {
        format!("{}.running_mean", self.key)
    }

    pub fn var_key(&self) -> String {
        format!("{}.running_var", self.key)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearParams {
    pub weight: ParamId,
    pub bias: ParamId,
}
