use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::ModuleKind;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    Base,
    LoraA,
    LoraB,
}

impl ParamRole {
    pub fn is_adapter(self) -> bool {
        self != ParamRole::Base
    }
}

#[derive(Clone, Debug)]
pub struct Param<S> {
    pub name: String,
    pub module: ModuleKind,
    pub role: ParamRole,
    pub tensor: Tensor<S>,
}

/// Flat, ordered parameter list. Order is fixed by construction and is the
/// order used by checkpoints and the optimizer.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<S> {
    params: Vec<Param<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub(crate) fn push(&mut self, name: String, module: ModuleKind, role: ParamRole, tensor: Tensor<S>) -> usize {
        debug_assert!(self.params.iter().all(|p| p.name != name), "duplicate parameter {name}");
        self.params.push(Param {
            name,
            module,
            role,
            tensor,
        });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, i: usize) -> &Param<S> {
        &self.params[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Param<S> {
        &mut self.params[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<S>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<S>> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }
}

/// Parameter totals with a per-module breakdown that sums to `total`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub total: usize,
    pub per_module: BTreeMap<ModuleKind, usize>,
}
