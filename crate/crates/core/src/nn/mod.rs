//! Parameter storage, layers, initializers and optimizers.

mod init;
mod layers;
mod optim;
mod serialize;

pub use init::Initializer;
pub use layers::{BatchNorm2d, BnUpdate, Conv2d, Linear};
pub use optim::{Adam, Sgd};
pub use serialize::{load_params, save_params};

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::tensor::{Scalar, Tensor};

static STORE_COUNTER: AtomicU64 = AtomicU64::new(1);

/// Handle to one parameter tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

pub(crate) struct ParamEntry<F: Scalar> {
    pub name: String,
    pub value: Tensor<F>,
    pub trainable: bool,
}

/// Owned set of named parameter tensors.
///
/// Every store carries a process-unique id so graphs can mix parameters from
/// several stores without ambiguity.
pub struct ParamStore<F: Scalar> {
    uid: u64,
    entries: Vec<ParamEntry<F>>,
    by_name: HashMap<String, usize>,
}

impl<F: Scalar> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            uid: STORE_COUNTER.fetch_add(1, Ordering::Relaxed),
            entries: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub(crate) fn uid(&self) -> u64 {
        self.uid
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name `{name}`"
        );
        let id = ParamId(self.entries.len());
        self.by_name.insert(name.clone(), id.0);
        self.entries.push(ParamEntry {
            name,
            value,
            trainable,
        });
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Tensor<F> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.entries[id.0].value
    }

    pub fn trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    /// Ids of trainable parameters, in insertion order.
    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.ids().filter(|&id| self.trainable(id)).collect()
    }

    /// Total number of scalar elements across all parameters.
    pub fn num_elements(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// True if any parameter contains a non-finite value.
    pub fn any_non_finite(&self) -> bool {
        self.entries
            .iter()
            .any(|e| e.value.iter().any(|v| !v.is_finite()))
    }
}

/// Per-parameter gradients, indexed like the originating store.
pub type GradMap<F> = Vec<Option<Tensor<F>>>;

/// Copy values from `src` into `dst` by parameter name. Shapes must match;
/// used to adopt checkpoint values into a freshly built skeleton.
pub fn adopt_values<F: Scalar>(dst: &mut ParamStore<F>, src: &ParamStore<F>) -> crate::Result<()> {
    for id in dst.ids().collect::<Vec<_>>() {
        let name = dst.name(id).to_string();
        let sid = src.find(&name).ok_or_else(|| {
            crate::Error::Store(format!("checkpoint is missing parameter `{name}`"))
        })?;
        if src.value(sid).shape() != dst.value(id).shape() {
            return Err(crate::Error::Store(format!(
                "checkpoint parameter `{name}` has shape {:?}, expected {:?}",
                src.value(sid).shape(),
                dst.value(id).shape()
            )));
        }
        *dst.value_mut(id) = src.value(sid).clone();
    }
    Ok(())
}
