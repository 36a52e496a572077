use std::collections::HashMap;

use ndarray::ArrayD;

use super::{Scalar, Tensor};
use crate::nn::{GradMap, ParamId, ParamStore};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

pub(crate) type BackFn<F> = Box<dyn FnOnce(&Tensor<F>) -> Vec<Option<Tensor<F>>> + Send>;

pub(crate) struct Back<F> {
    pub parents: Vec<NodeId>,
    pub run: BackFn<F>,
}

pub(crate) struct Node<F: Scalar> {
    pub value: Tensor<F>,
    pub requires_grad: bool,
    pub back: Option<Back<F>>,
}

/// Define-by-run computation tape.
///
/// Parameter values are cloned into the graph when bound, so a graph may mix
/// parameters from any number of stores. `backward` may be called once; node
/// gradients stay queryable afterwards.
pub struct Graph<F: Scalar> {
    pub(crate) nodes: Vec<Node<F>>,
    grads: Vec<Option<Tensor<F>>>,
    param_leaves: HashMap<(u64, usize), NodeId>,
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            param_leaves: HashMap::new(),
        }
    }

    pub(crate) fn push(
        &mut self,
        value: Tensor<F>,
        requires_grad: bool,
        back: Option<Back<F>>,
    ) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value,
            requires_grad,
            back,
        });
        id
    }

    /// Leaf that never receives a gradient (inputs, fixed weights, masks).
    pub fn constant(&mut self, value: Tensor<F>) -> NodeId {
        self.push(value, false, None)
    }

    /// Leaf that participates in backprop without living in a store.
    pub fn variable(&mut self, value: Tensor<F>) -> NodeId {
        self.push(value, true, None)
    }

    /// Bind a parameter; repeated binds of the same parameter share one leaf.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> NodeId {
        let key = (store.uid(), id.0);
        if let Some(&n) = self.param_leaves.get(&key) {
            return n;
        }
        let trainable = store.trainable(id);
        let n = self.push(store.value(id).clone(), trainable, None);
        self.param_leaves.insert(key, n);
        n
    }

    pub fn value(&self, n: NodeId) -> &Tensor<F> {
        &self.nodes[n.0].value
    }

    pub fn requires_grad(&self, n: NodeId) -> bool {
        self.nodes[n.0].requires_grad
    }

    pub(crate) fn any_requires_grad(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&n| self.requires_grad(n))
    }

    /// Reverse pass from `root` (a scalar node). Gradients accumulate in
    /// topological (insertion) order, so results are deterministic.
    pub fn backward(&mut self, root: NodeId) {
        assert!(
            self.value(root).len() == 1,
            "backward root must be scalar, got shape {:?}",
            self.value(root).shape()
        );
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[root.0] = Some(ArrayD::from_elem(self.value(root).raw_dim(), F::one()));

        for i in (0..=root.0).rev() {
            if self.grads[i].is_none() {
                continue;
            }
            let back = match self.nodes[i].back.take() {
                Some(b) => b,
                None => continue,
            };
            let gy = self.grads[i].as_ref().expect("grad present");
            let parent_grads = (back.run)(gy);
            debug_assert_eq!(parent_grads.len(), back.parents.len());
            for (pid, pg) in back.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                debug_assert_eq!(
                    pg.shape(),
                    self.nodes[pid.0].value.shape(),
                    "gradient shape mismatch at node {}",
                    pid.0
                );
                match &mut self.grads[pid.0] {
                    Some(acc) => *acc += &pg,
                    slot => *slot = Some(pg),
                }
            }
        }
    }

    /// Gradient of the last `backward` root w.r.t. node `n`, if any flowed.
    pub fn grad(&self, n: NodeId) -> Option<&Tensor<F>> {
        self.grads.get(n.0).and_then(|g| g.as_ref())
    }

    /// Collect parameter gradients for one store, indexed like the store.
    pub fn grads_for(&self, store: &ParamStore<F>) -> GradMap<F> {
        let mut out: GradMap<F> = (0..store.len()).map(|_| None).collect();
        for (&(uid, idx), node) in &self.param_leaves {
            if uid == store.uid() {
                out[idx] = self.grad(*node).cloned();
            }
        }
        out
    }
}
