use std::collections::HashMap;

use super::{NumericsError, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// What a backward closure sees: parent values, the forward output and the
/// upstream gradient. `needs[i]` is false when parent `i` does not require a
/// gradient, in which case the closure may return `None` for it.
pub struct BackCtx<'a> {
    pub inputs: Vec<&'a Tensor>,
    pub output: &'a Tensor,
    pub grad: &'a Tensor,
    pub needs: Vec<bool>,
}

type BackwardFn = Box<dyn Fn(&BackCtx) -> Vec<Option<Tensor>>>;

struct Node {
    value: Tensor,
    parents: Vec<Var>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

/// Reverse-mode tape. Every primitive appends one node; [`Graph::backward`]
/// walks the nodes in reverse creation order.
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    params: HashMap<String, Var>,
    buffer_updates: Vec<(String, Tensor)>,
    train: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            params: HashMap::new(),
            buffer_updates: Vec::new(),
            train: false,
        }
    }

    /// Graph whose batch-norm layers use per-batch moments.
    pub fn training() -> Self {
        Self { train: true, ..Self::new() }
    }

    pub fn is_training(&self) -> bool {
        self.train
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that gradients are tracked for.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, parents: Vec::new(), backward: None, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Binds a named parameter once per graph; later calls return the same var.
    pub fn bind_param(&mut self, name: &str, value: &Tensor, trainable: bool) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let v = self.push_leaf(value.clone(), trainable);
        self.params.insert(name.to_string(), v);
        v
    }

    pub fn bound_params(&self) -> impl Iterator<Item = (&str, Var)> {
        self.params.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn param_var(&self, name: &str) -> Option<Var> {
        self.params.get(name).copied()
    }

    /// Batch-norm running statistics produced during a training forward.
    pub fn record_buffer_update(&mut self, name: String, value: Tensor) {
        self.buffer_updates.push((name, value));
    }

    pub fn take_buffer_updates(&mut self) -> Vec<(String, Tensor)> {
        std::mem::take(&mut self.buffer_updates)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a new node. The value must be finite.
    pub fn push(
        &mut self,
        op: &'static str,
        value: Tensor,
        parents: &[Var],
        backward: impl Fn(&BackCtx) -> Vec<Option<Tensor>> + 'static,
    ) -> Result<Var, NumericsError> {
        if !value.is_finite() {
            return Err(NumericsError::NonFinite(op));
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let backward: Option<BackwardFn> = if requires_grad { Some(Box::new(backward)) } else { None };
        self.nodes.push(Node { value, parents: parents.to_vec(), backward, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Copies the value of `v` into a new constant node (gradient stop).
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    /// Accumulates gradients of the scalar `loss` into every node it depends on.
    pub fn backward(&mut self, loss: Var) -> Result<(), NumericsError> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(NumericsError::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        self.backward_with(loss, Tensor::ones(self.nodes[loss.0].value.shape()))
    }

    /// Backward pass seeded with an explicit upstream gradient for `out`.
    pub fn backward_with(&mut self, out: Var, seed: Tensor) -> Result<(), NumericsError> {
        if seed.shape() != self.nodes[out.0].value.shape() {
            return Err(NumericsError::Shape("backward seed shape mismatch".into()));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let Some(grad) = self.grads[i].take() else { continue };
            let node = &self.nodes[i];
            if let Some(backward) = &node.backward {
                let ctx = BackCtx {
                    inputs: node.parents.iter().map(|p| &self.nodes[p.0].value).collect(),
                    output: &node.value,
                    grad: &grad,
                    needs: node.parents.iter().map(|p| self.nodes[p.0].requires_grad).collect(),
                };
                let parent_grads = backward(&ctx);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (p, g) in node.parents.iter().zip(parent_grads) {
                    let Some(g) = g else { continue };
                    if !self.nodes[p.0].requires_grad {
                        continue;
                    }
                    if !g.is_finite() {
                        return Err(NumericsError::NonFinite("backward"));
                    }
                    debug_assert_eq!(g.shape(), self.nodes[p.0].value.shape());
                    match &mut self.grads[p.0] {
                        Some(acc) => acc.add_assign(&g),
                        slot @ None => *slot = Some(g),
                    }
                }
            }
            self.grads[i] = Some(grad);
        }
        Ok(())
    }

    /// Gradient of the last backward pass with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}
