use std::fmt;
use std::rc::Rc;

use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

/// Backward rule of one recorded operation.
///
/// Receives the upstream gradient of the node's output and a flag per parent
/// saying whether that parent needs a gradient. Returns one entry per parent;
/// `None` for parents that were not asked for.
pub type BackwardFn = Box<dyn Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>>>;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

struct Node {
    op: String,
    shape: Vec<usize>,
    value: Rc<Vec<f64>>,
    parents: Vec<usize>,
    requires_grad: bool,
    backward: Option<BackwardFn>,
}

/// Define-by-run tape. Nodes are appended in evaluation order, so the node
/// list is always a topological order of the computation.
pub struct Graph {
    nodes: Vec<Node>,
    check_finite: bool,
    first_non_finite: Option<String>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph")
            .field("nodes", &self.nodes.len())
            .field("check_finite", &self.check_finite)
            .finish()
    }
}

impl Graph {
    /// New empty tape. Non-finite detection is on in debug builds.
    pub fn new() -> Self {
        Self::with_finite_checks(cfg!(debug_assertions))
    }

    pub fn with_finite_checks(check_finite: bool) -> Self {
        Self { nodes: Vec::new(), check_finite, first_non_finite: None }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a tensor as a leaf. It participates in gradient tracking iff
    /// `tensor.requires_grad`.
    pub fn leaf(&mut self, tensor: &Tensor) -> Var {
        self.push_leaf("leaf", tensor.shape().to_vec(), tensor.data().to_vec(), tensor.requires_grad)
    }

    /// Leaf that always tracks gradients regardless of the tensor's flag.
    pub fn param(&mut self, tensor: &Tensor) -> Var {
        self.push_leaf("param", tensor.shape().to_vec(), tensor.data().to_vec(), true)
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return dim_err(format!("constant of shape {shape:?} given {} values", data.len()));
        }
        Ok(self.push_leaf("constant", shape, data, false))
    }

    fn push_leaf(&mut self, op: &str, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Var {
        self.note_finite(op, &data);
        self.nodes.push(Node {
            op: op.to_string(),
            shape,
            value: Rc::new(data),
            parents: Vec::new(),
            requires_grad,
            backward: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records an operation computed outside this module. This is the
    /// extension point used by the wavelet operators and by test fixtures.
    pub fn custom(
        &mut self,
        op: &str,
        parents: &[Var],
        shape: Vec<usize>,
        value: Vec<f64>,
        backward: BackwardFn,
    ) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != value.len() {
            return dim_err(format!("`{op}` produced {} values for shape {shape:?}", value.len()));
        }
        for p in parents {
            if p.0 >= self.nodes.len() {
                return dim_err(format!("`{op}` references unknown node {}", p.0));
            }
        }
        self.note_finite(op, &value);
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            op: op.to_string(),
            shape,
            value: Rc::new(value),
            parents: parents.iter().map(|p| p.0).collect(),
            requires_grad,
            backward: requires_grad.then_some(backward),
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn note_finite(&mut self, op: &str, data: &[f64]) {
        if self.check_finite
            && self.first_non_finite.is_none()
            && data.iter().any(|v| !v.is_finite())
        {
            self.first_non_finite = Some(op.to_string());
        }
    }

    /// Fails with the name of the first operation that produced NaN/Inf,
    /// when finite checks are enabled.
    pub fn check_finite(&self) -> Result<()> {
        match &self.first_non_finite {
            Some(op) => Err(Error::NonFinite { op: op.clone() }),
            None => Ok(()),
        }
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub(crate) fn shared_value(&self, v: Var) -> Rc<Vec<f64>> {
        Rc::clone(&self.nodes[v.0].value)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn op_name(&self, v: Var) -> &str {
        &self.nodes[v.0].op
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Extracts a node's value as a standalone tensor.
    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.as_ref().clone()).expect("node shape is consistent")
    }

    /// Reverse sweep from a scalar output with seed gradient 1.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let len = self.nodes[output.0].value.len();
        if len != 1 {
            return dim_err(format!("backward needs a scalar output, got {len} values"));
        }
        self.backward_with(output, vec![1.0])
    }

    /// Reverse sweep with an explicit upstream gradient for `output`.
    ///
    /// Every node at or before `output` is visited exactly once, in reverse
    /// recording order; gradients reaching a node through several consumers
    /// are summed.
    pub fn backward_with(&self, output: Var, seed: Vec<f64>) -> Result<Gradients> {
        if seed.len() != self.nodes[output.0].value.len() {
            return dim_err("seed gradient does not match output size");
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed);
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            let Some(backward) = &node.backward else { continue };
            let Some(upstream) = grads[idx].take() else { continue };
            let needs: Vec<bool> =
                node.parents.iter().map(|&p| self.nodes[p].requires_grad).collect();
            let contributions = backward(&upstream, &needs);
            grads[idx] = Some(upstream);
            for (&p, contrib) in node.parents.iter().zip(contributions) {
                let Some(contrib) = contrib else { continue };
                if !self.nodes[p].requires_grad {
                    continue;
                }
                debug_assert_eq!(contrib.len(), self.nodes[p].value.len(), "op `{}`", node.op);
                match &mut grads[p] {
                    Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradients produced by one backward sweep.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the swept output w.r.t. `v`; `None` when `v` does not
    /// influence it or does not track gradients.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of `v` (if any) into `tensor.grad`.
    pub fn accumulate_into(&self, v: Var, tensor: &mut Tensor) -> Result<()> {
        match self.get(v) {
            Some(g) => tensor.accumulate_grad(g),
            None => Ok(()),
        }
    }
}
