use std::collections::{BTreeMap, HashMap};

use super::params::ParameterStore;
use super::{Result, Scalar, Tensor, TensorError};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
pub(crate) enum Op<F> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddBcast(Var, Var),
    MulBcast(Var, Var),
    Scale(Var, F),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Square(Var),
    Tanh(Var),
    Gelu(Var),
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    MeanLast(Var),
    ExpandLast(Var),
    Reshape(Var),
    Transpose(Var),
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    Matmul(Var, Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        inv_std: Vec<F>,
    },
    Mse(Var, Var),
    SmoothL1 {
        a: Var,
        b: Var,
        beta: F,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        batch: usize,
        heads: usize,
        probs: Vec<F>,
    },
    Unfold1d {
        x: Var,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Upsample1d {
        x: Var,
        factor: usize,
    },
}

impl<F> Op<F> {
    pub(crate) fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | AddBcast(a, b) | MulBcast(a, b)
            | Matmul(a, b) | Mse(a, b) => vec![*a, *b],
            SmoothL1 { a, b, .. } => vec![*a, *b],
            Scale(x, _) | AddScalar(x) | Exp(x) | Log(x) | Sqrt(x) | Square(x) | Tanh(x)
            | Gelu(x) | Sum(x) | Mean(x) | SumLast(x) | MeanLast(x) | ExpandLast(x)
            | Reshape(x) | Transpose(x) | Softmax(x) | LogSoftmax(x) => vec![*x],
            Slice { x, .. } | LayerNorm { x, .. } | Unfold1d { x, .. } | Upsample1d { x, .. } => {
                vec![*x]
            }
            Concat { xs, .. } => xs.clone(),
            Embedding { table, .. } => vec![*table],
            Attention { q, k, v, .. } => vec![*q, *k, *v],
        }
    }
}

pub(crate) struct Node<F> {
    pub(crate) value: Tensor<F>,
    pub(crate) op: Op<F>,
    pub(crate) requires_grad: bool,
}

/// A tape of executed operations.
///
/// Nodes are appended in execution order, so every input precedes its
/// consumers and the reverse pass is a single backwards sweep.
pub struct Graph<F: Scalar = f32> {
    pub(crate) nodes: Vec<Node<F>>,
    bound: HashMap<String, Var>,
    frozen_prefixes: Vec<String>,
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            bound: HashMap::new(),
            frozen_prefixes: Vec::new(),
        }
    }

    /// Parameters whose name starts with `prefix` are bound without gradient.
    pub fn freeze_prefix(&mut self, prefix: impl Into<String>) {
        self.frozen_prefixes.push(prefix.into());
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: "leaf" });
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor<F>) -> Result<Var> {
        self.leaf(value, false)
    }

    /// A leaf that receives a gradient.
    pub fn input(&mut self, value: Tensor<F>) -> Result<Var> {
        self.leaf(value, true)
    }

    /// Bind a named parameter from `store`, reusing the leaf if already bound.
    pub fn param(&mut self, store: &ParameterStore<F>, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let value = store
            .get(name)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))?
            .clone();
        let frozen = !store.is_trainable(name)
            || self.frozen_prefixes.iter().any(|p| name.starts_with(p.as_str()));
        let v = self.leaf(value, !frozen)?;
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub(crate) fn push(&mut self, op_name: &'static str, value: Tensor<F>, op: Op<F>) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: op_name });
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse pass from a scalar `loss`. Each node is visited once, in
    /// reverse recording order. The graph is left untouched, so calling this
    /// twice yields identical gradients.
    pub fn backward(&self, loss: Var) -> Result<Grads<F>> {
        let shape = self.shape(loss);
        if shape.iter().product::<usize>() != 1 {
            return Err(TensorError::NotScalar(shape.to_vec()));
        }
        let mut grads: Vec<Option<Tensor<F>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(shape, F::one()));
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(upstream) = grads[id].take() else {
                continue;
            };
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(upstream);
                continue;
            }
            for (input, g) in self.backward_op(id, &upstream)? {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a += *b;
                        }
                    }
                    slot => *slot = Some(g),
                }
            }
        }
        let named = self
            .bound
            .iter()
            .filter(|(_, v)| self.nodes[v.0].requires_grad)
            .map(|(name, v)| {
                let g = grads
                    .get_mut(v.0)
                    .and_then(Option::take)
                    .unwrap_or_else(|| Tensor::zeros(self.shape(*v)));
                (name.clone(), g)
            })
            .collect();
        Ok(Grads { by_var: grads, named })
    }
}

/// Result of [`Graph::backward`].
#[derive(Debug)]
pub struct Grads<F: Scalar> {
    by_var: Vec<Option<Tensor<F>>>,
    named: BTreeMap<String, Tensor<F>>,
}

impl<F: Scalar> Grads<F> {
    /// Gradient with respect to an unnamed leaf, or `None` if it was not
    /// reached (in which case the gradient is zero).
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.by_var.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, materialising zeros for unreached leaves.
    pub fn wrt(&self, graph: &Graph<F>, v: Var) -> Tensor<F> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(graph.shape(v)))
    }

    /// Gradients of every trainable bound parameter, keyed by name.
    pub fn named(&self) -> &BTreeMap<String, Tensor<F>> {
        &self.named
    }

    pub fn into_named(self) -> BTreeMap<String, Tensor<F>> {
        self.named
    }
}
