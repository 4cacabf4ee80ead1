//! Reverse-mode automatic differentiation over a recorded operation tape.
//!
//! A [`Tape`] lives for one training step. Every forward op appends a node
//! holding its output value; ops whose inputs require gradients also store a
//! [`Backward`] rule. [`Tape::backward`] walks the nodes in reverse order and
//! sums the contributions each node receives from its consumers.
//!
//! Backward rules are trait objects, so an op is free to define a backward
//! pass that is *not* the derivative of its forward pass. The masking layers
//! in [`crate::backdrop`] rely on this.

mod ops;

pub use ops::sigmoid;

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a particular [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

/// Everything a backward rule may look at.
pub struct BackwardCtx<'a> {
    pub grad_output: &'a Tensor,
    pub output: &'a Tensor,
    pub inputs: &'a [&'a Tensor],
    /// Which inputs actually need a gradient.
    pub needs_grad: &'a [bool],
    /// Ops may skip work for gradient paths that are exactly zero.
    pub skip_blocked: bool,
}

/// A backward rule: maps the gradient of the output to gradients of the
/// inputs. Entries may be `None` for inputs that need no gradient.
pub trait Backward {
    fn name(&self) -> &'static str;
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Tensor>>>;
}

struct Node {
    value: Tensor,
    inputs: Vec<usize>,
    rule: Option<Box<dyn Backward>>,
    requires_grad: bool,
    grad: Option<Tensor>,
}

pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    skip_blocked: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            skip_blocked: false,
        }
    }

    /// Lets backward rules skip computation on gradient paths that a
    /// masking layer has zeroed. Results are identical either way.
    pub fn set_skip_blocked(&mut self, on: bool) {
        self.skip_blocked = on;
    }

    pub fn skip_blocked(&self) -> bool {
        self.skip_blocked
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// A leaf that does not receive a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            inputs: Vec::new(),
            rule: None,
            requires_grad,
            grad: None,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn check(&self, var: Var) -> Result<usize> {
        if var.tape != self.id || var.index >= self.nodes.len() {
            return Err(Error::Backward(format!(
                "variable {} does not belong to this tape",
                var.index
            )));
        }
        Ok(var.index)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        self.check(var).expect("variable from another tape");
        &self.nodes[var.index].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.value(var).shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.index].requires_grad
    }

    /// Accumulated gradient of `var`, if any backward pass reached it.
    pub fn grad(&self, var: Var) -> Option<&Tensor> {
        self.check(var).ok()?;
        self.nodes[var.index].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    /// Records an op. The rule is kept only if some input requires a
    /// gradient.
    pub fn push(
        &mut self,
        op: &'static str,
        inputs: &[Var],
        value: Tensor,
        rule: Box<dyn Backward>,
    ) -> Result<Var> {
        let mut idx = Vec::with_capacity(inputs.len());
        for &v in inputs {
            idx.push(self.check(v)?);
        }
        if cfg!(debug_assertions)
            && !value.all_finite()
            && idx.iter().all(|&i| self.nodes[i].value.all_finite())
        {
            return Err(Error::NonFinite { op });
        }
        let requires_grad = idx.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            value,
            inputs: idx,
            rule: requires_grad.then_some(rule),
            requires_grad,
            grad: None,
        });
        Ok(Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        })
    }

    /// Back-propagates from a scalar `root`, adding `∂root/∂node` into the
    /// gradient slot of every node that requires a gradient. Repeated calls
    /// accumulate.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let root = self.check(root)?;
        let root_value = &self.nodes[root].value;
        if root_value.numel() != 1 {
            return Err(Error::Backward(format!(
                "root must be a scalar, got shape {:?}",
                root_value.shape()
            )));
        }
        if !self.nodes[root].requires_grad {
            return Ok(());
        }

        let mut pending: Vec<Option<Tensor>> = (0..=root).map(|_| None).collect();
        pending[root] = Some(Tensor::ones(root_value.shape()));

        for i in (0..=root).rev() {
            let Some(grad) = pending[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if let Some(rule) = &node.rule {
                let inputs: Vec<&Tensor> =
                    node.inputs.iter().map(|&j| &self.nodes[j].value).collect();
                let needs_grad: Vec<bool> = node
                    .inputs
                    .iter()
                    .map(|&j| self.nodes[j].requires_grad)
                    .collect();
                let ctx = BackwardCtx {
                    grad_output: &grad,
                    output: &node.value,
                    inputs: &inputs,
                    needs_grad: &needs_grad,
                    skip_blocked: self.skip_blocked,
                };
                let input_grads = rule.backward(&ctx)?;
                if input_grads.len() != node.inputs.len() {
                    return Err(Error::Backward(format!(
                        "{} returned {} gradients for {} inputs",
                        rule.name(),
                        input_grads.len(),
                        node.inputs.len()
                    )));
                }
                for (&j, g) in node.inputs.iter().zip(input_grads) {
                    let Some(g) = g else { continue };
                    if !self.nodes[j].requires_grad {
                        continue;
                    }
                    if g.shape() != self.nodes[j].value.shape() {
                        return Err(Error::Shape {
                            op: rule.name(),
                            lhs: g.shape().to_vec(),
                            rhs: self.nodes[j].value.shape().to_vec(),
                        });
                    }
                    match &mut pending[j] {
                        Some(acc) => acc.add_assign(&g)?,
                        slot => *slot = Some(g),
                    }
                }
            }
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => acc.add_assign(&grad)?,
                slot => *slot = Some(grad),
            }
        }
        Ok(())
    }
}

/// Backward rule built from a closure, for ops that need nothing but the
/// forward values.
pub(crate) struct FnBackward<F> {
    pub name: &'static str,
    pub f: F,
}

impl<F> Backward for FnBackward<F>
where
    F: Fn(&BackwardCtx<'_>) -> Result<Vec<Option<Tensor>>>,
{
    fn name(&self) -> &'static str {
        self.name
    }

    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Tensor>>> {
        (self.f)(ctx)
    }
}

pub(crate) fn rule<F>(name: &'static str, f: F) -> Box<dyn Backward>
where
    F: Fn(&BackwardCtx<'_>) -> Result<Vec<Option<Tensor>>> + 'static,
{
    Box::new(FnBackward { name, f })
}
