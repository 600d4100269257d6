use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use crate::error::{Result, TensorError};

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);
static CHECKED: AtomicBool = AtomicBool::new(true);

/// Enables or disables the NaN/Inf scan performed on every op output.
///
/// Checked mode is on by default.
pub fn set_checked(on: bool) {
    CHECKED.store(on, Ordering::Relaxed);
}

pub fn is_checked() -> bool {
    CHECKED.load(Ordering::Relaxed)
}

/// Maps the upstream gradient to one optional gradient per parent. The second
/// argument says which parents actually need one.
pub(crate) type BackwardFn = Box<dyn Fn(&[f32], &[bool]) -> Vec<Option<Vec<f32>>> + Send + Sync>;

struct GradFn {
    op: &'static str,
    parents: Vec<Tensor>,
    backward: BackwardFn,
}

struct Node {
    id: usize,
    shape: Vec<usize>,
    data: Vec<f32>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<f32>>>,
    grad_fn: Option<GradFn>,
}

/// Dense row-major `f32` tensor participating in a computation graph.
///
/// Values are immutable after construction; only the gradient slot of a leaf
/// changes (through [`Tensor::backward`]). Cloning is cheap and shares storage.
#[derive(Clone)]
pub struct Tensor(Arc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = self.0.grad_fn.as_ref().map(|g| g.op).unwrap_or("leaf");
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("op", &op)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn from_node(shape: Vec<usize>, data: Vec<f32>, requires_grad: bool, grad_fn: Option<GradFn>) -> Self {
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad: Mutex::new(None),
            grad_fn,
        }))
    }

    fn validate(op: &'static str, data: &[f32], shape: &[usize]) -> Result<()> {
        if shape.contains(&0) {
            return Err(TensorError::invalid(op, format!("extents must be positive, got {shape:?}")));
        }
        if numel(shape) != data.len() {
            return Err(TensorError::invalid(
                op,
                format!("shape {shape:?} needs {} values, got {}", numel(shape), data.len()),
            ));
        }
        Ok(())
    }

    /// Constant (untracked) tensor.
    pub fn new(data: Vec<f32>, shape: &[usize]) -> Result<Self> {
        Self::validate("new", &data, shape)?;
        if is_checked() && data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: "new" });
        }
        Ok(Self::from_node(shape.to_vec(), data, false, None))
    }

    /// Trainable leaf tensor.
    pub fn param(data: Vec<f32>, shape: &[usize]) -> Result<Self> {
        let t = Self::new(data, shape)?;
        Ok(t.with_requires_grad(true))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        assert!(shape.iter().all(|&d| d > 0), "extents must be positive");
        Self::from_node(shape.to_vec(), vec![value; numel(shape)], false, None)
    }

    pub fn scalar(value: f32) -> Self {
        Self::from_node(vec![1], vec![value], false, None)
    }

    /// Fresh leaf sharing this tensor's values, with the given tracking flag.
    pub fn with_requires_grad(&self, requires_grad: bool) -> Self {
        Self::from_node(self.0.shape.clone(), self.0.data.clone(), requires_grad, None)
    }

    /// Untracked copy cut off from the graph.
    pub fn detach(&self) -> Self {
        self.with_requires_grad(false)
    }

    /// Records the result of an op. Tracking is inherited from the parents; the
    /// backward closure is dropped when no parent is tracked.
    pub(crate) fn from_op(
        op: &'static str,
        data: Vec<f32>,
        shape: Vec<usize>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Result<Self> {
        debug_assert_eq!(numel(&shape), data.len(), "{op}");
        if is_checked() && data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op });
        }
        let requires_grad = parents.iter().any(Tensor::requires_grad);
        let grad_fn = requires_grad.then(|| GradFn {
            op,
            parents,
            backward,
        });
        Ok(Self::from_node(shape, data, requires_grad, grad_fn))
    }

    pub fn id(&self) -> usize {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.0.data.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f32 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    /// Row `r` of a 2-D tensor.
    pub fn row(&self, r: usize) -> &[f32] {
        assert_eq!(self.rank(), 2);
        let cols = self.0.shape[1];
        &self.0.data[r * cols..(r + 1) * cols]
    }

    fn grad_slot(&self) -> MutexGuard<'_, Option<Vec<f32>>> {
        self.0.grad.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Accumulated gradient of a tracked leaf, if any backward pass reached it.
    pub fn grad(&self) -> Option<Vec<f32>> {
        self.grad_slot().clone()
    }

    pub fn zero_grad(&self) {
        *self.grad_slot() = None;
    }

    /// Multiplies the stored gradient in place (used for gradient clipping).
    pub fn scale_grad(&self, factor: f32) {
        if let Some(g) = self.grad_slot().as_mut() {
            g.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub(crate) fn accumulate_grad(&self, g: &[f32]) {
        let mut slot = self.grad_slot();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Tracked nodes reachable from `self`, parents before children.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut seen = HashSet::new();
        let mut stack = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !seen.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(f) = &t.0.grad_fn {
                for p in &f.parents {
                    if p.requires_grad() && !seen.contains(&p.id()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }

    /// Reverse-mode accumulation from a scalar root into every tracked leaf.
    ///
    /// Leaf gradients accumulate across calls until [`Tensor::zero_grad`].
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarRoot(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Err(TensorError::invalid("backward", "root is not connected to any tracked tensor"));
        }
        let mut pending: HashMap<usize, Vec<f32>> = HashMap::new();
        pending.insert(self.id(), vec![1.0]);
        for node in self.topo_order().iter().rev() {
            let Some(g) = pending.remove(&node.id()) else {
                continue;
            };
            match &node.0.grad_fn {
                None => node.accumulate_grad(&g),
                Some(f) => {
                    let needs: Vec<bool> = f.parents.iter().map(Tensor::requires_grad).collect();
                    let grads = (f.backward)(&g, &needs);
                    debug_assert_eq!(grads.len(), f.parents.len(), "{}", f.op);
                    for (parent, pg) in f.parents.iter().zip(grads) {
                        let Some(pg) = pg else { continue };
                        if !parent.requires_grad() {
                            continue;
                        }
                        if is_checked() && pg.iter().any(|v| !v.is_finite()) {
                            return Err(TensorError::NonFinite { op: f.op });
                        }
                        match pending.get_mut(&parent.id()) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                            None => {
                                pending.insert(parent.id(), pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::new(vec![1.0, 2.0, 3.0], &[2, 2]).is_err());
        assert!(Tensor::new(vec![1.0], &[0]).is_err());
        assert_eq!(Tensor::new(vec![0.0; 6], &[2, 3]).unwrap().numel(), 6);
    }

    #[test]
    fn non_finite_rejected_in_checked_mode() {
        let err = Tensor::new(vec![f32::NAN], &[1]).unwrap_err();
        assert!(err.is_numeric());
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let x = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        let y = x.scale(2.0).unwrap();
        assert!(matches!(y.backward(), Err(TensorError::NonScalarRoot(_))));
    }

    #[test]
    fn sum_gradient_is_ones() {
        let x = Tensor::param(vec![1.0, -2.0, 3.0], &[3]).unwrap();
        x.sum().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_gradient_and_accumulation() {
        let x = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        let loss = x.mul(&x).unwrap().sum().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 4.0]);
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0, 8.0]);
        x.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn fan_out_sums_contributions() {
        // loss = sum(3x) + sum(x*x)  -> d/dx = 3 + 2x
        let x = Tensor::param(vec![0.5, -1.0], &[2]).unwrap();
        let a = x.scale(3.0).unwrap().sum().unwrap();
        let b = x.mul(&x).unwrap().sum().unwrap();
        a.add(&b).unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0, 1.0]);
    }

    #[test]
    fn untracked_graph_is_not_recorded() {
        let x = Tensor::new(vec![1.0, 2.0], &[2]).unwrap();
        let y = x.scale(2.0).unwrap();
        assert!(!y.requires_grad());
        assert!(y.is_leaf());
        assert!(y.sum().unwrap().backward().is_err());
    }
}
