use crate::error::{Result, TensorError};
use crate::store::VarStore;
use crate::tensor::{is_checked, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
    pub weight_decay: f32,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.learning_rate >= 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(TensorError::invalid("adamw", format!("invalid hyperparameters {self:?}")))
        }
    }
}

/// Adam with decoupled weight decay and bias correction.
///
/// Moment buffers are indexed like the store they were created for.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step_count: u64,
    first_moment: Vec<Vec<f32>>,
    second_moment: Vec<Vec<f32>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, store: &VarStore) -> Result<Self> {
        config.validate()?;
        let zeros: Vec<Vec<f32>> = store.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Ok(AdamW {
            config,
            step_count: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        })
    }

    pub fn first_moment(&self, index: usize) -> &[f32] {
        &self.first_moment[index]
    }

    pub fn second_moment(&self, index: usize) -> &[f32] {
        &self.second_moment[index]
    }

    /// Applies one update at the configured learning rate.
    pub fn step(&mut self, store: &mut VarStore) -> Result<()> {
        let lr = self.config.learning_rate;
        self.step_with_lr(store, lr)
    }

    /// Applies one update at an explicit learning rate (for schedules).
    ///
    /// A parameter that received no gradient is treated as having a zero one.
    pub fn step_with_lr(&mut self, store: &mut VarStore, lr: f32) -> Result<()> {
        if store.len() != self.first_moment.len() {
            return Err(TensorError::invalid(
                "adamw",
                format!("state tracks {} tensors, store has {}", self.first_moment.len(), store.len()),
            ));
        }
        let grads: Vec<Option<Vec<f32>>> = store.ids().map(|id| store.get(id).grad()).collect();
        if is_checked() && grads.iter().flatten().flatten().any(|g| !g.is_finite()) {
            return Err(TensorError::NonFinite { op: "adamw" });
        }
        let AdamWConfig {
            beta1,
            beta2,
            epsilon,
            weight_decay,
            ..
        } = self.config;
        self.step_count += 1;
        let t = self.step_count as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let param = store.get(id);
            let m = &mut self.first_moment[k];
            let v = &mut self.second_moment[k];
            if m.len() != param.numel() {
                return Err(TensorError::shape("adamw", &[m.len()], param.shape()));
            }
            let mut updated = param.to_vec();
            for j in 0..updated.len() {
                let g = grads[k].as_ref().map_or(0.0, |g| g[j]);
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                let m_hat = m[j] / bias1;
                let v_hat = v[j] / bias2;
                let p = updated[j];
                updated[j] = p - lr * weight_decay * p - lr * m_hat / (v_hat.sqrt() + epsilon);
            }
            let shape = param.shape().to_vec();
            store.set(id, Tensor::param(updated, &shape)?)?;
        }
        Ok(())
    }
}

/// Linear warmup to a peak rate, then either constant or linear decay to zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub peak: f32,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub decay: bool,
}

impl LrSchedule {
    pub fn constant(lr: f32) -> Self {
        LrSchedule {
            peak: lr,
            warmup_steps: 0,
            total_steps: usize::MAX,
            decay: false,
        }
    }

    /// Learning rate for the update with zero-based index `step`.
    pub fn at(&self, step: usize) -> f32 {
        if step < self.warmup_steps {
            return self.peak * (step + 1) as f32 / self.warmup_steps as f32;
        }
        if !self.decay || self.total_steps <= self.warmup_steps {
            return self.peak;
        }
        let remaining = self.total_steps.saturating_sub(step) as f32;
        self.peak * remaining / (self.total_steps - self.warmup_steps) as f32
    }
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(store: &VarStore, max_norm: f32) -> f32 {
    let total: f64 = store
        .iter()
        .filter_map(|(_, t)| t.grad())
        .flat_map(|g| g.into_iter())
        .map(|v| (v as f64) * (v as f64))
        .sum();
    let norm = total.sqrt() as f32;
    if norm > max_norm && norm > 0.0 {
        let factor = max_norm / norm;
        store.iter().for_each(|(_, t)| t.scale_grad(factor));
    }
    norm
}
