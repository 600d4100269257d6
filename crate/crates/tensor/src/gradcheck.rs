//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates the forward function, so it is an
//! independent oracle for whatever backward rules produced the analytic side.

use rand::seq::index::sample;

use crate::error::Result;
use crate::rng::{stream_rng, Stream};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Perturbation half-width.
    pub step: f32,
    /// Upper bound on coordinates probed per input; `None` probes all.
    pub max_coords: Option<usize>,
    /// Seed for choosing probed coordinates.
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-3,
            max_coords: None,
            seed: 0,
        }
    }
}

/// Compares reverse-mode gradients of the scalar `f(inputs)` with central
/// differences, returning one relative error per input:
/// `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂)` over the probed
/// coordinates (0 when both norms vanish).
pub fn relative_errors<F>(inputs: &[Tensor], f: F, opts: GradCheckOptions) -> Result<Vec<f32>>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let leaves: Vec<Tensor> = inputs.iter().map(|t| t.with_requires_grad(true)).collect();
    f(&leaves)?.backward()?;
    let mut rng = stream_rng(opts.seed, Stream::Synthetic);
    let mut errors = Vec::with_capacity(inputs.len());
    for (i, leaf) in leaves.iter().enumerate() {
        let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; leaf.numel()]);
        let coords: Vec<usize> = match opts.max_coords {
            Some(k) if k < leaf.numel() => {
                let mut c = sample(&mut rng, leaf.numel(), k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..leaf.numel()).collect(),
        };
        let mut diff2 = 0.0f64;
        let mut a2 = 0.0f64;
        let mut n2 = 0.0f64;
        for &j in &coords {
            let eval = |delta: f32| -> Result<f64> {
                let mut data = leaf.to_vec();
                data[j] += delta;
                let mut probe = leaves.clone();
                probe[i] = Tensor::new(data, leaf.shape())?;
                Ok(f(&probe)?.item() as f64)
            };
            let h = opts.step;
            let numeric = (eval(h)? - eval(-h)?) / (2.0 * h as f64);
            let a = analytic[j] as f64;
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
        }
        let denom = a2.sqrt().max(n2.sqrt());
        errors.push(if denom < 1e-12 { 0.0 } else { (diff2.sqrt() / denom) as f32 });
    }
    Ok(errors)
}

/// Largest of [`relative_errors`].
pub fn max_relative_error<F>(inputs: &[Tensor], f: F, opts: GradCheckOptions) -> Result<f32>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    Ok(relative_errors(inputs, f, opts)?.into_iter().fold(0.0, f32::max))
}
