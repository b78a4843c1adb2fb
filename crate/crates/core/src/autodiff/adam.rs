//! Bias-corrected Adam update over a list of parameter tensors.

use super::real::{c, Real};
use super::AutodiffError;

/// Adam hyperparameters. Defaults: lr 1e-3, β1 0.9, β2 0.999, ε 1e-8.
#[derive(Debug, Clone, Copy)]
pub struct AdamHyper<T: Real> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Real> AdamHyper<T> {
    pub fn with_lr(lr: T) -> Self {
        AdamHyper {
            lr,
            beta1: c(0.9),
            beta2: c(0.999),
            eps: c(1e-8),
        }
    }
}

impl<T: Real> Default for AdamHyper<T> {
    fn default() -> Self {
        Self::with_lr(c(1e-3))
    }
}

/// Per-parameter first and second moments plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState<T: Real> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: u64,
}

impl<T: Real> AdamState<T> {
    /// Zero moments for parameters of the given lengths.
    pub fn new(param_lens: &[usize]) -> Self {
        AdamState {
            m: param_lens.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: param_lens.iter().map(|&n| vec![T::zero(); n]).collect(),
            t: 0,
        }
    }

    /// Completed steps.
    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Second moments are nonnegative by construction; exposed for tests.
    pub fn second_moments(&self) -> &[Vec<T>] {
        &self.v
    }
}

/// One bias-corrected Adam step:
/// `m ← β1·m + (1-β1)·g`, `v ← β2·v + (1-β2)·g²`, `t ← t+1`,
/// `θ ← θ - lr·m̂/(√v̂ + ε)` with `m̂ = m/(1-β1^t)`, `v̂ = v/(1-β2^t)`.
pub fn adam_step<T: Real>(
    params: &mut [&mut [T]],
    grads: &[&[T]],
    state: &mut AdamState<T>,
    hyper: &AdamHyper<T>,
) -> Result<(), AutodiffError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(AutodiffError::ShapeMismatch(format!(
            "adam_step: {} params, {} grads, state for {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads.iter()).enumerate() {
        if p.len() != g.len() || p.len() != state.m[i].len() {
            return Err(AutodiffError::ShapeMismatch(format!(
                "adam_step: tensor {i} has {} params, {} grads, state {}",
                p.len(),
                g.len(),
                state.m[i].len()
            )));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let one = T::one();
    let bc1 = one - hyper.beta1.powi(t);
    let bc2 = one - hyper.beta2.powi(t);
    for i in 0..params.len() {
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        let g = grads[i];
        let p = &mut *params[i];
        for j in 0..p.len() {
            m[j] = hyper.beta1 * m[j] + (one - hyper.beta1) * g[j];
            v[j] = hyper.beta2 * v[j] + (one - hyper.beta2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] = p[j] - hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Closed-form first step: m̂ = g, v̂ = g², so Δθ = -lr·g/(|g| + ε).
    #[test]
    fn first_step_matches_closed_form() {
        let mut theta = vec![0.0f64];
        let grads = vec![0.5f64];
        let mut state = AdamState::new(&[1]);
        let hyper = AdamHyper::with_lr(1e-3);
        adam_step(
            &mut [theta.as_mut_slice()],
            &[grads.as_slice()],
            &mut state,
            &hyper,
        )
        .unwrap();
        let expected = -1e-3 * 0.5 / (0.5 + 1e-8);
        assert!((theta[0] - expected).abs() < 1e-15, "{}", theta[0]);
        assert!((theta[0] - (-9.999_999_8e-4)).abs() < 1e-12);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut theta = vec![1.25f32, -0.5];
        let grads = vec![0.0f32, 0.0];
        let mut state = AdamState::new(&[2]);
        adam_step(
            &mut [theta.as_mut_slice()],
            &[grads.as_slice()],
            &mut state,
            &AdamHyper::default(),
        )
        .unwrap();
        assert_eq!(theta, vec![1.25, -0.5]);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut theta = vec![0.3f32, -0.7, 0.1];
            let mut state = AdamState::new(&[3]);
            let hyper = AdamHyper::with_lr(1e-2);
            for step in 0..25 {
                let g: Vec<f32> = theta.iter().map(|&x| 2.0 * x + step as f32 * 0.01).collect();
                adam_step(
                    &mut [theta.as_mut_slice()],
                    &[g.as_slice()],
                    &mut state,
                    &hyper,
                )
                .unwrap();
            }
            theta
        };
        let a = run();
        let b = run();
        assert_eq!(
            a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn second_moments_stay_nonnegative() {
        let mut theta = vec![0.3f32; 4];
        let mut state = AdamState::new(&[4]);
        for step in 0..50 {
            let g: Vec<f32> = (0..4).map(|i| ((step * 7 + i) as f32).sin()).collect();
            adam_step(
                &mut [theta.as_mut_slice()],
                &[g.as_slice()],
                &mut state,
                &AdamHyper::default(),
            )
            .unwrap();
        }
        assert!(state.second_moments()[0].iter().all(|&v| v >= 0.0));
        assert_eq!(state.step_count(), 50);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut theta = vec![0.0f32; 3];
        let grads = vec![0.0f32; 2];
        let mut state = AdamState::new(&[3]);
        assert!(adam_step(
            &mut [theta.as_mut_slice()],
            &[grads.as_slice()],
            &mut state,
            &AdamHyper::default(),
        )
        .is_err());
    }
}
