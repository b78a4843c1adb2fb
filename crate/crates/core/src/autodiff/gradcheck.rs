//! Central finite-difference verification of tape gradients.
//!
//! The checker compares analytic gradients against `(f(x+ε) - f(x-ε)) / 2ε`
//! in 64-bit mode, with the relative error of each element taken over
//! `max(|analytic|, |numeric|, 1e-12)`. Checked losses are random
//! projections of the op output, so index bugs cannot hide behind
//! translation-invariant reductions.

use super::real::Real;
use super::tape::{Padding, Tape, Var};
use super::AutodiffError;
use crate::rng::SeedStream;

/// Named differentiable subgraphs covered by [`op_check`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Relu,
    Sigmoid,
    MulSum,
    Conv2dSame,
    Conv2dValid,
    ConvTranspose2,
    MaxPool2,
    ConcatChannels,
    BceWithLogits,
    /// conv → pool → transposed-conv chain.
    ConvPoolStack,
}

impl OpKind {
    pub const ALL: [OpKind; 10] = [
        OpKind::Relu,
        OpKind::Sigmoid,
        OpKind::MulSum,
        OpKind::Conv2dSame,
        OpKind::Conv2dValid,
        OpKind::ConvTranspose2,
        OpKind::MaxPool2,
        OpKind::ConcatChannels,
        OpKind::BceWithLogits,
        OpKind::ConvPoolStack,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::MulSum => "mul+sum",
            OpKind::Conv2dSame => "conv2d(same)",
            OpKind::Conv2dValid => "conv2d(valid)",
            OpKind::ConvTranspose2 => "conv_transpose2",
            OpKind::MaxPool2 => "maxpool2",
            OpKind::ConcatChannels => "concat_channels",
            OpKind::BceWithLogits => "bce_with_logits",
            OpKind::ConvPoolStack => "conv-pool-transpose stack",
        }
    }

    /// Elementwise ops check much tighter than spatial ones.
    pub fn error_bound(&self) -> f64 {
        match self {
            OpKind::Relu | OpKind::Sigmoid | OpKind::MulSum | OpKind::BceWithLogits => 1e-8,
            _ => 1e-6,
        }
    }
}

/// Analytic and numeric gradients of one check, per input tensor.
pub struct CheckOutcome {
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
    pub max_rel_err: f64,
}

/// Worst elementwise relative error between two gradient vectors.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-12))
        .fold(0.0, f64::max)
}

/// Checks a scalar-valued graph builder against central differences.
///
/// `build` must deterministically reconstruct the same graph from the given
/// leaf values; it is re-invoked for every perturbed evaluation.
pub fn check_scalar_fn<F>(
    inputs: &[(Vec<usize>, Vec<f64>)],
    build: F,
    eps: f64,
) -> Result<CheckOutcome, AutodiffError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, AutodiffError>,
{
    let eval = |values: &[Vec<f64>]| -> Result<f64, AutodiffError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs
            .iter()
            .zip(values)
            .map(|((shape, _), data)| tape.leaf(shape, data.clone()))
            .collect();
        let loss = build(&mut tape, &vars)?;
        Ok(tape.data(loss)[0])
    };

    // Analytic pass.
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|(shape, data)| tape.leaf(shape, data.clone()))
        .collect();
    let loss = build(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| tape.grad(v).to_vec()).collect();

    // Numeric pass.
    let base: Vec<Vec<f64>> = inputs.iter().map(|(_, data)| data.clone()).collect();
    let mut numeric = Vec::with_capacity(inputs.len());
    let mut work = base.clone();
    for k in 0..inputs.len() {
        let mut grads = vec![0.0; base[k].len()];
        for j in 0..base[k].len() {
            let x0 = base[k][j];
            work[k][j] = x0 + eps;
            let plus = eval(&work)?;
            work[k][j] = x0 - eps;
            let minus = eval(&work)?;
            work[k][j] = x0;
            grads[j] = (plus - minus) / (2.0 * eps);
        }
        numeric.push(grads);
    }

    let max_rel_err = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| rel_err(a, n))
        .fold(0.0, f64::max);
    Ok(CheckOutcome {
        analytic,
        numeric,
        max_rel_err,
    })
}

/// Runs `trials` randomized finite-difference checks of one op and returns
/// the worst relative error seen.
///
/// Inputs that would make the graph non-differentiable at the probe scale —
/// a max-pool window tie or a relu input within the perturbation — are
/// resampled before checking.
pub fn op_check(kind: OpKind, eps: f64, trials: usize, seed: u64) -> Result<f64, AutodiffError> {
    let mut worst: f64 = 0.0;
    for trial in 0..trials {
        let outcome = run_trial(kind, eps, seed, trial as u64)?;
        worst = worst.max(outcome.max_rel_err);
    }
    Ok(worst)
}

fn draw(rng: &mut SeedStream, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.range_f64(lo, hi)).collect()
}

fn run_trial(
    kind: OpKind,
    eps: f64,
    seed: u64,
    trial: u64,
) -> Result<CheckOutcome, AutodiffError> {
    // Kink margin: a perturbation of ±eps must not cross a relu zero or
    // flip a pooling argmax.
    let margin = 20.0 * eps;
    for attempt in 0..100u64 {
        let mut rng = SeedStream::new(seed ^ (0xC0FFEE + trial), attempt);
        let candidate = build_trial(kind, &mut rng)?;
        if !candidate.safe_at(margin)? {
            continue;
        }
        let TrialCase { inputs, build } = candidate;
        return check_scalar_fn(&inputs, build.as_ref(), eps);
    }
    // Uniform draws collide with kinks with vanishing probability; a
    // hundred straight rejections means the generator itself is wrong.
    panic!("could not sample a differentiable {} instance", kind.name());
}

type Builder = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var, AutodiffError>>;

struct TrialCase {
    inputs: Vec<(Vec<usize>, Vec<f64>)>,
    build: Builder,
}

impl TrialCase {
    /// Probes the unperturbed graph for kinks within `margin`.
    fn safe_at(&self, margin: f64) -> Result<bool, AutodiffError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self
            .inputs
            .iter()
            .map(|(shape, data)| tape.leaf(shape, data.clone()))
            .collect();
        (self.build)(&mut tape, &vars)?;
        if let Some(gap) = tape.min_pool_gap() {
            if gap < margin {
                return Ok(false);
            }
        }
        if let Some(m) = tape.min_relu_margin() {
            if m < margin {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Random projection of a tensor onto a fixed direction, as a scalar.
fn project(tape: &mut Tape<f64>, out: Var, direction: &[f64]) -> Result<Var, AutodiffError> {
    let shape = tape.shape(out).to_vec();
    let r = tape.leaf(&shape, direction.to_vec());
    let prod = tape.mul(out, r)?;
    Ok(tape.sum(prod))
}

fn build_trial(kind: OpKind, rng: &mut SeedStream) -> Result<TrialCase, AutodiffError> {
    Ok(match kind {
        OpKind::Relu => {
            let x = draw(rng, 24, -1.0, 1.0);
            let r = draw(rng, 24, -1.0, 1.0);
            TrialCase {
                inputs: vec![(vec![24], x)],
                build: Box::new(move |tape, vars| {
                    let y = tape.relu(vars[0]);
                    project(tape, y, &r)
                }),
            }
        }
        OpKind::Sigmoid => {
            let x = draw(rng, 24, -4.0, 4.0);
            let r = draw(rng, 24, -1.0, 1.0);
            TrialCase {
                inputs: vec![(vec![24], x)],
                build: Box::new(move |tape, vars| {
                    let y = tape.sigmoid(vars[0]);
                    project(tape, y, &r)
                }),
            }
        }
        OpKind::MulSum => {
            let a = draw(rng, 20, -2.0, 2.0);
            let b = draw(rng, 20, -2.0, 2.0);
            TrialCase {
                inputs: vec![(vec![20], a), (vec![20], b)],
                build: Box::new(|tape, vars| {
                    let p = tape.mul(vars[0], vars[1])?;
                    Ok(tape.sum(p))
                }),
            }
        }
        OpKind::Conv2dSame | OpKind::Conv2dValid => {
            let padding = if kind == OpKind::Conv2dSame {
                Padding::Same
            } else {
                Padding::Valid
            };
            let x = draw(rng, 2 * 3 * 6 * 6, -1.0, 1.0);
            let w = draw(rng, 4 * 3 * 3 * 3, -1.0, 1.0);
            let b = draw(rng, 4, -1.0, 1.0);
            let out_hw = if padding == Padding::Same { 6 } else { 4 };
            let r = draw(rng, 2 * 4 * out_hw * out_hw, -1.0, 1.0);
            TrialCase {
                inputs: vec![
                    (vec![2, 3, 6, 6], x),
                    (vec![4, 3, 3, 3], w),
                    (vec![4], b),
                ],
                build: Box::new(move |tape, vars| {
                    let y = tape.conv2d(vars[0], vars[1], vars[2], padding)?;
                    project(tape, y, &r)
                }),
            }
        }
        OpKind::ConvTranspose2 => {
            let x = draw(rng, 2 * 4 * 5 * 5, -1.0, 1.0);
            let w = draw(rng, 4 * 2 * 2 * 2, -1.0, 1.0);
            let b = draw(rng, 2, -1.0, 1.0);
            let r = draw(rng, 2 * 2 * 10 * 10, -1.0, 1.0);
            TrialCase {
                inputs: vec![
                    (vec![2, 4, 5, 5], x),
                    (vec![4, 2, 2, 2], w),
                    (vec![2], b),
                ],
                build: Box::new(move |tape, vars| {
                    let y = tape.conv_transpose2(vars[0], vars[1], vars[2])?;
                    project(tape, y, &r)
                }),
            }
        }
        OpKind::MaxPool2 => {
            let x = draw(rng, 2 * 3 * 6 * 6, -1.0, 1.0);
            let r = draw(rng, 2 * 3 * 3 * 3, -1.0, 1.0);
            TrialCase {
                inputs: vec![(vec![2, 3, 6, 6], x)],
                build: Box::new(move |tape, vars| {
                    let y = tape.maxpool2(vars[0])?;
                    project(tape, y, &r)
                }),
            }
        }
        OpKind::ConcatChannels => {
            let a = draw(rng, 2 * 2 * 4 * 4, -1.0, 1.0);
            let b = draw(rng, 2 * 3 * 4 * 4, -1.0, 1.0);
            let r = draw(rng, 2 * 5 * 4 * 4, -1.0, 1.0);
            TrialCase {
                inputs: vec![(vec![2, 2, 4, 4], a), (vec![2, 3, 4, 4], b)],
                build: Box::new(move |tape, vars| {
                    let y = tape.concat_channels(vars[0], vars[1])?;
                    project(tape, y, &r)
                }),
            }
        }
        OpKind::BceWithLogits => {
            let x = draw(rng, 40, -3.0, 3.0);
            let targets: Vec<f64> = (0..40)
                .map(|_| if rng.unit_f64() < 0.5 { 1.0 } else { 0.0 })
                .collect();
            let mut valid: Vec<bool> = (0..40).map(|_| rng.unit_f64() < 0.8).collect();
            valid[0] = true;
            TrialCase {
                inputs: vec![(vec![40], x)],
                build: Box::new(move |tape, vars| {
                    tape.bce_with_logits(vars[0], &targets, &valid, 1.7)
                }),
            }
        }
        OpKind::ConvPoolStack => {
            let x = draw(rng, 2 * 8 * 8, -1.0, 1.0);
            let w1 = draw(rng, 4 * 2 * 3 * 3, -0.5, 0.5);
            let b1 = draw(rng, 4, -0.2, 0.2);
            let w2 = draw(rng, 4 * 2 * 2 * 2, -0.5, 0.5);
            let b2 = draw(rng, 2, -0.2, 0.2);
            let r = draw(rng, 2 * 8 * 8, -1.0, 1.0);
            TrialCase {
                inputs: vec![
                    (vec![1, 2, 8, 8], x),
                    (vec![4, 2, 3, 3], w1),
                    (vec![4], b1),
                    (vec![4, 2, 2, 2], w2),
                    (vec![2], b2),
                ],
                build: Box::new(move |tape, vars| {
                    let c = tape.conv2d(vars[0], vars[1], vars[2], Padding::Same)?;
                    let p = tape.maxpool2(c)?;
                    let u = tape.conv_transpose2(p, vars[3], vars[4])?;
                    project(tape, u, &r)
                }),
            }
        }
    })
}
