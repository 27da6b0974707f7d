//! Finite-difference verification of reverse-mode gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, NumericsError, Tensor, Var};

#[derive(Clone, Debug)]
pub struct FdOptions {
    pub epsilon: f64,
    /// Upper bound on the number of elements perturbed per input; larger
    /// inputs are probed at evenly spaced positions.
    pub max_probes: usize,
    /// Denominator floor of the relative error, so that gradients that are
    /// zero on both routes do not divide by zero.
    pub floor: f64,
    /// Build the graphs in training mode (batch-norm uses batch moments).
    pub train: bool,
}

impl Default for FdOptions {
    fn default() -> Self {
        Self { epsilon: 1e-5, max_probes: 48, floor: 1e-3, train: false }
    }
}

#[derive(Clone, Debug)]
pub struct FdReport {
    pub max_relative_error: f64,
    /// `(input index, element index)` of the worst disagreement.
    pub worst: Option<(usize, usize)>,
    pub probes: usize,
}

fn reduction_weights(shape: &[usize]) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    Tensor::from_fn(shape, |_| rng.random_range(0.5..1.5) * if rng.random::<bool>() { 1.0 } else { -1.0 })
}

fn evaluate<F>(op: &F, inputs: &[Tensor], weights: Option<&Tensor>, train: bool) -> Result<(f64, Tensor), NumericsError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, NumericsError>,
{
    let mut g = if train { Graph::training() } else { Graph::new() };
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = op(&mut g, &vars)?;
    let w = match weights {
        Some(w) => w.clone(),
        None => reduction_weights(g.shape(out)),
    };
    let s: f64 = g.value(out).data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
    Ok((s, w))
}

/// Compares reverse-mode gradients of `op` against central differences
/// `(f(x+ε) − f(x−ε)) / 2ε` of a fixed random weighted sum of its output, and
/// returns the worst relative error over all probed input elements.
pub fn finite_difference_check<F>(
    op: F,
    inputs: &[Tensor],
    opts: &FdOptions,
) -> Result<FdReport, NumericsError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, NumericsError>,
{
    let (_, weights) = evaluate(&op, inputs, None, opts.train)?;

    let mut g = if opts.train { Graph::training() } else { Graph::new() };
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = op(&mut g, &vars)?;
    let loss = g.weighted_sum(out, &weights)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let mut report = FdReport { max_relative_error: 0.0, worst: None, probes: 0 };
    for (i, input) in inputs.iter().enumerate() {
        let n = input.len();
        let step = if n > opts.max_probes { n.div_ceil(opts.max_probes) } else { 1 };
        for j in (0..n).step_by(step) {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += opts.epsilon;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= opts.epsilon;
            let (fp, _) = evaluate(&op, &plus, Some(&weights), opts.train)?;
            let (fm, _) = evaluate(&op, &minus, Some(&weights), opts.train)?;
            let numeric = (fp - fm) / (2.0 * opts.epsilon);
            let a = analytic[i].data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            report.probes += 1;
            if rel > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = report.max_relative_error.max(rel);
                if rel >= report.max_relative_error {
                    report.worst = Some((i, j));
                }
            }
        }
    }
    Ok(report)
}
