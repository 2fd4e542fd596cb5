//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Check at most this many entries per tensor (sampled), `None` for all.
    pub max_entries: Option<usize>,
    pub seed: u64,
    /// Relative errors are measured against `max(|analytic|, |numeric|, floor)`.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { eps: 1e-5, max_entries: None, seed: 0, floor: 1e-6 }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `name[index]` of the worst entry.
    pub worst: String,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol && self.max_rel_err.is_finite()
    }
}

/// Builds a scalar-valued graph from parameters and the given inputs.
pub trait Objective {
    fn build(&self, g: &mut Graph<f64>, params: &ParamStore<f64>, inputs: &[Var]) -> Result<Var>;
}

impl<F> Objective for F
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>, &[Var]) -> Result<Var>,
{
    fn build(&self, g: &mut Graph<f64>, params: &ParamStore<f64>, inputs: &[Var]) -> Result<Var> {
        self(g, params, inputs)
    }
}

fn evaluate(f: &dyn Objective, params: &ParamStore<f64>, inputs: &[Tensor<f64>]) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f.build(&mut g, params, &vars)?;
    let v = g.value(out);
    if v.len() != 1 {
        return Err(TensorError::NonScalar(v.shape().to_vec()));
    }
    Ok(v.data()[0])
}

/// Compares every trainable-parameter and input gradient of `f` against
/// central differences.
pub fn grad_check(
    f: &dyn Objective,
    params: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    grad_check_with(f, params, inputs, opts, |_, _| {})
}

/// As [`grad_check`], letting the caller tamper with each analytic gradient
/// before comparison (negative controls).
pub fn grad_check_with(
    f: &dyn Objective,
    params: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    opts: &GradCheckOptions,
    mut tamper: impl FnMut(&str, &mut Tensor<f64>),
) -> Result<GradCheckReport> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f.build(&mut g, params, &vars)?;
    let grads = g.backward(out)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport { max_rel_err: 0.0, worst: String::new(), checked: 0 };
    let record = |name: &str, idx: usize, a: f64, n: f64, report: &mut GradCheckReport| {
        let denom = a.abs().max(n.abs()).max(opts.floor);
        let rel = (a - n).abs() / denom;
        report.checked += 1;
        if rel > report.max_rel_err || rel.is_nan() {
            report.max_rel_err = if rel.is_nan() { f64::INFINITY } else { rel };
            report.worst = format!("{name}[{idx}]");
        }
    };
    let pick = |len: usize, rng: &mut ChaCha8Rng| -> Vec<usize> {
        match opts.max_entries {
            Some(k) if k < len => {
                let mut v = sample(rng, len, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..len).collect(),
        }
    };

    let names: Vec<String> = params.iter().filter(|(_, p)| p.trainable).map(|(n, _)| n.to_string()).collect();
    for name in names {
        let mut analytic = grads
            .param(&name)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(params.value(&name).expect("listed").shape()));
        tamper(&name, &mut analytic);
        let mut perturbed = params.clone();
        for idx in pick(analytic.len(), &mut rng) {
            let orig = params.value(&name)?.data()[idx];
            perturbed.get_mut(&name).expect("cloned").value.data_mut()[idx] = orig + opts.eps;
            let plus = evaluate(f, &perturbed, inputs)?;
            perturbed.get_mut(&name).expect("cloned").value.data_mut()[idx] = orig - opts.eps;
            let minus = evaluate(f, &perturbed, inputs)?;
            perturbed.get_mut(&name).expect("cloned").value.data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * opts.eps);
            record(&name, idx, analytic.data()[idx], numeric, &mut report);
        }
    }

    for (k, (input, var)) in inputs.iter().zip(&vars).enumerate() {
        let name = format!("input{k}");
        let mut analytic = grads.get(*var).cloned().unwrap_or_else(|| Tensor::zeros(input.shape()));
        tamper(&name, &mut analytic);
        let mut xs = inputs.to_vec();
        for idx in pick(input.len(), &mut rng) {
            let orig = input.data()[idx];
            xs[k].data_mut()[idx] = orig + opts.eps;
            let plus = evaluate(f, params, &xs)?;
            xs[k].data_mut()[idx] = orig - opts.eps;
            let minus = evaluate(f, params, &xs)?;
            xs[k].data_mut()[idx] = orig;
            record(&name, idx, analytic.data()[idx], (plus - minus) / (2.0 * opts.eps), &mut report);
        }
    }
    Ok(report)
}
