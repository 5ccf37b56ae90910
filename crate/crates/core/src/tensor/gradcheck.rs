//! Central finite-difference checks of tape gradients.
//!
//! The numerical side only evaluates forward values, so it is independent of
//! every backward rule it is used to check.

use super::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Upper bound on probed entries per input; larger inputs are strided.
    pub max_probes_per_input: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-4,
            tolerance: 1e-3,
            max_probes_per_input: usize::MAX,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Mismatch {
    pub input: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub probes: usize,
    pub worst: Option<Mismatch>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.worst.map_or(0.0, |w| w.rel_err)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err() < self.tolerance
    }
}

/// `|analytic - numeric| / (|numeric| + 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (numeric.abs() + 1e-8)
}

/// Compares reverse-mode gradients of the scalar `f(inputs)` against central
/// differences for every (or a strided subset of every) input entry.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], cfg: GradCheckConfig, f: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let analytic: Vec<Tensor<f64>> = {
        let tape = Tape::new();
        let vars: Vec<Var<'_, f64>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = f(&tape, &vars)?;
        let grads = tape.backward(loss)?;
        vars.iter().map(|&v| grads.wrt(v)).collect()
    };
    let eval = |probe: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_, f64>> = probe.iter().map(|t| tape.constant(t.clone())).collect();
        Ok(f(&tape, &vars)?.item())
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut report = GradCheckReport {
        probes: 0,
        worst: None,
        tolerance: cfg.tolerance,
    };
    for (input, grad) in analytic.iter().enumerate() {
        let n = inputs[input].numel();
        let stride = n.div_ceil(cfg.max_probes_per_input.max(1)).max(1);
        for element in (0..n).step_by(stride) {
            let orig = work[input].data()[element];
            work[input].data_mut()[element] = orig + cfg.step;
            let plus = eval(&work)?;
            work[input].data_mut()[element] = orig - cfg.step;
            let minus = eval(&work)?;
            work[input].data_mut()[element] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = grad.data()[element];
            let rel_err = relative_error(a, numeric);
            report.probes += 1;
            if report.worst.is_none_or(|w| rel_err > w.rel_err) {
                report.worst = Some(Mismatch {
                    input,
                    element,
                    analytic: a,
                    numeric,
                    rel_err,
                });
            }
        }
    }
    Ok(report)
}

/// Like [`check_gradients`], but probes the stored parameters in `ids`.
/// `f` must fetch parameters through `tape.param(store, id)`.
pub fn check_param_gradients<F>(
    store: &ParamStore<f64>,
    ids: &[ParamId],
    cfg: GradCheckConfig,
    f: F,
) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &ParamStore<f64>) -> Result<Var<'t, f64>>,
{
    let analytic: Vec<Tensor<f64>> = {
        let tape = Tape::new();
        let loss = f(&tape, store)?;
        let grads = tape.backward(loss)?;
        ids.iter()
            .map(|&id| {
                let shape = store.value(id).shape().to_vec();
                match grads.param(id) {
                    Some(g) => Tensor::new(&shape, g.to_vec()),
                    None => Ok(Tensor::zeros(&shape)),
                }
            })
            .collect::<Result<_>>()?
    };
    let mut work = store.clone();
    let mut report = GradCheckReport {
        probes: 0,
        worst: None,
        tolerance: cfg.tolerance,
    };
    for (input, (&id, grad)) in ids.iter().zip(&analytic).enumerate() {
        let n = grad.numel();
        let stride = n.div_ceil(cfg.max_probes_per_input.max(1)).max(1);
        for element in (0..n).step_by(stride) {
            let orig = work.value(id).data()[element];
            let mut eval = |v: f64| -> Result<f64> {
                work.get_mut(id).value.data_mut()[element] = v;
                let tape = Tape::new();
                Ok(f(&tape, &work)?.item())
            };
            let plus = eval(orig + cfg.step)?;
            let minus = eval(orig - cfg.step)?;
            work.get_mut(id).value.data_mut()[element] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = grad.data()[element];
            let rel_err = relative_error(a, numeric);
            report.probes += 1;
            if report.worst.is_none_or(|w| rel_err > w.rel_err) {
                report.worst = Some(Mismatch {
                    input,
                    element,
                    analytic: a,
                    numeric,
                    rel_err,
                });
            }
        }
    }
    Ok(report)
}

/// Fixed pseudo-random projection weights, used to turn a tensor output into
/// a scalar without symmetric cancellations.
pub fn projection_weights(shape: &[usize], seed: u64) -> Tensor<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// `sum(w * y)` for fixed random `w`.
pub fn project<'t>(y: Var<'t, f64>, seed: u64) -> Result<Var<'t, f64>> {
    let w = y.tape().constant(projection_weights(&y.shape(), seed));
    y.mul(w)?.sum()
}
