//! Central-difference verification of analytic gradients (64-bit only).

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Denominator floor of [`relative_error`]. Below this magnitude the
/// comparison degrades to an absolute error, since finite differences
/// cannot resolve gradients much smaller than their own round-off.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter index, flat coordinate)` of the worst coordinate.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

/// Compares the analytic gradient of `loss` with respect to the selected
/// parameters against central differences with step `h`.
///
/// `loss` builds a scalar loss node on a fresh graph from the parameter
/// vars it is handed (in the order of `params`). `which` restricts the check
/// to a subset of parameter indices; `None` checks all of them.
pub fn grad_check<F>(params: &[Tensor<f64>], which: Option<&[usize]>, h: f64, mut loss: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut eval = |ps: &[Tensor<f64>], backward: bool| -> Result<(f64, Vec<Option<Tensor<f64>>>)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.param(p.clone())).collect();
        let out = loss(&mut g, &vars)?;
        let value = g.value(out).item();
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: "grad_check loss" });
        }
        if !backward {
            return Ok((value, Vec::new()));
        }
        g.backward(out)?;
        Ok((value, vars.iter().map(|&v| g.grad(v).cloned()).collect()))
    };

    let (_, grads) = eval(params, true)?;
    let all: Vec<usize> = (0..params.len()).collect();
    let selected = which.unwrap_or(&all);
    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        coordinates: 0,
    };
    for &pi in selected {
        for ci in 0..params[pi].len() {
            let orig = params[pi].data()[ci];
            work[pi].data_mut()[ci] = orig + h;
            let (plus, _) = eval(&work, false)?;
            work[pi].data_mut()[ci] = orig - h;
            let (minus, _) = eval(&work, false)?;
            work[pi].data_mut()[ci] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let analytic = grads[pi].as_ref().map_or(0.0, |g| g.data()[ci]);
            let err = relative_error(analytic, numeric);
            report.coordinates += 1;
            if err > report.max_rel_error || report.coordinates == 1 {
                report.max_rel_error = err;
                report.worst = (pi, ci);
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
