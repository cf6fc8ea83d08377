use super::params::{Graph, ParamSet};
use super::tape::Var;
use crate::error::Result;

pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub entries_checked: usize,
}

/// Compares tape gradients of `f` against central differences for every
/// entry of every parameter in `params`.
///
/// The error for one entry is `|analytic - numeric| / (|analytic| + 1e-8)`;
/// the report carries the maximum. `params` is restored before returning.
pub fn grad_check<F>(params: &mut ParamSet, h: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new(params);
        let loss = f(&mut g)?;
        let mut full: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        for (id, grad) in g.param_grads(loss)? {
            full[id.0] = grad.into_data();
        }
        full
    };

    let eval = |params: &ParamSet| -> Result<f64> {
        let mut g = Graph::new(params);
        let loss = f(&mut g)?;
        g.value(loss).item()
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        entries_checked: 0,
    };
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        for k in 0..params.value(id).len() {
            let orig = params.value(id).data()[k];
            params.value_mut(id).data_mut()[k] = orig + h;
            let plus = eval(params);
            params.value_mut(id).data_mut()[k] = orig - h;
            let minus = eval(params);
            params.value_mut(id).data_mut()[k] = orig;
            let numeric = (plus? - minus?) / (2.0 * h);
            let a = analytic[id.0][k];
            let rel = (a - numeric).abs() / (a.abs() + 1e-8);
            report.entries_checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((params.get(id).name.clone(), k));
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    Ok(report)
}
