//! Central-difference verification of tape gradients.

use crate::{ParamId, ParamStore, Result, Tape, Var};

/// Gradient magnitudes below this are compared on an absolute scale.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub n_checked: usize,
}

/// Compares backward gradients of the scalar built by `f` against
/// `(f(x+h) − f(x−h)) / 2h` for every entry of every parameter in
/// `store`. Error per entry is `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn gradient_check<F>(store: &mut ParamStore, h: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    let analytic: Vec<Option<Vec<f64>>> = {
        let mut tape = Tape::new(store);
        let loss = f(&mut tape)?;
        tape.backward(loss)?.into_param_grads()
    };
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new(store);
        let loss = f(&mut tape)?;
        Ok(tape.scalar(loss))
    };
    let ids: Vec<ParamId> = store.ids().collect();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        n_checked: 0,
    };
    for id in ids {
        let n = store.get(id).len();
        for k in 0..n {
            let orig = store.get(id).data()[k];
            store.get_mut(id).data_mut()[k] = orig + h;
            let fp = eval(store)?;
            store.get_mut(id).data_mut()[k] = orig - h;
            let fm = eval(store)?;
            store.get_mut(id).data_mut()[k] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[id.index()].as_ref().map_or(0.0, |g| g[k]);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
            report.n_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                if err >= report.max_rel_error {
                    report.worst = Some((store.name(id).to_string(), k));
                }
            }
        }
    }
    Ok(report)
}
