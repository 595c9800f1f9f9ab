use super::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// Outcome of comparing tape gradients against central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// max over entries of `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`
    pub max_rel_error: f64,
    /// parameter name and flat index of the worst entry
    pub worst: Option<(String, usize)>,
    /// analytic and numeric derivative at the worst entry
    pub worst_values: (f64, f64),
    pub entries: usize,
}

/// Checks the reverse-mode gradient of the scalar built by `f` against
/// central finite differences for every entry of `params`.
///
/// `f` must be deterministic: it is re-run twice per checked entry on a
/// fresh tape bound to the perturbed store.
pub fn grad_check<F>(store: &mut ParamStore, params: &[ParamId], eps: f64, mut f: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape) -> Result<Var>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::Contract(format!("grad_check eps must be > 0, got {eps}")));
    }
    let analytic = {
        let mut tape = Tape::new(store);
        let loss = f(&mut tape)?;
        let value = tape.item(loss);
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("unperturbed loss is {value}")));
        }
        let grads = tape.backward(loss)?;
        params
            .iter()
            .map(|&id| {
                grads
                    .get(id)
                    .map(|g| g.data().to_vec())
                    .unwrap_or_else(|| vec![0.0; store.get(id).numel()])
            })
            .collect::<Vec<_>>()
    };

    let mut eval = |store: &ParamStore, id: ParamId, idx: usize, delta: f64| -> Result<f64> {
        let mut tape = Tape::new(store);
        let loss = f(&mut tape)?;
        let value = tape.item(loss);
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::NonFinite(format!(
                "loss is {value} with {}[{idx}] perturbed by {delta:+e}",
                store.name(id)
            )))
        }
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_values: (0.0, 0.0),
        entries: 0,
    };
    for (&id, grad) in params.iter().zip(&analytic) {
        for (idx, &a) in grad.iter().enumerate() {
            let original = store.get(id).data()[idx];
            store.get_mut(id).data_mut()[idx] = original + eps;
            let plus = eval(store, id, idx, eps);
            store.get_mut(id).data_mut()[idx] = original - eps;
            let minus = eval(store, id, idx, -eps);
            store.get_mut(id).data_mut()[idx] = original;
            let numeric = (plus? - minus?) / (2.0 * eps);
            let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            report.entries += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((store.name(id).to_string(), idx));
                report.worst_values = (a, numeric);
            }
        }
    }
    Ok(report)
}
