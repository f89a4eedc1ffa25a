//! Central-difference check of tape gradients.

use alloc::format;
use alloc::vec::Vec;

use crate::params::ModelParams;
use crate::tape::{Tape, Var};
use crate::{Error, Result};

fn evaluate<F>(f: &F, params: &ModelParams) -> Result<(Tape, Vec<Var>, Var)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let out = f(&mut tape, &vars)?;
    let value = tape.value(out);
    if value.shape() != (1, 1) {
        return Err(Error::NonScalarLoss(value.rows(), value.cols()));
    }
    if !value.item().is_finite() {
        return Err(Error::NonFinite(format!("objective = {}", value.item())));
    }
    Ok((tape, vars, out))
}

/// Compares the tape gradient of `f` with central differences on every
/// parameter coordinate.
///
/// Returns `max |g_ad - g_fd| / max(1, |g_ad|, |g_fd|)`. `f` must be
/// deterministic: any dropout inside it has to use fixed seeds.
pub fn grad_check<F>(f: F, params: &ModelParams, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {eps}")));
    }
    let (mut tape, vars, out) = evaluate(&f, params)?;
    tape.backward(out)?;
    let mut analytic = params.zeros_like();
    analytic.accumulate_grads(&tape, &vars);

    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for id in params.ids() {
        for k in 0..params.get(id).len() {
            let orig = params.get(id).data()[k];
            probe.get_mut(id).data_mut()[k] = orig + eps;
            let plus = evaluate(&f, &probe)?;
            let plus = plus.0.value(plus.2).item();
            probe.get_mut(id).data_mut()[k] = orig - eps;
            let minus = evaluate(&f, &probe)?;
            let minus = minus.0.value(minus.2).item();
            probe.get_mut(id).data_mut()[k] = orig;

            let fd = (plus - minus) / (2.0 * eps);
            let ad = analytic.get(id).data()[k];
            if !ad.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {}[{k}]", params.name(id))));
            }
            let err = (ad - fd).abs() / 1.0f64.max(ad.abs()).max(fd.abs());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
