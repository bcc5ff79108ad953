//! Test-only helpers shared across model test modules.

use crate::data::Interaction;
use crate::model::RatingModel;
use crate::train::{loss_and_grad, loss_value, L2Penalty};

/// Compare every analytic gradient coordinate against a Richardson-extrapolated
/// central finite difference of the loss.
pub(crate) fn gradient_check<M>(
    model: &M,
    batch: &[Interaction],
    l2: Option<&L2Penalty>,
    rel_tol: f64,
    label: &str,
) where
    M: RatingModel + Clone + Sync,
{
    let mut grads = model.new_grads();
    let loss = loss_and_grad(model, batch, l2, &mut grads).unwrap();
    assert!(loss.is_finite(), "{label}: non-finite loss");

    for t in 0..grads.len() {
        for j in 0..grads[t].len() {
            let analytic = grads[t].as_slice()[j];
            assert!(analytic.is_finite(), "{label}: non-finite grad [{t}][{j}]");
            let f = |delta: f64| {
                let mut m = model.clone();
                m.params_mut()[t].as_mut_slice()[j] += delta;
                loss_value(&m, batch, l2).unwrap()
            };
            let d = |h: f64| (f(h) - f(-h)) / (2.0 * h);
            let h = 1e-5;
            let fd = (4.0 * d(h / 2.0) - d(h)) / 3.0;
            let err = (analytic - fd).abs();
            let tol = rel_tol * analytic.abs().max(fd.abs()) + 1e-8;
            assert!(
                err <= tol,
                "{label}: grad mismatch at tensor {t} coord {j}: analytic {analytic}, fd {fd}"
            );
        }
    }
}
