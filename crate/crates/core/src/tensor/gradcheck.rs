use super::{Result, TensorError};
use crate::dense::Matrix;

/// Floor on the denominator of the relative error, so entries whose true
/// gradient is zero are judged by absolute error.
pub const REL_ERROR_FLOOR: f64 = 1e-4;

/// Compares analytic gradients with central finite differences.
///
/// `f` maps parameters to `(loss, gradients)`. It is evaluated twice at the
/// unperturbed point first; any difference is reported as
/// [`TensorError::NondeterministicForward`]. At most `max_entries` entries of
/// each parameter are checked, evenly strided. Returns the largest
/// `|analytic - numeric| / max(|analytic|, |numeric|, REL_ERROR_FLOOR)`.
pub fn finite_diff_check<F>(mut f: F, params: &[Matrix], eps: f64, max_entries: usize) -> Result<f64>
where
    F: FnMut(&[Matrix]) -> Result<(f64, Vec<Matrix>)>,
{
    let (loss, grads) = f(params)?;
    let (loss2, grads2) = f(params)?;
    if loss.to_bits() != loss2.to_bits() || grads != grads2 {
        return Err(TensorError::NondeterministicForward);
    }
    if grads.len() != params.len() {
        return Err(TensorError::ShapeMismatch {
            op: "finite_diff_check",
            left: (params.len(), 0),
            right: (grads.len(), 0),
        });
    }
    let mut worst: f64 = 0.0;
    let mut work = params.to_vec();
    for (k, param) in params.iter().enumerate() {
        if grads[k].shape() != param.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "finite_diff_check",
                left: param.shape(),
                right: grads[k].shape(),
            });
        }
        let len = param.len();
        let stride = len.div_ceil(max_entries.max(1)).max(1);
        for i in (0..len).step_by(stride) {
            let orig = param.as_slice()[i];
            work[k].as_mut_slice()[i] = orig + eps;
            let plus = f(&work)?.0;
            work[k].as_mut_slice()[i] = orig - eps;
            let minus = f(&work)?.0;
            work[k].as_mut_slice()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = grads[k].as_slice()[i];
            let denom = analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
            worst = worst.max((analytic - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
