use super::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Input coordinate where the worst error occurred.
    pub worst_index: usize,
    pub pass: bool,
}

/// Relative error with the magnitude floored at 1, so near-zero gradients
/// are compared absolutely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Compare the analytic gradient returned by `f` against central differences
/// taken with step [`Scalar::FD_STEP`].
///
/// `f` maps an input vector to `(value, gradient)`.
pub fn finite_diff_check<T, F>(f: F, input: &[T], tolerance: f64) -> GradCheckReport
where
    T: Scalar,
    F: Fn(&[T]) -> (T, Vec<T>),
{
    let (_, analytic) = f(input);
    assert_eq!(
        analytic.len(),
        input.len(),
        "gradient length must match input"
    );
    let h = T::of(T::FD_STEP);
    let two_h = T::FD_STEP * 2.0;
    let mut probe = input.to_vec();
    let mut worst = (0.0_f64, 0usize);
    for i in 0..input.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let (plus, _) = f(&probe);
        probe[i] = orig - h;
        let (minus, _) = f(&probe);
        probe[i] = orig;
        let numeric = (plus.as_f64() - minus.as_f64()) / two_h;
        let err = relative_error(analytic[i].as_f64(), numeric);
        if err > worst.0 || err.is_nan() {
            worst = (if err.is_nan() { f64::INFINITY } else { err }, i);
        }
    }
    GradCheckReport {
        max_rel_err: worst.0,
        worst_index: worst.1,
        pass: worst.0 <= tolerance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let coeffs = [0.5, -2.0, 3.25];
        let report = finite_diff_check(
            |x: &[f64]| {
                (
                    x.iter().zip(coeffs).map(|(a, c)| a * c).sum(),
                    coeffs.to_vec(),
                )
            },
            &[1.0, 2.0, -1.0],
            1e-9,
        );
        assert!(report.pass);
        assert!(report.max_rel_err < 1e-9);
    }

    #[test]
    fn wrong_gradient_fails() {
        let report = finite_diff_check(|x: &[f64]| (x[0] * x[0], vec![x[0]]), &[3.0], 1e-6);
        assert!(!report.pass);
        assert_eq!(report.worst_index, 0);
    }

    #[test]
    fn single_precision_uses_coarser_step() {
        let report = finite_diff_check(
            |x: &[f32]| (x[0] * x[0], vec![2.0 * x[0]]),
            &[0.75f32],
            1e-2,
        );
        assert!(report.pass, "{report:?}");
    }
}
