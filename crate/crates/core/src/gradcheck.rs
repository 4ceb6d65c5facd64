//! Central finite-difference validation of analytic gradients.

use serde::Serialize;

use crate::error::{Result, RkrError};
use crate::tensor::Scalar;

/// Outcome of comparing one analytic gradient against central differences.
#[derive(Clone, Debug, Serialize)]
pub struct GradReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares `analytic` with `(f(x + h·e_i) − f(x − h·e_i)) / 2h` for every
/// coordinate `i`. The error per element is
/// `|analytic − numeric| / max(1, |analytic|, |numeric|)`.
pub fn grad_check<F>(
    name: &str,
    mut f: F,
    x: &[Scalar],
    analytic: &[Scalar],
    h: f64,
    tolerance: f64,
) -> Result<GradReport>
where
    F: FnMut(&[Scalar]) -> Result<Scalar>,
{
    if std::mem::size_of::<Scalar>() != 8 {
        return Err(RkrError::Config("gradient checks require the 64-bit element type".into()));
    }
    if x.len() != analytic.len() {
        return Err(RkrError::Dimension(format!(
            "{name}: {} coordinates but {} analytic gradient entries",
            x.len(),
            analytic.len()
        )));
    }
    let mut probe = x.to_vec();
    let mut max_rel_err = 0.0f64;
    let mut worst_index = 0;
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h as Scalar;
        let plus = f(&probe)? as f64;
        probe[i] = orig - h as Scalar;
        let minus = f(&probe)? as f64;
        probe[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[i] as f64;
        if !numeric.is_finite() || !a.is_finite() {
            return Err(RkrError::Numerical(format!(
                "{name}: non-finite gradient at element {i} (analytic {a}, numeric {numeric})"
            )));
        }
        let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        if err > max_rel_err {
            max_rel_err = err;
            worst_index = i;
        }
    }
    Ok(GradReport {
        name: name.to_string(),
        checked: x.len(),
        max_rel_err,
        worst_index,
        tolerance,
        passed: max_rel_err <= tolerance,
    })
}

#[cfg(all(test, not(feature = "f32")))]
mod tests {
    use super::*;

    #[test]
    fn linear_map_is_exact() {
        let x = [0.7];
        let r = grad_check("3x", |v| Ok(3.0 * v[0]), &x, &[3.0], 1e-5, 1e-6).unwrap();
        assert!(r.passed);
        assert!(r.max_rel_err < 1e-9);
    }

    #[test]
    fn constant_has_zero_gradient() {
        let r = grad_check("const", |_| Ok(4.2), &[1.0, 2.0], &[0.0, 0.0], 1e-5, 1e-6).unwrap();
        assert_eq!(r.max_rel_err, 0.0);
    }

    #[test]
    fn wrong_gradient_fails() {
        let r = grad_check("x^2", |v| Ok(v[0] * v[0]), &[2.0], &[3.0], 1e-5, 1e-4).unwrap();
        assert!(!r.passed);
    }

    #[test]
    fn non_finite_is_reported_with_element() {
        let err = grad_check(
            "sqrt",
            |v| Ok(v[0] + v[1].sqrt()),
            &[1.0, 0.0],
            &[1.0, 1.0],
            1e-5,
            1e-4,
        )
        .unwrap_err();
        assert!(err.to_string().contains("element 1"), "{err}");
    }
}
