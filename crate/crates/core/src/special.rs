//! Small special-function helpers shared by the analytic formulas.

use crate::error::{Error, Result};

/// Odd double factorial m!! = m (m-2) (m-4) ... 1, exact in u128.
///
/// `m` must be odd. Errors on even input and on u128 overflow; the largest
/// representable argument is 55 (55!! has 123 bits, 57!! does not fit).
pub fn double_factorial(m: u64) -> Result<u128> {
    if m % 2 == 0 {
        return Err(Error::Domain(format!(
            "double_factorial requires an odd argument, got {m}"
        )));
    }
    let mut acc: u128 = 1;
    let mut k = m as u128;
    while k > 1 {
        acc = acc
            .checked_mul(k)
            .ok_or_else(|| Error::Numeric(format!("double_factorial({m}) overflows u128")))?;
        k -= 2;
    }
    Ok(acc)
}

/// ln(m!!) for odd m, as a sum of logarithms. Valid for any odd m where the
/// result fits in f64, far beyond the exact u128 range.
pub fn ln_double_factorial(m: u64) -> Result<f64> {
    if m % 2 == 0 {
        return Err(Error::Domain(format!(
            "ln_double_factorial requires an odd argument, got {m}"
        )));
    }
    let mut acc = 0.0;
    let mut k = m;
    while k > 1 {
        acc += (k as f64).ln();
        k -= 2;
    }
    Ok(acc)
}

/// ln(n!) as a sum of logarithms. Exact enough for the factorials of channel
/// counts used here; avoids pulling in a full lgamma implementation.
pub fn ln_factorial(n: u64) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// Standard normal CDF via the Zelen-Severo rational approximation.
///
/// Absolute error stays below 1e-7, which is orders of magnitude tighter
/// than the resolution of any distribution test fed from it.
pub fn normal_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.231_641_9 * z);
    let poly = t
        * (0.319_381_530
            + t * (-0.356_563_782
                + t * (1.781_477_937 + t * (-1.821_255_978 + t * 1.330_274_429))));
    let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let upper = 1.0 - pdf * poly;
    if x >= 0.0 {
        upper
    } else {
        1.0 - upper
    }
}

/// Bessel function J0 by its power series, for moderate arguments.
///
/// The series alternates, so cancellation eats precision as |x| grows;
/// arguments beyond 12 are rejected rather than returned with silently
/// degraded accuracy.
pub fn bessel_j0(x: f64) -> Result<f64> {
    if !(x.is_finite() && x.abs() <= 12.0) {
        return Err(Error::Domain(format!(
            "bessel_j0 series is only accurate for |x| <= 12, got {x}"
        )));
    }
    let q = -0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200u64 {
        term *= q / ((k * k) as f64);
        sum += term;
        if term.abs() < 1e-17 * sum.abs().max(1e-3) {
            break;
        }
    }
    Ok(sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn small_odd_values_are_exact() {
        assert_eq!(double_factorial(1).unwrap(), 1);
        assert_eq!(double_factorial(3).unwrap(), 3);
        assert_eq!(double_factorial(5).unwrap(), 15);
        assert_eq!(double_factorial(7).unwrap(), 105);
        assert_eq!(double_factorial(9).unwrap(), 945);
        // 29!! enters the mean gain formula at fifteen channels.
        assert_eq!(double_factorial(29).unwrap(), 6_190_283_353_629_375);
    }

    #[test]
    fn even_arguments_are_rejected() {
        assert!(double_factorial(0).is_err());
        assert!(double_factorial(8).is_err());
        assert!(ln_double_factorial(2).is_err());
    }

    #[test]
    fn overflow_is_reported_not_wrapped() {
        assert!(double_factorial(55).is_ok());
        let err = double_factorial(57).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }

    #[test]
    fn log_form_matches_exact_form() {
        for m in (1u64..=55).step_by(2) {
            let exact = double_factorial(m).unwrap() as f64;
            assert_relative_eq!(
                ln_double_factorial(m).unwrap(),
                exact.ln(),
                max_relative = 1e-13
            );
        }
    }

    #[test]
    fn ln_factorial_matches_direct_products() {
        assert_eq!(ln_factorial(0), 0.0);
        assert_eq!(ln_factorial(1), 0.0);
        assert_relative_eq!(ln_factorial(5), 120.0_f64.ln(), max_relative = 1e-14);
        assert_relative_eq!(
            ln_factorial(14),
            87_178_291_200.0_f64.ln(),
            max_relative = 1e-13
        );
    }

    #[test]
    fn normal_cdf_matches_reference_values() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-7);
        let cases = [
            (-4.0, 3.16712418331e-5),
            (-3.0, 0.00134989803163),
            (-1.0, 0.158655253931),
            (-0.5, 0.308537538726),
            (0.5, 0.691462461274),
            (1.0, 0.841344746069),
            (2.0, 0.977249868052),
            (4.0, 0.999968328758),
        ];
        for (x, want) in cases {
            assert!(
                (normal_cdf(x) - want).abs() < 1e-7,
                "normal_cdf({x}) = {} vs {want}",
                normal_cdf(x)
            );
        }
        // Symmetry of the two tails.
        for x in [0.3, 1.7, 2.9] {
            assert!((normal_cdf(x) + normal_cdf(-x) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn bessel_j0_matches_reference_values() {
        assert_eq!(bessel_j0(0.0).unwrap(), 1.0);
        assert_relative_eq!(
            bessel_j0(0.5).unwrap(),
            0.9384698072408129,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            bessel_j0(1.0).unwrap(),
            0.76519768655796655,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            bessel_j0(5.0).unwrap(),
            -0.1775967713143383,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            bessel_j0(10.0).unwrap(),
            -0.24593576445134834,
            max_relative = 1e-9
        );
        assert_relative_eq!(
            bessel_j0(-1.0).unwrap(),
            bessel_j0(1.0).unwrap(),
            max_relative = 0.0
        );
    }

    #[test]
    fn bessel_j0_vanishes_at_its_first_zeros() {
        assert!(bessel_j0(2.404825557695773).unwrap().abs() < 1e-12);
        assert!(bessel_j0(11.791534439014281).unwrap().abs() < 1e-8);
    }

    #[test]
    fn bessel_j0_rejects_large_arguments() {
        assert!(bessel_j0(12.5).is_err());
        assert!(bessel_j0(f64::NAN).is_err());
    }
}
