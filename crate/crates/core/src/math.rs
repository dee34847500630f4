//! Scalar helpers. Routed through `libm` so results do not depend on the
//! platform's math library.

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}

#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + exp(-z))
    } else {
        let e = exp(z);
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of a logit against a {0,1} target:
/// `max(z, 0) - z*y + ln(1 + exp(-|z|))`.
#[inline]
pub fn bce_with_logits(z: f64, y: f64) -> f64 {
    let a = if z < 0.0 { -z } else { z };
    let relu = if z > 0.0 { z } else { 0.0 };
    relu - z * y + libm::log1p(exp(-a))
}

/// Derivative of [`bce_with_logits`] with respect to the logit.
#[inline]
pub fn bce_with_logits_grad(z: f64, y: f64) -> f64 {
    sigmoid(z) - y
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_matches_naive_form_in_safe_range() {
        for &z in &[-3.0, -0.5, 0.0, 0.7, 4.0] {
            for &y in &[0.0, 1.0] {
                let p = sigmoid(z);
                let naive = -(y * ln(p) + (1.0 - y) * ln(1.0 - p));
                assert!((bce_with_logits(z, y) - naive).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bce_is_finite_for_extreme_logits() {
        assert!(bce_with_logits(800.0, 0.0).is_finite());
        assert!(bce_with_logits(-800.0, 1.0).is_finite());
        assert!(bce_with_logits(40.0, 1.0) < 1e-16);
        assert_eq!(sigmoid(-800.0), 0.0);
    }
}
