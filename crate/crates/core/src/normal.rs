//! Standard normal helpers evaluated in log space.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const MILLS_SWITCH: f64 = 8.0;

/// `ln φ(x)`.
pub fn ln_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

pub fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// `Φ(x)`.
pub fn cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// `ln(1 − Φ(x))`, accurate across the whole real line.
///
/// Negative arguments go through `ln_1p(−Φ(x))`; moderate positive arguments
/// use `erfc` directly; above 8 the Mills ratio is evaluated by its continued
/// fraction so the result never underflows to `−∞`.
pub fn std_normal_log_cdf_complement(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    if x == f64::INFINITY {
        return f64::NEG_INFINITY;
    }
    if x < 0.0 {
        (-0.5 * libm::erfc(-x * FRAC_1_SQRT_2)).ln_1p()
    } else if x <= MILLS_SWITCH {
        (0.5 * libm::erfc(x * FRAC_1_SQRT_2)).ln()
    } else {
        ln_pdf(x) + mills_ratio(x).ln()
    }
}

/// `ln Φ(x)`.
pub fn ln_cdf(x: f64) -> f64 {
    std_normal_log_cdf_complement(-x)
}

/// `(1 − Φ(x)) / φ(x)` for large positive `x`, by the continued fraction
/// `1 / (x + 1/(x + 2/(x + 3/(x + …))))` evaluated with modified Lentz.
fn mills_ratio(x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for k in 1..200 {
        let a = k as f64;
        d = x + a * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = x + a / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    1.0 / f
}

#[cfg(test)]
#[allow(clippy::excessive_precision)]
mod tests {
    use super::*;

    // 40-digit reference values of ln(½·erfc(x/√2))
    const REFERENCE: &[(f64, f64)] = &[
        (-10.0, -7.6198530241605260704e-24),
        (-8.0, -6.2209605742717860585e-16),
        (-5.0, -2.8665161296376359338e-7),
        (-2.0, -0.023012909328963488465),
        (-1.0, -0.17275377902344988953),
        (-0.5, -0.36894641528865639307),
        (0.0, -std::f64::consts::LN_2),
        (0.3, -0.96210281816885065666),
        (1.0, -1.8410216450092635058),
        (2.0, -3.7831843336820319488),
        (3.5, -8.366065308344092935),
        (5.0, -15.064998393988725736),
        (7.9, -34.206228170981715976),
        (8.0, -35.013437159914549896),
        (8.5, -39.197396428217669289),
        (12.0, -75.410673001568795939),
        (20.0, -203.91715537109726394),
        (40.0, -804.60844201375378817),
        (100.0, -5005.5242086942050886),
    ];

    #[test]
    fn matches_reference() {
        for &(x, want) in REFERENCE {
            let got = std_normal_log_cdf_complement(x);
            let rel = ((got - want) / want).abs();
            assert!(rel < 1e-12, "x={x}: got {got}, want {want}, rel {rel:e}");
        }
    }

    #[test]
    fn special_points() {
        assert_eq!(std_normal_log_cdf_complement(0.0), 0.5f64.ln());
        assert!(std_normal_log_cdf_complement(-40.0) <= 0.0);
        assert!(std_normal_log_cdf_complement(1e6).is_finite());
    }

    #[test]
    fn continuous_at_switch() {
        let below = std_normal_log_cdf_complement(MILLS_SWITCH - 1e-12);
        let above = std_normal_log_cdf_complement(MILLS_SWITCH + 1e-12);
        assert!((below - above).abs() < 1e-9);
    }

    #[test]
    fn monotone_decreasing() {
        let mut prev = std_normal_log_cdf_complement(-12.0);
        let mut x = -12.0;
        while x < 60.0 {
            x += 0.01;
            let cur = std_normal_log_cdf_complement(x);
            assert!(cur < prev || (cur == prev && cur == 0.0), "x={x}");
            prev = cur;
        }
    }
}
