//! Human-readable coefficient table for a fit.

use std::fmt::Write as _;

use super::{FitResult, Marker, StdError};

/// Two-sided normal critical values at 10%, 5% and 1%.
const Z_10: f64 = 1.644_853_626_951_472_2;
const Z_05: f64 = 1.959_963_984_540_054;
const Z_01: f64 = 2.575_829_303_548_900_4;

/// Formats with six significant digits; falls back to exponent notation for
/// very large or very small magnitudes.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0.00000".into();
    }
    let mag = x.abs().log10().floor() as i32;
    if !(-4..6).contains(&mag) {
        return format!("{x:.5e}");
    }
    let decimals = (5 - mag).max(0) as usize;
    format!("{x:.decimals$}")
}

/// `***`, `**`, `*` for Wald significance at 1%, 5%, 10%.
pub fn stars(estimate: f64, se: f64) -> &'static str {
    if !(se > 0.0) {
        return "";
    }
    let z = (estimate / se).abs();
    if z >= Z_01 {
        "***"
    } else if z >= Z_05 {
        "**"
    } else if z >= Z_10 {
        "*"
    } else {
        ""
    }
}

fn se_cell(se: &StdError) -> String {
    match se {
        StdError::Value(v) => sig6(*v),
        StdError::Marker(Marker::Boundary) => "(boundary)".into(),
        StdError::Marker(Marker::Fixed) => "(fixed)".into(),
        StdError::Marker(Marker::Unavailable) => "(n/a)".into(),
    }
}

pub fn render_table(fit: &FitResult) -> String {
    let values = fit.params.to_natural_vec();
    let width = fit
        .labels
        .iter()
        .map(String::len)
        .max()
        .unwrap_or(0)
        .max(16);
    let mut out = String::new();
    let _ = writeln!(out, "model: {}", fit.spec);
    let _ = writeln!(
        out,
        "units: {}  periods: {}",
        fit.unit_ids.len(),
        fit.time_ids.len()
    );
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:<width$}  {:>14}  {:>12}",
        "parameter", "estimate", "std. error"
    );
    for ((label, v), se) in fit.labels.iter().zip(&values).zip(&fit.std_errors) {
        let star = se.value().map(|s| stars(*v, s)).unwrap_or("");
        let _ = writeln!(
            out,
            "{label:<width$}  {:>14}  {:>12}",
            format!("{}{star}", sig6(*v)),
            se_cell(se)
        );
    }
    let _ = writeln!(
        out,
        "{:<width$}  {:>14}",
        "sigma2_u_total",
        sig6(fit.sigma2_u_total)
    );
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:<width$}  {:>14}",
        "log-likelihood",
        sig6(fit.loglik)
    );
    let _ = writeln!(out, "{:<width$}  {:>14}", "AIC", sig6(fit.aic));
    let mean_te = fit.efficiency.iter().flatten().sum::<f64>()
        / fit.efficiency.iter().map(Vec::len).sum::<usize>().max(1) as f64;
    let _ = writeln!(out, "{:<width$}  {:>14}", "mean TE", sig6(mean_te));
    let conv = serde_json::to_value(fit.convergence)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default();
    let _ = writeln!(out, "{:<width$}  {:>14}", "convergence", conv);
    let _ = writeln!(out, "{:<width$}  {:>14}", "iterations", fit.iterations);
    let _ = writeln!(out);
    let _ = writeln!(out, "significance: * 10%, ** 5%, *** 1% (two-sided normal)");
    for w in &fit.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(5.318215), "5.31822");
        assert_eq!(sig6(-948.4812), "-948.481");
        assert_eq!(sig6(0.037612), "0.0376120");
        assert_eq!(sig6(123456.7), "123457");
        assert_eq!(sig6(1234567.0), "1.23457e6");
        assert_eq!(sig6(0.0), "0.00000");
    }

    #[test]
    fn star_thresholds() {
        assert_eq!(stars(1.7, 1.0), "*");
        assert_eq!(stars(-2.0, 1.0), "**");
        assert_eq!(stars(2.6, 1.0), "***");
        assert_eq!(stars(1.6, 1.0), "");
        assert_eq!(stars(1.0, 0.0), "");
    }
}
