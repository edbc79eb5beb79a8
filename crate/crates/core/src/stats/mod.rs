//! Histogram statistics and uniformity testing of DMAP samples.

mod gamma;
mod ks;
mod shape;
mod validate;

pub use gamma::{ln_gamma, ln_regularized_gamma_q, regularized_gamma_p, regularized_gamma_q};
pub use ks::{ks_uniform, KsResult};
pub use shape::{mass_in_range, shape_summary, shape_summary_with, ShapeClass, ShapeSummary, ShapeThresholds};
pub use validate::{uniformity_report, validate_generation, validate_generation_with_bins, UniformityReport};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::compensated_sum;

/// Terrell-Scott bin count `floor((2T)^{1/3})`, clamped below at 2.
pub fn terrell_scott_bins(t: usize) -> usize {
    let target = 2 * t as u128;
    let mut k = (target as f64).cbrt().floor() as u128;
    while (k + 1).pow(3) <= target {
        k += 1;
    }
    while k > 0 && k.pow(3) > target {
        k -= 1;
    }
    (k as usize).max(2)
}

/// Counts per half-open bin `[(i-1)/k, i/k)`; `x = 1` falls in the last bin.
pub fn bin_counts(xs: &[f64], k: usize) -> Result<Vec<u64>> {
    if k == 0 {
        return Err(Error::parameter("bin count must be at least 1"));
    }
    let mut counts = vec![0u64; k];
    for &x in xs {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::parameter(format!("sample {x} outside [0, 1]")));
        }
        let idx = ((x * k as f64).floor() as usize).min(k - 1);
        counts[idx] += 1;
    }
    Ok(counts)
}

pub fn frequencies(xs: &[f64], k: usize) -> Result<Vec<f64>> {
    if xs.is_empty() {
        return Err(Error::EmptyInput("no samples to bin".into()));
    }
    let t = xs.len() as f64;
    Ok(bin_counts(xs, k)?.into_iter().map(|c| c as f64 / t).collect())
}

/// `T k Σ (f_i - 1/k)^2`.
pub fn chi_square_stat(freqs: &[f64], t: usize) -> f64 {
    let k = freqs.len() as f64;
    let expected = 1.0 / k;
    t as f64 * k * compensated_sum(freqs.iter().map(|f| (f - expected).powi(2)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PValue {
    pub p_value: f64,
    /// `log10` of the p-value, finite even when `p_value` underflows to zero.
    pub log10_p: f64,
}

/// Upper-tail probability of the chi-square distribution with `df` degrees of freedom.
pub fn chi_square_pvalue(stat: f64, df: usize) -> Result<PValue> {
    if df == 0 {
        return Err(Error::parameter("chi-square needs at least one degree of freedom"));
    }
    if stat.is_nan() || stat < 0.0 {
        return Err(Error::parameter(format!("chi-square statistic must be non-negative, got {stat}")));
    }
    let ln_q = ln_regularized_gamma_q(df as f64 / 2.0, stat / 2.0);
    Ok(PValue { p_value: ln_q.exp().clamp(0.0, 1.0), log10_p: ln_q / std::f64::consts::LN_10 })
}
