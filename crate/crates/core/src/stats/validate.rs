//! Quantitative validation of a claimed generation strategy.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{bin_counts, chi_square_pvalue, chi_square_stat, shape_summary, terrell_scott_bins, ShapeSummary};
use crate::decoding::DecodingSpec;
use crate::engine::{map_text, EngineConfig, MapOutput};
use crate::error::{Error, Result};
use crate::records::TextRecordStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformityReport {
    #[serde(rename = "T")]
    pub t: usize,
    pub k: usize,
    pub chi2: f64,
    pub df: usize,
    pub p_value: f64,
    /// `None` when the p-value is exactly zero (an impossible token was observed).
    pub log10_p: Option<f64>,
    pub impossible_tokens: usize,
    pub small_sample_warning: bool,
    pub shape: ShapeSummary,
}

impl UniformityReport {
    /// The data are consistent with the claim at significance level `alpha`.
    pub fn is_consistent(&self, alpha: f64) -> bool {
        self.p_value >= alpha
    }
}

/// Chi-square uniformity test of plain DMAP samples. `bins` overrides the
/// Terrell-Scott bin count.
pub fn uniformity_report(xs: &[f64], impossible_tokens: usize, bins: Option<usize>) -> Result<UniformityReport> {
    if xs.is_empty() {
        return Err(Error::EmptyInput("no usable DMAP samples".into()));
    }
    let t = xs.len();
    let k = bins.unwrap_or_else(|| terrell_scott_bins(t));
    if k < 2 {
        return Err(Error::parameter("a uniformity test needs at least 2 bins"));
    }
    let counts = bin_counts(xs, k)?;
    let freqs: Vec<f64> = counts.iter().map(|&c| c as f64 / t as f64).collect();
    let chi2 = chi_square_stat(&freqs, t);
    let df = k - 1;
    let (p_value, log10_p) = if impossible_tokens > 0 {
        (0.0, None)
    } else {
        let pv = chi_square_pvalue(chi2, df)?;
        (pv.p_value, Some(pv.log10_p))
    };
    let heights: Vec<f64> = freqs.iter().map(|f| f * k as f64).collect();
    Ok(UniformityReport {
        t,
        k,
        chi2,
        df,
        p_value,
        log10_p,
        impossible_tokens,
        small_sample_warning: t < 10 * k,
        shape: shape_summary(&heights),
    })
}

pub fn validate_generation(
    streams: &[TextRecordStream],
    claimed: &DecodingSpec,
    cfg: &EngineConfig,
) -> Result<UniformityReport> {
    validate_generation_with_bins(streams, claimed, cfg, None)
}

/// Maps every text under the claimed strategy (texts in `text_id` order)
/// and tests the pooled samples for uniformity.
pub fn validate_generation_with_bins(
    streams: &[TextRecordStream],
    claimed: &DecodingSpec,
    cfg: &EngineConfig,
    bins: Option<usize>,
) -> Result<UniformityReport> {
    let mut ordered: Vec<&TextRecordStream> = streams.iter().collect();
    ordered.sort_by(|a, b| a.text_id.cmp(&b.text_id));
    let outputs: Vec<MapOutput> = ordered
        .par_iter()
        .map(|s| map_text(s, claimed, cfg))
        .collect::<Result<_>>()?;
    let impossible = outputs.iter().map(|o| o.impossible.len()).sum();
    let xs: Vec<f64> = outputs.iter().flat_map(|o| o.samples.iter().map(|s| s.x)).collect();
    uniformity_report(&xs, impossible, bins)
}
