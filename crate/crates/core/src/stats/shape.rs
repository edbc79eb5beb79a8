//! Qualitative shape of a binned DMAP histogram.
//!
//! Masses are exact integrals of the piecewise-constant histogram over
//! fixed ranges; the classification thresholds are operational and can be
//! overridden through [`ShapeThresholds`].

use serde::{Deserialize, Serialize};

use crate::numeric::compensated_sum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeClass {
    Uniform,
    HeadBiased,
    TailBiased,
    TailCollapse,
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeSummary {
    /// Mass on `[0, 0.25]`.
    pub head_mass: f64,
    /// Mass on `[0.75, 1]`.
    pub tail_mass: f64,
    /// Mass on `[0.95, 1]` divided by the slice width.
    pub last_slice_ratio: f64,
    pub classification: ShapeClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeThresholds {
    /// Relative density at or above which a region counts as over-represented.
    pub over: f64,
    /// Relative density at or below which the opposite region counts as depleted.
    pub under: f64,
    /// Relative density of the last slice at or below which it has collapsed.
    pub collapse: f64,
    /// Half-width of the band around 1 in which every bin must lie for `uniform`.
    pub uniform_band: f64,
}

impl Default for ShapeThresholds {
    fn default() -> Self {
        Self { over: 1.15, under: 0.9, collapse: 0.5, uniform_band: 0.15 }
    }
}

const QUARTER: f64 = 0.25;
const LAST_SLICE: f64 = 0.05;

/// Integral over `[lo, hi]` of the histogram whose `k` equal-width bins have the given heights.
pub fn mass_in_range(bins: &[f64], lo: f64, hi: f64) -> f64 {
    let k = bins.len() as f64;
    compensated_sum(bins.iter().enumerate().map(|(j, &h)| {
        let (b0, b1) = (j as f64 / k, (j + 1) as f64 / k);
        h * (b1.min(hi) - b0.max(lo)).max(0.0)
    }))
}

pub fn shape_summary(bins: &[f64]) -> ShapeSummary {
    shape_summary_with(bins, &ShapeThresholds::default())
}

pub fn shape_summary_with(bins: &[f64], t: &ShapeThresholds) -> ShapeSummary {
    let head_mass = mass_in_range(bins, 0.0, QUARTER);
    let tail_mass = mass_in_range(bins, 1.0 - QUARTER, 1.0);
    let last_slice_ratio = mass_in_range(bins, 1.0 - LAST_SLICE, 1.0) / LAST_SLICE;
    // the upper quarter without its last slice
    let shoulder = mass_in_range(bins, 1.0 - QUARTER, 1.0 - LAST_SLICE) / (QUARTER - LAST_SLICE);

    let head = head_mass / QUARTER;
    let tail = tail_mass / QUARTER;
    let classification = if head >= t.over && tail <= t.under {
        ShapeClass::HeadBiased
    } else if tail >= t.over && head <= t.under {
        ShapeClass::TailBiased
    } else if last_slice_ratio <= t.collapse && shoulder >= t.under {
        ShapeClass::TailCollapse
    } else if !bins.is_empty() && bins.iter().all(|&h| (h - 1.0).abs() <= t.uniform_band) {
        ShapeClass::Uniform
    } else {
        ShapeClass::Mixed
    };
    ShapeSummary { head_mass, tail_mass, last_slice_ratio, classification }
}
