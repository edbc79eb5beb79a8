//! Entropy-weighted DMAP density.
//!
//! Instead of drawing a point per position, each interval contributes its
//! normalized indicator `χ_I / |I|` with weight `h'`, giving an exact step
//! function of integral one. Accumulators merge by concatenation and are
//! sorted before evaluation, so the result does not depend on the order in
//! which texts were processed.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoding::DecodingSpec;
use crate::engine::{evaluate_text, DmapInterval, EngineConfig};
use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, CompensatedSum};
use crate::records::TextRecordStream;

/// Piecewise-constant density on `[0, 1]`: `heights[i]` applies on
/// `[breakpoints[i], breakpoints[i + 1])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDensity {
    pub breakpoints: Vec<f64>,
    pub heights: Vec<f64>,
}

impl StepDensity {
    pub fn uniform() -> Self {
        Self { breakpoints: vec![0.0, 1.0], heights: vec![1.0] }
    }

    /// Exact density of a weighted collection of intervals.
    pub fn from_weighted_intervals(pieces: &[(DmapInterval, f64)]) -> Result<Self> {
        let mut acc = DensityAccumulator::default();
        for &(iv, w) in pieces {
            acc.add(iv, w)?;
        }
        acc.finish()
    }

    pub fn integral(&self) -> f64 {
        compensated_sum(self.segments().map(|(lo, hi, h)| h * (hi - lo)))
    }

    pub fn value_at(&self, x: f64) -> f64 {
        if !(0.0..=1.0).contains(&x) {
            return 0.0;
        }
        let idx = self.breakpoints.partition_point(|&b| b <= x);
        self.heights.get(idx.saturating_sub(1).min(self.heights.len() - 1)).copied().unwrap_or(0.0)
    }

    /// Integral of the density over `[lo, hi]`.
    pub fn mass_between(&self, lo: f64, hi: f64) -> f64 {
        compensated_sum(self.segments().map(|(s, e, h)| h * overlap(s, e, lo, hi)))
    }

    fn segments(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.breakpoints.windows(2).zip(&self.heights).map(|(w, &h)| (w[0], w[1], h))
    }

    /// Average height over `k` equal bins: `k` times the exact integral over each bin.
    pub fn bin(&self, k: usize) -> Result<Vec<f64>> {
        if k == 0 {
            return Err(Error::parameter("bin count must be at least 1"));
        }
        let mut bins = vec![CompensatedSum::default(); k];
        let kf = k as f64;
        for (lo, hi, h) in self.segments() {
            if h == 0.0 || hi <= lo {
                continue;
            }
            let first = ((lo * kf).floor() as usize).min(k - 1);
            let last = ((hi * kf).ceil() as usize).clamp(1, k) - 1;
            for (j, bin) in bins.iter_mut().enumerate().take(last + 1).skip(first) {
                let edge_lo = j as f64 / kf;
                let edge_hi = (j + 1) as f64 / kf;
                bin.add(h * overlap(lo, hi, edge_lo, edge_hi));
            }
        }
        Ok(bins.into_iter().map(|b| b.value() * kf).collect())
    }
}

pub fn bin_density(d: &StepDensity, k: usize) -> Result<Vec<f64>> {
    d.bin(k)
}

fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

/// Mergeable collection of weighted intervals.
#[derive(Debug, Clone, Default)]
pub struct DensityAccumulator {
    pieces: Vec<(f64, f64, f64)>,
    pub impossible: usize,
    /// Intervals that collapsed to a point in floating point and were skipped.
    pub degenerate: usize,
}

impl DensityAccumulator {
    pub fn add(&mut self, iv: DmapInterval, weight: f64) -> Result<()> {
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(Error::parameter(format!("weight must be finite and non-negative, got {weight}")));
        }
        if iv.is_empty() {
            self.degenerate += 1;
        } else if weight > 0.0 {
            self.pieces.push((iv.a, iv.b, weight));
        }
        Ok(())
    }

    pub fn add_text(&mut self, stream: &TextRecordStream, spec: &DecodingSpec, cfg: &EngineConfig) -> Result<()> {
        let evaluation = evaluate_text(stream, spec, cfg)?;
        for p in &evaluation.positions {
            self.add(p.interval, p.weight)?;
        }
        self.impossible += evaluation.impossible.len();
        Ok(())
    }

    pub fn merge(&mut self, other: DensityAccumulator) {
        self.pieces.extend(other.pieces);
        self.impossible += other.impossible;
        self.degenerate += other.degenerate;
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn finish(mut self) -> Result<StepDensity> {
        if self.pieces.is_empty() {
            return Err(Error::EmptyInput("no positions with positive weight".into()));
        }
        self.pieces.sort_by(|x, y| {
            x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)).then(x.2.total_cmp(&y.2))
        });
        let total_weight = compensated_sum(self.pieces.iter().map(|p| p.2));

        let mut events: Vec<(f64, f64)> = Vec::with_capacity(2 * self.pieces.len());
        for &(a, b, w) in &self.pieces {
            let h = w / (b - a);
            events.push((a, h));
            events.push((b, -h));
        }
        events.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));

        let mut breakpoints: Vec<f64> = Vec::with_capacity(events.len() + 2);
        breakpoints.push(0.0);
        for &(x, _) in &events {
            if x > *breakpoints.last().expect("non-empty") {
                breakpoints.push(x);
            }
        }
        if *breakpoints.last().expect("non-empty") < 1.0 {
            breakpoints.push(1.0);
        }

        let mut heights = Vec::with_capacity(breakpoints.len() - 1);
        let mut running = CompensatedSum::default();
        let mut next = 0;
        for &x in &breakpoints[..breakpoints.len() - 1] {
            while next < events.len() && events[next].0 <= x {
                running.add(events[next].1);
                next += 1;
            }
            heights.push((running.value() / total_weight).max(0.0));
        }
        Ok(StepDensity { breakpoints, heights })
    }
}

pub fn weighted_density(streams: &[TextRecordStream], spec: &DecodingSpec, cfg: &EngineConfig) -> Result<StepDensity> {
    weighted_accumulator(streams, spec, cfg)?.finish()
}

/// Accumulates all streams in parallel; the merged result is order independent.
pub fn weighted_accumulator(
    streams: &[TextRecordStream],
    spec: &DecodingSpec,
    cfg: &EngineConfig,
) -> Result<DensityAccumulator> {
    streams
        .par_iter()
        .map(|s| {
            let mut acc = DensityAccumulator::default();
            acc.add_text(s, spec, cfg)?;
            Ok(acc)
        })
        .try_reduce(DensityAccumulator::default, |mut a, b| {
            a.merge(b);
            Ok(a)
        })
}
