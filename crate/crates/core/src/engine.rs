//! The per-position DMAP mapping.
//!
//! For each position the observed token owns the interval `[a, a + p]`
//! where `p` is its probability under the evaluation distribution and `a`
//! is the mass ranked above it. A point drawn uniformly from that interval
//! is the DMAP sample. Randomness is keyed by `(seed, text_id, pos)` so that
//! results do not depend on processing order or parallelism.

use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoding::{apply_spec, entropy, DecodingSpec};
use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, fnv1a};
use crate::records::{summarize, FullDistributionRecord, TextRecordStream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DmapInterval {
    pub a: f64,
    pub b: f64,
}

impl DmapInterval {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(0.0 <= a && a <= b && b <= 1.0) {
            return Err(Error::parameter(format!("invalid interval [{a}, {b}]")));
        }
        Ok(Self { a, b })
    }

    pub fn len(&self) -> f64 {
        self.b - self.a
    }

    pub fn is_empty(&self) -> bool {
        self.b <= self.a
    }

    pub fn contains(&self, x: f64) -> bool {
        self.a <= x && x <= self.b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DmapSample {
    pub pos: usize,
    pub x: f64,
    pub weight: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipMode {
    /// `min(h, λ)`: bounds the weight of high-entropy positions.
    #[default]
    Cap,
    /// `max(h, λ)`: the literal floor form.
    Floor,
}

impl FromStr for ClipMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cap" => Ok(ClipMode::Cap),
            "floor" => Ok(ClipMode::Floor),
            other => Err(Error::parameter(format!("unknown clip mode `{other}` (expected cap or floor)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderMode {
    /// Tokens ranked by the evaluation distribution at each position.
    #[default]
    Dynamic,
    /// A fresh uniformly random vocabulary permutation per position: the
    /// classical probability integral transform for categorical data.
    RandomPit,
}

impl FromStr for OrderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dynamic" => Ok(OrderMode::Dynamic),
            "random-pit" | "random_pit" => Ok(OrderMode::RandomPit),
            other => Err(Error::parameter(format!("unknown order mode `{other}` (expected dynamic or random-pit)"))),
        }
    }
}

/// Half-open entropy slice `[lo, hi)` in nats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyRange {
    pub lo: f64,
    pub hi: f64,
}

impl EntropyRange {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || lo >= hi {
            return Err(Error::parameter(format!("entropy range requires lo < hi, got [{lo}, {hi})")));
        }
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, h: f64) -> bool {
        self.lo <= h && h < self.hi
    }
}

impl FromStr for EntropyRange {
    type Err = Error;

    /// `LO:HI`, where an empty or `inf` upper bound means unbounded.
    fn from_str(s: &str) -> Result<Self> {
        let (lo, hi) = s
            .split_once(':')
            .ok_or_else(|| Error::parameter(format!("entropy slice must look like LO:HI, got `{s}`")))?;
        let lo: f64 = lo.trim().parse().map_err(|_| Error::parameter(format!("bad lower bound in `{s}`")))?;
        let hi = match hi.trim() {
            "" | "inf" => f64::INFINITY,
            v => v.parse().map_err(|_| Error::parameter(format!("bad upper bound in `{s}`")))?,
        };
        Self::new(lo, hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub seed: u64,
    pub lambda: f64,
    pub clip_mode: ClipMode,
    pub include_prompt: bool,
    pub initial_cutoff: usize,
    pub order_mode: OrderMode,
    pub entropy_range: Option<EntropyRange>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            lambda: 2.0,
            clip_mode: ClipMode::Cap,
            include_prompt: false,
            initial_cutoff: 0,
            order_mode: OrderMode::Dynamic,
            entropy_range: None,
        }
    }
}

impl EngineConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::parameter(format!("lambda must be positive, got {}", self.lambda)));
        }
        if let Some(range) = self.entropy_range {
            EntropyRange::new(range.lo, range.hi)?;
        }
        Ok(())
    }

    pub fn weight(&self, entropy: f64) -> f64 {
        match self.clip_mode {
            ClipMode::Cap => entropy.min(self.lambda),
            ClipMode::Floor => entropy.max(self.lambda),
        }
    }

    fn keeps(&self, pos: usize, is_prompt: bool) -> bool {
        (self.include_prompt || !is_prompt) && pos >= self.initial_cutoff
    }
}

/// Observed-token interval. A record whose `mass_above + p_obs` exceeds one
/// by rounding is shifted left so the interval keeps its length.
pub fn interval_for(p_obs: f64, mass_above: f64, pos: usize) -> Result<DmapInterval> {
    if p_obs <= 0.0 {
        return Err(Error::ImpossibleToken { pos });
    }
    let b = (mass_above + p_obs).min(1.0);
    let a = if mass_above + p_obs > 1.0 { (1.0 - p_obs).max(0.0) } else { mass_above };
    Ok(DmapInterval { a, b })
}

pub fn sample_point<R: Rng + ?Sized>(iv: &DmapInterval, rng: &mut R) -> f64 {
    if iv.is_empty() {
        return iv.a;
    }
    let u: f64 = rng.random();
    (iv.a + u * iv.len()).min(iv.b)
}

#[derive(Debug, Clone, Copy)]
enum Purpose {
    Point = 0,
    Permutation = 1,
}

/// Random substream for one position of one text.
fn position_rng(seed: u64, text_id: &str, pos: usize, purpose: Purpose) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&fnv1a(text_id.as_bytes()).to_le_bytes());
    key[16..24].copy_from_slice(&(pos as u64).to_le_bytes());
    key[24] = purpose as u8;
    ChaCha8Rng::from_seed(key)
}

/// One position after evaluation, before sampling.
#[derive(Debug, Clone, Copy)]
pub(crate) struct EvaluatedPosition {
    pub pos: usize,
    pub interval: DmapInterval,
    pub entropy: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Evaluation {
    pub positions: Vec<EvaluatedPosition>,
    pub impossible: Vec<usize>,
}

/// Mass of the tokens placed before `obs` by a random permutation.
fn random_order_mass(probs: &[f64], obs: usize, rng: &mut ChaCha8Rng) -> f64 {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.shuffle(rng);
    let cut = order.iter().position(|&i| i == obs).expect("observed index is in the permutation");
    compensated_sum(order[..cut].iter().map(|&i| probs[i]))
}

fn evaluate_full(
    rec: &FullDistributionRecord,
    text_id: &str,
    spec: &DecodingSpec,
    cfg: &EngineConfig,
) -> Result<(f64, f64, f64)> {
    let q = if spec.is_pure() { rec.probs.clone() } else { apply_spec(&rec.probs, spec)? };
    match cfg.order_mode {
        OrderMode::Dynamic => Ok(summarize(&q, rec.obs_index)),
        OrderMode::RandomPit => {
            let mut rng = position_rng(cfg.seed, text_id, rec.pos, Purpose::Permutation);
            let mass = random_order_mass(&q, rec.obs_index, &mut rng);
            Ok((q[rec.obs_index], mass.min(1.0), entropy(&q)))
        }
    }
}

pub(crate) fn evaluate_text(stream: &TextRecordStream, spec: &DecodingSpec, cfg: &EngineConfig) -> Result<Evaluation> {
    cfg.validate()?;
    let needs_full = !spec.is_pure() || cfg.order_mode == OrderMode::RandomPit;
    let full = match (&stream.full, needs_full) {
        (Some(full), true) => Some(full.as_slice()),
        (None, true) => {
            let reason = if spec.is_pure() { "random-order PIT" } else { "decoding-adapted evaluation" };
            return Err(Error::RequiresFullRecords { text_id: stream.text_id.clone(), reason });
        }
        (_, false) => None,
    };

    let mut out = Evaluation::default();
    for (idx, rec) in stream.records.iter().enumerate() {
        if !cfg.keeps(rec.pos, rec.is_prompt) {
            continue;
        }
        let (p_obs, mass_above, h) = match full {
            Some(full) => evaluate_full(&full[idx], &stream.text_id, spec, cfg)?,
            None => (rec.p_obs, rec.mass_above, rec.entropy),
        };
        if cfg.entropy_range.is_some_and(|r| !r.contains(h)) {
            continue;
        }
        match interval_for(p_obs, mass_above, rec.pos) {
            Ok(interval) => out.positions.push(EvaluatedPosition {
                pos: rec.pos,
                interval,
                entropy: h,
                weight: cfg.weight(h),
            }),
            Err(Error::ImpossibleToken { pos }) => out.impossible.push(pos),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Samples for one text plus the positions whose observed token was
/// impossible under the evaluation distribution.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MapOutput {
    pub samples: Vec<DmapSample>,
    pub impossible: Vec<usize>,
}

pub fn map_text(stream: &TextRecordStream, spec: &DecodingSpec, cfg: &EngineConfig) -> Result<MapOutput> {
    let evaluation = evaluate_text(stream, spec, cfg)?;
    let samples = evaluation
        .positions
        .iter()
        .map(|p| {
            let mut rng = position_rng(cfg.seed, &stream.text_id, p.pos, Purpose::Point);
            DmapSample { pos: p.pos, x: sample_point(&p.interval, &mut rng), weight: p.weight, entropy: p.entropy }
        })
        .collect();
    Ok(MapOutput { samples, impossible: evaluation.impossible })
}

/// Keeps samples whose entropy lies in `[lo, hi)`.
pub fn filter_by_entropy(samples: &[DmapSample], lo: f64, hi: f64) -> Result<Vec<DmapSample>> {
    let range = EntropyRange::new(lo, hi)?;
    Ok(samples.iter().filter(|s| range.contains(s.entropy)).copied().collect())
}

/// Writes one sample per line: `{"text_id","pos","x","weight","entropy"}`.
pub fn write_samples<W: std::io::Write>(mut out: W, text_id: &str, samples: &[DmapSample]) -> Result<()> {
    #[derive(Serialize)]
    struct Line<'a> {
        text_id: &'a str,
        pos: usize,
        x: f64,
        weight: f64,
        entropy: f64,
    }
    for s in samples {
        let line = Line { text_id, pos: s.pos, x: s.x, weight: s.weight, entropy: s.entropy };
        serde_json::to_writer(&mut out, &line).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
