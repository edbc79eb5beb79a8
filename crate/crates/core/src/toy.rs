//! A seeded order-1 Markov categorical language model.
//!
//! The model generates text under any [`DecodingSpec`] and reports the full
//! conditional distribution at every position, which makes it a ground
//! truth for DMAP: text sampled from the model and evaluated by the same
//! model must map to uniform samples.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoding::{apply_spec, DecodingSpec};
use crate::error::{Error, Result};
use crate::numeric::compensated_sum;
use crate::records::{FullDistributionRecord, TextRecordStream};
use crate::stats::{chi_square_stat, frequencies};

const ROW_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalLM {
    vocab_size: usize,
    initial: Vec<f64>,
    transition: Vec<Vec<f64>>,
}

fn check_row(row: &[f64], vocab_size: usize, what: &str) -> Result<()> {
    if row.len() != vocab_size {
        return Err(Error::VocabularyMismatch { expected: vocab_size, found: row.len() });
    }
    if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::format(format!("{what} has a negative or non-finite entry")));
    }
    let total = compensated_sum(row.iter().copied());
    if (total - 1.0).abs() > ROW_TOLERANCE {
        return Err(Error::format(format!("{what} sums to {total}")));
    }
    Ok(())
}

impl CategoricalLM {
    pub fn new(initial: Vec<f64>, transition: Vec<Vec<f64>>) -> Result<Self> {
        let vocab_size = initial.len();
        if vocab_size == 0 {
            return Err(Error::format("empty vocabulary"));
        }
        check_row(&initial, vocab_size, "initial distribution")?;
        if transition.len() != vocab_size {
            return Err(Error::VocabularyMismatch { expected: vocab_size, found: transition.len() });
        }
        for (i, row) in transition.iter().enumerate() {
            check_row(row, vocab_size, &format!("transition row {i}"))?;
        }
        Ok(Self { vocab_size, initial, transition })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }

    /// Distribution of the next token given the previous one (`None` at the start).
    pub fn conditional(&self, prev: Option<usize>) -> &[f64] {
        match prev {
            None => &self.initial,
            Some(t) => &self.transition[t],
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Raw {
            vocab_size: usize,
            initial: Vec<f64>,
            transition: Vec<Vec<f64>>,
        }
        let raw: Raw = serde_json::from_str(text).map_err(|e| Error::format(e.to_string()))?;
        let model = Self::new(raw.initial, raw.transition)?;
        if model.vocab_size != raw.vocab_size {
            return Err(Error::VocabularyMismatch { expected: raw.vocab_size, found: model.vocab_size });
        }
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }
}

/// Symmetric Dirichlet draw, computed in log space so that very small
/// concentrations give near one-hot rows instead of all-zero underflow.
fn dirichlet_row<R: Rng>(rng: &mut R, size: usize, concentration: f64) -> Vec<f64> {
    // Gamma(α) = Gamma(α + 1) · U^{1/α}
    let gamma = Gamma::new(concentration + 1.0, 1.0).expect("valid gamma parameters");
    let logs: Vec<f64> = (0..size)
        .map(|_| {
            let g: f64 = gamma.sample(rng);
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            g.ln() + u.ln() / concentration
        })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total = compensated_sum(weights.iter().copied());
    weights.into_iter().map(|w| w / total).collect()
}

pub fn random_model(seed: u64, vocab_size: usize, concentration: f64) -> Result<CategoricalLM> {
    if vocab_size < 2 {
        return Err(Error::parameter("vocabulary must have at least 2 tokens"));
    }
    if !(concentration.is_finite() && concentration > 0.0) {
        return Err(Error::parameter(format!("concentration must be positive, got {concentration}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let initial = dirichlet_row(&mut rng, vocab_size, concentration);
    let transition = (0..vocab_size).map(|_| dirichlet_row(&mut rng, vocab_size, concentration)).collect();
    CategoricalLM::new(initial, transition)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRun {
    pub text_id: String,
    pub model: CategoricalLM,
    pub spec: DecodingSpec,
    pub seed: u64,
    pub tokens: Vec<usize>,
    /// Base-model rows, one per position, with the sampled token observed.
    pub records: Vec<FullDistributionRecord>,
}

impl GenerationRun {
    /// The run's own records as a stream: white-box self-evaluation.
    pub fn stream(&self) -> Result<TextRecordStream> {
        TextRecordStream::from_full(self.text_id.clone(), 0, self.records.clone())
    }
}

/// Inverse-CDF draw in vocabulary order.
fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut cumulative = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            cumulative += p;
            last_positive = i;
            if u < cumulative {
                return i;
            }
        }
    }
    last_positive
}

pub fn generate(model: &CategoricalLM, spec: &DecodingSpec, length: usize, seed: u64) -> Result<GenerationRun> {
    generate_with_id(model, spec, length, seed, format!("toy-{seed}"))
}

pub fn generate_with_id(
    model: &CategoricalLM,
    spec: &DecodingSpec,
    length: usize,
    seed: u64,
    text_id: String,
) -> Result<GenerationRun> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tokens = Vec::with_capacity(length);
    let mut records = Vec::with_capacity(length);
    let mut prev = None;
    for pos in 0..length {
        let row = model.conditional(prev);
        let q = apply_spec(row, spec)?;
        let token = sample_index(&q, rng.random());
        tokens.push(token);
        records.push(FullDistributionRecord {
            text_id: text_id.clone(),
            pos,
            obs_index: token,
            probs: row.to_vec(),
            is_prompt: false,
        });
        prev = Some(token);
    }
    Ok(GenerationRun { text_id, model: model.clone(), spec: spec.clone(), seed, tokens, records })
}

/// Scores the run's tokens with another model's conditionals.
pub fn evaluate(run: &GenerationRun, evaluator: &CategoricalLM) -> Result<TextRecordStream> {
    if evaluator.vocab_size() != run.model.vocab_size() {
        return Err(Error::VocabularyMismatch { expected: run.model.vocab_size(), found: evaluator.vocab_size() });
    }
    let full = run
        .tokens
        .iter()
        .enumerate()
        .map(|(pos, &token)| FullDistributionRecord {
            text_id: run.text_id.clone(),
            pos,
            obs_index: token,
            probs: evaluator.conditional(pos.checked_sub(1).map(|p| run.tokens[p])).to_vec(),
            is_prompt: false,
        })
        .collect();
    TextRecordStream::from_full(run.text_id.clone(), 0, full)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NullSummary {
    pub trials: usize,
    pub mean: f64,
    pub variance: f64,
}

/// Moments of the chi-square statistic over `trials` sets of `t` i.i.d.
/// uniform samples binned into `k` bins.
pub fn monte_carlo_null(k: usize, t: usize, trials: usize, seed: u64) -> Result<NullSummary> {
    if trials < 100 {
        return Err(Error::parameter("at least 100 trials are required"));
    }
    if k < 2 || t == 0 {
        return Err(Error::parameter("need k >= 2 bins and at least one sample"));
    }
    let stats: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(trial as u64);
            let xs: Vec<f64> = (0..t).map(|_| rng.random::<f64>()).collect();
            let f = frequencies(&xs, k)?;
            Ok(chi_square_stat(&f, t))
        })
        .collect::<Result<_>>()?;
    let n = trials as f64;
    let mean = compensated_sum(stats.iter().copied()) / n;
    let variance = compensated_sum(stats.iter().map(|s| (s - mean).powi(2))) / (n - 1.0);
    Ok(NullSummary { trials, mean, variance })
}
