//! Decoding-strategy transforms.
//!
//! Each transform maps a base next-token distribution `p` to the adapted
//! distribution `q` a sampler actually draws from. The same transforms serve
//! two purposes: generating text from the toy model, and evaluating a text
//! under a claimed decoding strategy.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, CompensatedSum};
use crate::records::canonical_order;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Temperature(f64),
    TopK(usize),
    TopP(f64),
}

impl Transform {
    fn validate(&self) -> Result<()> {
        match *self {
            Transform::Temperature(tau) if !(tau.is_finite() && tau > 0.0) => {
                Err(Error::parameter(format!("temperature must be positive, got {tau}")))
            }
            Transform::TopK(0) => Err(Error::parameter("top-k requires k >= 1")),
            Transform::TopP(pi) if !(pi > 0.0 && pi <= 1.0) => {
                Err(Error::parameter(format!("top-p threshold must lie in (0, 1], got {pi}")))
            }
            _ => Ok(()),
        }
    }

    pub fn apply(&self, probs: &[f64]) -> Result<Vec<f64>> {
        match *self {
            Transform::Temperature(tau) => apply_temperature(probs, tau),
            Transform::TopK(k) => apply_top_k(probs, k),
            Transform::TopP(pi) => apply_top_p(probs, pi),
        }
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transform::Temperature(tau) => write!(f, "temp={tau}"),
            Transform::TopK(k) => write!(f, "topk={k}"),
            Transform::TopP(pi) => write!(f, "topp={pi}"),
        }
    }
}

/// A claimed or actual generation strategy: transforms applied in order.
/// An empty list is pure sampling.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DecodingSpec {
    steps: Vec<Transform>,
}

impl DecodingSpec {
    pub fn new(steps: Vec<Transform>) -> Result<Self> {
        for step in &steps {
            step.validate()?;
        }
        Ok(Self { steps })
    }

    pub fn pure() -> Self {
        Self::default()
    }

    pub fn is_pure(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn steps(&self) -> &[Transform] {
        &self.steps
    }

    /// Builds a spec from optional settings using the conventional
    /// inference-server order: temperature, then top-k, then top-p.
    pub fn conventional(temperature: Option<f64>, top_k: Option<usize>, top_p: Option<f64>) -> Result<Self> {
        let steps = temperature
            .map(Transform::Temperature)
            .into_iter()
            .chain(top_k.map(Transform::TopK))
            .chain(top_p.map(Transform::TopP))
            .collect();
        Self::new(steps)
    }
}

impl fmt::Display for DecodingSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.steps.is_empty() {
            return f.write_str("pure");
        }
        for (i, step) in self.steps.iter().enumerate() {
            if i > 0 {
                f.write_str("+")?;
            }
            write!(f, "{step}")?;
        }
        Ok(())
    }
}

impl FromStr for DecodingSpec {
    type Err = Error;

    /// Parses `pure`, `temp=0.7`, `topk=50`, `topp=0.9` and `+`-joined
    /// combinations such as `temp=0.7+topp=0.9`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() || s.eq_ignore_ascii_case("pure") {
            return Ok(Self::pure());
        }
        let mut steps = Vec::new();
        for part in s.split('+') {
            let part = part.trim();
            let (name, value) = part
                .split_once('=')
                .ok_or_else(|| Error::parameter(format!("expected name=value in decoding step `{part}`")))?;
            let bad = || Error::parameter(format!("invalid value in decoding step `{part}`"));
            let step = match name.trim().to_ascii_lowercase().as_str() {
                "temp" | "temperature" => Transform::Temperature(value.trim().parse().map_err(|_| bad())?),
                "topk" | "top_k" => Transform::TopK(value.trim().parse().map_err(|_| bad())?),
                "topp" | "top_p" => Transform::TopP(value.trim().parse().map_err(|_| bad())?),
                other => return Err(Error::parameter(format!("unknown decoding step `{other}`"))),
            };
            steps.push(step);
        }
        Self::new(steps)
    }
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(probs: &[f64]) -> f64 {
    let h = -compensated_sum(probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()));
    h.max(0.0)
}

/// `q ∝ p^(1/τ)`, evaluated as a softmax over `ln p / τ`.
pub fn apply_temperature(probs: &[f64], tau: f64) -> Result<Vec<f64>> {
    Transform::Temperature(tau).validate()?;
    if tau == 1.0 {
        return Ok(probs.to_vec());
    }
    let logits: Vec<f64> = probs
        .iter()
        .map(|&p| if p > 0.0 { p.ln() / tau } else { f64::NEG_INFINITY })
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::format("distribution has no positive mass"));
    }
    let weights: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total = compensated_sum(weights.iter().copied());
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// Keeps the `k` highest-ranked tokens (canonical order) and renormalizes.
pub fn apply_top_k(probs: &[f64], k: usize) -> Result<Vec<f64>> {
    Transform::TopK(k).validate()?;
    if k >= probs.len() {
        return Ok(probs.to_vec());
    }
    let order = canonical_order(probs)?;
    Ok(renormalize_subset(probs, &order[..k]))
}

/// Keeps the shortest canonical prefix whose mass strictly exceeds `pi`.
pub fn apply_top_p(probs: &[f64], pi: f64) -> Result<Vec<f64>> {
    Transform::TopP(pi).validate()?;
    if pi == 1.0 {
        return Ok(probs.to_vec());
    }
    let order = canonical_order(probs)?;
    let mut cumulative = CompensatedSum::default();
    let mut keep = order.len();
    for (m, &idx) in order.iter().enumerate() {
        cumulative.add(probs[idx]);
        if cumulative.value() > pi {
            keep = m + 1;
            break;
        }
    }
    Ok(renormalize_subset(probs, &order[..keep]))
}

pub fn apply_spec(probs: &[f64], spec: &DecodingSpec) -> Result<Vec<f64>> {
    let mut current = probs.to_vec();
    for step in spec.steps() {
        current = step.apply(&current)?;
    }
    Ok(current)
}

fn renormalize_subset(probs: &[f64], kept: &[usize]) -> Vec<f64> {
    let total = compensated_sum(kept.iter().map(|&i| probs[i]));
    let mut out = vec![0.0; probs.len()];
    for &i in kept {
        out[i] = probs[i] / total;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(actual: &[f64], expected: &[f64], tol: f64) {
        assert_eq!(actual.len(), expected.len());
        for (a, e) in actual.iter().zip(expected) {
            assert!((a - e).abs() <= tol, "{actual:?} vs {expected:?}");
        }
    }

    const BASE: [f64; 3] = [0.5, 0.3, 0.2];

    #[test]
    fn temperature_examples() {
        assert_eq!(apply_temperature(&BASE, 1.0).unwrap(), BASE.to_vec());
        // p^2 / sum p^2 with sum = 0.38
        assert_close(
            &apply_temperature(&BASE, 0.5).unwrap(),
            &[0.25 / 0.38, 0.09 / 0.38, 0.04 / 0.38],
            1e-12,
        );
        assert_close(&apply_temperature(&BASE, 0.5).unwrap(), &[0.657895, 0.236842, 0.105263], 1e-6);
        assert_close(&apply_temperature(&[0.5, 0.5, 0.0], 2.0).unwrap(), &[0.5, 0.5, 0.0], 1e-15);
    }

    #[test]
    fn temperature_rejects_non_positive() {
        assert!(matches!(apply_temperature(&BASE, 0.0), Err(Error::Parameter(_))));
        assert!(matches!(apply_temperature(&BASE, -1.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn tiny_temperature_does_not_overflow() {
        let q = apply_temperature(&BASE, 1e-3).unwrap();
        assert_close(&q, &[1.0, 0.0, 0.0], 1e-12);
        let q = apply_temperature(&[1e-300, 1.0 - 1e-300], 1e-2).unwrap();
        assert!(q.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn top_k_examples() {
        assert_close(&apply_top_k(&BASE, 2).unwrap(), &[0.625, 0.375, 0.0], 1e-15);
        assert_eq!(apply_top_k(&BASE, 1).unwrap(), vec![1.0, 0.0, 0.0]);
        assert_eq!(apply_top_k(&BASE, 10).unwrap(), BASE.to_vec());
    }

    #[test]
    fn top_k_boundary_tie_uses_lower_index() {
        assert_eq!(apply_top_k(&[0.2, 0.4, 0.4], 1).unwrap(), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn top_p_examples() {
        assert_close(&apply_top_p(&BASE, 0.7).unwrap(), &[0.625, 0.375, 0.0], 1e-15);
        assert_eq!(apply_top_p(&BASE, 1.0).unwrap(), BASE.to_vec());
        assert_eq!(apply_top_p(&BASE, 0.4).unwrap(), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn top_p_rejects_out_of_range() {
        assert!(apply_top_p(&BASE, 0.0).is_err());
        assert!(apply_top_p(&BASE, 1.5).is_err());
        assert!(apply_top_p(&BASE, f64::NAN).is_err());
    }

    #[test]
    fn entropy_examples() {
        assert!((entropy(&[0.25; 4]) - 4f64.ln()).abs() < 1e-15);
        assert_eq!(entropy(&[1.0, 0.0]), 0.0);
        let direct = -(0.5f64 * 0.5f64.ln() + 0.3 * 0.3f64.ln() + 0.2 * 0.2f64.ln());
        assert!((entropy(&BASE) - direct).abs() < 1e-15);
        assert!((entropy(&BASE) - 1.029653).abs() < 1e-6);
    }

    #[test]
    fn spec_composition_examples() {
        assert_eq!(apply_spec(&BASE, &DecodingSpec::pure()).unwrap(), BASE.to_vec());

        let spec: DecodingSpec = "temp=0.5+topk=2".parse().unwrap();
        assert_close(&apply_spec(&BASE, &spec).unwrap(), &[0.25 / 0.34, 0.09 / 0.34, 0.0], 1e-12);
        assert_close(&apply_spec(&BASE, &spec).unwrap(), &[0.735294, 0.264706, 0.0], 1e-6);

        // After top-k the prefix masses are 0.625 and 1.0; only the second exceeds 0.7.
        let spec: DecodingSpec = "topk=2+topp=0.7".parse().unwrap();
        assert_close(&apply_spec(&BASE, &spec).unwrap(), &[0.625, 0.375, 0.0], 1e-15);
    }

    #[test]
    fn spec_text_round_trip() {
        for text in ["pure", "temp=0.7", "topk=50", "topp=0.8", "temp=0.7+topp=0.9", "topk=3+temp=1.5"] {
            let spec: DecodingSpec = text.parse().unwrap();
            assert_eq!(spec.to_string(), text);
        }
        let spec: DecodingSpec = "temp=0.7+topp=0.9".parse().unwrap();
        assert_eq!(spec.steps(), &[Transform::Temperature(0.7), Transform::TopP(0.9)]);
    }

    #[test]
    fn spec_text_rejects_garbage() {
        for text in ["temp", "temp=abc", "topk=0", "topk=-1", "topp=0", "beam=4", "temp=0"] {
            assert!(text.parse::<DecodingSpec>().is_err(), "{text}");
        }
    }

    #[test]
    fn conventional_order() {
        let spec = DecodingSpec::conventional(Some(0.7), Some(50), Some(0.9)).unwrap();
        assert_eq!(spec.to_string(), "temp=0.7+topk=50+topp=0.9");
    }
}
