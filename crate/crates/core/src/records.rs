//! Per-position next-token distribution records and NDJSON ingestion.
//!
//! Two line schemas are accepted. The compact schema carries exactly what
//! pure-sampling evaluation needs (observed-token probability, the mass
//! ranked above it, and the entropy); the full schema carries the whole
//! probability vector so decoding transforms can be re-applied at
//! evaluation time. An optional metadata line `{"text_id", "prompt_len"}`
//! may precede the records of a text.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::decoding::entropy;
use crate::error::{Error, Result};
use crate::numeric::compensated_sum;

/// Deviation from unit mass that is accepted as-is.
pub const SUM_SILENT_TOLERANCE: f64 = 1e-6;
/// Deviation from unit mass that is renormalized with a warning; larger is rejected.
pub const SUM_RENORMALIZE_TOLERANCE: f64 = 1e-3;
/// Slack on `mass_above + p_obs <= 1`.
pub const MASS_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Schema {
    Full,
    Compact,
}

impl FromStr for Schema {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Schema::Full),
            "compact" => Ok(Schema::Compact),
            other => Err(Error::parameter(format!("unknown schema `{other}` (expected full or compact)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullDistributionRecord {
    pub text_id: String,
    pub pos: usize,
    pub obs_index: usize,
    pub probs: Vec<f64>,
    #[serde(default)]
    pub is_prompt: bool,
}

impl FullDistributionRecord {
    pub fn validate(&self) -> Result<()> {
        if self.probs.is_empty() {
            return Err(Error::format("probability vector is empty"));
        }
        if self.obs_index >= self.probs.len() {
            return Err(Error::format(format!(
                "obs_index {} out of range for a vocabulary of {}",
                self.obs_index,
                self.probs.len()
            )));
        }
        if let Some(bad) = self.probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::format(format!("probability {bad} outside [0, 1]")));
        }
        let deviation = (compensated_sum(self.probs.iter().copied()) - 1.0).abs();
        if deviation > SUM_SILENT_TOLERANCE {
            return Err(Error::format(format!("probabilities sum to 1 {deviation:+e} off")));
        }
        Ok(())
    }
}

/// Compact per-position summary. `mass_above` is the mass of the tokens that
/// precede the observed one in [`canonical_order`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenDistributionSummary {
    pub text_id: String,
    pub pos: usize,
    pub p_obs: f64,
    pub mass_above: f64,
    pub entropy: f64,
    pub is_prompt: bool,
}

impl TokenDistributionSummary {
    pub fn validate(&self) -> Result<()> {
        let unit = 0.0..=1.0;
        if !unit.contains(&self.p_obs) {
            return Err(Error::format(format!("p_obs {} outside [0, 1]", self.p_obs)));
        }
        if !unit.contains(&self.mass_above) {
            return Err(Error::format(format!("mass_above {} outside [0, 1]", self.mass_above)));
        }
        if self.mass_above + self.p_obs > 1.0 + MASS_SLACK {
            return Err(Error::format(format!(
                "mass_above + p_obs = {} exceeds 1",
                self.mass_above + self.p_obs
            )));
        }
        if !(self.entropy.is_finite() && self.entropy >= 0.0) {
            return Err(Error::format(format!("entropy {} is not a finite non-negative value", self.entropy)));
        }
        Ok(())
    }
}

/// All records of one text, in position order. `full` is present when the
/// stream was ingested from full distributions and runs parallel to `records`.
#[derive(Debug, Clone, PartialEq)]
pub struct TextRecordStream {
    pub text_id: String,
    pub prompt_len: usize,
    pub records: Vec<TokenDistributionSummary>,
    pub full: Option<Vec<FullDistributionRecord>>,
}

impl TextRecordStream {
    /// Builds a stream from full records, compacting each one.
    pub fn from_full(text_id: impl Into<String>, prompt_len: usize, mut full: Vec<FullDistributionRecord>) -> Result<Self> {
        let text_id = text_id.into();
        for (i, rec) in full.iter_mut().enumerate() {
            rec.text_id.clone_from(&text_id);
            rec.pos = i;
            rec.is_prompt = i < prompt_len;
        }
        let records = full.iter().map(compact_from_full).collect::<Result<Vec<_>>>()?;
        Ok(Self { text_id, prompt_len, records, full: Some(full) })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn has_full(&self) -> bool {
        self.full.is_some()
    }
}

/// Total order on vocabulary indices: probability descending, index ascending.
pub fn canonical_order(probs: &[f64]) -> Result<Vec<usize>> {
    if probs.is_empty() {
        return Err(Error::format("probability vector is empty"));
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&i, &j| probs[j].total_cmp(&probs[i]).then(i.cmp(&j)));
    Ok(order)
}

/// Whether index `i` precedes index `j` in [`canonical_order`].
#[inline]
pub(crate) fn ranks_before(probs: &[f64], i: usize, j: usize) -> bool {
    probs[i] > probs[j] || (probs[i] == probs[j] && i < j)
}

pub fn compact_from_full(rec: &FullDistributionRecord) -> Result<TokenDistributionSummary> {
    rec.validate()?;
    let (p_obs, mass_above, entropy) = summarize(&rec.probs, rec.obs_index);
    Ok(TokenDistributionSummary {
        text_id: rec.text_id.clone(),
        pos: rec.pos,
        p_obs,
        mass_above,
        entropy,
        is_prompt: rec.is_prompt,
    })
}

/// `(p_obs, mass_above, entropy)` of a validated distribution.
pub(crate) fn summarize(probs: &[f64], obs: usize) -> (f64, f64, f64) {
    let mass_above = compensated_sum(
        probs
            .iter()
            .enumerate()
            .filter(|&(j, _)| ranks_before(probs, j, obs))
            .map(|(_, &p)| p),
    );
    (probs[obs], mass_above.min(1.0), entropy(probs))
}

/// Whether another token shares the observed token's (non-zero) probability.
pub fn has_tied_observation(probs: &[f64], obs_index: usize) -> bool {
    let p = probs[obs_index];
    p > 0.0 && probs.iter().enumerate().any(|(j, &q)| j != obs_index && q == p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Warning {
    pub line: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for Warning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParsedInput {
    pub streams: Vec<TextRecordStream>,
    pub warnings: Vec<Warning>,
}

#[derive(Deserialize)]
struct FullLine {
    text_id: String,
    pos: usize,
    obs_index: usize,
    probs: Vec<f64>,
    #[serde(default)]
    is_prompt: Option<bool>,
}

struct StreamBuilder {
    text_id: String,
    prompt_len: Option<usize>,
    records: Vec<TokenDistributionSummary>,
    full: Vec<FullDistributionRecord>,
    seen_completion: bool,
    ties: usize,
}

impl StreamBuilder {
    fn new(text_id: String) -> Self {
        Self { text_id, prompt_len: None, records: Vec::new(), full: Vec::new(), seen_completion: false, ties: 0 }
    }

    fn check_pos(&self, pos: usize, line: usize) -> Result<()> {
        let expected = self.records.len();
        if pos < expected {
            Err(Error::format_at(line, format!("non-monotone pos {pos} for text `{}` (expected {expected})", self.text_id)))
        } else if pos > expected {
            Err(Error::format_at(line, format!("gap in pos for text `{}`: got {pos}, expected {expected}", self.text_id)))
        } else {
            Ok(())
        }
    }

    /// Without a metadata line the prompt is the run of leading `is_prompt` records.
    fn resolve_prompt_flag(&mut self, pos: usize, flag: bool, line: usize) -> Result<bool> {
        if let Some(prompt_len) = self.prompt_len {
            return Ok(pos < prompt_len);
        }
        if flag && self.seen_completion {
            return Err(Error::format_at(
                line,
                format!("prompt record at pos {pos} follows completion records in text `{}`", self.text_id),
            ));
        }
        self.seen_completion |= !flag;
        Ok(flag)
    }

    fn finish(self, schema: Schema, warnings: &mut Vec<Warning>) -> TextRecordStream {
        if self.ties > 0 {
            warnings.push(Warning {
                line: None,
                message: format!(
                    "text `{}`: {} observed token(s) tie with another token; canonical order (lower index first) applied",
                    self.text_id, self.ties
                ),
            });
        }
        let prompt_len = self
            .prompt_len
            .unwrap_or_else(|| self.records.iter().take_while(|r| r.is_prompt).count());
        TextRecordStream {
            text_id: self.text_id,
            prompt_len,
            records: self.records,
            full: (schema == Schema::Full).then_some(self.full),
        }
    }
}

fn field_error(line: usize, err: serde_json::Error) -> Error {
    Error::format_at(line, err.to_string())
}

/// Parses newline-delimited JSON records, grouping them by `text_id` in order
/// of first appearance. Full records are validated, renormalized when their
/// mass is slightly off, and compacted.
pub fn parse_stream<R: BufRead>(reader: R, schema: Schema) -> Result<ParsedInput> {
    let mut builders: Vec<StreamBuilder> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut warnings = Vec::new();

    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let object: Map<String, Value> = serde_json::from_str(trimmed).map_err(|e| field_error(line_no, e))?;

        if object.contains_key("prompt_len") {
            #[derive(Deserialize)]
            struct Meta {
                text_id: String,
                prompt_len: usize,
            }
            let meta: Meta = serde_json::from_value(Value::Object(object)).map_err(|e| field_error(line_no, e))?;
            let slot = *index.entry(meta.text_id.clone()).or_insert_with(|| {
                builders.push(StreamBuilder::new(meta.text_id.clone()));
                builders.len() - 1
            });
            let builder = &mut builders[slot];
            if !builder.records.is_empty() || builder.prompt_len.is_some() {
                return Err(Error::format_at(
                    line_no,
                    format!("metadata for text `{}` must precede its records and appear once", meta.text_id),
                ));
            }
            builder.prompt_len = Some(meta.prompt_len);
            continue;
        }

        let text_id = match object.get("text_id") {
            Some(Value::String(id)) => id.clone(),
            Some(_) => return Err(Error::format_at(line_no, "text_id must be a string")),
            None => return Err(Error::format_at(line_no, "missing field `text_id`")),
        };
        let slot = *index.entry(text_id.clone()).or_insert_with(|| {
            builders.push(StreamBuilder::new(text_id.clone()));
            builders.len() - 1
        });
        let builder = &mut builders[slot];

        match schema {
            Schema::Compact => {
                let mut rec: TokenDistributionSummary =
                    serde_json::from_value(Value::Object(object)).map_err(|e| field_error(line_no, e))?;
                builder.check_pos(rec.pos, line_no)?;
                rec.validate().map_err(|e| relocate(e, line_no))?;
                rec.is_prompt = builder.resolve_prompt_flag(rec.pos, rec.is_prompt, line_no)?;
                builder.records.push(rec);
            }
            Schema::Full => {
                let raw: FullLine = serde_json::from_value(Value::Object(object)).map_err(|e| field_error(line_no, e))?;
                builder.check_pos(raw.pos, line_no)?;
                let mut rec = FullDistributionRecord {
                    text_id: raw.text_id,
                    pos: raw.pos,
                    obs_index: raw.obs_index,
                    probs: raw.probs,
                    is_prompt: false,
                };
                if let Some(w) = normalize_mass(&mut rec.probs, line_no)? {
                    warnings.push(w);
                }
                rec.is_prompt = builder.resolve_prompt_flag(rec.pos, raw.is_prompt.unwrap_or(false), line_no)?;
                let summary = compact_from_full(&rec).map_err(|e| relocate(e, line_no))?;
                if has_tied_observation(&rec.probs, rec.obs_index) {
                    builder.ties += 1;
                }
                builder.records.push(summary);
                builder.full.push(rec);
            }
        }
    }

    let streams = builders.into_iter().map(|b| b.finish(schema, &mut warnings)).collect();
    Ok(ParsedInput { streams, warnings })
}

fn relocate(err: Error, line: usize) -> Error {
    match err {
        Error::Format { line: None, message } => Error::Format { line: Some(line), message },
        other => other,
    }
}

/// Applies the tolerance tiers to a probability vector in place.
fn normalize_mass(probs: &mut [f64], line: usize) -> Result<Option<Warning>> {
    if probs.is_empty() {
        return Err(Error::format_at(line, "probability vector is empty"));
    }
    if let Some(bad) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::format_at(line, format!("probability {bad} outside [0, 1]")));
    }
    let total = compensated_sum(probs.iter().copied());
    let deviation = (total - 1.0).abs();
    if deviation <= SUM_SILENT_TOLERANCE {
        Ok(None)
    } else if deviation <= SUM_RENORMALIZE_TOLERANCE {
        for p in probs.iter_mut() {
            *p /= total;
        }
        Ok(Some(Warning { line: Some(line), message: format!("probabilities summed to {total}; renormalized") }))
    } else {
        Err(Error::format_at(line, format!("probabilities sum to {total}, beyond the {SUM_RENORMALIZE_TOLERANCE} tolerance")))
    }
}

/// Writes streams in the compact schema, one record per line.
pub fn write_compact<W: Write>(mut out: W, streams: &[TextRecordStream]) -> Result<()> {
    for stream in streams {
        for rec in &stream.records {
            serde_json::to_writer(&mut out, rec).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Writes full records, preceded by a metadata line when the text has a prompt.
pub fn write_full<W: Write>(mut out: W, text_id: &str, prompt_len: usize, records: &[FullDistributionRecord]) -> Result<()> {
    #[derive(Serialize)]
    struct Line<'a> {
        text_id: &'a str,
        pos: usize,
        obs_index: usize,
        probs: &'a [f64],
    }
    if prompt_len > 0 {
        writeln!(out, "{}", serde_json::json!({ "text_id": text_id, "prompt_len": prompt_len }))?;
    }
    for rec in records {
        let line = Line { text_id, pos: rec.pos, obs_index: rec.obs_index, probs: &rec.probs };
        serde_json::to_writer(&mut out, &line).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
