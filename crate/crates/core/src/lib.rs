//! Distribution maps (DMAP) for next-token probability records.
//!
//! A text scored by an evaluator model becomes a sequence of per-position
//! conditional distributions. Each observed token owns the sub-interval of
//! `[0, 1]` that starts at the mass of the tokens ranked above it and has
//! length equal to its own probability. Drawing a uniform point from that
//! interval yields a sample which is exactly uniform when the text was
//! sampled from the evaluator itself, so departures from uniformity expose
//! decoding strategies, model mismatch and data-handling errors.
//!
//! The crate is organised as:
//!
//! * [`records`]: the per-position data model and the NDJSON ingestion layer.
//! * [`decoding`]: temperature, top-k and top-p transforms.
//! * [`engine`]: intervals, seeded sampling and the per-text mapping.
//! * [`density`]: the exact entropy-weighted step density and its binning.
//! * [`stats`]: bin selection, chi-square testing, shape classification.
//! * [`toy`]: a seeded Markov categorical model used as ground truth.
//! * [`plot`]: CSV and SVG histogram emission.

pub mod decoding;
pub mod density;
pub mod engine;
mod error;
mod numeric;
pub mod plot;
pub mod records;
pub mod stats;
pub mod toy;

pub use decoding::{DecodingSpec, Transform};
pub use density::{DensityAccumulator, StepDensity};
pub use engine::{ClipMode, DmapInterval, DmapSample, EngineConfig, EntropyRange, MapOutput, OrderMode};
pub use error::{Error, Result};
pub use records::{FullDistributionRecord, ParsedInput, Schema, TextRecordStream, TokenDistributionSummary};
pub use stats::{ShapeSummary, UniformityReport};
pub use toy::{CategoricalLM, GenerationRun};
