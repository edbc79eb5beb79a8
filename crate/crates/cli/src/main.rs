//! `dmap` command-line tool: maps scored texts onto [0, 1], plots the
//! resulting densities and tests claimed generation strategies.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use dmap::density::weighted_density;
use dmap::engine::{map_text, write_samples};
use dmap::records::{parse_stream, write_compact, write_full};
use dmap::stats::{frequencies, shape_summary, validate_generation_with_bins};
use dmap::toy::{evaluate, generate, random_model};
use dmap::{plot, CategoricalLM, ClipMode, DecodingSpec, EngineConfig, EntropyRange, OrderMode, Schema, TextRecordStream};

/// Histogram bin count used for plots when `--bins auto`.
const PLOT_BINS: usize = 40;

#[derive(Parser)]
#[command(name = "dmap", version, about = "Distribution maps of next-token probability records")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Input record schema.
    #[arg(long, global = true, value_enum, default_value_t = SchemaArg::Compact)]
    schema: SchemaArg,
    /// Decoding strategy, e.g. `pure` or `temp=0.7+topk=3`. For `validate`
    /// this is the claimed strategy; for `simulate` the generating one.
    #[arg(long, global = true, default_value = "pure")]
    spec: String,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Entropy clip threshold for density weights.
    #[arg(long, global = true, default_value_t = 2.0)]
    lambda: f64,
    #[arg(long, global = true, value_enum, default_value_t = ClipArg::Cap)]
    clip_mode: ClipArg,
    #[arg(long, global = true)]
    include_prompt: bool,
    /// Skip positions before this index.
    #[arg(long, global = true, default_value_t = 0)]
    initial_cutoff: usize,
    /// `auto` or a bin count. Auto is Terrell-Scott for tests and 40 for plots.
    #[arg(long, global = true, default_value = "auto")]
    bins: String,
    /// Keep only positions whose entropy (nats) lies in [LO, HI).
    #[arg(long, global = true, value_name = "LO:HI")]
    entropy_slice: Option<String>,
    #[arg(long, global = true, value_enum, default_value_t = OrderArg::Dynamic)]
    order: OrderArg,
    /// Significance level for `validate`.
    #[arg(long, global = true, default_value_t = 0.001)]
    alpha: f64,
    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemaArg {
    Full,
    Compact,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClipArg {
    Cap,
    Floor,
}

#[derive(Clone, Copy, ValueEnum)]
enum OrderArg {
    Dynamic,
    RandomPit,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Csv,
    Svg,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Dump one DMAP sample per usable position as NDJSON.
    Map {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Binned density as CSV (default), SVG or JSON.
    Hist {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Unweighted histogram of sampled points instead of the weighted density.
        #[arg(long)]
        plain: bool,
        /// Also write the SVG chart here.
        #[arg(long)]
        svg: Option<PathBuf>,
        #[arg(long, default_value = "DMAP density")]
        title: String,
    },
    /// Chi-square uniformity test of the texts under the claimed `--spec`.
    /// Exits 0 when consistent at `--alpha`, 1 when rejected, 2 on error.
    Validate {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Shape summary of the binned weighted density as JSON.
    Shape {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Convert full records to the compact schema.
    Compact {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Generate texts from a toy Markov model and write full records.
    Simulate {
        #[arg(long, default_value_t = 16)]
        vocab: usize,
        /// Dirichlet concentration of the model's rows.
        #[arg(long, default_value_t = 1.0)]
        concentration: f64,
        #[arg(long, default_value_t = 0)]
        model_seed: u64,
        /// Load the generating model from JSON instead of drawing one.
        #[arg(long, conflicts_with_all = ["vocab", "concentration", "model_seed"])]
        model: Option<PathBuf>,
        #[arg(long)]
        save_model: Option<PathBuf>,
        /// Tokens per text.
        #[arg(long, default_value_t = 1000)]
        tokens: usize,
        /// Number of texts; text i uses generation seed `--seed + i`.
        #[arg(long, default_value_t = 1)]
        texts: u64,
        /// Score the texts with an independent random model drawn from this seed.
        #[arg(long)]
        evaluator_seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        // Output cut short by a closed pipe (e.g. `| head`) is not a failure.
        Err(err) if is_broken_pipe(&err) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> Result<ExitCode> {
    let c = &cli.common;
    match &cli.command {
        Command::Map { inputs } => {
            let (streams, spec, cfg) = prepare(c, inputs)?;
            let mut out = open_output(c.out.as_deref())?;
            let mut impossible = 0;
            for stream in &streams {
                let mapped = map_text(stream, &spec, &cfg)?;
                impossible += mapped.impossible.len();
                write_samples(&mut out, &stream.text_id, &mapped.samples)?;
            }
            out.flush()?;
            report_impossible(impossible);
        }
        Command::Hist { inputs, plain, svg, title } => {
            let (streams, spec, cfg) = prepare(c, inputs)?;
            let k = bin_count(&c.bins, PLOT_BINS)?;
            let heights = if *plain {
                let mut xs = Vec::new();
                let mut impossible = 0;
                for stream in &streams {
                    let mapped = map_text(stream, &spec, &cfg)?;
                    impossible += mapped.impossible.len();
                    xs.extend(mapped.samples.iter().map(|s| s.x));
                }
                report_impossible(impossible);
                frequencies(&xs, k)?.iter().map(|f| f * k as f64).collect::<Vec<_>>()
            } else {
                weighted_density(&streams, &spec, &cfg)?.bin(k)?
            };
            let body = match c.format.unwrap_or(FormatArg::Csv) {
                FormatArg::Csv => plot::histogram_csv(&heights),
                FormatArg::Svg => plot::histogram_svg(&heights, title),
                FormatArg::Json => serde_json::to_string(&heights)? + "\n",
            };
            write_output(c.out.as_deref(), body.as_bytes())?;
            if let Some(path) = svg {
                write_output(Some(path), plot::histogram_svg(&heights, title).as_bytes())?;
            }
        }
        Command::Validate { inputs } => {
            if !(c.alpha > 0.0 && c.alpha < 1.0) {
                bail!("--alpha must lie in (0, 1), got {}", c.alpha);
            }
            let (streams, spec, cfg) = prepare(c, inputs)?;
            let bins = match c.bins.as_str() {
                "auto" => None,
                _ => Some(bin_count(&c.bins, 0)?),
            };
            let report = validate_generation_with_bins(&streams, &spec, &cfg, bins)?;
            match report.log10_p {
                Some(l) => eprintln!("log10 p = {l:.6}"),
                None => eprintln!("p = 0 ({} impossible token(s) under the claimed strategy)", report.impossible_tokens),
            }
            if report.small_sample_warning {
                eprintln!("warning: only {} samples for {} bins; the test has little power", report.t, report.k);
            }
            write_output(c.out.as_deref(), (serde_json::to_string_pretty(&report)? + "\n").as_bytes())?;
            if !report.is_consistent(c.alpha) {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Shape { inputs } => {
            let (streams, spec, cfg) = prepare(c, inputs)?;
            let k = bin_count(&c.bins, PLOT_BINS)?;
            let bins = weighted_density(&streams, &spec, &cfg)?.bin(k)?;
            let summary = shape_summary(&bins);
            write_output(c.out.as_deref(), (serde_json::to_string_pretty(&summary)? + "\n").as_bytes())?;
        }
        Command::Compact { inputs } => {
            if !matches!(c.schema, SchemaArg::Full) {
                bail!("compact converts full records; pass --schema full");
            }
            let streams = load_inputs(inputs, Schema::Full)?;
            let mut out = open_output(c.out.as_deref())?;
            write_compact(&mut out, &streams)?;
            out.flush()?;
        }
        Command::Simulate { vocab, concentration, model_seed, model, save_model, tokens, texts, evaluator_seed } => {
            let spec: DecodingSpec = c.spec.parse()?;
            let generator = match model {
                Some(path) => {
                    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                    CategoricalLM::from_json(&text)?
                }
                None => random_model(*model_seed, *vocab, *concentration)?,
            };
            if let Some(path) = save_model {
                write_output(Some(path), (generator.to_json() + "\n").as_bytes())?;
            }
            let evaluator = evaluator_seed
                .map(|s| random_model(s, generator.vocab_size(), *concentration))
                .transpose()?;
            let runs: Vec<_> = (0..*texts)
                .into_par_iter()
                .map(|i| {
                    let run = generate(&generator, &spec, *tokens, c.seed.wrapping_add(i))?;
                    let records = match &evaluator {
                        Some(ev) => evaluate(&run, ev)?.full.unwrap_or_default(),
                        None => run.records,
                    };
                    Ok((run.text_id, records))
                })
                .collect::<dmap::Result<_>>()?;
            let mut out = open_output(c.out.as_deref())?;
            for (text_id, records) in &runs {
                write_full(&mut out, text_id, 0, records)?;
            }
            out.flush()?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn is_broken_pipe(err: &anyhow::Error) -> bool {
    err.chain().any(|cause| {
        cause.downcast_ref::<io::Error>().is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe)
            || matches!(cause.downcast_ref::<dmap::Error>(), Some(dmap::Error::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe)
    })
}

fn engine_config(c: &Common) -> Result<EngineConfig> {
    let cfg = EngineConfig {
        seed: c.seed,
        lambda: c.lambda,
        clip_mode: match c.clip_mode {
            ClipArg::Cap => ClipMode::Cap,
            ClipArg::Floor => ClipMode::Floor,
        },
        include_prompt: c.include_prompt,
        initial_cutoff: c.initial_cutoff,
        order_mode: match c.order {
            OrderArg::Dynamic => OrderMode::Dynamic,
            OrderArg::RandomPit => OrderMode::RandomPit,
        },
        entropy_range: c.entropy_slice.as_deref().map(str::parse::<EntropyRange>).transpose()?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn prepare(c: &Common, inputs: &[PathBuf]) -> Result<(Vec<TextRecordStream>, DecodingSpec, EngineConfig)> {
    let spec: DecodingSpec = c.spec.parse()?;
    let cfg = engine_config(c)?;
    let schema = match c.schema {
        SchemaArg::Full => Schema::Full,
        SchemaArg::Compact => Schema::Compact,
    };
    Ok((load_inputs(inputs, schema)?, spec, cfg))
}

/// Parses every input (in parallel), reports warnings in input order and
/// returns the texts sorted by `text_id`.
fn load_inputs(inputs: &[PathBuf], schema: Schema) -> Result<Vec<TextRecordStream>> {
    let parsed: Vec<_> = inputs
        .par_iter()
        .map(|path| -> Result<_> {
            let reader: Box<dyn BufRead> = if path.as_os_str() == "-" {
                Box::new(BufReader::new(io::stdin()))
            } else {
                Box::new(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
            };
            parse_stream(reader, schema).with_context(|| format!("parsing {}", path.display()))
        })
        .collect::<Result<_>>()?;
    let mut streams = Vec::new();
    for (path, input) in inputs.iter().zip(parsed) {
        for w in &input.warnings {
            eprintln!("warning: {}: {w}", path.display());
        }
        streams.extend(input.streams);
    }
    streams.sort_by(|a, b| a.text_id.cmp(&b.text_id));
    if let Some(dup) = streams.windows(2).find(|w| w[0].text_id == w[1].text_id) {
        bail!("text_id `{}` appears in more than one input", dup[0].text_id);
    }
    Ok(streams)
}

fn bin_count(flag: &str, auto: usize) -> Result<usize> {
    if flag == "auto" {
        return Ok(auto);
    }
    match flag.parse::<usize>() {
        Ok(k) if k >= 1 => Ok(k),
        _ => bail!("--bins must be `auto` or a positive integer, got `{flag}`"),
    }
}

fn report_impossible(n: usize) {
    if n > 0 {
        eprintln!("warning: {n} position(s) observed a token with zero probability under the spec");
    }
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_output(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    let mut out = open_output(path)?;
    out.write_all(bytes)?;
    out.flush()?;
    Ok(())
}
