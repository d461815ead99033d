//! `fairdyn` command-line interface.
//!
//! Exit codes: 0 success, 1 internal error, 2 input or validation error.

mod plot;

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};

use fairdyn::dynamics::{read_perf_series, GapMode};
use fairdyn::metrics::RecordMetric;
use fairdyn::prompts::{generate_prompts, parse_samples, write_prompts, CorpusFormat, Lexicon, PromptTemplate};
use fairdyn::records::{ingest, join_prompts, write_records, Joined};
use fairdyn::report::{build_report, compute_metric_table, significance_rows, JsdpMode, ReportConfig};
use fairdyn::stats::{significance_series, MwuMode, Selector, DEFAULT_ALPHA};
use fairdyn::synth::{generate, performance_series, write_perf_series, TrajectorySpec};
use fairdyn::table::{read_table, write_table};
use fairdyn::{GroupKey, PromptSuite};

#[derive(Parser)]
#[command(name = "fairdyn", version, about = "Fairness dynamics across training checkpoints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Tsv,
    Csv,
    Bracket,
}

#[derive(Subcommand)]
enum Command {
    /// Build a seeded prompt suite from a WinoBias-style corpus.
    GenPrompts {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value = "tsv")]
        format: FormatArg,
        /// Occupation stereotype lexicon, required for the bracket format.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        template: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u32>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate a record file, optionally against a prompt suite.
    IngestCheck {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        suite: Option<PathBuf>,
        #[arg(long)]
        allow_orphans: bool,
    },
    /// Per-group metric table from records and their prompt suite.
    Metrics {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        allow_orphans: bool,
        /// `sum` adds part-sum (full JSD) rows.
        #[arg(long, default_value = "parts")]
        jsdp_mode: JsdpMode,
    },
    /// Mann-Whitney U between two groups at every checkpoint.
    Stats {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-record metric: rank, jsdp_correct, jsdp_sum, jsdp_part_{male,female,not}.
        #[arg(long, default_value = "jsdp_correct")]
        metric: RecordMetric,
        #[arg(long, default_value = "answer=male")]
        group_a: GroupKey,
        #[arg(long, default_value = "answer=female")]
        group_b: GroupKey,
        #[arg(long)]
        model_a: Option<String>,
        #[arg(long)]
        model_b: Option<String>,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        /// exact, normal-approx or auto.
        #[arg(long, default_value = "auto")]
        mode: MwuMode,
        #[arg(long)]
        allow_orphans: bool,
    },
    /// Gap series, stopping recommendation and plot-series files.
    Report {
        #[arg(long)]
        metrics: PathBuf,
        /// Significance table written by `stats`.
        #[arg(long)]
        significance: Option<PathBuf>,
        /// Performance series (checkpoint_step, value).
        #[arg(long)]
        perf: Option<PathBuf>,
        /// Largest acceptable performance loss against the final checkpoint.
        #[arg(long, default_value_t = 0.0)]
        budget: f64,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        #[arg(long)]
        model: Option<String>,
        /// correct (per-group correct-option part) or sum (full JSD).
        #[arg(long, default_value = "correct")]
        gap_mode: GapMode,
        /// Half-width of the changepoint scan, in checkpoints.
        #[arg(long, default_value_t = 2)]
        window: usize,
        #[arg(long)]
        out_dir: PathBuf,
        /// Also render chart.svg.
        #[arg(long)]
        svg: bool,
    },
    /// Synthetic records and prompt suite with a bias onset.
    Synth {
        /// TOML or JSON trajectory spec; defaults apply when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        master_seed: u64,
        #[arg(long)]
        out_records: PathBuf,
        #[arg(long)]
        out_suite: PathBuf,
        /// Also write a performance series on the same checkpoint grid.
        #[arg(long)]
        perf_out: Option<PathBuf>,
        #[arg(long, default_value_t = 50.0)]
        perf_start: f64,
        /// Per-checkpoint increase before onset.
        #[arg(long, default_value_t = 1.0)]
        perf_slope: f64,
        /// Total increase from the last pre-onset checkpoint to the end.
        #[arg(long, default_value_t = 1.7)]
        perf_rise: f64,
    },
}

enum Failure {
    Input(anyhow::Error),
    Internal(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Self::Internal(e)
    }
}

type Outcome = Result<(), Failure>;

trait InputContext<T> {
    fn input(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> InputContext<T> for Result<T, E> {
    fn input(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Input(e.into()))
    }
}

fn bad_input(msg: impl Into<String>) -> Failure {
    Failure::Input(anyhow!(msg.into()))
}

fn require_file(path: &Path, what: &str) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(bad_input(format!("{what} '{}' does not exist or is not a file", path.display())))
    }
}

fn require_out_parent(path: &Path) -> Result<(), Failure> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => {
            Err(bad_input(format!("output directory '{}' does not exist", p.display())))
        }
        _ => Ok(()),
    }
}

fn require_alpha(alpha: f64) -> Result<(), Failure> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(bad_input(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path).map(BufReader::new).with_context(|| format!("cannot open '{}'", path.display())).input()
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    Ok(File::create(path).map(BufWriter::new).with_context(|| format!("cannot create '{}'", path.display()))?)
}

fn read_suite(path: &Path) -> Result<PromptSuite, Failure> {
    PromptSuite::read(open(path)?).with_context(|| format!("invalid prompt suite '{}'", path.display())).input()
}

/// Ingests and joins; any record diagnostic or join error is an input error.
fn load_joined(records: &Path, suite: &Path, allow_orphans: bool) -> Result<Joined, Failure> {
    let ingested = ingest(open(records)?).with_context(|| format!("reading '{}'", records.display())).input()?;
    if !ingested.diagnostics.is_empty() {
        for d in &ingested.diagnostics {
            eprintln!("{}: {d}", records.display());
        }
        return Err(bad_input(format!(
            "{} invalid record line(s) in '{}'",
            ingested.diagnostics.len(),
            records.display()
        )));
    }
    let suite = read_suite(suite)?;
    let joined = join_prompts(&ingested.dataset, &suite, allow_orphans);
    for issue in &joined.issues {
        eprintln!("{}: {issue}", if issue.is_error() { "error" } else { "warning" });
    }
    if joined.has_errors() {
        let n = joined.issues.iter().filter(|i| i.is_error()).count();
        return Err(bad_input(format!("{n} record(s) could not be matched to the prompt suite")));
    }
    Ok(joined)
}

fn gen_prompts(
    corpus: &Path,
    format: FormatArg,
    lexicon: Option<&Path>,
    template: Option<&Path>,
    seeds: &[u32],
    out: &Path,
) -> Outcome {
    require_file(corpus, "corpus")?;
    if let Some(l) = lexicon {
        require_file(l, "lexicon")?;
    }
    if let Some(t) = template {
        require_file(t, "template")?;
    }
    require_out_parent(out)?;
    if seeds.is_empty() {
        return Err(bad_input("at least one seed is required"));
    }

    let template = match template {
        Some(t) => {
            let text = std::fs::read_to_string(t).with_context(|| format!("cannot read '{}'", t.display())).input()?;
            PromptTemplate::parse(text.trim_end_matches('\n'))
                .with_context(|| format!("invalid template '{}'", t.display()))
                .input()?
        }
        None => PromptTemplate::default(),
    };
    let lexicon = match lexicon {
        Some(l) => Some(Lexicon::parse(open(l)?).map_err(|d| bad_input(format!("{}: {d}", l.display())))?),
        None => None,
    };
    let format = match format {
        FormatArg::Tsv => CorpusFormat::Delimited('\t'),
        FormatArg::Csv => CorpusFormat::Delimited(','),
        FormatArg::Bracket => CorpusFormat::Bracket,
    };
    let parsed = parse_samples(open(corpus)?, format, lexicon.as_ref()).input()?;
    for d in &parsed.diagnostics {
        eprintln!("{}: {d}", corpus.display());
    }
    if parsed.samples.is_empty() {
        return Err(bad_input(format!("no valid samples in '{}'", corpus.display())));
    }
    let prompts = generate_prompts(&parsed.samples, seeds, &template).input()?;
    write_prompts(&prompts, create(out)?).context("writing prompt suite")?;
    println!("{} samples → {} prompts", parsed.samples.len(), prompts.len());
    if !parsed.diagnostics.is_empty() {
        println!("{} line(s) rejected", parsed.diagnostics.len());
    }
    Ok(())
}

fn ingest_check(records: &Path, suite: Option<&Path>, allow_orphans: bool) -> Outcome {
    require_file(records, "record file")?;
    if let Some(s) = suite {
        require_file(s, "prompt suite")?;
    }
    let ingested = ingest(open(records)?).input()?;
    for d in &ingested.diagnostics {
        println!("{}: {d}", records.display());
    }
    let checkpoints = ingested.dataset.checkpoints();
    let models: BTreeSet<&str> = ingested.dataset.records().iter().map(|r| r.model_id.as_str()).collect();
    println!(
        "{} records, {} model(s), {} checkpoint(s), {} diagnostic(s)",
        ingested.dataset.len(),
        models.len(),
        checkpoints.len(),
        ingested.diagnostics.len()
    );
    let mut failed = !ingested.diagnostics.is_empty();
    if let Some(s) = suite {
        let suite = read_suite(s)?;
        let joined = join_prompts(&ingested.dataset, &suite, allow_orphans);
        for issue in &joined.issues {
            println!("{}: {issue}", if issue.is_error() { "error" } else { "warning" });
        }
        println!("{} of {} records matched the prompt suite", joined.records.len(), ingested.dataset.len());
        failed |= joined.has_errors();
    }
    if failed {
        Err(bad_input("record file failed validation"))
    } else {
        Ok(())
    }
}

fn metrics(records: &Path, suite: &Path, out: &Path, allow_orphans: bool, mode: JsdpMode) -> Outcome {
    require_file(records, "record file")?;
    require_file(suite, "prompt suite")?;
    require_out_parent(out)?;
    let joined = load_joined(records, suite, allow_orphans)?;
    let rows = compute_metric_table(&joined.records, mode).input()?;
    write_table(&rows, create(out)?).context("writing metric table")?;
    println!("{} records → {} metric rows", joined.records.len(), rows.len());
    Ok(())
}

/// Model column for significance rows: the shared model filter, else the
/// only model present, else `*`.
fn comparison_model(joined: &Joined, a: &Selector, b: &Selector) -> String {
    match (&a.model_id, &b.model_id) {
        (Some(x), Some(y)) if x == y => x.clone(),
        (Some(x), Some(y)) => format!("{x}|{y}"),
        (Some(x), None) | (None, Some(x)) => x.clone(),
        (None, None) => {
            let models: BTreeSet<&str> = joined.records.iter().map(|r| r.record.model_id.as_str()).collect();
            match models.len() {
                1 => models.first().expect("one").to_string(),
                _ => "*".to_string(),
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn stats(
    records: &Path,
    suite: &Path,
    out: &Path,
    metric: RecordMetric,
    a: Selector,
    b: Selector,
    alpha: f64,
    mode: MwuMode,
    allow_orphans: bool,
) -> Outcome {
    require_file(records, "record file")?;
    require_file(suite, "prompt suite")?;
    require_out_parent(out)?;
    require_alpha(alpha)?;
    let joined = load_joined(records, suite, allow_orphans)?;
    let points = significance_series(&joined.records, metric, &a, &b, alpha, mode).input()?;
    let comparison = format!("{}:{a} vs {b}", metric.name());
    let rows = significance_rows(&points, &comparison_model(&joined, &a, &b), &comparison);
    write_table(&rows, create(out)?).context("writing significance table")?;

    println!("{comparison} (alpha = {alpha})");
    for p in &points {
        match p.p_value() {
            Some(pv) => println!(
                "step {}: n = {}/{}, p = {pv:.3e}{}",
                p.checkpoint_step,
                p.n_a,
                p.n_b,
                if p.is_significant() { " *" } else { "" }
            ),
            None => println!("step {}: untestable (n = {}/{})", p.checkpoint_step, p.n_a, p.n_b),
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn report(
    metrics: &Path,
    significance: Option<&Path>,
    perf: Option<&Path>,
    config: ReportConfig,
    out_dir: &Path,
    svg: bool,
) -> Outcome {
    require_file(metrics, "metric table")?;
    if let Some(s) = significance {
        require_file(s, "significance table")?;
    }
    if let Some(p) = perf {
        require_file(p, "performance series")?;
    }
    require_alpha(config.alpha)?;
    if !(config.budget.is_finite() && config.budget >= 0.0) {
        return Err(bad_input(format!("budget must be finite and ≥ 0, got {}", config.budget)));
    }

    let mut rows = read_table(open(metrics)?).with_context(|| format!("invalid metric table '{}'", metrics.display())).input()?;
    if let Some(s) = significance {
        rows.extend(read_table(open(s)?).with_context(|| format!("invalid significance table '{}'", s.display())).input()?);
    }
    let perf = match perf {
        Some(p) => Some(
            read_perf_series(open(p)?, "performance")
                .with_context(|| format!("invalid performance series '{}'", p.display()))
                .input()?,
        ),
        None => None,
    };
    let report = build_report(&rows, perf, &config).input()?;

    std::fs::create_dir_all(out_dir).with_context(|| format!("cannot create '{}'", out_dir.display()))?;
    let mut json = create(&out_dir.join("report.json"))?;
    json.write_all(report.to_json().as_bytes()).context("writing report.json")?;
    json.flush().context("writing report.json")?;
    let summary = report.summary();
    std::fs::write(out_dir.join("summary.txt"), &summary).context("writing summary.txt")?;
    report.write_plot_series(create(&out_dir.join("plot_series.tsv"))?).context("writing plot_series.tsv")?;
    if svg {
        plot::render(&report, &out_dir.join("chart.svg"))?;
    }
    print!("{summary}");
    Ok(())
}

fn load_spec(path: &Path) -> Result<TrajectorySpec, Failure> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read '{}'", path.display())).input()?;
    let spec: TrajectorySpec = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).with_context(|| format!("invalid spec '{}'", path.display())).input()?
    } else {
        toml::from_str(&text).with_context(|| format!("invalid spec '{}'", path.display())).input()?
    };
    spec.validate().with_context(|| format!("invalid spec '{}'", path.display())).input()?;
    Ok(spec)
}

#[allow(clippy::too_many_arguments)]
fn synth(
    spec: Option<&Path>,
    master_seed: u64,
    out_records: &Path,
    out_suite: &Path,
    perf_out: Option<&Path>,
    perf: (f64, f64, f64),
) -> Outcome {
    if let Some(s) = spec {
        require_file(s, "spec")?;
    }
    for p in [Some(out_records), Some(out_suite), perf_out].into_iter().flatten() {
        require_out_parent(p)?;
    }
    let spec = match spec {
        Some(s) => load_spec(s)?,
        None => TrajectorySpec::default(),
    };
    let out = generate(&spec, master_seed).input()?;
    write_records(&out.records, create(out_records)?).context("writing records")?;
    write_prompts(&out.suite, create(out_suite)?).context("writing prompt suite")?;
    if let Some(p) = perf_out {
        let (start, slope, rise) = perf;
        write_perf_series(&performance_series(&spec, start, slope, rise), create(p)?).context("writing performance series")?;
    }
    println!(
        "{} prompts × {} checkpoints → {} records",
        out.suite.len(),
        spec.checkpoints.len(),
        out.records.len()
    );
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::GenPrompts { corpus, format, lexicon, template, seeds, out } => {
            gen_prompts(&corpus, format, lexicon.as_deref(), template.as_deref(), &seeds, &out)
        }
        Command::IngestCheck { records, suite, allow_orphans } => ingest_check(&records, suite.as_deref(), allow_orphans),
        Command::Metrics { records, suite, out, allow_orphans, jsdp_mode } => {
            metrics(&records, &suite, &out, allow_orphans, jsdp_mode)
        }
        Command::Stats { records, suite, out, metric, group_a, group_b, model_a, model_b, alpha, mode, allow_orphans } => {
            let a = Selector { model_id: model_a, group: group_a };
            let b = Selector { model_id: model_b, group: group_b };
            stats(&records, &suite, &out, metric, a, b, alpha, mode, allow_orphans)
        }
        Command::Report { metrics, significance, perf, budget, alpha, model, gap_mode, window, out_dir, svg } => {
            let config = ReportConfig { model_id: model, gap_mode, alpha, budget, window };
            report(&metrics, significance.as_deref(), perf.as_deref(), config, &out_dir, svg)
        }
        Command::Synth { spec, master_seed, out_records, out_suite, perf_out, perf_start, perf_slope, perf_rise } => synth(
            spec.as_deref(),
            master_seed,
            &out_records,
            &out_suite,
            perf_out.as_deref(),
            (perf_start, perf_slope, perf_rise),
        ),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Internal(e)) => {
            eprintln!("internal error: {e:#}");
            ExitCode::from(1)
        }
    }
}
