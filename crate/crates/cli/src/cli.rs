//! `pcd` command-line dispatch.

use std::collections::{BTreeMap, HashMap};
use std::ffi::OsString;
use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use pcd_core::corpus::{
    apply_fixes, corpus_stats, load_corpus_dir, save_corpus_dir, Corpus, LoadMode,
};
use pcd_core::evaluation::Mode;
use pcd_core::interview::{Next, SessionRegistry, SessionStatus, Strategy};
use pcd_core::oracles::{ConfusionSpec, FailurePolicy};
use pcd_core::sharc::convert_corpus;
use pcd_core::{parse_tree, serialize_tree, tree_complexity, QuestionId, TriValue};

use crate::error::ApiError;
use crate::evaluate::{EvaluateRequest, OracleKind};
use crate::http::{serve, ServiceConfig};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Text,
    Machine,
}

#[derive(Debug, Parser)]
#[command(
    name = "pcd",
    version,
    about = "Policy compliance detection over expression trees of yes/no/nei questions"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse an expression tree and print its canonical form.
    ParseTree {
        expr: String,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Predict labels for a corpus and report metrics.
    Eval(EvalArgs),
    /// Convert ShARC utterances into a corpus directory.
    ConvertSharc {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out-dir")]
        out: PathBuf,
        /// Fail when a scenario's conversation gives conflicting answers.
        #[arg(long)]
        strict: bool,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Print corpus statistics.
    Stats {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Check corpus invariants.
    Validate {
        #[arg(long)]
        corpus: PathBuf,
        /// Apply the suggested fixes and write the repaired corpus here.
        #[arg(long)]
        fix_out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Run an interview session on the terminal.
    Interview {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        policy: String,
        #[arg(long, default_value = "order")]
        strategy: Strategy,
        /// Scripted answers such as `Q3=no,Q0=yes`; other questions are read from stdin.
        #[arg(long)]
        answers: Option<String>,
        /// Append-only session log.
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Run the HTTP gateway.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnFailure {
    Abort,
    Nei,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_enum, default_value_t)]
    pub oracle: OracleKind,
    #[arg(long, default_value = "all")]
    pub mode: Mode,
    /// JSON file `{"matrix": [[..],[..],[..]], "seed": n}`, rows and columns in yes/no/nei order.
    #[arg(long)]
    pub confusion: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub timeout_ms: Option<u64>,
    #[arg(long)]
    pub retries: Option<u32>,
    #[arg(long, value_enum)]
    pub on_failure: Option<OnFailure>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    /// Write the full report (with per-scenario records) as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Write per-policy scatter data as CSV.
    #[arg(long)]
    pub scatter: Option<PathBuf>,
    /// JSON object of named reference values to carry into the report.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long = "static")]
    pub static_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    pub max_in_flight: usize,
    #[arg(long, default_value_t = 1 << 20)]
    pub max_body_bytes: usize,
    #[arg(long, default_value_t = 1)]
    pub max_jobs: usize,
    /// Default remote oracle endpoint for `POST /evaluate`.
    #[arg(long)]
    pub endpoint: Option<String>,
}

/// Streams a command reads from and writes to.
pub struct Io<'a> {
    pub input: &'a mut dyn BufRead,
    pub out: &'a mut dyn Write,
    pub err: &'a mut dyn Write,
}

/// Runs `pcd` with `args` (including the program name) and returns the exit
/// code: 0 on success, 1 when the command fails, 2 on usage errors. Failures
/// print one JSON line `{code, message, detail?}` on stderr.
pub fn run<I, T>(args: I, io: &mut Io<'_>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(io.out, "{e}");
                return 0;
            }
            let message = e.to_string();
            let first = message
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ")
                .to_string();
            let _ = writeln!(io.err, "{}", ApiError::new(400, "usage", first).to_line());
            return 2;
        }
    };
    match dispatch(cli.command, io) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(io.err, "{}", e.to_line());
            1
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> ApiError {
    let code = if e.kind() == std::io::ErrorKind::NotFound {
        "missing_file"
    } else {
        "io_error"
    };
    ApiError::new(500, code, format!("{}: {e}", path.display()))
}

fn write_out(io: &mut Io<'_>, text: &str) -> Result<(), ApiError> {
    io.out
        .write_all(text.as_bytes())
        .map_err(|e| ApiError::new(500, "io_error", e.to_string()))
}

fn machine<T: Serialize>(io: &mut Io<'_>, value: &T) -> Result<(), ApiError> {
    let line = serde_json::to_string(value).expect("output serializes");
    write_out(io, &format!("{line}\n"))
}

fn require_dir(dir: &Path) -> Result<(), ApiError> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(ApiError::new(
            404,
            "missing_file",
            format!("corpus directory {} does not exist", dir.display()),
        ))
    }
}

fn load(dir: &Path) -> Result<Corpus, ApiError> {
    require_dir(dir)?;
    Ok(load_corpus_dir(dir, LoadMode::Audit)?.0)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ApiError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    serde_json::from_str(&text).map_err(|e| {
        ApiError::bad_request(format!("{}: {e}", path.display())).with_code("malformed_input")
    })
}

impl ApiError {
    fn with_code(mut self, code: &str) -> Self {
        self.code = code.into();
        self
    }
}

fn dispatch(command: Command, io: &mut Io<'_>) -> Result<(), ApiError> {
    match command {
        Command::ParseTree { expr, format } => {
            let tree = parse_tree(&expr)?;
            match format {
                Format::Text => write_out(io, &format!("{}\n", serialize_tree(&tree))),
                Format::Machine => machine(
                    io,
                    &serde_json::json!({
                        "tree": serialize_tree(&tree),
                        "questions": tree.questions(),
                        "complexity": tree_complexity(&tree),
                    }),
                ),
            }
        }
        Command::Eval(args) => eval(args, io),
        Command::ConvertSharc {
            input,
            out,
            strict,
            format,
        } => {
            if !input.is_file() {
                return Err(ApiError::new(
                    404,
                    "missing_file",
                    format!("{} does not exist", input.display()),
                ));
            }
            let conversion = convert_corpus(&input, strict)?;
            conversion.write_to(&out)?;
            match format {
                Format::Text => write_out(io, &conversion.report.to_text()),
                Format::Machine => machine(io, &conversion.report),
            }
        }
        Command::Stats { corpus, format } => {
            let stats = corpus_stats(&load(&corpus)?)?;
            match format {
                Format::Machine => machine(io, &stats),
                Format::Text => {
                    let h = |x: &pcd_core::corpus::Histogram| {
                        format!("yes={} no={} nei={}", x.yes, x.no, x.nei)
                    };
                    let text = format!(
                        "policies: {}\nscenarios: {}\nqa instances: {} (yes/no: {})\n\
                         avg questions per policy: {}\nlabels: {} unlabeled={}\nanswers: {}\n",
                        stats.policy_count,
                        stats.scenario_count,
                        stats.qa_count,
                        stats.qa_count_definite,
                        stats.avg_qa_per_policy_display(),
                        h(&stats.label_histogram),
                        stats.unlabeled_scenarios,
                        h(&stats.answer_histogram),
                    );
                    write_out(io, &text)
                }
            }
        }
        Command::Validate {
            corpus,
            fix_out,
            format,
        } => {
            require_dir(&corpus)?;
            let (loaded, violations) = load_corpus_dir(&corpus, LoadMode::Audit)?;
            match format {
                Format::Machine => machine(io, &serde_json::json!({ "violations": violations })),
                Format::Text => {
                    let mut text = format!("{} violations\n", violations.len());
                    for v in &violations {
                        text.push_str(&format!("{v}\n"));
                    }
                    write_out(io, &text)
                }
            }?;
            if let Some(dir) = fix_out {
                let fixed = apply_fixes(loaded, &violations);
                std::fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
                save_corpus_dir(&fixed, &dir)?;
                if format == Format::Text {
                    write_out(io, &format!("wrote repaired corpus to {}\n", dir.display()))?;
                }
            }
            Ok(())
        }
        Command::Interview {
            corpus,
            policy,
            strategy,
            answers,
            store,
            format,
        } => interview(
            &corpus,
            &policy,
            strategy,
            answers.as_deref(),
            store.as_deref(),
            format,
            io,
        ),
        Command::Serve(args) => {
            let config = ServiceConfig {
                bind: args.bind,
                corpus_dir: args.corpus,
                session_store: args.store,
                static_dir: args.static_dir,
                max_in_flight: args.max_in_flight,
                max_body_bytes: args.max_body_bytes,
                max_jobs: args.max_jobs,
                default_endpoint: args.endpoint,
            };
            config.check()?;
            let runtime = tokio::runtime::Runtime::new()
                .map_err(|e| ApiError::new(500, "internal", e.to_string()))?;
            runtime.block_on(serve(config))
        }
    }
}

fn eval(args: EvalArgs, io: &mut Io<'_>) -> Result<(), ApiError> {
    let corpus = load(&args.corpus)?;
    let confusion: Option<ConfusionSpec> = args.confusion.as_deref().map(read_json).transpose()?;
    let reference: BTreeMap<String, f64> = args
        .reference
        .as_deref()
        .map(read_json)
        .transpose()?
        .unwrap_or_default();
    let request = EvaluateRequest {
        oracle: args.oracle,
        mode: args.mode,
        confusion,
        seed: args.seed,
        endpoint: args.endpoint,
        timeout_ms: args.timeout_ms,
        retries: args.retries,
        on_failure: args.on_failure.map(|p| match p {
            OnFailure::Abort => FailurePolicy::Abort,
            OnFailure::Nei => FailurePolicy::SubstituteNei,
        }),
        workers: args.workers,
        reference,
    };
    let oracle = request.build_oracle(&corpus)?;
    let report = request.run_with(&corpus, &oracle)?;
    if let Some(path) = &args.report {
        let json = serde_json::to_vec_pretty(&report).expect("report serializes");
        std::fs::write(path, json).map_err(|e| io_error(path, e))?;
    }
    if let Some(path) = &args.scatter {
        std::fs::write(path, report.scatter_csv()).map_err(|e| io_error(path, e))?;
    }
    let incidents = oracle.incidents();
    if !incidents.is_empty() {
        let _ = writeln!(
            io.err,
            "{} oracle request(s) failed and were answered nei",
            incidents.len()
        );
    }
    match args.format {
        Format::Text => write_out(io, &report.to_text()),
        Format::Machine => machine(io, &report),
    }
}

fn parse_answers(spec: &str) -> Result<HashMap<QuestionId, TriValue>, ApiError> {
    let mut out = HashMap::new();
    for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (q, v) = item.split_once('=').ok_or_else(|| {
            ApiError::bad_request(format!("answer {item:?} is not of the form Q<n>=<value>"))
        })?;
        let q: QuestionId = q
            .trim()
            .parse()
            .map_err(|e| ApiError::bad_request(format!("{e}")))?;
        let v: TriValue = v
            .trim()
            .parse()
            .map_err(|e| ApiError::bad_request(format!("{e}")))?;
        out.insert(q, v);
    }
    Ok(out)
}

fn interview(
    corpus: &Path,
    policy: &str,
    strategy: Strategy,
    answers: Option<&str>,
    store: Option<&Path>,
    format: Format,
    io: &mut Io<'_>,
) -> Result<(), ApiError> {
    let corpus = Arc::new(load(corpus)?);
    let scripted = answers.map(parse_answers).transpose()?.unwrap_or_default();
    let registry = match store {
        Some(path) => SessionRegistry::with_store(corpus, path)?,
        None => SessionRegistry::new(corpus),
    };
    let mut view = registry.create(policy, strategy)?;
    let say = |io: &mut Io<'_>, text: &str| -> Result<(), ApiError> {
        let sink: &mut dyn Write = if format == Format::Text {
            &mut *io.out
        } else {
            &mut *io.err
        };
        sink.write_all(text.as_bytes())
            .map_err(|e| ApiError::new(500, "io_error", e.to_string()))
    };
    while let Some(Next::Question { question_id, text }) = view.next.clone() {
        let answer = match scripted.get(&question_id) {
            Some(v) => {
                say(io, &format!("{question_id}: {text}\n> {v}\n"))?;
                *v
            }
            None => loop {
                say(io, &format!("{question_id}: {text}\n[yes/no/nei]> "))?;
                let _ = io.out.flush();
                let mut line = String::new();
                let n = io
                    .input
                    .read_line(&mut line)
                    .map_err(|e| ApiError::new(500, "io_error", e.to_string()))?;
                if n == 0 {
                    registry.abandon(&view.session_id)?;
                    return Err(ApiError::new(
                        400,
                        "input_closed",
                        format!("no answer for {question_id}"),
                    ));
                }
                match line.trim().parse::<TriValue>() {
                    Ok(v) => break v,
                    Err(_) => say(io, "please answer yes, no or nei\n")?,
                }
            },
        };
        view = registry.answer(&view.session_id, question_id, answer)?;
    }
    match format {
        Format::Machine => machine(io, &view),
        Format::Text => {
            let mut text = match view.status {
                SessionStatus::Resolved { label } => format!("verdict: {label}\n"),
                _ => "verdict: undetermined\n".to_string(),
            };
            if !view.missing_information.is_empty() {
                let ids: Vec<String> = view
                    .missing_information
                    .iter()
                    .map(|q| q.to_string())
                    .collect();
                text.push_str(&format!("missing information: {}\n", ids.join(", ")));
            }
            write_out(io, &text)
        }
    }
}
