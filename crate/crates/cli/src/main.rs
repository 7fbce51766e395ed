//! Command-line front end: parse/validate, loop search, reachability
//! diagnostics, tree simulation and mCRL2 export, with a shared report
//! format in text or JSON.
//!
//! Exit codes: 0 clean, 1 at least one finding, 2 usage or input error.

mod analyze;
mod export;
mod inputs;
mod report;
mod simcmd;

use analyze::{
    check_units, loops_units, model_options, per_file_units, reach_units, write_dimacs,
    LoopsParams,
};
use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use inputs::{known_classes, load_sml, parse_child_states, parse_multiplicity, SmlInput};
use report::{InputDigest, Report};
use smlcheck_core::kripke::child_model;
use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "smlcheck",
    version,
    about = "Verification toolkit for SML state manager classes"
)]
struct Cli {
    /// Report format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Parse class files and report validation diagnostics.
    Check {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Search for when-phase livelock cycles (bounded SAT route).
    Loops {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Child multiplicity: CLASS=N per class, or a bare N as the
        /// default for every class (2 when not given).
        #[arg(long, value_name = "CLASS=N")]
        multiplicity: Vec<String>,
        /// Override a child state alphabet: CLASS=S1,S2.
        #[arg(long, value_name = "CLASS=S1,S2")]
        child_states: Vec<String>,
        /// Unrolling bound; defaults to the state-universe size.
        #[arg(long)]
        bound: Option<usize>,
        /// Stop after this many sustaining configurations per class.
        #[arg(long, default_value_t = 16)]
        max_witnesses: usize,
        /// Write the CNF in DIMACS form (single class input only).
        #[arg(long, value_name = "PATH")]
        dimacs: Option<PathBuf>,
    },
    /// Build the state-change graph and report SCC diagnostics.
    Reach {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Child multiplicity: CLASS=N per class, or a bare N as the
        /// default for every class (2 when not given).
        #[arg(long, value_name = "CLASS=N")]
        multiplicity: Vec<String>,
        /// Override a child state alphabet: CLASS=S1,S2.
        #[arg(long, value_name = "CLASS=S1,S2")]
        child_states: Vec<String>,
        /// Write the graph in Graphviz DOT form (single class input only).
        #[arg(long, value_name = "PATH")]
        dot: Option<PathBuf>,
    },
    /// Simulate a node tree described by a topology file.
    Sim {
        topology: PathBuf,
        /// Inject commands from a script file (JSON lines).
        #[arg(long, value_name = "PATH")]
        script: Option<PathBuf>,
        /// Resolve scheduling choices with a seeded RNG.
        #[arg(long, conflicts_with = "repl")]
        seed: Option<u64>,
        #[arg(long, default_value_t = 100_000)]
        max_steps: u64,
        /// Write a JSON-lines trace of every applied step.
        #[arg(long, value_name = "PATH", conflicts_with = "repl")]
        trace: Option<PathBuf>,
        /// Pick every scheduler step interactively.
        #[arg(long)]
        repl: bool,
        /// Explore every schedule breadth-first up to a visited-state limit.
        #[arg(
            long,
            value_name = "LIMIT",
            conflicts_with_all = ["seed", "repl", "trace", "max_steps"]
        )]
        enumerate: Option<usize>,
    },
    /// Translate a class file or a topology to an mCRL2 specification.
    #[command(name = "export-mcrl2")]
    ExportMcrl2 {
        /// A .sml class file, or a .json topology.
        input: PathBuf,
        /// Write the model here instead of stdout.
        #[arg(short, long, value_name = "PATH")]
        output: Option<PathBuf>,
        /// Write the requirement templates (.mcf) into this directory.
        #[arg(long, value_name = "DIR")]
        props: Option<PathBuf>,
        /// Class to export when the file defines several.
        #[arg(long)]
        class: Option<String>,
    },
}

/// Dying quietly on a closed pipe beats a panic when output goes to
/// `head` and friends.
#[cfg(unix)]
fn reset_sigpipe() {
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
}

#[cfg(not(unix))]
fn reset_sigpipe() {}

fn main() -> ExitCode {
    reset_sigpipe();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("smlcheck: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    let report = match &cli.command {
        Command::Check { files } => {
            let inputs = load_all(files)?;
            let known: BTreeSet<String> = known_classes(&inputs).into_keys().collect();
            let mut report = Report::new("check");
            report.inputs = digests(&inputs);
            report.results = per_file_units(&inputs, |input| check_units(input, &known));
            report.seal()
        }
        Command::Loops {
            files,
            multiplicity,
            child_states,
            bound,
            max_witnesses,
            dimacs,
        } => {
            let inputs = load_all(files)?;
            let registry = known_classes(&inputs);
            let (default_count, counts) = parse_multiplicity(multiplicity)?;
            let overrides = parse_child_states(child_states)?;
            let params = LoopsParams {
                options: model_options(default_count, &counts, &overrides),
                bound: *bound,
                max_witnesses: *max_witnesses,
            };
            let mut report = Report::new("loops");
            report.inputs = digests(&inputs);
            report.results = per_file_units(&inputs, |input| loops_units(input, &registry, &params));
            if let Some(path) = dimacs {
                let class = single_class(&inputs, "--dimacs")?;
                let model = child_model(class, &registry, &params.options)?;
                let (vars, clauses) = write_dimacs(class, &model, params.bound, path)?;
                if let Some(unit) = report.results.first_mut() {
                    unit.notes.push(format!(
                        "wrote DIMACS to {} ({vars} vars, {clauses} clauses)",
                        path.display()
                    ));
                }
            }
            report.seal()
        }
        Command::Reach {
            files,
            multiplicity,
            child_states,
            dot,
        } => {
            let inputs = load_all(files)?;
            let registry = known_classes(&inputs);
            let (default_count, counts) = parse_multiplicity(multiplicity)?;
            let overrides = parse_child_states(child_states)?;
            let options = model_options(default_count, &counts, &overrides);
            let mut report = Report::new("reach");
            report.inputs = digests(&inputs);
            report.results =
                per_file_units(&inputs, |input| reach_units(input, &registry, &options));
            if let Some(path) = dot {
                let class = single_class(&inputs, "--dot")?;
                let model = child_model(class, &registry, &options)?;
                let graph = smlcheck_core::reach::ReachGraph::build(class, model)?;
                std::fs::write(path, graph.to_dot())
                    .with_context(|| format!("writing {}", path.display()))?;
                if let Some(unit) = report.results.first_mut() {
                    unit.notes.push(format!("wrote DOT to {}", path.display()));
                }
            }
            report.seal()
        }
        Command::Sim {
            topology,
            script,
            seed,
            max_steps,
            trace,
            repl,
            enumerate,
        } => {
            let (inputs, unit) = simcmd::run_sim(&simcmd::SimArgs {
                topology: topology.clone(),
                script: script.clone(),
                seed: *seed,
                max_steps: *max_steps,
                trace: trace.clone(),
                repl: *repl,
                enumerate: *enumerate,
            })?;
            let mut report = Report::new("sim");
            report.inputs = inputs;
            report.results = vec![unit];
            report.seal()
        }
        Command::ExportMcrl2 {
            input,
            output,
            props,
            class,
        } => {
            let outcome = export::run_export(&export::ExportArgs {
                input: input.clone(),
                output: output.clone(),
                props: props.clone(),
                class: class.clone(),
                json_format: cli.format == Format::Json,
            })?;
            let mut report = Report::new("export-mcrl2");
            report.inputs = outcome.inputs;
            report.results = vec![outcome.unit];
            let report = report.seal();
            // Without -o the model itself is the stdout payload; the report
            // only surfaces if something is wrong with it.
            if let Some(model) = outcome.to_stdout {
                print!("{model}");
                if report.findings_total > 0 {
                    eprint!("{}", report.to_text());
                }
                return Ok(exit_code(&report));
            }
            report
        }
    };

    match cli.format {
        Format::Text => print!("{}", report.to_text()),
        Format::Json => println!("{}", report.to_json()),
    }
    Ok(exit_code(&report))
}

fn exit_code(report: &Report) -> u8 {
    u8::try_from(report.exit_code()).expect("exit codes are 0 or 1")
}

fn load_all(files: &[PathBuf]) -> Result<Vec<SmlInput>> {
    files.iter().map(|p| load_sml(p)).collect()
}

fn digests(inputs: &[SmlInput]) -> Vec<InputDigest> {
    inputs
        .iter()
        .map(|i| InputDigest {
            path: i.display.clone(),
            sha256: i.digest.clone(),
        })
        .collect()
}

/// The single class required by `--dimacs` / `--dot`.
fn single_class<'a>(
    inputs: &'a [SmlInput],
    flag: &str,
) -> Result<&'a smlcheck_core::sml::ClassDef> {
    let mut found = None;
    for input in inputs {
        let classes = match &input.classes {
            Ok(c) => c,
            Err(e) => bail!("{flag} needs a parseable input: {}: {}", input.display, e.message),
        };
        for class in classes {
            if found.is_some() {
                bail!("{flag} needs exactly one class across the inputs");
            }
            found = Some(class);
        }
    }
    found.with_context(|| format!("{flag} needs exactly one class across the inputs"))
}
