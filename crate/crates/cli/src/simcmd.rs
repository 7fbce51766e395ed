//! The `sim` subcommand: run one schedule (scripted, random or
//! interactive) or enumerate all of them.

use crate::inputs::{classes_next_to, sha256_hex};
use crate::report::{Finding, InputDigest, UnitResult};
use anyhow::{Context, Result};
use serde_json::json;
use smlcheck_core::hierarchy::{
    enumerate, load_config, load_script, Counters, Driver, Halt, RandomDriver, Scripted, Sim,
    SimReport,
};
use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::time::Instant;

pub struct SimArgs {
    pub topology: PathBuf,
    pub script: Option<PathBuf>,
    pub seed: Option<u64>,
    pub max_steps: u64,
    pub trace: Option<PathBuf>,
    pub repl: bool,
    pub enumerate: Option<usize>,
}

pub fn run_sim(args: &SimArgs) -> Result<(Vec<InputDigest>, UnitResult)> {
    let mut inputs = Vec::new();
    let topology_text = fs::read_to_string(&args.topology)
        .with_context(|| format!("reading {}", args.topology.display()))?;
    inputs.push(InputDigest {
        path: args.topology.display().to_string(),
        sha256: sha256_hex(topology_text.as_bytes()),
    });
    let config = load_config(&topology_text)
        .with_context(|| format!("loading {}", args.topology.display()))?;

    let script = match &args.script {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            inputs.push(InputDigest {
                path: path.display().to_string(),
                sha256: sha256_hex(text.as_bytes()),
            });
            load_script(&text).with_context(|| format!("loading {}", path.display()))?
        }
        None => Vec::new(),
    };

    let registry = classes_next_to(&args.topology);
    let mut sim = Sim::new(&config, &registry, script)
        .with_context(|| format!("building the tree from {}", args.topology.display()))?;

    let t0 = Instant::now();
    let mut unit = UnitResult::new(args.topology.display().to_string(), None);

    if let Some(limit) = args.enumerate {
        let totals = enumerate(&sim, limit);
        if totals.deadlocks > 0 {
            unit.findings.push(
                Finding::new(
                    "deadlock",
                    format!(
                        "{} deadlocked states among {} explored",
                        totals.deadlocks, totals.explored
                    ),
                )
                .with_data(totals),
            );
        }
        if totals.livelocks > 0 {
            unit.findings.push(
                Finding::new(
                    "livelock",
                    format!(
                        "{} livelocked states among {} explored",
                        totals.livelocks, totals.explored
                    ),
                )
                .with_data(totals),
            );
        }
        unit.notes.push(if totals.truncated {
            format!("visit limit {limit} hit; totals are lower bounds")
        } else {
            format!(
                "every schedule explored: {} states, {} quiescent",
                totals.explored, totals.quiescent
            )
        });
        unit.summary = Some(json!({ "enumeration": totals, "limit": limit }));
        unit.timing_ms = t0.elapsed().as_millis() as u64;
        return Ok((inputs, unit));
    }

    let report = if args.repl {
        run_repl(&mut sim, args.max_steps)?
    } else {
        let mut trace_file = match &args.trace {
            Some(path) => Some(BufWriter::new(fs::File::create(path).with_context(
                || format!("creating {}", path.display()),
            )?)),
            None => None,
        };
        let mut driver: Box<dyn Driver> = match args.seed {
            Some(seed) => Box::new(RandomDriver::new(seed)),
            None => Box::new(Scripted),
        };
        let report = sim.run(
            driver.as_mut(),
            args.max_steps,
            trace_file.as_mut().map(|w| w as &mut dyn io::Write),
        )?;
        if let Some(mut w) = trace_file {
            w.flush()?;
        }
        report
    };

    match &report.halt {
        Halt::Quiescent => unit
            .notes
            .push(format!("quiescent after {} steps", report.steps)),
        Halt::StepLimit => unit.notes.push(format!(
            "step limit ({}) reached without halting",
            args.max_steps
        )),
        Halt::Stopped => unit
            .notes
            .push(format!("stopped at the prompt after {} steps", report.steps)),
        Halt::Deadlock { stuck } => unit.findings.push(
            Finding::new(
                "deadlock",
                format!(
                    "no step enabled and the tree is not settled; stuck nodes: {}",
                    stuck
                        .iter()
                        .map(|n| n.to_string())
                        .collect::<Vec<_>>()
                        .join(", ")
                ),
            )
            .with_data(json!({ "stuck": stuck })),
        ),
        Halt::Livelock { node, cycle } => unit.findings.push(
            Finding::new(
                "livelock",
                format!(
                    "node {node} cycles {} -> {} without external input",
                    cycle.join(" -> "),
                    cycle[0]
                ),
            )
            .with_data(json!({ "node": node, "cycle": cycle })),
        ),
    }
    unit.notes.push(counters_line(&report.counters));
    unit.notes.push(states_line(&sim));
    unit.summary = Some(json!({
        "steps": report.steps,
        "halt": report.halt,
        "counters": report.counters,
        "states": final_states(&sim),
    }));
    unit.timing_ms = t0.elapsed().as_millis() as u64;
    Ok((inputs, unit))
}

fn final_states(sim: &Sim) -> BTreeMap<String, String> {
    sim.node_ids()
        .into_iter()
        .map(|id| {
            (
                id.to_string(),
                sim.state_of(id).unwrap_or_default().to_string(),
            )
        })
        .collect()
}

fn counters_line(c: &Counters) -> String {
    format!(
        "commands {}/{} delivered, updates {}/{} delivered ({} coalesced), \
         root reports {}, injections {} fired / {} overridden, {} ignored",
        c.commands_delivered,
        c.commands_enqueued,
        c.updates_delivered,
        c.updates_queued,
        c.updates_coalesced,
        c.root_reports,
        c.injections_fired,
        c.injections_overridden,
        c.ignored_commands
    )
}

fn states_line(sim: &Sim) -> String {
    let parts: Vec<String> = sim
        .node_ids()
        .into_iter()
        .map(|id| format!("{id}={}", sim.state_of(id).unwrap_or_default()))
        .collect();
    format!("final states: {}", parts.join(" "))
}

fn print_states(sim: &Sim) {
    for id in sim.node_ids() {
        println!(
            "  node {id}: {} in {}{}",
            sim.class_of(id).unwrap_or_default(),
            sim.state_of(id).unwrap_or_default(),
            if sim.is_stub(id) { " (stub)" } else { "" }
        );
    }
}

/// Interactive scheduling: the user picks every step.
fn run_repl(sim: &mut Sim, max_steps: u64) -> Result<SimReport> {
    let stdin = io::stdin();
    let mut line = String::new();
    let mut steps = 0u64;
    println!("interactive scheduler: number = apply that step, enter = step 0, s = states, c = counters, q = quit");
    let halt = loop {
        if let Some(halt) = sim.halted() {
            break halt.clone();
        }
        if steps >= max_steps {
            break Halt::StepLimit;
        }
        let mut enabled = sim.enabled();
        if enabled.is_empty() && sim.warp_to_next_injection() {
            enabled = sim.enabled();
        }
        if enabled.is_empty() {
            break if sim.is_quiescent() {
                Halt::Quiescent
            } else {
                Halt::Deadlock {
                    stuck: sim.stuck_nodes(),
                }
            };
        }
        println!("round {}, {} steps enabled:", sim.round(), enabled.len());
        for (i, step) in enabled.iter().enumerate() {
            println!("  [{i}] {step}");
        }
        print!("> ");
        io::stdout().flush()?;
        line.clear();
        if stdin.read_line(&mut line)? == 0 {
            break Halt::Stopped; // EOF
        }
        let choice = match line.trim() {
            "" => 0,
            "q" | "quit" => break Halt::Stopped,
            "s" => {
                print_states(sim);
                continue;
            }
            "c" => {
                println!("  {}", counters_line(&sim.counters()));
                continue;
            }
            other => match other.parse::<usize>() {
                Ok(i) if i < enabled.len() => i,
                _ => {
                    println!("  ? expected a step index below {}, s, c or q", enabled.len());
                    continue;
                }
            },
        };
        for event in sim.apply(&enabled[choice]) {
            println!("  {event:?}");
        }
        steps += 1;
    };
    Ok(SimReport {
        steps,
        halt,
        counters: sim.counters(),
    })
}
