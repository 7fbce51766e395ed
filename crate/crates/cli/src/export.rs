//! The `export-mcrl2` subcommand: classes or whole topologies to process
//! algebra, plus the six requirement templates.

use crate::inputs::{classes_next_to, sha256_hex};
use crate::report::{Finding, InputDigest, UnitResult};
use anyhow::{bail, Context, Result};
use serde_json::json;
use smlcheck_core::hierarchy::load_config;
use smlcheck_core::mcrl2::{
    check_structure, emit_property, export_class, export_system, PropertyParams,
    PropertyTemplate, ALL_PROPERTIES,
};
use smlcheck_core::sml::{alphabet, parse};
use std::fs;
use std::path::PathBuf;
use std::time::Instant;

pub struct ExportArgs {
    pub input: PathBuf,
    pub output: Option<PathBuf>,
    pub props: Option<PathBuf>,
    pub class: Option<String>,
    pub json_format: bool,
}

/// Values the requirement templates get instantiated with.
struct Defaults {
    fsm: u64,
    child: Option<u64>,
    command: Option<String>,
}

pub struct ExportOutcome {
    pub inputs: Vec<InputDigest>,
    pub unit: UnitResult,
    /// The model text, printed to stdout when no output path was given.
    pub to_stdout: Option<String>,
}

pub fn run_export(args: &ExportArgs) -> Result<ExportOutcome> {
    if args.json_format && args.output.is_none() {
        bail!("--format json writes the report to stdout; give the model a home with -o");
    }
    let text = fs::read_to_string(&args.input)
        .with_context(|| format!("reading {}", args.input.display()))?;
    let inputs = vec![InputDigest {
        path: args.input.display().to_string(),
        sha256: sha256_hex(text.as_bytes()),
    }];

    let t0 = Instant::now();
    let mut unit = UnitResult::new(args.input.display().to_string(), None);
    let is_topology = args.input.extension().is_some_and(|e| e == "json");

    let (model, defaults) = if is_topology {
        let config = load_config(&text)
            .with_context(|| format!("loading {}", args.input.display()))?;
        let registry = classes_next_to(&args.input);
        let model = export_system(&config, &registry)?;
        let root = config
            .nodes
            .iter()
            .find(|n| n.parent.is_none())
            .expect("a loaded configuration has a root");
        let child = config
            .nodes
            .iter()
            .find(|n| n.parent == Some(root.id))
            .map(|n| n.id);
        let command = registry
            .get(&root.class)
            .and_then(|c| alphabet(c).commands.into_iter().next());
        let defaults = Defaults {
            fsm: root.id,
            child,
            command,
        };
        (model, defaults)
    } else {
        let classes = parse(&text)
            .map_err(|e| anyhow::anyhow!("{}: {}: {}", args.input.display(), e.pos, e.message))?;
        let class = match &args.class {
            Some(name) => classes
                .iter()
                .find(|c| &c.name == name)
                .with_context(|| format!("no class named '{name}' in {}", args.input.display()))?,
            None => {
                if classes.len() > 1 {
                    unit.notes.push(format!(
                        "file defines {} classes; exporting '{}' (pick another with --class)",
                        classes.len(),
                        classes[0].name
                    ));
                }
                &classes[0]
            }
        };
        unit.class = Some(class.name.clone());
        let command = alphabet(class).commands.into_iter().next();
        let defaults = Defaults {
            fsm: 1,
            child: None,
            command,
        };
        (export_class(class), defaults)
    };

    for issue in check_structure(&model) {
        unit.findings.push(Finding::new("export-structure", issue));
    }

    let mut written_to = None;
    match &args.output {
        Some(path) => {
            fs::write(path, &model).with_context(|| format!("writing {}", path.display()))?;
            unit.notes
                .push(format!("wrote {} bytes to {}", model.len(), path.display()));
            written_to = Some(path.display().to_string());
        }
        None => {}
    }

    let mut props_written = Vec::new();
    if let Some(dir) = &args.props {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for template in ALL_PROPERTIES {
            match property_text(template, &defaults) {
                Ok(text) => {
                    let path = dir.join(format!("{}.mcf", template.id()));
                    fs::write(&path, text)
                        .with_context(|| format!("writing {}", path.display()))?;
                    props_written.push(template.id().to_string());
                }
                Err(missing) => unit
                    .notes
                    .push(format!("skipped {}: {missing}", template.id())),
            }
        }
        unit.notes.push(format!(
            "wrote {} property templates to {}",
            props_written.len(),
            dir.display()
        ));
    }

    unit.summary = Some(json!({
        "model_bytes": model.len(),
        "output": written_to,
        "properties": props_written,
    }));
    unit.timing_ms = t0.elapsed().as_millis() as u64;

    let to_stdout = if args.output.is_none() { Some(model) } else { None };
    Ok(ExportOutcome {
        inputs,
        unit,
        to_stdout,
    })
}

fn property_text(template: PropertyTemplate, defaults: &Defaults) -> Result<String, String> {
    let params = PropertyParams {
        fsm: Some(defaults.fsm),
        child: defaults.child,
        command: defaults.command.clone(),
    };
    emit_property(template, &params).map_err(|_| {
        if template.params().contains(&"i_c") && defaults.child.is_none() {
            "the root has no child to address".to_string()
        } else {
            "the root class accepts no commands".to_string()
        }
    })
}
