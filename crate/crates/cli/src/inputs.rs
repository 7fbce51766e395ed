//! Input loading: class files, digests and the known-class registry.
//!
//! Child classes are resolved against every class defined in the supplied
//! files plus every parseable `.sml` file sitting next to them, so a class
//! split across one file per class (the usual layout) analyzes without
//! extra flags. Supplied files win over siblings on name clashes.

use anyhow::{bail, Context, Result};
use sha2::{Digest, Sha256};
use smlcheck_core::sml::{parse, ClassDef, ParseError};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

pub struct SmlInput {
    pub path: PathBuf,
    pub display: String,
    pub digest: String,
    pub classes: Result<Vec<ClassDef>, ParseError>,
}

pub fn load_sml(path: &Path) -> Result<SmlInput> {
    let source =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(SmlInput {
        path: path.to_path_buf(),
        display: path.display().to_string(),
        digest: sha256_hex(source.as_bytes()),
        classes: parse(&source),
    })
}

/// Classes visible to validation and child-model construction: everything
/// from the inputs, then everything from sibling `.sml` files (sorted by
/// file name; unparsable siblings are skipped).
pub fn known_classes(inputs: &[SmlInput]) -> BTreeMap<String, ClassDef> {
    let mut registry = BTreeMap::new();
    for input in inputs {
        if let Ok(classes) = &input.classes {
            for class in classes {
                registry.entry(class.name.clone()).or_insert_with(|| class.clone());
            }
        }
    }
    let mut dirs: Vec<PathBuf> = inputs
        .iter()
        .map(|i| i.path.parent().unwrap_or(Path::new(".")).to_path_buf())
        .collect();
    dirs.sort();
    dirs.dedup();
    let supplied: Vec<PathBuf> = inputs.iter().filter_map(|i| i.path.canonicalize().ok()).collect();
    for dir in dirs {
        for path in sml_files_in(&dir) {
            if path
                .canonicalize()
                .map(|c| supplied.contains(&c))
                .unwrap_or(false)
            {
                continue;
            }
            let Ok(source) = fs::read_to_string(&path) else { continue };
            let Ok(classes) = parse(&source) else { continue };
            for class in classes {
                registry.entry(class.name.clone()).or_insert(class);
            }
        }
    }
    registry
}

/// Registry for a topology file: every parseable `.sml` next to it.
pub fn classes_next_to(path: &Path) -> BTreeMap<String, ClassDef> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut registry = BTreeMap::new();
    for file in sml_files_in(dir) {
        let Ok(source) = fs::read_to_string(&file) else { continue };
        let Ok(classes) = parse(&source) else { continue };
        for class in classes {
            registry.entry(class.name.clone()).or_insert(class);
        }
    }
    registry
}

fn sml_files_in(dir: &Path) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .into_iter()
        .flatten()
        .flatten()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "sml") && p.is_file())
        .collect();
    files.sort();
    files
}

/// `--multiplicity` values: either a bare default count or `CLASS=N`.
/// The default is two children per class: with one child `$ANY$` and
/// `$ALL$` coincide and no mixed-state configuration exists, so analyses
/// would miss everything that needs disagreeing siblings.
pub fn parse_multiplicity(args: &[String]) -> Result<(usize, BTreeMap<String, usize>)> {
    let mut default = 2;
    let mut counts = BTreeMap::new();
    for arg in args {
        match arg.split_once('=') {
            Some((class, n)) => {
                let n: usize = n
                    .parse()
                    .with_context(|| format!("--multiplicity {arg}: count is not a number"))?;
                if n == 0 {
                    bail!("--multiplicity {arg}: count must be at least 1");
                }
                counts.insert(class.to_string(), n);
            }
            None => {
                default = arg
                    .parse()
                    .with_context(|| format!("--multiplicity {arg}: expected CLASS=N or a number"))?;
                if default == 0 {
                    bail!("--multiplicity {arg}: count must be at least 1");
                }
            }
        }
    }
    Ok((default, counts))
}

/// `--child-states CLASS=S1,S2` values.
pub fn parse_child_states(args: &[String]) -> Result<BTreeMap<String, Vec<String>>> {
    let mut overrides = BTreeMap::new();
    for arg in args {
        let Some((class, states)) = arg.split_once('=') else {
            bail!("--child-states {arg}: expected CLASS=S1,S2");
        };
        let states: Vec<String> = states
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        if states.is_empty() {
            bail!("--child-states {arg}: the state list is empty");
        }
        overrides.insert(class.to_string(), states);
    }
    Ok(overrides)
}
