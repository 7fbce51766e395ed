//! Seeded random class generation for differential testing.
//!
//! The generator emits small classes in the `move_to`-only fragment: every
//! when clause moves to a declared state and no state defines actions, so
//! the when-phase analyses (explicit graph, bounded SAT search, state-change
//! graph) all apply and can be cross-checked pairwise. Generation goes
//! through source text and the real parser, so the corpus also exercises
//! the front end.
//!
//! The same seed always yields the same class.

use crate::kripke::{ModelOptions, ANON_CHILD_CLASS};
use crate::sml::ast::ClassDef;
use crate::sml::parse;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

const PARENT_POOL: [&str; 5] = ["OFF", "STANDBY", "ON", "ERROR", "RAMPING"];
const CHILD_POOL: [&str; 8] = [
    "OFF",
    "ON",
    "ERROR",
    "STANDBY",
    "RAMPING_UP",
    "RAMPING_DOWN",
    "OK",
    "TRIPPED",
];
const CHILD_CLASS_POOL: [&str; 3] = ["GEN_HV", "GEN_LV", "GEN_T"];

/// A generated class: the source it was parsed from and the model options
/// (child alphabets and multiplicities) it was generated against.
#[derive(Debug, Clone)]
pub struct GeneratedClass {
    pub source: String,
    pub class: ClassDef,
    pub options: ModelOptions,
}

struct ChildAlphabet {
    /// `None` is the `FwCHILDREN` wildcard.
    class: Option<String>,
    states: Vec<String>,
}

fn sample<'a, T>(rng: &mut ChaCha8Rng, pool: &'a [T], n: usize) -> Vec<&'a T> {
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    idx.shuffle(rng);
    idx.truncate(n);
    idx.into_iter().map(|i| &pool[i]).collect()
}

fn atom(rng: &mut ChaCha8Rng, children: &[ChildAlphabet]) -> String {
    let quant = if rng.gen_bool(0.5) { "$ANY$" } else { "$ALL$" };
    let child = &children[rng.gen_range(0..children.len())];
    let selector = child.class.as_deref().unwrap_or("FwCHILDREN");
    let n = 1 + usize::from(rng.gen_bool(0.3) && child.states.len() > 1);
    let states = sample(rng, &child.states, n);
    if n == 1 {
        format!("{quant}{selector} in_state {}", states[0])
    } else {
        format!(
            "{quant}{selector} in_state {{{}}}",
            states.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(",")
        )
    }
}

fn guard(rng: &mut ChaCha8Rng, children: &[ChildAlphabet]) -> String {
    let a = atom(rng, children);
    match rng.gen_range(0..10) {
        0..=5 => a,
        6 | 7 => {
            let op = if rng.gen_bool(0.5) { "and" } else { "or" };
            format!("{a} {op} {}", atom(rng, children))
        }
        8 => format!(
            "{a} and ( {} or {} )",
            atom(rng, children),
            atom(rng, children)
        ),
        _ => format!(
            "( {a} or {} ) and {}",
            atom(rng, children),
            atom(rng, children)
        ),
    }
}

/// Generates one class in the `move_to`-only fragment, deterministically
/// from `seed`.
pub fn random_class(seed: u64) -> GeneratedClass {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let n_states = rng.gen_range(2..=5);
    let states: Vec<String> = sample(&mut rng, &PARENT_POOL, n_states)
        .into_iter()
        .map(|s| s.to_string())
        .collect();

    // One in five classes quantifies over FwCHILDREN only, so the analyses
    // see the synthesized anonymous child class too.
    let children: Vec<ChildAlphabet> = if rng.gen_bool(0.2) {
        let n = rng.gen_range(2..=4);
        vec![ChildAlphabet {
            class: None,
            states: sample(&mut rng, &CHILD_POOL, n)
                .into_iter()
                .map(|s| s.to_string())
                .collect(),
        }]
    } else {
        let n_classes = rng.gen_range(1..=2);
        let mut out: Vec<ChildAlphabet> = sample(&mut rng, &CHILD_CLASS_POOL, n_classes)
            .into_iter()
            .map(|name| {
                let n = rng.gen_range(2..=4);
                ChildAlphabet {
                    class: Some(name.to_string()),
                    states: sample(&mut rng, &CHILD_POOL, n)
                        .into_iter()
                        .map(|s| s.to_string())
                        .collect(),
                }
            })
            .collect();
        // A wildcard alphabet alongside named classes: the union, used by
        // the occasional FwCHILDREN atom.
        let union: Vec<String> = {
            let mut all: Vec<String> = out.iter().flat_map(|c| c.states.clone()).collect();
            all.sort();
            all.dedup();
            all
        };
        out.push(ChildAlphabet {
            class: None,
            states: union,
        });
        out
    };

    let mut source = format!("class: Gen_{seed}\n");
    for state in &states {
        source.push_str(&format!("    state: {state}\n"));
        for _ in 0..rng.gen_range(0..=4) {
            let target = &states[rng.gen_range(0..states.len())];
            source.push_str(&format!(
                "        when ( {} ) move_to {target}\n",
                guard(&mut rng, &children)
            ));
        }
    }

    let mut options = ModelOptions::default();
    for child in &children {
        let Some(class) = &child.class else { continue };
        options
            .state_overrides
            .insert(class.clone(), child.states.clone());
        options.counts.insert(class.clone(), rng.gen_range(1..=2));
    }
    if children.iter().all(|c| c.class.is_none()) {
        options
            .counts
            .insert(ANON_CHILD_CLASS.to_string(), rng.gen_range(1..=2));
    }

    let class = parse(&source)
        .unwrap_or_else(|e| panic!("seed {seed} generated unparsable source: {e}\n{source}"))
        .remove(0);
    GeneratedClass {
        source,
        class,
        options,
    }
}
