//! SML front-end: lexing, parsing, validation, pretty-printing.
//!
//! Identifiers are case-sensitive and may contain `$` anywhere; names like
//! `$FWPART_$TOP$RPC_Chamber_CLASS` are opaque. The child patterns `$ANY$X`
//! and `$ALL$X` are recognized by prefix, with `FwCHILDREN` as the
//! class-independent selector.

pub mod ast;
pub mod lexer;
mod parser;
mod pretty;
mod validate;

pub use ast::*;
pub use parser::parse;
pub use pretty::{pretty_print, pretty_print_classes};
pub use validate::{alphabet, each_statement, validate, when_guard_states, Alphabet};

use crate::diag::{Diagnostic, Pos};
use thiserror::Error;

/// A fatal lexical or syntactic problem. Parsing stops at the first one.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{pos}: error: {message}")]
pub struct ParseError {
    pub pos: Pos,
    pub message: String,
}

impl ParseError {
    pub fn to_diagnostic(&self, file: &str) -> Diagnostic {
        Diagnostic::error(file, self.pos, self.message.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::fixture;
    use std::collections::BTreeSet;

    fn parse_one(src: &str) -> ClassDef {
        let mut classes = parse(src).expect("parse failed");
        assert_eq!(classes.len(), 1);
        classes.pop().unwrap()
    }

    #[test]
    fn chamber_off_state_shape() {
        let class = parse_one(&fixture("chamber.sml"));
        assert_eq!(class.name, "$FWPART_$TOP$RPC_Chamber_CLASS");
        assert_eq!(class.initial_state(), Some("OFF"));

        let off = class.state("OFF").unwrap();
        assert_eq!(off.whens.len(), 5);
        assert_eq!(off.actions.len(), 3);
        let action_names: Vec<_> = off.actions.iter().map(|a| a.name.as_str()).collect();
        assert_eq!(action_names, ["STANDBY", "OFF", "ON"]);

        // Clause 2 carries the two-state set and targets RAMPING.
        let Guard::Atom {
            pattern, states, ..
        } = &off.whens[1].guard
        else {
            panic!("clause 2 should be a bare atom");
        };
        assert_eq!(pattern.to_string(), "$ANY$RPC_HV");
        assert_eq!(states, &["RAMPING_UP", "RAMPING_DOWN"]);
        assert_eq!(
            off.whens[1].referer,
            Referer::MoveTo {
                target: "RAMPING".into(),
                pos: Pos::new(1, 1),
            }
        );
    }

    #[test]
    fn clause_positions_follow_source_order() {
        let class = parse_one(&fixture("chamber.sml"));
        let off = class.state("OFF").unwrap();
        let lines: Vec<_> = off.whens.iter().map(|w| w.pos.line).collect();
        let mut sorted = lines.clone();
        sorted.sort();
        assert_eq!(lines, sorted);
        assert!(off.pos < off.whens[0].pos);
    }

    #[test]
    fn minimal_class() {
        let class = parse_one("class: X\n state: S");
        assert_eq!(class.name, "X");
        assert_eq!(class.declared_states(), ["S"]);
        let s = class.state("S").unwrap();
        assert!(s.whens.is_empty() && s.actions.is_empty());
    }

    #[test]
    fn multi_class_file_splits_on_headers() {
        let classes = parse("class: A\n state: S\nclass: B\n state: T\n state: U").unwrap();
        assert_eq!(classes.len(), 2);
        assert_eq!(classes[0].name, "A");
        assert_eq!(classes[1].declared_states(), ["T", "U"]);
    }

    #[test]
    fn nested_if_body_round_trips() {
        let class = parse_one(&fixture("chamber_seq.sml"));
        let standby = class.state("OFF").unwrap().action("STANDBY").unwrap();
        assert_eq!(standby.body.len(), 3);
        let Statement::If {
            then_branch,
            else_branch,
            ..
        } = &standby.body[2]
        else {
            panic!("third statement should be the if");
        };
        assert_eq!(then_branch.len(), 3);
        assert_eq!(else_branch.len(), 3);
        let Statement::If {
            then_branch: inner, ..
        } = &then_branch[2]
        else {
            panic!("nested if expected");
        };
        assert!(matches!(inner[1], Statement::MoveTo { ref target, .. } if target == "ON"));
    }

    #[test]
    fn error_unbalanced_endif() {
        let err = parse("class: X\n state: S\n action: A\n do C $ALL$Y\n endif").unwrap_err();
        assert!(err.message.contains("unbalanced if"), "{}", err.message);
        let err = parse("class: X\n state: S\n action: A\n if ( $ALL$Y in_state B ) then do C $ALL$Y")
            .unwrap_err();
        assert!(err.message.contains("missing 'endif'"), "{}", err.message);
    }

    #[test]
    fn error_missing_state_after_move_to() {
        let err = parse("class: X\n state: S\n when ( $ANY$Y in_state A ) move_to").unwrap_err();
        assert_eq!(err.message, "missing state after move_to");
        assert_eq!(err.pos.line, 3);
    }

    #[test]
    fn error_unknown_keyword() {
        let err = parse("class: X\n state: S\n whenever ( x ) move_to T").unwrap_err();
        assert!(err.message.contains("unknown keyword 'whenever'"));
    }

    #[test]
    fn error_do_statement_rejects_any() {
        let err = parse("class: X\n state: S\n action: A\n do C $ANY$Y").unwrap_err();
        assert!(err.message.contains("$ALL$"));
    }

    #[test]
    fn error_empty_state_set() {
        let err = parse("class: X\n state: S\n when ( $ANY$Y in_state {} ) move_to T").unwrap_err();
        assert_eq!(err.message, "empty state set");
    }

    #[test]
    fn error_class_without_states() {
        let err = parse("class: X").unwrap_err();
        assert!(err.message.contains("declares no states"), "{}", err.message);
        // The second class is the offender; the first one is fine.
        let err = parse("class: X\n state: S\nclass: Y").unwrap_err();
        assert!(err.message.contains("'Y'"), "{}", err.message);
    }

    #[test]
    fn round_trip_fixture_corpus() {
        for name in [
            "chamber.sml",
            "chamber_seq.sml",
            "ecal_cooling_dee.sml",
            "endcap_like.sml",
            "rpc_monitor.sml",
            "rpc_hv.sml",
        ] {
            let first = parse(&fixture(name)).unwrap();
            let printed = pretty_print_classes(&first);
            let second = parse(&printed).unwrap_or_else(|e| panic!("{name} reprint: {e}"));
            assert_eq!(first, second, "{name} did not round-trip");
        }
    }

    #[test]
    fn validate_completed_chamber_is_clean() {
        let class = parse_one(&fixture("chamber.sml"));
        let known: BTreeSet<String> = ["RPC_HV", "RPC_LV", "RPC_T"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(validate(&class, &known, "chamber.sml"), vec![]);
    }

    #[test]
    fn validate_reports_missing_move_to_target_once() {
        let class = parse_one(&fixture("ecal_cooling_dee.sml"));
        let diags = validate(&class, &BTreeSet::new(), "ecal_cooling_dee.sml");
        assert_eq!(diags.len(), 1, "{diags:?}");
        assert!(diags[0].message.contains("'OK'"));
        assert!(diags[0].to_string().starts_with("ecal_cooling_dee.sml:"));
    }

    #[test]
    fn validate_flags_unknown_selector_and_ghost_action() {
        let src = "class: X\n state: S\n when ( $ANY$Mystery in_state A ) do GHOST";
        let class = parse_one(src);
        let diags = validate(&class, &BTreeSet::new(), "x.sml");
        assert_eq!(diags.len(), 2, "{diags:?}");
        assert!(diags.iter().any(|d| d.message.contains("'GHOST'")));
        assert!(diags.iter().any(|d| d.message.contains("'Mystery'")));
    }

    #[test]
    fn alphabet_of_chamber() {
        let class = parse_one(&fixture("chamber.sml"));
        let a = alphabet(&class);
        let states: Vec<_> = a.states.iter().map(String::as_str).collect();
        assert_eq!(states, ["ERROR", "OFF", "ON", "RAMPING", "STANDBY"]);
        let commands: Vec<_> = a.commands.iter().map(String::as_str).collect();
        assert_eq!(commands, ["OFF", "ON", "STANDBY"]);
        let kids: Vec<_> = a.child_classes.iter().map(String::as_str).collect();
        assert_eq!(kids, ["RPC_HV", "RPC_LV", "RPC_T"]);
    }

    #[test]
    fn alphabet_includes_move_to_only_states() {
        let class = parse_one(&fixture("ecal_cooling_dee.sml"));
        let a = alphabet(&class);
        let states: Vec<_> = a.states.iter().map(String::as_str).collect();
        assert_eq!(states, ["ERROR", "NO_CONNECTION", "OK"]);
        assert!(a.commands.is_empty());
        assert!(a.child_classes.is_empty());
        let mentioned: Vec<_> = when_guard_states(&class)
            .into_iter()
            .collect();
        assert_eq!(mentioned, ["ERROR", "NO_CONNECTION", "OK"]);
    }
}
