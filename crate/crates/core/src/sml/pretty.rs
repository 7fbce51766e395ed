//! Canonical text form. Printing then re-parsing yields a structurally
//! identical tree; positions differ, which equality ignores.

use super::ast::*;
use std::fmt::Write;

pub fn pretty_print(class: &ClassDef) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "class: {}", class.name);
    for state in &class.states {
        let _ = writeln!(out, "    state: {}", state.name);
        for when in &state.whens {
            let _ = writeln!(
                out,
                "        when ( {} ) {}",
                guard_str(&when.guard),
                referer_str(&when.referer)
            );
        }
        for action in &state.actions {
            let _ = writeln!(out, "        action: {}", action.name);
            write_statements(&mut out, &action.body, 3);
        }
    }
    out
}

/// Prints a whole file worth of classes.
pub fn pretty_print_classes(classes: &[ClassDef]) -> String {
    classes.iter().map(pretty_print).collect()
}

fn referer_str(referer: &Referer) -> String {
    match referer {
        Referer::MoveTo { target, .. } => format!("move_to {target}"),
        Referer::DoAction { action, .. } => format!("do {action}"),
    }
}

fn guard_str(guard: &Guard) -> String {
    match guard {
        Guard::Atom {
            pattern, states, ..
        } => {
            if states.len() == 1 {
                format!("{pattern} in_state {}", states[0])
            } else {
                format!("{pattern} in_state {{{}}}", states.join(", "))
            }
        }
        Guard::And(l, r) => format!("( {} ) and ( {} )", guard_str(l), guard_str(r)),
        Guard::Or(l, r) => format!("( {} ) or ( {} )", guard_str(l), guard_str(r)),
    }
}

fn write_statements(out: &mut String, body: &[Statement], depth: usize) {
    let pad = "    ".repeat(depth);
    for stmt in body {
        match stmt {
            Statement::Do {
                command, pattern, ..
            } => {
                let _ = writeln!(out, "{pad}do {command} {pattern}");
            }
            Statement::MoveTo { target, .. } => {
                let _ = writeln!(out, "{pad}move_to {target}");
            }
            Statement::If {
                guard,
                then_branch,
                else_branch,
                ..
            } => {
                let _ = writeln!(out, "{pad}if ( {} ) then", guard_str(guard));
                write_statements(out, then_branch, depth + 1);
                if !else_branch.is_empty() {
                    let _ = writeln!(out, "{pad}else");
                    write_statements(out, else_branch, depth + 1);
                }
                let _ = writeln!(out, "{pad}endif");
            }
        }
    }
}
