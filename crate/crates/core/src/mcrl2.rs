//! mCRL2 export: process-algebraic text for classes and hierarchies, plus
//! modal µ-calculus requirement templates.
//!
//! Every class becomes one recursive process over the parameters
//! `(self, parent, s, chs, phase, aArgs)`. The when phase of each state is
//! a chain of nested conditionals, one per when clause, whose final else
//! reports the settled state and switches to the action phase. The action
//! phase dispatches on a program counter: label 0 is the command selector,
//! every statement gets a label in depth-first source order starting at 1,
//! and label -1 drains the command queue and returns to the when phase.
//! Command delivery and state reports are synchronizations: `send_*` and
//! `receive_*` pairs meet in `comm_*` actions under the top-level
//! communication operator, and an `ENV` process closes the root so the
//! composed system has no dangling synchronization partners.
//!
//! `$` is not a legal identifier character in mCRL2, so SML names are
//! rewritten with [`mangle`]; each emitted file lists the renamed
//! identifiers in its comment header.
//!
//! The generated text is deterministic: equal input yields byte-identical
//! output, which keeps the exports diffable and testable against golden
//! files.

use crate::hierarchy::Configuration;
use crate::kripke::state_universe;
use crate::semantics::{CompiledClass, CompiledStmt, InstanceId};
use crate::sml::ast::*;
use crate::sml::{alphabet, each_statement, when_guard_states};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExportError {
    #[error("node {node} uses class '{class}', which is not defined")]
    UnknownClass { node: InstanceId, class: String },
    #[error("node {node} starts in '{state}', which class '{class}' does not declare")]
    UndeclaredInitial {
        node: InstanceId,
        state: String,
        class: String,
    },
    #[error("property '{template}' needs parameter '{param}'")]
    MissingParameter {
        template: &'static str,
        param: &'static str,
    },
}

/// Rewrites an SML identifier into a legal mCRL2 identifier.
pub fn mangle(name: &str) -> String {
    name.replace('$', "_S_")
}

/// Inverse of [`mangle`] for names that came out of it.
pub fn demangle(name: &str) -> String {
    name.replace("_S_", "$")
}

/// Everything name-like a unit must declare: state, command and class-name
/// constructors, plus one queue-append function per distinct
/// (selector, command) pair found in `do` statements.
#[derive(Debug, Default)]
struct Universe {
    states: BTreeSet<String>,
    commands: BTreeSet<String>,
    classes: BTreeSet<String>,
    /// (selector key, command) -> emitted map name. The key is the child
    /// class name, or "FwCHILDREN" for the wildcard selector.
    helpers: BTreeMap<(String, String), String>,
}

fn selector_key(sel: &Selector) -> String {
    match sel {
        Selector::Class(name) => name.clone(),
        Selector::FwChildren => "FwCHILDREN".to_string(),
    }
}

impl Universe {
    fn absorb_class(&mut self, class: &ClassDef) {
        let a = alphabet(class);
        self.states.extend(a.states);
        self.commands.extend(a.commands);
        self.classes.extend(a.child_classes);
        self.classes.insert(class.name.clone());
        self.states.extend(when_guard_states(class));
        for state in &class.states {
            for action in &state.actions {
                each_statement(&action.body, &mut |stmt| match stmt {
                    Statement::Do {
                        command, pattern, ..
                    } => {
                        let key = (selector_key(&pattern.selector), command.clone());
                        let name = format!(
                            "add_{}_{}_commands",
                            mangle(&key.0),
                            mangle(&key.1)
                        );
                        self.helpers.insert(key, name);
                    }
                    Statement::If { guard, .. } => {
                        for atom in guard.atoms() {
                            if let Guard::Atom { states, .. } = atom {
                                self.states.extend(states.iter().cloned());
                            }
                        }
                    }
                    Statement::MoveTo { .. } => {}
                });
            }
        }
    }

    /// Stubs adopt command names as states, so every command doubles as a
    /// state constructor; `c2s` maps between the two.
    fn state_constructors(&self) -> BTreeSet<String> {
        let mut out = self.states.clone();
        out.extend(self.commands.iter().cloned());
        out
    }

    fn renames(&self) -> Vec<(String, String)> {
        let mut all: BTreeSet<&String> = BTreeSet::new();
        all.extend(&self.states);
        all.extend(&self.commands);
        all.extend(&self.classes);
        all.into_iter()
            .filter(|n| n.contains('$'))
            .map(|n| (n.clone(), mangle(n)))
            .collect()
    }
}

/// One instance line of the composed system.
struct NodeInst {
    id: InstanceId,
    parent: InstanceId,
    class: String,
    initial: String,
    stub: bool,
    /// (id, class, initial) of each child, in configuration order.
    children: Vec<(InstanceId, String, String)>,
}

type Lines = Vec<(usize, String)>;

/// Joins process summands with `+`, keeping continuation lines aligned
/// under the first.
fn join_summands(parts: Vec<Lines>, base: usize) -> Lines {
    let mut out = Lines::new();
    for (k, part) in parts.into_iter().enumerate() {
        for (i, (ind, text)) in part.into_iter().enumerate() {
            if i == 0 {
                if k == 0 {
                    out.push((base + 2, text));
                } else {
                    out.push((base, format!("+ {text}")));
                }
            } else {
                out.push((base + 2 + ind, text));
            }
        }
    }
    out
}

fn render(lines: &Lines) -> String {
    let mut out = String::new();
    for (ind, text) in lines {
        for _ in 0..*ind {
            out.push(' ');
        }
        out.push_str(text);
        out.push('\n');
    }
    out
}

fn guard_expr(guard: &Guard) -> String {
    match guard {
        Guard::Atom {
            pattern, states, ..
        } => {
            let list = states
                .iter()
                .map(|s| mangle(s))
                .collect::<Vec<_>>()
                .join(", ");
            match (pattern.quant, &pattern.selector) {
                (Quant::Any, Selector::FwChildren) => format!("any_in_state(chs, [{list}])"),
                (Quant::All, Selector::FwChildren) => format!("all_in_state(chs, [{list}])"),
                (Quant::Any, Selector::Class(c)) => {
                    format!("any_of_in_state(chs, {}, [{list}])", mangle(c))
                }
                (Quant::All, Selector::Class(c)) => {
                    format!("all_of_in_state(chs, {}, [{list}])", mangle(c))
                }
            }
        }
        Guard::And(l, r) => format!("({} && {})", guard_expr(l), guard_expr(r)),
        Guard::Or(l, r) => format!("({} || {})", guard_expr(l), guard_expr(r)),
    }
}

fn call(proc: &str, s: &str, chs: &str, phase: &str, aargs: &str) -> String {
    format!("{proc}(self, parent, {s}, {chs}, {phase}, {aargs})")
}

const FLUSH_RECV: &str = "send_command(self, cm_id(head(cq(aArgs))), cm_cmd(head(cq(aArgs)))) .";

/// The when phase of one state: one conditional per clause, settling tail
/// last. Do-referer clauses whose action the state does not define never
/// fire and are dropped.
fn when_block(proc: &str, class: &CompiledClass, state: &str) -> Lines {
    let sm = mangle(state);
    let mut lines: Lines = vec![(0, format!("(instate_{sm}(s) && isWhenPhase(phase) -> ("))];
    let clause = class.def().state(state);
    let whens: &[WhenClause] = clause.map(|c| c.whens.as_slice()).unwrap_or(&[]);
    for when in whens {
        match &when.referer {
            Referer::MoveTo { target, .. } => {
                let t = mangle(target);
                lines.push((2, format!("{} ->", guard_expr(&when.guard))));
                lines.push((4, format!("move_state(self, {t}) .")));
                lines.push((4, format!("{}", call(proc, &t, "chs", "phase", "aArgs"))));
                lines.push((2, "<>".to_string()));
            }
            Referer::DoAction { action, .. } => {
                let Some(entry) = class.action_entry(state, action) else {
                    continue;
                };
                lines.push((2, format!("{} ->", guard_expr(&when.guard))));
                lines.push((4, "move_phase(self, ActionPhase) .".to_string()));
                lines.push((
                    4,
                    call(
                        proc,
                        "s",
                        "chs",
                        "ActionPhase",
                        &format!("actArgs([], {entry})"),
                    ),
                ));
                lines.push((2, "<>".to_string()));
            }
        }
    }
    lines.push((2, "send_state(self, parent, s) .".to_string()));
    lines.push((2, "move_phase(self, ActionPhase) .".to_string()));
    lines.push((
        2,
        format!(
            "{}))",
            call(proc, "s", "chs", "ActionPhase", "reset(aArgs)")
        ),
    ));
    lines
}

/// The action phase of one state: the label-0 command selector plus one
/// summand per statement label.
fn action_block(proc: &str, class: &CompiledClass, state: &str, u: &Universe) -> Lines {
    let sm = mangle(state);
    let mut parts: Vec<Lines> = Vec::new();

    let mut sel: Lines = vec![
        (0, "((pc(aArgs) == 0) ->".to_string()),
        (2, "(sum c: Command . (".to_string()),
        (4, "receive_command(parent, self, c) . (".to_string()),
    ];
    let entries: &[(String, i32)] = class
        .table(state)
        .map(|t| t.entries())
        .unwrap_or(&[]);
    for (action, entry) in entries {
        sel.push((4, format!("isC_{}(c) ->", mangle(action))));
        sel.push((
            6,
            call(proc, "s", "chs", "phase", &format!("update_pc(aArgs, {entry})")),
        ));
        sel.push((4, "<>".to_string()));
    }
    sel.push((4, "send_state(self, parent, s) .".to_string()));
    sel.push((4, "ignored_command(self, c) .".to_string()));
    sel.push((
        4,
        format!(
            "{}))))",
            call(proc, "s", "chs", "phase", "update_pc(aArgs, -1)")
        ),
    ));
    parts.push(sel);

    if let Some(table) = class.table(state) {
        for (label, stmt) in table.stmts() {
            let mut part: Lines = vec![(0, format!("((pc(aArgs) == {label}) ->"))];
            match stmt {
                CompiledStmt::Do { command, pattern, succ } => {
                    let key = (selector_key(&pattern.selector), command.clone());
                    let helper = &u.helpers[&key];
                    part.push((
                        2,
                        format!(
                            "{})",
                            call(
                                proc,
                                "s",
                                "chs",
                                "phase",
                                &format!("{helper}(chs, update_pc(aArgs, {succ}))")
                            )
                        ),
                    ));
                }
                CompiledStmt::MoveTo { target } => {
                    let t = mangle(target);
                    part.push((2, "((cq(aArgs) != []) ->".to_string()));
                    part.push((4, FLUSH_RECV.to_string()));
                    part.push((
                        4,
                        call(
                            proc,
                            "s",
                            "chs",
                            "phase",
                            &format!("actArgs(tail(cq(aArgs)), {label})"),
                        ),
                    ));
                    part.push((2, "<>".to_string()));
                    part.push((2, format!("move_state(self, {t}) .")));
                    part.push((
                        2,
                        format!(
                            "{}))",
                            call(proc, &t, "chs", "phase", "update_pc(aArgs, -1)")
                        ),
                    ));
                }
                CompiledStmt::If {
                    guard,
                    then_entry,
                    else_entry,
                } => {
                    part.push((2, "((cq(aArgs) != []) ->".to_string()));
                    part.push((4, FLUSH_RECV.to_string()));
                    part.push((
                        4,
                        call(
                            proc,
                            "s",
                            "chs",
                            "phase",
                            &format!("actArgs(tail(cq(aArgs)), {label})"),
                        ),
                    ));
                    part.push((2, "<>".to_string()));
                    part.push((2, format!("({} ->", guard_expr(guard))));
                    part.push((
                        4,
                        call(
                            proc,
                            "s",
                            "chs",
                            "phase",
                            &format!("update_pc(aArgs, {then_entry})"),
                        ),
                    ));
                    part.push((2, "<>".to_string()));
                    part.push((
                        2,
                        format!(
                            "{})))",
                            call(
                                proc,
                                "s",
                                "chs",
                                "phase",
                                &format!("update_pc(aArgs, {else_entry})")
                            )
                        ),
                    ));
                }
            }
            parts.push(part);
        }
    }

    let mut lines: Lines = vec![(0, format!("(instate_{sm}(s) && isActPhase(phase) -> ("))];
    lines.extend(join_summands(parts, 2));
    let last = lines.len() - 1;
    lines[last].1.push_str("))");
    lines
}

/// State-independent action-phase behavior: draining the queue at label -1
/// and absorbing child state reports.
fn shared_action_block(proc: &str) -> Lines {
    let drain: Lines = vec![
        (0, "((pc(aArgs) == -1) ->".to_string()),
        (2, "((cq(aArgs) != []) ->".to_string()),
        (4, FLUSH_RECV.to_string()),
        (
            4,
            call(proc, "s", "chs", "phase", "actArgs(tail(cq(aArgs)), -1)"),
        ),
        (2, "<>".to_string()),
        (2, "move_phase(self, WhenPhase) .".to_string()),
        (
            2,
            format!("{}))", call(proc, "s", "chs", "WhenPhase", "reset(aArgs)")),
        ),
    ];
    let recv: Lines = vec![
        (0, "(sum i_c: Id, s_c: State . (".to_string()),
        (2, "(is_child(i_c, chs)) ->".to_string()),
        (4, "receive_state(i_c, self, s_c) .".to_string()),
        (4, "((pc(aArgs) == 0) ->".to_string()),
        (6, "move_phase(self, WhenPhase) .".to_string()),
        (
            6,
            call(
                proc,
                "s",
                "upd_child(chs, i_c, s_c)",
                "WhenPhase",
                "reset(aArgs)",
            ),
        ),
        (4, "<>".to_string()),
        (
            4,
            format!(
                "{})))",
                call(proc, "s", "upd_child(chs, i_c, s_c)", "phase", "aArgs")
            ),
        ),
    ];
    let mut lines: Lines = vec![(0, "(isActPhase(phase) -> (".to_string())];
    lines.extend(join_summands(vec![drain, recv], 2));
    let last = lines.len() - 1;
    lines[last].1.push_str("))");
    lines
}

fn proc_def(class: &CompiledClass) -> String {
    let proc = format!("X_{}", mangle(&class.def().name));
    let universe_of = state_universe(class.def());
    let mut u = Universe::default();
    u.absorb_class(class.def());

    let mut parts: Vec<Lines> = Vec::new();
    for state in &universe_of {
        parts.push(when_block(&proc, class, state));
        parts.push(action_block(&proc, class, state, &u));
    }
    parts.push(shared_action_block(&proc));

    let mut lines: Lines = vec![(
        2,
        format!(
            "{proc}(self: Id, parent: Id, s: State, chs: Children, phase: Phase, aArgs: ActPhaseArgs) ="
        ),
    )];
    lines.extend(join_summands(parts, 4));
    let last = lines.len() - 1;
    lines[last].1.push(';');
    render(&lines)
}

fn env_def() -> &'static str {
    "  ENV(root: Id) =\n      (sum c: Command . send_command(0, root, c) . ENV(root))\n    + (sum s: State . receive_state(root, 0, s) . ENV(root));\n"
}

fn stub_def() -> &'static str {
    "  STUB(self: Id, parent: Id, s: State) =\n      sum c: Command . receive_command(parent, self, c) .\n        send_state(self, parent, c2s(c)) .\n        STUB(self, parent, c2s(c));\n"
}

fn sort_section(u: &Universe) -> String {
    let mut out = String::from("sort\n  Id = Nat;\n");
    let alt = |names: &BTreeSet<String>, recognizer: Option<&str>| -> String {
        names
            .iter()
            .map(|n| {
                let m = mangle(n);
                match recognizer {
                    Some(prefix) => format!("    {m}?{prefix}{m}"),
                    None => format!("    {m}"),
                }
            })
            .collect::<Vec<_>>()
            .join(" |\n")
    };
    let _ = writeln!(
        out,
        "  State = struct\n{};",
        alt(&u.state_constructors(), Some("instate_"))
    );
    let _ = writeln!(out, "  Command = struct\n{};", alt(&u.commands, Some("isC_")));
    let _ = writeln!(out, "  ClassName = struct\n{};", alt(&u.classes, None));
    out.push_str(concat!(
        "  Phase = struct WhenPhase?isWhenPhase | ActionPhase?isActPhase;\n",
        "  Child = struct child(ch_id: Id, ch_type: ClassName, ch_state: State);\n",
        "  Children = List(Child);\n",
        "  CmdMsg = struct cmd_msg(cm_id: Id, cm_cmd: Command);\n",
        "  CommandQueue = List(CmdMsg);\n",
        "  ActPhaseArgs = struct actArgs(cq: CommandQueue, pc: Int);\n",
    ));
    out
}

fn act_section() -> &'static str {
    concat!(
        "act\n",
        "  move_state: Id # State;\n",
        "  send_state: Id # Id # State;\n",
        "  receive_state: Id # Id # State;\n",
        "  comm_state: Id # Id # State;\n",
        "  move_phase: Id # Phase;\n",
        "  send_command: Id # Id # Command;\n",
        "  receive_command: Id # Id # Command;\n",
        "  comm_command: Id # Id # Command;\n",
        "  ignored_command: Id # Command;\n",
    )
}

fn map_section(u: &Universe) -> String {
    let mut out = String::from("map\n");
    out.push_str("  update_pc: ActPhaseArgs # Int -> ActPhaseArgs;\n");
    out.push_str("  reset: ActPhaseArgs -> ActPhaseArgs;\n");
    out.push_str("  c2s: Command -> State;\n");
    out.push_str("  any_in_state: Children # List(State) -> Bool;\n");
    out.push_str("  all_in_state: Children # List(State) -> Bool;\n");
    out.push_str("  any_of_in_state: Children # ClassName # List(State) -> Bool;\n");
    out.push_str("  all_of_in_state: Children # ClassName # List(State) -> Bool;\n");
    out.push_str("  upd_child: Children # Id # State -> Children;\n");
    out.push_str("  is_child: Id # Children -> Bool;\n");
    let any_all = u.helpers.keys().any(|(k, _)| k == "FwCHILDREN");
    let any_class = u.helpers.keys().any(|(k, _)| k != "FwCHILDREN");
    if any_all {
        out.push_str("  cmds_for_all: Children # Command -> CommandQueue;\n");
    }
    if any_class {
        out.push_str("  cmds_for_class: Children # ClassName # Command -> CommandQueue;\n");
    }
    for name in u.helpers.values() {
        let _ = writeln!(out, "  {name}: Children # ActPhaseArgs -> ActPhaseArgs;");
    }
    out.push_str(concat!(
        "\n",
        "var\n",
        "  a: ActPhaseArgs;\n",
        "  q: CommandQueue;\n",
        "  n, j: Int;\n",
        "  cmd: Command;\n",
        "  ch: Child;\n",
        "  chs: Children;\n",
        "  ss: List(State);\n",
        "  t: ClassName;\n",
        "  i: Id;\n",
        "  s: State;\n",
        "eqn\n",
        "  update_pc(actArgs(q, n), j) = actArgs(q, j);\n",
        "  reset(a) = actArgs([], 0);\n",
    ));
    for c in &u.commands {
        let m = mangle(c);
        let _ = writeln!(out, "  c2s({m}) = {m};");
    }
    out.push_str(concat!(
        "  any_in_state([], ss) = false;\n",
        "  any_in_state(ch |> chs, ss) = ch_state(ch) in ss || any_in_state(chs, ss);\n",
        "  all_in_state([], ss) = true;\n",
        "  all_in_state(ch |> chs, ss) = ch_state(ch) in ss && all_in_state(chs, ss);\n",
        "  any_of_in_state([], t, ss) = false;\n",
        "  any_of_in_state(ch |> chs, t, ss) =\n",
        "    (ch_type(ch) == t && ch_state(ch) in ss) || any_of_in_state(chs, t, ss);\n",
        "  all_of_in_state([], t, ss) = true;\n",
        "  all_of_in_state(ch |> chs, t, ss) =\n",
        "    (ch_type(ch) == t => ch_state(ch) in ss) && all_of_in_state(chs, t, ss);\n",
        "  upd_child([], i, s) = [];\n",
        "  upd_child(ch |> chs, i, s) =\n",
        "    if(ch_id(ch) == i, child(i, ch_type(ch), s) |> chs, ch |> upd_child(chs, i, s));\n",
        "  is_child(i, []) = false;\n",
        "  is_child(i, ch |> chs) = ch_id(ch) == i || is_child(i, chs);\n",
    ));
    if any_all {
        out.push_str(concat!(
            "  cmds_for_all([], cmd) = [];\n",
            "  cmds_for_all(ch |> chs, cmd) = cmd_msg(ch_id(ch), cmd) |> cmds_for_all(chs, cmd);\n",
        ));
    }
    if any_class {
        out.push_str(concat!(
            "  cmds_for_class([], t, cmd) = [];\n",
            "  cmds_for_class(ch |> chs, t, cmd) =\n",
            "    if(ch_type(ch) == t, cmd_msg(ch_id(ch), cmd) |> cmds_for_class(chs, t, cmd),\n",
            "       cmds_for_class(chs, t, cmd));\n",
        ));
    }
    for ((sel, cmd), name) in &u.helpers {
        let c = mangle(cmd);
        if sel == "FwCHILDREN" {
            let _ = writeln!(
                out,
                "  {name}(chs, a) = actArgs(cq(a) ++ cmds_for_all(chs, {c}), pc(a));"
            );
        } else {
            let _ = writeln!(
                out,
                "  {name}(chs, a) = actArgs(cq(a) ++ cmds_for_class(chs, {}, {c}), pc(a));",
                mangle(sel)
            );
        }
    }
    out
}

fn children_literal(children: &[(InstanceId, String, String)]) -> String {
    if children.is_empty() {
        return "[]".to_string();
    }
    let inner = children
        .iter()
        .map(|(id, class, initial)| {
            format!("child({id}, {}, {})", mangle(class), mangle(initial))
        })
        .collect::<Vec<_>>()
        .join(", ");
    format!("[{inner}]")
}

fn init_section(nodes: &[NodeInst], root: InstanceId) -> String {
    let mut out = String::from("init\n");
    out.push_str("  allow({ comm_command, comm_state, move_state, move_phase, ignored_command },\n");
    out.push_str("    comm({ send_command | receive_command -> comm_command,\n");
    out.push_str("           send_state | receive_state -> comm_state },\n");
    let _ = writeln!(out, "      ENV({root})");
    for node in nodes {
        if node.stub {
            let _ = writeln!(
                out,
                "      || STUB({}, {}, {})",
                node.id,
                node.parent,
                mangle(&node.initial)
            );
        } else {
            let _ = writeln!(
                out,
                "      || X_{}({}, {}, {}, {}, WhenPhase, actArgs([], 0))",
                mangle(&node.class),
                node.id,
                node.parent,
                mangle(&node.initial),
                children_literal(&node.children)
            );
        }
    }
    // Close the composition.
    let trimmed = out.trim_end().len();
    out.truncate(trimmed);
    out.push_str("));\n");
    out
}

fn header(subject: &str, notes: &[String], u: &Universe) -> String {
    let mut out = format!("% mCRL2 translation of {subject}.\n");
    for note in notes {
        let _ = writeln!(out, "% {note}");
    }
    let renames = u.renames();
    if !renames.is_empty() {
        out.push_str("% Renamed identifiers ('$' is not a legal mCRL2 name character):\n");
        for (orig, new) in renames {
            let _ = writeln!(out, "%   {orig} -> {new}");
        }
    }
    out.push('\n');
    out
}

fn emit_unit(
    subject: &str,
    notes: &[String],
    involved: &[CompiledClass],
    nodes: &[NodeInst],
    u: &Universe,
) -> String {
    let has_stubs = nodes.iter().any(|n| n.stub);
    let root = nodes
        .iter()
        .find(|n| n.parent == 0)
        .map(|n| n.id)
        .unwrap_or(1);
    let mut out = header(subject, notes, u);
    out.push_str(&sort_section(u));
    out.push('\n');
    out.push_str(act_section());
    out.push('\n');
    out.push_str(&map_section(u));
    out.push_str("\nproc\n");
    out.push_str(env_def());
    if has_stubs {
        out.push('\n');
        out.push_str(stub_def());
    }
    for class in involved {
        out.push('\n');
        out.push_str(&proc_def(class));
    }
    out.push('\n');
    out.push_str(&init_section(nodes, root));
    out
}

/// Exports one class as a complete specification: the class process, an
/// environment that may send it any command, and an initial composition of
/// a single instance with no children.
pub fn export_class(class: &ClassDef) -> String {
    let mut u = Universe::default();
    u.absorb_class(class);
    let compiled = CompiledClass::new(class.clone());
    let nodes = [NodeInst {
        id: 1,
        parent: 0,
        class: class.name.clone(),
        initial: class.states[0].name.clone(),
        stub: false,
        children: Vec::new(),
    }];
    let notes = vec![
        "A single instance (id 1) with no children, driven by an open environment.".to_string(),
    ];
    emit_unit(
        &format!("SML class {}", class.name),
        &notes,
        &[compiled],
        &nodes,
        &u,
    )
}

/// Exports a whole tree: one process definition per distinct class, one
/// instantiation per node, stubs as command-acknowledging leaves, and an
/// environment closing the root.
pub fn export_system(
    config: &Configuration,
    registry: &BTreeMap<String, ClassDef>,
) -> Result<String, ExportError> {
    let mut u = Universe::default();
    let mut involved: Vec<CompiledClass> = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for spec in &config.nodes {
        u.classes.insert(spec.class.clone());
        u.states.insert(spec.initial.clone());
        if spec.stub {
            continue;
        }
        let def = registry.get(&spec.class).ok_or(ExportError::UnknownClass {
            node: spec.id,
            class: spec.class.clone(),
        })?;
        if !def.states.iter().any(|s| s.name == spec.initial) {
            return Err(ExportError::UndeclaredInitial {
                node: spec.id,
                state: spec.initial.clone(),
                class: spec.class.clone(),
            });
        }
        if seen.insert(spec.class.clone()) {
            u.absorb_class(def);
            involved.push(CompiledClass::new(def.clone()));
        }
    }
    let nodes: Vec<NodeInst> = config
        .nodes
        .iter()
        .map(|spec| NodeInst {
            id: spec.id,
            parent: spec.parent.unwrap_or(0),
            class: spec.class.clone(),
            initial: spec.initial.clone(),
            stub: spec.stub,
            children: config
                .nodes
                .iter()
                .filter(|c| c.parent == Some(spec.id))
                .map(|c| (c.id, c.class.clone(), c.initial.clone()))
                .collect(),
        })
        .collect();
    let mut notes = vec![format!("{} nodes:", nodes.len())];
    for node in &nodes {
        notes.push(format!(
            "  node {}: {}{}, initial {}, parent {}",
            node.id,
            node.class,
            if node.stub { " (stub)" } else { "" },
            node.initial,
            node.parent
        ));
    }
    Ok(emit_unit(
        "an SML hierarchy",
        &notes,
        &involved,
        &nodes,
        &u,
    ))
}

/// The six requirement shapes checked against exported systems. Parameters:
/// `i` an instance id, `i_c` the id of one of its children, `c` a command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropertyTemplate {
    DeadlockFreedom,
    NoIntermediateStates,
    Responsiveness,
    ResponsivenessWeakened,
    Progress,
    ProgressWeakened,
}

pub const ALL_PROPERTIES: [PropertyTemplate; 6] = [
    PropertyTemplate::DeadlockFreedom,
    PropertyTemplate::NoIntermediateStates,
    PropertyTemplate::Responsiveness,
    PropertyTemplate::ResponsivenessWeakened,
    PropertyTemplate::Progress,
    PropertyTemplate::ProgressWeakened,
];

impl PropertyTemplate {
    pub fn id(self) -> &'static str {
        match self {
            PropertyTemplate::DeadlockFreedom => "deadlock-freedom",
            PropertyTemplate::NoIntermediateStates => "no-intermediate-states",
            PropertyTemplate::Responsiveness => "responsiveness",
            PropertyTemplate::ResponsivenessWeakened => "responsiveness-weakened",
            PropertyTemplate::Progress => "progress",
            PropertyTemplate::ProgressWeakened => "progress-weakened",
        }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        ALL_PROPERTIES.iter().copied().find(|t| t.id() == id)
    }

    /// The formula with symbolic parameters.
    pub fn text(self) -> &'static str {
        match self {
            PropertyTemplate::DeadlockFreedom => "nu X. [true]X && <true>true",
            PropertyTemplate::NoIntermediateStates => {
                "nu X. [true]X &&\n  [exists s:State. move_state(i,s)](nu Y.\n    [(!move_phase(i,ActionPhase))]Y\n    && [exists s:State. move_state(i,s)]false)"
            }
            PropertyTemplate::Responsiveness => {
                "nu X. [true]X &&\n  [comm_command(i,i_c,c)](mu Y.\n    <true>true && [!comm_state(i_c,i,c2s(c))]Y)"
            }
            PropertyTemplate::ResponsivenessWeakened => {
                "nu X. [true]X &&\n  [comm_command(i,i_c,c)](mu Y. <true>true &&\n    [!(comm_state(i_c,i,c2s(c)) ||\n       exists c':Command. comm_command(i,i_c,c'))]Y)"
            }
            PropertyTemplate::Progress => {
                "nu X. [true]X &&\n  mu Y. <exists s:State. move_state(i,s)>true ||\n    (<true>true && [true]Y)"
            }
            PropertyTemplate::ProgressWeakened => {
                "nu X. [true]X &&\n  mu Y. <exists s:State. move_state(i,s)>true || <true>Y"
            }
        }
    }

    /// Parameter names the template substitutes.
    pub fn params(self) -> &'static [&'static str] {
        match self {
            PropertyTemplate::DeadlockFreedom => &[],
            PropertyTemplate::NoIntermediateStates
            | PropertyTemplate::Progress
            | PropertyTemplate::ProgressWeakened => &["i"],
            PropertyTemplate::Responsiveness | PropertyTemplate::ResponsivenessWeakened => {
                &["i", "i_c", "c"]
            }
        }
    }

    fn uses_c2s(self) -> bool {
        matches!(
            self,
            PropertyTemplate::Responsiveness | PropertyTemplate::ResponsivenessWeakened
        )
    }
}

/// Concrete values for template parameters.
#[derive(Debug, Clone, Default)]
pub struct PropertyParams {
    pub fsm: Option<InstanceId>,
    pub child: Option<InstanceId>,
    pub command: Option<String>,
}

/// Replaces whole identifier tokens; `c'` and `c2s` are distinct tokens
/// from `c`, so bound variables and the mapping name survive untouched.
fn substitute(template: &str, map: &[(&str, String)]) -> String {
    let mut out = String::new();
    let bytes = template.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let ch = bytes[i] as char;
        if ch.is_ascii_alphabetic() || ch == '_' {
            let start = i;
            while i < bytes.len() {
                let c = bytes[i] as char;
                if c.is_ascii_alphanumeric() || c == '_' || c == '\'' {
                    i += 1;
                } else {
                    break;
                }
            }
            let token = &template[start..i];
            match map.iter().find(|(k, _)| *k == token) {
                Some((_, value)) => out.push_str(value),
                None => out.push_str(token),
            }
        } else {
            out.push(ch);
            i += 1;
        }
    }
    out
}

/// Instantiates a requirement template as `.mcf` text.
pub fn emit_property(
    template: PropertyTemplate,
    params: &PropertyParams,
) -> Result<String, ExportError> {
    let mut map: Vec<(&str, String)> = Vec::new();
    for &param in template.params() {
        let value = match param {
            "i" => params.fsm.map(|v| v.to_string()),
            "i_c" => params.child.map(|v| v.to_string()),
            "c" => params.command.as_deref().map(mangle),
            other => unreachable!("unknown template parameter {other}"),
        };
        match value {
            Some(v) => map.push((param, v)),
            None => {
                return Err(ExportError::MissingParameter {
                    template: template.id(),
                    param,
                })
            }
        }
    }
    let mut out = format!("% {}\n", template.id());
    if template.uses_c2s() {
        out.push_str(
            "% c2s maps each command to the state carrying the same name (c2s(ON) = ON);\n% the exported model defines it.\n",
        );
    }
    out.push_str(&substitute(template.text(), &map));
    out.push('\n');
    Ok(out)
}

const KNOWN_ACTIONS: [&str; 9] = [
    "move_state",
    "send_state",
    "receive_state",
    "comm_state",
    "move_phase",
    "send_command",
    "receive_command",
    "comm_command",
    "ignored_command",
];

fn contains_token(text: &str, token: &str) -> bool {
    let bytes = text.as_bytes();
    let mut from = 0;
    while let Some(pos) = text[from..].find(token) {
        let at = from + pos;
        let pre_ok = at == 0 || {
            let c = bytes[at - 1] as char;
            !(c.is_ascii_alphanumeric() || c == '_')
        };
        let end = at + token.len();
        let post_ok = end == bytes.len() || {
            let c = bytes[end] as char;
            !(c.is_ascii_alphanumeric() || c == '_')
        };
        if pre_ok && post_ok {
            return true;
        }
        from = at + 1;
    }
    false
}

/// Extent of the parenthesized block whose `(` sits at `open`.
fn paren_block(text: &str, open: usize) -> Option<&str> {
    let bytes = text.as_bytes();
    debug_assert_eq!(bytes[open], b'(');
    let mut depth = 0usize;
    for (i, &b) in bytes.iter().enumerate().skip(open) {
        match b {
            b'(' => depth += 1,
            b')' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[open..=i]);
                }
            }
            _ => {}
        }
    }
    None
}

/// Structural checks over emitted text: balanced parentheses, used actions
/// all declared, exactly one settling report per when block, and exactly
/// one ignored-command fallback per command selector.
pub fn check_structure(text: &str) -> Vec<String> {
    let mut issues = Vec::new();

    let mut depth: i64 = 0;
    for ch in text.chars() {
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            _ => {}
        }
        if depth < 0 {
            issues.push("unbalanced parentheses: ')' without '('".to_string());
            break;
        }
    }
    if depth > 0 {
        issues.push(format!("unbalanced parentheses: {depth} left open"));
    }

    let declared: BTreeSet<&str> = {
        let mut out = BTreeSet::new();
        let mut in_act = false;
        for line in text.lines() {
            if line == "act" {
                in_act = true;
                continue;
            }
            if in_act {
                if !line.starts_with("  ") {
                    break;
                }
                if let Some(name) = line.trim().split(':').next() {
                    out.insert(name.trim());
                }
            }
        }
        out
    };
    let body = match text.find("\nproc\n") {
        Some(at) => &text[at..],
        None => {
            issues.push("no proc section".to_string());
            return issues;
        }
    };
    for action in KNOWN_ACTIONS {
        if contains_token(body, action) && !declared.contains(action) {
            issues.push(format!("action '{action}' is used but not declared"));
        }
    }

    let marker = "isWhenPhase(phase) -> (";
    for (at, _) in text.match_indices(marker) {
        let open = at + marker.len() - 1;
        match paren_block(text, open) {
            Some(block) => {
                // Exactly one settling report; do-referer branches add
                // extra phase switches, so only their absence is wrong.
                let sends = block.matches("send_state(").count();
                if sends != 1 {
                    issues.push(format!("a when block settles {sends} times, want 1"));
                }
                if !block.contains("move_phase(self, ActionPhase)") {
                    issues.push("a when block never enters the action phase".to_string());
                }
            }
            None => issues.push("unterminated when block".to_string()),
        }
    }

    let sel_marker = "((pc(aArgs) == 0) ->";
    for (at, _) in text.match_indices(sel_marker) {
        let Some(block) = paren_block(text, at) else {
            issues.push("unterminated selector block".to_string());
            continue;
        };
        if !block.contains("receive_command(") {
            continue; // the reopen conditional inside the report handler
        }
        let ignored = block.matches("ignored_command(").count();
        if ignored != 1 {
            issues.push(format!(
                "a command selector has {ignored} ignored-command fallbacks, want 1"
            ));
        }
    }

    issues
}
