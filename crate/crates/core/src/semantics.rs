//! Executable semantics for a single SML finite state machine.
//!
//! A class is compiled once into per-state statement tables and then any
//! number of [`FsmInstance`]s can run against it. An instance alternates
//! between two phases:
//!
//! * **when phase**: the when clauses of the current state are evaluated in
//!   priority order against the child configuration. The topmost enabled
//!   clause fires; `move_to` changes the state and re-evaluates, `do` jumps
//!   straight into an action. When no clause is enabled the instance settles:
//!   it reports its state upward and waits for a command.
//! * **action phase**: statements of the selected action run one at a time,
//!   identified by an integer program counter. `do` statements append to a
//!   command queue which is delivered to children at the next flush point
//!   (an `if`, a `move_to`, or the end of the action). An `if` additionally
//!   waits until no child it reads is still busy with an earlier command.
//!
//! Statement labels are assigned per state by a depth-first walk in source
//! order, starting at 1, continuing across the state's actions. Label 0 is
//! the command-selection point and -1 marks the end of an action. The same
//! numbering is used by the model checking backends, so it must stay stable.

use crate::sml::ast::{
    ActionClause, ChildPattern, ClassDef, Guard, Quant, Referer, Selector, StateClause, Statement,
};
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

/// Identifies one node of a hierarchy. Ids are assigned by the caller and
/// only compared for equality.
pub type InstanceId = u64;

/// Program counter value while waiting for a command.
pub const PC_SELECT: i32 = 0;
/// Program counter value after the last statement of an action.
pub const PC_END: i32 = -1;

/// A child as seen by its parent: last reported state plus the busy flag
/// that is set when a command is sent and cleared by the next state update.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Child {
    pub id: InstanceId,
    /// Class name of the child; selectors match against this.
    pub ptype: String,
    pub state: String,
    pub busy: bool,
}

impl Child {
    pub fn new(id: InstanceId, ptype: &str, state: &str) -> Self {
        Child {
            id,
            ptype: ptype.to_string(),
            state: state.to_string(),
            busy: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    When,
    Action,
}

/// Observable steps of an instance, in the order they happened.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    /// The instance changed its own state.
    MoveState { id: InstanceId, state: String },
    /// The instance settled and reported its state to its parent.
    SendState {
        id: InstanceId,
        parent: InstanceId,
        state: String,
    },
    /// The instance switched phase.
    MovePhase { id: InstanceId, phase: Phase },
    /// A queued command was delivered to a child.
    CommCommand {
        parent: InstanceId,
        child: InstanceId,
        command: String,
    },
    /// A child's state report was received by its parent.
    CommState {
        child: InstanceId,
        parent: InstanceId,
        state: String,
    },
    /// A command arrived that the current state has no action for.
    IgnoredCommand { id: InstanceId, command: String },
}

/// One statement of a compiled action body. `succ` is the label executed
/// after this statement; `PC_END` ends the action.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CompiledStmt {
    Do {
        command: String,
        pattern: ChildPattern,
        succ: i32,
    },
    MoveTo {
        target: String,
    },
    If {
        guard: Guard,
        then_entry: i32,
        else_entry: i32,
    },
}

/// Statement table of one state: labels to statements plus the entry label
/// of each action.
#[derive(Debug, Clone)]
pub struct StateTable {
    stmts: BTreeMap<i32, CompiledStmt>,
    entries: Vec<(String, i32)>,
}

impl StateTable {
    pub fn stmt(&self, label: i32) -> Option<&CompiledStmt> {
        self.stmts.get(&label)
    }

    /// Labels and statements in increasing label order.
    pub fn stmts(&self) -> impl Iterator<Item = (i32, &CompiledStmt)> {
        self.stmts.iter().map(|(l, s)| (*l, s))
    }

    /// Action names with their entry labels, in declaration order.
    pub fn entries(&self) -> &[(String, i32)] {
        &self.entries
    }

    pub fn entry(&self, action: &str) -> Option<i32> {
        self.entries
            .iter()
            .find(|(name, _)| name == action)
            .map(|(_, l)| *l)
    }

    pub fn max_label(&self) -> i32 {
        self.stmts.keys().next_back().copied().unwrap_or(0)
    }
}

/// A class plus the statement tables of its declared states.
#[derive(Debug)]
pub struct CompiledClass {
    def: ClassDef,
    tables: BTreeMap<String, StateTable>,
}

impl CompiledClass {
    pub fn new(def: ClassDef) -> Self {
        let tables = def
            .states
            .iter()
            .map(|state| (state.name.clone(), compile_state(state)))
            .collect();
        CompiledClass { def, tables }
    }

    pub fn def(&self) -> &ClassDef {
        &self.def
    }

    /// Table of a declared state. States that only appear as `move_to`
    /// targets have no table: they ignore every command.
    pub fn table(&self, state: &str) -> Option<&StateTable> {
        self.tables.get(state)
    }

    pub fn stmt(&self, state: &str, label: i32) -> Option<&CompiledStmt> {
        self.tables.get(state).and_then(|t| t.stmt(label))
    }

    pub fn action_entry(&self, state: &str, action: &str) -> Option<i32> {
        self.tables.get(state).and_then(|t| t.entry(action))
    }
}

/// Number of labels a statement occupies, including nested branches.
fn stmt_size(stmt: &Statement) -> i32 {
    match stmt {
        Statement::Do { .. } | Statement::MoveTo { .. } => 1,
        Statement::If {
            then_branch,
            else_branch,
            ..
        } => 1 + seq_size(then_branch) + seq_size(else_branch),
    }
}

fn seq_size(body: &[Statement]) -> i32 {
    body.iter().map(stmt_size).sum()
}

fn compile_state(state: &StateClause) -> StateTable {
    let mut stmts = BTreeMap::new();
    let mut entries = Vec::new();
    let mut next = 1;
    for ActionClause { name, body, .. } in &state.actions {
        entries.push((name.clone(), next));
        compile_seq(body, next, PC_END, &mut stmts);
        next += seq_size(body);
    }
    StateTable { stmts, entries }
}

/// Compiles `body` starting at label `entry`. `cont` is where control goes
/// after the last statement of the sequence.
fn compile_seq(body: &[Statement], entry: i32, cont: i32, out: &mut BTreeMap<i32, CompiledStmt>) {
    let mut label = entry;
    for (i, stmt) in body.iter().enumerate() {
        let after_subtree = label + stmt_size(stmt);
        let succ = if i + 1 < body.len() {
            after_subtree
        } else {
            cont
        };
        match stmt {
            Statement::Do {
                command, pattern, ..
            } => {
                out.insert(
                    label,
                    CompiledStmt::Do {
                        command: command.clone(),
                        pattern: pattern.clone(),
                        succ,
                    },
                );
            }
            Statement::MoveTo { target, .. } => {
                out.insert(
                    label,
                    CompiledStmt::MoveTo {
                        target: target.clone(),
                    },
                );
            }
            Statement::If {
                guard,
                then_branch,
                else_branch,
                ..
            } => {
                let then_start = label + 1;
                let else_start = then_start + seq_size(then_branch);
                let then_entry = if then_branch.is_empty() {
                    succ
                } else {
                    then_start
                };
                let else_entry = if else_branch.is_empty() {
                    succ
                } else {
                    else_start
                };
                out.insert(
                    label,
                    CompiledStmt::If {
                        guard: guard.clone(),
                        then_entry,
                        else_entry,
                    },
                );
                compile_seq(then_branch, then_start, succ, out);
                compile_seq(else_branch, else_start, succ, out);
            }
        }
        label = after_subtree;
    }
}

pub fn selector_matches(selector: &Selector, child: &Child) -> bool {
    match selector {
        Selector::Class(name) => child.ptype == *name,
        Selector::FwChildren => true,
    }
}

/// Evaluates a guard against a child configuration. `$ALL$` over an empty
/// selection is true, `$ANY$` over an empty selection is false.
pub fn eval_guard(guard: &Guard, children: &[Child]) -> bool {
    match guard {
        Guard::Atom {
            pattern, states, ..
        } => {
            let mut selected = children
                .iter()
                .filter(|c| selector_matches(&pattern.selector, c));
            match pattern.quant {
                Quant::Any => selected.any(|c| states.contains(&c.state)),
                Quant::All => selected.all(|c| states.contains(&c.state)),
            }
        }
        Guard::And(l, r) => eval_guard(l, children) && eval_guard(r, children),
        Guard::Or(l, r) => eval_guard(l, children) || eval_guard(r, children),
    }
}

/// What the when phase of `state` does under a fixed child configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WhenOutcome<'a> {
    /// No clause is enabled: the state is stable under this configuration.
    Settle,
    /// The topmost enabled clause moves to another state.
    Move { clause: usize, target: &'a str },
    /// The topmost enabled clause runs an action of the current state.
    RunAction { clause: usize, action: &'a str },
}

/// Picks the topmost enabled when clause of `state` under `children`.
/// An enabled `do` clause whose action the state does not define is skipped
/// and the scan continues below it.
pub fn when_outcome<'a>(class: &'a ClassDef, state: &str, children: &[Child]) -> WhenOutcome<'a> {
    let Some(clause) = class.state(state) else {
        return WhenOutcome::Settle;
    };
    for (i, when) in clause.whens.iter().enumerate() {
        if !eval_guard(&when.guard, children) {
            continue;
        }
        match &when.referer {
            Referer::MoveTo { target, .. } => {
                return WhenOutcome::Move {
                    clause: i,
                    target,
                };
            }
            Referer::DoAction { action, .. } => {
                if clause.action(action).is_some() {
                    return WhenOutcome::RunAction { clause: i, action };
                }
            }
        }
    }
    WhenOutcome::Settle
}

/// Result of running the when phase to completion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WhenResult {
    /// The instance settled, reported its state and now waits for a command.
    Settled,
    /// A `do` referer fired; the instance is executing the action.
    EnteredAction { action: String },
    /// The when phase revisited a state without the configuration changing:
    /// the instance cycles through `cycle` forever.
    Livelock { cycle: Vec<String> },
}

/// Result of executing one action statement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepOutcome {
    /// The program counter advanced; call again.
    Continue,
    /// The instance is at a flush point with queued commands. Deliver them
    /// (`deliver_front` / `flush_all`) before stepping again.
    NeedsFlush,
    /// An `if` reads children that are still busy; their ids are listed.
    Blocked { busy: Vec<InstanceId> },
    /// The action ran past its last statement; the instance is back in the
    /// when phase.
    ActionEnded,
    /// A `move_to` statement executed; the instance is back in the when
    /// phase in `target`.
    MovedTo { target: String },
}

/// One running state machine. Mutate it through the phase operations;
/// direct writes to the public fields are for tests.
#[derive(Debug, Clone)]
pub struct FsmInstance {
    class: Arc<CompiledClass>,
    pub self_id: InstanceId,
    pub parent_id: InstanceId,
    pub state: String,
    pub children: Vec<Child>,
    pub phase: Phase,
    /// Commands queued by `do` statements, delivered in FIFO order.
    pub queue: VecDeque<(InstanceId, String)>,
    pub pc: i32,
    /// True between accepting a command (or a `do` referer) and settling
    /// again. A state update at the selection point only drops the instance
    /// back to the when phase while this is false.
    pub command_received: bool,
}

impl FsmInstance {
    /// A fresh instance in the first declared state, in the when phase.
    pub fn new(
        class: Arc<CompiledClass>,
        self_id: InstanceId,
        parent_id: InstanceId,
        children: Vec<Child>,
    ) -> Self {
        let state = class
            .def()
            .initial_state()
            .expect("parser rejects classes without states")
            .to_string();
        FsmInstance {
            class,
            self_id,
            parent_id,
            state,
            children,
            phase: Phase::When,
            queue: VecDeque::new(),
            pc: PC_SELECT,
            command_received: false,
        }
    }

    pub fn class(&self) -> &CompiledClass {
        &self.class
    }

    pub fn child(&self, id: InstanceId) -> Option<&Child> {
        self.children.iter().find(|c| c.id == id)
    }

    /// Runs the when phase until the instance settles, enters an action via
    /// a `do` referer, or revisits a state. The configuration is fixed for
    /// the whole run; updates are only delivered in the action phase, so
    /// termination needs no step bound.
    pub fn run_when_phase(&mut self, events: &mut Vec<Event>) -> WhenResult {
        assert_eq!(self.phase, Phase::When, "run_when_phase needs the when phase");
        let class = Arc::clone(&self.class);
        let mut visited = vec![self.state.clone()];
        loop {
            match when_outcome(class.def(), &self.state, &self.children) {
                WhenOutcome::Settle => {
                    events.push(Event::SendState {
                        id: self.self_id,
                        parent: self.parent_id,
                        state: self.state.clone(),
                    });
                    events.push(Event::MovePhase {
                        id: self.self_id,
                        phase: Phase::Action,
                    });
                    self.phase = Phase::Action;
                    self.pc = PC_SELECT;
                    self.queue.clear();
                    self.command_received = false;
                    return WhenResult::Settled;
                }
                WhenOutcome::Move { target, .. } => {
                    events.push(Event::MoveState {
                        id: self.self_id,
                        state: target.to_string(),
                    });
                    let revisit = visited.iter().position(|v| v == target);
                    self.state = target.to_string();
                    if let Some(first) = revisit {
                        return WhenResult::Livelock {
                            cycle: visited[first..].to_vec(),
                        };
                    }
                    visited.push(self.state.clone());
                }
                WhenOutcome::RunAction { action, .. } => {
                    let entry = class
                        .action_entry(&self.state, action)
                        .expect("when_outcome only picks defined actions");
                    events.push(Event::MovePhase {
                        id: self.self_id,
                        phase: Phase::Action,
                    });
                    self.phase = Phase::Action;
                    self.pc = entry;
                    self.queue.clear();
                    self.command_received = true;
                    return WhenResult::EnteredAction {
                        action: action.to_string(),
                    };
                }
            }
        }
    }

    /// True while the instance waits at the command selection point.
    pub fn awaiting_command(&self) -> bool {
        self.phase == Phase::Action && self.pc == PC_SELECT
    }

    /// Accepts a command at the selection point. A command the current state
    /// has no action for is ignored: the instance re-reports its state (so
    /// the sender's busy flag clears) and keeps waiting.
    pub fn receive_command(&mut self, command: &str, events: &mut Vec<Event>) {
        assert!(self.awaiting_command(), "receive_command needs pc = 0");
        match self.class.action_entry(&self.state, command) {
            Some(entry) => {
                self.pc = entry;
                self.command_received = true;
            }
            None => {
                events.push(Event::SendState {
                    id: self.self_id,
                    parent: self.parent_id,
                    state: self.state.clone(),
                });
                events.push(Event::IgnoredCommand {
                    id: self.self_id,
                    command: command.to_string(),
                });
            }
        }
    }

    /// True at the points where the command queue drains: before an `if`,
    /// before a `move_to`, and at the end of an action.
    pub fn at_flush_point(&self) -> bool {
        if self.phase != Phase::Action {
            return false;
        }
        if self.pc == PC_END {
            return true;
        }
        if self.pc == PC_SELECT {
            return false;
        }
        matches!(
            self.class.stmt(&self.state, self.pc),
            Some(CompiledStmt::If { .. }) | Some(CompiledStmt::MoveTo { .. })
        )
    }

    /// Ids of busy children the `if` at the current program counter reads.
    /// Empty whenever the instance is not stopped at such an `if`; a
    /// scheduler uses this to tell a waiting instance from a runnable one
    /// without executing anything.
    pub fn blocked_children(&self) -> Vec<InstanceId> {
        if self.phase != Phase::Action || self.pc == PC_SELECT || self.pc == PC_END {
            return Vec::new();
        }
        match self.class.stmt(&self.state, self.pc) {
            Some(CompiledStmt::If { guard, .. }) => busy_referenced(guard, &self.children),
            _ => Vec::new(),
        }
    }

    /// Delivers the front of the command queue: marks the child busy and
    /// emits the delivery event. The queue must be nonempty.
    pub fn deliver_front(&mut self, events: &mut Vec<Event>) -> (InstanceId, String) {
        let (child, command) = self.queue.pop_front().expect("queue is nonempty");
        let c = self
            .children
            .iter_mut()
            .find(|c| c.id == child)
            .expect("queued commands target known children");
        c.busy = true;
        events.push(Event::CommCommand {
            parent: self.self_id,
            child,
            command: command.clone(),
        });
        (child, command)
    }

    /// Drains the whole queue at once. This is the closed-world delivery
    /// order; the hierarchy runtime instead delivers one entry at a time as
    /// each child becomes ready.
    pub fn flush_all(&mut self, events: &mut Vec<Event>) {
        while !self.queue.is_empty() {
            self.deliver_front(events);
        }
    }

    /// Executes the statement at the current program counter, or the
    /// end-of-action step when `pc` is `PC_END`. Never delivers queued
    /// commands itself: at a flush point with a nonempty queue it returns
    /// [`StepOutcome::NeedsFlush`] and leaves the instance unchanged.
    pub fn exec_step(&mut self, events: &mut Vec<Event>) -> StepOutcome {
        assert_eq!(self.phase, Phase::Action, "exec_step needs the action phase");
        assert_ne!(self.pc, PC_SELECT, "exec_step needs a selected action");
        if self.pc == PC_END {
            if !self.queue.is_empty() {
                return StepOutcome::NeedsFlush;
            }
            events.push(Event::MovePhase {
                id: self.self_id,
                phase: Phase::When,
            });
            self.phase = Phase::When;
            self.pc = PC_SELECT;
            self.command_received = false;
            return StepOutcome::ActionEnded;
        }
        let class = Arc::clone(&self.class);
        let stmt = class
            .stmt(&self.state, self.pc)
            .expect("pc refers to a statement of the current state");
        match stmt {
            CompiledStmt::Do {
                command,
                pattern,
                succ,
            } => {
                for child in &self.children {
                    if selector_matches(&pattern.selector, child) {
                        self.queue.push_back((child.id, command.clone()));
                    }
                }
                self.pc = *succ;
                StepOutcome::Continue
            }
            CompiledStmt::If {
                guard,
                then_entry,
                else_entry,
            } => {
                if !self.queue.is_empty() {
                    return StepOutcome::NeedsFlush;
                }
                let busy = busy_referenced(guard, &self.children);
                if !busy.is_empty() {
                    return StepOutcome::Blocked { busy };
                }
                self.pc = if eval_guard(guard, &self.children) {
                    *then_entry
                } else {
                    *else_entry
                };
                StepOutcome::Continue
            }
            CompiledStmt::MoveTo { target } => {
                if !self.queue.is_empty() {
                    return StepOutcome::NeedsFlush;
                }
                events.push(Event::MoveState {
                    id: self.self_id,
                    state: target.clone(),
                });
                events.push(Event::MovePhase {
                    id: self.self_id,
                    phase: Phase::When,
                });
                self.state = target.clone();
                self.phase = Phase::When;
                self.pc = PC_SELECT;
                self.command_received = false;
                StepOutcome::MovedTo {
                    target: target.clone(),
                }
            }
        }
    }

    /// Absorbs a child's state report: updates the stored state and clears
    /// the busy flag. Only delivered in the action phase. At the selection
    /// point with no command accepted yet this drops the instance back to
    /// the when phase; mid-action it never disturbs the program counter.
    pub fn receive_state_update(&mut self, child: InstanceId, state: &str, events: &mut Vec<Event>) {
        assert_eq!(
            self.phase,
            Phase::Action,
            "state updates are delivered in the action phase"
        );
        let c = self
            .children
            .iter_mut()
            .find(|c| c.id == child)
            .expect("state updates come from known children");
        c.state = state.to_string();
        c.busy = false;
        events.push(Event::CommState {
            child,
            parent: self.self_id,
            state: state.to_string(),
        });
        if self.pc == PC_SELECT && !self.command_received {
            events.push(Event::MovePhase {
                id: self.self_id,
                phase: Phase::When,
            });
            self.phase = Phase::When;
        }
    }
}

/// Ids of busy children the guard reads, sorted and deduplicated.
fn busy_referenced(guard: &Guard, children: &[Child]) -> Vec<InstanceId> {
    let mut out = BTreeSet::new();
    for atom in guard.atoms() {
        let Guard::Atom { pattern, .. } = atom else {
            unreachable!("atoms() yields atoms");
        };
        for child in children {
            if child.busy && selector_matches(&pattern.selector, child) {
                out.insert(child.id);
            }
        }
    }
    out.into_iter().collect()
}
