//! Hierarchical simulation: a tree of instances exchanging commands and
//! state reports.
//!
//! Both directions are rendezvous. A parent hands the front of its command
//! queue to a child only when the parent sits at a flush point and the
//! child is ready to accept (an instance at its selection point, or an
//! idle stub); a child's state report reaches the parent only while the
//! parent is in its action phase. Until delivery, reports sit in a
//! per-child mailbox where a newer report replaces an older one, so the
//! parent always reads the latest state and never a stale intermediate.
//!
//! Every possible interaction is a [`SimStep`]. The simulator computes the
//! enabled set; a [`Driver`] picks one step at a time, which makes the
//! same machinery serve scripted runs, seeded random interleavings, an
//! interactive console, and exhaustive enumeration of all schedules.
//!
//! Stubs stand in for subtrees that are not modelled: a stub acknowledges
//! a command by adopting the command's name as its state and reporting it,
//! after a scheduling delay the driver controls. A stub holding an
//! unacknowledged command is not ready for the next one.

use crate::semantics::{
    CompiledClass, Event, FsmInstance, InstanceId, Phase, StepOutcome, WhenResult, PC_SELECT,
};
use crate::sml::ast::ClassDef;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::fmt::Write as _;
use std::io;
use std::sync::Arc;
use thiserror::Error;

/// Sender id used for commands injected from outside the tree.
pub const ENV_ID: InstanceId = 0;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("configuration is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Deserialize)]
struct RawNode {
    id: InstanceId,
    class: String,
    parent: Option<InstanceId>,
    #[serde(default)]
    stub: bool,
    initial: String,
}

#[derive(Debug, Clone, Deserialize)]
struct RawConfig {
    nodes: Vec<RawNode>,
}

/// One node of a validated tree configuration.
#[derive(Debug, Clone)]
pub struct NodeSpec {
    pub id: InstanceId,
    pub class: String,
    pub parent: Option<InstanceId>,
    pub stub: bool,
    pub initial: String,
}

/// A parsed tree: ids unique, exactly one root, parents exist and are not
/// stubs, no cycles. Class resolution happens later, in [`Sim::new`].
#[derive(Debug, Clone)]
pub struct Configuration {
    pub nodes: Vec<NodeSpec>,
}

pub fn load_config(text: &str) -> Result<Configuration, ConfigError> {
    let raw: RawConfig = serde_json::from_str(text)?;
    let invalid = |msg: String| Err(ConfigError::Invalid(msg));
    if raw.nodes.is_empty() {
        return invalid("no nodes".to_string());
    }
    let mut by_id: BTreeMap<InstanceId, &RawNode> = BTreeMap::new();
    for node in &raw.nodes {
        if node.id == ENV_ID {
            return invalid(format!("node id {ENV_ID} is reserved for the environment"));
        }
        if by_id.insert(node.id, node).is_some() {
            return invalid(format!("duplicate node id {}", node.id));
        }
    }
    let roots: Vec<InstanceId> = raw
        .nodes
        .iter()
        .filter(|n| n.parent.is_none())
        .map(|n| n.id)
        .collect();
    if roots.len() != 1 {
        return invalid(format!("expected exactly one root node, found {}", roots.len()));
    }
    for node in &raw.nodes {
        if let Some(p) = node.parent {
            match by_id.get(&p) {
                None => return invalid(format!("node {} has unknown parent {p}", node.id)),
                Some(parent) if parent.stub => {
                    return invalid(format!(
                        "node {} is a child of stub {p}; stubs cannot have children",
                        node.id
                    ))
                }
                Some(_) if p == node.id => {
                    return invalid(format!("node {} is its own parent", node.id))
                }
                Some(_) => {}
            }
        }
        if node.initial.is_empty() {
            return invalid(format!("node {} has an empty initial state", node.id));
        }
    }
    // Parent chains must reach the root; a chain longer than the node
    // count has looped.
    for node in &raw.nodes {
        let mut cur = node.parent;
        let mut hops = 0;
        while let Some(p) = cur {
            hops += 1;
            if hops > raw.nodes.len() {
                return invalid(format!("node {} sits on a parent cycle", node.id));
            }
            cur = by_id[&p].parent;
        }
    }
    Ok(Configuration {
        nodes: raw
            .nodes
            .iter()
            .map(|n| NodeSpec {
                id: n.id,
                class: n.class.clone(),
                parent: n.parent,
                stub: n.stub,
                initial: n.initial.clone(),
            })
            .collect(),
    })
}

/// What an injection carries: a command, as an operator would issue one,
/// or a state a stub starts reporting, as hardware changing on its own.
/// State injections only make sense on stubs; a modelled instance owns its
/// state and nothing may overwrite it from outside.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    Command(String),
    State(String),
}

/// One scripted injection, available from scheduler round `at`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptEntry {
    pub at: u64,
    pub target: InstanceId,
    pub payload: Payload,
}

#[derive(Debug, Clone, Deserialize)]
struct RawInjection {
    target: InstanceId,
    command: Option<String>,
    state: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
struct RawScriptLine {
    at: u64,
    inject: RawInjection,
}

/// Parses a script: one JSON object per line, blank lines skipped. Each
/// injection names either a command or a state, never both.
pub fn load_script(text: &str) -> Result<Vec<ScriptEntry>, ConfigError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawScriptLine = serde_json::from_str(line)?;
        let payload = match (raw.inject.command, raw.inject.state) {
            (Some(c), None) => Payload::Command(c),
            (None, Some(s)) => Payload::State(s),
            (Some(_), Some(_)) => {
                return Err(ConfigError::Invalid(format!(
                    "script line {}: an injection carries a command or a state, not both",
                    n + 1
                )))
            }
            (None, None) => {
                return Err(ConfigError::Invalid(format!(
                    "script line {}: an injection needs a command or a state",
                    n + 1
                )))
            }
        };
        out.push(ScriptEntry {
            at: raw.at,
            target: raw.inject.target,
            payload,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
enum NodeRuntime {
    Fsm(FsmInstance),
    /// An unmodelled subtree. It parks the last received command and, when
    /// the acknowledge step runs, adopts the command's name as its state.
    Stub {
        state: String,
        pending_ack: Option<String>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    parent: InstanceId,
    class: String,
    runtime: NodeRuntime,
}

/// Message bookkeeping over one run. The conservation identities hold at
/// every point: commands enqueued = delivered + still queued, and reports
/// queued = delivered + replaced while waiting + still pending.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counters {
    pub commands_enqueued: u64,
    pub commands_delivered: u64,
    pub updates_queued: u64,
    pub updates_delivered: u64,
    /// Reports overwritten in the mailbox by a newer one before delivery.
    pub updates_coalesced: u64,
    /// Reports the root addressed to the environment (dropped).
    pub root_reports: u64,
    pub injections_fired: u64,
    /// Script entries superseded by a later entry for the same target
    /// before they could fire.
    pub injections_overridden: u64,
    pub ignored_commands: u64,
}

/// Why a run stopped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Halt {
    /// Nothing enabled and every instance rests at its selection point:
    /// the system waits for input, which is the normal idle state.
    Quiescent,
    /// Nothing enabled while work is still pending somewhere.
    Deadlock { stuck: Vec<InstanceId> },
    /// An instance revisited a state within one when phase.
    Livelock {
        node: InstanceId,
        cycle: Vec<String>,
    },
    /// The step budget ran out.
    StepLimit,
    /// The driver declined to pick a step.
    Stopped,
}

/// One schedulable interaction. The derived order is the canonical
/// priority the scripted driver follows: injections first, then settling,
/// acknowledgements, report delivery, command delivery, and statement
/// execution last.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimStep {
    /// Fire script entry `entry` at its target.
    Inject {
        entry: usize,
        target: InstanceId,
        #[serde(flatten)]
        payload: Payload,
    },
    /// Run `node`'s when phase until it settles or enters an action.
    RunWhen { node: InstanceId },
    /// Stub `node` adopts its parked command and reports it.
    StubAck { node: InstanceId },
    /// Deliver `child`'s parked state report to `node`.
    DeliverUpdate {
        node: InstanceId,
        child: InstanceId,
    },
    /// `node` hands the front of its command queue to the child named
    /// there.
    DeliverCommand { node: InstanceId },
    /// Execute one action statement of `node`.
    ExecStep { node: InstanceId },
}

impl fmt::Display for SimStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimStep::Inject {
                target, payload, ..
            } => match payload {
                Payload::Command(c) => write!(f, "inject '{c}' into node {target}"),
                Payload::State(s) => write!(f, "inject state '{s}' into node {target}"),
            },
            SimStep::RunWhen { node } => write!(f, "run when phase of node {node}"),
            SimStep::StubAck { node } => write!(f, "stub {node} acknowledges its command"),
            SimStep::DeliverUpdate { node, child } => {
                write!(f, "deliver state report of {child} to {node}")
            }
            SimStep::DeliverCommand { node } => {
                write!(f, "node {node} delivers its front command")
            }
            SimStep::ExecStep { node } => write!(f, "execute one statement of node {node}"),
        }
    }
}

/// Chooses among enabled steps. `None` stops the run.
pub trait Driver {
    fn choose(&mut self, enabled: &[SimStep]) -> Option<usize>;
}

/// Always takes the canonical first step, so runs are reproducible.
pub struct Scripted;

impl Driver for Scripted {
    fn choose(&mut self, _enabled: &[SimStep]) -> Option<usize> {
        Some(0)
    }
}

/// Uniform random choice from a seeded generator; equal seeds replay the
/// same schedule.
pub struct RandomDriver {
    rng: ChaCha8Rng,
}

impl RandomDriver {
    pub fn new(seed: u64) -> Self {
        RandomDriver {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Driver for RandomDriver {
    fn choose(&mut self, enabled: &[SimStep]) -> Option<usize> {
        Some(self.rng.gen_range(0..enabled.len()))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimReport {
    pub steps: u64,
    pub halt: Halt,
    pub counters: Counters,
}

#[derive(Serialize)]
struct TraceRecord<'a> {
    step_index: u64,
    step: &'a SimStep,
    events: &'a [Event],
    state_hash: String,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// A whole tree mid-run. Cloning forks the run, which is what the
/// exhaustive enumeration does at every branch point.
#[derive(Debug, Clone)]
pub struct Sim {
    nodes: BTreeMap<InstanceId, Node>,
    script: Vec<ScriptEntry>,
    fired: Vec<bool>,
    /// Parked state reports: receiver -> child -> latest state.
    pending: BTreeMap<InstanceId, BTreeMap<InstanceId, String>>,
    round: u64,
    /// Enumeration mode: script entries are available regardless of their
    /// `at` round, since branches of the exploration disagree on time.
    ignore_script_rounds: bool,
    counters: Counters,
    halted: Option<Halt>,
}

impl Sim {
    /// Builds the runtime tree. `registry` must define every non-stub
    /// class; initial states must be declared by those classes. Stub
    /// classes need no definition.
    pub fn new(
        config: &Configuration,
        registry: &BTreeMap<String, ClassDef>,
        script: Vec<ScriptEntry>,
    ) -> Result<Sim, ConfigError> {
        let mut compiled: BTreeMap<String, Arc<CompiledClass>> = BTreeMap::new();
        for spec in config.nodes.iter().filter(|n| !n.stub) {
            if compiled.contains_key(&spec.class) {
                continue;
            }
            let def = registry.get(&spec.class).ok_or_else(|| {
                ConfigError::Invalid(format!(
                    "node {} needs class '{}', which is not defined",
                    spec.id, spec.class
                ))
            })?;
            compiled.insert(
                spec.class.clone(),
                Arc::new(CompiledClass::new(def.clone())),
            );
        }

        let mut nodes = BTreeMap::new();
        for spec in &config.nodes {
            let parent = spec.parent.unwrap_or(ENV_ID);
            let runtime = if spec.stub {
                NodeRuntime::Stub {
                    state: spec.initial.clone(),
                    pending_ack: None,
                }
            } else {
                let class = &compiled[&spec.class];
                if !class.def().states.iter().any(|s| s.name == spec.initial) {
                    return Err(ConfigError::Invalid(format!(
                        "node {} starts in '{}', which class '{}' does not declare",
                        spec.id, spec.initial, spec.class
                    )));
                }
                let children = config
                    .nodes
                    .iter()
                    .filter(|c| c.parent == Some(spec.id))
                    .map(|c| crate::semantics::Child::new(c.id, &c.class, &c.initial))
                    .collect();
                let mut fsm = FsmInstance::new(Arc::clone(class), spec.id, parent, children);
                fsm.state = spec.initial.clone();
                NodeRuntime::Fsm(fsm)
            };
            nodes.insert(
                spec.id,
                Node {
                    parent,
                    class: spec.class.clone(),
                    runtime,
                },
            );
        }
        for entry in &script {
            let Some(node) = nodes.get(&entry.target) else {
                return Err(ConfigError::Invalid(format!(
                    "script injects into unknown node {}",
                    entry.target
                )));
            };
            if matches!(entry.payload, Payload::State(_))
                && !matches!(node.runtime, NodeRuntime::Stub { .. })
            {
                return Err(ConfigError::Invalid(format!(
                    "script forces a state on node {}, but only stubs accept state injections",
                    entry.target
                )));
            }
        }
        let fired = vec![false; script.len()];
        Ok(Sim {
            nodes,
            script,
            fired,
            pending: BTreeMap::new(),
            round: 0,
            ignore_script_rounds: false,
            counters: Counters::default(),
            halted: None,
        })
    }

    pub fn node_ids(&self) -> Vec<InstanceId> {
        self.nodes.keys().copied().collect()
    }

    pub fn is_stub(&self, id: InstanceId) -> bool {
        matches!(
            self.nodes.get(&id).map(|n| &n.runtime),
            Some(NodeRuntime::Stub { .. })
        )
    }

    pub fn class_of(&self, id: InstanceId) -> Option<&str> {
        self.nodes.get(&id).map(|n| n.class.as_str())
    }

    pub fn state_of(&self, id: InstanceId) -> Option<&str> {
        self.nodes.get(&id).map(|n| match &n.runtime {
            NodeRuntime::Fsm(f) => f.state.as_str(),
            NodeRuntime::Stub { state, .. } => state.as_str(),
        })
    }

    pub fn fsm(&self, id: InstanceId) -> Option<&FsmInstance> {
        match self.nodes.get(&id).map(|n| &n.runtime) {
            Some(NodeRuntime::Fsm(f)) => Some(f),
            _ => None,
        }
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn halted(&self) -> Option<&Halt> {
        self.halted.as_ref()
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn queued_commands(&self) -> usize {
        self.nodes
            .values()
            .map(|n| match &n.runtime {
                NodeRuntime::Fsm(f) => f.queue.len(),
                NodeRuntime::Stub { .. } => 0,
            })
            .sum()
    }

    pub fn pending_updates(&self) -> usize {
        self.pending.values().map(|m| m.len()).sum()
    }

    fn fsm_mut(&mut self, id: InstanceId) -> &mut FsmInstance {
        match &mut self.nodes.get_mut(&id).expect("known node").runtime {
            NodeRuntime::Fsm(f) => f,
            NodeRuntime::Stub { .. } => panic!("node {id} is a stub"),
        }
    }

    /// Ready to take a command right now: an instance waiting at its
    /// selection point, or a stub with no unacknowledged command.
    fn ready_for_command(&self, id: InstanceId) -> bool {
        match self.nodes.get(&id).map(|n| &n.runtime) {
            Some(NodeRuntime::Fsm(f)) => f.awaiting_command(),
            Some(NodeRuntime::Stub { pending_ack, .. }) => pending_ack.is_none(),
            None => false,
        }
    }

    /// At rest: every instance waits at its selection point with nothing
    /// queued, parked, or unacknowledged. Distinct from deadlock, where
    /// nothing is enabled although work remains.
    pub fn is_quiescent(&self) -> bool {
        self.pending.values().all(|m| m.is_empty())
            && self.nodes.values().all(|n| match &n.runtime {
                NodeRuntime::Fsm(f) => {
                    f.phase == Phase::Action && f.pc == PC_SELECT && f.queue.is_empty()
                }
                NodeRuntime::Stub { pending_ack, .. } => pending_ack.is_none(),
            })
    }

    pub fn stuck_nodes(&self) -> Vec<InstanceId> {
        self.nodes
            .iter()
            .filter(|(_, n)| match &n.runtime {
                NodeRuntime::Fsm(f) => {
                    !(f.phase == Phase::Action && f.pc == PC_SELECT && f.queue.is_empty())
                }
                NodeRuntime::Stub { pending_ack, .. } => pending_ack.is_some(),
            })
            .map(|(&id, _)| id)
            .collect()
    }

    /// Every step currently enabled, in canonical order. For each target
    /// only the latest available script entry shows up; firing it counts
    /// the earlier ones as overridden.
    pub fn enabled(&self) -> Vec<SimStep> {
        if self.halted.is_some() {
            return Vec::new();
        }
        let mut out = Vec::new();

        let mut latest: BTreeMap<InstanceId, usize> = BTreeMap::new();
        for (i, e) in self.script.iter().enumerate() {
            if !self.fired[i] && (self.ignore_script_rounds || e.at <= self.round) {
                latest.insert(e.target, i);
            }
        }
        for (&target, &i) in &latest {
            // State payloads only ever target stubs (checked at build),
            // for which readiness means no acknowledgement in flight.
            if self.ready_for_command(target) {
                out.push(SimStep::Inject {
                    entry: i,
                    target,
                    payload: self.script[i].payload.clone(),
                });
            }
        }

        for (&id, node) in &self.nodes {
            match &node.runtime {
                NodeRuntime::Fsm(f) => match f.phase {
                    Phase::When => out.push(SimStep::RunWhen { node: id }),
                    Phase::Action => {
                        if let Some(mailbox) = self.pending.get(&id) {
                            for &child in mailbox.keys() {
                                out.push(SimStep::DeliverUpdate { node: id, child });
                            }
                        }
                        if f.pc != PC_SELECT {
                            if f.at_flush_point() && !f.queue.is_empty() {
                                let front = f.queue.front().expect("queue is nonempty").0;
                                if self.ready_for_command(front) {
                                    out.push(SimStep::DeliverCommand { node: id });
                                }
                            } else if f.blocked_children().is_empty() {
                                out.push(SimStep::ExecStep { node: id });
                            }
                        }
                    }
                },
                NodeRuntime::Stub { pending_ack, .. } => {
                    if pending_ack.is_some() {
                        out.push(SimStep::StubAck { node: id });
                    }
                }
            }
        }
        out.sort();
        out
    }

    /// Hands `command` to node `id`, which must be ready for it.
    fn give_command(&mut self, id: InstanceId, command: &str, events: &mut Vec<Event>) {
        match &mut self.nodes.get_mut(&id).expect("known node").runtime {
            NodeRuntime::Fsm(f) => f.receive_command(command, events),
            NodeRuntime::Stub { pending_ack, .. } => {
                assert!(pending_ack.is_none(), "stub {id} is mid-acknowledgement");
                *pending_ack = Some(command.to_string());
            }
        }
    }

    /// Files state reports and counts ignored commands out of a step's
    /// event batch.
    fn absorb_events(&mut self, events: &[Event]) {
        for event in events {
            match event {
                Event::SendState { id, parent, state } => {
                    if self.nodes.contains_key(parent) {
                        let mailbox = self.pending.entry(*parent).or_default();
                        if mailbox.insert(*id, state.clone()).is_some() {
                            self.counters.updates_coalesced += 1;
                        }
                        self.counters.updates_queued += 1;
                    } else {
                        self.counters.root_reports += 1;
                    }
                }
                Event::IgnoredCommand { .. } => self.counters.ignored_commands += 1,
                _ => {}
            }
        }
    }

    /// Applies one step and returns the events it produced. The step must
    /// be enabled; internal invariants catch misuse.
    pub fn apply(&mut self, step: &SimStep) -> Vec<Event> {
        assert!(self.halted.is_none(), "the simulation has halted");
        let mut events = Vec::new();
        match step {
            SimStep::Inject {
                entry,
                target,
                payload,
            } => {
                assert!(!self.fired[*entry], "script entry fired twice");
                // Entries for the same target that were already available
                // are superseded.
                for i in 0..*entry {
                    if !self.fired[i]
                        && self.script[i].target == *target
                        && (self.ignore_script_rounds || self.script[i].at <= self.round)
                    {
                        self.fired[i] = true;
                        self.counters.injections_overridden += 1;
                    }
                }
                self.fired[*entry] = true;
                self.counters.injections_fired += 1;
                match payload {
                    Payload::Command(command) => {
                        events.push(Event::CommCommand {
                            parent: ENV_ID,
                            child: *target,
                            command: command.clone(),
                        });
                        self.give_command(*target, command, &mut events);
                    }
                    Payload::State(state) => {
                        let n = self.nodes.get_mut(target).expect("known node");
                        let parent = n.parent;
                        match &mut n.runtime {
                            NodeRuntime::Stub {
                                state: current,
                                pending_ack,
                            } => {
                                assert!(
                                    pending_ack.is_none(),
                                    "stub {target} is mid-acknowledgement"
                                );
                                *current = state.clone();
                            }
                            NodeRuntime::Fsm(_) => {
                                panic!("state injections target stubs, node {target} is modelled")
                            }
                        }
                        events.push(Event::SendState {
                            id: *target,
                            parent,
                            state: state.clone(),
                        });
                    }
                }
            }
            SimStep::RunWhen { node } => {
                match self.fsm_mut(*node).run_when_phase(&mut events) {
                    WhenResult::Settled | WhenResult::EnteredAction { .. } => {}
                    WhenResult::Livelock { cycle } => {
                        self.halted = Some(Halt::Livelock { node: *node, cycle });
                    }
                }
            }
            SimStep::StubAck { node } => {
                let n = self.nodes.get_mut(node).expect("known node");
                let parent = n.parent;
                match &mut n.runtime {
                    NodeRuntime::Stub {
                        state,
                        pending_ack,
                    } => {
                        let command = pending_ack.take().expect("an ack is pending");
                        *state = command.clone();
                        events.push(Event::SendState {
                            id: *node,
                            parent,
                            state: command,
                        });
                    }
                    NodeRuntime::Fsm(_) => panic!("node {node} is not a stub"),
                }
            }
            SimStep::DeliverUpdate { node, child } => {
                let mailbox = self.pending.get_mut(node).expect("mailbox exists");
                let state = mailbox.remove(child).expect("report is parked");
                if mailbox.is_empty() {
                    self.pending.remove(node);
                }
                self.fsm_mut(*node)
                    .receive_state_update(*child, &state, &mut events);
                self.counters.updates_delivered += 1;
            }
            SimStep::DeliverCommand { node } => {
                let (child, command) = self.fsm_mut(*node).deliver_front(&mut events);
                self.counters.commands_delivered += 1;
                self.give_command(child, &command, &mut events);
            }
            SimStep::ExecStep { node } => {
                let f = self.fsm_mut(*node);
                let before = f.queue.len();
                match f.exec_step(&mut events) {
                    StepOutcome::Continue
                    | StepOutcome::ActionEnded
                    | StepOutcome::MovedTo { .. } => {}
                    StepOutcome::NeedsFlush | StepOutcome::Blocked { .. } => {
                        panic!("ExecStep applied to a waiting node {node}")
                    }
                }
                let after = self.fsm_mut(*node).queue.len();
                self.counters.commands_enqueued += after.saturating_sub(before) as u64;
            }
        }
        self.absorb_events(&events);
        self.round += 1;
        events
    }

    /// Deterministic dump of everything that defines future behavior.
    /// Rounds and counters are excluded: they observe a run, they do not
    /// steer it.
    pub fn canonical_key(&self) -> String {
        let mut out = String::new();
        for (id, node) in &self.nodes {
            let _ = write!(out, "n{id}:{}", node.class);
            match &node.runtime {
                NodeRuntime::Fsm(f) => {
                    let phase = match f.phase {
                        Phase::When => "w",
                        Phase::Action => "a",
                    };
                    let _ = write!(
                        out,
                        ";s={};ph={phase};pc={};cr={}",
                        f.state, f.pc, f.command_received as u8
                    );
                    out.push_str(";q=");
                    for (child, cmd) in &f.queue {
                        let _ = write!(out, "{child}:{cmd},");
                    }
                    out.push_str(";ch=");
                    for c in &f.children {
                        let _ = write!(out, "{}={}{},", c.id, c.state, if c.busy { "!" } else { "" });
                    }
                }
                NodeRuntime::Stub { state, pending_ack } => {
                    let _ = write!(out, ";stub={state};ack={}", pending_ack.as_deref().unwrap_or("-"));
                }
            }
            out.push('\n');
        }
        for (receiver, mailbox) in &self.pending {
            for (child, state) in mailbox {
                let _ = writeln!(out, "p{receiver}<{child}={state}");
            }
        }
        out.push_str("f=");
        for (i, fired) in self.fired.iter().enumerate() {
            if *fired {
                let _ = write!(out, "{i},");
            }
        }
        out.push('\n');
        if let Some(halt) = &self.halted {
            let _ = writeln!(out, "halt={halt:?}");
        }
        out
    }

    pub fn snapshot_hash(&self) -> u64 {
        fnv1a64(self.canonical_key().as_bytes())
    }

    /// Runs until nothing is enabled, the driver stops, a livelock is hit,
    /// or the step budget runs out. With a trace writer, one JSON line per
    /// step records the step, its events, and the state hash after it.
    /// Idle with future-dated script entries left: fast-forwards the clock
    /// to the next one. Returns false when there is nothing to wait for.
    pub fn warp_to_next_injection(&mut self) -> bool {
        let next_at = self
            .script
            .iter()
            .zip(&self.fired)
            .filter(|(e, &fired)| !fired && e.at > self.round)
            .map(|(e, _)| e.at)
            .min();
        match next_at {
            Some(at) => {
                self.round = at;
                true
            }
            None => false,
        }
    }

    pub fn run(
        &mut self,
        driver: &mut dyn Driver,
        max_steps: u64,
        mut trace: Option<&mut dyn io::Write>,
    ) -> io::Result<SimReport> {
        let mut steps = 0;
        let halt = loop {
            if let Some(halt) = &self.halted {
                break halt.clone();
            }
            if steps >= max_steps {
                break Halt::StepLimit;
            }
            let mut enabled = self.enabled();
            if enabled.is_empty() && self.warp_to_next_injection() {
                enabled = self.enabled();
            }
            if enabled.is_empty() {
                break if self.is_quiescent() {
                    Halt::Quiescent
                } else {
                    Halt::Deadlock {
                        stuck: self.stuck_nodes(),
                    }
                };
            }
            let Some(choice) = driver.choose(&enabled) else {
                break Halt::Stopped;
            };
            assert!(choice < enabled.len(), "driver chose an invalid index");
            let events = self.apply(&enabled[choice]);
            if let Some(w) = trace.as_deref_mut() {
                let record = TraceRecord {
                    step_index: steps,
                    step: &enabled[choice],
                    events: &events,
                    state_hash: format!("{:016x}", self.snapshot_hash()),
                };
                writeln!(w, "{}", serde_json::to_string(&record).expect("serializable"))?;
            }
            steps += 1;
        };
        Ok(SimReport {
            steps,
            halt,
            counters: self.counters,
        })
    }
}

/// Totals from exploring every schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Enumeration {
    /// Distinct states visited (including the initial one).
    pub explored: usize,
    pub quiescent: usize,
    pub deadlocks: usize,
    pub livelocks: usize,
    /// True when the visit limit cut the exploration short; the totals are
    /// then lower bounds.
    pub truncated: bool,
}

/// Breadth-first exploration of every interleaving, deduplicated by
/// canonical state. Script entries are treated as available whenever their
/// target is ready; the `at` rounds of a script order entries per target
/// but cannot pin global time, so enumeration ignores them.
pub fn enumerate(start: &Sim, limit: usize) -> Enumeration {
    let mut start = start.clone();
    start.ignore_script_rounds = true;
    let mut totals = Enumeration {
        explored: 1,
        quiescent: 0,
        deadlocks: 0,
        livelocks: 0,
        truncated: false,
    };
    let mut visited = BTreeSet::new();
    visited.insert(start.canonical_key());
    let mut queue = VecDeque::from([start]);
    while let Some(sim) = queue.pop_front() {
        if sim.halted.is_some() {
            totals.livelocks += 1;
            continue;
        }
        let steps = sim.enabled();
        if steps.is_empty() {
            if sim.is_quiescent() {
                totals.quiescent += 1;
            } else {
                totals.deadlocks += 1;
            }
            continue;
        }
        for step in steps {
            if visited.len() >= limit {
                totals.truncated = true;
                return totals;
            }
            let mut next = sim.clone();
            next.apply(&step);
            if visited.insert(next.canonical_key()) {
                totals.explored += 1;
                queue.push_back(next);
            }
        }
    }
    totals
}
