use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use super::{apply_guard, expand_scatter, resolve_resources, DataflowGraph, GuardDecision, Resources, TaskNode};
use crate::expression::{EvalContext, RuntimeContext};
use crate::value::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskState {
    Pending,
    Ready,
    Running,
    Succeeded,
    Failed,
    Skipped,
    Cached,
}

impl TaskState {
    pub fn is_terminal(self) -> bool {
        matches!(self, TaskState::Succeeded | TaskState::Failed | TaskState::Skipped | TaskState::Cached)
    }

    /// Allowed transitions. `Ready -> Failed` covers failures detected
    /// before launch; `Running -> Running` marks a retry.
    pub fn can_become(self, to: TaskState) -> bool {
        use TaskState::*;
        matches!(
            (self, to),
            (Pending, Ready)
                | (Pending, Skipped)
                | (Ready, Running)
                | (Ready, Cached)
                | (Ready, Failed)
                | (Running, Running)
                | (Running, Succeeded)
                | (Running, Failed)
        )
    }
}

impl fmt::Display for TaskState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// One state transition of one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    /// RFC 3339, microsecond precision.
    pub ts: String,
    pub task: String,
    pub transition: String,
    pub from: TaskState,
    pub to: TaskState,
    pub attempt: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeState {
    Pending,
    /// Tasks created; not all finished.
    Active,
    Succeeded,
    Failed,
    Skipped,
}

/// An executable unit: a whole node, or one scatter instance of it.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub id: String,
    pub node: String,
    pub index: Option<usize>,
    /// Every step input after defaults and scatter selection.
    pub inputs: BTreeMap<String, Value>,
    pub resources: Resources,
    pub state: TaskState,
    pub attempts: u32,
    pub outputs: BTreeMap<String, Value>,
    pub failure: Option<String>,
    pub layer: usize,
}

impl Task {
    /// Deterministic dispatch order: layer, node id, scatter index.
    pub fn order_key(&self) -> (usize, &str, usize) {
        (self.layer, &self.node, self.index.unwrap_or(0))
    }
}

/// Mutable run state over an immutable graph. Owned by one coordinator.
#[derive(Debug)]
pub struct Execution {
    graph: Arc<DataflowGraph>,
    node_states: BTreeMap<String, NodeState>,
    node_tasks: BTreeMap<String, Vec<String>>,
    tasks: BTreeMap<String, Task>,
    published: HashMap<(String, String), Value>,
    events: Vec<Event>,
}

impl Execution {
    pub fn new(graph: Arc<DataflowGraph>) -> Self {
        let node_states = graph.nodes.keys().map(|k| (k.clone(), NodeState::Pending)).collect();
        Execution {
            graph,
            node_states,
            node_tasks: BTreeMap::new(),
            tasks: BTreeMap::new(),
            published: HashMap::new(),
            events: Vec::new(),
        }
    }

    pub fn graph(&self) -> &DataflowGraph {
        &self.graph
    }

    pub fn node_state(&self, id: &str) -> Option<NodeState> {
        self.node_states.get(id).copied()
    }

    pub fn task(&self, id: &str) -> Option<&Task> {
        self.tasks.get(id)
    }

    pub fn tasks(&self) -> impl Iterator<Item = &Task> {
        self.tasks.values()
    }

    pub fn node_tasks(&self, node: &str) -> &[String] {
        self.node_tasks.get(node).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    fn lookup(&self, node: &str, output: &str) -> Option<&Value> {
        self.published.get(&(node.to_string(), output.to_string()))
    }

    /// Pending nodes whose every dependency has been published (nulls from
    /// skipped producers included).
    pub fn ready_set(&self) -> BTreeSet<String> {
        self.graph
            .nodes
            .values()
            .filter(|n| self.node_states[&n.id] == NodeState::Pending)
            .filter(|n| n.dependencies().iter().all(|(p, o)| self.lookup(p, o).is_some()))
            .map(|n| n.id.clone())
            .collect()
    }

    /// Turns every ready node into tasks: evaluates guards, expands scatter
    /// and resolves resources. Returns the number of nodes processed.
    pub fn advance(&mut self) -> usize {
        let mut processed = 0;
        loop {
            let ready = self.ready_set();
            if ready.is_empty() {
                return processed;
            }
            let graph = Arc::clone(&self.graph);
            for id in graph.ordered_ids() {
                if ready.contains(id) {
                    self.activate(&graph.nodes[id]);
                    processed += 1;
                }
            }
        }
    }

    fn resolve_all(&self, bindings: &BTreeMap<String, super::Binding>) -> BTreeMap<String, Value> {
        bindings
            .iter()
            .map(|(k, b)| (k.clone(), b.resolve(|n, o| self.lookup(n, o)).expect("dependencies are published")))
            .collect()
    }

    fn activate(&mut self, node: &TaskNode) {
        self.node_states.insert(node.id.clone(), NodeState::Active);
        for guard in &node.outer_guards {
            let ctx = EvalContext::new(self.resolve_all(&guard.bindings), RuntimeContext::default());
            match apply_guard(&guard.expr, &ctx) {
                Ok(GuardDecision::Proceed) => {}
                Ok(GuardDecision::Skip) => {
                    let detail = format!("enclosing step {} skipped", guard.origin);
                    self.add_task(node, node.id.clone(), None, BTreeMap::new());
                    self.transition(&node.id, TaskState::Skipped, 0, Some(detail));
                    self.finish_node(&node.id);
                    return;
                }
                Err(e) => {
                    self.fail_before_launch(node, format!("guard of {}: {e}", guard.origin));
                    return;
                }
            }
        }
        let bound = self.resolve_all(&node.bindings);
        if !node.is_scattered() {
            self.add_task(node, node.id.clone(), None, bound);
            self.prepare(node, &node.id.clone());
            self.finish_node(&node.id);
            return;
        }
        match expand_scatter(&node.id, &node.scatter, &bound) {
            Err(e) => self.fail_before_launch(node, e.to_string()),
            Ok(instances) => {
                let ids: Vec<String> = (0..instances.len()).map(|i| format!("{}[{i}]", node.id)).collect();
                for (i, inputs) in instances.into_iter().enumerate() {
                    self.add_task(node, ids[i].clone(), Some(i), inputs);
                }
                for id in &ids {
                    self.prepare(node, id);
                }
                self.finish_node(&node.id);
            }
        }
    }

    fn fail_before_launch(&mut self, node: &TaskNode, reason: String) {
        self.add_task(node, node.id.clone(), None, BTreeMap::new());
        self.transition(&node.id, TaskState::Ready, 0, None);
        self.fail(&node.id, reason);
    }

    fn add_task(&mut self, node: &TaskNode, id: String, index: Option<usize>, inputs: BTreeMap<String, Value>) {
        self.node_tasks.entry(node.id.clone()).or_default().push(id.clone());
        self.tasks.insert(
            id.clone(),
            Task {
                id,
                node: node.id.clone(),
                index,
                inputs,
                resources: Resources::default(),
                state: TaskState::Pending,
                attempts: 0,
                outputs: BTreeMap::new(),
                failure: None,
                layer: node.layer,
            },
        );
    }

    /// Applies the task's own guard and resolves its resources.
    fn prepare(&mut self, node: &TaskNode, task_id: &str) {
        let inputs = self.tasks[task_id].inputs.clone();
        if let Some(guard) = &node.guard {
            let ctx = EvalContext::new(inputs.clone(), RuntimeContext::default());
            match apply_guard(guard, &ctx) {
                Ok(GuardDecision::Proceed) => {}
                Ok(GuardDecision::Skip) => {
                    self.transition(task_id, TaskState::Skipped, 0, Some(format!("{} is false", guard.source())));
                    return;
                }
                Err(e) => {
                    self.transition(task_id, TaskState::Ready, 0, None);
                    self.fail(task_id, format!("when: {e}"));
                    return;
                }
            }
        }
        match resolve_resources(node, &inputs) {
            Ok(r) => {
                self.tasks.get_mut(task_id).expect("task exists").resources = r;
                self.transition(task_id, TaskState::Ready, 0, None);
            }
            Err(e) => {
                self.transition(task_id, TaskState::Ready, 0, None);
                self.fail(task_id, format!("resources: {e}"));
            }
        }
    }

    /// Ready tasks in dispatch order.
    pub fn ready_tasks(&self) -> Vec<&Task> {
        let mut ready: Vec<&Task> = self.tasks.values().filter(|t| t.state == TaskState::Ready).collect();
        ready.sort_by(|a, b| a.order_key().cmp(&b.order_key()));
        ready
    }

    pub fn running_count(&self) -> usize {
        self.tasks.values().filter(|t| t.state == TaskState::Running).count()
    }

    /// Records a transition. Illegal transitions are engine bugs.
    pub fn transition(&mut self, task_id: &str, to: TaskState, attempt: u32, detail: Option<String>) {
        let task = self.tasks.get_mut(task_id).unwrap_or_else(|| panic!("unknown task {task_id}"));
        let from = task.state;
        assert!(from.can_become(to), "illegal transition {from} -> {to} for {task_id}");
        task.state = to;
        task.attempts = task.attempts.max(attempt);
        let seq = self.events.len() as u64;
        self.events.push(Event {
            seq,
            ts: Utc::now().to_rfc3339_opts(SecondsFormat::Micros, true),
            task: task_id.to_string(),
            transition: format!("{from}->{to}"),
            from,
            to,
            attempt,
            detail,
        });
    }

    pub fn start(&mut self, task_id: &str) {
        self.transition(task_id, TaskState::Running, 1, None);
    }

    pub fn retry(&mut self, task_id: &str, attempt: u32, reason: String) {
        self.transition(task_id, TaskState::Running, attempt, Some(reason));
    }

    pub fn succeed(&mut self, task_id: &str, outputs: BTreeMap<String, Value>) {
        let attempt = self.tasks[task_id].attempts;
        self.tasks.get_mut(task_id).expect("task exists").outputs = outputs;
        self.transition(task_id, TaskState::Succeeded, attempt, None);
        self.finish_node_of(task_id);
    }

    pub fn cached(&mut self, task_id: &str, outputs: BTreeMap<String, Value>) {
        self.tasks.get_mut(task_id).expect("task exists").outputs = outputs;
        self.transition(task_id, TaskState::Cached, 0, None);
        self.finish_node_of(task_id);
    }

    pub fn fail(&mut self, task_id: &str, reason: String) {
        let attempt = self.tasks[task_id].attempts;
        self.tasks.get_mut(task_id).expect("task exists").failure = Some(reason.clone());
        self.transition(task_id, TaskState::Failed, attempt, Some(reason));
        self.finish_node_of(task_id);
    }

    fn finish_node_of(&mut self, task_id: &str) {
        let node = self.tasks[task_id].node.clone();
        self.finish_node(&node);
    }

    /// Publishes a node's outputs once all its tasks are terminal.
    fn finish_node(&mut self, node_id: &str) {
        if self.node_states[node_id] != NodeState::Active {
            return;
        }
        let task_ids = self.node_tasks.get(node_id).cloned().unwrap_or_default();
        let tasks: Vec<&Task> = task_ids.iter().map(|t| &self.tasks[t]).collect();
        if !tasks.iter().all(|t| t.state.is_terminal()) {
            return;
        }
        let node = &self.graph.nodes[node_id];
        let (state, values): (NodeState, Vec<(String, Value)>) = if tasks.iter().any(|t| t.state == TaskState::Failed) {
            (NodeState::Failed, Vec::new())
        } else if node.is_scattered() && !(tasks.len() == 1 && tasks[0].index.is_none()) {
            let values = node
                .outputs
                .iter()
                .map(|o| {
                    let items = tasks.iter().map(|t| t.outputs.get(o).cloned().unwrap_or(Value::Null)).collect();
                    (o.clone(), Value::Array(items))
                })
                .collect();
            (NodeState::Succeeded, values)
        } else if tasks.iter().all(|t| t.state == TaskState::Skipped) {
            (NodeState::Skipped, node.outputs.iter().map(|o| (o.clone(), Value::Null)).collect())
        } else {
            let t = tasks[0];
            (
                NodeState::Succeeded,
                node.outputs.iter().map(|o| (o.clone(), t.outputs.get(o).cloned().unwrap_or(Value::Null))).collect(),
            )
        };
        for (o, v) in values {
            self.published.insert((node_id.to_string(), o), v);
        }
        self.node_states.insert(node_id.to_string(), state);
    }

    /// True when every node finished without failure.
    pub fn succeeded(&self) -> bool {
        self.node_states.values().all(|s| matches!(s, NodeState::Succeeded | NodeState::Skipped))
    }

    /// Workflow outputs from what has been published; unpublished ports
    /// yield null.
    pub fn workflow_outputs(&self) -> BTreeMap<String, Value> {
        self.graph
            .workflow_outputs
            .iter()
            .map(|(k, b)| (k.clone(), b.resolve(|n, o| self.lookup(n, o)).unwrap_or(Value::Null)))
            .collect()
    }

    /// Published value of one port, if any.
    pub fn published(&self, node: &str, output: &str) -> Option<&Value> {
        self.lookup(node, output)
    }
}
