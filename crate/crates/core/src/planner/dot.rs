use std::fmt::Write;

use super::{DataflowGraph, Execution, NodeState};

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// Graphviz rendering: one rank per layer, nodes labeled with task id and
/// state, edges labeled `output→input`. Scattered nodes are drawn once and
/// annotated, since their width is only known at run time.
pub fn to_dot(graph: &DataflowGraph, exec: Option<&Execution>) -> String {
    let mut out = String::from("digraph workflow {\n  rankdir=TB;\n  node [shape=box];\n");
    for (k, layer) in graph.layers().iter().enumerate() {
        let members: Vec<String> = layer.iter().map(|id| quote(id)).collect();
        let _ = writeln!(out, "  {{ rank=same; /* layer {k} */ {}; }}", members.join("; "));
    }
    for id in graph.ordered_ids() {
        let node = &graph.nodes[id];
        let state = exec.and_then(|e| e.node_state(id)).unwrap_or(NodeState::Pending);
        let mut label = format!("{id}\\n{state:?}");
        if node.is_scattered() {
            let _ = write!(label, "\\nscatter({})", node.scatter.join(", "));
        }
        if node.guard.is_some() || !node.outer_guards.is_empty() {
            label.push_str("\\nconditional");
        }
        let style = if node.is_scattered() { ", style=\"bold,dashed\"" } else { "" };
        let _ = writeln!(out, "  {} [label=\"{}\"{style}];", quote(id), label.replace('"', "\\\""));
    }
    for e in &graph.edges {
        let _ = writeln!(
            out,
            "  {} -> {} [label={}];",
            quote(&e.producer),
            quote(&e.consumer),
            quote(&format!("{}→{}", e.output, e.input))
        );
    }
    out.push_str("}\n");
    out
}
