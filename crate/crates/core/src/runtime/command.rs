use crate::document::ToolDescription;
use crate::expression::{EvalContext, ExprError};
use crate::value::Value;

fn render_scalar(v: &Value, out: &mut Vec<String>) {
    match v {
        Value::Null => {}
        Value::Array(items) => items.iter().for_each(|i| render_scalar(i, out)),
        other => out.push(other.interpolate()),
    }
}

/// Words contributed by one bound value: booleans become the bare prefix
/// (or nothing), arrays put the prefix once before their elements, null
/// contributes nothing.
pub(crate) fn contribution(prefix: Option<&str>, value: &Value) -> Vec<String> {
    let mut out = Vec::new();
    match value {
        Value::Null | Value::Bool(false) => {}
        Value::Bool(true) => out.extend(prefix.map(str::to_string)),
        Value::Array(items) if items.iter().all(Value::is_null) => {}
        other => {
            out.extend(prefix.map(str::to_string));
            render_scalar(other, &mut out);
        }
    }
    out
}

struct Item {
    position: i64,
    /// Fixed arguments sort before inputs at equal positions.
    is_input: bool,
    name: String,
    seq: usize,
    words: Vec<String>,
}

impl Item {
    fn key(&self) -> (i64, bool, &str, usize) {
        (self.position, self.is_input, &self.name, self.seq)
    }
}

/// argv = baseCommand, then arguments and bound inputs ordered by
/// (position, input id). `ctx.inputs` must hold the staged values.
pub fn build_command_line(tool: &ToolDescription, ctx: &EvalContext) -> Result<Vec<String>, ExprError> {
    let mut items = Vec::new();
    for (seq, arg) in tool.arguments.iter().enumerate() {
        let value = arg.value.eval(ctx)?;
        items.push(Item {
            position: arg.position.unwrap_or(0),
            is_input: false,
            name: String::new(),
            seq,
            words: contribution(arg.prefix.as_deref(), &value),
        });
    }
    for (seq, param) in tool.inputs.iter().enumerate() {
        let Some(binding) = &param.binding else { continue };
        let value = ctx.inputs.get(&param.id).cloned().unwrap_or(Value::Null);
        items.push(Item {
            position: binding.position.unwrap_or(0),
            is_input: true,
            name: param.id.clone(),
            seq,
            words: contribution(binding.prefix.as_deref(), &value),
        });
    }
    items.sort_by(|a, b| a.key().cmp(&b.key()));
    let mut argv = tool.base_command.clone();
    argv.extend(items.into_iter().flat_map(|i| i.words));
    Ok(argv)
}
