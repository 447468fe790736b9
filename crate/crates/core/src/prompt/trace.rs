use serde::{Deserialize, Serialize};

use crate::context::CodeContext;
use crate::sarif::{CodeLocation, Finding};

pub const REGION_OPEN: &str = "[[[";
pub const REGION_CLOSE: &str = "]]]";
pub const LINE_UNAVAILABLE: &str = "<line unavailable>";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedTrace {
    pub rendered: String,
    pub step_count: u32,
    /// Steps whose source line was not in the context.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub missing_lines: Vec<u32>,
}

fn char_slice(s: &str, from: usize, to: usize) -> &str {
    let byte = |n: usize| s.char_indices().nth(n).map_or(s.len(), |(b, _)| b);
    &s[byte(from)..byte(to)]
}

/// Wraps the location's highlighted region of `line` in `[[[`/`]]]`, with
/// indentation removed. Columns are 1-based and the end column is exclusive.
/// Without column information the whole line is highlighted.
pub fn highlight(line: &str, loc: &CodeLocation) -> String {
    let Some(start_col) = loc.start_column else {
        return format!("{REGION_OPEN}{}{REGION_CLOSE}", line.trim());
    };
    let len = line.chars().count();
    let start = (start_col.max(1) as usize - 1).min(len);
    let end = match loc.end_column {
        Some(end) if loc.end_line == loc.start_line => (end.max(1) as usize - 1).clamp(start, len),
        _ => len,
    };
    let rendered = format!(
        "{}{REGION_OPEN}{}{REGION_CLOSE}{}",
        char_slice(line, 0, start),
        char_slice(line, start, end),
        char_slice(line, end, len)
    );
    rendered.trim().to_string()
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Renders the trace as numbered SOURCE/STEP/SINK blocks, each followed by the
/// analyzer's step message. Lines missing from the context render as
/// `<line unavailable>`.
pub fn render_trace(f: &Finding, ctx: &CodeContext) -> AnnotatedTrace {
    let mut blocks = Vec::with_capacity(f.trace.len());
    let mut missing_lines = Vec::new();
    for step in &f.trace {
        let loc = &step.location;
        let code = match ctx.source_line(&loc.uri, loc.start_line) {
            Some(line) => highlight(line, loc),
            None => {
                missing_lines.push(step.index);
                LINE_UNAVAILABLE.to_string()
            }
        };
        let message = one_line(&step.step_message);
        let message = if message.is_empty() { "(none)".to_string() } else { message };
        blocks.push(format!("[{}] {}: {}\nMessage: {}\n", step.index, step.kind.as_str(), code, message));
    }
    AnnotatedTrace { rendered: blocks.join("\n"), step_count: f.trace.len() as u32, missing_lines }
}
