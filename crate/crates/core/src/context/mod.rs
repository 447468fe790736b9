//! Code-context slicing for findings.
//!
//! [`extract_context`] rebuilds the code path between the dataflow steps of a
//! finding: the exact step lines, the lines between consecutive steps of one
//! method, and method signatures plus call sites where the flow crosses a
//! method boundary. [`extract_baseline_context`] produces the fixed-window and
//! whole-file contexts used for the minimal baseline prompt.

mod extract;
mod locator;
mod source;

pub use extract::{
    extract_baseline_context, extract_context, BaselineStyle, CodeContext, ContextIssue, ContextLimits, ContextSegment,
    ContextStrategy, SegmentReason,
};
pub use locator::{locate_methods, MethodRecord, MethodScan, UnbalancedBraces};
pub use source::{SourceFile, SourceTree};
