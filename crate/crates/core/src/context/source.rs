use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use super::locator::{locate_methods, MethodScan};

/// A source file with LF-normalized lines and its method table.
#[derive(Debug)]
pub struct SourceFile {
    pub uri: String,
    pub lines: Vec<String>,
    pub methods: MethodScan,
}

impl SourceFile {
    pub fn from_text(uri: &str, text: &str) -> SourceFile {
        let normalized = text.replace("\r\n", "\n").replace('\r', "\n");
        let mut lines: Vec<String> = normalized.split('\n').map(str::to_string).collect();
        if normalized.ends_with('\n') {
            lines.pop();
        }
        SourceFile { uri: uri.to_string(), methods: locate_methods(&normalized, uri), lines }
    }

    pub fn line_count(&self) -> u32 {
        self.lines.len() as u32
    }

    /// 1-based line, if in range.
    pub fn line(&self, n: u32) -> Option<&str> {
        n.checked_sub(1).and_then(|i| self.lines.get(i as usize)).map(String::as_str)
    }

    /// Inclusive 1-based range joined with `\n`, no trailing newline.
    pub fn slice(&self, start: u32, end: u32) -> String {
        self.lines[(start - 1) as usize..end as usize].join("\n")
    }
}

/// Read-only view of a source root. Files are loaded once and shared.
#[derive(Debug)]
pub struct SourceTree {
    root: PathBuf,
    cache: Mutex<HashMap<String, Option<Arc<SourceFile>>>>,
}

impl SourceTree {
    pub fn new(root: impl Into<PathBuf>) -> SourceTree {
        SourceTree { root: root.into(), cache: Mutex::new(HashMap::new()) }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn resolve(&self, uri: &str) -> PathBuf {
        let rel = uri.strip_prefix("file://").unwrap_or(uri);
        let rel = rel.trim_start_matches("./");
        self.root.join(rel)
    }

    /// `None` when the file cannot be read as UTF-8 text.
    pub fn get(&self, uri: &str) -> Option<Arc<SourceFile>> {
        let mut cache = self.cache.lock().expect("source cache poisoned");
        cache
            .entry(uri.to_string())
            .or_insert_with(|| {
                std::fs::read_to_string(self.resolve(uri)).ok().map(|text| Arc::new(SourceFile::from_text(uri, &text)))
            })
            .clone()
    }
}
