//! JSON Lines helpers.

use std::io::{self, BufRead, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

/// One compact JSON document per line, each terminated by `\n`.
pub fn to_string<T: Serialize>(items: &[T]) -> serde_json::Result<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write<T: Serialize>(path: &Path, items: &[T]) -> io::Result<()> {
    let text = to_string(items).map_err(io::Error::other)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(text.as_bytes())
}

/// Parses every non-blank line. Errors carry the 1-based line number.
pub fn parse<T: DeserializeOwned>(text: &str) -> Result<Vec<T>, (usize, serde_json::Error)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| (i + 1, e)))
        .collect()
}

pub fn read<T: DeserializeOwned>(path: &Path) -> io::Result<Vec<T>> {
    let f = std::fs::File::open(path)?;
    let mut items = Vec::new();
    for (i, line) in io::BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}:{}: {e}", path.display(), i + 1)))?;
        items.push(item);
    }
    Ok(items)
}
