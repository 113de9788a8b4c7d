//! The results table: one `<activation> <train> <eval>` row per activation,
//! kept in the order ReLU, leaky (largest `a` first), PReLU, RReLU.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

fn param(label: &str, key: &str) -> f64 {
    label
        .split(|c| c == '(' || c == ',' || c == ')')
        .find_map(|part| part.strip_prefix(key)?.strip_prefix('=')?.parse().ok())
        .unwrap_or(f64::NAN)
}

fn rank(label: &str) -> (u8, f64, f64) {
    let kind = label.split('(').next().unwrap_or(label);
    match kind {
        "relu" => (0, 0.0, 0.0),
        "leaky" => (1, -param(label, "a"), 0.0),
        "prelu" => (2, 0.0, 0.0),
        "rrelu" => (3, param(label, "l"), param(label, "u")),
        _ => (4, 0.0, 0.0),
    }
}

fn order(a: &str, b: &str) -> Ordering {
    let (ka, xa, ya) = rank(a);
    let (kb, xb, yb) = rank(b);
    ka.cmp(&kb)
        .then(xa.total_cmp(&xb))
        .then(ya.total_cmp(&yb))
        .then_with(|| a.cmp(b))
}

/// Adds `row` to the table text, replacing any row for the same activation.
pub fn upsert(table: &str, label: &str, row: &str) -> String {
    let mut rows: Vec<&str> = table
        .lines()
        .filter(|l| !l.trim().is_empty() && l.split_whitespace().next() != Some(label))
        .collect();
    rows.push(row);
    rows.sort_by(|a, b| order(a.split_whitespace().next().unwrap_or(""), b.split_whitespace().next().unwrap_or("")));
    let mut out = rows.join("\n");
    out.push('\n');
    out
}

pub fn format_row(label: &str, train: f64, eval: f64) -> String {
    format!("{label} {train:.6} {eval:.6}")
}

/// Reads, updates and rewrites the table at `path`.
pub fn record(path: &Path, label: &str, train: f64, eval: f64) -> std::io::Result<()> {
    let existing = match fs::read_to_string(path) {
        Ok(s) => s,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(e),
    };
    fs::write(path, upsert(&existing, label, &format_row(label, train, eval)))
}
