//! Rendering of report values as JSON, indented text, or CSV.

use std::io::Write;

use clap::ValueEnum;
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Text,
    Csv,
}

/// Pretty JSON with sorted keys. Floats use the shortest representation that
/// parses back to the same value, so re-serializing parsed output reproduces
/// it byte for byte.
pub fn to_json(value: &Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("Value always serializes");
    s.push('\n');
    s
}

pub fn write_text(out: &mut impl Write, value: &Value) -> std::io::Result<()> {
    text_node(out, value, 0)
}

fn scalar(value: &Value) -> Option<String> {
    match value {
        Value::Null => Some("null".into()),
        Value::Bool(b) => Some(b.to_string()),
        Value::Number(n) => Some(n.to_string()),
        Value::String(s) => Some(s.clone()),
        Value::Array(items) if items.iter().all(|v| scalar(v).is_some() && !v.is_array()) => {
            let parts: Vec<String> = items.iter().filter_map(scalar).collect();
            Some(format!("[{}]", parts.join(", ")))
        }
        _ => None,
    }
}

fn is_matrix(items: &[Value]) -> bool {
    !items.is_empty()
        && items
            .iter()
            .all(|row| matches!(row, Value::Array(r) if r.iter().all(Value::is_number)))
}

fn text_node(out: &mut impl Write, value: &Value, depth: usize) -> std::io::Result<()> {
    let pad = "  ".repeat(depth);
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                match scalar(v) {
                    Some(s) => writeln!(out, "{pad}{k}: {s}")?,
                    None => {
                        writeln!(out, "{pad}{k}:")?;
                        text_node(out, v, depth + 1)?;
                    }
                }
            }
        }
        Value::Array(items) if is_matrix(items) => {
            for row in items {
                writeln!(out, "{pad}{}", scalar(row).unwrap_or_default())?;
            }
        }
        Value::Array(items) => {
            for (i, v) in items.iter().enumerate() {
                match scalar(v) {
                    Some(s) => writeln!(out, "{pad}- {s}")?,
                    None => {
                        writeln!(out, "{pad}[{i}]")?;
                        text_node(out, v, depth + 1)?;
                    }
                }
            }
        }
        other => writeln!(out, "{pad}{}", scalar(other).unwrap_or_default())?,
    }
    Ok(())
}

/// Flattens a value into `path,value` rows.
pub fn write_flat_csv(out: impl Write, value: &Value) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["path", "value"])?;
    let mut rows = Vec::new();
    flatten(value, String::new(), &mut rows);
    for (path, v) in rows {
        w.write_record([path, v])?;
    }
    w.flush()?;
    Ok(())
}

fn flatten(value: &Value, path: String, rows: &mut Vec<(String, String)>) {
    let join = |key: &str| {
        if path.is_empty() {
            key.to_string()
        } else {
            format!("{path}.{key}")
        }
    };
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                flatten(v, join(k), rows);
            }
        }
        Value::Array(items) => {
            for (i, v) in items.iter().enumerate() {
                flatten(v, join(&i.to_string()), rows);
            }
        }
        Value::String(s) => rows.push((path, s.clone())),
        other => rows.push((path, other.to_string())),
    }
}
