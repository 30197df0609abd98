use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;

/// Rounds every non-integer number to 4 decimal places.
pub fn round4(value: Value) -> Value {
    match value {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().unwrap_or_default();
            serde_json::Number::from_f64((x * 1e4).round() / 1e4).map_or(Value::Null, Value::Number)
        }
        Value::Array(items) => Value::Array(items.into_iter().map(round4).collect()),
        Value::Object(map) => Value::Object(map.into_iter().map(|(k, v)| (k, round4(v))).collect()),
        other => other,
    }
}

pub fn rounded<T: Serialize>(value: &T) -> Result<Value> {
    Ok(round4(serde_json::to_value(value)?))
}

/// Writes rounded, pretty JSON.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(&rounded(value)?)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Prints rounded JSON on one line to standard output.
pub fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string(&rounded(value)?)?);
    Ok(())
}
