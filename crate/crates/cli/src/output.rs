use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use merton_core::round_sig;
use serde::Serialize;
use serde_json::{Map, Number, Value};

use crate::CliError;

/// Rounds every non-integer number to 12 significant digits.
fn round_numbers(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = round_sig(n.as_f64().unwrap_or(f64::NAN));
            *v = Number::from_f64(x).map_or(Value::Null, Value::Number);
        }
        Value::Array(items) => items.iter_mut().for_each(round_numbers),
        Value::Object(map) => map.values_mut().for_each(round_numbers),
        _ => {}
    }
}

/// Versioned JSON document with rounded numbers and an optional timestamp.
pub fn json_document<T: Serialize>(body: &T, timestamps: bool) -> Result<String, CliError> {
    let mut value =
        serde_json::to_value(body).map_err(|e| CliError::Invalid(format!("serialization: {e}")))?;
    round_numbers(&mut value);
    let mut doc = Map::new();
    doc.insert("version".into(), Value::from(1));
    if timestamps {
        let secs = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        doc.insert("generated_unix".into(), Value::from(secs));
    }
    match value {
        Value::Object(map) => doc.extend(map),
        other => {
            doc.insert("data".into(), other);
        }
    }
    let mut text = serde_json::to_string_pretty(&Value::Object(doc))
        .map_err(|e| CliError::Invalid(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

pub fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Invalid(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
    log::info!("wrote {}", path.display());
    Ok(())
}
