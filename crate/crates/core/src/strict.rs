//! JSON configs that reject unknown keys, reporting all of them at once.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};

fn collect_unknown(value: &Value, reference: &Value, path: &str, out: &mut Vec<String>) {
    let (Value::Object(given), Value::Object(known)) = (value, reference) else {
        return;
    };
    for (key, v) in given {
        let full = if path.is_empty() { key.clone() } else { format!("{path}.{key}") };
        match known.get(key) {
            None => out.push(full),
            Some(r) => collect_unknown(v, r, &full, out),
        }
    }
}

/// Dotted paths of keys in `value` that `C`'s schema does not know.
pub fn unknown_keys<C: Serialize + Default>(value: &Value) -> Result<Vec<String>> {
    let reference = serde_json::to_value(C::default())?;
    let mut out = Vec::new();
    collect_unknown(value, &reference, "", &mut out);
    Ok(out)
}

pub fn parse_strict<C: Serialize + DeserializeOwned + Default>(text: &str, source: &str) -> Result<C> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::config(format!("{source}: {e}")))?;
    let unknown = unknown_keys::<C>(&value)?;
    if !unknown.is_empty() {
        return Err(Error::config(format!("{source}: unknown keys: {}", unknown.join(", "))));
    }
    serde_json::from_value(value).map_err(|e| Error::config(format!("{source}: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::TrainConfig;

    #[test]
    fn every_unknown_key_is_listed() {
        let text = r#"{"seed": 3, "bogus": 1, "model": {"num_blocks": 2, "widht": 4}, "data": {"x": 0}}"#;
        let msg = parse_strict::<TrainConfig>(text, "cfg.json").unwrap_err().to_string();
        for k in ["bogus", "model.widht", "data.x"] {
            assert!(msg.contains(k), "{msg}");
        }
        let ok: TrainConfig = parse_strict(r#"{"seed": 3, "model": {"num_blocks": 2}}"#, "cfg.json").unwrap();
        assert_eq!((ok.seed, ok.model.num_blocks), (3, 2));
    }
}
