//! `--set key.path=value` overrides on a JSON config.

use serde_json::Value;

/// Parses `value` as JSON, falling back to a plain string so that
/// `method=gail` works without quotes.
fn parse_value(text: &str) -> Value {
    serde_json::from_str(text).unwrap_or_else(|_| Value::String(text.to_owned()))
}

/// Applies one `key.path=value` override. Every key on the path must already
/// exist in `config`, which should have all defaults materialized.
pub fn apply(config: &mut Value, spec: &str) -> Result<(), String> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| format!("override `{spec}` is not of the form key=value"))?;
    let mut node = config;
    let mut walked = Vec::new();
    for key in path.split('.') {
        walked.push(key);
        node = node
            .as_object_mut()
            .and_then(|m| m.get_mut(key))
            .ok_or_else(|| format!("unknown config key `{}`", walked.join(".")))?;
    }
    *node = parse_value(raw);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn sets_nested_values() {
        let mut v = json!({"method": "drail", "disc": {"lr": 0.1, "hidden": [1]}});
        apply(&mut v, "method=gail").unwrap();
        apply(&mut v, "disc.lr=0.5").unwrap();
        apply(&mut v, "disc.hidden=[4,4]").unwrap();
        assert_eq!(
            v,
            json!({"method": "gail", "disc": {"lr": 0.5, "hidden": [4, 4]}})
        );
    }

    #[test]
    fn rejects_unknown_keys_and_bad_syntax() {
        let mut v = json!({"disc": {"lr": 0.1}});
        assert!(apply(&mut v, "disc.nope=1")
            .unwrap_err()
            .contains("disc.nope"));
        assert!(apply(&mut v, "lr").is_err());
        assert!(apply(&mut v, "disc.lr.x=1").is_err());
    }
}
