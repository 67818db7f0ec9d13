//! Config assembly: defaults, then the JSON file, then `--set` overrides.

use std::path::Path;

use serde_json::{Map, Value};
use splatsr::{Error, PipelineConfig, Result};

/// A `key=value` override. The value is parsed as JSON when possible and
/// taken as a string otherwise, so `codec.kind=decimate` needs no quotes.
#[derive(Debug, Clone)]
pub struct Override {
    pub path: Vec<String>,
    pub value: Value,
}

pub fn parse_override(s: &str) -> std::result::Result<Override, String> {
    let (key, raw) = s.split_once('=').ok_or_else(|| format!("expected key=value, got `{s}`"))?;
    let path: Vec<String> = key.split('.').map(str::to_owned).collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(format!("malformed key `{key}`"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
    Ok(Override { path, value })
}

fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (slot, v) => *slot = v,
    }
}

fn apply(root: &mut Value, o: &Override) -> Result<()> {
    let mut node = root;
    for (depth, key) in o.path.iter().enumerate() {
        let obj = match node {
            Value::Object(m) => m,
            Value::Null => {
                *node = Value::Object(Map::new());
                node.as_object_mut().unwrap()
            }
            _ => {
                return Err(Error::Config(format!(
                    "`{}` is not a table",
                    o.path[..depth].join(".")
                )))
            }
        };
        node = obj.entry(key.clone()).or_insert(Value::Null);
    }
    *node = o.value.clone();
    Ok(())
}

fn decode(value: Value, origin: &str) -> Result<PipelineConfig> {
    serde_json::from_value(value).map_err(|e| Error::Config(format!("{origin}: {e}")))
}

/// Merged configuration. Unknown keys at any level are rejected and the
/// result is validated for the subcommand by the pipeline itself.
pub fn load(file: Option<&Path>, overrides: &[Override], seed: Option<u64>) -> Result<PipelineConfig> {
    let mut value = serde_json::to_value(PipelineConfig::default()).expect("config serializes");
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
        let parsed: Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            column: e.column(),
            msg: e.to_string(),
        })?;
        // reject unknown keys against the file alone so the message names it
        decode(parsed.clone(), &path.display().to_string())?;
        merge(&mut value, parsed);
    }
    for o in overrides {
        apply(&mut value, o)?;
    }
    let mut config = decode(value, "--set")?;
    if let Some(s) = seed {
        config.seed = s;
    }
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ov(s: &str) -> Override {
        parse_override(s).unwrap()
    }

    #[test]
    fn overrides_take_precedence_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"steps": 3, "lambda": 0.5, "learning_rates": {"color": 0.1}}"#).unwrap();
        let c = load(Some(&p), &[ov("steps=2"), ov("learning_rates.position=0.004")], Some(9)).unwrap();
        assert_eq!(c.steps, 2);
        assert_eq!(c.lambda, 0.5);
        assert_eq!(c.learning_rates.color, 0.1);
        assert_eq!(c.learning_rates.position, 0.004);
        assert_eq!(c.seed, 9);
    }

    #[test]
    fn string_values_need_no_quotes() {
        let c = load(None, &[ov("codec.kind=decimate"), ov("codec.factor=2")], None).unwrap();
        assert_eq!(c.codec.factor, 2);
        let c = load(None, &[ov("schedule.kind=linear"), ov("schedule.beta_start=0.1"), ov("schedule.beta_end=0.3")], None).unwrap();
        assert!(matches!(c.schedule, splatsr::pipeline::ScheduleConfig::Linear { .. }));
    }

    #[test]
    fn unknown_keys_are_rejected_at_every_depth() {
        for bad in ["stepz=3", "codec.size=2", "learning_rates.momentum=0.9", "denoiser.strength=1"] {
            let e = load(None, &[ov(bad)], None).unwrap_err();
            assert_eq!(e.category(), "config", "{bad}");
        }
        assert_eq!(load(None, &[ov("steps.inner=1")], None).unwrap_err().category(), "config");
    }

    #[test]
    fn malformed_overrides_fail_to_parse() {
        assert!(parse_override("steps").is_err());
        assert!(parse_override("a..b=1").is_err());
        assert_eq!(ov("x=\"4\"").value, Value::String("4".into()));
    }
}
