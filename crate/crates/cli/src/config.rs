//! Layered run configuration: defaults, then the config file, then
//! `--seed` and `--set key=value`.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use ctal_core::config::RunConfig;
use toml::{Table, Value};

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parses the right-hand side of `--set` as a TOML value, falling back to a
/// bare string.
fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set_path(root: &mut Table, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("malformed key {key:?}");
    }
    let mut t = root;
    for p in &parts[..parts.len() - 1] {
        let entry = t
            .entry(p.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        t = entry
            .as_table_mut()
            .ok_or_else(|| anyhow!("{key}: {p} is not a table"))?;
    }
    t.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

pub fn load(file: Option<&Path>, seed: Option<u64>, sets: &[String]) -> Result<RunConfig> {
    let mut table = Table::try_from(RunConfig::default()).context("serializing defaults")?;
    if let Some(path) = file {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let over: Table =
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        merge(&mut table, over);
    }
    if let Some(s) = seed {
        table.insert("seed".into(), Value::Integer(s as i64));
    }
    for s in sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| anyhow!("--set expects key=value, got {s:?}"))?;
        set_path(&mut table, k.trim(), parse_value(v.trim()))?;
    }
    let cfg: RunConfig = Value::Table(table)
        .try_into()
        .context("invalid configuration")?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn to_toml(cfg: &RunConfig) -> Result<String> {
    Ok(toml::to_string_pretty(cfg)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_is_defaults_file_flags() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "seed = 3\n[optim]\nepochs = 2\nlr = 0.5\n").unwrap();
        let cfg = load(
            Some(&p),
            Some(9),
            &["optim.lr=0.25".into(), "refine.iterations = 4".into()],
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.optim.epochs, 2);
        assert_eq!(cfg.optim.lr, 0.25);
        assert_eq!(cfg.refine.iterations, 4);
        assert_eq!(cfg.loss, RunConfig::default().loss);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(load(None, None, &["optim.nope=1".into()]).is_err());
        assert!(load(None, None, &["refine.iterations=0".into()]).is_err());
        assert!(load(None, None, &["seed".into()]).is_err());
    }

    #[test]
    fn echoed_config_loads_back_identically() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = load(None, Some(5), &["synth.snr=inf".into()]).unwrap();
        let p = dir.path().join("config.toml");
        std::fs::write(&p, to_toml(&cfg).unwrap()).unwrap();
        assert_eq!(load(Some(&p), None, &[]).unwrap(), cfg);
    }
}
