//! Training configuration from TOML files plus `key.path=value` overrides.
//! Unknown keys are rejected in both the file and the overrides.

use std::path::Path;

use anyhow::{bail, Context};
use dirigent_core::training::TrainConfig;

/// Load a (possibly partial) TOML configuration, merged over `base`.
/// Keys that do not exist in [`TrainConfig`] are rejected.
pub fn load_config(path: Option<&Path>, base: TrainConfig) -> anyhow::Result<TrainConfig> {
    match path {
        None => Ok(base),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read config {}", path.display()))?;
            let table: toml::Table = text
                .parse()
                .with_context(|| format!("invalid config {}", path.display()))?;
            let mut value = toml::Value::try_from(&base).context("serializing configuration")?;
            merge(&mut value, &table, "")
                .with_context(|| format!("invalid config {}", path.display()))?;
            value.try_into().context("configuration has the wrong shape")
        }
    }
}

/// Apply every leaf of `table` to `target` by its dotted path, so partial
/// sections merge instead of replacing whole tables.
fn merge(target: &mut toml::Value, table: &toml::Table, prefix: &str) -> anyhow::Result<()> {
    for (key, val) in table {
        let path = if prefix.is_empty() {
            key.clone()
        } else {
            format!("{prefix}.{key}")
        };
        match val.as_table() {
            Some(sub) => merge(target, sub, &path)?,
            None => set_path(target, &path, val.clone())?,
        }
    }
    Ok(())
}

/// Apply `a.b.c=value` overrides to an existing configuration. Every path
/// must name a key that already exists.
pub fn apply_overrides(cfg: &TrainConfig, overrides: &[String]) -> anyhow::Result<TrainConfig> {
    let mut value = toml::Value::try_from(cfg).context("serializing configuration")?;
    for entry in overrides {
        let (path, raw) = entry
            .split_once('=')
            .with_context(|| format!("override '{entry}' is not of the form key.path=value"))?;
        let path = path.trim();
        let raw = raw.trim();
        set_path(&mut value, path, parse_scalar(raw))
            .with_context(|| format!("cannot apply override '{entry}'"))?;
    }
    value
        .try_into()
        .context("overridden configuration has the wrong shape")
}

fn parse_scalar(raw: &str) -> toml::Value {
    // Reuse the TOML value grammar; anything that does not parse as a TOML
    // scalar or array is taken as a bare string.
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut table) => table.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_path(root: &mut toml::Value, path: &str, new: toml::Value) -> anyhow::Result<()> {
    let mut current = root;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, segment) in segments.iter().enumerate() {
        let table = current
            .as_table_mut()
            .with_context(|| format!("'{}' is not a table", segments[..i].join(".")))?;
        if !table.contains_key(*segment) {
            let known: Vec<&str> = table.keys().map(String::as_str).collect();
            bail!("unknown key '{segment}'; known keys here: {}", known.join(", "));
        }
        let slot = table.get_mut(*segment).unwrap();
        if i + 1 == segments.len() {
            *slot = new;
            return Ok(());
        }
        current = slot;
    }
    unreachable!("split('.') yields at least one segment");
}

#[cfg(test)]
mod tests {
    use super::*;
    use dirigent_core::network::CartesianHead;

    #[test]
    fn overrides_change_nested_fields() {
        let base = TrainConfig::small(3, 16);
        let cfg = apply_overrides(
            &base,
            &[
                "epochs=7".into(),
                "loss.cartesian = 0.5".into(),
                "network.base_channels=[8, 16]".into(),
                "network.cartesian_head=\"consistency\"".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.epochs, 7);
        assert_eq!(cfg.loss.cartesian, 0.5);
        assert_eq!(cfg.network.base_channels, [8, 16]);
        assert_eq!(cfg.network.cartesian_head, CartesianHead::Consistency);
        // The base is untouched.
        assert_eq!(base.epochs, 3);
    }

    #[test]
    fn unknown_keys_are_rejected_with_suggestions() {
        let base = TrainConfig::small(3, 16);
        let err = apply_overrides(&base, &["epoch=7".into()]).unwrap_err();
        let chain = format!("{err:#}");
        assert!(chain.contains("unknown key 'epoch'"), "{chain}");
        assert!(chain.contains("epochs"), "{chain}");
        assert!(apply_overrides(&base, &["loss.gamma=1".into()]).is_err());
    }

    #[test]
    fn malformed_and_mistyped_overrides_are_rejected() {
        let base = TrainConfig::small(3, 16);
        assert!(apply_overrides(&base, &["epochs".into()]).is_err());
        assert!(apply_overrides(&base, &["epochs=oops".into()]).is_err());
        assert!(apply_overrides(&base, &["loss=3".into()]).is_err());
    }

    #[test]
    fn config_file_round_trips_and_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.toml");
        let cfg = TrainConfig::small(3, 16);
        std::fs::write(&path, toml::to_string(&cfg).unwrap()).unwrap();
        let loaded = load_config(Some(&path), TrainConfig::default_diri()).unwrap();
        assert_eq!(loaded.epochs, cfg.epochs);
        assert_eq!(loaded.network.image_size, 16);

        std::fs::write(&path, "epochs = 2\nnot_a_key = true\n").unwrap();
        assert!(load_config(Some(&path), TrainConfig::default_diri()).is_err());
    }
}
