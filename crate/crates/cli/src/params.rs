//! Layered `key = value` parameters: defaults < config file < environment
//! (`TERRASEG_<KEY>`) < command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use terraseg::train::TrainConfig;

use crate::fail::Failure;

pub const ENV_PREFIX: &str = "TERRASEG_";

/// A parameter a subcommand accepts. `default: None` means optional with no value.
#[derive(Debug, Clone, Copy)]
pub struct Key {
    pub name: &'static str,
    pub default: Option<&'static str>,
    pub help: &'static str,
}

pub const fn key(name: &'static str, default: &'static str, help: &'static str) -> Key {
    Key {
        name,
        default: Some(default),
        help,
    }
}

pub const fn optional(name: &'static str, help: &'static str) -> Key {
    Key {
        name,
        default: None,
        help,
    }
}

pub fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

pub fn env_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.to_ascii_uppercase())
}

#[derive(Debug, Clone, Default)]
pub struct Params {
    pub command: String,
    values: BTreeMap<String, String>,
    /// Training keys the command takes, in file order.
    train: &'static [&'static str],
}

fn parse_lines(text: &str, source: &Path) -> Result<Vec<(String, String)>, Failure> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Failure::config(format!("{}:{}: expected `key = value`", source.display(), n + 1))
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl Params {
    /// Merges the layers for `command`. `train` lists the [`TrainConfig`]
    /// keys it accepts; `flags` holds explicitly given flags.
    pub fn resolve(
        command: &str,
        keys: &[Key],
        train: &'static [&'static str],
        config: Option<&Path>,
        flags: &[(String, String)],
    ) -> Result<Self, Failure> {
        let known = |k: &str| keys.iter().any(|d| d.name == k) || train.contains(&k);
        let mut values = BTreeMap::new();
        for k in keys {
            if let Some(d) = k.default {
                values.insert(k.name.to_string(), d.to_string());
            }
        }
        let defaults = TrainConfig::default();
        for k in train {
            values.insert(k.to_string(), defaults.get(k).unwrap());
        }
        if let Some(path) = config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::io(format!("cannot read config {}: {e}", path.display())))?;
            for (k, v) in parse_lines(&text, path)? {
                if k == "command" {
                    if v != command {
                        return Err(Failure::config(format!(
                            "config {} was written for `{v}`, not `{command}`",
                            path.display()
                        )));
                    }
                    continue;
                }
                if !known(&k) {
                    return Err(Failure::config(format!("config {}: unknown key {k:?}", path.display())));
                }
                values.insert(k, v);
            }
        }
        for name in keys.iter().map(|k| k.name).chain(train.iter().copied()) {
            if let Ok(v) = std::env::var(env_name(name)) {
                values.insert(name.to_string(), v);
            }
        }
        for (k, v) in flags {
            values.insert(k.clone(), v.clone());
        }
        Ok(Self {
            command: command.to_string(),
            values,
            train,
        })
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str).filter(|v| !v.is_empty())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, Failure> {
        let v = self
            .raw(key)
            .ok_or_else(|| Failure::usage(format!("missing required --{}", flag_name(key))))?;
        v.parse()
            .map_err(|_| Failure::config(format!("--{}: cannot parse {v:?}", flag_name(key))))
    }

    pub fn path(&self, key: &str) -> Result<PathBuf, Failure> {
        self.get::<String>(key).map(PathBuf::from)
    }

    pub fn opt_path(&self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(PathBuf::from)
    }

    pub fn train_config(&self) -> Result<TrainConfig, Failure> {
        let mut cfg = TrainConfig::default();
        for k in self.train {
            if let Some(v) = self.values.get(*k) {
                cfg.set(k, v).map_err(|e| Failure::config(e.to_string()))?;
            }
        }
        cfg.validate().map_err(|e| Failure::config(e.to_string()))?;
        Ok(cfg)
    }

    /// The effective configuration, loadable with `--config`.
    pub fn to_text(&self) -> String {
        let mut out = format!("command = {}\n", self.command);
        for (k, v) in &self.values {
            if k == "out" || self.train.contains(&k.as_str()) {
                continue;
            }
            out.push_str(&format!("{k} = {v}\n"));
        }
        for k in self.train {
            out.push_str(&format!("{k} = {}\n", self.values[*k]));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use terraseg::train::CONFIG_KEYS;

    const KEYS: &[Key] = &[key("n", "200", ""), optional("data", "")];

    #[test]
    fn layering_order() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.txt");
        std::fs::write(&cfg, "n = 5\nseed = 3\n").unwrap();
        let p = Params::resolve("synth", KEYS, CONFIG_KEYS, Some(&cfg), &[("seed".into(), "9".into())]).unwrap();
        assert_eq!(p.get::<usize>("n").unwrap(), 5);
        assert_eq!(p.train_config().unwrap().seed, 9);
        assert!(p.raw("data").is_none());
        let text = p.to_text();
        assert!(text.starts_with("command = synth\n"));
        std::fs::write(&cfg, &text).unwrap();
        let q = Params::resolve("synth", KEYS, CONFIG_KEYS, Some(&cfg), &[]).unwrap();
        assert_eq!(q.to_text(), text);
    }

    #[test]
    fn config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.txt");
        std::fs::write(&cfg, "bogus = 1\n").unwrap();
        assert!(Params::resolve("synth", KEYS, &[], Some(&cfg), &[]).is_err());
        std::fs::write(&cfg, "command = eval\n").unwrap();
        assert!(Params::resolve("synth", KEYS, &[], Some(&cfg), &[]).is_err());
    }
}
