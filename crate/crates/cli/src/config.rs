use std::path::Path;

use anyhow::{Context, Result};
use delad_core::bench::BenchConfig;
use delad_core::model::TrainConfig;
use toml::{Table, Value};

/// Loads a TOML config on top of `base`. Keys absent from the file keep
/// their `base` value; unknown keys are rejected by name.
///
/// ```toml
/// seed = 7
/// rl_iterations = 500
///
/// [landweber]
/// iterations = 800
///
/// [delad]
/// epochs = 1500
/// hessian_weight = 1e-6
/// ```
pub fn load(path: Option<&Path>, base: BenchConfig) -> Result<BenchConfig> {
    let Some(path) = path else {
        return Ok(base);
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    parse(&text, base).with_context(|| format!("invalid config {}", path.display()))
}

pub fn parse(text: &str, base: BenchConfig) -> Result<BenchConfig> {
    let overrides: Table = text.parse()?;
    let Value::Table(mut merged) = Value::try_from(&base)? else {
        unreachable!("config serializes to a table");
    };
    merge(&mut merged, overrides);
    let mut cfg: BenchConfig = Value::Table(merged).try_into()?;
    cfg.workers = base.workers;
    Ok(cfg)
}

fn merge(into: &mut Table, from: Table) {
    for (key, value) in from {
        match (into.get_mut(&key), value) {
            (Some(Value::Table(dst)), Value::Table(src)) => merge(dst, src),
            (_, v) => {
                into.insert(key, v);
            }
        }
    }
}

/// Starting point for `deconv` and `bench` before the file and flags.
pub fn base(edof: bool) -> BenchConfig {
    BenchConfig {
        delad: if edof {
            TrainConfig::edof()
        } else {
            TrainConfig::default()
        },
        ..BenchConfig::default()
    }
}
