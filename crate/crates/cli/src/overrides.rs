use anyhow::{anyhow, bail, Context, Result};
use speclab::simd::SimConfig;
use toml::{Table, Value};

/// Parse one `section.key=value` override. The value is read as a TOML
/// value when it parses as one and as a bare string otherwise.
pub fn parse_assignment(text: &str) -> Result<(Vec<String>, Value)> {
    let (path, raw) = text
        .split_once('=')
        .ok_or_else(|| anyhow!("override {text:?} is not of the form key=value"))?;
    let keys: Vec<String> = path.trim().split('.').map(|k| k.trim().to_string()).collect();
    if keys.iter().any(String::is_empty) {
        bail!("override {text:?} has an empty key segment");
    }
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("parsed the key just written"),
        Err(_) => Value::String(raw.to_string()),
    };
    Ok((keys, value))
}

fn assign(table: &mut Table, keys: &[String], value: Value) -> Result<()> {
    let (last, parents) = keys.split_last().expect("at least one key");
    let mut cur = table;
    for k in parents {
        let slot = cur
            .entry(k.clone())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = slot
            .as_table_mut()
            .ok_or_else(|| anyhow!("override path {} crosses non-table key {k:?}", keys.join(".")))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

/// Build a config from optional file text plus overrides. Missing keys take
/// their defaults.
pub fn resolve(file_text: Option<&str>, overrides: &[String], seed: Option<u64>) -> Result<SimConfig> {
    let mut table = match file_text {
        Some(t) => t.parse::<Table>().context("config file is not valid TOML")?,
        None => Table::new(),
    };
    for o in overrides {
        let (keys, value) = parse_assignment(o)?;
        assign(&mut table, &keys, value)?;
    }
    if let Some(s) = seed {
        table.insert("seed".into(), Value::Integer(i64::try_from(s).context("seed too large")?));
    }
    let text = toml::to_string(&table)?;
    let config = SimConfig::from_toml(&text)?;
    config.validate()?;
    Ok(config)
}
