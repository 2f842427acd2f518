//! Plain `key = value` configuration files.
//!
//! Blank lines and text after `#` are ignored. Vectors are written
//! `[a, b, c]` and matrices as bracketed row lists `[[a, b], [c, d]]`.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::matcore::DenseMatrix;
use crate::synth::SimConfig;
use crate::train::TrainConfig;

/// Either kind of configuration file.
#[derive(Debug, Clone, PartialEq)]
pub enum Config {
    Train(TrainConfig),
    Sim(SimConfig),
}

/// Parses a training config if `n_components` is present, otherwise a
/// simulation config if `n_sources` is present.
pub fn parse_config(text: &str) -> Result<Config> {
    let kv = parse_pairs(text)?;
    if kv.contains_key("n_sources") && !kv.contains_key("n_components") {
        parse_sim_config(text).map(Config::Sim)
    } else {
        parse_train_config(text).map(Config::Train)
    }
}

/// Raw pairs in file order.
pub fn parse_pairs(text: &str) -> Result<IndexMap<String, String>> {
    let mut out = IndexMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::InvalidConfig(format!(
                "line {}: expected `key = value`",
                n + 1
            )));
        };
        let key = key.trim().to_string();
        if key.is_empty() {
            return Err(Error::InvalidConfig(format!("line {}: empty key", n + 1)));
        }
        if out.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(Error::InvalidConfig(format!("key `{key}` given twice")));
        }
    }
    Ok(out)
}

fn type_error(key: &str, value: &str, what: &str) -> Error {
    Error::TypeError {
        key: key.to_string(),
        message: format!("expected {what}, got `{value}`"),
    }
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse().map_err(|_| type_error(key, v, "a non-negative integer"))
}

fn parse_u64(key: &str, v: &str) -> Result<u64> {
    v.parse().map_err(|_| type_error(key, v, "a non-negative integer"))
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(type_error(key, v, "a finite number")),
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(type_error(key, v, "true or false")),
    }
}

fn strip_brackets<'a>(key: &str, v: &'a str) -> Result<&'a str> {
    v.trim()
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| type_error(key, v, "a bracketed list"))
}

fn parse_vector(key: &str, v: &str) -> Result<Vec<f64>> {
    let inner = strip_brackets(key, v)?.trim();
    if inner.is_empty() {
        return Ok(Vec::new());
    }
    inner
        .split(',')
        .map(|s| parse_f64(key, s.trim()).map_err(|_| type_error(key, v, "a list of numbers")))
        .collect()
}

fn parse_matrix(key: &str, v: &str) -> Result<DenseMatrix> {
    let inner = strip_brackets(key, v)?;
    let mut rows = Vec::new();
    let mut rest = inner.trim();
    while !rest.is_empty() {
        let end = rest
            .find(']')
            .ok_or_else(|| type_error(key, v, "a list of bracketed rows"))?;
        rows.push(parse_vector(key, &rest[..=end])?);
        rest = rest[end + 1..].trim_start();
        rest = rest.strip_prefix(',').unwrap_or(rest).trim_start();
    }
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(type_error(key, v, "a non-empty rectangular matrix"));
    }
    Ok(DenseMatrix::from_rows(&rows))
}

fn take<'a>(kv: &'a IndexMap<String, String>, used: &mut Vec<&'a str>, key: &'a str) -> Option<&'a str> {
    used.push(key);
    kv.get(key).map(String::as_str)
}

fn reject_unknown(kv: &IndexMap<String, String>, used: &[&str]) -> Result<()> {
    match kv.keys().find(|k| !used.contains(&k.as_str())) {
        Some(k) => Err(Error::UnknownKey(k.clone())),
        None => Ok(()),
    }
}

pub fn parse_train_config(text: &str) -> Result<TrainConfig> {
    let kv = parse_pairs(text)?;
    let mut used = Vec::new();
    let d = take(&kv, &mut used, "n_components")
        .ok_or_else(|| Error::MissingRequired("n_components".into()))?;
    let mut cfg = TrainConfig::new(parse_usize("n_components", d)?);

    macro_rules! field {
        ($key:literal, $parse:ident, $field:ident) => {
            if let Some(v) = take(&kv, &mut used, $key) {
                cfg.$field = $parse($key, v)?;
            }
        };
    }
    field!("hidden_units", parse_usize, hidden_units);
    field!("mlp_hidden", parse_usize, mlp_hidden);
    field!("window", parse_usize, window);
    field!("stride", parse_usize, stride);
    field!("batch_size", parse_usize, batch_size);
    field!("epochs", parse_usize, epochs);
    field!("learning_rate", parse_f64, learning_rate);
    field!("l2_w", parse_f64, l2_w);
    field!("rmsprop_decay", parse_f64, rmsprop_decay);
    field!("rmsprop_eps", parse_f64, rmsprop_eps);
    field!("sigma_floor", parse_f64, sigma_floor);
    field!("dropout_keep", parse_f64, dropout_keep);
    field!("seed", parse_u64, seed);
    field!("leaky_first_step", parse_bool, leaky_first_step);
    field!("grad_clip", parse_f64, grad_clip);
    field!("checkpoint_every", parse_usize, checkpoint_every);
    field!("early_stop", parse_bool, early_stop);
    reject_unknown(&kv, &used)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_sim_config(text: &str) -> Result<SimConfig> {
    let kv = parse_pairs(text)?;
    let mut used: Vec<&str> = Vec::new();
    let m = take(&kv, &mut used, "n_sources")
        .ok_or_else(|| Error::MissingRequired("n_sources".into()))?;
    let m = parse_usize("n_sources", m)?;
    let k = match take(&kv, &mut used, "n_states") {
        Some(v) => parse_usize("n_states", v)?,
        None => 5,
    };
    if m == 0 || k == 0 {
        return Err(Error::InvalidConfig("n_sources and n_states must be positive".into()));
    }
    let mut cfg = SimConfig::new(m, k);

    macro_rules! field {
        ($key:literal, $parse:ident, $($field:ident).+) => {
            if let Some(v) = take(&kv, &mut used, $key) {
                cfg.$($field).+ = $parse($key, v)?;
            }
        };
    }
    field!("timepoints", parse_usize, timepoints);
    field!("tr", parse_f64, tr);
    field!("subjects_a", parse_usize, subjects_a);
    field!("subjects_b", parse_usize, subjects_b);
    field!("transition_a", parse_matrix, transition_a);
    field!("transition_b", parse_matrix, transition_b);
    field!("initial", parse_vector, initial);
    field!("peak_delay", parse_f64, hrf.peak_delay);
    field!("undershoot_delay", parse_f64, hrf.undershoot_delay);
    field!("peak_disp", parse_f64, hrf.peak_disp);
    field!("undershoot_disp", parse_f64, hrf.undershoot_disp);
    field!("hrf_ratio", parse_f64, hrf.ratio);
    field!("hrf_length", parse_usize, hrf.length);
    field!("convolve_hrf", parse_bool, convolve_hrf);
    field!("noise_std", parse_f64, noise_std);
    field!("cond_bound", parse_f64, cond_bound);
    field!("identity_mixing", parse_bool, identity_mixing);
    field!("seed", parse_u64, seed);
    for (key, target) in [
        ("peak_delay_range", &mut cfg.hrf.peak_delay_range),
        ("undershoot_delay_range", &mut cfg.hrf.undershoot_delay_range),
    ] {
        if let Some(v) = take(&kv, &mut used, key) {
            match parse_vector(key, v)?.as_slice() {
                &[lo, hi] if lo <= hi => *target = (lo, hi),
                _ => return Err(type_error(key, v, "[low, high]")),
            }
        }
    }
    let cov_keys: Vec<String> = (1..=k).map(|i| format!("state_cov_{i}")).collect();
    for (i, key) in cov_keys.iter().enumerate() {
        if let Some(v) = take(&kv, &mut used, key) {
            cfg.state_covariances[i] = parse_matrix(key, v)?;
        }
    }
    reject_unknown(&kv, &used)?;
    cfg.validate()?;
    Ok(cfg)
}

fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn fmt_vector(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|&x| fmt_f64(x)).collect();
    format!("[{}]", parts.join(", "))
}

fn fmt_matrix(m: &DenseMatrix) -> String {
    let rows: Vec<String> = (0..m.rows()).map(|r| fmt_vector(m.row(r))).collect();
    format!("[{}]", rows.join(", "))
}

/// Every field as `(key, value)` text; parsing the result reproduces `cfg`.
pub fn train_config_entries(cfg: &TrainConfig) -> Vec<(String, String)> {
    let pairs: [(&str, String); 18] = [
        ("n_components", cfg.n_components.to_string()),
        ("hidden_units", cfg.hidden_units.to_string()),
        ("mlp_hidden", cfg.mlp_hidden.to_string()),
        ("window", cfg.window.to_string()),
        ("stride", cfg.stride.to_string()),
        ("batch_size", cfg.batch_size.to_string()),
        ("epochs", cfg.epochs.to_string()),
        ("learning_rate", fmt_f64(cfg.learning_rate)),
        ("l2_w", fmt_f64(cfg.l2_w)),
        ("rmsprop_decay", fmt_f64(cfg.rmsprop_decay)),
        ("rmsprop_eps", fmt_f64(cfg.rmsprop_eps)),
        ("sigma_floor", fmt_f64(cfg.sigma_floor)),
        ("dropout_keep", fmt_f64(cfg.dropout_keep)),
        ("seed", cfg.seed.to_string()),
        ("leaky_first_step", cfg.leaky_first_step.to_string()),
        ("grad_clip", fmt_f64(cfg.grad_clip)),
        ("checkpoint_every", cfg.checkpoint_every.to_string()),
        ("early_stop", cfg.early_stop.to_string()),
    ];
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

pub fn sim_config_entries(cfg: &SimConfig) -> Vec<(String, String)> {
    let h = &cfg.hrf;
    let mut out: Vec<(String, String)> = [
        ("n_sources", cfg.n_sources.to_string()),
        ("n_states", cfg.n_states.to_string()),
        ("timepoints", cfg.timepoints.to_string()),
        ("tr", fmt_f64(cfg.tr)),
        ("subjects_a", cfg.subjects_a.to_string()),
        ("subjects_b", cfg.subjects_b.to_string()),
        ("transition_a", fmt_matrix(&cfg.transition_a)),
        ("transition_b", fmt_matrix(&cfg.transition_b)),
        ("initial", fmt_vector(&cfg.initial)),
        ("peak_delay", fmt_f64(h.peak_delay)),
        ("undershoot_delay", fmt_f64(h.undershoot_delay)),
        ("peak_disp", fmt_f64(h.peak_disp)),
        ("undershoot_disp", fmt_f64(h.undershoot_disp)),
        ("hrf_ratio", fmt_f64(h.ratio)),
        ("hrf_length", h.length.to_string()),
        ("peak_delay_range", fmt_vector(&[h.peak_delay_range.0, h.peak_delay_range.1])),
        (
            "undershoot_delay_range",
            fmt_vector(&[h.undershoot_delay_range.0, h.undershoot_delay_range.1]),
        ),
        ("convolve_hrf", cfg.convolve_hrf.to_string()),
        ("noise_std", fmt_f64(cfg.noise_std)),
        ("cond_bound", fmt_f64(cfg.cond_bound)),
        ("identity_mixing", cfg.identity_mixing.to_string()),
        ("seed", cfg.seed.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    for (i, c) in cfg.state_covariances.iter().enumerate() {
        out.push((format!("state_cov_{}", i + 1), fmt_matrix(c)));
    }
    out
}

/// Renders pairs as a config file.
pub fn format_config(entries: &[(String, String)]) -> String {
    entries
        .iter()
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect()
}

/// Rebuilds config text from `config.*` metadata entries.
pub(crate) fn config_from_meta<'a>(meta: impl Iterator<Item = (&'a String, &'a String)>) -> String {
    meta.filter_map(|(k, v)| k.strip_prefix("config.").map(|k| format!("{k} = {v}\n")))
        .collect()
}
