//! Key-value configuration: built-in defaults, then a config file, then
//! command-line flags, each layer overriding the previous one.
//!
//! The file format is one `key = value` per line; blank lines and text after
//! `#` are ignored. Keys are the long flag names (`select-frac`), and
//! `select_frac` is accepted as a spelling of the same key.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ringfed_core::{
    Algorithm, ExchangeSemantics, ModelKind, OptimizerConfig, PartitionScheme, ReportFormat,
    RingOrder, RunConfig,
};

use crate::error::{CliError, CliResult};

pub struct KeySpec {
    pub key: &'static str,
    /// Built-in default; `None` means unset unless provided.
    pub default: Option<&'static str>,
    pub help: &'static str,
    /// Boolean switch: a bare flag means `true`.
    pub switch: bool,
}

const fn key(key: &'static str, default: Option<&'static str>, help: &'static str) -> KeySpec {
    KeySpec { key, default, help, switch: false }
}

const fn switch(key: &'static str, help: &'static str) -> KeySpec {
    KeySpec { key, default: Some("false"), help, switch: true }
}

pub const KEYS: &[KeySpec] = &[
    key("algorithm", Some("ringfed"), "fedavg | ringfed | fedprox | scaffold"),
    key("dataset", Some("mnist"), "mnist | fmnist | custom; selects the default accuracy target"),
    key("dataset-images", None, "training images (IDX, optionally .gz)"),
    key("dataset-labels", None, "training labels (IDX, optionally .gz)"),
    key("test-images", None, "test images (IDX, optionally .gz)"),
    key("test-labels", None, "test labels (IDX, optionally .gz)"),
    key("train-limit", None, "use only the first N training examples"),
    key("test-limit", None, "use only the first N test examples"),
    key("model", Some("mlp"), "logistic | mlp"),
    key("hidden-dim", Some("64"), "hidden units of the MLP"),
    key("clients", Some("100"), "total number of clients"),
    key("select-frac", Some("0.3"), "fraction of clients selected per round, in (0, 1]"),
    key("rounds", Some("100"), "communication rounds"),
    key("epochs", Some("5"), "local epochs per period"),
    key("periods", Some("6"), "RingFed periods per round (P-1 exchanges)"),
    key("gamma", Some("0.8"), "RingFed exchange factor, in [0, 1]"),
    key("exchange-semantics", Some("snapshot"), "snapshot | sequential"),
    switch("final-exchange", "also exchange after the last period of a round"),
    key("ring-order", Some("ascending"), "ascending | shuffled"),
    key("partition", Some("pathological"), "iid | pathological | dirichlet"),
    key("alpha", Some("0.5"), "Dirichlet concentration"),
    key("shards-per-client", Some("2"), "label-sorted shards per client"),
    key("lr", Some("0.005"), "local learning rate"),
    key("momentum", Some("0.9"), "SGD momentum; 1.0 means no momentum"),
    key("lr-decay", Some("1.0"), "learning-rate decay per round, in (0, 1]"),
    key("batch-size", Some("10"), "local mini-batch size"),
    key("prox-mu", Some("0.01"), "FedProx proximal coefficient"),
    key("server-lr", Some("1.0"), "SCAFFOLD global step size"),
    switch("weighted-average", "weight the server average by client data size"),
    key("seed", Some("0"), "master seed"),
    key("target-accuracy", None, "accuracy target for rounds-to-target"),
    key("tail-window", Some("50"), "rounds in the tail statistics window"),
    key("out", None, "report path (stdout if unset)"),
    key("format", Some("csv"), "csv | json"),
];

pub fn spec(key: &str) -> Option<&'static KeySpec> {
    KEYS.iter().find(|k| k.key == key)
}

fn canonical(raw: &str) -> CliResult<&'static str> {
    let norm = raw.trim().to_ascii_lowercase().replace('_', "-");
    spec(&norm)
        .map(|k| k.key)
        .ok_or_else(|| CliError::Usage(format!("unknown configuration key '{}'", raw.trim())))
}

/// Explicitly provided values; unset keys fall back to their defaults.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Settings {
    values: BTreeMap<&'static str, String>,
}

impl Settings {
    pub fn parse(text: &str, origin: &str) -> CliResult<Settings> {
        let mut s = Settings::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("{origin}:{}: expected 'key = value'", n + 1))
            })?;
            s.set(k, v.trim())
                .map_err(|e| CliError::Usage(format!("{origin}:{}: {e}", n + 1)))?;
        }
        Ok(s)
    }

    pub fn from_file(path: &Path) -> CliResult<Settings> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Usage(format!("cannot read config file {}: {e}", path.display()))
        })?;
        Settings::parse(&text, &path.display().to_string())
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> CliResult<()> {
        self.values.insert(canonical(key)?, value.into());
        Ok(())
    }

    /// Layers `other` on top of `self`.
    pub fn merge(&mut self, other: &Settings) {
        for (k, v) in &other.values {
            self.values.insert(k, v.clone());
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values
            .get(key)
            .map(String::as_str)
            .or_else(|| spec(key).and_then(|k| k.default))
    }

    fn require(&self, key: &str) -> CliResult<&str> {
        self.get(key)
            .filter(|v| !v.is_empty())
            .ok_or_else(|| CliError::Usage(format!("missing required setting '{key}'")))
    }

    fn typed<T: FromStr>(&self, key: &str) -> CliResult<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|e| CliError::Usage(format!("invalid value '{raw}' for '{key}': {e}")))
    }

    fn optional<T: FromStr>(&self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None | Some("") => Ok(None),
            Some(_) => self.typed(key).map(Some),
        }
    }

    fn flag(&self, key: &str) -> CliResult<bool> {
        match self.require(key)?.to_ascii_lowercase().as_str() {
            "true" | "yes" | "1" | "on" => Ok(true),
            "false" | "no" | "0" | "off" => Ok(false),
            other => Err(CliError::Usage(format!("invalid value '{other}' for '{key}': expected true or false"))),
        }
    }

    /// Every key with its effective value, in declaration order.
    pub fn effective(&self) -> Vec<(&'static str, String)> {
        KEYS.iter()
            .map(|k| (k.key, self.get(k.key).unwrap_or("").to_string()))
            .collect()
    }

    /// The effective settings in config-file syntax.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.effective() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn resolve(&self) -> CliResult<Resolved> {
        resolve(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataPaths {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

/// Fully validated settings.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub run: RunConfig,
    pub data: DataPaths,
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    pub target_accuracy: f64,
    pub tail_window: usize,
    pub out: Option<PathBuf>,
    pub format: ReportFormat,
    pub settings: Settings,
}

impl Resolved {
    /// Provenance block for JSON reports.
    pub fn config_json(&self) -> serde_json::Value {
        let settings: serde_json::Map<String, serde_json::Value> = self
            .settings
            .effective()
            .into_iter()
            .map(|(k, v)| (k.to_string(), serde_json::Value::String(v)))
            .collect();
        serde_json::json!({
            "settings": settings,
            "run": self.run,
        })
    }
}

fn check(key: &str, ok: bool, what: &str, value: impl std::fmt::Display) -> CliResult<()> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Usage(format!("'{key}' {what}, got {value}")))
    }
}

fn choice<T>(s: &Settings, key: &str, options: &[(&str, T)]) -> CliResult<T>
where
    T: Copy,
{
    let raw = s.require(key)?.to_ascii_lowercase();
    options
        .iter()
        .find(|(name, _)| *name == raw)
        .map(|(_, v)| *v)
        .ok_or_else(|| {
            let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
            CliError::Usage(format!(
                "invalid value '{raw}' for '{key}': expected one of {}",
                names.join(", ")
            ))
        })
}

fn resolve(s: &Settings) -> CliResult<Resolved> {
    let algorithm: Algorithm = s
        .require("algorithm")?
        .parse()
        .map_err(|e: ringfed_core::Error| CliError::Usage(format!("'algorithm': {e}")))?;

    let hidden_dim: usize = s.typed("hidden-dim")?;
    check("hidden-dim", hidden_dim >= 1, "must be at least 1", hidden_dim)?;
    let model = match choice(s, "model", &[("logistic", 0), ("mlp", 1)])? {
        0 => ModelKind::Logistic,
        _ => ModelKind::Mlp { hidden_dim },
    };

    let total_clients: usize = s.typed("clients")?;
    check("clients", total_clients >= 1, "must be at least 1", total_clients)?;
    let select_frac: f64 = s.typed("select-frac")?;
    check("select-frac", select_frac > 0.0 && select_frac <= 1.0, "must lie in (0, 1]", select_frac)?;
    let k = (total_clients as f64 * select_frac).round();
    check("select-frac", k >= 1.0, "selects no client after rounding", select_frac)?;
    let rounds: usize = s.typed("rounds")?;
    let epochs: usize = s.typed("epochs")?;
    check("epochs", epochs >= 1, "must be at least 1", epochs)?;
    let periods: usize = s.typed("periods")?;
    check("periods", periods >= 1, "must be at least 1", periods)?;
    let gamma: f64 = s.typed("gamma")?;
    check("gamma", (0.0..=1.0).contains(&gamma), "must lie in [0, 1]", gamma)?;

    let lr: f64 = s.typed("lr")?;
    check("lr", lr.is_finite() && lr >= 0.0, "must be >= 0", lr)?;
    let momentum: f64 = s.typed("momentum")?;
    check("momentum", (0.0..=1.0).contains(&momentum), "must lie in [0, 1]", momentum)?;
    let lr_decay: f64 = s.typed("lr-decay")?;
    check("lr-decay", lr_decay > 0.0 && lr_decay <= 1.0, "must lie in (0, 1]", lr_decay)?;
    // A momentum of 1.0 denotes plain SGD, not an undamped velocity.
    let beta = if momentum == 1.0 { 0.0 } else { momentum };
    let optimizer = OptimizerConfig {
        lr,
        momentum: beta,
        lr_decay,
    };
    let batch_size: usize = s.typed("batch-size")?;
    check("batch-size", batch_size >= 1, "must be at least 1", batch_size)?;

    let partition = match choice(s, "partition", &[("iid", 0), ("pathological", 1), ("dirichlet", 2)])? {
        0 => PartitionScheme::Iid,
        1 => {
            let shards_per_client: usize = s.typed("shards-per-client")?;
            check("shards-per-client", shards_per_client >= 1, "must be at least 1", shards_per_client)?;
            PartitionScheme::Pathological { shards_per_client }
        }
        _ => {
            let alpha: f64 = s.typed("alpha")?;
            check("alpha", alpha > 0.0 && alpha.is_finite(), "must be positive", alpha)?;
            PartitionScheme::Dirichlet { alpha }
        }
    };

    let prox_mu: f64 = s.typed("prox-mu")?;
    check("prox-mu", prox_mu >= 0.0 && prox_mu.is_finite(), "must be >= 0", prox_mu)?;
    let server_lr: f64 = s.typed("server-lr")?;
    check("server-lr", server_lr > 0.0 && server_lr.is_finite(), "must be positive", server_lr)?;

    let run = RunConfig {
        algorithm,
        model,
        total_clients,
        select_frac,
        rounds,
        epochs,
        periods,
        gamma,
        batch_size,
        optimizer,
        partition,
        seed: s.typed("seed")?,
        exchange_semantics: choice(
            s,
            "exchange-semantics",
            &[("snapshot", ExchangeSemantics::Snapshot), ("sequential", ExchangeSemantics::Sequential)],
        )?,
        exchange_after_final_period: s.flag("final-exchange")?,
        ring_order: choice(
            s,
            "ring-order",
            &[("ascending", RingOrder::Ascending), ("shuffled", RingOrder::Shuffled)],
        )?,
        weighted_average: s.flag("weighted-average")?,
        prox_mu,
        server_lr,
    };
    run.validate()?;

    let default_target = choice(s, "dataset", &[("mnist", Some(0.90)), ("fmnist", Some(0.75)), ("custom", None)])?;
    let target_accuracy = match s.optional::<f64>("target-accuracy")? {
        Some(t) => t,
        None => default_target.ok_or_else(|| {
            CliError::Usage("missing required setting 'target-accuracy' for a custom dataset".into())
        })?,
    };
    check("target-accuracy", target_accuracy > 0.0 && target_accuracy < 1.0, "must lie in (0, 1)", target_accuracy)?;
    let tail_window: usize = s.typed("tail-window")?;
    check("tail-window", tail_window >= 1, "must be at least 1", tail_window)?;

    let path = |key| s.require(key).map(PathBuf::from);
    let data = DataPaths {
        train_images: path("dataset-images")?,
        train_labels: path("dataset-labels")?,
        test_images: path("test-images")?,
        test_labels: path("test-labels")?,
    };
    let format: ReportFormat = s
        .require("format")?
        .parse()
        .map_err(|e: ringfed_core::Error| CliError::Usage(format!("'format': {e}")))?;

    Ok(Resolved {
        run,
        data,
        train_limit: s.optional("train-limit")?,
        test_limit: s.optional("test-limit")?,
        target_accuracy,
        tail_window,
        out: s.optional::<String>("out")?.map(PathBuf::from),
        format,
        settings: s.clone(),
    })
}
