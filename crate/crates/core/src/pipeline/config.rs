//! Run configuration: a TOML file plus command-line overrides.
//!
//! Validation walks the whole document and reports every problem at once
//! rather than stopping at the first.

use std::path::{Path, PathBuf};

use serde::Serialize;
use toml::{Table, Value};

use crate::claimspace::{
    AnnealSettings, LambdaGrid, ManualExclusions, Metric, OutlierRule, SearchParams,
};
use crate::corpus::{AliasTable, CorpusFormat, ExclusionList};
use crate::embedding::RemoteConfig;
use crate::similarity::Measure;
use crate::{Error, Result};

pub const DEFAULT_TOKEN_ENV: &str = "COASIM_EMBED_TOKEN";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusSource {
    pub path: PathBuf,
    pub format: CorpusFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "provider", rename_all = "lowercase")]
pub enum ProviderChoice {
    Offline,
    Remote(RemoteConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingConfig {
    pub provider: ProviderChoice,
    pub cache_dir: PathBuf,
}

/// Where the graph stage cuts the ensemble list.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Cutoff {
    /// Use the μ + 2σ threshold from the threshold stage.
    Threshold,
    /// Keep pairs with ensemble rank at most this value.
    Rank(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphConfig {
    pub cutoff: Cutoff,
    pub min_clique: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub workspace: PathBuf,
    pub corpus: CorpusSource,
    pub m: usize,
    pub n: usize,
    pub seed: u64,
    pub exclusions: ExclusionList,
    pub aliases: AliasTable,
    pub measures: Vec<Measure>,
    pub embedding: EmbeddingConfig,
    pub search: SearchParams,
    pub outlier_rule: OutlierRule,
    pub graph: GraphConfig,
}

/// Command-line values that replace config keys. Kept as raw strings so
/// their parse errors are reported together with the file's.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub epsilon_bounds: Option<String>,
    pub lambda_grid: Option<String>,
    pub min_pts: Option<String>,
    pub sa_budget: Option<String>,
    pub seed: Option<String>,
    pub outlier_rule: Option<String>,
}

/// Reads `key`s out of one TOML table, collecting type errors and
/// flagging unknown keys.
struct Section<'a> {
    name: &'a str,
    table: Option<&'a Table>,
    used: Vec<&'static str>,
    errors: &'a mut Vec<String>,
}

impl<'a> Section<'a> {
    fn new(root: &'a Table, name: &'a str, errors: &'a mut Vec<String>) -> Self {
        let table = match root.get(name) {
            None => None,
            Some(Value::Table(t)) => Some(t),
            Some(_) => {
                errors.push(format!("[{name}] must be a table"));
                None
            }
        };
        Self {
            name,
            table,
            used: Vec::new(),
            errors,
        }
    }

    fn root(root: &'a Table, errors: &'a mut Vec<String>) -> Self {
        Self {
            name: "",
            table: Some(root),
            used: Vec::new(),
            errors,
        }
    }

    fn path(&self, key: &str) -> String {
        if self.name.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.name)
        }
    }

    fn raw(&mut self, key: &'static str) -> Option<&'a Value> {
        self.used.push(key);
        self.table.and_then(|t| t.get(key))
    }

    fn string(&mut self, key: &'static str) -> Option<String> {
        match self.raw(key)? {
            Value::String(s) => Some(s.clone()),
            _ => {
                let p = self.path(key);
                self.errors.push(format!("{p} must be a string"));
                None
            }
        }
    }

    fn integer(&mut self, key: &'static str) -> Option<i64> {
        match self.raw(key)? {
            Value::Integer(i) => Some(*i),
            _ => {
                let p = self.path(key);
                self.errors.push(format!("{p} must be an integer"));
                None
            }
        }
    }

    fn float(&mut self, key: &'static str) -> Option<f64> {
        match self.raw(key)? {
            Value::Float(f) => Some(*f),
            Value::Integer(i) => Some(*i as f64),
            _ => {
                let p = self.path(key);
                self.errors.push(format!("{p} must be a number"));
                None
            }
        }
    }

    fn strings(&mut self, key: &'static str) -> Option<Vec<String>> {
        let p = self.path(key);
        match self.raw(key)? {
            Value::Array(items) => {
                let mut out = Vec::new();
                for v in items {
                    match v {
                        Value::String(s) => out.push(s.clone()),
                        _ => {
                            self.errors.push(format!("{p} must be a list of strings"));
                            return None;
                        }
                    }
                }
                Some(out)
            }
            _ => {
                self.errors.push(format!("{p} must be a list of strings"));
                None
            }
        }
    }

    fn finish(self) {
        if let Some(t) = self.table {
            for key in t.keys() {
                let known = self.used.iter().any(|k| k == key)
                    || (self.name.is_empty() && SECTIONS.contains(&key.as_str()));
                if !known {
                    let p = if self.name.is_empty() {
                        key.clone()
                    } else {
                        format!("{}.{key}", self.name)
                    };
                    self.errors.push(format!("unknown key `{p}`"));
                }
            }
        }
    }
}

const SECTIONS: [&str; 9] = [
    "corpus",
    "sample",
    "exclusions",
    "aliases",
    "similarity",
    "embedding",
    "optimize",
    "threshold",
    "graph",
];

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn positive(
    errors: &mut Vec<String>,
    key: &str,
    v: Option<i64>,
    default: usize,
    min: i64,
) -> usize {
    match v {
        None => default,
        Some(v) if v >= min => v as usize,
        Some(v) => {
            errors.push(format!("{key} must be at least {min}, got {v}"));
            default
        }
    }
}

fn parse_bounds(s: &str) -> std::result::Result<(f64, f64), String> {
    let (lo, hi) = s
        .split_once(':')
        .ok_or_else(|| format!("epsilon bounds must be lo:hi, got `{s}`"))?;
    let lo: f64 = lo
        .trim()
        .parse()
        .map_err(|_| format!("bad epsilon lower bound `{lo}`"))?;
    let hi: f64 = hi
        .trim()
        .parse()
        .map_err(|_| format!("bad epsilon upper bound `{hi}`"))?;
    Ok((lo, hi))
}

impl PipelineConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base, overrides)
    }

    /// Parses and validates config text; relative paths resolve against
    /// `base`.
    pub fn parse(text: &str, base: &Path, overrides: &Overrides) -> Result<Self> {
        let root: Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(vec![e.message().to_string()]))?;
        let mut errors = Vec::new();

        let mut top = Section::root(&root, &mut errors);
        let workspace = top.string("workspace");
        top.finish();
        let workspace = match workspace {
            Some(w) => resolve(base, &w),
            None => {
                errors.push("workspace is required".into());
                PathBuf::new()
            }
        };

        let mut s = Section::new(&root, "corpus", &mut errors);
        let corpus_path = s.string("path");
        let format = s.string("format");
        s.finish();
        let corpus_path = match corpus_path {
            Some(p) => resolve(base, &p),
            None => {
                errors.push("corpus.path is required".into());
                PathBuf::new()
            }
        };
        let format = match format.as_deref() {
            None => match corpus_path.extension().and_then(|e| e.to_str()) {
                Some("csv") => CorpusFormat::Csv,
                _ => CorpusFormat::Jsonl,
            },
            Some(f) => f.parse().unwrap_or_else(|e: Error| {
                errors.push(format!("corpus.format: {e}"));
                CorpusFormat::Jsonl
            }),
        };

        let mut s = Section::new(&root, "sample", &mut errors);
        let m = s.integer("m");
        let n = s.integer("n");
        let seed = s.integer("seed");
        s.finish();
        let m = positive(&mut errors, "sample.m", m, 179, 2);
        let n = positive(&mut errors, "sample.n", n, 200, 1);
        let seed_str = overrides.seed.clone().or(seed.map(|s| s.to_string()));
        let seed = match seed_str {
            None => 0,
            Some(s) => s.parse::<u64>().unwrap_or_else(|_| {
                errors.push(format!("seed must be a non-negative integer, got `{s}`"));
                0
            }),
        };

        let mut s = Section::new(&root, "exclusions", &mut errors);
        let acts = s.strings("acts");
        s.finish();
        let exclusions = acts.map(ExclusionList::new).unwrap_or_default();

        let aliases = match root.get("aliases") {
            None => AliasTable::default(),
            Some(Value::Table(t)) => {
                let mut map = std::collections::BTreeMap::new();
                for (k, v) in t {
                    match v {
                        Value::String(s) => {
                            map.insert(k.clone(), s.clone());
                        }
                        _ => errors.push(format!("aliases.{k} must be a string")),
                    }
                }
                AliasTable(map)
            }
            Some(_) => {
                errors.push("[aliases] must be a table".into());
                AliasTable::default()
            }
        };

        let mut s = Section::new(&root, "similarity", &mut errors);
        let measures = s.strings("measures");
        s.finish();
        let measures = match measures {
            None => Measure::ALL.to_vec(),
            Some(list) => {
                let mut out = Vec::new();
                for m in &list {
                    match m.parse::<Measure>() {
                        Ok(m) if !out.contains(&m) => out.push(m),
                        Ok(_) => errors.push(format!("similarity.measures lists `{m}` twice")),
                        Err(e) => errors.push(format!("similarity.measures: {e}")),
                    }
                }
                if !out.contains(&Measure::IndividualDice) && !list.is_empty() {
                    errors.push(
                        "similarity.measures must include individual_dice (the utility uses it)"
                            .into(),
                    );
                }
                if list.is_empty() {
                    errors.push("similarity.measures is empty".into());
                }
                out.sort();
                out
            }
        };

        let embedding = Self::embedding_section(&root, base, &workspace, &mut errors);
        let search = Self::search_section(&root, overrides, &mut errors);

        let mut s = Section::new(&root, "threshold", &mut errors);
        let rule = s.string("outlier_rule");
        s.finish();
        let rule = overrides.outlier_rule.clone().or(rule);
        let outlier_rule = match rule.as_deref() {
            None | Some("tukey") => OutlierRule::Tukey,
            Some("none") => OutlierRule::None,
            Some(other) => match other.strip_prefix("manual:") {
                Some(p) if !p.is_empty() => match ManualExclusions::load(&resolve(base, p)) {
                    Ok(m) => OutlierRule::Manual(m),
                    Err(e) => {
                        errors.push(format!("threshold.outlier_rule: {e}"));
                        OutlierRule::Tukey
                    }
                },
                _ => {
                    errors.push(format!(
                        "threshold.outlier_rule must be tukey, none or manual:<file>, got `{other}`"
                    ));
                    OutlierRule::Tukey
                }
            },
        };

        let mut s = Section::new(&root, "graph", &mut errors);
        let cutoff = s.raw("cutoff").cloned();
        let min_clique = s.integer("min_clique");
        s.finish();
        let cutoff = match cutoff {
            None => Cutoff::Threshold,
            Some(Value::String(s)) if s == "threshold" => Cutoff::Threshold,
            Some(Value::Integer(i)) if i >= 1 => Cutoff::Rank(i as f64),
            Some(Value::Float(f)) if f >= 1.0 => Cutoff::Rank(f),
            Some(other) => {
                errors.push(format!(
                    "graph.cutoff must be \"threshold\" or a rank ≥ 1, got {other}"
                ));
                Cutoff::Threshold
            }
        };
        let min_clique = positive(&mut errors, "graph.min_clique", min_clique, 3, 2);

        if !errors.is_empty() {
            return Err(Error::Config(errors));
        }
        Ok(Self {
            workspace,
            corpus: CorpusSource {
                path: corpus_path,
                format,
            },
            m,
            n,
            seed,
            exclusions,
            aliases,
            measures,
            embedding,
            search,
            outlier_rule,
            graph: GraphConfig { cutoff, min_clique },
        })
    }

    fn embedding_section(
        root: &Table,
        base: &Path,
        workspace: &Path,
        errors: &mut Vec<String>,
    ) -> EmbeddingConfig {
        let mut s = Section::new(root, "embedding", errors);
        let provider = s.string("provider");
        let cache_dir = s.string("cache_dir");
        let url = s.string("url");
        let model = s.string("model");
        let token_env = s.string("token_env");
        let batch = s.integer("batch_size");
        let concurrency = s.integer("concurrency");
        let max_chars = s.integer("max_chars");
        let attempts = s.integer("attempts");
        let backoff = s.integer("backoff_ms");
        let timeout = s.integer("timeout_s");
        s.finish();
        let cache_dir = cache_dir
            .map(|c| resolve(base, &c))
            .unwrap_or_else(|| workspace.join("cache"));
        let provider = match provider.as_deref() {
            None | Some("offline") => ProviderChoice::Offline,
            Some("remote") => {
                let env = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
                let url = url.or_else(|| env("COASIM_EMBED_URL"));
                let model = model.or_else(|| env("COASIM_EMBED_MODEL"));
                if url.is_none() {
                    errors.push(
                        "embedding.url (or COASIM_EMBED_URL) is required for the remote provider"
                            .into(),
                    );
                }
                if model.is_none() {
                    errors.push("embedding.model (or COASIM_EMBED_MODEL) is required for the remote provider".into());
                }
                let mut rc = RemoteConfig::new(url.unwrap_or_default(), model.unwrap_or_default());
                rc.token = env(token_env.as_deref().unwrap_or(DEFAULT_TOKEN_ENV));
                rc.batch_size = positive(errors, "embedding.batch_size", batch, rc.batch_size, 1);
                if rc.batch_size > RemoteConfig::MAX_BATCH {
                    errors.push(format!(
                        "embedding.batch_size must be at most {}",
                        RemoteConfig::MAX_BATCH
                    ));
                }
                rc.concurrency = positive(
                    errors,
                    "embedding.concurrency",
                    concurrency,
                    rc.concurrency,
                    1,
                );
                rc.max_chars = positive(errors, "embedding.max_chars", max_chars, rc.max_chars, 1);
                rc.attempts = positive(
                    errors,
                    "embedding.attempts",
                    attempts,
                    rc.attempts as usize,
                    1,
                ) as u32;
                rc.backoff_ms = positive(
                    errors,
                    "embedding.backoff_ms",
                    backoff,
                    rc.backoff_ms as usize,
                    0,
                ) as u64;
                rc.timeout_s = positive(
                    errors,
                    "embedding.timeout_s",
                    timeout,
                    rc.timeout_s as usize,
                    1,
                ) as u64;
                ProviderChoice::Remote(rc)
            }
            Some(other) => {
                errors.push(format!(
                    "embedding.provider must be offline or remote, got `{other}`"
                ));
                ProviderChoice::Offline
            }
        };
        EmbeddingConfig {
            provider,
            cache_dir,
        }
    }

    fn search_section(root: &Table, ov: &Overrides, errors: &mut Vec<String>) -> SearchParams {
        let mut s = Section::new(root, "optimize", errors);
        let bounds_raw = s.raw("epsilon_bounds").cloned();
        let grid = s.string("lambda_grid");
        let min_pts = s.integer("min_pts");
        let metric = s.string("metric");
        let budget = s.integer("sa_budget");
        let cooling = s.float("cooling");
        let t0 = s.float("initial_temp_fraction");
        let step = s.float("step_fraction");
        s.finish();

        let defaults = SearchParams::default();
        let bounds = match (&ov.epsilon_bounds, bounds_raw) {
            (Some(s), _) => parse_bounds(s),
            (None, None) => Ok(defaults.epsilon_bounds),
            (None, Some(Value::String(s))) => parse_bounds(&s),
            (None, Some(Value::Array(a))) if a.len() == 2 => {
                match (
                    a[0].as_float().or(a[0].as_integer().map(|i| i as f64)),
                    a[1].as_float().or(a[1].as_integer().map(|i| i as f64)),
                ) {
                    (Some(lo), Some(hi)) => Ok((lo, hi)),
                    _ => Err("optimize.epsilon_bounds must hold two numbers".to_string()),
                }
            }
            (None, Some(_)) => {
                Err("optimize.epsilon_bounds must be \"lo:hi\" or [lo, hi]".to_string())
            }
        };
        let epsilon_bounds = match bounds {
            Ok((lo, hi)) if lo > 0.0 && lo <= hi && hi.is_finite() => (lo, hi),
            Ok((lo, hi)) => {
                errors.push(format!(
                    "epsilon bounds must satisfy 0 < lo <= hi, got {lo}:{hi}"
                ));
                defaults.epsilon_bounds
            }
            Err(e) => {
                errors.push(e);
                defaults.epsilon_bounds
            }
        };
        let lambda_grid = match ov.lambda_grid.clone().or(grid) {
            None => LambdaGrid::default(),
            Some(g) => g.parse().unwrap_or_else(|e: Error| {
                errors.push(format!("lambda grid: {e}"));
                LambdaGrid::default()
            }),
        };
        let int_override =
            |raw: &Option<String>, key: &str, errors: &mut Vec<String>| -> Option<Option<i64>> {
                raw.as_ref().map(|s| match s.parse::<i64>() {
                    Ok(v) => Some(v),
                    Err(_) => {
                        errors.push(format!("{key} must be an integer, got `{s}`"));
                        None
                    }
                })
            };
        let min_pts = int_override(&ov.min_pts, "--min-pts", errors).unwrap_or(min_pts);
        let min_pts = positive(errors, "optimize.min_pts", min_pts, 1, 1);
        let budget = int_override(&ov.sa_budget, "--sa-budget", errors).unwrap_or(budget);
        let budget = positive(
            errors,
            "optimize.sa_budget",
            budget,
            defaults.settings.budget,
            1,
        );
        let metric = match metric {
            None => Metric::Cosine,
            Some(m) => m.parse().unwrap_or_else(|e: Error| {
                errors.push(format!("optimize.metric: {e}"));
                Metric::Cosine
            }),
        };
        let mut settings = AnnealSettings {
            budget,
            ..defaults.settings
        };
        if let Some(c) = cooling {
            if c > 0.0 && c < 1.0 {
                settings.cooling = c;
            } else {
                errors.push(format!("optimize.cooling must lie in (0, 1), got {c}"));
            }
        }
        if let Some(t) = t0 {
            if t >= 0.0 {
                settings.initial_temp_fraction = t;
            } else {
                errors.push(format!(
                    "optimize.initial_temp_fraction must be non-negative, got {t}"
                ));
            }
        }
        if let Some(st) = step {
            if st > 0.0 {
                settings.step_fraction = st;
            } else {
                errors.push(format!("optimize.step_fraction must be positive, got {st}"));
            }
        }
        SearchParams {
            epsilon_bounds,
            lambda_grid,
            min_pts,
            metric,
            settings,
        }
    }
}
