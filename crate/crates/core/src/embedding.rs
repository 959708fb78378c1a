//! Claim-text embeddings behind a provider trait, with a content-addressed
//! disk cache.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::CaseRecord;
use crate::{Error, Result};

pub const OFFLINE_DIMENSION: usize = 256;
pub const OFFLINE_PROVIDER_ID: &str = "offline";
pub const OFFLINE_MODEL: &str = "hashed-char-bigram-256";
const OFFLINE_SEED: u64 = 0x5EED_C0A5_1A11_0001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub case_id: String,
    pub vector: Vec<f64>,
    pub provider_id: String,
}

/// Embeddings of one provider, keyed by case id. All vectors share one
/// dimension and are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    provider_id: String,
    dimension: usize,
    entries: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingSet {
    pub fn new(
        provider_id: impl Into<String>,
        entries: BTreeMap<String, Vec<f64>>,
    ) -> Result<Self> {
        let dimension = entries.values().next().map(Vec::len).unwrap_or(0);
        for (case_id, v) in &entries {
            if v.len() != dimension {
                return Err(Error::InvalidVector {
                    case_id: case_id.clone(),
                    reason: format!("dimension {} differs from {dimension}", v.len()),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidVector {
                    case_id: case_id.clone(),
                    reason: "non-finite component".into(),
                });
            }
        }
        Ok(Self {
            provider_id: provider_id.into(),
            dimension,
            entries,
        })
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, case_id: &str) -> Option<&[f64]> {
        self.entries.get(case_id).map(Vec::as_slice)
    }

    /// `(case_id, vector)` in case-id order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn embedding(&self, case_id: &str) -> Option<Embedding> {
        self.entries.get(case_id).map(|v| Embedding {
            case_id: case_id.to_string(),
            vector: v.clone(),
            provider_id: self.provider_id.clone(),
        })
    }

    /// Writes a JSON header line followed by little-endian f64 rows in
    /// case-id order.
    pub fn write_binary(&self, mut out: impl Write) -> Result<()> {
        let header = SetHeader {
            provider_id: self.provider_id.clone(),
            dimension: self.dimension,
            case_ids: self.entries.keys().cloned().collect(),
        };
        serde_json::to_writer(&mut out, &header)?;
        let io = |e| Error::io("<embedding set>", e);
        out.write_all(b"\n").map_err(io)?;
        for v in self.entries.values() {
            out.write_all(&encode_f64le(v)).map_err(io)?;
        }
        Ok(())
    }

    pub fn read_binary(mut input: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        input
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io("<embedding set>", e))?;
        let split = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::InvalidParameter("embedding set has no header".into()))?;
        let header: SetHeader = serde_json::from_slice(&bytes[..split])?;
        let body = &bytes[split + 1..];
        let row = header.dimension * 8;
        if body.len() != row * header.case_ids.len() {
            return Err(Error::InvalidParameter(
                "embedding set body has the wrong length".into(),
            ));
        }
        let entries = header
            .case_ids
            .into_iter()
            .enumerate()
            .map(|(i, id)| (id, decode_f64le(&body[i * row..(i + 1) * row])))
            .collect();
        Self::new(header.provider_id, entries)
    }
}

#[derive(Serialize, Deserialize)]
struct SetHeader {
    provider_id: String,
    dimension: usize,
    case_ids: Vec<String>,
}

fn encode_f64le(v: &[f64]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn decode_f64le(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect()
}

pub trait EmbeddingProvider: Send + Sync {
    fn provider_id(&self) -> &str;

    fn model(&self) -> &str;

    /// Texts longer than this many characters are truncated before embedding.
    fn max_chars(&self) -> usize;

    fn batch_size(&self) -> usize {
        128
    }

    fn concurrency(&self) -> usize {
        1
    }

    /// Embeds one batch; the output has one vector per input, in order.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeded FNV-1a over the UTF-8 bytes, finished with a 64-bit mixer.
fn bucket_of(gram: &str) -> usize {
    let mut h = 0xCBF2_9CE4_8422_2325u64 ^ OFFLINE_SEED;
    for b in gram.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    (mix64(h) % OFFLINE_DIMENSION as u64) as usize
}

/// Deterministic 256-d embedding: each character bigram is hashed to a
/// bucket, bucket counts are L2-normalized. A one-character text counts
/// that character alone; the empty text maps to `e_0`.
pub fn offline_embed(text: &str) -> Vec<f64> {
    let mut v = vec![0.0; OFFLINE_DIMENSION];
    let chars: Vec<char> = text.chars().collect();
    match chars.len() {
        0 => {
            v[0] = 1.0;
            return v;
        }
        1 => v[bucket_of(text)] += 1.0,
        _ => {
            let mut gram = String::with_capacity(8);
            for w in chars.windows(2) {
                gram.clear();
                gram.push(w[0]);
                gram.push(w[1]);
                v[bucket_of(&gram)] += 1.0;
            }
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

#[derive(Debug, Clone, Default)]
pub struct OfflineProvider;

impl EmbeddingProvider for OfflineProvider {
    fn provider_id(&self) -> &str {
        OFFLINE_PROVIDER_ID
    }

    fn model(&self) -> &str {
        OFFLINE_MODEL
    }

    fn max_chars(&self) -> usize {
        8192
    }

    fn batch_size(&self) -> usize {
        1024
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        Ok(texts.iter().map(|t| offline_embed(t)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub url: String,
    #[serde(default)]
    pub token: Option<String>,
    pub model: String,
    #[serde(default = "RemoteConfig::default_batch")]
    pub batch_size: usize,
    #[serde(default = "RemoteConfig::default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "RemoteConfig::default_max_chars")]
    pub max_chars: usize,
    #[serde(default = "RemoteConfig::default_attempts")]
    pub attempts: u32,
    #[serde(default = "RemoteConfig::default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "RemoteConfig::default_timeout_s")]
    pub timeout_s: u64,
}

impl RemoteConfig {
    pub const MAX_BATCH: usize = 128;

    fn default_batch() -> usize {
        Self::MAX_BATCH
    }
    fn default_concurrency() -> usize {
        4
    }
    fn default_max_chars() -> usize {
        8192
    }
    fn default_attempts() -> u32 {
        3
    }
    fn default_backoff_ms() -> u64 {
        500
    }
    fn default_timeout_s() -> u64 {
        120
    }

    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            token: None,
            model: model.into(),
            batch_size: Self::default_batch(),
            concurrency: Self::default_concurrency(),
            max_chars: Self::default_max_chars(),
            attempts: Self::default_attempts(),
            backoff_ms: Self::default_backoff_ms(),
            timeout_s: Self::default_timeout_s(),
        }
    }
}

/// Client for an HTTP embedding service speaking the common
/// `{model, input: [...]} -> {data: [{index, embedding}]}` shape.
pub struct RemoteProvider {
    config: RemoteConfig,
    provider_id: String,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedDatum>,
}

#[derive(Deserialize)]
struct EmbedDatum {
    index: usize,
    embedding: Vec<f64>,
}

impl RemoteProvider {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_s)))
            .http_status_as_error(false)
            .build()
            .into();
        let provider_id = format!("remote:{}", config.url);
        Self {
            config,
            provider_id,
            agent,
        }
    }

    fn request_once(&self, texts: &[String]) -> std::result::Result<Vec<Vec<f64>>, String> {
        let mut req = self.agent.post(&self.config.url);
        if let Some(token) = &self.config.token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req
            .send_json(EmbedRequest {
                model: &self.config.model,
                input: texts,
            })
            .map_err(|e| e.to_string())?;
        let status = resp.status();
        if !status.is_success() {
            return Err(format!("service returned HTTP {}", status.as_u16()));
        }
        let body: EmbedResponse = resp.body_mut().read_json().map_err(|e| e.to_string())?;
        let mut out: Vec<Option<Vec<f64>>> = vec![None; texts.len()];
        for d in body.data {
            let slot = out
                .get_mut(d.index)
                .ok_or_else(|| format!("response index {} out of range", d.index))?;
            *slot = Some(d.embedding);
        }
        out.into_iter()
            .enumerate()
            .map(|(i, v)| v.ok_or_else(|| format!("response is missing index {i}")))
            .collect()
    }
}

impl EmbeddingProvider for RemoteProvider {
    fn provider_id(&self) -> &str {
        &self.provider_id
    }

    fn model(&self) -> &str {
        &self.config.model
    }

    fn max_chars(&self) -> usize {
        self.config.max_chars
    }

    fn batch_size(&self) -> usize {
        self.config.batch_size.clamp(1, RemoteConfig::MAX_BATCH)
    }

    fn concurrency(&self) -> usize {
        self.config.concurrency.max(1)
    }

    /// Retries with exponential backoff, `attempts` tries in total.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let attempts = self.config.attempts.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(
                    self.config.backoff_ms << (attempt - 1),
                ));
            }
            match self.request_once(texts) {
                Ok(v) => return Ok(v),
                Err(e) => {
                    log::warn!(
                        "embedding request attempt {} of {attempts} failed: {e}",
                        attempt + 1
                    );
                    last = e;
                }
            }
        }
        Err(Error::Embedding {
            failed: Vec::new(),
            message: last,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CacheMeta {
    dimension: usize,
    provider: String,
    model: String,
    dtype: String,
}

/// One file per key: `<root>/<first two hex>/<key>.vec` holding
/// little-endian f64 values plus a `.json` sidecar.
#[derive(Debug, Clone)]
pub struct DiskCache {
    root: PathBuf,
}

static TMP_COUNTER: AtomicUsize = AtomicUsize::new(0);

impl DiskCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn key(provider_id: &str, model: &str, text: &str) -> String {
        let mut h = Sha256::new();
        for part in [provider_id, model, text] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        hex::encode(h.finalize())
    }

    fn paths(&self, key: &str) -> (PathBuf, PathBuf) {
        let dir = self.root.join(&key[..2]);
        (
            dir.join(format!("{key}.vec")),
            dir.join(format!("{key}.json")),
        )
    }

    pub fn get(&self, key: &str) -> Result<Option<Vec<f64>>> {
        let (vec_path, meta_path) = self.paths(key);
        let bytes = match fs::read(&vec_path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(vec_path, e)),
        };
        let meta: CacheMeta = match fs::read(&meta_path) {
            Ok(m) => serde_json::from_slice(&m)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(meta_path, e)),
        };
        if bytes.len() != meta.dimension * 8 {
            log::warn!("cache entry {key} is truncated; ignoring it");
            return Ok(None);
        }
        Ok(Some(decode_f64le(&bytes)))
    }

    pub fn put(&self, key: &str, provider: &str, model: &str, vector: &[f64]) -> Result<()> {
        let (vec_path, meta_path) = self.paths(key);
        let dir = vec_path.parent().expect("cache path has a parent");
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta = CacheMeta {
            dimension: vector.len(),
            provider: provider.into(),
            model: model.into(),
            dtype: "f64le".into(),
        };
        atomic_write(&meta_path, &serde_json::to_vec_pretty(&meta)?)?;
        atomic_write(&vec_path, &encode_f64le(vector))
    }
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "tmp.{}.{}",
        std::process::id(),
        TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedStats {
    pub cache_hits: usize,
    pub cache_misses: usize,
    pub batches_sent: usize,
    pub truncated: usize,
}

#[derive(Debug, Clone)]
pub struct EmbedOutcome {
    pub set: EmbeddingSet,
    pub stats: EmbedStats,
}

fn truncate_chars(text: &str, max: usize) -> Option<&str> {
    text.char_indices().nth(max).map(|(i, _)| &text[..i])
}

/// Embeds every case's claim text, consulting the cache first. Texts that
/// miss are sent in batches, up to `provider.concurrency()` at a time, and
/// each successful batch is cached before the call returns, even when
/// other batches fail.
pub fn embed_claims(
    cases: &[CaseRecord],
    provider: &dyn EmbeddingProvider,
    cache_dir: &Path,
) -> Result<EmbedOutcome> {
    let cache = DiskCache::new(cache_dir);
    let mut stats = EmbedStats::default();
    let mut resolved: HashMap<String, Vec<f64>> = HashMap::new();
    // key -> (text, case ids)
    let mut pending: BTreeMap<String, (String, Vec<String>)> = BTreeMap::new();
    let mut case_keys = Vec::with_capacity(cases.len());

    for case in cases {
        let text = match truncate_chars(&case.claim_text, provider.max_chars()) {
            Some(cut) => {
                log::warn!(
                    "claim text of {} truncated to {} characters",
                    case.case_id,
                    provider.max_chars()
                );
                stats.truncated += 1;
                cut
            }
            None => case.claim_text.as_str(),
        };
        let key = DiskCache::key(provider.provider_id(), provider.model(), text);
        case_keys.push((case.case_id.clone(), key.clone()));
        if resolved.contains_key(&key) {
            stats.cache_hits += 1;
            continue;
        }
        if let Some(entry) = pending.get_mut(&key) {
            entry.1.push(case.case_id.clone());
            continue;
        }
        match cache.get(&key)? {
            Some(v) => {
                stats.cache_hits += 1;
                resolved.insert(key, v);
            }
            None => {
                stats.cache_misses += 1;
                pending.insert(key, (text.to_string(), vec![case.case_id.clone()]));
            }
        }
    }

    let pending: Vec<(String, String, Vec<String>)> = pending
        .into_iter()
        .map(|(k, (t, ids))| (k, t, ids))
        .collect();
    let batches: Vec<&[(String, String, Vec<String>)]> =
        pending.chunks(provider.batch_size().max(1)).collect();
    stats.batches_sent = batches.len();

    let next = AtomicUsize::new(0);
    let results = Mutex::new(Vec::new());
    let failures = Mutex::new((Vec::<String>::new(), String::new()));
    let workers = provider.concurrency().clamp(1, batches.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(batch) = batches.get(i) else { break };
                let texts: Vec<String> = batch.iter().map(|(_, t, _)| t.clone()).collect();
                let outcome = provider.embed_batch(&texts).and_then(|vs| {
                    if vs.len() != texts.len() {
                        return Err(Error::Embedding {
                            failed: Vec::new(),
                            message: format!(
                                "provider returned {} vectors for {} texts",
                                vs.len(),
                                texts.len()
                            ),
                        });
                    }
                    for ((key, _, _), v) in batch.iter().zip(&vs) {
                        cache.put(key, provider.provider_id(), provider.model(), v)?;
                    }
                    Ok(vs)
                });
                match outcome {
                    Ok(vs) => {
                        let mut r = results.lock().expect("results lock");
                        r.extend(batch.iter().map(|(k, _, _)| k.clone()).zip(vs));
                    }
                    Err(e) => {
                        let mut f = failures.lock().expect("failure lock");
                        f.0.extend(batch.iter().flat_map(|(_, _, ids)| ids.iter().cloned()));
                        f.1 = e.to_string();
                    }
                }
            });
        }
    });

    let (mut failed, message) = failures.into_inner().expect("failure lock");
    if !failed.is_empty() {
        failed.sort();
        return Err(Error::Embedding { failed, message });
    }
    resolved.extend(results.into_inner().expect("results lock"));

    let entries = case_keys
        .into_iter()
        .map(|(id, key)| {
            let v = resolved[&key].clone();
            (id, v)
        })
        .collect();
    Ok(EmbedOutcome {
        set: EmbeddingSet::new(provider.provider_id(), entries)?,
        stats,
    })
}
