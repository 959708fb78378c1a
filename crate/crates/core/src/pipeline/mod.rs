//! Resumable, file-backed pipeline stages.
//!
//! Every stage reads named artifacts from the workspace, writes its own
//! artifacts atomically and records a manifest holding the content hashes
//! of its inputs and outputs together with its parameters. A stage whose
//! manifest still matches is skipped.

pub mod config;
pub mod manifest;
mod report;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::claimspace::{
    determine_threshold, optimize, search::write_trace_csv, OutlierRule, SimilarityRelation,
    UtilityResult,
};
use crate::corpus::{
    apply_aliases, apply_exclusions, load_corpus, sample_cases, Corpus, CorpusFormat,
};
use crate::embedding::{
    embed_claims, EmbeddingProvider, EmbeddingSet, OfflineProvider, RemoteProvider,
};
use crate::ensemble::{ensemble_ranks, rank_pairs, ranking_pcc, RankList};
use crate::graph::{build_graph, export_gephi, summarize, write_summary};
use crate::similarity::{coa_profiles, pair_table_from_profiles, Measure, PairScoreTable};
use crate::vectors::{case_vector, citation_histogram, write_histograms_csv, ArticleIndex};
use crate::{Error, Result};

pub use config::{Cutoff, Overrides, PipelineConfig, ProviderChoice};
pub use manifest::{read_manifest, Manifest, WorkspaceLock};
pub use report::report;

use manifest::{now_ms, sha256_file, write_atomic, write_manifest, FORMAT_VERSION};

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const SAMPLED_RAW_FILE: &str = "sampled_raw.jsonl";
pub const SAMPLED_FILE: &str = "sampled.jsonl";
pub const HISTOGRAM_FILE: &str = "histogram.csv";
pub const ARTICLE_INDEX_FILE: &str = "article_index.csv";
pub const CASE_VECTORS_FILE: &str = "case_vectors.csv";
pub const ENSEMBLE_FILE: &str = "ranks_ensemble.csv";
pub const RANKING_PCC_FILE: &str = "ranking_pcc.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.bin";
pub const UTILITY_FILE: &str = "utility.json";
pub const TRACE_FILE: &str = "sa_trace.csv";
pub const RELATION_FILE: &str = "relation.csv";
pub const THRESHOLD_FILE: &str = "threshold.json";
pub const GRAPH_DIR: &str = "graph";
pub const COMPONENTS_FILE: &str = "graph/components.json";

pub fn pairs_file(m: Measure) -> String {
    format!("pairs_{}.csv", m.as_str())
}

pub fn ranks_file(m: Measure) -> String {
    format!("ranks_{}.csv", m.as_str())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Sample,
    Stats,
    Vectors,
    Simpairs,
    Ensemble,
    Embed,
    Optimize,
    Threshold,
    Graph,
}

impl Stage {
    /// Execution order for `run all`.
    pub const ALL: [Stage; 10] = [
        Stage::Ingest,
        Stage::Sample,
        Stage::Stats,
        Stage::Vectors,
        Stage::Simpairs,
        Stage::Ensemble,
        Stage::Embed,
        Stage::Optimize,
        Stage::Threshold,
        Stage::Graph,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Sample => "sample",
            Stage::Stats => "stats",
            Stage::Vectors => "vectors",
            Stage::Simpairs => "simpairs",
            Stage::Ensemble => "ensemble",
            Stage::Embed => "embed",
            Stage::Optimize => "optimize",
            Stage::Threshold => "threshold",
            Stage::Graph => "graph",
        }
    }

    /// Stages whose artifacts this one reads.
    pub fn requires(self, cfg: &PipelineConfig) -> Vec<Stage> {
        match self {
            Stage::Ingest => vec![],
            Stage::Sample => vec![Stage::Ingest],
            Stage::Stats | Stage::Vectors | Stage::Embed => vec![Stage::Sample],
            Stage::Simpairs => vec![Stage::Sample, Stage::Vectors],
            Stage::Ensemble => vec![Stage::Simpairs],
            Stage::Optimize => vec![Stage::Sample, Stage::Simpairs, Stage::Embed],
            Stage::Threshold => vec![Stage::Ensemble, Stage::Optimize],
            Stage::Graph => match cfg.graph.cutoff {
                Cutoff::Threshold => vec![Stage::Ensemble, Stage::Threshold],
                Cutoff::Rank(_) => vec![Stage::Ensemble],
            },
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown stage `{s}`")))
    }
}

/// A stage name or `all`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    All,
    One(Stage),
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            Ok(Target::All)
        } else {
            s.parse().map(Target::One)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StageOutcome {
    pub stage: Stage,
    /// `false` when the manifest matched and nothing was recomputed.
    pub executed: bool,
}

/// Runs one stage, or every stage in order, holding the workspace lock.
pub fn run(cfg: &PipelineConfig, target: Target) -> Result<Vec<StageOutcome>> {
    fs::create_dir_all(&cfg.workspace).map_err(|e| Error::io(&cfg.workspace, e))?;
    let _lock = WorkspaceLock::acquire(&cfg.workspace)?;
    let stages: Vec<Stage> = match target {
        Target::All => Stage::ALL.to_vec(),
        Target::One(s) => vec![s],
    };
    stages.into_iter().map(|s| run_stage(cfg, s)).collect()
}

struct Ctx<'a> {
    cfg: &'a PipelineConfig,
    ws: &'a Path,
}

impl Ctx<'_> {
    fn path(&self, rel: &str) -> PathBuf {
        self.ws.join(rel)
    }

    fn write(&self, rel: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.path(rel), bytes)
    }

    fn read_corpus(&self, rel: &str) -> Result<Corpus> {
        load_corpus(&self.path(rel), CorpusFormat::Jsonl)
    }

    fn write_corpus(&self, rel: &str, corpus: &Corpus) -> Result<()> {
        let mut buf = Vec::new();
        corpus.write_jsonl(&mut buf)?;
        self.write(rel, &buf)
    }

    fn open(&self, rel: &str) -> Result<fs::File> {
        let p = self.path(rel);
        fs::File::open(&p).map_err(|e| Error::io(p, e))
    }

    fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(rel, &bytes)
    }

    fn read_json<T: for<'de> Deserialize<'de>>(&self, rel: &str) -> Result<T> {
        let p = self.path(rel);
        let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    fn pair_table(&self, m: Measure) -> Result<PairScoreTable> {
        PairScoreTable::read_csv(m, self.open(&pairs_file(m))?)
    }
}

/// Inputs of a stage: workspace-relative artifacts and their producers.
fn stage_inputs(cfg: &PipelineConfig, stage: Stage) -> Vec<(String, Stage)> {
    let own = |files: &[&str], by: Stage| {
        files
            .iter()
            .map(|f| (f.to_string(), by))
            .collect::<Vec<_>>()
    };
    match stage {
        Stage::Ingest => vec![],
        Stage::Sample => own(&[CORPUS_FILE], Stage::Ingest),
        Stage::Stats => own(&[SAMPLED_RAW_FILE], Stage::Sample),
        Stage::Vectors => own(&[SAMPLED_FILE], Stage::Sample),
        Stage::Simpairs => {
            let mut v = own(&[SAMPLED_FILE], Stage::Sample);
            v.extend(own(&[ARTICLE_INDEX_FILE], Stage::Vectors));
            v
        }
        Stage::Ensemble => cfg
            .measures
            .iter()
            .map(|m| (pairs_file(*m), Stage::Simpairs))
            .collect(),
        Stage::Embed => own(&[SAMPLED_FILE], Stage::Sample),
        Stage::Optimize => {
            let mut v = own(&[SAMPLED_FILE], Stage::Sample);
            v.push((pairs_file(Measure::IndividualDice), Stage::Simpairs));
            v.extend(own(&[EMBEDDINGS_FILE], Stage::Embed));
            v
        }
        Stage::Threshold => {
            let mut v = own(&[ENSEMBLE_FILE], Stage::Ensemble);
            v.extend(own(&[UTILITY_FILE], Stage::Optimize));
            v
        }
        Stage::Graph => {
            let mut v = own(&[ENSEMBLE_FILE], Stage::Ensemble);
            if cfg.graph.cutoff == Cutoff::Threshold {
                v.extend(own(&[THRESHOLD_FILE], Stage::Threshold));
            }
            v
        }
    }
}

fn provider_for(cfg: &PipelineConfig) -> Box<dyn EmbeddingProvider> {
    match &cfg.embedding.provider {
        ProviderChoice::Offline => Box::new(OfflineProvider),
        ProviderChoice::Remote(rc) => Box::new(RemoteProvider::new(rc.clone())),
    }
}

fn stage_params(cfg: &PipelineConfig, stage: Stage) -> Value {
    match stage {
        Stage::Ingest => json!({
            "format": cfg.corpus.format,
            "aliases": cfg.aliases,
        }),
        Stage::Sample => json!({
            "m": cfg.m,
            "n": cfg.n,
            "seed": cfg.seed,
            "exclusions": cfg.exclusions,
        }),
        Stage::Stats => json!({ "exclusions": cfg.exclusions }),
        Stage::Vectors => json!({}),
        Stage::Simpairs | Stage::Ensemble => json!({ "measures": cfg.measures }),
        Stage::Embed => {
            let p = provider_for(cfg);
            json!({
                "provider": p.provider_id(),
                "model": p.model(),
                "max_chars": p.max_chars(),
            })
        }
        Stage::Optimize => json!({
            "n": cfg.n,
            "seed": cfg.seed,
            "search": cfg.search,
        }),
        Stage::Threshold => json!({ "outlier_rule": cfg.outlier_rule }),
        Stage::Graph => json!({
            "cutoff": cfg.graph.cutoff,
            "min_clique": cfg.graph.min_clique,
        }),
    }
}

fn hash_outputs(ws: &Path, outputs: &[String]) -> Result<BTreeMap<String, String>> {
    outputs
        .iter()
        .map(|rel| Ok((rel.clone(), sha256_file(&ws.join(rel))?)))
        .collect()
}

fn up_to_date(ws: &Path, m: &Manifest, inputs: &BTreeMap<String, String>, params: &Value) -> bool {
    m.format_version == FORMAT_VERSION
        && &m.inputs == inputs
        && &m.params == params
        && m.outputs.iter().all(|(rel, hash)| {
            sha256_file(&ws.join(rel))
                .map(|h| &h == hash)
                .unwrap_or(false)
        })
}

fn run_stage(cfg: &PipelineConfig, stage: Stage) -> Result<StageOutcome> {
    let ws = cfg.workspace.as_path();
    for req in stage.requires(cfg) {
        if read_manifest(ws, req.as_str())?.is_none() {
            return Err(Error::MissingPrerequisite {
                stage: stage.to_string(),
                requires: req.to_string(),
            });
        }
    }
    let mut inputs = BTreeMap::new();
    if stage == Stage::Ingest {
        let p = &cfg.corpus.path;
        let abs = fs::canonicalize(p).map_err(|e| Error::io(p, e))?;
        inputs.insert(abs.display().to_string(), sha256_file(&abs)?);
    }
    for (rel, producer) in stage_inputs(cfg, stage) {
        let p = ws.join(&rel);
        if !p.exists() {
            return Err(Error::MissingPrerequisite {
                stage: stage.to_string(),
                requires: producer.to_string(),
            });
        }
        inputs.insert(rel, sha256_file(&p)?);
    }
    let params = stage_params(cfg, stage);
    if let Some(m) = read_manifest(ws, stage.as_str())? {
        if up_to_date(ws, &m, &inputs, &params) {
            log::info!("{stage}: up to date");
            return Ok(StageOutcome {
                stage,
                executed: false,
            });
        }
    }

    log::info!("{stage}: running");
    let started = now_ms();
    let ctx = Ctx { cfg, ws };
    let (outputs, notes) = execute(&ctx, stage)?;
    let manifest = Manifest {
        stage: stage.to_string(),
        format_version: FORMAT_VERSION,
        inputs,
        params,
        outputs: hash_outputs(ws, &outputs)?,
        notes,
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
    };
    write_manifest(ws, &manifest)?;
    Ok(StageOutcome {
        stage,
        executed: true,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RelationRow {
    coa_a: String,
    coa_b: String,
    s: usize,
    t: usize,
}

/// Optimizer result as persisted in `utility.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeRecord {
    pub result: UtilityResult,
    pub evaluations: usize,
    pub seed: u64,
}

fn execute(ctx: &Ctx<'_>, stage: Stage) -> Result<(Vec<String>, Value)> {
    let cfg = ctx.cfg;
    let mut notes = Value::Null;
    let outputs: Vec<String> = match stage {
        Stage::Ingest => {
            let corpus = load_corpus(&cfg.corpus.path, cfg.corpus.format)?;
            let corpus = apply_aliases(&corpus, &cfg.aliases);
            ctx.write_corpus(CORPUS_FILE, &corpus)?;
            notes = json!({ "cases": corpus.len(), "coas": corpus.coa_count() });
            vec![CORPUS_FILE.into()]
        }
        Stage::Sample => {
            let corpus = ctx.read_corpus(CORPUS_FILE)?;
            let raw = sample_cases(&corpus, cfg.m, cfg.n, cfg.seed)?;
            ctx.write_corpus(SAMPLED_RAW_FILE, &raw)?;
            ctx.write_corpus(SAMPLED_FILE, &apply_exclusions(&raw, &cfg.exclusions))?;
            vec![SAMPLED_RAW_FILE.into(), SAMPLED_FILE.into()]
        }
        Stage::Stats => {
            let raw = ctx.read_corpus(SAMPLED_RAW_FILE)?;
            let mut buf = Vec::new();
            write_histograms_csv(
                &citation_histogram(&raw, None),
                &citation_histogram(&raw, Some(&cfg.exclusions)),
                &mut buf,
            )?;
            ctx.write(HISTOGRAM_FILE, &buf)?;
            vec![HISTOGRAM_FILE.into()]
        }
        Stage::Vectors => {
            let sampled = ctx.read_corpus(SAMPLED_FILE)?;
            let index = ArticleIndex::build(&sampled);
            let mut buf = Vec::new();
            index.write_csv(&mut buf)?;
            ctx.write(ARTICLE_INDEX_FILE, &buf)?;
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["case_id", "coa", "columns"])?;
            for case in sampled.cases() {
                let v = case_vector(case, &index)?;
                let cols: Vec<String> = v.columns().iter().map(u32::to_string).collect();
                w.write_record([
                    case.case_id.as_str(),
                    case.coa.as_str(),
                    cols.join(";").as_str(),
                ])?;
            }
            ctx.write(
                CASE_VECTORS_FILE,
                &w.into_inner()
                    .map_err(|e| Error::io(CASE_VECTORS_FILE, e.into_error()))?,
            )?;
            vec![ARTICLE_INDEX_FILE.into(), CASE_VECTORS_FILE.into()]
        }
        Stage::Simpairs => {
            let sampled = ctx.read_corpus(SAMPLED_FILE)?;
            let index = ArticleIndex::read_csv(ctx.open(ARTICLE_INDEX_FILE)?)?;
            let profiles = coa_profiles(&sampled, &index)?;
            let mut out = Vec::new();
            for &m in &cfg.measures {
                let table = pair_table_from_profiles(&profiles, index.len(), m)?;
                let mut buf = Vec::new();
                table.write_csv(&mut buf)?;
                ctx.write(&pairs_file(m), &buf)?;
                out.push(pairs_file(m));
            }
            out
        }
        Stage::Ensemble => {
            let mut lists = Vec::new();
            let mut out = Vec::new();
            for &m in &cfg.measures {
                let list = rank_pairs(&ctx.pair_table(m)?);
                let mut buf = Vec::new();
                list.write_csv(&mut buf)?;
                ctx.write(&ranks_file(m), &buf)?;
                out.push(ranks_file(m));
                lists.push(list);
            }
            let ens = ensemble_ranks(&lists)?;
            let mut buf = Vec::new();
            ens.write_csv(&mut buf)?;
            ctx.write(ENSEMBLE_FILE, &buf)?;
            out.push(ENSEMBLE_FILE.into());
            // null where a ranking is fully tied
            let pccs: BTreeMap<&str, Option<f64>> = lists
                .iter()
                .map(|l| (l.source.as_str(), ranking_pcc(l, &ens).ok()))
                .collect();
            ctx.write_json(RANKING_PCC_FILE, &pccs)?;
            out.push(RANKING_PCC_FILE.into());
            out
        }
        Stage::Embed => {
            let sampled = ctx.read_corpus(SAMPLED_FILE)?;
            let provider = provider_for(cfg);
            let outcome =
                embed_claims(sampled.cases(), provider.as_ref(), &cfg.embedding.cache_dir)?;
            let mut buf = Vec::new();
            outcome.set.write_binary(&mut buf)?;
            ctx.write(EMBEDDINGS_FILE, &buf)?;
            notes = serde_json::to_value(outcome.stats)?;
            vec![EMBEDDINGS_FILE.into()]
        }
        Stage::Optimize => {
            let sampled = ctx.read_corpus(SAMPLED_FILE)?;
            let dice = ctx.pair_table(Measure::IndividualDice)?;
            let emb =
                EmbeddingSet::read_binary(std::io::BufReader::new(ctx.open(EMBEDDINGS_FILE)?))?;
            let opt = optimize(&emb, &sampled, &dice, cfg.n, &cfg.search, cfg.seed)?;
            let mut buf = Vec::new();
            write_trace_csv(&opt.trace, &mut buf)?;
            ctx.write(TRACE_FILE, &buf)?;
            let mut w = csv::Writer::from_writer(Vec::new());
            for e in &opt.best.relation.pairs {
                w.serialize(RelationRow {
                    coa_a: e.pair.first().into(),
                    coa_b: e.pair.second().into(),
                    s: e.s,
                    t: e.t,
                })?;
            }
            if opt.best.relation.pairs.is_empty() {
                w.write_record(["coa_a", "coa_b", "s", "t"])?;
            }
            ctx.write(
                RELATION_FILE,
                &w.into_inner()
                    .map_err(|e| Error::io(RELATION_FILE, e.into_error()))?,
            )?;
            ctx.write_json(
                UTILITY_FILE,
                &OptimizeRecord {
                    result: opt.best,
                    evaluations: opt.evaluations,
                    seed: cfg.seed,
                },
            )?;
            vec![UTILITY_FILE.into(), TRACE_FILE.into(), RELATION_FILE.into()]
        }
        Stage::Threshold => {
            let rec: OptimizeRecord = ctx.read_json(UTILITY_FILE)?;
            let ens = RankList::read_csv(ctx.open(ENSEMBLE_FILE)?)?;
            let rel: &SimilarityRelation = &rec.result.relation;
            let rule: &OutlierRule = &cfg.outlier_rule;
            let report = determine_threshold(rel, &ens, rule)?;
            ctx.write_json(THRESHOLD_FILE, &report)?;
            vec![THRESHOLD_FILE.into()]
        }
        Stage::Graph => {
            let ens = RankList::read_csv(ctx.open(ENSEMBLE_FILE)?)?;
            let cutoff = match cfg.graph.cutoff {
                Cutoff::Rank(r) => r,
                Cutoff::Threshold => {
                    let t: crate::claimspace::ThresholdReport = ctx.read_json(THRESHOLD_FILE)?;
                    t.threshold
                }
            };
            let g = build_graph(&ens, cutoff)?;
            let dir = ctx.path(GRAPH_DIR);
            export_gephi(&g, &dir)?;
            let mut buf = Vec::new();
            write_summary(&summarize(&g, cfg.graph.min_clique)?, &mut buf)?;
            ctx.write(COMPONENTS_FILE, &buf)?;
            [
                crate::graph::NODES_FILE,
                crate::graph::EDGES_FILE,
                crate::graph::GEXF_FILE,
            ]
            .iter()
            .map(|f| format!("{GRAPH_DIR}/{f}"))
            .chain([COMPONENTS_FILE.to_string()])
            .collect()
        }
    };
    Ok((outputs, notes))
}
