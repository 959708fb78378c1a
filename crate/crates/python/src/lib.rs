//! Python bindings: citation parsing, the three pair measures, ensemble
//! ranking, claim-space clustering, thresholds, COA graphs and the staged
//! pipeline.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

use coasim_core::claimspace::{self, Metric, OutlierRule};
use coasim_core::corpus::{self, CaseRecord, CorpusFormat, ExclusionList};
use coasim_core::embedding::EmbeddingSet;
use coasim_core::ensemble::{self, RankEntry, RankList};
use coasim_core::graph;
use coasim_core::pipeline::{self, Overrides, PipelineConfig, Target};
use coasim_core::similarity::{self, CoaPair, Measure};
use coasim_core::vectors::ArticleIndex;

create_exception!(coasim, CoasimError, PyException);

fn err(e: coasim_core::Error) -> PyErr {
    match e {
        coasim_core::Error::InvalidParameter(_) | coasim_core::Error::Config(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => CoasimError::new_err(other.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = coasim_core::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(err)
}

fn pair(a: &str, b: &str) -> PyResult<CoaPair> {
    CoaPair::new(a, b).ok_or_else(|| {
        PyValueError::new_err(format!("a pair needs two distinct COAs, got {a:?} twice"))
    })
}

/// A normalized statute citation.
#[pyclass(frozen, eq, hash, ord, skip_from_py_object)]
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct ArticleRef(corpus::ArticleRef);

#[pymethods]
impl ArticleRef {
    #[new]
    #[pyo3(signature = (act, article, sub=None))]
    fn new(act: &str, article: u32, sub: Option<u32>) -> PyResult<Self> {
        corpus::ArticleRef::new(act, article, sub)
            .map(Self)
            .ok_or_else(|| PyValueError::new_err("act must be non-empty and article positive"))
    }

    #[getter]
    fn act(&self) -> &str {
        &self.0.act
    }

    #[getter]
    fn article(&self) -> u32 {
        self.0.article
    }

    #[getter]
    fn sub(&self) -> Option<u32> {
        self.0.sub
    }

    fn __str__(&self) -> String {
        self.0.to_string()
    }

    fn __repr__(&self) -> String {
        format!("ArticleRef({:?})", self.0.to_string())
    }
}

#[pyfunction]
fn parse_citation(text: &str) -> Option<ArticleRef> {
    corpus::parse_citation(text).map(ArticleRef)
}

/// Every statute citation found in free text, in order of appearance.
#[pyfunction]
fn extract_citations(text: &str) -> Vec<ArticleRef> {
    corpus::extract_citations(text)
        .into_iter()
        .map(ArticleRef)
        .collect()
}

/// A validated set of cases.
#[pyclass(frozen, skip_from_py_object)]
#[derive(Clone)]
struct Corpus(corpus::Corpus);

#[pymethods]
impl Corpus {
    /// `records` is a list of `(case_id, coa, claim_text, citations)` with
    /// citations given as strings such as "民法第184條第1項".
    #[new]
    fn new(records: Vec<(String, String, String, Vec<String>)>) -> PyResult<Self> {
        let mut cases = Vec::with_capacity(records.len());
        for (case_id, coa, claim_text, cites) in records {
            let mut citations = std::collections::BTreeSet::new();
            for c in &cites {
                let a = corpus::parse_citation(c).ok_or_else(|| {
                    PyValueError::new_err(format!("case {case_id}: cannot parse citation {c:?}"))
                })?;
                citations.insert(a);
            }
            cases.push(CaseRecord {
                case_id,
                coa,
                claim_text,
                citations,
            });
        }
        corpus::Corpus::new(cases).map(Self).map_err(err)
    }

    #[staticmethod]
    #[pyo3(signature = (path, format="jsonl"))]
    fn load(path: PathBuf, format: &str) -> PyResult<Self> {
        let format: CorpusFormat = parse(format)?;
        corpus::load_corpus(&path, format).map(Self).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn coas(&self) -> Vec<String> {
        self.0.coas().map(str::to_string).collect()
    }

    fn case_ids(&self) -> Vec<String> {
        self.0.cases().iter().map(|c| c.case_id.clone()).collect()
    }

    /// `n` cases from each of `m` COAs, reproducibly for a given seed.
    fn sample(&self, m: usize, n: usize, seed: u64) -> PyResult<Self> {
        corpus::sample_cases(&self.0, m, n, seed)
            .map(Self)
            .map_err(err)
    }

    /// Drops citations of the given acts, e.g. procedural codes.
    fn exclude(&self, acts: Vec<String>) -> Self {
        Self(corpus::apply_exclusions(&self.0, &ExclusionList::new(acts)))
    }

    /// Number of distinct cited articles.
    fn alpha(&self) -> usize {
        ArticleIndex::build(&self.0).len()
    }
}

/// Scores of one measure for every COA pair, as
/// `(coa_a, coa_b, score, flags)` sorted by pair.
#[pyfunction]
#[pyo3(signature = (corpus, measure="individual_dice"))]
fn pair_scores(corpus: &Corpus, measure: &str) -> PyResult<Vec<(String, String, f64, String)>> {
    let measure: Measure = parse(measure)?;
    let index = ArticleIndex::build(&corpus.0);
    let table = similarity::pair_table(&corpus.0, &index, measure).map_err(err)?;
    Ok(table
        .scores
        .into_iter()
        .map(|s| {
            (
                s.pair.first().to_string(),
                s.pair.second().to_string(),
                s.score,
                s.flags,
            )
        })
        .collect())
}

/// Dice coefficient of two sets of column ids.
#[pyfunction]
fn dice(a: Vec<u32>, b: Vec<u32>) -> f64 {
    use coasim_core::vectors::CitationVector;
    similarity::dice(
        &CitationVector::from_columns(a),
        &CitationVector::from_columns(b),
    )
}

fn to_rows(list: &RankList) -> Vec<(String, String, f64)> {
    list.by_rank()
        .into_iter()
        .map(|e| {
            (
                e.pair.first().to_string(),
                e.pair.second().to_string(),
                e.rank,
            )
        })
        .collect()
}

fn from_rows(source: &str, rows: Vec<(String, String, f64)>) -> PyResult<RankList> {
    let entries = rows
        .into_iter()
        .map(|(a, b, rank)| {
            Ok(RankEntry {
                pair: pair(&a, &b)?,
                rank,
                total: None,
            })
        })
        .collect::<PyResult<Vec<_>>>()?;
    RankList::new(source, entries).map_err(err)
}

/// Ensemble ranks over all three measures, best first, plus each base
/// ranking's correlation with the ensemble (None when undefined).
#[pyfunction]
fn ensemble_ranking(
    corpus: &Corpus,
) -> PyResult<(Vec<(String, String, f64)>, BTreeMap<String, Option<f64>>)> {
    let index = ArticleIndex::build(&corpus.0);
    let lists = Measure::ALL
        .iter()
        .map(|&m| similarity::pair_table(&corpus.0, &index, m).map(|t| ensemble::rank_pairs(&t)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?;
    let ens = ensemble::ensemble_ranks(&lists).map_err(err)?;
    let pccs = lists
        .iter()
        .map(|l| (l.source.clone(), ensemble::ranking_pcc(l, &ens).ok()))
        .collect();
    Ok((to_rows(&ens), pccs))
}

/// DBSCAN over `{case_id: vector}`; returns `{case_id: cluster}`.
#[pyfunction]
#[pyo3(signature = (vectors, epsilon, min_pts=1, metric="cosine"))]
fn cluster(
    vectors: BTreeMap<String, Vec<f64>>,
    epsilon: f64,
    min_pts: usize,
    metric: &str,
) -> PyResult<BTreeMap<String, usize>> {
    let metric: Metric = parse(metric)?;
    let emb = EmbeddingSet::new("python", vectors).map_err(err)?;
    let assign = claimspace::epsilon_cluster(&emb, epsilon, min_pts, metric).map_err(err)?;
    Ok(assign.iter().map(|(id, c)| (id.to_string(), c)).collect())
}

/// μ + 2σ over ranks after the outlier rule (`"tukey"` or `"none"`);
/// returns `(threshold, mu, sigma, excluded_ranks)`.
#[pyfunction]
#[pyo3(signature = (ranks, rule="tukey"))]
fn rank_threshold(ranks: Vec<f64>, rule: &str) -> PyResult<(f64, f64, f64, Vec<f64>)> {
    let rule: OutlierRule = parse(rule)?;
    let items = ranks
        .iter()
        .enumerate()
        .map(|(i, &r)| Ok((pair(&format!("a{i}"), &format!("b{i}"))?, r)))
        .collect::<PyResult<Vec<_>>>()?;
    let rep = claimspace::threshold_from_ranks(&items, &rule).map_err(err)?;
    Ok((
        rep.threshold,
        rep.mu,
        rep.sigma,
        rep.outliers.iter().map(|o| o.rank).collect(),
    ))
}

/// A COA graph built from `(coa_a, coa_b, rank)` rows, keeping pairs
/// ranked at or better than `cutoff`.
#[pyclass(frozen, skip_from_py_object)]
struct CoaGraph(graph::CoaGraph);

#[pymethods]
impl CoaGraph {
    #[new]
    fn new(ranks: Vec<(String, String, f64)>, cutoff: f64) -> PyResult<Self> {
        let list = from_rows("python", ranks)?;
        graph::build_graph(&list, cutoff).map(Self).map_err(err)
    }

    #[staticmethod]
    fn from_gexf(xml: &str) -> PyResult<Self> {
        graph::from_gexf(xml).map(Self).map_err(err)
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.0.labels().to_vec()
    }

    /// `(source_label, target_label, rank)` per edge.
    #[getter]
    fn edges(&self) -> Vec<(String, String, f64)> {
        let l = self.0.labels();
        self.0
            .edges()
            .iter()
            .map(|e| (l[e.source].clone(), l[e.target].clone(), e.rank))
            .collect()
    }

    fn components(&self) -> Vec<Vec<String>> {
        let l = self.0.labels();
        graph::components(&self.0)
            .into_iter()
            .map(|c| c.into_iter().map(|i| l[i].clone()).collect())
            .collect()
    }

    #[pyo3(signature = (min_size=3))]
    fn cliques(&self, min_size: usize) -> PyResult<Vec<Vec<String>>> {
        let l = self.0.labels();
        Ok(graph::cliques(&self.0, min_size)
            .map_err(err)?
            .into_iter()
            .map(|c| c.into_iter().map(|i| l[i].clone()).collect())
            .collect())
    }

    fn to_gexf(&self) -> PyResult<String> {
        let bytes = graph::to_gexf(&self.0).map_err(err)?;
        Ok(String::from_utf8(bytes).expect("GEXF writer emits UTF-8"))
    }

    /// Writes nodes.csv, edges.csv and graph.gexf into `out_dir`.
    fn export(&self, out_dir: PathBuf) -> PyResult<()> {
        graph::export_gephi(&self.0, &out_dir).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.0.node_count()
    }
}

/// Runs `stage` (or "all") for a config file; returns
/// `[(stage, executed)]`. Keyword overrides mirror the CLI flags.
#[pyfunction]
#[pyo3(signature = (config, stage="all", *, epsilon_bounds=None, lambda_grid=None, min_pts=None, sa_budget=None, seed=None, outlier_rule=None))]
#[allow(clippy::too_many_arguments)]
fn run(
    py: Python<'_>,
    config: PathBuf,
    stage: &str,
    epsilon_bounds: Option<String>,
    lambda_grid: Option<String>,
    min_pts: Option<usize>,
    sa_budget: Option<usize>,
    seed: Option<u64>,
    outlier_rule: Option<String>,
) -> PyResult<Vec<(String, bool)>> {
    let target: Target = parse(stage)?;
    let overrides = Overrides {
        epsilon_bounds,
        lambda_grid,
        min_pts: min_pts.map(|v| v.to_string()),
        sa_budget: sa_budget.map(|v| v.to_string()),
        seed: seed.map(|v| v.to_string()),
        outlier_rule,
    };
    let cfg = PipelineConfig::load(&config, &overrides).map_err(err)?;
    let outcomes = py.detach(|| pipeline::run(&cfg, target)).map_err(err)?;
    Ok(outcomes
        .into_iter()
        .map(|o| (o.stage.as_str().to_string(), o.executed))
        .collect())
}

#[pyfunction]
fn report(workspace: PathBuf) -> PyResult<String> {
    pipeline::report(&workspace).map_err(err)
}

#[pymodule]
fn coasim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("CoasimError", m.py().get_type::<CoasimError>())?;
    m.add_class::<ArticleRef>()?;
    m.add_class::<Corpus>()?;
    m.add_class::<CoaGraph>()?;
    m.add_function(wrap_pyfunction!(parse_citation, m)?)?;
    m.add_function(wrap_pyfunction!(extract_citations, m)?)?;
    m.add_function(wrap_pyfunction!(pair_scores, m)?)?;
    m.add_function(wrap_pyfunction!(dice, m)?)?;
    m.add_function(wrap_pyfunction!(ensemble_ranking, m)?)?;
    m.add_function(wrap_pyfunction!(cluster, m)?)?;
    m.add_function(wrap_pyfunction!(rank_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(report, m)?)?;
    Ok(())
}
