use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::manifest::read_manifest;
use super::{
    pairs_file, OptimizeRecord, Stage, ARTICLE_INDEX_FILE, COMPONENTS_FILE, CORPUS_FILE,
    ENSEMBLE_FILE, RANKING_PCC_FILE, SAMPLED_FILE, THRESHOLD_FILE, UTILITY_FILE,
};
use crate::claimspace::ThresholdReport;
use crate::corpus::{load_corpus, CorpusFormat};
use crate::ensemble::RankList;
use crate::graph::GraphSummary;
use crate::similarity::{Measure, PairScoreTable};
use crate::vectors::ArticleIndex;
use crate::{Error, Result};

const TOP_K: usize = 4;

fn open(ws: &Path, rel: &str) -> Result<fs::File> {
    let p = ws.join(rel);
    fs::File::open(&p).map_err(|e| Error::io(p, e))
}

fn read_json<T: for<'de> serde::Deserialize<'de>>(ws: &Path, rel: &str) -> Result<T> {
    let p = ws.join(rel);
    let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Plain-text summary of whatever stages have completed in `ws`.
pub fn report(ws: &Path) -> Result<String> {
    let mut done = Vec::new();
    for stage in Stage::ALL {
        if let Some(m) = read_manifest(ws, stage.as_str())? {
            done.push((stage, m));
        }
    }
    if done.is_empty() {
        return Err(Error::EmptyWorkspace(ws.to_path_buf()));
    }
    let has = |s: Stage| done.iter().any(|(d, _)| *d == s);
    let mut out = String::new();
    let names: Vec<&str> = done.iter().map(|(s, _)| s.as_str()).collect();
    writeln!(out, "workspace: {}", ws.display()).unwrap();
    writeln!(out, "completed stages: {}", names.join(", ")).unwrap();

    if has(Stage::Ingest) {
        let corpus = load_corpus(&ws.join(CORPUS_FILE), CorpusFormat::Jsonl)?;
        writeln!(out, "\n== corpus ==").unwrap();
        writeln!(out, "cases: {}", corpus.len()).unwrap();
        writeln!(out, "COAs: {}", corpus.coa_count()).unwrap();
        writeln!(out, "citations: {}", corpus.citation_total()).unwrap();
    }

    if let Some((_, m)) = done.iter().find(|(s, _)| *s == Stage::Sample) {
        let sampled = load_corpus(&ws.join(SAMPLED_FILE), CorpusFormat::Jsonl)?;
        writeln!(out, "\n== sample ==").unwrap();
        writeln!(out, "m: {}", m.params["m"]).unwrap();
        writeln!(out, "n: {}", m.params["n"]).unwrap();
        writeln!(out, "seed: {}", m.params["seed"]).unwrap();
        writeln!(out, "sampled cases: {}", sampled.len()).unwrap();
    }

    if has(Stage::Vectors) {
        let index = ArticleIndex::read_csv(open(ws, ARTICLE_INDEX_FILE)?)?;
        writeln!(out, "\n== vectors ==").unwrap();
        writeln!(out, "distinct cited articles (alpha): {}", index.len()).unwrap();
    }

    if let Some((_, m)) = done.iter().find(|(s, _)| *s == Stage::Simpairs) {
        let measures: Vec<Measure> = serde_json::from_value(m.params["measures"].clone())?;
        writeln!(out, "\n== pair similarity ==").unwrap();
        let mut count = None;
        for measure in measures {
            let table = PairScoreTable::read_csv(measure, open(ws, &pairs_file(measure))?)?;
            count.get_or_insert(table.len());
            writeln!(out, "top {TOP_K} by {}:", measure.as_str()).unwrap();
            for (i, s) in table.top(TOP_K).iter().enumerate() {
                writeln!(
                    out,
                    "  {}. {} / {}  {:.6}",
                    i + 1,
                    s.pair.first(),
                    s.pair.second(),
                    s.score
                )
                .unwrap();
            }
        }
        writeln!(out, "pair count: {}", count.unwrap_or(0)).unwrap();
    }

    if has(Stage::Ensemble) {
        let ens = RankList::read_csv(open(ws, ENSEMBLE_FILE)?)?;
        writeln!(out, "\n== ensemble ==").unwrap();
        writeln!(out, "top {TOP_K}:").unwrap();
        for e in ens.top(TOP_K) {
            writeln!(
                out,
                "  {:>8}  {} / {}",
                e.rank,
                e.pair.first(),
                e.pair.second()
            )
            .unwrap();
        }
        let pccs: std::collections::BTreeMap<String, Option<f64>> =
            read_json(ws, RANKING_PCC_FILE)?;
        writeln!(out, "ranking PCC with the ensemble:").unwrap();
        for (source, r) in pccs {
            match r {
                Some(r) => writeln!(out, "  {source:<16} {r:.4}").unwrap(),
                None => writeln!(out, "  {source:<16} undefined").unwrap(),
            }
        }
    }

    if has(Stage::Optimize) {
        let rec: OptimizeRecord = read_json(ws, UTILITY_FILE)?;
        let r = &rec.result;
        writeln!(out, "\n== optimizer ==").unwrap();
        writeln!(out, "epsilon: {:.4}", r.epsilon).unwrap();
        writeln!(out, "lambda: {}", r.lambda).unwrap();
        writeln!(out, "utility: {:.4}", r.utility).unwrap();
        writeln!(
            out,
            "|T_sim|: {}  |R_sim|: {}  mean dice: {:.4}",
            r.coa_set_size, r.pair_count, r.mean_dice
        )
        .unwrap();
        writeln!(out, "distinct points evaluated: {}", rec.evaluations).unwrap();
    }

    if has(Stage::Threshold) {
        let t: ThresholdReport = read_json(ws, THRESHOLD_FILE)?;
        writeln!(out, "\n== threshold ==").unwrap();
        writeln!(out, "outlier rule: {}", t.rule).unwrap();
        writeln!(out, "kept ranks: {}", t.kept_pairs.len()).unwrap();
        for o in &t.outliers {
            writeln!(
                out,
                "  excluded: {} / {} (rank {})",
                o.coa_a, o.coa_b, o.rank
            )
            .unwrap();
        }
        writeln!(out, "mu: {:.3}  sigma: {:.3}", t.mu, t.sigma).unwrap();
        writeln!(out, "threshold (mu + 2 sigma): {:.3}", t.threshold).unwrap();
    }

    if has(Stage::Graph) {
        let g: GraphSummary = read_json(ws, COMPONENTS_FILE)?;
        writeln!(out, "\n== graph ==").unwrap();
        writeln!(out, "nodes: {}  edges: {}", g.nodes, g.edges).unwrap();
        writeln!(out, "components: {}", g.components.len()).unwrap();
        for c in &g.components {
            writeln!(out, "  [{}] {}", c.len(), c.join(", ")).unwrap();
        }
        writeln!(out, "maximal cliques: {}", g.cliques.len()).unwrap();
        for c in &g.cliques {
            writeln!(out, "  {{{}}}", c.join(", ")).unwrap();
        }
    }
    Ok(out)
}
