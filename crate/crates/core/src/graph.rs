//! The COA similarity graph: construction from an ensemble ranking,
//! components, maximal cliques and Gephi export/import.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use quick_xml::events::{BytesDecl, BytesStart, Event};
use quick_xml::{Reader, Writer};
use serde::{Deserialize, Serialize};

use crate::ensemble::RankList;
use crate::{Error, Result};

/// Largest graph [`cliques`] will enumerate.
pub const CLIQUE_NODE_LIMIT: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    /// Always `< target`.
    pub source: usize,
    pub target: usize,
    /// Ensemble rank of the pair.
    pub rank: f64,
}

impl GraphEdge {
    pub fn weight(&self) -> f64 {
        1.0 / self.rank
    }
}

/// Undirected graph with dense node ids; edges are kept sorted by
/// `(source, target)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CoaGraph {
    labels: Vec<String>,
    edges: Vec<GraphEdge>,
}

impl CoaGraph {
    /// Validates ids, rejects self-loops and duplicate edges, and
    /// normalizes edge orientation.
    pub fn new(labels: Vec<String>, edges: Vec<GraphEdge>) -> Result<Self> {
        let n = labels.len();
        let mut seen = BTreeSet::new();
        let mut norm = Vec::with_capacity(edges.len());
        for e in edges {
            let (s, t) = (e.source.min(e.target), e.source.max(e.target));
            if t >= n {
                return Err(Error::InvalidParameter(format!(
                    "edge {s}-{t} references a missing node"
                )));
            }
            if s == t {
                return Err(Error::InvalidParameter(format!("self-loop on node {s}")));
            }
            if !seen.insert((s, t)) {
                return Err(Error::InvalidParameter(format!("duplicate edge {s}-{t}")));
            }
            norm.push(GraphEdge {
                source: s,
                target: t,
                rank: e.rank,
            });
        }
        norm.sort_by_key(|e| (e.source, e.target));
        Ok(Self {
            labels,
            edges: norm,
        })
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn label(&self, id: usize) -> Option<&str> {
        self.labels.get(id).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn edges(&self) -> &[GraphEdge] {
        &self.edges
    }

    fn adjacency(&self) -> Vec<BTreeSet<usize>> {
        let mut adj = vec![BTreeSet::new(); self.labels.len()];
        for e in &self.edges {
            adj[e.source].insert(e.target);
            adj[e.target].insert(e.source);
        }
        adj
    }
}

/// Graph of every pair ranked at or better than `cutoff`. Node ids follow
/// first appearance when walking pairs in rank order.
pub fn build_graph(ensemble: &RankList, cutoff: f64) -> Result<CoaGraph> {
    let mut ids: HashMap<&str, usize> = HashMap::new();
    let mut labels: Vec<String> = Vec::new();
    let mut edges = Vec::new();
    for entry in ensemble.by_rank() {
        if entry.rank > cutoff {
            break;
        }
        let mut endpoint = [0usize; 2];
        for (slot, label) in endpoint
            .iter_mut()
            .zip([entry.pair.first(), entry.pair.second()])
        {
            *slot = *ids.entry(label).or_insert_with(|| {
                labels.push(label.to_string());
                labels.len() - 1
            });
        }
        edges.push(GraphEdge {
            source: endpoint[0],
            target: endpoint[1],
            rank: entry.rank,
        });
    }
    CoaGraph::new(labels, edges)
}

/// Connected components, each sorted, ordered by smallest member.
pub fn components(g: &CoaGraph) -> Vec<Vec<usize>> {
    let adj = g.adjacency();
    let mut seen = vec![false; g.node_count()];
    let mut out = Vec::new();
    for start in 0..g.node_count() {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let mut comp = Vec::new();
        while let Some(v) = stack.pop() {
            comp.push(v);
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Maximal cliques with at least `min_size` members (Bron–Kerbosch with
/// pivoting). Each clique is sorted; the list is sorted lexicographically.
pub fn cliques(g: &CoaGraph, min_size: usize) -> Result<Vec<Vec<usize>>> {
    if g.node_count() > CLIQUE_NODE_LIMIT {
        return Err(Error::GraphTooLarge {
            nodes: g.node_count(),
            limit: CLIQUE_NODE_LIMIT,
        });
    }
    let adj = g.adjacency();
    let mut out = Vec::new();
    let mut r = Vec::new();
    let p: BTreeSet<usize> = (0..g.node_count()).collect();
    bron_kerbosch(&adj, &mut r, p, BTreeSet::new(), min_size.max(1), &mut out);
    for c in &mut out {
        c.sort_unstable();
    }
    out.sort();
    Ok(out)
}

fn bron_kerbosch(
    adj: &[BTreeSet<usize>],
    r: &mut Vec<usize>,
    mut p: BTreeSet<usize>,
    mut x: BTreeSet<usize>,
    min_size: usize,
    out: &mut Vec<Vec<usize>>,
) {
    if p.is_empty() {
        if x.is_empty() && r.len() >= min_size {
            out.push(r.clone());
        }
        return;
    }
    // pivot: the vertex of P ∪ X with most neighbours in P
    let pivot = p
        .iter()
        .chain(x.iter())
        .copied()
        .max_by_key(|&u| (adj[u].intersection(&p).count(), std::cmp::Reverse(u)))
        .expect("P is non-empty");
    let candidates: Vec<usize> = p.difference(&adj[pivot]).copied().collect();
    for v in candidates {
        r.push(v);
        let np = p.intersection(&adj[v]).copied().collect();
        let nx = x.intersection(&adj[v]).copied().collect();
        bron_kerbosch(adj, r, np, nx, min_size, out);
        r.pop();
        p.remove(&v);
        x.insert(v);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSummary {
    pub nodes: usize,
    pub edges: usize,
    /// Component member labels, in component order.
    pub components: Vec<Vec<String>>,
    pub cliques: Vec<Vec<String>>,
}

pub fn summarize(g: &CoaGraph, min_clique: usize) -> Result<GraphSummary> {
    let name = |ids: Vec<usize>| {
        ids.into_iter()
            .map(|i| g.labels[i].clone())
            .collect::<Vec<_>>()
    };
    Ok(GraphSummary {
        nodes: g.node_count(),
        edges: g.edge_count(),
        components: components(g).into_iter().map(name).collect(),
        cliques: cliques(g, min_clique)?.into_iter().map(name).collect(),
    })
}

// ---------------------------------------------------------------------------
// Gephi files

pub const NODES_FILE: &str = "nodes.csv";
pub const EDGES_FILE: &str = "edges.csv";
pub const GEXF_FILE: &str = "graph.gexf";

const GEXF_NS: &str = "http://gexf.net/1.3";
const RANK_ATTR: &str = "0";

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// `Id,Label`.
pub fn nodes_csv(g: &CoaGraph) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["Id", "Label"])?;
    for (id, label) in g.labels.iter().enumerate() {
        w.write_record([id.to_string().as_str(), label])?;
    }
    w.into_inner().map_err(|e| Error::Gexf(e.to_string()))
}

/// `Source,Target,Type,Weight,Rank` (weight = 1/rank; the rank column keeps
/// the exact value for re-import).
pub fn edges_csv(g: &CoaGraph) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["Source", "Target", "Type", "Weight", "Rank"])?;
    for e in &g.edges {
        w.write_record([
            e.source.to_string(),
            e.target.to_string(),
            "Undirected".to_string(),
            e.weight().to_string(),
            e.rank.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Gexf(e.to_string()))
}

/// GEXF 1.3, undirected, with the rank stored as an edge attribute. No
/// timestamps are written, so the output depends only on the graph.
pub fn to_gexf(g: &CoaGraph) -> Result<Vec<u8>> {
    let mut w = Writer::new_with_indent(Vec::new(), b' ', 2);
    let xml = |e: std::io::Error| Error::Gexf(e.to_string());
    w.write_event(Event::Decl(BytesDecl::new("1.0", Some("UTF-8"), None)))
        .map_err(xml)?;
    w.create_element("gexf")
        .with_attributes([("xmlns", GEXF_NS), ("version", "1.3")])
        .write_inner_content(|w| {
            w.create_element("meta").write_inner_content(|w| {
                w.create_element("creator")
                    .write_text_content(quick_xml::events::BytesText::new("coasim"))?;
                w.create_element("description").write_text_content(
                    quick_xml::events::BytesText::new("COA similarity graph"),
                )?;
                Ok(())
            })?;
            w.create_element("graph")
                .with_attributes([("mode", "static"), ("defaultedgetype", "undirected")])
                .write_inner_content(|w| {
                    w.create_element("attributes")
                        .with_attributes([("class", "edge"), ("mode", "static")])
                        .write_inner_content(|w| {
                            w.create_element("attribute")
                                .with_attributes([
                                    ("id", RANK_ATTR),
                                    ("title", "rank"),
                                    ("type", "double"),
                                ])
                                .write_empty()?;
                            Ok(())
                        })?;
                    w.create_element("nodes").write_inner_content(|w| {
                        for (id, label) in g.labels.iter().enumerate() {
                            w.create_element("node")
                                .with_attributes([
                                    ("id", id.to_string().as_str()),
                                    ("label", label.as_str()),
                                ])
                                .write_empty()?;
                        }
                        Ok(())
                    })?;
                    w.create_element("edges").write_inner_content(|w| {
                        for (i, e) in g.edges.iter().enumerate() {
                            let rank = e.rank.to_string();
                            w.create_element("edge")
                                .with_attributes([
                                    ("id", i.to_string().as_str()),
                                    ("source", e.source.to_string().as_str()),
                                    ("target", e.target.to_string().as_str()),
                                    ("weight", e.weight().to_string().as_str()),
                                ])
                                .write_inner_content(|w| {
                                    w.create_element("attvalues").write_inner_content(|w| {
                                        w.create_element("attvalue")
                                            .with_attributes([
                                                ("for", RANK_ATTR),
                                                ("value", rank.as_str()),
                                            ])
                                            .write_empty()?;
                                        Ok(())
                                    })?;
                                    Ok(())
                                })?;
                        }
                        Ok(())
                    })?;
                    Ok(())
                })?;
            Ok(())
        })
        .map_err(xml)?;
    let mut bytes = w.into_inner();
    bytes.push(b'\n');
    Ok(bytes)
}

fn attrs(e: &BytesStart<'_>) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for a in e.attributes() {
        let a = a.map_err(|err| Error::Gexf(err.to_string()))?;
        let key = String::from_utf8_lossy(a.key.as_ref()).into_owned();
        let value = a
            .unescape_value()
            .map_err(|err| Error::Gexf(err.to_string()))?;
        out.insert(key, value.into_owned());
    }
    Ok(out)
}

fn required<'a>(map: &'a BTreeMap<String, String>, key: &str, elem: &str) -> Result<&'a str> {
    map.get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::Gexf(format!("<{elem}> without `{key}`")))
}

fn parse_num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Gexf(format!("bad {what} `{s}`")))
}

/// Reads a GEXF document written by [`to_gexf`]. Node ids must be dense
/// integers; an edge without the rank attribute falls back to `1/weight`.
pub fn from_gexf(xml: &str) -> Result<CoaGraph> {
    let mut reader = Reader::from_str(xml);
    reader.config_mut().trim_text(true);
    let mut nodes: BTreeMap<usize, String> = BTreeMap::new();
    let mut edges: Vec<(usize, usize, Option<f64>, Option<f64>)> = Vec::new();
    let mut in_edge = false;
    loop {
        let event = reader
            .read_event()
            .map_err(|e| Error::Gexf(format!("at byte {}: {e}", reader.error_position())))?;
        let (start, empty) = match &event {
            Event::Start(e) => (Some(e), false),
            Event::Empty(e) => (Some(e), true),
            Event::End(e) => {
                if e.name().as_ref() == b"edge" {
                    in_edge = false;
                }
                (None, false)
            }
            Event::Eof => break,
            _ => (None, false),
        };
        let Some(e) = start else { continue };
        match e.name().as_ref() {
            b"node" => {
                let a = attrs(e)?;
                let id = parse_num(required(&a, "id", "node")?, "node id")?;
                let label = a.get("label").cloned().unwrap_or_default();
                if nodes.insert(id, label).is_some() {
                    return Err(Error::Gexf(format!("duplicate node id {id}")));
                }
            }
            b"edge" => {
                let a = attrs(e)?;
                let s = parse_num(required(&a, "source", "edge")?, "edge source")?;
                let t = parse_num(required(&a, "target", "edge")?, "edge target")?;
                let weight = a
                    .get("weight")
                    .map(|w| parse_num::<f64>(w, "weight"))
                    .transpose()?;
                edges.push((s, t, weight, None));
                in_edge = !empty;
            }
            b"attvalue" if in_edge => {
                let a = attrs(e)?;
                if a.get("for").map(String::as_str) == Some(RANK_ATTR) {
                    let rank = parse_num(required(&a, "value", "attvalue")?, "rank")?;
                    if let Some(last) = edges.last_mut() {
                        last.3 = Some(rank);
                    }
                }
            }
            _ => {}
        }
    }
    if nodes.keys().copied().ne(0..nodes.len()) {
        return Err(Error::Gexf("node ids are not dense from 0".into()));
    }
    let edges = edges
        .into_iter()
        .map(|(s, t, w, r)| {
            let rank = r
                .or_else(|| w.map(|w| 1.0 / w))
                .ok_or_else(|| Error::Gexf(format!("edge {s}-{t} has neither rank nor weight")))?;
            Ok(GraphEdge {
                source: s,
                target: t,
                rank,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    CoaGraph::new(nodes.into_values().collect(), edges)
}

/// Reads `nodes.csv` / `edges.csv` as written by [`export_gephi`].
pub fn from_csv(nodes: impl std::io::Read, edges: impl std::io::Read) -> Result<CoaGraph> {
    #[derive(Deserialize)]
    struct NodeRow {
        #[serde(rename = "Id")]
        id: usize,
        #[serde(rename = "Label")]
        label: String,
    }
    #[derive(Deserialize)]
    struct EdgeRow {
        #[serde(rename = "Source")]
        source: usize,
        #[serde(rename = "Target")]
        target: usize,
        #[serde(rename = "Weight")]
        weight: f64,
        #[serde(rename = "Rank")]
        rank: Option<f64>,
    }
    let mut labels = BTreeMap::new();
    for row in csv::Reader::from_reader(nodes).deserialize::<NodeRow>() {
        let row = row?;
        labels.insert(row.id, row.label);
    }
    if labels.keys().copied().ne(0..labels.len()) {
        return Err(Error::InvalidParameter(
            "node ids are not dense from 0".into(),
        ));
    }
    let mut out = Vec::new();
    for row in csv::Reader::from_reader(edges).deserialize::<EdgeRow>() {
        let row = row?;
        out.push(GraphEdge {
            source: row.source,
            target: row.target,
            rank: row.rank.unwrap_or(1.0 / row.weight),
        });
    }
    CoaGraph::new(labels.into_values().collect(), out)
}

/// Writes `nodes.csv`, `edges.csv` and `graph.gexf` into `out_dir`.
pub fn export_gephi(g: &CoaGraph, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_file(&out_dir.join(NODES_FILE), &nodes_csv(g)?)?;
    write_file(&out_dir.join(EDGES_FILE), &edges_csv(g)?)?;
    write_file(&out_dir.join(GEXF_FILE), &to_gexf(g)?)?;
    Ok(())
}

pub fn write_summary(summary: &GraphSummary, mut out: impl Write) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, summary)?;
    out.write_all(b"\n").map_err(|e| Error::io("<summary>", e))
}
