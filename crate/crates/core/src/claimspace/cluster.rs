use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingSet;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// `1 - cos(a, b)`, in `[0, 2]`.
    Cosine,
    Euclidean,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Cosine => "cosine",
            Metric::Euclidean => "euclidean",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Metric::Cosine),
            "euclidean" => Ok(Metric::Euclidean),
            other => Err(Error::InvalidParameter(format!("unknown metric `{other}`"))),
        }
    }
}

/// Case -> cluster mapping. Cluster ids are contiguous from 0 and ordered
/// by the smallest case id they contain; noise points (only possible with
/// `min_pts > 1`) have no entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub epsilon: f64,
    pub min_pts: usize,
    pub metric: Metric,
    assignment: BTreeMap<String, usize>,
    cluster_count: usize,
}

impl ClusterAssignment {
    pub fn cluster_of(&self, case_id: &str) -> Option<usize> {
        self.assignment.get(case_id).copied()
    }

    pub fn cluster_count(&self) -> usize {
        self.cluster_count
    }

    pub fn assigned(&self) -> usize {
        self.assignment.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, usize)> {
        self.assignment.iter().map(|(k, &v)| (k.as_str(), v))
    }

    /// Members of every cluster, by cluster id.
    pub fn clusters(&self) -> Vec<Vec<&str>> {
        let mut out = vec![Vec::new(); self.cluster_count];
        for (id, &c) in &self.assignment {
            out[c].push(id.as_str());
        }
        out
    }

    /// Builds an assignment from explicit labels, renumbering clusters by
    /// smallest member.
    pub fn from_labels(
        epsilon: f64,
        min_pts: usize,
        metric: Metric,
        labels: impl IntoIterator<Item = (String, usize)>,
    ) -> Self {
        let labels: BTreeMap<String, usize> = labels.into_iter().collect();
        let mut renumber: BTreeMap<usize, usize> = BTreeMap::new();
        let mut assignment = BTreeMap::new();
        for (id, raw) in labels {
            let next = renumber.len();
            let c = *renumber.entry(raw).or_insert(next);
            assignment.insert(id, c);
        }
        Self {
            epsilon,
            min_pts,
            metric,
            cluster_count: renumber.len(),
            assignment,
        }
    }
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

const PARALLEL_THRESHOLD: usize = 1024;

/// Embedded points prepared for repeated clustering at different ε.
///
/// With `min_pts = 1` every point is a core point, so DBSCAN clusters are
/// the connected components of the ε-neighborhood graph. Those equal the
/// components of the minimum spanning tree restricted to edges ≤ ε, so the
/// tree is built once (Prim, O(N²) distance evaluations) and each ε query
/// is a near-linear union-find pass.
pub struct ClusterIndex {
    ids: Vec<String>,
    points: Vec<Vec<f64>>,
    norms: Vec<f64>,
    metric: Metric,
    /// MST edges sorted by `(distance, a, b)`.
    tree: Vec<(f64, u32, u32)>,
}

impl ClusterIndex {
    pub fn new(emb: &EmbeddingSet, metric: Metric) -> Result<Self> {
        if emb.is_empty() {
            return Err(Error::EmptyInput(
                "cannot cluster an empty embedding set".into(),
            ));
        }
        let mut ids = Vec::with_capacity(emb.len());
        let mut points = Vec::with_capacity(emb.len());
        let mut norms = Vec::with_capacity(emb.len());
        for (id, v) in emb.iter() {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidVector {
                    case_id: id.into(),
                    reason: "non-finite component".into(),
                });
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if metric == Metric::Cosine && norm == 0.0 {
                return Err(Error::InvalidVector {
                    case_id: id.into(),
                    reason: "zero vector has no cosine distance".into(),
                });
            }
            ids.push(id.to_string());
            points.push(v.to_vec());
            norms.push(norm);
        }
        let mut index = Self {
            ids,
            points,
            norms,
            metric,
            tree: Vec::new(),
        };
        index.tree = index.spanning_tree();
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn case_ids(&self) -> &[String] {
        &self.ids
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (&self.points[i], &self.points[j]);
        match self.metric {
            Metric::Cosine => {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                (1.0 - dot / (self.norms[i] * self.norms[j])).max(0.0)
            }
            Metric::Euclidean => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
        }
    }

    fn spanning_tree(&self) -> Vec<(f64, u32, u32)> {
        let n = self.len();
        let mut in_tree = vec![false; n];
        let mut best = vec![f64::INFINITY; n];
        let mut parent = vec![usize::MAX; n];
        let mut edges = Vec::with_capacity(n.saturating_sub(1));
        best[0] = 0.0;
        for _ in 0..n {
            let u = (0..n)
                .filter(|&v| !in_tree[v])
                .min_by(|&a, &b| best[a].total_cmp(&best[b]).then(a.cmp(&b)))
                .expect("a point remains outside the tree");
            in_tree[u] = true;
            if parent[u] != usize::MAX {
                let (a, b) = (parent[u].min(u), parent[u].max(u));
                edges.push((best[u], a as u32, b as u32));
            }
            let update = |(v, (bv, pv)): (usize, (&mut f64, &mut usize))| {
                if !in_tree[v] {
                    let d = self.distance(u, v);
                    if d < *bv {
                        *bv = d;
                        *pv = u;
                    }
                }
            };
            if n >= PARALLEL_THRESHOLD {
                best.par_iter_mut()
                    .zip(parent.par_iter_mut())
                    .enumerate()
                    .for_each(update);
            } else {
                best.iter_mut()
                    .zip(parent.iter_mut())
                    .enumerate()
                    .for_each(update);
            }
        }
        edges.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
        edges
    }

    /// DBSCAN at `epsilon`. Distances equal to `epsilon` count as neighbors.
    pub fn assign(&self, epsilon: f64, min_pts: usize) -> Result<ClusterAssignment> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        if min_pts == 0 {
            return Err(Error::InvalidParameter("min_pts must be at least 1".into()));
        }
        let labels = if min_pts == 1 {
            self.components_at(epsilon)
        } else {
            self.dbscan(epsilon, min_pts)
        };
        Ok(self.finish(epsilon, min_pts, labels))
    }

    fn components_at(&self, epsilon: f64) -> Vec<Option<usize>> {
        let mut uf = UnionFind::new(self.len());
        let cut = self.tree.partition_point(|e| e.0 <= epsilon);
        for &(_, a, b) in &self.tree[..cut] {
            uf.union(a as usize, b as usize);
        }
        (0..self.len()).map(|i| Some(uf.find(i))).collect()
    }

    fn neighbors(&self, epsilon: f64) -> Vec<Vec<usize>> {
        let row = |i: usize| -> Vec<usize> {
            (0..self.len())
                .filter(|&j| self.distance(i, j) <= epsilon)
                .collect()
        };
        if self.len() >= PARALLEL_THRESHOLD {
            (0..self.len()).into_par_iter().map(row).collect()
        } else {
            (0..self.len()).map(row).collect()
        }
    }

    fn dbscan(&self, epsilon: f64, min_pts: usize) -> Vec<Option<usize>> {
        let neighbors = self.neighbors(epsilon);
        let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_pts).collect();
        let mut labels: Vec<Option<usize>> = vec![None; self.len()];
        let mut next = 0;
        for start in 0..self.len() {
            if labels[start].is_some() || !core[start] {
                continue;
            }
            let cluster = next;
            next += 1;
            labels[start] = Some(cluster);
            let mut stack = vec![start];
            while let Some(p) = stack.pop() {
                for &q in &neighbors[p] {
                    if labels[q].is_none() {
                        labels[q] = Some(cluster);
                        if core[q] {
                            stack.push(q);
                        }
                    }
                }
            }
        }
        labels
    }

    fn finish(
        &self,
        epsilon: f64,
        min_pts: usize,
        labels: Vec<Option<usize>>,
    ) -> ClusterAssignment {
        ClusterAssignment::from_labels(
            epsilon,
            min_pts,
            self.metric,
            self.ids
                .iter()
                .zip(labels)
                .filter_map(|(id, l)| l.map(|l| (id.clone(), l))),
        )
    }
}

/// Clusters `emb` with DBSCAN at `epsilon` under `metric`.
pub fn epsilon_cluster(
    emb: &EmbeddingSet,
    epsilon: f64,
    min_pts: usize,
    metric: Metric,
) -> Result<ClusterAssignment> {
    ClusterIndex::new(emb, metric)?.assign(epsilon, min_pts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(points: &[Vec<f64>]) -> EmbeddingSet {
        EmbeddingSet::new(
            "test",
            points
                .iter()
                .enumerate()
                .map(|(i, p)| (format!("p{i:02}"), p.clone()))
                .collect(),
        )
        .unwrap()
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn extreme_epsilons() {
        let pts = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.1]];
        let emb = set(&pts);
        let tiny = epsilon_cluster(&emb, 1e-9, 1, Metric::Cosine).unwrap();
        assert_eq!(tiny.cluster_count(), 3);
        let huge = epsilon_cluster(&emb, 2.5, 1, Metric::Cosine).unwrap();
        assert_eq!(huge.cluster_count(), 1);
        assert_eq!(huge.assigned(), 3);
    }

    #[test]
    fn cluster_ids_follow_smallest_member() {
        // p00 and p02 together, p01 alone
        let pts = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.01]];
        let a = epsilon_cluster(&set(&pts), 0.01, 1, Metric::Cosine).unwrap();
        assert_eq!(a.cluster_of("p00"), Some(0));
        assert_eq!(a.cluster_of("p01"), Some(1));
        assert_eq!(a.cluster_of("p02"), Some(0));
        assert_eq!(a.clusters(), vec![vec!["p00", "p02"], vec!["p01"]]);
    }

    #[test]
    fn rejects_bad_input() {
        let emb = set(&[vec![0.0, 0.0]]);
        assert!(matches!(
            ClusterIndex::new(&emb, Metric::Cosine),
            Err(Error::InvalidVector { .. })
        ));
        assert!(ClusterIndex::new(&emb, Metric::Euclidean).is_ok());
        let empty = EmbeddingSet::new("x", BTreeMap::new()).unwrap();
        assert!(matches!(
            epsilon_cluster(&empty, 0.1, 1, Metric::Cosine),
            Err(Error::EmptyInput(_))
        ));
        let emb = set(&[vec![1.0, 0.0]]);
        assert!(epsilon_cluster(&emb, 0.0, 1, Metric::Cosine).is_err());
        assert!(epsilon_cluster(&emb, 0.1, 0, Metric::Cosine).is_err());
    }

    #[test]
    fn spanning_tree_path_matches_dbscan_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let pts = random_points(&mut rng, 40, 4);
            let index = ClusterIndex::new(&set(&pts), Metric::Euclidean).unwrap();
            for eps in [0.3, 0.7, 1.1] {
                let fast = index.finish(eps, 1, index.components_at(eps));
                let slow = index.finish(eps, 1, index.dbscan(eps, 1));
                assert_eq!(fast, slow);
            }
        }
    }

    #[test]
    fn dbscan_with_min_pts_marks_noise() {
        // three tight points and one far away
        let pts = vec![
            vec![0.0, 0.0],
            vec![0.1, 0.0],
            vec![0.0, 0.1],
            vec![5.0, 5.0],
        ];
        let a = epsilon_cluster(&set(&pts), 0.2, 3, Metric::Euclidean).unwrap();
        assert_eq!(a.cluster_count(), 1);
        assert_eq!(a.cluster_of("p03"), None);
        assert_eq!(a.assigned(), 3);
    }

    #[test]
    fn dbscan_border_point_joins_cluster() {
        // p00..p02 dense, p03 within eps of p02 only
        let pts = vec![vec![0.0], vec![0.1], vec![0.2], vec![0.45]];
        let a = epsilon_cluster(&set(&pts), 0.25, 3, Metric::Euclidean).unwrap();
        assert_eq!(a.cluster_of("p03"), Some(0));
    }

    #[test]
    fn partitions_refine_as_epsilon_grows() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let pts = random_points(&mut rng, 30, 3);
            let index = ClusterIndex::new(&set(&pts), Metric::Cosine).unwrap();
            let epsilons = [0.02, 0.1, 0.3, 0.6, 1.0];
            for w in epsilons.windows(2) {
                let fine = index.assign(w[0], 1).unwrap();
                let coarse = index.assign(w[1], 1).unwrap();
                for members in fine.clusters() {
                    let target = coarse.cluster_of(members[0]);
                    assert!(members.iter().all(|m| coarse.cluster_of(m) == target));
                }
            }
        }
    }
}
